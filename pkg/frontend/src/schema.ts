/** Minimal structural validation against the shared API schema file, so the
 * console fails loudly when the orchestrator contract drifts. */

type SchemaProp = { type?: string; enum?: unknown[] };
type SchemaDef = { required?: string[]; properties?: Record<string, SchemaProp> };
export type ApiSchema = { definitions: Record<string, SchemaDef> };

const TYPE_CHECKS: Record<string, (v: unknown) => boolean> = {
  string: (v) => typeof v === "string",
  integer: (v) => typeof v === "number" && Number.isInteger(v),
  boolean: (v) => typeof v === "boolean",
  array: (v) => Array.isArray(v),
  object: (v) => typeof v === "object" && v !== null && !Array.isArray(v),
};

export function validateAgainst(
  schema: ApiSchema,
  definition: string,
  value: unknown,
): string[] {
  const problems: string[] = [];
  const def = schema.definitions[definition];
  if (!def) return [`no such definition: ${definition}`];
  if (typeof value !== "object" || value === null) {
    return [`${definition}: expected an object`];
  }
  const obj = value as Record<string, unknown>;
  for (const key of def.required ?? []) {
    if (!(key in obj)) problems.push(`${definition}: missing required "${key}"`);
  }
  for (const [key, prop] of Object.entries(def.properties ?? {})) {
    if (!(key in obj)) continue;
    if (prop.type && !TYPE_CHECKS[prop.type]?.(obj[key])) {
      problems.push(`${definition}.${key}: expected ${prop.type}`);
    }
    if (prop.enum && !prop.enum.includes(obj[key])) {
      problems.push(`${definition}.${key}: ${JSON.stringify(obj[key])} not in enum`);
    }
  }
  return problems;
}
