"""Headless command-line interface."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .bench import load_shipped_registry, validate_template
from .errors import FedforgeError
from .gateway import BackendDescriptor, BackendKind, RemoteHTTPBackend
from .orchestrator import (
    RunController,
    RunPhase,
    build_scripted_controller,
    default_home,
)


def _controller(home: Path, scripted: str | None) -> RunController:
    if scripted:
        return build_scripted_controller(home, scripted)
    backend = RemoteHTTPBackend(BackendDescriptor(kind=BackendKind.REMOTE_HTTP,
                                                  model_name="remote"))
    return RunController(home, backend)


def _controller_for_run(home: Path, run_id: str) -> RunController:
    probe = RunController.__new__(RunController)  # only need the store layout
    from .orchestrator import RunStore

    store = RunStore(home)
    if not store.run_dir(run_id).exists():
        raise click.ClickException(f"no such run: {run_id}")
    config = store.read_json(run_id, "run.json")
    return _controller(home, config.get("scripted_dir") or None)


def _print_state(state) -> None:
    click.echo(f"run      {state.run_id}")
    click.echo(f"query    {state.query_id}")
    click.echo(f"phase    {state.phase.value}")
    if state.plan_version:
        click.echo(f"plan     v{state.plan_version}"
                   + (" (awaiting decision)" if state.awaiting_user else ""))
    if state.modules:
        board = ", ".join(f"{k}:{v}" for k, v in sorted(state.modules.items()))
        click.echo(f"modules  {board}")
    for row in (state.iterations[i] for i in sorted(state.iterations)):
        click.echo(f"iter {row['iteration']:>3}  {row['status']:<7} "
                   f"{row['layer']:<4} {row['reason']}")
    click.echo(f"outcome  {state.outcome}")


@click.group()
def main():
    """Turn a benchmark FL task query into a validated codebase."""


@main.command()
@click.option("--query", "query_id", required=True, help="Benchmark query id, e.g. Q5.")
@click.option("--scripted", type=click.Path(exists=True, file_okay=False),
              help="Transcript directory; wires every agent to the scripted backend.")
@click.option("--t-max", default=10, show_default=True, help="Max correction attempts.")
@click.option("--rounds", default=5, show_default=True, help="Simulation rounds per iteration.")
@click.option("--home", type=click.Path(file_okay=False), default=None,
              help="Run store root (default: FEDFORGE_HOME or ~/.fedforge).")
def run(query_id: str, scripted: str | None, t_max: int, rounds: int, home: str | None):
    """Start a run and drive it as far as it can go without a human."""
    home_path = Path(home) if home else default_home()
    controller = _controller(home_path, scripted)
    try:
        run_id = controller.start_run(query_id, t_max=t_max, n_rounds=rounds,
                                      scripted_dir=scripted or "")
        state = controller.run_to_completion(run_id)
    except FedforgeError as exc:
        raise click.ClickException(str(exc)) from exc
    _print_state(state)
    if state.awaiting_user:
        click.echo(f"\nplan is waiting for review: fedforge approve {state.run_id} "
                   f"--home {home_path}")
    sys.exit(0 if state.phase in (RunPhase.CERTIFIED, RunPhase.PLANNING) else 1)


@main.command()
@click.argument("run_id")
@click.option("--note", default="", help="Optional approval note.")
@click.option("--home", type=click.Path(file_okay=False), default=None)
def approve(run_id: str, note: str, home: str | None):
    """Approve the pending plan and continue the run."""
    home_path = Path(home) if home else default_home()
    controller = _controller_for_run(home_path, run_id)
    try:
        controller.apply_decision(run_id, "approve", note)
        state = controller.run_to_completion(run_id)
    except FedforgeError as exc:
        raise click.ClickException(str(exc)) from exc
    _print_state(state)


@main.command()
@click.argument("run_id")
@click.option("--feedback", required=True, help="Revision guidance for the planner.")
@click.option("--home", type=click.Path(file_okay=False), default=None)
def revise(run_id: str, feedback: str, home: str | None):
    """Send the plan back for revision with feedback."""
    home_path = Path(home) if home else default_home()
    controller = _controller_for_run(home_path, run_id)
    try:
        controller.apply_decision(run_id, "revise", feedback)
        state = controller.run_to_completion(run_id)
    except FedforgeError as exc:
        raise click.ClickException(str(exc)) from exc
    _print_state(state)


@main.command()
@click.argument("run_id")
@click.option("--home", type=click.Path(file_okay=False), default=None)
def status(run_id: str, home: str | None):
    """Show the current state of a run."""
    home_path = Path(home) if home else default_home()
    from .orchestrator import RunStore, replay

    store = RunStore(home_path)
    if not store.run_dir(run_id).exists():
        raise click.ClickException(f"no such run: {run_id}")
    _print_state(replay(run_id, store.read_events(run_id)))


@main.command()
@click.argument("run_id")
@click.option("--home", type=click.Path(file_okay=False), default=None)
def resume(run_id: str, home: str | None):
    """Continue an interrupted run from its persisted state."""
    home_path = Path(home) if home else default_home()
    controller = _controller_for_run(home_path, run_id)
    try:
        state = controller.resume(run_id)
    except FedforgeError as exc:
        raise click.ClickException(str(exc)) from exc
    _print_state(state)


@main.command()
@click.argument("run_id")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Output directory (default: <run dir>/report).")
@click.option("--home", type=click.Path(file_okay=False), default=None)
def report(run_id: str, out: str | None, home: str | None):
    """Render metrics CSVs and loss-curve figures for a run."""
    from .report import write_report

    home_path = Path(home) if home else default_home()
    out_dir = Path(out) if out else home_path / "runs" / run_id / "report"
    try:
        written = write_report(home_path, run_id, out_dir)
    except FileNotFoundError as exc:
        raise click.ClickException(str(exc)) from exc
    for path in written:
        click.echo(str(path))


@main.group()
def bench():
    """Benchmark registry utilities."""


@bench.command()
def validate():
    """Validate the shipped benchmark registry against the query template."""
    registry = load_shipped_registry()
    failures = 0
    for entry in registry.entries:
        violations = validate_template(entry.query)
        marker = "ok" if not violations else "FAIL " + ", ".join(violations)
        click.echo(f"{entry.query.id:<4} {entry.query.dataset:<14} "
                   f"{entry.query.model:<13} {marker}")
        failures += bool(violations)
    areas = registry.area_counts()
    click.echo(f"{len(registry)} entries across {len(areas)} research areas "
               f"({', '.join(f'{a.value}={n}' for a, n in sorted(areas.items()))})")
    if failures:
        raise click.ClickException(f"{failures} entries violate the template")


@main.command()
@click.option("--home", type=click.Path(file_okay=False), default=None)
@click.option("--scripted", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True)
def serve(home: str | None, scripted: str | None, host: str, port: int):
    """Serve the HTTP API (and the console, when its build is present)."""
    import uvicorn

    from .api import create_app

    home_path = Path(home) if home else default_home()
    app = create_app(_controller(home_path, scripted))
    ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dir.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
