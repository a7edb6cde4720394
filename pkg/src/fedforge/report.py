"""Render run artifacts into delimited metrics files and loss-curve figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .orchestrator import RunStore  # noqa: E402


def _iteration_events(store: RunStore, run_id: str) -> dict[int, list[dict]]:
    events_by_iteration: dict[int, list[dict]] = {}
    iterations_root = store.run_dir(run_id) / "iterations"
    if not iterations_root.exists():
        return events_by_iteration
    for it_dir in sorted(iterations_root.iterdir(), key=lambda p: int(p.name)):
        events_path = it_dir / "events.jsonl"
        if not events_path.exists():
            continue
        rows = []
        for line in events_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                rows.append(json.loads(line))
        events_by_iteration[int(it_dir.name)] = rows
    return events_by_iteration


def write_report(home: str | Path, run_id: str, out_dir: str | Path) -> list[Path]:
    """Write metrics.csv, diagnoses.csv, and loss_curves.png for one run."""
    store = RunStore(home)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    events_by_iteration = _iteration_events(store, run_id)

    metrics_path = out / "metrics.csv"
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "iteration", "round", "phase", "loss", "accuracy",
                         "num_results"])
        for iteration, rows in events_by_iteration.items():
            for row in rows:
                writer.writerow([run_id, iteration, row.get("round"), row.get("phase"),
                                 row.get("loss"), row.get("accuracy"),
                                 row.get("num_results")])
    written.append(metrics_path)

    diagnoses_path = out / "diagnoses.csv"
    with open(diagnoses_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "iteration", "status", "layer", "reason"])
        for iteration in sorted(events_by_iteration):
            report = store.load_diagnosis(run_id, iteration)
            if report:
                writer.writerow([run_id, iteration, report.status.value,
                                 report.layer.value, report.reason])
    written.append(diagnoses_path)

    figure_path = out / "loss_curves.png"
    fig, ax = plt.subplots(figsize=(7, 4))
    plotted = False
    for iteration, rows in events_by_iteration.items():
        for phase, style in (("central_eval", "-"), ("fit_agg", "--")):
            series = [(r["round"], r["loss"]) for r in rows
                      if r.get("phase") == phase and r.get("loss") is not None]
            if series:
                rounds, losses = zip(*series)
                ax.plot(rounds, losses, style, label=f"iter {iteration} {phase}")
                plotted = True
    if plotted:
        ax.set_xlabel("round")
        ax.set_ylabel("loss")
        ax.set_title(f"run {run_id}")
        ax.legend(fontsize=8)
    else:
        ax.text(0.5, 0.5, "no simulation events", ha="center", va="center")
    fig.tight_layout()
    fig.savefig(figure_path, dpi=120)
    plt.close(fig)
    written.append(figure_path)
    return written
