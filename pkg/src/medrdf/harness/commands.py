"""The six experiment commands, shared by the HTTP service and the CLI."""
from __future__ import annotations

import csv
from pathlib import Path

from . import experiments as E
from .config import ExperimentConfig
from .report import ReportTable, emit_report, to_csv

COMMANDS = ("train", "attack", "defend", "sweep-sigma", "sweep-n", "rm-report")


def _write_trace(path: Path, trace: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "lr", "loss", "accuracy"],
                                lineterminator="\n")
        writer.writeheader()
        for row in trace:
            writer.writerow({"epoch": row["epoch"], "lr": f"{row['lr']:.6g}",
                             "loss": f"{row['loss']:.6f}", "accuracy": f"{row['accuracy']:.4f}"})


def _emit(exp: E.Experiment, tables) -> tuple:
    files, grids = [], {}
    for t in tables:
        files += emit_report(t, exp.out_dir)
        grids[t.name] = to_csv(t)
    return files, grids


def run_command(name: str, cfg: ExperimentConfig, experiment: E.Experiment = None) -> dict:
    """Run one command and write its artifacts under ``cfg.out``.

    Returns ``{"files": [...], "reports": {table name: csv text}, "summary": {...}}``.
    """
    exp = experiment or E.Experiment(cfg)
    exp.out_dir.mkdir(parents=True, exist_ok=True)
    summary = {}
    tables: list[ReportTable] = []
    files = []
    if name == "train":
        files.append(exp.save_model())
        trace_path = exp.out_dir / "train_trace.csv"
        _write_trace(trace_path, exp.train_trace)
        files.append(trace_path)
        summary["test_accuracy"] = round(exp.base_accuracy(), 1)
    elif name == "attack":
        files += E.write_adversarial_sets(exp)
        tables.append(E.attack_report(exp))
    elif name == "defend":
        tables += E.run_defense_eval(exp)
    elif name == "sweep-sigma":
        tables.append(E.sweep_sigma_eps(exp))
    elif name == "sweep-n":
        tables += E.sweep_copies(exp)
    elif name == "rm-report":
        tables.append(E.rm_breakdown(exp))
        summary["rm_threshold"] = cfg.threshold_for(exp.model.num_classes)
    else:
        raise ValueError(f"unknown command {name!r}")
    written, reports = _emit(exp, tables)
    return {"files": [str(p) for p in files + written], "reports": reports, "summary": summary}
