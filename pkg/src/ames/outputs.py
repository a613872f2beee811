"""Run artifacts: summary.json, trace.csv, attribution.csv.

Everything is UTF-8 with LF line endings and floats carry 9 significant
digits, so repeated runs with one seed give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError
from .trainer import CVSummary


def fmt(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.9g}"


def _round(x: float) -> float | None:
    x = float(x)
    return None if math.isnan(x) else float(f"{x:.9g}")


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def trace_header(labels: list[str]) -> list[str]:
    return (
        ["fold", "epoch", "loss_task", "loss_graph", "acc_train", "acc_test"]
        + [f"alpha_{s}" for s in labels]
        + [f"fro_{s}" for s in labels]
    )


def render_trace(summary: CVSummary) -> str:
    labels = summary.space_labels
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trace_header(labels))
    for fold in summary.folds:
        for r in fold.records:
            alpha = list(r.alpha) if len(r.alpha) else [float("nan")] * len(labels)
            fro = list(r.fro) if len(r.fro) else [float("nan")] * len(labels)
            row = [str(r.fold), str(r.epoch)] + [fmt(v) for v in (r.loss_task, r.loss_graph, r.acc_train, r.acc_test)]
            row += [fmt(v) for v in alpha[: len(labels)]] + [fmt(v) for v in fro[: len(labels)]]
            writer.writerow(row)
    return buf.getvalue()


def render_attribution(summary: CVSummary) -> str:
    labels = summary.space_labels
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch"] + [f"fro_{s}" for s in labels])
    if labels:
        curve = summary.attribution_curve()
        epochs = [r.epoch for r in summary.folds[0].records]
        for epoch, row in zip(epochs, curve):
            writer.writerow([str(epoch)] + [fmt(v) for v in row])
    return buf.getvalue()


def render_summary(summary: CVSummary, config, dataset_name: str = "") -> str:
    accs = summary.final_accuracies
    doc = {
        "config": config.echo(),
        "dataset": dataset_name,
        "preprocessing": {"normalize": config.normalize, "standardize": config.standardize},
        "folds": [
            {
                "fold": f.fold,
                "final_acc": _round(f.final_acc),
                "best_acc": _round(f.best_acc),
                "best_epoch": f.best_epoch,
            }
            for f in summary.folds
        ],
        "mean_acc": _round(np.mean(accs)),
        "std_acc": _round(summary.std),
        "result": summary.formatted(),
    }
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_outputs(out_dir, summary: CVSummary, config, dataset_name: str = "") -> Path:
    """Write the three run files into ``out_dir`` (created if needed)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "summary.json", render_summary(summary, config, dataset_name))
    _write_text(out / "trace.csv", render_trace(summary))
    _write_text(out / "attribution.csv", render_attribution(summary))
    return out


@dataclass
class RunReport:
    labels: list[str]
    alpha: np.ndarray
    fro: np.ndarray

    def ranking(self) -> list[tuple[str, float]]:
        order = np.argsort(-self.fro, kind="stable")
        return [(self.labels[i], float(self.fro[i])) for i in order]


def read_run(run_dir) -> RunReport:
    """Final-epoch fold-mean alpha (from trace.csv) and attribution norms."""
    run = Path(run_dir)
    attr_path, trace_path = run / "attribution.csv", run / "trace.csv"
    for p in (attr_path, trace_path):
        if not p.is_file():
            raise FileNotFoundError(f"missing run file: {p}")
    with open(attr_path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ParseError(f"{attr_path} has no data rows")
    header = rows[0]
    labels = [h[len("fro_"):] for h in header[1:]]
    if not labels:
        raise ContractError(f"{attr_path} has no attribution columns")
    fro = np.array([float(v) for v in rows[-1][1:]])

    with open(trace_path, encoding="utf-8") as fh:
        trace = list(csv.DictReader(fh))
    if not trace:
        raise ParseError(f"{trace_path} has no data rows")
    last_epoch = max(int(r["epoch"]) for r in trace)
    finals = [r for r in trace if int(r["epoch"]) == last_epoch]
    alpha = np.array([[float(r[f"alpha_{s}"]) for s in labels] for r in finals]).mean(axis=0)
    return RunReport(labels, alpha, fro)
