"""Confusion matrices, metric reports, and hyperparameter sweeps."""

from __future__ import annotations

import csv
import json
import math
import os
import traceback

import numpy as np

from .data import DatasetSplit
from .errors import DataError
from .trainer import fit, tail_class_set


def confusion(predictions, labels, num_classes) -> np.ndarray:
    """K x K count matrix, rows = true class, columns = predicted class."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise DataError("predictions and labels must be aligned")
    for name, v in (("prediction", predictions), ("label", labels)):
        if len(v) and (v.min() < 0 or v.max() >= num_classes):
            raise DataError(f"{name} value out of range [0, {num_classes})")
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (labels, predictions), 1)
    return m


def row_normalized(matrix) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    sums = matrix.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(sums > 0, matrix / sums, 0.0)
    return out


def _round6(x):
    if x is None:
        return None
    if isinstance(x, float) and math.isnan(x):
        return None
    return round(float(x), 6)


def summarize(matrix, audit_rows=None, config=None) -> dict:
    """Assemble the metrics report from a confusion matrix and audit logs.

    Tail aggregate recall averages the ceil(K/2) smallest training classes.
    """
    matrix = np.asarray(matrix)
    k = matrix.shape[0]
    total = int(matrix.sum())
    acc = float(np.trace(matrix)) / total if total else 0.0
    recalls = []
    for c in range(k):
        row = matrix[c].sum()
        recalls.append(matrix[c, c] / row if row else float("nan"))
    tails = tail_class_set(k)
    heads = [c for c in range(k) if c not in tails]

    def _group_recall(group):
        vals = [recalls[c] for c in group if not math.isnan(recalls[c])]
        return _round6(float(np.mean(vals))) if vals else None

    report = {
        "num_classes": k,
        "total_samples": total,
        "overall_accuracy": _round6(acc),
        "per_class_recall": [_round6(r) for r in recalls],
        "tail_recall": _group_recall(tails),
        "head_recall": _group_recall(heads) if heads else None,
        "confusion": matrix.tolist(),
    }
    if audit_rows is not None:
        report["pseudo_label_audit"] = [
            {k2: _round6(v) if isinstance(v, float) else v for k2, v in row.items()}
            for row in audit_rows
        ]
    if config is not None:
        report["config_fingerprint"] = config.fingerprint()
    return report


def report_json(report: dict) -> str:
    """Byte-stable serialization: sorted keys, floats pre-rounded to 6 places."""
    return json.dumps(report, sort_keys=True, indent=2)


def report_table(report: dict) -> str:
    lines = []
    lines.append(f"overall accuracy : {report['overall_accuracy']:.6f}")
    if report.get("tail_recall") is not None:
        lines.append(f"tail recall      : {report['tail_recall']:.6f}")
    if report.get("head_recall") is not None:
        lines.append(f"head recall      : {report['head_recall']:.6f}")
    lines.append("class  recall")
    for c, r in enumerate(report["per_class_recall"]):
        lines.append(f"{c:>5}  {'-' if r is None else f'{r:.6f}'}")
    return "\n".join(lines)


DEFAULT_GRIDS = {
    "tau_e": [-11.0, -10.0, -9.5, -9.0, -8.0, -7.0, -6.0],
    "temperature": [0.5, 1.0, 1.5, 2.0, 4.0],
    "triplet_margin": [0.1, 0.2, 0.3, 0.4],
    "lambda_u": [0.1, 0.5, 1.0, 1.5, 2.0, 4.0],
    "lambda_ahtl": [0.1, 0.5, 1.0, 1.5, 2.0, 4.0],
}


def sweep(base_config, split: DatasetSplit, grid: dict, out_dir, log_fn=None):
    """Run fit() at every grid point; emit one CSV row per point.

    Each point gets an independent derived seed; a failed point is recorded
    with status=failed and the sweep continues.
    """
    os.makedirs(out_dir, exist_ok=True)
    names = sorted(grid)
    points = [()]
    for name in names:
        points = [p + (v,) for p in points for v in grid[name]]
    rows = []
    for i, point in enumerate(points):
        overrides = dict(zip(names, point))
        cfg = base_config.replace(**overrides, seed=base_config.seed + 1000 * (i + 1))
        run_dir = os.path.join(out_dir, f"point_{i:03d}")
        row = {**overrides, "point": i, "seed": cfg.seed}
        try:
            _, last_eval = fit(cfg, split, run_dir, log_fn=log_fn)
            row.update(
                status="ok",
                accuracy=_round6(last_eval["accuracy"]),
                tail_recall=_round6(last_eval["tail_recall"]),
            )
        except Exception as e:  # isolate grid-point failures
            row.update(status="failed", accuracy=None, tail_recall=None)
            with open(os.path.join(out_dir, f"point_{i:03d}.error"), "w") as f:
                f.write(f"{e}\n{traceback.format_exc()}")
        rows.append(row)

    cols = ["point", "seed"] + names + ["status", "accuracy", "tail_recall"]
    with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        for row in rows:
            w.writerow({c: ("" if row.get(c) is None else row[c]) for c in cols})
    return rows
