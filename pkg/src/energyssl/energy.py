"""Energy scores over classifier logits and the pseudo-label selection gate.

The energy of a logit vector f is -T * log(sum_i exp(f_i / T)); lower energy
means the input sits closer to the training distribution. Unlabeled samples
whose energy falls strictly below a threshold are admitted as pseudo-labels.
A max-softmax confidence gate is available as a baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, DataError, NumericError


@dataclass
class SelectionConfig:
    tau_e: float = -9.0
    temperature: float = 1.0
    baseline_mode: str = "off"  # "off" | "confidence"
    tau_c: float = 0.95

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.baseline_mode not in ("off", "confidence"):
            raise ConfigError(f"unknown baseline_mode {self.baseline_mode!r}")
        if self.baseline_mode == "confidence" and not (0.0 < self.tau_c < 1.0):
            raise ConfigError("tau_c must lie in (0, 1)")


@dataclass
class PseudoLabelRecord:
    sample_id: int
    predicted_class: int
    energy: float
    iteration: int


def energy_score(logits: torch.Tensor, temperature: float) -> torch.Tensor:
    """-T * logsumexp(f / T) along the last axis, numerically stable."""
    if temperature <= 0:
        raise ConfigError("temperature must be > 0")
    if not torch.isfinite(logits).all():
        raise NumericError("non-finite logits passed to energy_score")
    return -temperature * torch.logsumexp(logits / temperature, dim=-1)


def select(ids, logits: torch.Tensor, cfg: SelectionConfig, iteration: int):
    """Gate a batch of weak-view logits.

    Returns (mask bool tensor, records, energies). Selection is stateless:
    identical logits produce identical decisions at any iteration.
    """
    energies = energy_score(logits, cfg.temperature)
    if cfg.baseline_mode == "confidence":
        conf = torch.softmax(logits, dim=-1).max(dim=-1).values
        mask = conf > cfg.tau_c
    else:
        mask = energies < cfg.tau_e
    preds = logits.argmax(dim=-1)
    records = [
        PseudoLabelRecord(
            sample_id=int(ids[i]),
            predicted_class=int(preds[i]),
            energy=float(energies[i]),
            iteration=iteration,
        )
        for i in range(len(ids))
        if bool(mask[i])
    ]
    return mask, records, energies


def audit(records, hidden_labels: dict, num_classes: int, unlabeled_class_counts=None):
    """Per-class precision/recall of pseudo-labels against hidden true labels.

    Reporting only; never feeds back into training. Rates are None when the
    denominator is zero.
    """
    if unlabeled_class_counts is None:
        unlabeled_class_counts = np.bincount(
            list(hidden_labels.values()), minlength=num_classes
        )
    selected = np.zeros(num_classes, dtype=np.int64)
    correct = np.zeros(num_classes, dtype=np.int64)
    energy_sum = np.zeros(num_classes, dtype=np.float64)
    for r in records:
        if r.sample_id not in hidden_labels:
            raise DataError(f"audit: sample id {r.sample_id} has no hidden label")
        c = r.predicted_class
        selected[c] += 1
        energy_sum[c] += r.energy
        if hidden_labels[r.sample_id] == c:
            correct[c] += 1
    rows = []
    for c in range(num_classes):
        rows.append(
            {
                "class": c,
                "selected": int(selected[c]),
                "correct": int(correct[c]),
                "precision": None if selected[c] == 0 else correct[c] / selected[c],
                "recall": None
                if unlabeled_class_counts[c] == 0
                else correct[c] / unlabeled_class_counts[c],
                "mean_energy": None if selected[c] == 0 else energy_sum[c] / selected[c],
            }
        )
    return rows
