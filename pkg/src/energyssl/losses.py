"""Loss terms: supervised CE, class-prior EMA with adaptive margins, the
margin-shifted unsupervised loss over gated pseudo-labels, and the weighted sum.

The adaptive margin loss is cross-entropy evaluated on shifted logits f - m,
where m_j = lambda * log(1 / p_hat_j) and p_hat is an exponential moving
average of the model's mean softmax prediction. Rare classes (small p_hat)
receive large margins, so a head-class prediction must clear a higher bar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, DataError, NumericError


def ce_supervised(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of a labeled batch (stable log-sum-exp inside)."""
    if logits.shape[0] == 0:
        raise DataError("ce_supervised requires a non-empty batch")
    k = logits.shape[-1]
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(f"label out of range [0, {k})")
    return F.cross_entropy(logits, labels)


class ClassPriorEMA:
    """EMA of the mean predicted class distribution; owns the margin vector.

    Holds detached float64 state: no gradient flows through the prior or the
    margins derived from it.
    """

    def __init__(self, num_classes: int, decay: float = 0.99):
        if not (0.0 <= decay <= 1.0):
            raise ConfigError("prior decay must lie in [0, 1]")
        self.num_classes = num_classes
        self.decay = decay
        self.p_hat = np.full(num_classes, 1.0 / num_classes, dtype=np.float64)

    def update(self, softmax_batch) -> None:
        """Blend in the batch mean of softmax rows; no-op on an empty batch."""
        if isinstance(softmax_batch, torch.Tensor):
            softmax_batch = softmax_batch.detach().cpu().double().numpy()
        softmax_batch = np.asarray(softmax_batch, dtype=np.float64)
        if softmax_batch.shape[0] == 0:
            return
        mean = softmax_batch.mean(axis=0)
        self.p_hat = self.decay * self.p_hat + (1.0 - self.decay) * mean
        self.p_hat = self.p_hat / self.p_hat.sum()

    def margins(self, lambda_margin: float) -> np.ndarray:
        if lambda_margin < 0:
            raise ConfigError("lambda_margin must be >= 0")
        return lambda_margin * np.log(1.0 / self.p_hat)


def aml(logits: torch.Tensor, targets: torch.Tensor, margins) -> torch.Tensor:
    """Adaptive margin loss: mean CE on logits shifted by per-class margins."""
    return _aml_per_sample(logits, targets, margins).mean()


def _aml_per_sample(logits, targets, margins):
    m = torch.as_tensor(np.asarray(margins), dtype=logits.dtype, device=logits.device)
    shifted = logits - m
    return F.cross_entropy(shifted, targets, reduction="none")


def unsup_loss(strong_logits, pseudo_classes, mask, margins) -> torch.Tensor:
    """Gated margin loss over strong-view logits, normalized by batch size.

    Rejected samples contribute exactly zero; empty selection yields 0.
    """
    n = strong_logits.shape[0]
    if n == 0:
        return strong_logits.new_zeros(())
    mask = mask.to(strong_logits.dtype)
    if mask.sum() == 0:
        return strong_logits.new_zeros(())
    per = _aml_per_sample(strong_logits, pseudo_classes, margins)
    return (mask * per).sum() / n


@dataclass
class LossBreakdown:
    supervised: float
    unsupervised: float
    triplet: float
    lambda_u: float
    lambda_ahtl: float
    total: float


def total_loss(l_s, l_u, l_ahtl, lambda_u, lambda_ahtl):
    """Weighted sum l_s + lambda_u*l_u + lambda_ahtl*l_ahtl (tensor in, tensor out)."""
    for name, term in (("supervised", l_s), ("unsupervised", l_u), ("triplet", l_ahtl)):
        val = float(term.detach()) if isinstance(term, torch.Tensor) else float(term)
        if not np.isfinite(val):
            raise NumericError(f"non-finite {name} loss term: {val}")
    return l_s + lambda_u * l_u + lambda_ahtl * l_ahtl
