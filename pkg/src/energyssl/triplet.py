"""Hard triplet mining over pseudo-labeled batches and the adaptive triplet loss.

Anchors are pseudo-labeled samples represented by their weak-view embeddings.
For each anchor, the hardest positive is the same-pseudo-class peer farthest
from it and the hardest negative the other-class sample nearest to it, both
measured by squared Euclidean distance between weak embeddings. The loss then
uses the strong-view embeddings of the chosen positive/negative, with softmax
weights over the anchor-to-positive / anchor-to-negative distances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError


@dataclass
class TripletBatch:
    anchor_idx: np.ndarray  # indices into the mined batch arrays
    pos_idx: np.ndarray
    neg_idx: np.ndarray
    anchor_class: np.ndarray

    def __len__(self):
        return len(self.anchor_idx)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def mine_hard(ids, pseudo_classes, weak_emb) -> TripletBatch:
    """Batch-hard mining; ties broken toward the lowest sample id.

    Anchors lacking a same-class peer or an other-class sample are skipped.
    """
    ids = np.asarray(ids)
    classes = np.asarray(pseudo_classes)
    weak = np.asarray(weak_emb, dtype=np.float64)
    n = len(ids)
    if n == 0:
        return TripletBatch(*(np.empty(0, dtype=np.int64),) * 4)
    d = _sq_dists(weak, weak)
    anchors, pos, neg = [], [], []
    for i in range(n):
        same = (classes == classes[i]) & (ids != ids[i])
        other = classes != classes[i]
        if not same.any() or not other.any():
            continue
        anchors.append(i)
        pos.append(_argbest(d[i], same, maximize=True, ids=ids))
        neg.append(_argbest(d[i], other, maximize=False, ids=ids))
    return TripletBatch(
        anchor_idx=np.asarray(anchors, dtype=np.int64),
        pos_idx=np.asarray(pos, dtype=np.int64),
        neg_idx=np.asarray(neg, dtype=np.int64),
        anchor_class=classes[np.asarray(anchors, dtype=np.int64)]
        if anchors
        else np.empty(0, dtype=np.int64),
    )


def _argbest(row, mask, maximize, ids):
    cand = np.flatnonzero(mask)
    vals = row[cand]
    best = vals.max() if maximize else vals.min()
    tied = cand[vals == best]
    return int(tied[np.argmin(ids[tied])])


def triplet_weights(anchor_weak, pos_strong, neg_strong):
    """Softmax weights over the loss distances; returned as detached float64.

    w_p grows with the anchor-positive distance (hard positives dominate);
    w_n uses the negated distance, so the closest negatives dominate.
    """
    d_ap = _pairwise_sq(anchor_weak, pos_strong)
    d_an = _pairwise_sq(anchor_weak, neg_strong)
    return _softmax(d_ap), _softmax(-d_an)


def _pairwise_sq(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return ((a - b) ** 2).sum(axis=-1)


def _softmax(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()


def ahtl(anchor, positive, negative, w_p, w_n, margin) -> torch.Tensor:
    """Sum over triplets of max(w_p*d_ap^2 - w_n*d_an^2 + margin, 0).

    Weights are treated as constants; gradients flow through the embeddings.
    """
    if margin <= 0:
        raise ConfigError("triplet margin must be > 0")
    if anchor.shape[0] == 0:
        return torch.zeros((), dtype=torch.float64)
    w_p = torch.as_tensor(np.asarray(w_p), dtype=anchor.dtype, device=anchor.device)
    w_n = torch.as_tensor(np.asarray(w_n), dtype=anchor.dtype, device=anchor.device)
    d_ap = ((anchor - positive) ** 2).sum(dim=-1)
    d_an = ((anchor - negative) ** 2).sum(dim=-1)
    return torch.clamp(w_p * d_ap - w_n * d_an + margin, min=0.0).sum()


def triplet_stats(anchor, positive, negative, w_p, w_n, margin) -> dict:
    with torch.no_grad():
        if anchor.shape[0] == 0:
            return {"count": 0, "active_frac": 0.0, "mean_d_ap": 0.0, "mean_d_an": 0.0}
        d_ap = ((anchor - positive) ** 2).sum(dim=-1)
        d_an = ((anchor - negative) ** 2).sum(dim=-1)
        w_p = torch.as_tensor(np.asarray(w_p), dtype=anchor.dtype)
        w_n = torch.as_tensor(np.asarray(w_n), dtype=anchor.dtype)
        active = (w_p * d_ap - w_n * d_an + margin) > 0
        return {
            "count": int(anchor.shape[0]),
            "active_frac": float(active.double().mean()),
            "mean_d_ap": float(d_ap.double().mean()),
            "mean_d_an": float(d_an.double().mean()),
        }
