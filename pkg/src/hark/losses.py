"""Training objective: SmoothL1 regression plus a beta-weighted listwise
ranking term (negative log Plackett-Luce likelihood of the label ordering).

Both losses are built on hark.grad tensors and are differentiable end to end.
ListMLE ties are broken deterministically by original index so runs are
reproducible; the per-dimension ranking losses of a 5-score batch are averaged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import grad
from .errors import ValidationError
from .grad import Tensor

TRACK1_BETA = 0.15
TRACK2_BETA = 0.05


@dataclass(frozen=True)
class LossConfig:
    beta: float = TRACK1_BETA
    delta: float = 1.0
    tie_rule: str = "by_index"

    def __post_init__(self):
        if self.beta < 0:
            raise ValidationError("beta must be non-negative")
        if self.delta <= 0:
            raise ValidationError("delta must be positive")
        if self.tie_rule != "by_index":
            raise ValidationError(f"unsupported tie rule {self.tie_rule!r}")

    @staticmethod
    def default_for_track(track: int) -> "LossConfig":
        return LossConfig(beta=TRACK1_BETA if track == 1 else TRACK2_BETA)

    @staticmethod
    def from_json(obj: dict, track: int = 1) -> "LossConfig":
        base = LossConfig.default_for_track(track)
        return LossConfig(
            beta=float(obj.get("beta", base.beta)),
            delta=float(obj.get("delta", base.delta)),
            tie_rule=obj.get("tie_rule", "by_index"),
        )


@dataclass(frozen=True)
class LossReport:
    total: float
    smooth_l1_component: float
    listmle_component: float
    beta: float


def smooth_l1(pred: Tensor, target, delta: float = 1.0) -> Tensor:
    """Mean over elements of: 0.5 e^2 / delta for |e| < delta, else
    |e| - 0.5 delta, with e = pred - target."""
    target_t = target if isinstance(target, Tensor) else Tensor(np.asarray(target), dtype=pred.dtype)
    if pred.shape != target_t.shape:
        raise ValidationError(f"smooth_l1 shape mismatch: {pred.shape} vs {target_t.shape}")
    e = pred - target_t
    a = grad.abs_(e)
    quad = (e * e) * (0.5 / delta)
    lin = a - 0.5 * delta
    return grad.mean(grad.where(a.data < delta, quad, lin))


def listmle_order(labels: np.ndarray) -> np.ndarray:
    """Permutation ordering items by label descending, ties by ascending
    original index."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    return np.argsort(-labels, kind="stable")


def listmle(scores: Tensor, labels, tie_rule: str = "by_index") -> Tensor:
    """Negative log Plackett-Luce likelihood of the label ordering under the
    predicted scores, computed with max-subtraction and normalized by list
    length."""
    if tie_rule != "by_index":
        raise ValidationError(f"unsupported tie rule {tie_rule!r}")
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    flat = grad.reshape(scores, (-1,))
    n = flat.shape[0]
    if n != labels.size:
        raise ValidationError(f"listmle length mismatch: {n} scores vs {labels.size} labels")
    if n == 0:
        raise ValidationError("listmle of an empty list")
    if n == 1:
        return Tensor(np.zeros(()), dtype=scores.dtype) * grad.sum_(flat)
    perm = listmle_order(labels)
    s = grad.gather(flat, perm, axis=0)
    terms = []
    for t in range(n):
        tail = grad.slice_(s, (slice(t, n),))
        m = float(tail.data.max())
        lse = grad.log(grad.sum_(grad.exp(tail - m))) + m
        terms.append(lse - grad.slice_(s, (t,)))
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total * (1.0 / n)


def hybrid_loss(
    pred: Tensor,
    target,
    cfg: LossConfig,
) -> tuple[Tensor, LossReport]:
    """total = smooth_l1 over all (item, dimension) pairs
             + beta * mean over dimensions of listmle across the batch.

    `pred` has shape (B, D); `target` matches. Returns the differentiable
    total and a float report. The ranking term joins the graph only when
    beta > 0; its value is always reported."""
    target_arr = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if len(pred.shape) != 2:
        raise ValidationError(f"hybrid_loss expects (batch, dims) predictions, got {pred.shape}")
    b, d = pred.shape
    if b < 1:
        raise ValidationError("hybrid_loss needs at least one item")
    sl1 = smooth_l1(pred, np.asarray(target_arr, dtype=pred.data.dtype), cfg.delta)

    rank_terms = []
    if b > 1:
        for dim in range(d):
            col = grad.slice_(pred, (slice(None), dim))
            rank_terms.append(listmle(col, target_arr[:, dim], cfg.tie_rule))
    if rank_terms:
        rank = rank_terms[0]
        for term in rank_terms[1:]:
            rank = rank + term
        rank = rank * (1.0 / d)
        rank_value = float(rank.data)
    else:
        rank = None
        rank_value = 0.0

    if cfg.beta > 0 and rank is not None:
        total = sl1 + cfg.beta * rank
    else:
        total = sl1
    report = LossReport(
        total=float(total.data),
        smooth_l1_component=float(sl1.data),
        listmle_component=rank_value,
        beta=cfg.beta,
    )
    return total, report
