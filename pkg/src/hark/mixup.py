"""Label-distance-conditioned feature mixing for regression.

Partners are sampled with probability decaying in label-space Euclidean
distance under a Gaussian kernel, then features and labels are convexly
combined with a Beta(alpha, alpha) coefficient. Mixing happens at the fused
pooled vector: variable-length sequences admit no elementwise convex
combination, so the fixed-length representation is the only well-defined site.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class MixupConfig:
    sigma: float = 1.0
    alpha: float = 2.0
    apply_probability: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValidationError("mixup sigma must be positive")
        if self.alpha <= 0:
            raise ValidationError("mixup alpha must be positive")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ValidationError("mixup apply_probability must lie in [0, 1]")

    @staticmethod
    def from_json(obj: dict) -> "MixupConfig":
        return MixupConfig(
            sigma=float(obj.get("sigma", 1.0)),
            alpha=float(obj.get("alpha", 2.0)),
            apply_probability=float(obj.get("apply_probability", 0.5)),
            enabled=bool(obj.get("enabled", True)),
        )


@dataclass(frozen=True)
class MixPair:
    anchor: int
    partner: int
    lam: float
    features: np.ndarray
    labels: np.ndarray


def _label_matrix(labels) -> np.ndarray:
    if len(labels) and hasattr(labels[0], "values"):
        lab = np.stack([sv.values for sv in labels])
    else:
        lab = np.asarray(labels, dtype=np.float64)
        if lab.ndim == 1:
            lab = lab[:, None]
    return lab


def pair_probabilities(labels, anchor: int, sigma: float) -> np.ndarray:
    """P(j | anchor) proportional to exp(-d(anchor, j)^2 / (2 sigma^2)) over
    j != anchor, where d is Euclidean distance between label vectors. Returns
    a full-length vector with 0 at the anchor itself."""
    lab = _label_matrix(labels)
    n = lab.shape[0]
    if n < 2:
        raise ValidationError("pair sampling needs at least two items")
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    d2 = np.sum((lab - lab[anchor]) ** 2, axis=1)
    expo = -d2 / (2.0 * sigma * sigma)
    expo[anchor] = -np.inf
    expo -= expo.max()
    p = np.exp(expo)
    return p / p.sum()


def sample_pair(labels, anchor: int, cfg: MixupConfig, rng: np.random.Generator) -> int:
    """Draw a partner index from pair_probabilities via inverse CDF."""
    p = pair_probabilities(labels, anchor, cfg.sigma)
    u = rng.uniform()
    return int(np.searchsorted(np.cumsum(p), u, side="right").clip(max=p.size - 1))


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    """Beta(alpha, alpha) via the two-Gamma construction; open interval (0,1)."""
    if alpha <= 0:
        raise ValidationError("alpha must be positive")
    while True:
        g1 = rng.gamma(alpha)
        g2 = rng.gamma(alpha)
        total = g1 + g2
        if total > 0 and 0.0 < g1 / total < 1.0:
            return float(g1 / total)


def mix(x_i, x_j, y_i, y_j, lam: float) -> MixPair:
    """Exact convex combination of features and labels."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    y_i = np.asarray(y_i, dtype=np.float64)
    y_j = np.asarray(y_j, dtype=np.float64)
    if x_i.shape != x_j.shape or y_i.shape != y_j.shape:
        raise ValidationError("mix requires matching feature and label shapes")
    return MixPair(
        anchor=-1,
        partner=-1,
        lam=float(lam),
        features=lam * x_i + (1.0 - lam) * x_j,
        labels=lam * y_i + (1.0 - lam) * y_j,
    )
