"""Random-effects data model, inverse-variance pooling and I^2."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

MIN_STUDIES_INTERVAL = 3


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StudySet:
    """Effect estimates ``y`` with known within-study standard errors ``sigma``.

    Construction validates shapes and values; at least two studies are
    required here, interval methods additionally demand three.
    """

    y: np.ndarray
    sigma: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        y = np.atleast_1d(_readonly(self.y))
        sigma = np.atleast_1d(_readonly(self.sigma))
        if y.ndim != 1 or sigma.ndim != 1 or y.shape != sigma.shape:
            raise DomainError("y and sigma must be 1-d vectors of equal length")
        if y.size < 2:
            raise DomainError("at least two studies are required")
        if not np.all(np.isfinite(y)):
            raise DomainError("all effect estimates must be finite")
        if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
            raise DomainError("all standard errors must be finite and > 0")
        labels = self.labels
        if labels is not None:
            labels = tuple(str(lab) for lab in labels)
            if len(labels) != y.size:
                raise DomainError("labels must have one entry per study")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_variances(cls, y, v, labels=None) -> "StudySet":
        v = np.asarray(v, dtype=float)
        if np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise DomainError("all within-study variances must be finite and > 0")
        return cls(y, np.sqrt(v), labels)

    @property
    def k(self) -> int:
        return int(self.y.size)

    @property
    def variances(self) -> np.ndarray:
        return self.sigma**2

    def display_labels(self) -> list[str]:
        if self.labels is not None:
            return list(self.labels)
        return [f"Study {i + 1}" for i in range(self.k)]

    def shifted(self, c: float) -> "StudySet":
        return StudySet(self.y + c, self.sigma, self.labels)

    def scaled(self, c: float) -> "StudySet":
        return StudySet(self.y * c, self.sigma * c, self.labels)


def require_min_studies(s: StudySet, k_min: int = MIN_STUDIES_INTERVAL) -> None:
    if s.k < k_min:
        raise DomainError(f"method requires K >= {k_min} studies (got K = {s.k})")


@dataclass(frozen=True, eq=False)
class Weights:
    """Random-effects weights ``1 / (sigma_k^2 + tau2)``."""

    w: np.ndarray
    tau2: float

    @property
    def total(self) -> float:
        return float(self.w.sum())


@dataclass(frozen=True)
class PooledEffect:
    mu: float
    var_mu: float
    var_method: str
    df: float


def weights(s: StudySet, tau2: float) -> Weights:
    """Inverse-variance weights for heterogeneity ``tau2`` (squared outcome units)."""
    tau2 = float(tau2)
    if not np.isfinite(tau2):
        raise DomainError(f"tau2 must be finite (got {tau2})")
    if tau2 < 0:
        raise DomainError(f"tau2 must be >= 0 (got {tau2})")
    return Weights(_readonly(1.0 / (s.variances + tau2)), tau2)


def pooled_mean(s: StudySet, w: Weights) -> float:
    return float(np.dot(w.w, s.y) / w.w.sum())


def typical_within_variance(s: StudySet) -> float:
    """Typical within-study variance ``(K-1) S1 / (S1^2 - S2)``."""
    if s.k < 2:
        raise DomainError("I^2 needs at least two studies")
    v = 1.0 / s.variances
    s1 = v.sum()
    s2 = np.dot(v, v)
    return float((s.k - 1) * s1 / (s1 * s1 - s2))


def i_squared(s: StudySet, tau2: float) -> float:
    """Heterogeneity share in percent, ``100 tau2 / (tau2 + s_tilde^2)``.

    Uses the typical within-study variance, so the value depends on which
    tau^2 estimate is plugged in. With the DerSimonian-Laird estimate this
    coincides with the Q-based ``(Q - (K-1)) / Q``.
    """
    if tau2 < 0 or not np.isfinite(tau2):
        raise DomainError(f"tau2 must be finite and >= 0 (got {tau2})")
    s2t = typical_within_variance(s)
    return float(100.0 * tau2 / (tau2 + s2t))
