"""Variance estimators for the pooled mean and Kenward-Roger degrees of freedom."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError
from .model import StudySet, Weights

# Exponent on the ratio sum(w^2)/sum(w) in the last term of the expected
# information for tau^2.  Squaring makes the expression equal to
# tr(P P) / 2 with P = W - w w^T / sum(w), hence always >= 0.
KR_INFO_RATIO_POWER = 2


@dataclass(frozen=True)
class VarianceEstimate:
    value: float
    method: str
    kr_df: float | None = None
    kr_info: float | None = None


def var_approx(s: StudySet, w: Weights) -> VarianceEstimate:
    return VarianceEstimate(1.0 / w.total, "APX")


def var_hk(s: StudySet, w: Weights, mu: float) -> VarianceEstimate:
    """Hartung-Knapp: weighted residual mean square over ``(K-1) * sum(w)``."""
    if s.k < 2:
        raise DomainError("Hartung-Knapp variance needs K >= 2")
    q_w = float(np.dot(w.w, (s.y - mu) ** 2))
    return VarianceEstimate(q_w / (s.k - 1) / w.total, "HK")


def sj_leverage(s: StudySet, w: Weights, tau2: float) -> np.ndarray:
    """Leverages used by the Sidik-Jonkman bias correction.

    ``h_k = 2 w_k / W - sum_l w_l^2 (sigma_l^2 + tau2) / ((sigma_k^2 + tau2) W^2)``
    with ``W = sum(w)``; algebraically this is ``w_k / W``.
    """
    total = w.total
    marg = s.variances + tau2
    return 2.0 * w.w / total - np.dot(w.w**2, marg) / (marg * total**2)


def var_sj(s: StudySet, w: Weights, mu: float, tau2: float) -> VarianceEstimate:
    h = sj_leverage(s, w, tau2)
    bad = np.flatnonzero(h >= 1.0)
    if bad.size:
        name = s.display_labels()[bad[0]]
        raise NumericalError(f"degenerate leverage h >= 1 for study {name!r}")
    num = np.dot(w.w**2 / (1.0 - h), (s.y - mu) ** 2)
    return VarianceEstimate(float(num / w.total**2), "SJ")


def kr_information(w: Weights) -> float:
    """Expected information for tau^2 under REML at the given weights."""
    s1 = w.total
    s2 = float(np.sum(w.w**2))
    s3 = float(np.sum(w.w**3))
    info = 0.5 * s2 - s3 / s1 + 0.5 * (s2 / s1) ** KR_INFO_RATIO_POWER
    if not info > 0:
        raise NumericalError(f"expected information for tau^2 is not positive ({info:.3g})")
    return info


def var_kr(s: StudySet, w: Weights) -> VarianceEstimate:
    """Kenward-Roger bias-adjusted variance with its approximate df ``nu``.

    The adjustment term is nonnegative in exact arithmetic; rounding can make
    it slightly negative for near-equal weights, in which case it is clamped
    to zero (a warning is issued if the negative part is not negligible).
    """
    info = kr_information(w)
    s1 = w.total
    s2 = float(np.sum(w.w**2))
    s3 = float(np.sum(w.w**3))
    brace = s3 / s1 - (s2 / s1) ** 2
    if brace < 0:
        if brace < -1e-10 * s3 / s1:
            warnings.warn(f"negative Kenward-Roger adjustment {brace:.3g} clamped to 0", RuntimeWarning, stacklevel=2)
        brace = 0.0
    value = 1.0 / s1 + 2.0 * brace / (info * s1)
    nu = 2.0 * info / (value * s2) ** 2
    return VarianceEstimate(value, "KR", kr_df=nu, kr_info=info)
