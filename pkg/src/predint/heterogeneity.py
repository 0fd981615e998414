"""Between-study variance estimators: DerSimonian-Laird and REML."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import optimize

from .errors import ConvergenceWarning, DomainError
from .model import StudySet, pooled_mean, typical_within_variance, weights

# Sign of the S2/S1 term in the DL denominator S1 -/+ S2/S1. The classical
# moment estimator subtracts; this is the form that gives
# tau^2 = 0.0282 on the sbp example.
DL_DENOMINATOR_SIGN = -1.0

REML_TOL = 1e-8
REML_MAXITER = 100


class QStatistic(NamedTuple):
    q: float
    s1: float
    s2: float
    s3: float
    ybar: float


@dataclass(frozen=True)
class HeterogeneityEstimate:
    tau2: float
    method: str
    q_obs: float
    s1: float
    s2: float
    s3: float
    iterations: int = 0
    converged: bool = True


def q_statistic(s: StudySet) -> QStatistic:
    """Cochran's Q with fixed-effect weights, plus the weight moments S1..S3."""
    v = 1.0 / s.variances
    s1 = float(v.sum())
    ybar = float(np.dot(v, s.y) / s1)
    q = float(np.dot(v, (s.y - ybar) ** 2))
    return QStatistic(q, s1, float(np.sum(v**2)), float(np.sum(v**3)), ybar)


def dl_denominator(qs: QStatistic) -> float:
    return qs.s1 + DL_DENOMINATOR_SIGN * qs.s2 / qs.s1


def tau2_udl(s: StudySet) -> float:
    """Untruncated DerSimonian-Laird moment statistic (may be negative)."""
    qs = q_statistic(s)
    return (qs.q - (s.k - 1)) / dl_denominator(qs)


def tau2_dl(s: StudySet) -> HeterogeneityEstimate:
    qs = q_statistic(s)
    udl = (qs.q - (s.k - 1)) / dl_denominator(qs)
    return HeterogeneityEstimate(max(0.0, udl), "DL", qs.q, qs.s1, qs.s2, qs.s3)


def reml_update(s: StudySet, tau2: float) -> float:
    """One application of the REML fixed-point map (before truncation)."""
    w = weights(s, tau2)
    mu = pooled_mean(s, w)
    w2 = w.w**2
    num = np.dot(w2, (s.y - mu) ** 2 + 1.0 / w.total - s.variances)
    return float(num / w2.sum())


def tau2_reml(s: StudySet, maxiter: int = REML_MAXITER, tol: float = REML_TOL) -> HeterogeneityEstimate:
    """REML estimate of tau^2: the fixed point of ``tau2 = max(0, F(tau2))``.

    ``F`` is :func:`reml_update`.  Plain iteration of ``F`` can crawl for
    thousands of steps when its slope at the solution is close to one, so
    the fixed point is located as a root of ``g(t) = F(t) - t`` instead:
    starting from the DerSimonian-Laird value a sign change of ``g`` is
    bracketed (or ``F(0) <= 0`` identifies the truncated solution 0) and
    Brent's method narrows the bracket.  A final plain step confirms the
    solution; ``converged`` is true when that step is smaller than ``tol``
    times the typical within-study variance.  Scaling the tolerance this
    way makes the estimate scale equivariant.

    Every evaluation of ``F`` counts towards ``maxiter``.  When the budget
    runs out the current iterate is returned with ``converged=False`` and a
    :class:`ConvergenceWarning` is issued.
    """
    if maxiter < 1:
        raise DomainError("maxiter must be >= 1")
    if not tol > 0:
        raise DomainError("tol must be > 0")
    threshold = tol * typical_within_variance(s)
    start = tau2_dl(s)
    evals = 0

    def g(t: float) -> float:
        nonlocal evals
        evals += 1
        return reml_update(s, t) - t

    def finish(t: float, ok: bool) -> HeterogeneityEstimate:
        if ok and evals < maxiter:
            new = max(0.0, reml_update(s, t))
            ok = abs(new - t) < threshold
            t = new
        else:
            ok = False
        if not ok:
            warnings.warn(
                f"REML did not converge in {maxiter} iterations (last tau2 = {t:.6g})",
                ConvergenceWarning,
                stacklevel=3,
            )
        return HeterogeneityEstimate(t, "REML", start.q_obs, start.s1, start.s2, start.s3, evals + ok, ok)

    t0 = start.tau2
    g0 = g(t0)
    if abs(g0) < threshold:
        return finish(t0, True)
    if g0 < 0:
        if t0 == 0.0:
            return finish(0.0, True)
        g_zero = g(0.0)
        if g_zero <= 0:
            return finish(0.0, True)
        lo, hi = 0.0, t0
    else:
        lo, step = t0, max(g0, threshold)
        hi = lo + 2.0 * step
        while g(hi) > 0:
            if evals >= maxiter or not np.isfinite(hi):
                return finish(hi, False)
            lo, step = hi, 4.0 * step
            hi = lo + step
    budget = maxiter - evals
    if budget < 1:
        return finish(0.5 * (lo + hi), False)
    root, info = optimize.brentq(g, lo, hi, xtol=threshold, rtol=4 * np.finfo(float).eps,
                                 maxiter=budget, full_output=True, disp=False)
    return finish(root, info.converged)
