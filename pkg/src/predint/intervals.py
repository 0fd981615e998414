"""Prediction and confidence intervals for the random-effects model.

Three prediction-interval families are provided:

* ``pi_hts`` -- plug-in interval with the DerSimonian-Laird tau^2 and
  ``t_{K-2}`` quantiles;
* ``pi_pr`` -- REML-based intervals with the approximate, Hartung-Knapp,
  Sidik-Jonkman or Kenward-Roger variance for the mean;
* ``pi_nnf`` -- parametric bootstrap that draws tau^2 from its exact
  confidence distribution and combines it with normal and ``t_{K-1}``
  draws.

``ci_wald`` gives the matching Wald-type t confidence intervals.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from . import qform
from .errors import DomainError, MonteCarloWarning, NumericalError
from .heterogeneity import HeterogeneityEstimate, q_statistic, tau2_dl, tau2_reml
from .model import StudySet, i_squared, pooled_mean, require_min_studies, weights
from .variance import var_approx, var_hk, var_kr, var_sj

ALPHA = 0.05
B_DEFAULT = 25000
BLOCK_SIZE = 1024
MIN_RELIABLE_B = 1000
KR_DF_MARGIN = 1e-12

PR_VARIANTS = ("APX", "HK", "SJ", "KR")
CI_VARIANTS = ("DL",) + PR_VARIANTS


@dataclass(frozen=True)
class IntervalResult:
    """Point estimate with prediction and/or confidence limits.

    Field names follow the conventional output list (``K``, ``muhat``,
    ``lpi``, ...).  Prediction fields are ``None`` for confidence-only
    results.
    """

    k: int
    muhat: float
    lpi: float | None
    upi: float | None
    lci: float
    uci: float
    nup: float | None
    nuc: float
    tau2h: float
    i2h: float
    method: str
    alpha: float = ALPHA
    tau2_method: str = "DL"
    var_method: str = "APX"
    converged: bool = True
    b_used: int | None = None
    seed: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        out = {"K": d.pop("k")}
        out.update(d)
        return out


@dataclass(frozen=True)
class BootstrapConfig:
    b: int = B_DEFAULT
    seed: int | None = None
    threads: int = 1
    maxit1: int = qform.MAXIT1
    eps: float = qform.EPS
    lower: float = qform.LOWER
    upper: float = qform.UPPER
    maxit2: int = qform.MAXIT2
    tol: float = qform.TOL
    rnd: np.ndarray | None = field(default=None, compare=False)
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        if int(self.b) != self.b or self.b <= 0:
            raise DomainError(f"B must be a positive integer (got {self.b})")
        if self.threads is None or self.threads is False:
            object.__setattr__(self, "threads", 1)
        if int(self.threads) < 1:
            raise DomainError("threads must be >= 1")
        if self.block_size < 1:
            raise DomainError("block_size must be >= 1")
        if self.rnd is not None:
            rnd = np.asarray(self.rnd, dtype=float).ravel()
            if rnd.size != self.b:
                raise DomainError(f"rnd must have exactly B={self.b} entries (got {rnd.size})")
            if np.any(~np.isfinite(rnd)) or np.any(rnd < 0):
                raise DomainError("rnd entries must be finite and >= 0")
            object.__setattr__(self, "rnd", rnd)


def t_quantile(p: float, df: float) -> float:
    """Quantile of Student's t with (possibly non-integer) ``df`` degrees of freedom."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1) (got {p})")
    if not df > 0:
        raise DomainError(f"df must be > 0 (got {df})")
    if p == 0.5:
        return 0.0
    if math.isinf(df):
        return float(special.ndtri(p))
    return float(special.stdtrit(df, p))


def percentile(samples, p: float) -> float:
    """Linear interpolation between order statistics at ``h = (n-1) p``.

    Same as numpy's default ``linear`` method (Hyndman-Fan type 7).
    """
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise DomainError("percentile of an empty sample")
    return float(np.quantile(x, p, method="linear"))


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1) (got {alpha})")


def _reml_fit(s: StudySet, variant: str, maxiter: int):
    if variant not in PR_VARIANTS:
        raise DomainError(f"unknown variance method {variant!r}; expected one of {PR_VARIANTS}")
    het = tau2_reml(s, maxiter=maxiter)
    w = weights(s, het.tau2)
    mu = pooled_mean(s, w)
    if variant == "APX":
        var = var_approx(s, w)
    elif variant == "HK":
        var = var_hk(s, w, mu)
    elif variant == "SJ":
        var = var_sj(s, w, mu, het.tau2)
    else:
        var = var_kr(s, w)
        # nu = K - 1 exactly under equal weights, so K = 3 sits on the boundary;
        # the relative margin keeps that case from depending on rounding
        if not var.kr_df > 2.0 * (1.0 + KR_DF_MARGIN):
            raise NumericalError(
                f"Kenward-Roger df nu = {var.kr_df:.4g} <= 2 leaves no usable t quantile for nu - 1; "
                "use another variance method"
            )
    return het, mu, var


def _wald(mu: float, var: float, df: float, alpha: float) -> tuple[float, float]:
    half = t_quantile(1.0 - alpha / 2.0, df) * math.sqrt(var)
    return mu - half, mu + half


def pi_hts(s: StudySet, alpha: float = ALPHA) -> IntervalResult:
    """Plug-in prediction interval with DL heterogeneity and ``t_{K-2}``."""
    require_min_studies(s)
    _check_alpha(alpha)
    het = tau2_dl(s)
    w = weights(s, het.tau2)
    mu = pooled_mean(s, w)
    var = var_approx(s, w).value
    lpi, upi = _wald(mu, het.tau2 + var, s.k - 2, alpha)
    lci, uci = _wald(mu, var, s.k - 1, alpha)
    return IntervalResult(
        s.k, mu, lpi, upi, lci, uci, s.k - 2, s.k - 1, het.tau2, i_squared(s, het.tau2),
        "HTS", alpha, "DL", "APX",
    )


def pi_pr(s: StudySet, variant: str = "HK", alpha: float = ALPHA, maxiter: int = 100) -> IntervalResult:
    """REML-based prediction interval with one of four variance estimators."""
    require_min_studies(s)
    _check_alpha(alpha)
    het, mu, var = _reml_fit(s, variant, maxiter)
    if variant == "KR":
        nup, nuc = var.kr_df - 1.0, var.kr_df
    else:
        nup, nuc = s.k - 2, s.k - 1
    lpi, upi = _wald(mu, het.tau2 + var.value, nup, alpha)
    lci, uci = _wald(mu, var.value, nuc, alpha)
    return IntervalResult(
        s.k, mu, lpi, upi, lci, uci, nup, nuc, het.tau2, i_squared(s, het.tau2),
        variant, alpha, "REML", variant, het.converged,
    )


def ci_wald(s: StudySet, variant: str = "DL", alpha: float = ALPHA, maxiter: int = 100) -> IntervalResult:
    """Wald-type t confidence interval for the mean.

    ``DL`` uses the DerSimonian-Laird tau^2 with the approximate variance;
    the other variants use REML with the named variance estimator.  The df
    is ``K - 1``, or ``nu`` for Kenward-Roger.
    """
    require_min_studies(s)
    _check_alpha(alpha)
    if variant == "DL":
        het = tau2_dl(s)
        w = weights(s, het.tau2)
        mu = pooled_mean(s, w)
        var = var_approx(s, w)
        tau2_method = "DL"
    elif variant in PR_VARIANTS:
        het, mu, var = _reml_fit(s, variant, maxiter)
        tau2_method = "REML"
    else:
        raise DomainError(f"unknown CI method {variant!r}; expected one of {CI_VARIANTS}")
    df = var.kr_df if variant == "KR" else s.k - 1
    lci, uci = _wald(mu, var.value, df, alpha)
    return IntervalResult(
        s.k, mu, None, None, lci, uci, None, df, het.tau2, i_squared(s, het.tau2),
        variant, alpha, tau2_method, var.method, het.converged,
    )


def block_generator(seed: int, block: int) -> np.random.Generator:
    """Independent PCG64 stream for bootstrap block ``block`` of run ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


def _bootstrap_block(s: StudySet, cfg: BootstrapConfig, seed: int, block: int, dist) -> tuple[np.ndarray, np.ndarray]:
    start = block * cfg.block_size
    n = min(cfg.block_size, cfg.b - start)
    # Three uniforms per replicate: tau^2, normal deviate, t deviate.
    u = qform.open_uniform(block_generator(seed, block), (3, n))
    if cfg.rnd is not None:
        tau2 = cfg.rnd[start:start + n]
    else:
        tau2 = dist.invert(u[0])
    z = special.ndtri(u[1])
    t = special.stdtrit(s.k - 1, u[2])
    w = 1.0 / (s.variances[None, :] + tau2[:, None])
    wsum = w.sum(axis=1)
    mu = (w * s.y[None, :]).sum(axis=1) / wsum
    var_hk = (w * (s.y[None, :] - mu[:, None]) ** 2).sum(axis=1) / (s.k - 1) / wsum
    spread = t * np.sqrt(var_hk)
    theta = mu + z * np.sqrt(tau2) - spread
    return theta, mu - spread


def bootstrap_samples(s: StudySet, cfg: BootstrapConfig) -> tuple[np.ndarray, np.ndarray, int]:
    """Bootstrap draws of the new-study effect and of the mean.

    Returns ``(theta_new, mu_ci, seed)``.  Replicates are split into blocks
    of ``cfg.block_size`` with one RNG stream per block, so results do not
    depend on ``cfg.threads``.
    """
    seed = cfg.seed if cfg.seed is not None else int(np.random.SeedSequence().entropy)
    dist = None
    if cfg.rnd is None:
        spec = qform.QFormSpec.from_studies(s)
        dist = qform.TauConfidenceDistribution(
            spec, q_statistic(s).q, lower=cfg.lower, upper=cfg.upper, tol=cfg.tol,
            eps=cfg.eps, maxit1=cfg.maxit1, maxit2=cfg.maxit2,
        )
    nblocks = -(-cfg.b // cfg.block_size)

    def run(block):
        return _bootstrap_block(s, cfg, seed, block, dist)

    if cfg.threads > 1 and nblocks > 1:
        with ThreadPoolExecutor(max_workers=int(cfg.threads)) as pool:
            parts = list(pool.map(run, range(nblocks)))
    else:
        parts = [run(i) for i in range(nblocks)]
    theta = np.concatenate([p[0] for p in parts])
    mu_ci = np.concatenate([p[1] for p in parts])
    return theta, mu_ci, seed


def pi_nnf(s: StudySet, cfg: BootstrapConfig | None = None, alpha: float = ALPHA) -> IntervalResult:
    """Parametric-bootstrap prediction and confidence intervals.

    Each replicate draws ``tau2_b`` from the exact confidence distribution
    of the untruncated DL statistic (or takes ``cfg.rnd[b]``), ``z_b`` from
    N(0, 1) and ``t_b`` from ``t(K-1)``; the PI is formed from percentiles of
    ``mu_b + z_b tau_b - t_b sqrt(VarHK_b)`` and the CI from percentiles of
    ``mu_b - t_b sqrt(VarHK_b)``.  The reported centre, tau^2 and I^2 are the
    DerSimonian-Laird ones.
    """
    cfg = cfg or BootstrapConfig()
    require_min_studies(s)
    _check_alpha(alpha)
    if cfg.b < MIN_RELIABLE_B:
        warnings.warn(
            f"B={cfg.b} bootstrap samples gives noticeable Monte Carlo error in the limits",
            MonteCarloWarning,
            stacklevel=2,
        )
    theta, mu_ci, seed = bootstrap_samples(s, cfg)
    het: HeterogeneityEstimate = tau2_dl(s)
    mu = pooled_mean(s, weights(s, het.tau2))
    lo, hi = alpha / 2.0, 1.0 - alpha / 2.0
    return IntervalResult(
        s.k, mu,
        percentile(theta, lo), percentile(theta, hi),
        percentile(mu_ci, lo), percentile(mu_ci, hi),
        s.k - 1, s.k - 1, het.tau2, i_squared(s, het.tau2),
        "boot", alpha, "DL", "HK", True, int(cfg.b), seed,
    )


def interval(s: StudySet, method: str = "boot", alpha: float = ALPHA, cfg: BootstrapConfig | None = None,
             maxiter: int = 100) -> IntervalResult:
    """Prediction interval by method tag: ``boot``, ``HTS``, ``APX``, ``HK``, ``SJ`` or ``KR``."""
    if method == "boot":
        return pi_nnf(s, cfg, alpha)
    if method == "HTS":
        return pi_hts(s, alpha)
    if method in PR_VARIANTS:
        return pi_pr(s, method, alpha, maxiter)
    raise DomainError(f"unknown prediction method {method!r}")


def confidence_interval(s: StudySet, method: str = "boot", alpha: float = ALPHA,
                        cfg: BootstrapConfig | None = None, maxiter: int = 100) -> IntervalResult:
    """Confidence interval by method tag: ``boot`` or one of ``DL``/``APX``/``HK``/``SJ``/``KR``."""
    if method == "boot":
        r = pi_nnf(s, cfg, alpha)
        return IntervalResult(
            r.k, r.muhat, None, None, r.lci, r.uci, None, r.nuc, r.tau2h, r.i2h,
            "boot", alpha, r.tau2_method, r.var_method, True, r.b_used, r.seed,
        )
    return ci_wald(s, method, alpha, maxiter)


__all__ = [
    "BootstrapConfig",
    "IntervalResult",
    "bootstrap_samples",
    "ci_wald",
    "confidence_interval",
    "interval",
    "percentile",
    "pi_hts",
    "pi_nnf",
    "pi_pr",
    "t_quantile",
]
