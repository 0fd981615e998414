"""Exact distribution of Cochran's Q and the confidence distribution of tau^2.

Under the random-effects model Q is a quadratic form in normal variables and
is distributed as ``sum_k lambda_k * chi2_k(1)`` where ``lambda_k`` are the
eigenvalues of ``S = Sigma^{1/2} A Sigma^{1/2}``, ``A = V - v v^T / v_+`` and
``Sigma = diag(sigma_k^2 + tau^2)``.  ``S`` always has one exact zero
eigenvalue (the constant direction is annihilated by ``A``).

The CDF is evaluated with Ruben's expansion as a mixture of central
chi-square distributions,

    F(q) = sum_j a_j * P(chi2_{m + 2j} < q / beta),    beta = min lambda,

whose coefficients are nonnegative and sum to one.  Because the chi-square
probabilities decrease in ``j`` the truncation error after ``n`` terms is
bounded by ``(1 - sum_{j<=n} a_j) * P(chi2_{m+2n} < q/beta)``, which gives
a cheap, rigorous stopping rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import DomainError, NumericalError, RangeError
from .model import StudySet

try:
    from numba import njit
except ImportError:  # pragma: no cover - pure Python fallback

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f


EPS = 1e-10
MAXIT1 = 10000
MAXIT2 = 1000
LOWER = 0.0
UPPER = 1000.0
TOL = float(np.finfo(float).eps) ** 0.25
# Eigenvalues in [-EIG_CLAMP * scale, 0) are rounding noise and set to zero.
EIG_CLAMP = 1e-8


@dataclass(frozen=True, eq=False)
class QFormSpec:
    sigma2: np.ndarray
    v: np.ndarray
    a_matrix: np.ndarray

    @classmethod
    def from_studies(cls, s: StudySet) -> "QFormSpec":
        sigma2 = np.array(s.variances)
        v = 1.0 / sigma2
        a = np.diag(v) - np.outer(v, v) / v.sum()
        a = 0.5 * (a + a.T)
        return cls(sigma2, v, a)

    @property
    def k(self) -> int:
        return int(self.v.size)

    def s_matrix(self, tau2: float) -> np.ndarray:
        root = np.sqrt(self.sigma2 + tau2)
        return root[:, None] * self.a_matrix * root[None, :]


@dataclass(frozen=True, eq=False)
class QSpectrum:
    tau2: float
    lam: np.ndarray  # sorted descending, nonnegative

    @property
    def positive(self) -> np.ndarray:
        """Strictly positive eigenvalues in ascending order."""
        lam = self.lam[self.lam > 0]
        return np.ascontiguousarray(lam[::-1])


def _clean_eigenvalues(lam: np.ndarray) -> np.ndarray:
    """Sort rows ascending, zero the structural null eigenvalue, check PSD."""
    lam = np.sort(lam, axis=-1)
    scale = np.maximum(1.0, lam[..., -1])
    if np.any(lam[..., 0] < -EIG_CLAMP * scale) or np.any(np.abs(lam[..., 0]) > EIG_CLAMP * scale):
        worst = float(np.max(np.abs(lam[..., 0]) / scale))
        raise NumericalError(f"S is not positive semidefinite of rank K-1 (smallest |eigenvalue| {worst:.3g})")
    lam = lam.copy()
    lam[..., 0] = 0.0
    if np.any(lam[..., 1:] <= 0):
        raise NumericalError("S has more than one null eigenvalue; check the within-study variances")
    return lam


def spectrum(spec: QFormSpec, tau2: float) -> QSpectrum:
    """Eigenvalues of ``Sigma^{1/2} A Sigma^{1/2}`` at heterogeneity ``tau2``."""
    if not np.isfinite(tau2) or tau2 < 0:
        raise DomainError(f"tau2 must be finite and >= 0 (got {tau2})")
    try:
        lam = np.linalg.eigvalsh(spec.s_matrix(tau2))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed at tau2={tau2}: {exc}") from exc
    lam = _clean_eigenvalues(lam)
    return QSpectrum(float(tau2), lam[::-1].copy())


def _spectra(spec: QFormSpec, tau2: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues for a batch of tau^2 values, shape (n, K)."""
    root = np.sqrt(spec.sigma2[None, :] + tau2[:, None])
    mats = root[:, :, None] * spec.a_matrix[None, :, :] * root[:, None, :]
    try:
        lam = np.linalg.eigvalsh(mats)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    return _clean_eigenvalues(lam)


@njit(cache=True, nogil=True)
def _ruben_cdf(lam, q, eps, maxit):
    # lam: strictly positive weights, ascending.  Returns (F, bound, terms);
    # terms == -1 signals that the bound was not met.
    m = lam.shape[0]
    beta = lam[0]
    gam = 1.0 - beta / lam
    loga0 = 0.0
    for i in range(m):
        loga0 += 0.5 * math.log(beta / lam[i])
    if loga0 < -700.0:  # leading coefficient underflows; the series is useless here
        return 0.0, 1.0, -1
    half = 0.5 * q / beta
    loghalf = math.log(half)

    # P(chi2_nu < x) and the density term half^{nu/2} e^{-half} / Gamma(nu/2 + 1).
    # The density term is kept in logs: for large x it underflows at small nu
    # and must come back once nu/2 approaches x/2.
    if m % 2 == 1:
        p = math.erf(math.sqrt(half))
        logt = 0.5 * loghalf - half - math.lgamma(1.5)
        nu = 1
    else:
        p = -math.expm1(-half)
        logt = loghalf - half
        nu = 2
    while nu < m:
        p -= math.exp(logt)
        logt += loghalf - math.log(0.5 * nu + 1.0)
        nu += 2
    if p < 0.0:
        p = 0.0

    a = np.empty(maxit + 1)
    g = np.empty(maxit + 1)
    gp = np.ones(m)
    a[0] = math.exp(loga0)
    total = a[0] * p
    asum = a[0]
    bound = max(0.0, 1.0 - asum) * p
    if bound < eps:
        return total, bound, 0
    for k in range(1, maxit + 1):
        gs = 0.0
        for i in range(m):
            gp[i] *= gam[i]
            gs += gp[i]
        g[k] = 0.5 * gs
        acc = 0.0
        for r in range(k):
            acc += g[k - r] * a[r]
        a[k] = acc / k
        p -= math.exp(logt)
        logt += loghalf - math.log(0.5 * nu + 1.0)
        nu += 2
        if p < 0.0:
            p = 0.0
        total += a[k] * p
        asum += a[k]
        bound = max(0.0, 1.0 - asum) * p
        if bound < eps:
            return total, bound, k
    return total, bound, -1


@njit(cache=True, nogil=True)
def _imhof_terms(u, lam):
    # Phase sum(atan(lam u)) / 2 and modulus prod(1 + lam^2 u^2)^(1/4) of
    # the characteristic function of sum lam_k chi2_k(1) at u / 2.
    phi = 0.0
    logrho = 0.0
    for x in lam:
        phi += math.atan(x * u)
        logrho += math.log1p((x * u) ** 2)
    return 0.5 * phi, math.exp(0.25 * logrho)


@njit(cache=True, nogil=True)
def _imhof_head(u, lam, q):
    if u == 0.0:
        return 0.5 * (lam.sum() - q)
    phi, rho = _imhof_terms(u, lam)
    return math.sin(phi - 0.5 * q * u) / (u * rho)


@njit(cache=True, nogil=True)
def _imhof_amp_sin(u, lam):
    phi, rho = _imhof_terms(u, lam)
    return math.sin(phi) / (u * rho)


@njit(cache=True, nogil=True)
def _imhof_amp_cos(u, lam):
    phi, rho = _imhof_terms(u, lam)
    return math.cos(phi) / (u * rho)


# Direct integration up to the truncation point is used while it spans at
# most this many oscillation periods; beyond that the Fourier integrator takes over.
IMHOF_DIRECT_CYCLES = 2000.0
# Each adaptive call in the direct region covers at most this many periods;
# QUADPACK's extrapolated error estimate is unreliable over long oscillatory spans.
IMHOF_CHUNK_CYCLES = 25.0


def _imhof_truncation(lam: np.ndarray, err: float) -> float:
    """Upper limit U with Imhof's tail bound 2 / (pi n U^(n/2) prod sqrt(lam)) <= err."""
    n = lam.size
    log_u = (math.log(2.0 / (math.pi * n * err)) - 0.5 * float(np.sum(np.log(lam)))) * 2.0 / n
    return math.exp(min(log_u, 700.0))


def _imhof_cdf(lam: np.ndarray, q: float, eps: float, limit: int) -> tuple[float, float]:
    """Imhof's inversion integral; returns ``(F, estimated abs error)``.

    The integrand ``sin(phi(u) - q u / 2) / (u rho(u))`` is integrated
    directly, in short chunks, over its first ``IMHOF_DIRECT_CYCLES`` periods
    of ``q u / 2`` (or up to the truncation point, if that comes first, adding Imhof's
    truncation bound to the error).  What remains is a half-line on which the
    amplitude varies slowly compared with the carrier; there
    ``sin(phi - q u / 2)`` is expanded into cos/sin carriers and passed to
    QUADPACK's Fourier integrator.
    """
    tol = eps * math.pi / 4.0
    omega = 0.5 * q
    upper = _imhof_truncation(lam, tol / 2) if lam.size >= 2 else math.inf
    direct_end = min(upper, 2.0 * math.pi * IMHOF_DIRECT_CYCLES / omega)
    chunk = 2.0 * math.pi * IMHOF_CHUNK_CYCLES / omega
    breaks = sorted({0.0, *(x for x in (1.0 / lam[-1], 1.0 / lam[0]) if x < direct_end), direct_end,
                     *np.arange(1.0, math.ceil(direct_end / chunk)) * chunk})
    pieces = [integrate.quad(_imhof_head, lo, hi, args=(lam, q), epsabs=tol / (2 * len(breaks)), epsrel=0.0,
                             limit=limit, full_output=1)
              for lo, hi in zip(breaks, breaks[1:])]
    total = sum(r[0] for r in pieces)
    err = sum(r[1] for r in pieces)
    flagged = any(len(r) > 3 for r in pieces)  # QUADPACK reported a problem
    if direct_end < upper:
        tail_c = integrate.quad(_imhof_amp_sin, direct_end, np.inf, args=(lam,), weight="cos", wvar=omega,
                                epsabs=tol / 4, limlst=200, limit=limit, full_output=1)
        tail_s = integrate.quad(_imhof_amp_cos, direct_end, np.inf, args=(lam,), weight="sin", wvar=omega,
                                epsabs=tol / 4, limlst=200, limit=limit, full_output=1)
        total += tail_c[0] - tail_s[0]
        err += tail_c[1] + tail_s[1]
        flagged = flagged or len(tail_c) > 3 or len(tail_s) > 3
    else:
        n = lam.size
        err += 2.0 / (n * upper ** (0.5 * n) * math.exp(0.5 * float(np.sum(np.log(lam)))))
    err /= math.pi
    if flagged:
        err = 10.0 * err if np.isfinite(err) else math.inf
    value = 0.5 - total / math.pi
    if not -eps <= value <= 1.0 + eps:
        err = math.inf
    return value, err


def _ruben_terms_needed(lam: np.ndarray, q: float, eps: float, cap: int) -> float:
    """Upper estimate of the series terms needed for accuracy ``eps``.

    The truncation bound after ``k`` terms is at most both
    ``(1 - lam_min/lam_max)^k`` (roughly) and ``P(chi2_{m+2k} < q/lam_min)``;
    the smaller of the two term counts is returned.
    """
    ratio = lam[0] / lam[-1]
    if ratio >= 1.0:
        return 0.0
    geometric = math.log(eps) / math.log1p(-ratio)
    half_m, x = 0.5 * lam.size, 0.5 * q / lam[0]
    if special.gammainc(half_m + cap, x) >= eps:
        return geometric
    lo, hi = -1, cap
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if special.gammainc(half_m + mid, x) < eps:
            hi = mid
        else:
            lo = mid
    return min(geometric, float(hi))


def _cdf_positive(lam: np.ndarray, q: float, eps: float, maxit1: int) -> float:
    """CDF for strictly positive ascending weights ``lam``.

    Ruben's series is used whenever it can meet ``eps`` within ``maxit1``
    terms (its truncation bound is rigorous).  Widely spread weights make
    the series crawl; those cases go to Imhof's integral instead, with
    ``maxit1`` capping the number of quadrature subintervals.
    """
    if q <= 0.0:
        return 0.0
    if lam.size == 0:
        return 1.0
    q = float(q)
    if _ruben_terms_needed(lam, q, eps, int(maxit1)) <= maxit1:
        value, bound, terms = _ruben_cdf(lam, q, float(eps), int(maxit1))
        if terms >= 0:
            return min(1.0, max(0.0, value))
    value, err = _imhof_cdf(lam, q, eps, int(maxit1))
    if not err <= eps:
        raise NumericalError(
            f"F_Q accuracy eps={eps:g} not reached within maxit1={maxit1} series terms or "
            f"quadrature subintervals (achieved {err:.3g}); increase maxit1 or eps"
        )
    return min(1.0, max(0.0, value))


def q_cdf(spec: QSpectrum, q: float, eps: float = EPS, maxit1: int = MAXIT1) -> float:
    """``Pr(sum lambda_k chi2_k(1) <= q)`` with absolute error at most ``eps``."""
    if not eps > 0:
        raise DomainError("eps must be > 0")
    if maxit1 < 1:
        raise DomainError("maxit1 must be >= 1")
    if np.isnan(q):
        raise DomainError("q must not be NaN")
    if q == np.inf:
        return 1.0
    return _cdf_positive(spec.positive, q, eps, maxit1)


def h_function(spec: QFormSpec, q_obs: float, tau2: float, eps: float = EPS, maxit1: int = MAXIT1) -> float:
    """Confidence distribution of tau^2: ``H(tau2) = 1 - F_Q(q_obs; tau2)``."""
    return 1.0 - q_cdf(spectrum(spec, tau2), q_obs, eps, maxit1)


class TauConfidenceDistribution:
    """Inverse-transform sampler for the confidence distribution of tau^2.

    Inversion is bisection on the fixed dyadic grid of ``[lower, upper]``,
    refined until the bracket is no wider than ``tol``, then linear
    interpolation inside the final bracket.  Every draw follows exactly
    the path standalone bisection would take, so memoising H at grid nodes
    changes cost but never results.  Instances may be shared by threads.
    """

    def __init__(
        self,
        spec: QFormSpec,
        q_obs: float,
        *,
        lower: float = LOWER,
        upper: float = UPPER,
        tol: float = TOL,
        eps: float = EPS,
        maxit1: int = MAXIT1,
        maxit2: int = MAXIT2,
    ):
        if not (lower >= 0 and upper > lower):
            raise DomainError(f"need 0 <= lower < upper (got lower={lower}, upper={upper})")
        if not tol > 0:
            raise DomainError("tol must be > 0")
        if not eps > 0 or maxit1 < 1:
            raise DomainError("eps must be > 0 and maxit1 >= 1")
        if maxit2 < 1:
            raise DomainError("maxit2 must be >= 1")
        self.spec = spec
        self.q_obs = float(q_obs)
        self.lower = float(lower)
        self.upper = float(upper)
        self.tol = float(tol)
        self.eps = float(eps)
        self.maxit1 = int(maxit1)
        self.depth = max(0, math.ceil(math.log2((self.upper - self.lower) / self.tol)))
        if self.depth > maxit2:
            raise NumericalError(
                f"bisection needs {self.depth} steps to reach tol={tol:g}, more than maxit2={maxit2}"
            )
        if self.depth > 60:
            raise DomainError("tol is too small relative to upper - lower")
        self._n = 1 << self.depth
        self._cache: dict[int, float] = {}

    @property
    def evaluations(self) -> int:
        return len(self._cache)

    def node_tau2(self, j):
        return self.lower + (self.upper - self.lower) * (np.asarray(j, dtype=float) / self._n)

    def h(self, tau2: float) -> float:
        return h_function(self.spec, self.q_obs, tau2, self.eps, self.maxit1)

    def _h_nodes(self, nodes: np.ndarray) -> np.ndarray:
        cache = self._cache
        missing = np.array(sorted({int(j) for j in np.unique(nodes)} - cache.keys()), dtype=np.int64)
        if missing.size:
            lam = _spectra(self.spec, self.node_tau2(missing))
            vals = [1.0 - _cdf_positive(row[1:], self.q_obs, self.eps, self.maxit1) for row in lam]
            cache.update(zip(missing.tolist(), vals))
        return np.array([cache[int(j)] for j in nodes])

    def invert(self, u) -> np.ndarray:
        """Return ``H^{-1}(u)`` for each ``u`` (0 where ``u < H(lower)``)."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any(~((u > 0) & (u < 1))):
            raise DomainError("u must lie strictly inside (0, 1)")
        h_lo, h_hi = self._h_nodes(np.array([0, self._n], dtype=np.int64))
        out = np.zeros_like(u)
        active = np.flatnonzero(u >= h_lo)
        if active.size == 0:
            return out
        ua = u[active]
        if np.any(ua > h_hi):
            raise RangeError(
                f"u={ua.max():.6g} exceeds H(upper={self.upper:g})={h_hi:.6g}; "
                "the root is not bracketed, increase `upper`"
            )
        lo = np.zeros(ua.size, dtype=np.int64)
        hi = np.full(ua.size, self._n, dtype=np.int64)
        for _ in range(self.depth):
            mid = (lo + hi) // 2
            right = self._h_nodes(mid) < ua
            lo = np.where(right, mid, lo)
            hi = np.where(right, hi, mid)
        hl = self._h_nodes(lo)
        hh = self._h_nodes(hi)
        tl = self.node_tau2(lo)
        th = self.node_tau2(hi)
        span = hh - hl
        frac = np.divide(ua - hl, span, out=np.full_like(ua, 0.5), where=span > 0)
        out[active] = tl + np.clip(frac, 0.0, 1.0) * (th - tl)
        return out


def h_inverse(
    spec: QFormSpec,
    q_obs: float,
    u: float,
    lower: float = LOWER,
    upper: float = UPPER,
    maxit2: int = MAXIT2,
    tol: float = TOL,
    eps: float = EPS,
    maxit1: int = MAXIT1,
) -> float:
    """Solve ``H(tau2) = u`` by bisection; returns 0 when ``H(lower) > u``."""
    dist = TauConfidenceDistribution(
        spec, q_obs, lower=lower, upper=upper, tol=tol, eps=eps, maxit1=maxit1, maxit2=maxit2
    )
    return float(dist.invert([u])[0])


def sample_tau2(spec: QFormSpec, q_obs: float, rng: np.random.Generator, size=None, **kwargs):
    """Draw from the confidence distribution of tau^2 by inverse transform.

    ``rng`` is advanced by one uniform per draw.  Extra keyword arguments
    are forwarded to :class:`TauConfidenceDistribution`.
    """
    dist = TauConfidenceDistribution(spec, q_obs, **kwargs)
    n = 1 if size is None else int(size)
    u = open_uniform(rng, n)
    draws = dist.invert(u)
    return float(draws[0]) if size is None else draws


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    # rng.random() lies on the 2^-53 grid in [0, 1); a half-step shift makes it (0, 1).
    return rng.random(size) + 2.0**-54
