"""Depth distributions and parameter transforms.

The depth prior/posterior family: a normal distribution truncated to the
positive reals and integrated over unit cells [L, L+1] gives a discrete law
over layer counts whose mean and variance move independently; quantile
truncation makes its support finite.  A quantile-truncated Poisson serves as
the baseline.  All functions here are pure; cell masses are computed from
survival-function differences so both tails stay accurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

PMF_FLOOR = 1e-300  # clamp before logs so -inf never enters a gradient
_TAIL_EPS = 1e-13  # tail mass ignored when a quantile bound is 0 or 1
_BISECT_TOL = 1e-10


class ParameterError(ValueError):
    """Invalid distribution parameters."""


class EvaluationError(ValueError):
    """A quantity required by the computation is degenerate (e.g. zero prior mass)."""


@dataclass(frozen=True)
class TruncNormalDepth:
    """Discrete law over depth from a normal truncated to [0, inf).

    mu/sigma locate the underlying normal; lower_q/upper_q quantile-truncate
    the continuous distribution before it is discretized over unit cells.
    (0, 1) quantiles mean no truncation beyond the positivity constraint.
    """

    mu: float
    sigma: float
    lower_q: float = 0.0
    upper_q: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise ParameterError("mu and sigma must be finite")
        if self.sigma <= 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if not (0.0 <= self.lower_q < self.upper_q <= 1.0):
            raise ParameterError(
                f"quantiles must satisfy 0 <= lower < upper <= 1, got ({self.lower_q}, {self.upper_q})"
            )


@dataclass(frozen=True)
class PoissonDepth:
    """Poisson law over depth, quantile-truncated from above (upper_q=1: untruncated)."""

    rate: float
    upper_q: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.rate) or self.rate <= 0:
            raise ParameterError(f"rate must be positive, got {self.rate}")
        if not (0.0 < self.upper_q <= 1.0):
            raise ParameterError(f"upper_q must be in (0, 1], got {self.upper_q}")


@dataclass
class DepthPMF:
    """Finite pmf over a contiguous non-negative integer depth range."""

    l_min: int
    l_max: int
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.l_min < 0 or self.l_max < self.l_min:
            raise ParameterError(f"bad support [{self.l_min}, {self.l_max}]")
        if len(self.probs) != self.l_max - self.l_min + 1:
            raise ParameterError("probs length does not match support")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-9:
            raise ParameterError("probs must be non-negative and sum to 1")

    @property
    def support(self) -> range:
        return range(self.l_min, self.l_max + 1)

    def prob(self, l: int) -> float:
        if self.l_min <= l <= self.l_max:
            return float(self.probs[l - self.l_min])
        return 0.0

    def mean(self) -> float:
        ls = np.arange(self.l_min, self.l_max + 1)
        return float(np.dot(ls, self.probs))

    def std(self) -> float:
        ls = np.arange(self.l_min, self.l_max + 1)
        m = self.mean()
        return float(math.sqrt(max(np.dot((ls - m) ** 2, self.probs), 0.0)))


@dataclass(frozen=True)
class GaussianPair:
    """A scalar Gaussian variational posterior q and its prior p."""

    q_mean: float
    q_std: float
    p_mean: float
    p_std: float

    def __post_init__(self):
        if self.q_std <= 0 or self.p_std <= 0:
            raise ParameterError("standard deviations must be positive")


# ---------------------------------------------------------------------------
# scalar transforms


def std_normal_cdf(x: float) -> float:
    """Phi(x) via erfc, accurate to well below 1e-12 everywhere."""
    if not math.isfinite(x):
        raise ParameterError(f"non-finite input to std_normal_cdf: {x}")
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _std_normal_sf(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def softplus(x: float) -> float:
    """ln(1 + e^x) without overflow or underflow-to-zero."""
    return float(np.logaddexp(0.0, x))


def softplus_inverse(y: float) -> float:
    """x such that softplus(x) = y; requires y > 0."""
    if not y > 0:
        raise ParameterError(f"softplus_inverse requires positive input, got {y}")
    if y > 30:
        return float(y)  # softplus is the identity to double precision here
    return float(math.log(math.expm1(y)))


def gaussian_kl(g: GaussianPair) -> float:
    """KL[N(q_mean, q_std^2) || N(p_mean, p_std^2)] in nats."""
    var_ratio = (g.q_std / g.p_std) ** 2
    mean_term = ((g.q_mean - g.p_mean) / g.p_std) ** 2
    return 0.5 * (var_ratio + mean_term - 1.0) - math.log(g.q_std / g.p_std)


# ---------------------------------------------------------------------------
# truncated normal machinery (generic over floats / Tensors where noted)


def trunc_normal_cell_masses(mu, sigma, ls):
    """Masses of N(mu, sigma^2) over the unit cells [l, l+1] for each l in ls.

    Works for float mu/sigma with an int array ls, and for autodiff Tensors.
    These are *unnormalized* (the positivity truncation is not divided out).
    """
    ls = np.asarray(ls, dtype=np.float64)
    lo = (ls - mu) / sigma
    hi = ((ls + 1.0) - mu) / sigma
    return ad.normal_sf(lo) - ad.normal_sf(hi)


def _positive_mass(mu: float, sigma: float) -> float:
    """P(X >= 0) for X ~ N(mu, sigma^2)."""
    return _std_normal_sf((0.0 - mu) / sigma)


def _trunc_normal_cont_cdf(x: float, mu: float, sigma: float) -> float:
    """CDF at x of the normal truncated to [0, inf)."""
    if x <= 0.0:
        return 0.0
    z0 = _positive_mass(mu, sigma)
    if z0 <= 0.0:
        raise EvaluationError("no mass on the positive half-line")
    return 1.0 - _std_normal_sf((x - mu) / sigma) / z0


def _trunc_normal_quantile(q: float, mu: float, sigma: float) -> float:
    """Inverse of the continuous truncated-normal CDF by bisection."""
    if q <= 0.0:
        return 0.0
    if q >= 1.0:
        q = 1.0 - _TAIL_EPS
    lo = 0.0
    hi = max(1.0, mu + 10.0 * sigma)
    while _trunc_normal_cont_cdf(hi, mu, sigma) < q:
        hi *= 2.0
        if hi > 1e12:
            raise EvaluationError("quantile search diverged")
    while hi - lo > _BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if _trunc_normal_cont_cdf(mid, mu, sigma) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def poisson_log_pmf(rate: float, l: int) -> float:
    """log pmf of the untruncated Poisson, via log-gamma."""
    return -rate + l * math.log(rate) - math.lgamma(l + 1)


def poisson_cell_weights(rate, ls):
    """Unnormalized Poisson weights rate^l / l! (generic over floats/Tensors).

    The e^{-rate} factor cancels under renormalization and is omitted.
    """
    ls = np.asarray(ls, dtype=np.float64)
    lgam = np.array([math.lgamma(v + 1.0) for v in ls])
    return ad.exp(ls * ad.log(rate) - lgam)


# ---------------------------------------------------------------------------
# support and pmf


def depth_support(d) -> range:
    """Integer support after quantile truncation; never empty.

    Truncated normal: the cells [L, L+1] overlapping the continuous quantile
    interval.  Poisson: {0..K} with K the smallest integer whose CDF reaches
    upper_q.
    """
    if isinstance(d, TruncNormalDepth):
        x_l = _trunc_normal_quantile(d.lower_q, d.mu, d.sigma)
        x_u = _trunc_normal_quantile(d.upper_q, d.mu, d.sigma)
        l_min = max(0, math.floor(x_l))
        l_max = math.floor(x_u)
        if l_max == x_u and l_max > l_min:
            l_max -= 1  # the cell starting exactly at x_u has zero overlap
        l_max = max(l_max, l_min)
        return range(l_min, l_max + 1)
    if isinstance(d, PoissonDepth):
        target = d.upper_q if d.upper_q < 1.0 else 1.0 - _TAIL_EPS
        cdf = 0.0
        k = 0
        while True:
            cdf += math.exp(poisson_log_pmf(d.rate, k))
            if cdf >= target:
                return range(0, k + 1)
            k += 1
            if k > 100000:
                raise EvaluationError("Poisson support search diverged")
    raise ParameterError(f"unsupported distribution type: {type(d).__name__}")


def trunc_normal_depth_pmf(d: TruncNormalDepth, L: int) -> float:
    """pmf at integer depth L; zero outside the quantile support."""
    if L < 0:
        raise ParameterError(f"depth must be non-negative, got {L}")
    full = d.lower_q == 0.0 and d.upper_q == 1.0
    if full:
        z = _positive_mass(d.mu, d.sigma)
        if z <= 0.0:
            raise EvaluationError("no mass on the positive half-line")
        return float(trunc_normal_cell_masses(d.mu, d.sigma, [L])[0]) / z
    support = depth_support(d)
    if L not in support:
        return 0.0
    cells = trunc_normal_cell_masses(d.mu, d.sigma, np.arange(support.start, support.stop))
    return float(cells[L - support.start] / cells.sum())


def depth_pmf(d, l_max: int | None = None) -> DepthPMF:
    """Renormalized pmf over the (possibly overridden) finite support."""
    support = depth_support(d)
    hi = support.stop - 1 if l_max is None else l_max
    lo = min(support.start, hi)
    ls = np.arange(lo, hi + 1)
    if isinstance(d, TruncNormalDepth):
        weights = trunc_normal_cell_masses(d.mu, d.sigma, ls)
    elif isinstance(d, PoissonDepth):
        weights = poisson_cell_weights(d.rate, ls)
    else:
        raise ParameterError(f"unsupported distribution type: {type(d).__name__}")
    weights = np.maximum(weights, 0.0)
    total = weights.sum()
    if total <= 0.0:
        raise EvaluationError("no probability mass on the requested support")
    return DepthPMF(int(ls[0]), int(ls[-1]), weights / total)


def untruncated_log_pmf(d, L: int) -> float:
    """log pmf of the distribution's natural (quantile-free) discrete law.

    For the truncated normal this keeps the positivity truncation (its natural
    support is all of N_0) but ignores lower_q/upper_q; for the Poisson it is
    the plain pmf.
    """
    if L < 0:
        raise ParameterError(f"depth must be non-negative, got {L}")
    if isinstance(d, TruncNormalDepth):
        cell = float(trunc_normal_cell_masses(d.mu, d.sigma, [L])[0])
        z = _positive_mass(d.mu, d.sigma)
        if cell <= 0.0 or z <= 0.0:
            raise EvaluationError(f"prior mass underflows at L={L}")
        return math.log(cell) - math.log(z)
    if isinstance(d, PoissonDepth):
        return poisson_log_pmf(d.rate, L)
    raise ParameterError(f"unsupported distribution type: {type(d).__name__}")


def depth_kl(q: DepthPMF, prior) -> float:
    """sum_l q(l) ln(q(l)/p(l)) against the prior's natural (untruncated) pmf."""
    total = 0.0
    for l, ql in zip(q.support, q.probs):
        if ql == 0.0:
            continue
        lp = untruncated_log_pmf(prior, l)
        total += ql * (math.log(ql) - lp)
    return total
