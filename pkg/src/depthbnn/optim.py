"""Variational parameter storage, the Adam optimizer, and gradient checking.

Strictly positive quantities (weight stds, the depth sigma, the Poisson rate)
are stored through the softplus transform so the optimizer works on an
unconstrained vector.  All gradients are reverse-mode, with noise draws held
fixed (pathwise estimator); finite_diff_check verifies them under common
random numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import dist
from .tape import RandomTape


class GradientError(RuntimeError):
    """A non-finite gradient was encountered; the step was rejected."""


class GaussianVariational:
    """Array of independent Gaussian posteriors with a shared scalar prior.

    Holds the unconstrained parameters (mean, rho) with std = softplus(rho),
    so the std stays positive under any optimizer step.
    """

    def __init__(self, shape, init_tape: RandomTape, init_scale: float,
                 init_std: float, prior_mean: float, prior_std: float):
        self.mean = ad.parameter(init_tape.uniform(shape, -init_scale, init_scale))
        self.rho = ad.parameter(np.full(shape, dist.softplus_inverse(init_std)))
        self.prior_mean = prior_mean
        self.prior_std = prior_std

    def std(self) -> ad.Tensor:
        # the floor keeps the std positive even where softplus underflows
        return ad.clamp_min(ad.softplus(self.rho), dist.PMF_FLOOR)

    def kl(self) -> ad.Tensor:
        """Closed-form KL to the prior, summed over the array."""
        s = self.std()
        var_term = (s * s + (self.mean - self.prior_mean) ** 2) * (0.5 / self.prior_std**2)
        log_term = math.log(self.prior_std) - ad.log(s)
        return ad.tsum(log_term + var_term - 0.5)

    @property
    def size(self) -> int:
        return self.mean.data.size


class DepthPosterior:
    """Trainable variational distribution over the network depth."""

    def __init__(self, kind: str, *, mu: float = 0.0, sigma: float = 1.8,
                 lower_q: float = 0.025, upper_q: float = 0.975,
                 rate: float = 1.0, rate_upper_q: float = 0.95):
        self.kind = kind
        if kind == "trunc_normal":
            self.mu = ad.parameter(mu)
            self.sigma_rho = ad.parameter(dist.softplus_inverse(sigma))
            self.lower_q = lower_q
            self.upper_q = upper_q
        elif kind == "poisson":
            self.rate_rho = ad.parameter(dist.softplus_inverse(rate))
            self.upper_q = rate_upper_q
        else:
            raise ValueError(f"unknown depth posterior kind: {kind}")

    def snapshot(self):
        """Current parameters as an immutable distribution value."""
        if self.kind == "trunc_normal":
            return dist.TruncNormalDepth(
                mu=self.mu.item(),
                sigma=max(dist.softplus(self.sigma_rho.item()), dist.PMF_FLOOR),
                lower_q=self.lower_q,
                upper_q=self.upper_q,
            )
        rate = max(dist.softplus(self.rate_rho.item()), dist.PMF_FLOOR)
        return dist.PoissonDepth(rate=rate, upper_q=self.upper_q)

    def support(self) -> range:
        return dist.depth_support(self.snapshot())

    def pmf(self) -> dist.DepthPMF:
        return dist.depth_pmf(self.snapshot())

    def weights_on(self, support: range) -> ad.Tensor:
        """Differentiable pmf over a frozen support, renormalized to sum to 1."""
        ls = np.arange(support.start, support.stop)
        if self.kind == "trunc_normal":
            sigma = ad.clamp_min(ad.softplus(self.sigma_rho), dist.PMF_FLOOR)
            cells = dist.trunc_normal_cell_masses(self.mu, sigma, ls)
        else:
            rate = ad.clamp_min(ad.softplus(self.rate_rho), dist.PMF_FLOOR)
            cells = dist.poisson_cell_weights(rate, ls)
        cells = ad.clamp_min(cells, dist.PMF_FLOOR)
        return cells / ad.tsum(cells)

    def named_params(self) -> list[tuple[str, ad.Tensor]]:
        if self.kind == "trunc_normal":
            return [("depth.mu", self.mu), ("depth.sigma_rho", self.sigma_rho)]
        return [("depth.rate_rho", self.rate_rho)]


class Adam:
    """Adam with bias correction and per-group learning-rate overrides.

    Moment slots are created zeroed the first time a parameter name is seen,
    so parameters appended by network growth join seamlessly.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0 or not (0 < beta1 < 1) or not (0 < beta2 < 1) or eps <= 0:
            raise ValueError("invalid Adam hyperparameters")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.slots: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, groups: list[tuple[str, list[tuple[str, ad.Tensor]], float | None]]):
        """Apply one update. groups: (group_name, [(param_name, tensor)], lr_override).

        Rejects the whole step (no parameter mutated) if any gradient entry is
        non-finite, reporting the offending parameter and index.
        """
        for _, params, _ in groups:
            for name, p in params:
                g = p.grad
                if g is None:
                    continue
                if not np.all(np.isfinite(g)):
                    bad = int(np.flatnonzero(~np.isfinite(np.asarray(g).ravel()))[0])
                    raise GradientError(f"non-finite gradient in `{name}` at flat index {bad}")
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for _, params, lr_override in groups:
            lr = self.lr if lr_override is None else lr_override
            for name, p in params:
                g = p.grad
                if g is None:
                    continue
                g = np.asarray(g, dtype=np.float64)
                if name not in self.slots:
                    self.slots[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
                m, v = self.slots[name]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * np.square(g)
                p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(adam: Adam, groups) -> None:
    adam.step(groups)


def gradient_of(objective, params: list[tuple[str, ad.Tensor]], tape: RandomTape) -> np.ndarray:
    """Flat pathwise gradient of objective(tape) w.r.t. params.

    The tape is cloned before evaluation, so the noise draws are identical on
    every call: the gradient is exact for the objective with noise held fixed.
    """
    ad.zero_grads([p for _, p in params])
    out = objective(tape.clone())
    out.backward()
    chunks = []
    for _, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        chunks.append(np.asarray(g, dtype=np.float64).ravel().copy())
    return np.concatenate(chunks) if chunks else np.zeros(0)


@dataclass
class FiniteDiffReport:
    """Outcome of a central-difference gradient check."""

    max_rel_error: float
    n_checked: int
    failures: list[tuple[str, int, float, float, float]] = field(default_factory=list)
    non_finite_points: list[tuple[str, int]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and not self.non_finite_points


def finite_diff_check(objective, params: list[tuple[str, ad.Tensor]], tape: RandomTape,
                      h: float = 1e-5, tol: float = 1e-4,
                      analytic: np.ndarray | None = None) -> FiniteDiffReport:
    """Compare the reverse-mode gradient against central differences.

    All evaluations share the same random draws (the tape is cloned for each
    one).  Coordinates where both gradients are below 1e-7 in magnitude are
    accepted without a relative comparison.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if analytic is None:
        analytic = gradient_of(objective, params, tape)

    report = FiniteDiffReport(max_rel_error=0.0, n_checked=int(analytic.size))
    offset = 0
    for name, p in params:
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = objective(tape.clone()).item()
            flat[i] = orig - h
            f_minus = objective(tape.clone()).item()
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                report.non_finite_points.append((name, i))
                continue
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[offset + i]
            denom = max(abs(a), abs(numeric))
            if denom < 1e-7:
                continue
            rel = abs(a - numeric) / denom
            report.max_rel_error = max(report.max_rel_error, rel)
            if rel > tol:
                report.failures.append((name, i, float(a), float(numeric), float(rel)))
        offset += flat.size
    return report
