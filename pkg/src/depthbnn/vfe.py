"""Variational free energy assembly and posterior-averaged prediction.

The objective is the negative evidence lower bound: depth KL plus the
depth-posterior expectation of per-depth parameter KL and scaled negative
log-likelihood.  The expectation over depth is an exact finite sum over the
quantile-truncated support, evaluated on one shared forward trace so deeper
depths reuse the shallower activations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import dist
from .net import UnboundedNetwork, batch_loglik
from .optim import DepthPosterior
from .tape import RandomTape


class SupportCapError(RuntimeError):
    """The depth support exceeded the configured hard cap (runaway depth)."""


@dataclass
class VFEBreakdown:
    """The free energy total and its three additive components."""

    depth_kl: float
    expected_param_kl: float
    expected_nll: float
    total: float
    support: range
    per_depth_nll: list[float]  # unscaled batch NLL per supported depth
    loss: ad.Tensor  # differentiable total


def _check_cap(support: range, cap: int):
    if support.stop - 1 > cap:
        raise SupportCapError(
            f"depth support reaches {support.stop - 1}, above the cap {cap}"
        )


def compute_vfe(net: UnboundedNetwork, q_depth: DepthPosterior, prior_depth,
                xs: np.ndarray, ys: np.ndarray, dataset_size: int, tape: RandomTape,
                support: range | None = None, support_cap: int = 64) -> VFEBreakdown:
    """Free energy of one (mini)batch, scaled to the full dataset.

    The support is frozen for the evaluation: it is either supplied by the
    caller (the trainer recomputes it once per step) or computed here from
    the current depth parameters.  Gradients flow to weight parameters along
    the sampled pathwise route and to depth parameters through the pmf
    weights.  An empty batch drops the likelihood term.
    """
    if support is None:
        support = q_depth.support()
    _check_cap(support, support_cap)
    max_l = support.stop - 1

    q = q_depth.weights_on(support)
    log_prior = np.array([dist.untruncated_log_pmf(prior_depth, l) for l in support])
    depth_kl_t = ad.tsum(q * (ad.log(ad.clamp_min(q, dist.PMF_FLOOR)) - log_prior))

    # per-depth parameter KL: head l plus the shared trunk prefix f_0..f_l
    trunk_running = net.trunk_kl(0)
    trunk_prefix = [trunk_running]
    for l in range(1, max_l + 1):
        trunk_running = trunk_running + net.trunk_kl(l)
        trunk_prefix.append(trunk_running)
    param_kl_vec = ad.stack([trunk_prefix[l] + net.head_kl(l) for l in support])

    batch = int(np.asarray(xs).shape[0]) if np.asarray(xs).size else 0
    if batch > 0:
        ys = np.asarray(ys, dtype=np.int64)
        trace = net.forward(xs, max_l, tape)
        nll_vec = ad.stack([-ad.tsum(batch_loglik(trace.logits[l], ys)) for l in support])
        scale = dataset_size / batch
        per_depth_nll = [float(v) for v in nll_vec.data]
    else:
        nll_vec = ad.Tensor(np.zeros(len(support)))
        scale = 0.0
        per_depth_nll = [0.0] * len(support)

    expected_param_kl = ad.tsum(q * param_kl_vec)
    expected_nll = ad.tsum(q * nll_vec) * scale
    loss = depth_kl_t + expected_param_kl + expected_nll

    return VFEBreakdown(
        depth_kl=depth_kl_t.item(),
        expected_param_kl=expected_param_kl.item(),
        expected_nll=expected_nll.item(),
        total=loss.item(),
        support=support,
        per_depth_nll=per_depth_nll,
        loss=loss,
    )


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict(net: UnboundedNetwork, q_depth: DepthPosterior, xs: np.ndarray,
            num_samples: int, tape: RandomTape) -> np.ndarray:
    """Posterior-averaged class probabilities, n x C, rows summing to 1.

    Averages softmax probabilities over num_samples weight draws and, within
    each draw, over the depth posterior's finite support.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    pmf = q_depth.pmf()
    max_l = pmf.l_max
    if max_l > net.max_depth:
        raise RuntimeError(f"depth {max_l} not instantiated; call ensure_depth first")
    xs = np.asarray(xs, dtype=np.float64)
    probs = np.zeros((xs.shape[0], net.num_classes))
    for _ in range(num_samples):
        trace = net.forward(xs, max_l, tape)
        for l in pmf.support:
            probs += pmf.prob(l) * _softmax_rows(trace.logits[l].data)
    return probs / num_samples


def evaluate_accuracy(net: UnboundedNetwork, q_depth: DepthPosterior, xs: np.ndarray,
                      ys: np.ndarray, num_samples: int, tape: RandomTape) -> float:
    """Fraction of rows whose argmax prediction matches the label.

    Ties break toward the lower class index (numpy argmax convention).
    """
    xs = np.asarray(xs)
    if xs.shape[0] == 0:
        raise ValueError("dataset must be non-empty")
    probs = predict(net, q_depth, xs, num_samples, tape)
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(ys)))
