"""The unbounded-depth Bayesian MLP.

One shared input layer and a growable stack of shared hidden layers feed a
growable list of depth-specific output heads: the depth-l model is the first
l hidden layers plus head l, so deeper models reuse every parameter of the
shallower ones.  Forward passes sample pre-activations from their induced
Gaussians (local reparameterization) rather than sampling weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .optim import GaussianVariational
from .tape import RandomTape

_VAR_FLOOR = 1e-300  # keeps sqrt differentiable if a variance underflows


def leaky_relu(x, alpha: float = 0.1):
    """Elementwise max(alpha*x, x)."""
    return ad.leaky_relu(x, alpha)


def categorical_loglik(logits, y: int) -> float:
    """log softmax(logits)[y] for one example, max-shift stabilized."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= y < logits.shape[-1]:
        raise ValueError(f"label {y} out of range for {logits.shape[-1]} classes")
    shifted = logits - logits.max()
    return float(shifted[y] - math.log(np.exp(shifted).sum()))


def batch_loglik(logits: ad.Tensor, ys: np.ndarray) -> ad.Tensor:
    """Differentiable per-row log-likelihoods for a batch of logits."""
    return ad.select_labels(ad.log_softmax(logits), ys)


class BayesianLinear:
    """Affine layer with factorized Gaussian posteriors on weights and biases."""

    def __init__(self, in_dim: int, out_dim: int, init_tape: RandomTape,
                 init_std: float, prior_mean: float, prior_std: float):
        self.in_dim = in_dim
        self.out_dim = out_dim
        # unit-gain uniform init (E[w^2] = 1/in) so signals neither decay nor
        # blow up with depth; bias means start at zero (scale 0 keeps the
        # tape-draw structure identical for reproducibility)
        scale = math.sqrt(3.0 / in_dim)
        self.weights = GaussianVariational((in_dim, out_dim), init_tape, scale,
                                           init_std, prior_mean, prior_std)
        self.biases = GaussianVariational((out_dim,), init_tape, 0.0,
                                          init_std, prior_mean, prior_std)

    def sample_forward(self, x: ad.Tensor, tape: RandomTape) -> ad.Tensor:
        """Sample the pre-activations from N(mean, var) elementwise.

        mean = x W_mu + b_mu, var = x^2 W_sigma^2 + b_sigma^2: one standard
        normal draw per output unit, weights themselves are never sampled.
        """
        w_std = self.weights.std()
        b_std = self.biases.std()
        mean = x @ self.weights.mean + self.biases.mean
        var = (x * x) @ (w_std * w_std) + b_std * b_std
        eps = tape.normal(mean.shape)
        return mean + ad.sqrt(ad.clamp_min(var, _VAR_FLOOR)) * eps

    def kl(self) -> ad.Tensor:
        return self.weights.kl() + self.biases.kl()

    def named_params(self, prefix: str) -> list[tuple[str, ad.Tensor]]:
        return [
            (f"{prefix}.w_mean", self.weights.mean),
            (f"{prefix}.w_rho", self.weights.rho),
            (f"{prefix}.b_mean", self.biases.mean),
            (f"{prefix}.b_rho", self.biases.rho),
        ]


@dataclass
class ForwardTrace:
    """Per-depth activations and head outputs of one sampled forward pass."""

    hidden: list[ad.Tensor]  # hidden[l] = activation after layer l
    logits: list[ad.Tensor]  # logits[l] = head l applied to hidden[l]


class UnboundedNetwork:
    """Shared trunk f_0..f_L plus per-depth heads g_0..g_L, growable on demand."""

    def __init__(self, init_tape: RandomTape, in_dim: int = 2, hidden_width: int = 32,
                 num_classes: int = 2, leaky_alpha: float = 0.1, init_std: float = 0.05,
                 prior_mean: float = 0.0, prior_std: float = 1.0):
        self.in_dim = in_dim
        self.hidden_width = hidden_width
        self.num_classes = num_classes
        self.leaky_alpha = leaky_alpha
        self._init_tape = init_tape
        self._init_std = init_std
        self._prior = (prior_mean, prior_std)
        self.input_layer = self._new_layer(in_dim, hidden_width)
        self.hidden_layers: list[BayesianLinear] = []
        self.output_heads: list[BayesianLinear] = []
        self.ensure_depth(0)

    def _new_layer(self, in_dim: int, out_dim: int) -> BayesianLinear:
        return BayesianLinear(in_dim, out_dim, self._init_tape, self._init_std, *self._prior)

    def ensure_depth(self, depth: int) -> None:
        """Grow so hidden layers 1..depth and heads 0..depth all exist.

        Growth is monotone and idempotent; existing layers are untouched.
        Creation is interleaved (f_l then g_l) so the init-tape draw order
        depends only on the final depth reached, not on the call pattern.
        """
        if depth < 0:
            raise ValueError(f"depth must be non-negative, got {depth}")
        for l in range(depth + 1):
            if l >= 1 and len(self.hidden_layers) < l:
                self.hidden_layers.append(self._new_layer(self.hidden_width, self.hidden_width))
            if len(self.output_heads) < l + 1:
                self.output_heads.append(self._new_layer(self.hidden_width, self.num_classes))

    @property
    def max_depth(self) -> int:
        return len(self.output_heads) - 1

    def forward(self, x, max_depth: int, tape: RandomTape) -> ForwardTrace:
        """One sampled pass producing activations and logits for depths 0..max_depth.

        Draws are consumed in the order f_0, g_0, f_1, g_1, ..., so traces for
        a smaller max_depth are bitwise prefixes of deeper ones under the same
        tape state.
        """
        if max_depth > self.max_depth:
            raise RuntimeError(
                f"depth {max_depth} requested but only {self.max_depth} instantiated; "
                "call ensure_depth first"
            )
        x = ad.as_tensor(np.asarray(x, dtype=np.float64))
        h = leaky_relu(self.input_layer.sample_forward(x, tape), self.leaky_alpha)
        hidden = [h]
        logits = [self.output_heads[0].sample_forward(h, tape)]
        for l in range(1, max_depth + 1):
            h = leaky_relu(self.hidden_layers[l - 1].sample_forward(h, tape), self.leaky_alpha)
            hidden.append(h)
            logits.append(self.output_heads[l].sample_forward(h, tape))
        return ForwardTrace(hidden=hidden, logits=logits)

    def trunk_kl(self, l: int) -> ad.Tensor:
        """KL of layer f_l (l=0 is the input layer)."""
        return self.input_layer.kl() if l == 0 else self.hidden_layers[l - 1].kl()

    def head_kl(self, l: int) -> ad.Tensor:
        return self.output_heads[l].kl()

    def parameters(self) -> list[tuple[str, ad.Tensor]]:
        out = self.input_layer.named_params("f0")
        for i, layer in enumerate(self.hidden_layers, start=1):
            out += layer.named_params(f"f{i}")
        for i, head in enumerate(self.output_heads):
            out += head.named_params(f"g{i}")
        return out


def network_kl(net: UnboundedNetwork, L: int) -> float:
    """KL of the depth-L model: head g_L plus trunk layers f_0..f_L."""
    if L > net.max_depth:
        raise RuntimeError(f"depth {L} not instantiated")
    total = net.head_kl(L)
    for l in range(L + 1):
        total = total + net.trunk_kl(l)
    return total.item()
