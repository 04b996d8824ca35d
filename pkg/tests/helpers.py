"""Shared construction helpers for the test suite."""

import numpy as np

from depthbnn import dist
from depthbnn.net import UnboundedNetwork
from depthbnn.tape import RandomTape


def fresh_net(seed=0, **kwargs):
    defaults = dict(in_dim=2, hidden_width=4, num_classes=2, leaky_alpha=0.1,
                    init_std=0.05, prior_mean=0.0, prior_std=1.0)
    defaults.update(kwargs)
    return UnboundedNetwork(RandomTape(seed).child("init"), **defaults)


def set_layer(layer, w_mean, b_mean, std):
    layer.weights.mean.data[...] = w_mean
    layer.biases.mean.data[...] = b_mean
    layer.weights.rho.data[...] = dist.softplus_inverse(std)
    layer.biases.rho.data[...] = dist.softplus_inverse(std)


def freeze_stds(net, std=1e-14):
    """Make every layer effectively deterministic (sampled = mean network)."""
    for layer in [net.input_layer, *net.hidden_layers, *net.output_heads]:
        layer.weights.rho.data[...] = dist.softplus_inverse(std)
        layer.biases.rho.data[...] = dist.softplus_inverse(std)


def all_layers(net):
    return [net.input_layer, *net.hidden_layers, *net.output_heads]
