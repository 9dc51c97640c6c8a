"""Finite-difference verification suites for every differentiable kernel.

Each entry is a scalar-valued function of one input tensor; the checker
compares its analytic gradient against central differences in float64.
Points are drawn away from activation/loss kinks so the comparison is
well posed.
"""

from __future__ import annotations

import numpy as np

from .losses import CannyParams, LossWeights, iou_loss, mse, mssce, smooth_l1
from .networks import NetworkConfig, build_network, forward
from .tensor import (
    BatchNormState,
    ConvSpec,
    Tensor,
    _node,
    activation_map,
    batchnorm2d,
    concat_channels,
    conv2d,
    conv_transpose2d,
    grad_check,
    leaky_relu,
    maxpool2d,
)

DEFAULT_THRESHOLD = 1e-4
COMPOSITE_THRESHOLD = 1e-3


def _away_from_kinks(rng, shape, margin=0.05):
    """Random values with |x| >= margin so leaky-ReLU kinks stay far away."""
    x = rng.uniform(margin, 1.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def _suite(rng):
    conv_spec = ConvSpec(2, 4, 3, 3, stride=1, padding=1)
    conv_w = Tensor(rng.normal(0, 0.5, (4, 2, 3, 3)), requires_grad=True)
    conv_b = Tensor(rng.normal(0, 0.5, 4), requires_grad=True)
    tr_spec = ConvSpec(3, 2, 2, 2, stride=2)
    tr_w = Tensor(rng.normal(0, 0.5, (3, 2, 2, 2)), requires_grad=True)
    tr_b = Tensor(rng.normal(0, 0.5, 2), requires_grad=True)
    bn_state = BatchNormState.create(2)
    target = rng.uniform(0.2, 0.8, (1, 6, 6))
    weights = LossWeights()
    cp = CannyParams()

    def small_net_loss(x):
        net = build_network(
            NetworkConfig(t_in=2, base_channels=4, depth=2), seed=7, dtype=np.float64)
        net.set_mode("training")
        tgt = np.full((1, 8, 8), 0.4)
        return mse(forward(net, x), tgt)

    entries = {
        "conv2d": (lambda x: conv2d(x, conv_spec, conv_w, conv_b).sum(),
                   Tensor(rng.normal(0, 1, (2, 5, 5))), DEFAULT_THRESHOLD),
        "conv_transpose2d": (lambda x: conv_transpose2d(x, tr_spec, tr_w, tr_b).sum(),
                             Tensor(rng.normal(0, 1, (3, 4, 4))), DEFAULT_THRESHOLD),
        # sigmoid head keeps the functional smooth with a non-degenerate gradient
        # (plain mean of a normalized output is identically zero)
        "batchnorm2d": (lambda x: activation_map(batchnorm2d(x, bn_state), "sigmoid").sum(),
                        Tensor(rng.normal(0, 1, (2, 4, 4))), DEFAULT_THRESHOLD),
        "leaky_relu": (lambda x: leaky_relu(x, 0.1).sum(),
                       Tensor(_away_from_kinks(rng, (3, 4, 4))), DEFAULT_THRESHOLD),
        "maxpool2d": (lambda x: maxpool2d(x)[0].sum(),
                      Tensor(rng.normal(0, 1, (2, 4, 4))), DEFAULT_THRESHOLD),
        "concat_channels": (
            lambda x: concat_channels(x, Tensor(np.ones((1, 4, 4)))).mean(),
            Tensor(rng.normal(0, 1, (2, 4, 4))), DEFAULT_THRESHOLD),
        "sigmoid": (lambda x: activation_map(x, "sigmoid").sum(),
                    Tensor(rng.normal(0, 1, (2, 3, 3))), DEFAULT_THRESHOLD),
        "tanh": (lambda x: activation_map(x, "tanh").sum(),
                 Tensor(rng.normal(0, 1, (2, 3, 3))), DEFAULT_THRESHOLD),
        "mse": (lambda x: mse(x, target),
                Tensor(rng.uniform(0, 1, (1, 6, 6))), DEFAULT_THRESHOLD),
        "smooth_l1": (lambda x: smooth_l1(x, target, 1.0),
                      Tensor(target + _away_from_kinks(rng, (1, 6, 6), 0.1)),
                      DEFAULT_THRESHOLD),
        "iou_loss": (lambda x: iou_loss(x, (target > 0.5).astype(np.float64)),
                     Tensor(rng.uniform(0.1, 0.9, (1, 6, 6))), DEFAULT_THRESHOLD),
        "mssce": (lambda x: mssce(x, target, weights, cp),
                  Tensor(target + _away_from_kinks(rng, (1, 6, 6), 0.1)),
                  DEFAULT_THRESHOLD),
        "small_network_mse": (small_net_loss,
                              Tensor(_away_from_kinks(rng, (2, 8, 8))),
                              COMPOSITE_THRESHOLD),
    }
    return entries


def _corrupt_gradient(fn):
    """Keep the value but scale the analytic gradient: simulates a broken
    backward so the harness's sensitivity can be tested."""
    def wrapped(x):
        y = fn(x)
        return _node(y.data, (y,), lambda g: (1.5 * g,))
    return wrapped


def run_gradient_suite(h: float = 1e-5, seed: int = 0, corrupt: str | None = None):
    """Returns {kernel: (max relative error, threshold)}."""
    rng = np.random.default_rng(seed)
    results = {}
    for name, (fn, point, threshold) in _suite(rng).items():
        if corrupt == name:
            fn = _corrupt_gradient(fn)
        results[name] = (grad_check(fn, point, h), threshold)
    return results
