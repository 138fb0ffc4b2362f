"""Finite-difference verification suites for the differentiation engine.

Each builder constructs a scalar expression from fresh random leaves; the
checker compares analytic gradients against central differences. The
end-to-end builder drives the whole network at reduced dimensions through
the classifier loss (the gradient-reversal path is excluded here by
design: its backward pass is intentionally not the true gradient, and its
contract has its own two-pass oracle).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, Node, grad_check
from .config import TrainConfig
from .graph import classification_loss, full_topology
from .model import Model
from .spatial import RegionMap

END_TO_END_TOL = 1e-3
PRIMITIVE_TOL = 1e-4


def _leaves(rng, **shapes):
    return {name: ad.parameter(rng.standard_normal(shape))
            for name, shape in shapes.items()}


def _readout(rng, shape) -> "_Readout":
    """Fixed random weights reducing a matrix to a scalar, so axis
    mistakes cannot cancel. Drawn once at build time: the expression must
    be a deterministic function of its leaves."""
    return _Readout(ad.constant(rng.standard_normal(shape)))


class _Readout:
    def __init__(self, weights: Node):
        self.weights = weights

    def __call__(self, out: Node) -> Node:
        return ad.sum_all(ad.hadamard(out, self.weights))


def primitive_builders() -> dict:
    """One scalar-expression builder per primitive operation."""

    def matmul(rng):
        lv = _leaves(rng, a=(3, 4), b=(4, 2))
        r = _readout(rng, (3, 2))
        return lambda: r(ad.matmul(lv["a"], lv["b"])), lv

    def affine(rng):
        lv = _leaves(rng, w=(3, 4), x=(4, 5), b=(3, 1))
        r = _readout(rng, (3, 5))
        return lambda: r(ad.affine(lv["w"], lv["x"], lv["b"])), lv

    def transpose(rng):
        lv = _leaves(rng, x=(3, 5))
        r = _readout(rng, (5, 3))
        return lambda: r(ad.transpose(lv["x"])), lv

    def add(rng):
        lv = _leaves(rng, a=(3, 4), b=(3, 4))
        r = _readout(rng, (3, 4))
        return lambda: r(ad.add(lv["a"], lv["b"])), lv

    def add_bias_col(rng):
        lv = _leaves(rng, a=(3, 4), b=(3, 1))
        r = _readout(rng, (3, 4))
        return lambda: r(ad.add(lv["a"], lv["b"])), lv

    def add_bias_row(rng):
        lv = _leaves(rng, a=(3, 4), b=(1, 4))
        r = _readout(rng, (3, 4))
        return lambda: r(ad.add(lv["a"], lv["b"])), lv

    def sub(rng):
        lv = _leaves(rng, a=(4, 3), b=(4, 3))
        r = _readout(rng, (4, 3))
        return lambda: r(ad.sub(lv["a"], lv["b"])), lv

    def hadamard(rng):
        lv = _leaves(rng, a=(3, 4), b=(3, 4))
        r = _readout(rng, (3, 4))
        return lambda: r(ad.hadamard(lv["a"], lv["b"])), lv

    def concat_rows(rng):
        lv = _leaves(rng, a=(2, 4), b=(3, 4))
        r = _readout(rng, (5, 4))
        return lambda: r(ad.concat_rows([lv["a"], lv["b"]])), lv

    def concat_cols(rng):
        lv = _leaves(rng, a=(3, 2), b=(3, 4))
        r = _readout(rng, (3, 6))
        return lambda: r(ad.concat_cols([lv["a"], lv["b"]])), lv

    def softmax_rows(rng):
        lv = _leaves(rng, x=(4, 5))
        r = _readout(rng, (4, 5))
        return lambda: r(ad.softmax(lv["x"], axis=1)), lv

    def softmax_cols(rng):
        lv = _leaves(rng, x=(4, 5))
        r = _readout(rng, (4, 5))
        return lambda: r(ad.softmax(lv["x"], axis=0)), lv

    def softmax_masked(rng):
        lv = _leaves(rng, x=(5, 5))
        band = np.eye(5) + np.diag(np.ones(4), 1) + np.diag(np.ones(4), -1)
        mask = (band > 0).astype(float)
        r = _readout(rng, (5, 5))
        return lambda: r(ad.softmax(lv["x"], axis=1, mask=mask)), lv

    def sigmoid(rng):
        lv = _leaves(rng, x=(3, 4))
        r = _readout(rng, (3, 4))
        return lambda: r(ad.sigmoid(lv["x"])), lv

    def tanh(rng):
        lv = _leaves(rng, x=(3, 4))
        r = _readout(rng, (3, 4))
        return lambda: r(ad.tanh(lv["x"])), lv

    def leaky_relu(rng):
        # keep inputs away from the kink, where differences are one-sided
        raw = rng.standard_normal((3, 4))
        lv = {"x": ad.parameter(np.sign(raw) * (np.abs(raw) + 0.1))}
        r = _readout(rng, (3, 4))
        return lambda: r(ad.leaky_relu(lv["x"], 0.2)), lv

    def exp(rng):
        lv = _leaves(rng, x=(3, 4))
        r = _readout(rng, (3, 4))
        return lambda: r(ad.exp(lv["x"])), lv

    def log(rng):
        lv = {"x": ad.parameter(np.abs(rng.standard_normal((3, 4))) + 0.5)}
        r = _readout(rng, (3, 4))
        return lambda: r(ad.log(lv["x"])), lv

    def mean_rows(rng):
        lv = _leaves(rng, x=(4, 5))
        r = _readout(rng, (1, 5))
        return lambda: r(ad.mean(lv["x"], axis=0)), lv

    def mean_cols(rng):
        lv = _leaves(rng, x=(4, 5))
        r = _readout(rng, (4, 1))
        return lambda: r(ad.mean(lv["x"], axis=1)), lv

    def scale(rng):
        lv = _leaves(rng, x=(3, 4))
        r = _readout(rng, (3, 4))
        return lambda: r(ad.scale(lv["x"], -1.7)), lv

    def take_rows(rng):
        lv = _leaves(rng, x=(5, 3))
        r = _readout(rng, (4, 3))
        return lambda: r(ad.take_rows(lv["x"], [0, 2, 2, 4])), lv

    def take_cols(rng):
        lv = _leaves(rng, x=(3, 5))
        r = _readout(rng, (3, 3))
        return lambda: r(ad.take_cols(lv["x"], [1, 1, 3])), lv

    def sum_all(rng):
        lv = _leaves(rng, x=(3, 4))
        return lambda: ad.sum_all(lv["x"]), lv

    def composed(rng):
        # softmax(affine(tanh(x))) reduced by a fixed weighted sum
        lv = _leaves(rng, w=(4, 4), x=(4, 5), b=(4, 1))
        r = _readout(rng, (4, 5))
        return (lambda: r(ad.softmax(ad.affine(lv["w"], ad.tanh(lv["x"]),
                                               lv["b"]), axis=0)), lv)

    fns = [matmul, affine, transpose, add, add_bias_col, add_bias_row, sub,
           hadamard, concat_rows, concat_cols, softmax_rows, softmax_cols,
           softmax_masked, sigmoid, tanh, leaky_relu, exp, log, mean_rows,
           mean_cols, scale, take_rows, take_cols, sum_all, composed]
    return {fn.__name__: fn for fn in fns}


def tiny_config(seed: int = 0, with_discriminator: bool = False) -> TrainConfig:
    """Reduced dimensions: 4 channels, 3 segments, 2 bands, 3 regions."""
    return TrainConfig(preset="custom", n_channels=4, segments=3,
                       bands=["alpha", "gamma"], lstm_hidden=3, region_dim=4,
                       gat_layers=2, gat_hidden=3, attention_heads=2,
                       batch_size=2, epochs=1, seed=seed,
                       disable_domain_adaptation=not with_discriminator)


def tiny_region_map() -> RegionMap:
    return RegionMap(["front", "middle", "back"], [[0], [1, 2], [3]])


def tiny_model(seed: int = 0, with_discriminator: bool = False) -> Model:
    cfg = tiny_config(seed, with_discriminator)
    return Model(cfg, region_map=tiny_region_map(),
                 topology=full_topology(cfg.n_channels))


def end_to_end_builder(rng):
    """The reduced network's forward output Z', reduced to a scalar by a
    fixed random readout, as a function of every learnable parameter.

    A weighted readout keeps gradient magnitudes O(1) everywhere; routing
    through the classifier softmax can leave some attention parameters
    with ~1e-10 gradients where central differences are pure roundoff.
    The classifier/loss path has its own finite-difference test at a
    well-conditioned operating point.
    """
    model = tiny_model(seed=int(rng.integers(1 << 31)))
    x = rng.standard_normal((1, 4, 3, 2))
    readout = _readout(rng, (4, 3))

    def forward():
        z = model.forward_batch(x).z_prime[0]
        return readout(z)

    return forward, dict(model.registry.items())


def classifier_head_builder(rng):
    """Classification loss through pooling, the linear head, softmax, and
    the log loss, on a free feature matrix."""
    model = tiny_model(seed=int(rng.integers(1 << 31)))
    lv = {"z": ad.parameter(rng.standard_normal((4, 3))),
          "classifier/w": model.classifier.w,
          "classifier/b": model.classifier.b}
    label = int(rng.integers(2))

    def forward():
        return classification_loss([model.class_probabilities(lv["z"])],
                                   [label])

    return forward, lv


def full_gradient_suite(seed: int, entries_per_param: int = 4) -> dict[str, GradCheckReport]:
    """Every primitive at tol 1e-4 plus the end-to-end pass at tol 1e-3."""
    reports = {}
    for name, build in primitive_builders().items():
        reports[name] = grad_check(build, seed, tol=PRIMITIVE_TOL, name=name)
    reports["end-to-end"] = grad_check(end_to_end_builder, seed,
                                       tol=END_TO_END_TOL,
                                       max_entries=entries_per_param,
                                       name="end-to-end")
    return reports
