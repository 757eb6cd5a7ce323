"""The full finite-difference gradient suite as (name, check) pairs.

Each check returns the worst violation ratio of
|numeric - analytic| <= atol + rtol * (|numeric| + |analytic|); < 1.0 passes.
Shared by the granular gradient tests and the acceptance gate.
"""

import numpy as np

from conftest import check_layer_gradients, gradient_mismatch, numeric_gradient
from lesionforge.layers import (AvgPool2D, BatchNorm, Conv2D, Dense, DenseBlock,
                                DepthwiseConv2D, DepthwiseSeparableConv, Dropout,
                                LeakyReLU, MaxPool2D, ResidualBlock, Softmax, softmax)
from lesionforge.optim import categorical_crossentropy


def _x(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


def _layer_case(make_layer, shape, seed, forward=None):
    def check():
        return check_layer_gradients(make_layer(), _x(shape, seed), forward=forward)
    return check


def _fused_cce_case(shape, seed):
    def check():
        r = np.random.default_rng(seed)
        z = r.standard_normal(shape)
        y = np.zeros(shape)
        y[np.arange(shape[0]), r.integers(0, shape[1], shape[0])] = 1.0
        _, dz = categorical_crossentropy(softmax(z), y)

        def loss():
            return categorical_crossentropy(softmax(z), y)[0]

        return gradient_mismatch(numeric_gradient(loss, z), dz)
    return check


def _dropout_case(shape, seed):
    layer = Dropout(0.4)
    forward = lambda inp: layer.forward(inp, rng=np.random.default_rng(99))
    def check():
        return check_layer_gradients(layer, _x(shape, seed), forward=forward)
    return check


def _kink_safe(shape, seed):
    x = _x(shape, seed)
    x[np.abs(x) < 1e-3] += 0.01
    return x


def build_cases():
    rng = lambda s: np.random.default_rng(s)
    cases = []

    cases += [
        (f"conv2d[{i}]", _layer_case(lambda kw=kw, s=s: Conv2D(dtype=np.float64, rng=rng(s), **kw), shape, s))
        for i, (shape, kw, s) in enumerate([
            ((2, 2, 5, 5), dict(in_channels=2, out_channels=3, kh=3, padding="same"), 31),
            ((1, 3, 6, 6), dict(in_channels=3, out_channels=2, kh=2, stride=2, padding="valid"), 32),
            ((2, 1, 4, 5), dict(in_channels=1, out_channels=4, kh=1, padding="valid"), 33),
        ])
    ]
    cases += [
        (f"dense[{i}]", _layer_case(lambda f=f, u=u, s=s: Dense(f, u, dtype=np.float64, rng=rng(s)), (n, f), s))
        for i, (n, f, u, s) in enumerate([(3, 5, 4, 34), (1, 7, 2, 35), (6, 2, 5, 36)])
    ]
    cases += [
        (f"batchnorm[{i}]", _layer_case(lambda c=c: BatchNorm(c, dtype=np.float64), shape, s))
        for i, (shape, c, s) in enumerate([
            ((3, 2, 4, 4), 2, 37), ((2, 3, 3, 5), 3, 38), ((7, 4), 4, 39),
        ])
    ]

    def _pool_case(cls, args, shape, seed, scale=1.0):
        def check():
            return check_layer_gradients(cls(*args), _x(shape, seed) * scale)
        return check

    cases += [
        (f"maxpool[{i}]", _pool_case(MaxPool2D, args, shape, s, scale=3.0))
        for i, (shape, args, s) in enumerate([
            ((2, 2, 6, 6), (2,), 40),
            ((1, 3, 5, 5), (2, None, 1), 41),
            ((2, 1, 4, 4), (3, None, 1), 42),
        ])
    ]
    cases += [
        (f"avgpool[{i}]", _pool_case(AvgPool2D, args, shape, s))
        for i, (shape, args, s) in enumerate([
            ((2, 2, 6, 6), (2,), 43),
            ((1, 3, 5, 5), (3, None, 2), 44),
            ((2, 1, 4, 4), (2, None, 1), 45),
        ])
    ]
    cases += [
        (f"dropout_fixed_mask[{i}]", _dropout_case(shape, s))
        for i, (shape, s) in enumerate([((3, 6), 46), ((2, 3, 4, 4), 47), ((1, 10), 48)])
    ]
    cases += [
        (f"leaky_relu[{i}]",
         (lambda shape=shape, s=s: check_layer_gradients(LeakyReLU(0.07), _kink_safe(shape, s))))
        for i, (shape, s) in enumerate([((4, 5), 49), ((2, 3, 4, 4), 50), ((1, 9), 51)])
    ]
    cases += [
        (f"softmax_cce_fused[{i}]", _fused_cce_case(shape, s))
        for i, (shape, s) in enumerate([((4, 3), 52), ((2, 2), 53), ((6, 5), 54)])
    ]
    cases += [
        (f"residual_block[{i}]",
         _layer_case(lambda c=c, s=s: ResidualBlock(c, dtype=np.float64, rng=rng(s)), shape, s))
        for i, (shape, c, s) in enumerate([
            ((2, 2, 4, 4), 2, 55), ((1, 3, 5, 5), 3, 56), ((3, 1, 4, 4), 1, 57),
        ])
    ]
    cases += [
        (f"dense_block[{i}]",
         _layer_case(lambda c=c, g=g, L=L, s=s: DenseBlock(c, growth=g, n_layers=L,
                                                           dtype=np.float64, rng=rng(s)), shape, s))
        for i, (shape, c, g, L, s) in enumerate([
            ((2, 2, 4, 4), 2, 2, 2, 58), ((1, 3, 4, 4), 3, 1, 1, 59), ((2, 1, 5, 5), 1, 2, 3, 60),
        ])
    ]
    cases += [
        (f"depthwise_separable[{i}]",
         _layer_case(lambda ci=ci, co=co, s=s: DepthwiseSeparableConv(ci, co, dtype=np.float64,
                                                                      rng=rng(s)), shape, s))
        for i, (shape, ci, co, s) in enumerate([
            ((2, 2, 4, 4), 2, 3, 61), ((1, 3, 5, 5), 3, 2, 62), ((2, 1, 4, 4), 1, 4, 63),
        ])
    ]
    cases += [
        (f"depthwise_conv[{i}]",
         _layer_case(lambda c=c, kw=kw, s=s: DepthwiseConv2D(c, dtype=np.float64, rng=rng(s), **kw),
                     shape, s))
        for i, (shape, c, kw, s) in enumerate([
            ((2, 2, 5, 5), 2, dict(kh=3, padding="same"), 64),
            ((1, 3, 6, 6), 3, dict(kh=2, stride=2, padding="valid"), 65),
            ((2, 1, 4, 4), 1, dict(kh=3, padding=1), 66),
        ])
    ]
    cases += [
        (f"softmax_jvp[{i}]", _layer_case(Softmax, shape, s))
        for i, (shape, s) in enumerate([((3, 4), 67), ((1, 2), 68), ((5, 6), 69)])
    ]
    return cases


GRADIENT_CASES = build_cases()
