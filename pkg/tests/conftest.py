"""Shared test helpers: finite-difference gradient checking and fixtures."""

import numpy as np
import pytest

FD_H = 1e-5
FD_RTOL = 1e-4
FD_ATOL = 1e-8


def numeric_gradient(f, x, h=FD_H):
    """Central finite differences of the scalar function ``f`` (reading the
    live array ``x``) with respect to every element of ``x``."""
    num = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f()
        x[i] = orig - h
        fm = f()
        x[i] = orig
        num[i] = (fp - fm) / (2 * h)
    return num


def gradient_mismatch(numeric, analytic, rtol=FD_RTOL, atol=FD_ATOL):
    """Worst violation ratio of |num - ana| <= atol + rtol*(|num| + |ana|).

    < 1.0 means every element is within the stated relative error; the
    absolute floor covers exact-zero gradients where finite differences
    only produce roundoff noise.
    """
    numeric = np.asarray(numeric)
    analytic = np.asarray(analytic)
    diff = np.abs(numeric - analytic)
    bound = atol + rtol * (np.abs(numeric) + np.abs(analytic))
    return float((diff / bound).max()) if diff.size else 0.0


def _walk_params(layer):
    for key in layer.params:
        yield layer, key
    for _, sub in layer.sublayers():
        yield from _walk_params(sub)


def check_layer_gradients(layer, x, seed=0, forward=None):
    """Finite-difference check of dx and every parameter gradient of a layer.

    ``forward`` overrides how the layer is evaluated (used to replay dropout
    masks); it must call layer.forward internally. Returns the worst
    violation ratio across all checked tensors.
    """
    rng = np.random.default_rng(seed)
    fwd = forward if forward is not None else (lambda inp: layer.forward(inp))
    out = fwd(x)
    w = rng.standard_normal(out.shape)

    dx = layer.backward(w)
    saved_grads = [(lyr, key, lyr.grads[key].copy()) for lyr, key in _walk_params(layer)]

    def loss():
        return float((fwd(x) * w).sum())

    worst = gradient_mismatch(numeric_gradient(loss, x), dx)
    for lyr, key, analytic in saved_grads:
        numeric = numeric_gradient(loss, lyr.params[key])
        worst = max(worst, gradient_mismatch(numeric, analytic))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
