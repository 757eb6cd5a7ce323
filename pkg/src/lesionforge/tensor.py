"""Dense array kernels every layer builds on.

The carrier type is a row-major ``numpy.ndarray`` (NCHW for image batches).
Convolution is realized as im2col + matmul, so this module owns the two
halves of that rewrite and their adjoint.

Default precision is float32; pass ``dtype=np.float64`` where finite
difference checks need the headroom.
"""

import math

import numpy as np

from .errors import ConfigError, ShapeError

_DEFAULT_DTYPE = np.dtype(np.float32)

Tensor = np.ndarray


def default_dtype():
    """Precision used when layers and tensors are built without an explicit
    dtype: float32 normally, float64 when switched for gradient checking."""
    return _DEFAULT_DTYPE


def set_default_dtype(dtype):
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"default dtype must be float32 or float64, got {dtype!r}")
    _DEFAULT_DTYPE = dt
    return dt


def tensor_new(shape, fill=0.0, dtype=None):
    """Create a tensor of ``shape`` filled with a scalar or a flat value list.

    Raises ShapeError when a value list does not match product(shape).
    """
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0 or any(d < 1 for d in shape):
        raise ShapeError(f"invalid shape {shape}: dims must be >= 1")
    dtype = dtype or default_dtype()
    if np.isscalar(fill):
        return np.full(shape, fill, dtype=dtype)
    values = np.asarray(fill, dtype=dtype).reshape(-1)
    if values.size != math.prod(shape):
        raise ShapeError(
            f"value list of length {values.size} does not fill shape {shape} "
            f"(needs {math.prod(shape)})"
        )
    return values.reshape(shape)


def matmul(a, b):
    """Matrix product of two rank-2 tensors."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def _conv_out_extent(size, k, stride, pad):
    span = size + 2 * pad - k
    if span < 0:
        raise ShapeError(f"kernel {k} larger than padded input {size + 2 * pad}")
    if span % stride != 0:
        raise ShapeError(
            f"non-integral output extent: ({size} + 2*{pad} - {k}) not divisible by stride {stride}"
        )
    return span // stride + 1


def im2col(x, kh, kw, stride=1, pad=0):
    """Unfold [N,C,H,W] into a [C*kh*kw, N*Ho*Wo] column matrix.

    Each column is one zero-padded receptive field; rows run over (c, kh, kw)
    and columns over (n, ho, wo), both row-major.
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"im2col expects rank-4 input, got shape {x.shape}")
    n, c, h, w = x.shape
    ho = _conv_out_extent(h, kh, stride, pad)
    wo = _conv_out_extent(w, kw, stride, pad)
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    rows = stride * np.arange(ho)[:, None] + np.arange(kh)[None, :]   # [Ho, kh]
    cols = stride * np.arange(wo)[:, None] + np.arange(kw)[None, :]   # [Wo, kw]
    # Gather to [N, C, Ho, Wo, kh, kw], then regroup.
    patches = x[:, :, rows[:, None, :, None], cols[None, :, None, :]]
    return np.ascontiguousarray(patches.transpose(1, 4, 5, 0, 2, 3)).reshape(c * kh * kw, n * ho * wo)


def col2im(g, x_shape, kh, kw, stride=1, pad=0):
    """Adjoint of im2col: scatter-add a column matrix back to [N,C,H,W].

    Overlapping receptive fields accumulate, so an all-ones column matrix
    maps to per-pixel patch multiplicity.
    """
    g = np.asarray(g)
    n, c, h, w = (int(d) for d in x_shape)
    ho = _conv_out_extent(h, kh, stride, pad)
    wo = _conv_out_extent(w, kw, stride, pad)
    if g.shape != (c * kh * kw, n * ho * wo):
        raise ShapeError(
            f"column matrix {g.shape} does not match x_shape {tuple(x_shape)} "
            f"with kernel {(kh, kw)}, stride {stride}, pad {pad}"
        )
    g6 = g.reshape(c, kh, kw, n, ho, wo)
    hp, wp = h + 2 * pad, w + 2 * pad
    out = np.zeros((n, c, hp, wp), dtype=g.dtype)
    # Within a fixed kernel offset the strided windows never overlap.
    for a in range(kh):
        for b in range(kw):
            out[:, :, a : a + stride * ho : stride, b : b + stride * wo : stride] += (
                g6[:, a, b].transpose(1, 0, 2, 3)
            )
    if pad > 0:
        out = out[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(out)
