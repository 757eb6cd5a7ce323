"""Layer forward/backward passes and the composite blocks.

Every layer follows the same protocol: ``forward(x, rng=None)`` caches what
backward needs, ``backward(dy)`` returns dx and fills ``grads`` for each
entry of ``params``. Calling backward before forward raises StateError.

Convolutions are cross-correlations (no kernel flip) computed as
im2col + matmul. "Same" padding is symmetric with the extra pixel on the
bottom/right; inputs whose extent the stride does not cover exactly are
cropped, and the cropped margin receives zero gradient.
"""

import math

import numpy as np

from .errors import ConfigError, DegenerateBatchError, ShapeError, StateError
from .tensor import col2im, default_dtype, im2col


def leaky_relu(x, slope=0.01):
    """Elementwise max(0, x) + slope * min(0, x)."""
    x = np.asarray(x)
    return np.where(x >= 0, x, x * np.asarray(slope, dtype=x.dtype))


def relu(x):
    return leaky_relu(x, 0.0)


def softmax(z):
    """Row-wise softmax of [N, K] logits, stabilized by max subtraction."""
    z = np.asarray(z)
    if z.ndim != 2 or z.shape[1] < 2:
        raise ShapeError(f"softmax expects [N, K>=2] logits, got {z.shape}")
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _he_normal(rng, shape, fan_in, dtype):
    if rng is None:
        return np.zeros(shape, dtype=dtype)
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


def _pad_amounts(h, w, kh, kw, stride, padding):
    """Resolve padding mode to explicit (top, bottom, left, right)."""
    if padding == "valid":
        return 0, 0, 0, 0
    if padding == "same":
        ho = -(-h // stride)
        wo = -(-w // stride)
        th = max((ho - 1) * stride + kh - h, 0)
        tw = max((wo - 1) * stride + kw - w, 0)
        return th // 2, th - th // 2, tw // 2, tw - tw // 2
    p = int(padding)
    if p < 0:
        raise ConfigError(f"padding must be 'same', 'valid' or a non-negative int, got {padding!r}")
    return p, p, p, p


def _coverage(size, k, stride):
    """Largest extent <= size that the strided kernel tiles exactly."""
    if size < k:
        raise ShapeError(f"kernel extent {k} larger than padded input {size}")
    return ((size - k) // stride) * stride + k


class Layer:
    """Base layer: named parameter/gradient/state tensors plus a mode flag."""

    kind = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.state = {}
        self.training = True
        self._cache = None

    def forward(self, x, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def sublayers(self):
        return []

    def set_training(self, flag):
        self.training = bool(flag)
        for _, sub in self.sublayers():
            sub.set_training(flag)

    def get_config(self):
        raise NotImplementedError

    def _require_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        return self._cache


class Conv2D(Layer):
    """2D cross-correlation with per-channel bias, W: [Cout, Cin, kh, kw]."""

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kh, kw=None, stride=1, padding="same",
                 dtype=None, rng=None):
        super().__init__()
        kw = kh if kw is None else kw
        dtype = dtype or default_dtype()
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kh, self.kw = int(kh), int(kw)
        self.stride = int(stride)
        self.padding = padding
        self.params["W"] = _he_normal(rng, (out_channels, in_channels, self.kh, self.kw),
                                      in_channels * self.kh * self.kw, dtype)
        self.params["b"] = np.zeros(out_channels, dtype=dtype)

    def get_config(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kh": self.kh, "kw": self.kw,
                "stride": self.stride, "padding": self.padding}

    @classmethod
    def from_config(cls, d):
        return cls(d["in_channels"], d["out_channels"], d["kh"], d["kw"],
                   stride=d["stride"], padding=d["padding"])

    def forward(self, x, rng=None):
        n, cin, h, w = x.shape
        if cin != self.in_channels:
            raise ShapeError(f"conv2d expects {self.in_channels} input channels, got {cin}")
        pt, pb, pl, pr = _pad_amounts(h, w, self.kh, self.kw, self.stride, self.padding)
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if pt or pb or pl or pr else x
        hp, wp = xp.shape[2], xp.shape[3]
        hc = _coverage(hp, self.kh, self.stride)
        wc = _coverage(wp, self.kw, self.stride)
        cols = im2col(xp[:, :, :hc, :wc], self.kh, self.kw, self.stride, 0)
        ho = (hc - self.kh) // self.stride + 1
        wo = (wc - self.kw) // self.stride + 1
        wm = self.params["W"].reshape(self.out_channels, -1)
        out = wm @ cols + self.params["b"][:, None]
        self._cache = (x.shape, (hp, wp), (hc, wc), (pt, pl), cols, (ho, wo))
        return np.ascontiguousarray(out.reshape(self.out_channels, n, ho, wo).transpose(1, 0, 2, 3))

    def backward(self, dy):
        x_shape, (hp, wp), (hc, wc), (pt, pl), cols, (ho, wo) = self._require_cache()
        n, cin, h, w = x_shape
        if dy.shape != (n, self.out_channels, ho, wo):
            raise ShapeError(f"dy shape {dy.shape} does not match forward output "
                             f"{(n, self.out_channels, ho, wo)}")
        dym = np.ascontiguousarray(dy.transpose(1, 0, 2, 3)).reshape(self.out_channels, -1)
        self.grads["b"] = dym.sum(axis=1)
        self.grads["W"] = (dym @ cols.T).reshape(self.params["W"].shape)
        dcols = self.params["W"].reshape(self.out_channels, -1).T @ dym
        dxc = col2im(dcols, (n, cin, hc, wc), self.kh, self.kw, self.stride, 0)
        dxp = np.zeros((n, cin, hp, wp), dtype=dy.dtype)
        dxp[:, :, :hc, :wc] = dxc
        return np.ascontiguousarray(dxp[:, :, pt : pt + h, pl : pl + w])


class DepthwiseConv2D(Layer):
    """Per-channel convolution: one kh x kw filter per input channel."""

    kind = "depthwise_conv2d"

    def __init__(self, channels, kh, kw=None, stride=1, padding="same", dtype=None, rng=None):
        super().__init__()
        kw = kh if kw is None else kw
        dtype = dtype or default_dtype()
        self.channels = int(channels)
        self.kh, self.kw = int(kh), int(kw)
        self.stride = int(stride)
        self.padding = padding
        self.params["W"] = _he_normal(rng, (channels, 1, self.kh, self.kw),
                                      self.kh * self.kw, dtype)
        self.params["b"] = np.zeros(channels, dtype=dtype)

    def get_config(self):
        return {"kind": self.kind, "channels": self.channels, "kh": self.kh, "kw": self.kw,
                "stride": self.stride, "padding": self.padding}

    @classmethod
    def from_config(cls, d):
        return cls(d["channels"], d["kh"], d["kw"], stride=d["stride"], padding=d["padding"])

    def forward(self, x, rng=None):
        n, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(f"depthwise conv expects {self.channels} channels, got {c}")
        pt, pb, pl, pr = _pad_amounts(h, w, self.kh, self.kw, self.stride, self.padding)
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if pt or pb or pl or pr else x
        hp, wp = xp.shape[2], xp.shape[3]
        hc = _coverage(hp, self.kh, self.stride)
        wc = _coverage(wp, self.kw, self.stride)
        # Treat each (sample, channel) plane as its own 1-channel image.
        cols = im2col(xp[:, :, :hc, :wc].reshape(n * c, 1, hc, wc),
                      self.kh, self.kw, self.stride, 0)
        ho = (hc - self.kh) // self.stride + 1
        wo = (wc - self.kw) // self.stride + 1
        cols_r = cols.reshape(self.kh * self.kw, n, c, ho * wo)
        kern = self.params["W"].reshape(c, self.kh * self.kw)
        out = np.einsum("ck,kncp->ncp", kern, cols_r) + self.params["b"][None, :, None]
        self._cache = (x.shape, (hp, wp), (hc, wc), (pt, pl), cols_r, (ho, wo))
        return np.ascontiguousarray(out.reshape(n, c, ho, wo))

    def backward(self, dy):
        x_shape, (hp, wp), (hc, wc), (pt, pl), cols_r, (ho, wo) = self._require_cache()
        n, c, h, w = x_shape
        dyr = dy.reshape(n, c, ho * wo)
        self.grads["b"] = dyr.sum(axis=(0, 2))
        dk = np.einsum("ncp,kncp->ck", dyr, cols_r)
        self.grads["W"] = dk.reshape(self.params["W"].shape)
        kern = self.params["W"].reshape(c, self.kh * self.kw)
        dcols = np.einsum("ck,ncp->kncp", kern, dyr).reshape(self.kh * self.kw, -1)
        dxc = col2im(dcols, (n * c, 1, hc, wc), self.kh, self.kw, self.stride, 0)
        dxp = np.zeros((n, c, hp, wp), dtype=dy.dtype)
        dxp[:, :, :hc, :wc] = dxc.reshape(n, c, hc, wc)
        return np.ascontiguousarray(dxp[:, :, pt : pt + h, pl : pl + w])


class Dense(Layer):
    """Affine layer: x[N, F] @ W[F, U] + b[U]."""

    kind = "dense"

    def __init__(self, in_features, units, dtype=None, rng=None):
        super().__init__()
        dtype = dtype or default_dtype()
        self.in_features = int(in_features)
        self.units = int(units)
        self.params["W"] = _he_normal(rng, (in_features, units), in_features, dtype)
        self.params["b"] = np.zeros(units, dtype=dtype)

    def get_config(self):
        return {"kind": self.kind, "in_features": self.in_features, "units": self.units}

    @classmethod
    def from_config(cls, d):
        return cls(d["in_features"], d["units"])

    def forward(self, x, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense expects [N, {self.in_features}], got {x.shape}")
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        x = self._require_cache()
        self.grads["W"] = x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["W"].T


class BatchNorm(Layer):
    """Per-channel batch normalization for [N, C, H, W] or [N, F] inputs.

    Training mode normalizes with batch statistics (population variance) and
    updates running stats as running <- momentum * running + (1 - momentum) * batch.
    Evaluation mode normalizes with the running stats; its backward treats
    them as constants.
    """

    kind = "batchnorm"

    def __init__(self, channels, eps=1e-5, momentum=0.99, dtype=None):
        super().__init__()
        dtype = dtype or default_dtype()
        self.channels = int(channels)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.state["running_mean"] = np.zeros(channels, dtype=dtype)
        self.state["running_var"] = np.ones(channels, dtype=dtype)

    def get_config(self):
        return {"kind": self.kind, "channels": self.channels, "eps": self.eps,
                "momentum": self.momentum}

    @classmethod
    def from_config(cls, d):
        return cls(d["channels"], eps=d["eps"], momentum=d["momentum"])

    def _axes_and_shape(self, x):
        if x.ndim == 2:
            return (0,), (1, self.channels)
        if x.ndim == 4:
            return (0, 2, 3), (1, self.channels, 1, 1)
        raise ShapeError(f"batchnorm expects rank-2 or rank-4 input, got {x.shape}")

    def forward(self, x, rng=None):
        axes, bshape = self._axes_and_shape(x)
        if x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm expects {self.channels} channels, got {x.shape[1]}")
        gamma = self.params["gamma"].reshape(bshape)
        beta = self.params["beta"].reshape(bshape)
        if self.training:
            m = int(np.prod([x.shape[a] for a in axes]))
            if m < 2:
                raise DegenerateBatchError(
                    f"batch statistics need >= 2 values per channel, got {m}")
            mean = x.mean(axis=axes, keepdims=True)
            var = x.var(axis=axes, keepdims=True)
            rstd = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * rstd
            mom = self.momentum
            self.state["running_mean"] = (mom * self.state["running_mean"]
                                          + (1 - mom) * mean.reshape(-1))
            self.state["running_var"] = (mom * self.state["running_var"]
                                         + (1 - mom) * var.reshape(-1))
            self._cache = ("train", xhat, rstd, axes, bshape, m)
        else:
            mean = self.state["running_mean"].reshape(bshape)
            rstd = 1.0 / np.sqrt(self.state["running_var"].reshape(bshape) + self.eps)
            xhat = (x - mean) * rstd
            self._cache = ("eval", xhat, rstd, axes, bshape, None)
        return gamma * xhat + beta

    def backward(self, dy):
        mode, xhat, rstd, axes, bshape, m = self._require_cache()
        gamma = self.params["gamma"].reshape(bshape)
        self.grads["gamma"] = (dy * xhat).sum(axis=axes)
        self.grads["beta"] = dy.sum(axis=axes)
        dxhat = dy * gamma
        if mode == "eval":
            # Running stats are constants, so the map is affine per channel.
            return dxhat * rstd
        return (rstd / m) * (m * dxhat
                             - dxhat.sum(axis=axes, keepdims=True)
                             - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))


class _Pool(Layer):
    def __init__(self, ph, pw=None, stride=None):
        super().__init__()
        pw = ph if pw is None else pw
        self.ph, self.pw = int(ph), int(pw)
        self.stride = int(stride) if stride is not None else self.ph

    def get_config(self):
        return {"kind": self.kind, "ph": self.ph, "pw": self.pw, "stride": self.stride}

    @classmethod
    def from_config(cls, d):
        return cls(d["ph"], d["pw"], stride=d["stride"])

    def _unfold(self, x):
        n, c, h, w = x.shape
        hc = _coverage(h, self.ph, self.stride)
        wc = _coverage(w, self.pw, self.stride)
        cols = im2col(x[:, :, :hc, :wc].reshape(n * c, 1, hc, wc),
                      self.ph, self.pw, self.stride, 0)
        ho = (hc - self.ph) // self.stride + 1
        wo = (wc - self.pw) // self.stride + 1
        return cols, (hc, wc), (ho, wo)

    def _fold(self, dcols, x_shape, crop, dtype):
        n, c, h, w = x_shape
        hc, wc = crop
        dxc = col2im(dcols, (n * c, 1, hc, wc), self.ph, self.pw, self.stride, 0)
        dx = np.zeros((n, c, h, w), dtype=dtype)
        dx[:, :, :hc, :wc] = dxc.reshape(n, c, hc, wc)
        return dx


class MaxPool2D(_Pool):
    """Per-window max; ties go to the first element in row-major window order."""

    kind = "maxpool"

    def forward(self, x, rng=None):
        cols, crop, (ho, wo) = self._unfold(x)
        idx = cols.argmax(axis=0)
        out = cols[idx, np.arange(cols.shape[1])]
        self._cache = (x.shape, crop, (ho, wo), idx, cols.shape)
        n, c = x.shape[0], x.shape[1]
        return np.ascontiguousarray(out.reshape(n, c, ho, wo))

    def backward(self, dy):
        x_shape, crop, (ho, wo), idx, cols_shape = self._require_cache()
        dcols = np.zeros(cols_shape, dtype=dy.dtype)
        dcols[idx, np.arange(cols_shape[1])] = dy.reshape(-1)
        return self._fold(dcols, x_shape, crop, dy.dtype)


class AvgPool2D(_Pool):
    """Per-window mean; backward spreads dy / (ph * pw) over the window."""

    kind = "avgpool"

    def forward(self, x, rng=None):
        cols, crop, (ho, wo) = self._unfold(x)
        out = cols.mean(axis=0)
        self._cache = (x.shape, crop, (ho, wo), cols.shape)
        n, c = x.shape[0], x.shape[1]
        return np.ascontiguousarray(out.reshape(n, c, ho, wo))

    def backward(self, dy):
        x_shape, crop, (ho, wo), cols_shape = self._require_cache()
        dcols = np.broadcast_to(dy.reshape(-1) / (self.ph * self.pw), cols_shape).astype(dy.dtype)
        return self._fold(dcols, x_shape, crop, dy.dtype)


class Flatten(Layer):
    """[N, ...] -> [N, prod(rest)]; backward is the inverse reshape."""

    kind = "flatten"

    def get_config(self):
        return {"kind": self.kind}

    @classmethod
    def from_config(cls, d):
        return cls()

    def forward(self, x, rng=None):
        if x.ndim < 2:
            raise ShapeError(f"flatten expects rank >= 2, got {x.shape}")
        self._cache = x.shape
        return np.ascontiguousarray(x.reshape(x.shape[0], -1))

    def backward(self, dy):
        return dy.reshape(self._require_cache())


class Dropout(Layer):
    """Inverted dropout: survivors scaled by 1/(1-p); identity in eval mode."""

    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        rate = float(rate)
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def get_config(self):
        return {"kind": self.kind, "rate": self.rate}

    @classmethod
    def from_config(cls, d):
        return cls(d["rate"])

    def forward(self, x, rng=None):
        if not self.training or self.rate == 0.0:
            self._cache = ("identity",)
            return x
        if rng is None:
            raise StateError("dropout in training mode requires an rng")
        keep = (rng.random(x.shape) >= self.rate)
        mask = keep.astype(x.dtype) / (1.0 - self.rate)
        self._cache = ("mask", mask)
        return x * mask

    def backward(self, dy):
        cache = self._require_cache()
        if cache[0] == "identity":
            return dy
        return dy * cache[1]


class LeakyReLU(Layer):
    """slope * x for x < 0, x otherwise; subgradient at 0 is 1."""

    kind = "leaky_relu"

    def __init__(self, slope=0.01):
        super().__init__()
        if slope < 0:
            raise ConfigError(f"leaky slope must be >= 0, got {slope}")
        self.slope = float(slope)

    def get_config(self):
        return {"kind": self.kind, "slope": self.slope}

    @classmethod
    def from_config(cls, d):
        return cls(d["slope"])

    def forward(self, x, rng=None):
        grad = np.where(x >= 0, x.dtype.type(1), x.dtype.type(self.slope))
        self._cache = grad
        return x * grad  # equals x on the positive branch, slope*x below 0

    def backward(self, dy):
        return dy * self._require_cache()


class Softmax(Layer):
    """Row-wise softmax head. Backward is the exact Jacobian-vector product;
    the training loop bypasses it with the fused cross-entropy gradient."""

    kind = "softmax"

    def get_config(self):
        return {"kind": self.kind}

    @classmethod
    def from_config(cls, d):
        return cls()

    def forward(self, x, rng=None):
        out = softmax(x)
        self._cache = out
        return out

    def backward(self, dy):
        out = self._require_cache()
        return out * (dy - (dy * out).sum(axis=1, keepdims=True))


class ResidualBlock(Layer):
    """conv-BN-act-conv-BN with an identity skip: out = act(F(x) + x)."""

    kind = "residual_block"

    def __init__(self, channels, kernel=3, slope=0.01, dtype=None, rng=None):
        super().__init__()
        self.channels = int(channels)
        self.kernel = int(kernel)
        self.slope = float(slope)
        self.conv1 = Conv2D(channels, channels, kernel, stride=1, padding="same",
                            dtype=dtype, rng=rng)
        self.bn1 = BatchNorm(channels, dtype=dtype)
        self.act1 = LeakyReLU(slope)
        self.conv2 = Conv2D(channels, channels, kernel, stride=1, padding="same",
                            dtype=dtype, rng=rng)
        self.bn2 = BatchNorm(channels, dtype=dtype)
        self.act_out = LeakyReLU(slope)

    def get_config(self):
        return {"kind": self.kind, "channels": self.channels, "kernel": self.kernel,
                "slope": self.slope}

    @classmethod
    def from_config(cls, d):
        return cls(d["channels"], kernel=d["kernel"], slope=d["slope"])

    def sublayers(self):
        return [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2),
                ("bn2", self.bn2)]

    def forward(self, x, rng=None):
        if x.shape[1] != self.channels:
            raise ShapeError(f"identity skip needs {self.channels} channels, got {x.shape[1]}")
        f = self.conv1.forward(x, rng)
        f = self.bn1.forward(f, rng)
        f = self.act1.forward(f, rng)
        f = self.conv2.forward(f, rng)
        f = self.bn2.forward(f, rng)
        self._cache = True
        return self.act_out.forward(f + x, rng)

    def backward(self, dy):
        self._require_cache()
        ds = self.act_out.backward(dy)      # gradient at F(x) + x
        df = self.bn2.backward(ds)
        df = self.conv2.backward(df)
        df = self.act1.backward(df)
        df = self.bn1.backward(df)
        df = self.conv1.backward(df)
        return df + ds                      # residual path + skip path


class DenseBlock(Layer):
    """Concatenative block: sub-layer l maps concat(x, y_1..y_{l-1}) to g new
    channels through conv-BN-act; the output is concat(x, y_1..y_L)."""

    kind = "dense_block"

    def __init__(self, in_channels, growth, n_layers, kernel=3, slope=0.01,
                 dtype=None, rng=None):
        super().__init__()
        self.in_channels = int(in_channels)
        self.growth = int(growth)
        self.n_layers = int(n_layers)
        self.kernel = int(kernel)
        self.slope = float(slope)
        self.convs = []
        self.bns = []
        self.acts = []
        for i in range(self.n_layers):
            cin = in_channels + i * growth
            self.convs.append(Conv2D(cin, growth, kernel, stride=1, padding="same",
                                     dtype=dtype, rng=rng))
            self.bns.append(BatchNorm(growth, dtype=dtype))
            self.acts.append(LeakyReLU(slope))

    @property
    def out_channels(self):
        return self.in_channels + self.n_layers * self.growth

    def get_config(self):
        return {"kind": self.kind, "in_channels": self.in_channels, "growth": self.growth,
                "n_layers": self.n_layers, "kernel": self.kernel, "slope": self.slope}

    @classmethod
    def from_config(cls, d):
        return cls(d["in_channels"], d["growth"], d["n_layers"], kernel=d["kernel"],
                   slope=d["slope"])

    def sublayers(self):
        out = []
        for i in range(self.n_layers):
            out.append((f"conv{i + 1}", self.convs[i]))
            out.append((f"bn{i + 1}", self.bns[i]))
        return out

    def forward(self, x, rng=None):
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"dense block expects {self.in_channels} channels, got {x.shape[1]}")
        feats = [x]
        for i in range(self.n_layers):
            inp = feats[0] if len(feats) == 1 else np.concatenate(feats, axis=1)
            if any(f.shape[2:] != x.shape[2:] for f in feats):
                raise ShapeError("spatial dimensions of concatenands disagree")
            y = self.convs[i].forward(inp, rng)
            y = self.bns[i].forward(y, rng)
            y = self.acts[i].forward(y, rng)
            feats.append(y)
        self._cache = True
        return feats[0] if len(feats) == 1 else np.concatenate(feats, axis=1)

    def backward(self, dy):
        self._require_cache()
        # Split the output gradient along the concat axis into one pending
        # gradient per contributor (the input plus each sub-layer output).
        bounds = [0, self.in_channels]
        for _ in range(self.n_layers):
            bounds.append(bounds[-1] + self.growth)
        pending = [np.ascontiguousarray(dy[:, bounds[i]:bounds[i + 1]])
                   for i in range(len(bounds) - 1)]
        for i in reversed(range(self.n_layers)):
            d = self.acts[i].backward(pending[i + 1])
            d = self.bns[i].backward(d)
            d = self.convs[i].backward(d)   # gradient of concat(feats[0..i])
            lo = 0
            for j in range(i + 1):
                hi = lo + (self.in_channels if j == 0 else self.growth)
                pending[j] = pending[j] + d[:, lo:hi]
                lo = hi
        return pending[0]


class DepthwiseSeparableConv(Layer):
    """Depthwise kh x kw filter per channel followed by a pointwise 1x1 conv."""

    kind = "sepconv2d"

    def __init__(self, in_channels, out_channels, kernel=3, stride=1, padding="same",
                 dtype=None, rng=None):
        super().__init__()
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel = int(kernel)
        self.stride = int(stride)
        self.padding = padding
        self.depthwise = DepthwiseConv2D(in_channels, kernel, stride=stride,
                                         padding=padding, dtype=dtype, rng=rng)
        self.pointwise = Conv2D(in_channels, out_channels, 1, stride=1, padding="valid",
                                dtype=dtype, rng=rng)

    def get_config(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding}

    @classmethod
    def from_config(cls, d):
        return cls(d["in_channels"], d["out_channels"], kernel=d["kernel"],
                   stride=d["stride"], padding=d["padding"])

    def sublayers(self):
        return [("depthwise", self.depthwise), ("pointwise", self.pointwise)]

    def forward(self, x, rng=None):
        self._cache = True
        return self.pointwise.forward(self.depthwise.forward(x, rng), rng)

    def backward(self, dy):
        self._require_cache()
        return self.depthwise.backward(self.pointwise.backward(dy))


LAYER_KINDS = {
    cls.kind: cls
    for cls in (Conv2D, DepthwiseConv2D, Dense, BatchNorm, MaxPool2D, AvgPool2D,
                Flatten, Dropout, LeakyReLU, Softmax, ResidualBlock, DenseBlock,
                DepthwiseSeparableConv)
}

# Layer kinds whose output is a convolutional feature map, i.e. valid
# Grad-CAM targets.
CONV_KINDS = ("conv2d", "depthwise_conv2d", "sepconv2d")


def layer_from_config(d):
    kind = d.get("kind")
    if kind not in LAYER_KINDS:
        raise ConfigError(f"unknown layer kind {kind!r}")
    return LAYER_KINDS[kind].from_config(d)


class Model:
    """Ordered composition of named layers with a shared train/eval mode."""

    def __init__(self, layers):
        names = [name for name, _ in layers]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate layer names: {names}")
        self.layers = list(layers)
        self.mode = "train"
        self.meta = {}
        self._outputs = None

    def set_mode(self, mode):
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        self.mode = mode
        for _, layer in self.layers:
            layer.set_training(mode == "train")

    def forward(self, x, rng=None):
        outputs = []
        for _, layer in self.layers:
            x = layer.forward(x, rng)
            outputs.append(x)
        self._outputs = outputs
        return x

    def backward(self, dy):
        for _, layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def backward_logits(self, dlogits):
        """Backward pass starting from the pre-softmax logits, for use with
        the fused softmax + cross-entropy gradient."""
        if not self.layers or self.layers[-1][1].kind != "softmax":
            raise StateError("backward_logits requires a softmax output layer")
        dy = dlogits
        for _, layer in reversed(self.layers[:-1]):
            dy = layer.backward(dy)
        return dy

    def layer_names(self):
        return [name for name, _ in self.layers]

    def get_layer(self, name):
        for n, layer in self.layers:
            if n == name:
                return layer
        raise ConfigError(f"no layer named {name!r}; valid names: {self.layer_names()}")

    def layer_index(self, name):
        for i, (n, _) in enumerate(self.layers):
            if n == name:
                return i
        raise ConfigError(f"no layer named {name!r}; valid names: {self.layer_names()}")

    def conv_layer_names(self):
        return [name for name, layer in self.layers if layer.kind in CONV_KINDS]

    def _slots(self, attr):
        slots = []

        def walk(layer, prefix):
            store = getattr(layer, attr)
            for key in store:
                slots.append((f"{prefix}.{key}", layer, key))
            for sub_name, sub in layer.sublayers():
                walk(sub, f"{prefix}.{sub_name}")

        for name, layer in self.layers:
            walk(layer, name)
        return slots

    def param_slots(self):
        return self._slots("params")

    def state_slots(self):
        return self._slots("state")

    def named_params(self):
        return {path: layer.params[key] for path, layer, key in self.param_slots()}

    def named_grads(self):
        return {path: layer.grads.get(key) for path, layer, key in self.param_slots()}

    def named_state(self):
        return {path: layer.state[key] for path, layer, key in self.state_slots()}

    def snapshot(self):
        """Deep copy of all parameters and persistent state."""
        return {
            "params": {p: arr.copy() for p, arr in self.named_params().items()},
            "state": {p: arr.copy() for p, arr in self.named_state().items()},
        }

    def restore(self, snap):
        for path, layer, key in self.param_slots():
            layer.params[key] = snap["params"][path].copy()
        for path, layer, key in self.state_slots():
            layer.state[key] = snap["state"][path].copy()

    def topology(self):
        return [{"name": name, **layer.get_config()} for name, layer in self.layers]

    @classmethod
    def from_topology(cls, topo):
        return cls([(d["name"], layer_from_config(d)) for d in topo])
