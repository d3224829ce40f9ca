"""Layer vocabulary: conv, batchnorm, relu, pooling, dense, dropout, softmax.

Every layer carries its parameters, gradient buffers, a trainable flag, and a
forward cache used by backward. Feature maps are (N, H, W, C) float arrays.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError, StateError


def _im2col(x, kh, kw, stride, pads, pad_value=0.0):
    """Window-extract a (N,H,W,C) map into (N,Ho,Wo,kh,kw,C)."""
    (pt, pb), (pl, pr) = pads
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)),
                   constant_values=pad_value)
    n, hp, wp, c = x.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    col = np.empty((n, ho, wo, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            col[:, :, :, i, j, :] = x[:, i:i + ho * stride:stride,
                                      j:j + wo * stride:stride, :]
    return col


def _col2im(col, in_shape, stride, pads):
    """Scatter-add the window gradient back onto the (unpadded) input."""
    n, h, w, c = in_shape
    (pt, pb), (pl, pr) = pads
    _, ho, wo, kh, kw, _ = col.shape
    out = np.zeros((n, h + pt + pb, w + pl + pr, c), dtype=col.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + ho * stride:stride,
                j:j + wo * stride:stride, :] += col[:, :, :, i, j, :]
    return out[:, pt:pt + h, pl:pl + w, :]


class Layer:
    """Base: parameter registry, gradient buffers, trainable flag, cache."""

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}
        self.trainable = True
        self.cache = None

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, upstream):
        raise NotImplementedError

    def _require_cache(self):
        if self.cache is None:
            raise StateError(f"{self.kind}: backward called before forward")

    def zero_grads(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def param_count(self):
        """(trainable, non_trainable) scalar counts for the ledger."""
        p = sum(v.size for v in self.params.values())
        s = sum(v.size for v in self.state.values())
        return (p, s) if self.trainable else (0, p + s)

    def astype(self, dtype):
        """Cast parameters/state in place; used by the float64 shadow mode."""
        for d in (self.params, self.grads, self.state):
            for k in d:
                d[k] = d[k].astype(dtype)
        return self


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, filters, kernel, in_channels, stride=1,
                 padding=T.SAME_PRESERVING, seed=0, dtype=T.DEFAULT_DTYPE):
        super().__init__()
        self.filters = filters
        self.kernel = kernel
        self.in_channels = in_channels
        self.stride = stride
        self.padding = padding
        self.params["weight"] = T.he_normal(
            (kernel, kernel, in_channels, filters), seed, dtype)
        self.params["bias"] = T.zeros((filters,), dtype)
        self.zero_grads()

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(f"conv2d expects (N,H,W,{self.in_channels}), got {x.shape}")
        spec = T.Shape2DSpec(x.shape[1], x.shape[2], self.kernel, self.kernel,
                             self.stride, self.padding)
        pads = T.pad_amounts(spec)
        col = _im2col(x, self.kernel, self.kernel, self.stride, pads)
        n, ho, wo = col.shape[:3]
        k = self.kernel * self.kernel * self.in_channels
        w2 = self.params["weight"].reshape(k, self.filters)
        y = col.reshape(n * ho * wo, k) @ w2 + self.params["bias"]
        self.cache = (col, x.shape, pads)
        return y.reshape(n, ho, wo, self.filters)

    def backward(self, upstream):
        self._require_cache()
        col, in_shape, pads = self.cache
        n, ho, wo = col.shape[:3]
        k = self.kernel * self.kernel * self.in_channels
        g2 = upstream.reshape(n * ho * wo, self.filters)
        col2 = col.reshape(n * ho * wo, k)
        self.grads["weight"] += (col2.T @ g2).reshape(self.params["weight"].shape)
        self.grads["bias"] += g2.sum(axis=0)
        dcol = (g2 @ self.params["weight"].reshape(k, self.filters).T)
        dcol = dcol.reshape(n, ho, wo, self.kernel, self.kernel, self.in_channels)
        return _col2im(dcol, in_shape, self.stride, pads)

    def param_count(self):
        # K*K*C*F weights + F biases, all trainable when the flag is set
        return super().param_count()


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, channels, momentum=0.99, epsilon=1e-3,
                 dtype=T.DEFAULT_DTYPE):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.epsilon = epsilon
        self.params["scale"] = T.ones((channels,), dtype)
        self.params["shift"] = T.zeros((channels,), dtype)
        self.state["moving_mean"] = T.zeros((channels,), dtype)
        self.state["moving_var"] = T.ones((channels,), dtype)
        self.zero_grads()

    def forward(self, x, train=False, rng=None):
        if x.shape[-1] != self.channels:
            raise ShapeError(f"batchnorm expects {self.channels} channels, got {x.shape}")
        axes = tuple(range(x.ndim - 1))
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = np.asarray(self.momentum, dtype=x.dtype)
            one = np.asarray(1.0, dtype=x.dtype)
            self.state["moving_mean"] = (m * self.state["moving_mean"]
                                         + (one - m) * mean)
            self.state["moving_var"] = (m * self.state["moving_var"]
                                        + (one - m) * var)
        else:
            mean = self.state["moving_mean"]
            var = self.state["moving_var"]
        inv_std = 1.0 / np.sqrt(var + np.asarray(self.epsilon, dtype=x.dtype))
        xhat = (x - mean) * inv_std
        self.cache = (xhat, inv_std, axes, train, x.shape)
        return self.params["scale"] * xhat + self.params["shift"]

    def backward(self, upstream):
        self._require_cache()
        xhat, inv_std, axes, train, shape = self.cache
        self.grads["scale"] += (upstream * xhat).sum(axis=axes)
        self.grads["shift"] += upstream.sum(axis=axes)
        g = upstream * self.params["scale"]
        if not train:
            return g * inv_std
        m = np.prod([shape[a] for a in axes])
        # full batch-statistics derivative
        return (inv_std / m) * (m * g - g.sum(axis=axes)
                                - xhat * (g * xhat).sum(axis=axes))


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        self.cache = x > 0  # subgradient at 0 is 0
        return np.maximum(x, 0)

    def backward(self, upstream):
        self._require_cache()
        return upstream * self.cache


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, kernel=2, stride=2, padding=T.VALID_FLOOR):
        super().__init__()
        self.kernel = kernel
        self.stride = stride
        self.padding = padding

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4:
            raise ShapeError(f"maxpool2d expects rank-4 input, got {x.shape}")
        spec = T.Shape2DSpec(x.shape[1], x.shape[2], self.kernel, self.kernel,
                             self.stride, self.padding)
        pads = T.pad_amounts(spec)
        col = _im2col(x, self.kernel, self.kernel, self.stride, pads,
                      pad_value=-np.inf)
        n, ho, wo = col.shape[:3]
        c = x.shape[3]
        flat = col.reshape(n, ho, wo, self.kernel * self.kernel, c)
        arg = flat.argmax(axis=3)  # first max wins: deterministic routing
        out = np.take_along_axis(flat, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        self.cache = (arg, flat.shape, x.shape, pads)
        return out

    def backward(self, upstream):
        self._require_cache()
        arg, flat_shape, in_shape, pads = self.cache
        dflat = np.zeros(flat_shape, dtype=upstream.dtype)
        np.put_along_axis(dflat, arg[:, :, :, None, :],
                          upstream[:, :, :, None, :], axis=3)
        n, ho, wo = flat_shape[:3]
        dcol = dflat.reshape(n, ho, wo, self.kernel, self.kernel, in_shape[3])
        return _col2im(dcol, in_shape, self.stride, pads)


class GlobalAvgPool(Layer):
    kind = "globalavgpool"

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4:
            raise ShapeError(f"globalavgpool expects rank-4 input, got {x.shape}")
        self.cache = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, upstream):
        self._require_cache()
        n, h, w, c = self.cache
        g = upstream / np.asarray(h * w, dtype=upstream.dtype)
        return np.broadcast_to(g[:, None, None, :], self.cache).copy()


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False, rng=None):
        self.cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, upstream):
        self._require_cache()
        return upstream.reshape(self.cache)


class Dense(Layer):
    kind = "dense"

    def __init__(self, units, in_features, seed=0, dtype=T.DEFAULT_DTYPE):
        super().__init__()
        self.units = units
        self.in_features = in_features
        self.params["weight"] = T.he_normal((in_features, units), seed, dtype)
        self.params["bias"] = T.zeros((units,), dtype)
        self.zero_grads()

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense expects (N,{self.in_features}), got {x.shape}")
        self.cache = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, upstream):
        self._require_cache()
        x = self.cache
        self.grads["weight"] += x.T @ upstream
        self.grads["bias"] += upstream.sum(axis=0)
        return upstream @ self.params["weight"].T


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ShapeError(f"dropout rate must be in [0,1), got {rate}")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self.cache = np.asarray(1.0, dtype=x.dtype)
            return x
        if rng is None:
            raise StateError("dropout in train mode requires an rng")
        keep = (rng.random(x.shape) >= self.rate)
        mask = keep.astype(x.dtype) / np.asarray(1.0 - self.rate, dtype=x.dtype)
        self.cache = mask
        return x * mask

    def backward(self, upstream):
        self._require_cache()
        return upstream * self.cache


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, train=False, rng=None):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        self.cache = (p, x)
        return p

    def backward(self, upstream):
        self._require_cache()
        p, _ = self.cache
        return p * (upstream - (upstream * p).sum(axis=-1, keepdims=True))

    @property
    def logits(self):
        """Pre-softmax activations from the last forward call."""
        self._require_cache()
        return self.cache[1]


class Add(Layer):
    """Residual merge; the one layer with two inputs."""

    kind = "add"

    def forward(self, a, b=None, train=False, rng=None):
        if b is None or a.shape != b.shape:
            raise ShapeError("add expects two equal-shaped inputs")
        self.cache = a.shape
        return a + b

    def backward(self, upstream):
        self._require_cache()
        return upstream, upstream


def set_trainable(layer: Layer, flag: bool) -> Layer:
    layer.trainable = bool(flag)
    return layer
