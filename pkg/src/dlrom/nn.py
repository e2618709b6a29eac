"""Minimal neural-network engine with hand-written adjoints.

Tensors are plain numpy arrays, batch-first. Feature maps are channels-last
``(batch, H, W, C)``. Layer kinds:

* ``dense``: ``W`` has shape ``(out, in)``, ``y = act(x W^T + b)``.
* ``conv``: ``W`` has shape ``(k, k, C_in, C_out)``; cross-correlation with
  SAME padding (extra pad on the bottom/right), output extent ``ceil(H/stride)``.
* ``tconv``: ``W`` has shape ``(k, k, C_out, C_in)``, i.e. the kernel of the
  convolution it is the adjoint of; output extent ``H * stride``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEBUG = os.environ.get("DLROM_DEBUG", "") not in ("", "0")

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None


class NonFiniteError(FloatingPointError):
    pass


def _check(name, arr):
    if DEBUG and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values after {name}")
    return arr


# --- activation ------------------------------------------------------------


def elu(z):
    z = np.asarray(z)
    # expm1(z) > z for z < 0, and expm1(0) = 0
    return np.maximum(np.expm1(np.minimum(z, 0)), z)


def elu_grad(z):
    z = np.asarray(z)
    return np.where(z >= 0, 1.0, np.exp(np.minimum(z, 0))).astype(z.dtype, copy=False)


def _activate(kind, z):
    return elu(z) if kind == "elu" else z


def _activate_backward(kind, z, y, dy):
    if kind != "elu":
        return dy
    # derivative is 1 where y >= 0 and exp(z) = y + 1 where y < 0
    g = np.minimum(y, 0)
    g += 1.0
    g *= dy
    return g


# --- parameters ------------------------------------------------------------


@dataclass
class LayerParams:
    kind: str
    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    activation: str = "elu"
    padding: str = "same"

    def __post_init__(self):
        if self.kind not in ("dense", "conv", "tconv"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ("elu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.padding != "same":
            raise ValueError("only SAME padding is supported")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        w, b = self.weights, self.bias
        if self.kind == "dense":
            ok = w.ndim == 2 and b.shape == (w.shape[0],)
        elif self.kind == "conv":
            ok = w.ndim == 4 and w.shape[0] == w.shape[1] and b.shape == (w.shape[3],)
        else:
            ok = w.ndim == 4 and w.shape[0] == w.shape[1] and b.shape == (w.shape[2],)
        if not ok:
            raise ValueError(f"inconsistent {self.kind} shapes: W{w.shape}, b{b.shape}")

    @property
    def fan_in(self):
        w = self.weights
        if self.kind == "dense":
            return w.shape[1]
        if self.kind == "conv":
            return w.shape[0] * w.shape[1] * w.shape[2]
        return w.shape[0] * w.shape[1] * w.shape[3]

    def arrays(self):
        return [self.weights, self.bias]

    def astype(self, dtype):
        return LayerParams(
            self.kind, self.weights.astype(dtype), self.bias.astype(dtype),
            self.stride, self.activation, self.padding,
        )


def he_uniform_init(shape, fan_in, rng_seed=None, dtype=np.float64):
    """Entries i.i.d. uniform on ``[-sqrt(6/fan_in), sqrt(6/fan_in)]``."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_dense(n_in, n_out, rng, activation="elu", dtype=np.float64):
    w = he_uniform_init((n_out, n_in), n_in, rng, dtype)
    return LayerParams("dense", w, np.zeros(n_out, dtype), 1, activation)


def init_conv(k, c_in, c_out, stride, rng, activation="elu", dtype=np.float64):
    w = he_uniform_init((k, k, c_in, c_out), k * k * c_in, rng, dtype)
    return LayerParams("conv", w, np.zeros(c_out, dtype), stride, activation)


def init_tconv(k, c_in, c_out, stride, rng, activation="elu", dtype=np.float64):
    w = he_uniform_init((k, k, c_out, c_in), k * k * c_in, rng, dtype)
    return LayerParams("tconv", w, np.zeros(c_out, dtype), stride, activation)


# --- SAME-padding geometry -------------------------------------------------


def same_padding(size, k, stride):
    """Output extent and (before, after) padding of a SAME convolution."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def _im2col(x, k, stride):
    """Patches of a SAME convolution: ``(B*Ho*Wo, k*k*C)`` ordered (kh, kw, C)."""
    b, h, w, c = x.shape
    ho, ph0, ph1 = same_padding(h, k, stride)
    wo, pw0, pw1 = same_padding(w, k, stride)
    if h + ph0 + ph1 < k or w + pw0 + pw1 < k:
        raise ValueError("kernel larger than padded input")
    xp = np.pad(x, ((0, 0), (ph0, ph1), (pw0, pw1), (0, 0))) if (ph0 or ph1 or pw0 or pw1) else x
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b * ho * wo, k * k * c)
    return cols, (ho, wo)


def _scatter_patches_numpy(patches, out, stride):
    _, ho, wo, k, _, _ = patches.shape
    for i in range(k):
        hi = i + stride * (ho - 1) + 1
        for j in range(k):
            wj = j + stride * (wo - 1) + 1
            out[:, i:hi:stride, j:wj:stride] += patches[:, :, :, i, j]
    return out


if numba is not None:

    @numba.njit(cache=True)
    def _scatter_patches_compiled(patches, out, stride):
        b, ho, wo, k, _, c = patches.shape
        for n in range(b):
            for oh in range(ho):
                for ow in range(wo):
                    for i in range(k):
                        r = oh * stride + i
                        for j in range(k):
                            q = ow * stride + j
                            for ch in range(c):
                                out[n, r, q, ch] += patches[n, oh, ow, i, j, ch]
        return out

else:  # pragma: no cover
    _scatter_patches_compiled = None

USE_COMPILED = _scatter_patches_compiled is not None


def _col2im(cols, in_shape, k, stride):
    """Adjoint of :func:`_im2col`: scatter-add patches back onto the input grid.

    Summation order is fixed, so results are reproducible run to run.
    """
    b, h, w, c = in_shape
    ho, ph0, ph1 = same_padding(h, k, stride)
    wo, pw0, pw1 = same_padding(w, k, stride)
    patches = np.ascontiguousarray(cols).reshape(b, ho, wo, k, k, c)
    out = np.zeros((b, h + ph0 + ph1, w + pw0 + pw1, c), dtype=cols.dtype)
    if USE_COMPILED and c > 1:
        _scatter_patches_compiled(patches, out, stride)
    else:
        _scatter_patches_numpy(patches, out, stride)
    return out[:, ph0:ph0 + h, pw0:pw0 + w]


# --- layer forward / backward ----------------------------------------------


def layer_forward(p: LayerParams, x):
    """Returns ``(y, cache)``; the cache feeds :func:`layer_backward`."""
    if p.kind == "dense":
        if x.ndim != 2 or x.shape[1] != p.weights.shape[1]:
            raise ValueError(f"dense layer expects width {p.weights.shape[1]}, got {x.shape}")
        z = x @ p.weights.T + p.bias
        aux = x
    elif p.kind == "conv":
        k, _, c_in, c_out = p.weights.shape
        if x.ndim != 4 or x.shape[3] != c_in:
            raise ValueError(f"conv layer expects {c_in} channels, got {x.shape}")
        cols, (ho, wo) = _im2col(x, k, p.stride)
        z = (cols @ p.weights.reshape(-1, c_out)).reshape(x.shape[0], ho, wo, c_out) + p.bias
        aux = (cols, x.shape)
    else:
        k, _, c_out, c_in = p.weights.shape
        if x.ndim != 4 or x.shape[3] != c_in:
            raise ValueError(f"tconv layer expects {c_in} channels, got {x.shape}")
        b, h, w, _ = x.shape
        out_shape = (b, h * p.stride, w * p.stride, c_out)
        cols = x.reshape(-1, c_in) @ p.weights.reshape(-1, c_in).T
        z = _col2im(cols, out_shape, k, p.stride) + p.bias
        aux = x
    y = _check(f"{p.kind} forward", _activate(p.activation, z))
    return y, (aux, z, y)


def layer_backward(p: LayerParams, cache, dy, need_dx=True):
    """Returns ``(dx, dW, db)`` given the upstream gradient ``dy``."""
    aux, z, y = cache
    dz = _activate_backward(p.activation, z, y, dy)
    if p.kind == "dense":
        x = aux
        dW = dz.T @ x
        db = dz.sum(axis=0)
        dx = dz @ p.weights if need_dx else None
    elif p.kind == "conv":
        cols, x_shape = aux
        k, _, c_in, c_out = p.weights.shape
        dz2 = dz.reshape(-1, c_out)
        dW = (cols.T @ dz2).reshape(p.weights.shape)
        db = dz2.sum(axis=0)
        dx = _col2im(dz2 @ p.weights.reshape(-1, c_out).T, x_shape, k, p.stride) if need_dx else None
    else:
        x = aux
        k, _, c_out, c_in = p.weights.shape
        cols, _ = _im2col(dz, k, p.stride)
        x2 = x.reshape(-1, c_in)
        dW = (cols.T @ x2).reshape(p.weights.shape)
        db = dz.sum(axis=(0, 1, 2))
        dx = (cols @ p.weights.reshape(-1, c_in)).reshape(x.shape) if need_dx else None
    return dx, dW, db


def dense_forward(p, x):
    return layer_forward(p, x)[0]


def dense_backward(p, x, dy):
    _, cache = layer_forward(p, x)
    return layer_backward(p, cache, dy)


def conv2d_forward(p, x):
    return layer_forward(p, x)[0]


def conv2d_backward(p, x, dy):
    _, cache = layer_forward(p, x)
    return layer_backward(p, cache, dy)


def tconv2d_forward(p, x):
    return layer_forward(p, x)[0]


def tconv2d_backward(p, x, dy):
    _, cache = layer_forward(p, x)
    return layer_backward(p, cache, dy)


# --- sequential networks ---------------------------------------------------


def network_forward(layers, x):
    """Compose layer forwards; a dense layer flattens a feature-map input."""
    caches = []
    for i, p in enumerate(layers):
        shape = x.shape
        if p.kind == "dense" and x.ndim > 2:
            x = x.reshape(x.shape[0], -1)
        try:
            x, cache = layer_forward(p, x)
        except ValueError as exc:
            raise ValueError(f"layer {i} ({p.kind}): {exc}") from exc
        caches.append((shape, cache))
    return x, caches


def network_backward(layers, caches, dy, need_dx=False):
    """Gradients of every layer (list of ``(dW, db)``) and optionally the input."""
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        shape, cache = caches[i]
        dx, dW, db = layer_backward(layers[i], cache, dy, need_dx=need_dx or i > 0)
        grads[i] = (dW, db)
        if dx is not None:
            dy = dx.reshape(shape)
    return (dy if need_dx else None), grads


# --- ADAM ------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params, grads):
    """In-place ADAM update of the arrays in ``params``; returns ``(params, state)``."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and moment lists differ in length")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    step = state.lr / c1
    inv_sqrt_c2 = 1.0 / math.sqrt(c2)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        tmp = g * g
        tmp *= 1.0 - b2
        v += tmp
        # p -= lr * (m / c1) / (sqrt(v / c2) + eps)
        np.sqrt(v, out=tmp)
        tmp *= inv_sqrt_c2
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= step
        p -= tmp
    return params, state
