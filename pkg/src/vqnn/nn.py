"""Small CNN kernel with hand-written backprop.

Arrays are float64 and batched ``[N, C, H, W]``; a single ``[C, H, W]`` image
is accepted wherever a batch is.  Convolutions are valid (unpadded)
cross-correlations; pooling windows are non-overlapping and drop any
remainder rows/columns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CacheError, ShapeError


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0


def _batched(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == rank - 1:
        return x[None], True
    if x.ndim != rank:
        raise ShapeError(f"expected rank {rank - 1} or {rank} input, got shape {x.shape}")
    return x, False


# --- functional kernels ----------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int) -> int:
    return (size - k) // stride + 1


def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    # [N, C, Ho, Wo, k, k]
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    x, single = _batched(x, 4)
    out_ch, in_ch, kh, kw = weight.shape
    if x.shape[1] != in_ch:
        raise ShapeError(f"conv expects {in_ch} input channels, got {x.shape[1]}")
    if kh != kw:
        raise ShapeError("only square kernels are supported")
    if x.shape[2] < kh or x.shape[3] < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than input {x.shape[2:]}")
    win = _windows(x, kh, stride)
    y = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    y = y + bias[None, :, None, None]
    return y[0] if single else y


def conv2d_backward(grad: np.ndarray, x: np.ndarray, weight: np.ndarray, stride: int = 1):
    """Returns ``(dx, dweight, dbias)`` for upstream ``grad`` of shape ``[N, O, Ho, Wo]``."""
    x, single = _batched(x, 4)
    grad, _ = _batched(grad, 4)
    k = weight.shape[2]
    win = _windows(x, k, stride)
    dw = np.tensordot(grad, win, axes=([0, 2, 3], [0, 2, 3]))
    db = grad.sum(axis=(0, 2, 3))
    dx = np.zeros_like(x)
    ho, wo = grad.shape[2], grad.shape[3]
    for i in range(k):
        for j in range(k):
            contrib = np.einsum("nohw,oc->nchw", grad, weight[:, :, i, j])
            dx[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += contrib
    return (dx[0] if single else dx), dw, db


def _pool_view(x: np.ndarray, size: int) -> np.ndarray:
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise ShapeError(f"pool size {size} larger than input {h}x{w}")
    crop = x[:, :, :ho * size, :wo * size]
    # [N, C, Ho, Wo, size*size]
    return crop.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)


def pool_forward(x: np.ndarray, size: int, kind: str = "max") -> np.ndarray:
    x, single = _batched(x, 4)
    view = _pool_view(x, size)
    if kind == "max":
        y = view.max(axis=-1)
    elif kind == "avg":
        y = view.mean(axis=-1)
    else:
        raise ValueError(f"unknown pool kind {kind!r}")
    return y[0] if single else y


def pool_backward(grad: np.ndarray, x: np.ndarray, size: int, kind: str = "max") -> np.ndarray:
    x, single = _batched(x, 4)
    grad, _ = _batched(grad, 4)
    view = _pool_view(x, size)
    if kind == "max":
        # ties route the gradient to the first maximum only
        hit = np.zeros_like(view)
        np.put_along_axis(hit, view.argmax(axis=-1)[..., None], 1.0, axis=-1)
        local = hit * grad[..., None]
    else:
        local = np.broadcast_to(grad[..., None] / (size * size), view.shape)
    n, c, ho, wo, _ = view.shape
    dx = np.zeros_like(x)
    dx[:, :, :ho * size, :wo * size] = (
        local.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * size, wo * size))
    return dx[0] if single else dx


def activation_forward(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(grad: np.ndarray, x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.where(x > 0, grad, 0.0)
    if kind == "tanh":
        return grad * (1.0 - np.tanh(x) ** 2)
    raise ValueError(f"unknown activation {kind!r}")


def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    x, single = _batched(x, 2)
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense expects {weight.shape[1]} inputs, got {x.shape[1]}")
    y = x @ weight.T + bias
    return y[0] if single else y


def dense_backward(grad: np.ndarray, x: np.ndarray, weight: np.ndarray):
    x, single = _batched(x, 2)
    grad, _ = _batched(grad, 2)
    dx = grad @ weight
    return (dx[0] if single else dx), grad.T @ x, grad.sum(axis=0)


# --- layers ----------------------------------------------------------------------

class Layer:
    _cache: np.ndarray | None = None

    def params(self) -> list[Param]:
        return []

    def _cached(self) -> np.ndarray:
        if self._cache is None:
            raise CacheError(f"{type(self).__name__}.backward called before forward")
        return self._cache


def _uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2D(Layer):
    def __init__(self, name: str, in_ch: int, out_ch: int, k: int, stride: int, rng: np.random.Generator):
        if k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {k}")
        fan_in = in_ch * k * k
        self.stride = stride
        self.weight = Param(f"{name}.weight", _uniform(rng, (out_ch, in_ch, k, k), fan_in))
        self.bias = Param(f"{name}.bias", _uniform(rng, (out_ch,), fan_in))

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        self._cache = x
        return conv2d_forward(x, self.weight.value, self.bias.value, self.stride)

    def backward(self, grad):
        dx, dw, db = conv2d_backward(grad, self._cached(), self.weight.value, self.stride)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class Pool2D(Layer):
    def __init__(self, size: int, kind: str = "max"):
        self.size, self.kind = size, kind

    def forward(self, x):
        self._cache = x
        return pool_forward(x, self.size, self.kind)

    def backward(self, grad):
        return pool_backward(grad, self._cached(), self.size, self.kind)


class Activation(Layer):
    def __init__(self, kind: str):
        activation_forward(np.zeros(1), kind)
        self.kind = kind

    def forward(self, x):
        self._cache = x
        return activation_forward(x, self.kind)

    def backward(self, grad):
        return activation_backward(grad, self._cached(), self.kind)


class Flatten(Layer):
    def forward(self, x):
        self._cache = np.asarray(x.shape)
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(tuple(self._cached()))


NORMALIZE_KINDS = ("none", "center", "standardize")
NORM_EPS = 1e-6


class InputNorm(Layer):
    """Per-image input shift (``center``) or shift-and-scale (``standardize``)."""

    def __init__(self, kind: str = "none"):
        if kind not in NORMALIZE_KINDS:
            raise ValueError(f"unknown normalization {kind!r}")
        self.kind = kind

    def forward(self, x):
        if self.kind == "none":
            return x
        axes = tuple(range(1, x.ndim))
        xc = x - x.mean(axis=axes, keepdims=True)
        if self.kind == "center":
            self._cache = None
            return xc
        sd = np.sqrt((xc ** 2).mean(axis=axes, keepdims=True)) + NORM_EPS
        y = xc / sd
        self._cache = (y, sd)
        return y

    def backward(self, grad):
        if self.kind == "none":
            return grad
        axes = tuple(range(1, grad.ndim))
        g = grad - grad.mean(axis=axes, keepdims=True)
        if self.kind == "center":
            return g
        y, sd = self._cached()
        sigma = sd - NORM_EPS
        ratio = np.divide(sd, sigma, out=np.ones_like(sd), where=sigma > 0)  # y == 0 where sigma == 0
        return (g - y * ratio * (grad * y).mean(axis=axes, keepdims=True)) / sd


class Dense(Layer):
    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = Param(f"{name}.weight", _uniform(rng, (n_out, n_in), n_in))
        self.bias = Param(f"{name}.bias", _uniform(rng, (n_out,), n_in))

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        self._cache = x
        return dense_forward(x, self.weight.value, self.bias.value)

    def backward(self, grad):
        dx, dw, db = dense_backward(grad, self._cached(), self.weight.value)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


# --- trunk -------------------------------------------------------------------------

@dataclass(frozen=True)
class TrunkConfig:
    """conv -> act -> pool -> conv -> act -> pool -> flatten -> dense stack.

    ``conv1``/``conv2`` are ``(out_channels, kernel, stride)``.  Hidden dense
    layers get the activation; the last width must be 1 and stays linear.
    """

    input_shape: tuple[int, int, int] = (1, 28, 28)
    conv1: tuple[int, int, int] = (8, 3, 1)
    conv2: tuple[int, int, int] = (16, 3, 1)
    pool: str = "max"
    pool_size: int = 2
    activation: str = "relu"
    dense: tuple[int, ...] = (32, 1)
    normalize: str = "none"

    def __post_init__(self):
        for name in ("input_shape", "conv1", "conv2", "dense"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.input_shape) != 3 or len(self.conv1) != 3 or len(self.conv2) != 3:
            raise ValueError("input_shape, conv1 and conv2 need three entries each")
        if not self.dense or self.dense[-1] != 1:
            raise ValueError("final dense width must be 1")
        if self.pool not in ("max", "avg") or self.pool_size < 1:
            raise ValueError(f"bad pooling {self.pool!r}/{self.pool_size}")
        activation_forward(np.zeros(1), self.activation)
        if self.normalize not in NORMALIZE_KINDS:
            raise ValueError(f"normalize must be one of {NORMALIZE_KINDS}, got {self.normalize!r}")
        for _, k, s in (self.conv1, self.conv2):
            if k % 2 == 0 or s < 1:
                raise ValueError("conv kernels must be odd with stride >= 1")
        self.feature_shape()

    def feature_shape(self) -> tuple[int, int, int]:
        """Shape entering the flatten layer; raises if any stage collapses."""
        c, h, w = self.input_shape
        for out_ch, k, s in (self.conv1, self.conv2):
            h, w = conv_output_size(h, k, s), conv_output_size(w, k, s)
            h, w = h // self.pool_size, w // self.pool_size
            if h < 1 or w < 1:
                raise ShapeError(f"trunk {self} collapses spatial dims for input {self.input_shape}")
            c = out_ch
        return c, h, w

    def to_kv(self) -> dict[str, object]:
        return {f"trunk.{k}": v for k, v in asdict(self).items()}

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "TrunkConfig":
        def ints(key):
            return tuple(int(v) for v in kv[f"trunk.{key}"].split(","))
        return cls(
            input_shape=ints("input_shape"), conv1=ints("conv1"), conv2=ints("conv2"),
            pool=kv["trunk.pool"], pool_size=int(kv["trunk.pool_size"]),
            activation=kv["trunk.activation"], dense=ints("dense"),
            normalize=kv.get("trunk.normalize", "none"),
        )


class Trunk:
    """Classical feature extractor ending in a single unbounded output."""

    def __init__(self, config: TrunkConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        cin = config.input_shape[0]
        layers: list[Layer] = [InputNorm(config.normalize)]
        for i, (cout, k, s) in enumerate((config.conv1, config.conv2), 1):
            layers += [Conv2D(f"conv{i}", cin, cout, k, s, rng), Activation(config.activation),
                       Pool2D(config.pool_size, config.pool)]
            cin = cout
        layers.append(Flatten())
        width = int(np.prod(config.feature_shape()))
        for i, out in enumerate(config.dense, 1):
            layers.append(Dense(f"dense{i}", width, out, rng))
            if i < len(config.dense):
                layers.append(Activation(config.activation))
            width = out
        self.layers = layers

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def forward(self, x: np.ndarray) -> np.ndarray:
        """``[N, C, H, W]`` (or one ``[C, H, W]`` image) -> thetas of shape ``[N]``."""
        x, _ = _batched(x, 4)
        if x.shape[1:] != self.config.input_shape:
            raise ShapeError(f"trunk expects {self.config.input_shape}, got {x.shape[1:]}")
        for layer in self.layers:
            x = layer.forward(x)
        return x[:, 0]

    def backward(self, dtheta: np.ndarray) -> np.ndarray:
        """Accumulate parameter grads for upstream dL/dtheta; returns input grad."""
        g = np.asarray(dtheta, dtype=np.float64).reshape(-1, 1)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.params()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.params()
        missing = {p.name for p in params} - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)}")
        for p in params:
            value = np.asarray(state[p.name], dtype=np.float64)
            if value.shape != p.value.shape:
                raise ShapeError(f"{p.name}: expected {p.value.shape}, got {value.shape}")
            p.value[...] = value


def trunk_forward(image: np.ndarray, trunk: Trunk) -> float:
    return float(trunk.forward(image)[0])


# --- optimizer -----------------------------------------------------------------------

def sgd_step(values: Sequence[np.ndarray], grads: Sequence[np.ndarray], velocities: Sequence[np.ndarray],
             lr: float, momentum: float) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Heavy-ball step: ``v <- momentum*v + g``; ``p <- p - lr*v``."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    new_v = [momentum * v + g for v, g in zip(velocities, grads)]
    return [p - lr * v for p, v in zip(values, new_v)], new_v


class SGD:
    def __init__(self, params: Iterable[Param], lr: float, momentum: float = 0.0):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = list(params)
        self.lr, self.momentum = lr, momentum
        self.velocity = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        values, self.velocity = sgd_step(
            [p.value for p in self.params], [p.grad for p in self.params], self.velocity, self.lr, self.momentum)
        for p, v in zip(self.params, values):
            p.value[...] = v
