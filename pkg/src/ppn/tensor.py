"""Minimal differentiable kernel set backed by numpy.

Define-by-run autograd: every op returns a Tensor carrying a backward
closure; Tensor.backward() runs the closures in reverse topological
order.  Kernels cover exactly what the two networks need: conv,
transposed conv, batchnorm, leaky ReLU, 2x2 max-pool, channel concat,
sigmoid/tanh heads, plus Adam and a finite-difference gradient checker.

Layout is channel-major (C, H, W) with no batch axis; batch size is 1
throughout the streaming inference setting.  Use float64 for gradient
checks and float32 for timing runs.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

# thread-local so the two benchmark workers can disable graph
# construction independently without racing on a shared flag
_grad_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure forward)."""
    prev = _grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = prev


class Tensor:
    """N-d array plus an optional gradient buffer and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad and _grad_enabled()
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.ndim != 0:
                raise ShapeError("backward() without a gradient needs a scalar")
            grad = np.ones_like(self.data)
        # reverse topological order over the recorded graph
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(np.asarray(other, dtype=self.data.dtype))
        if other.data.shape not in ((), self.data.shape):
            raise ShapeError(f"add shapes {self.shape} vs {other.shape}")
        return _node(self.data + other.data, (self, other),
                     lambda g: (g, g if other.data.shape else g.sum()))

    def __mul__(self, scalar):
        s = float(scalar)
        return _node(self.data * s, (self,), lambda g: (g * s,))

    __rmul__ = __mul__

    def sum(self):
        return _node(self.data.sum(), (self,),
                     lambda g: (np.broadcast_to(g, self.data.shape),))

    def mean(self):
        n = self.data.size
        return _node(self.data.mean(), (self,),
                     lambda g: (np.broadcast_to(g / n, self.data.shape),))

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _node(data, parents, grad_fn):
    """Build an output Tensor wired to `parents` via `grad_fn`.

    grad_fn maps the output gradient to one gradient per parent (None to
    skip).  Graph recording is elided when no parent needs gradients.
    """
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)

        def _backward(g):
            for p, pg in zip(parents, grad_fn(g)):
                if pg is not None and p.requires_grad:
                    p._accumulate(pg)

        out._backward = _backward
    return out


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    def out_size(self, h, w):
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"conv output size {oh}x{ow} < 1 for input {h}x{w}")
        return oh, ow


def _check_chw(x, channels, what):
    if x.data.ndim != 3:
        raise ShapeError(f"{what} expects (C, H, W), got shape {x.shape}")
    if x.shape[0] != channels:
        raise ShapeError(f"{what} channel dim {x.shape[0]} != expected {channels}")


def _im2col(xp, kh, kw, stride, oh, ow):
    c = xp.shape[0]
    sc, sh, sw = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp,
        shape=(c, kh, kw, oh, ow),
        strides=(sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return cols.reshape(c * kh * kw, oh * ow)


def conv2d(x: Tensor, spec: ConvSpec, weights: Tensor, bias: Tensor) -> Tensor:
    """Cross-correlation with zero padding; weights (C_out, C_in, kh, kw)."""
    _check_chw(x, spec.in_channels, "conv2d input")
    wshape = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
    if weights.shape != wshape:
        raise ShapeError(f"conv2d weights {weights.shape} != {wshape}")
    if bias.shape != (spec.out_channels,):
        raise ShapeError(f"conv2d bias {bias.shape} != ({spec.out_channels},)")
    _, h, w = x.shape
    oh, ow = spec.out_size(h, w)
    p, s = spec.padding, spec.stride
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    cols = _im2col(xp, spec.kernel_h, spec.kernel_w, s, oh, ow)
    wmat = weights.data.reshape(spec.out_channels, -1)
    out = (wmat @ cols).reshape(spec.out_channels, oh, ow) + bias.data[:, None, None]

    def grad_fn(g):
        gmat = g.reshape(spec.out_channels, -1)
        gw = (gmat @ cols.T).reshape(weights.shape)
        gb = g.sum(axis=(1, 2))
        gcols = wmat.T @ gmat
        gxp = np.zeros_like(xp)
        gcols = gcols.reshape(x.shape[0], spec.kernel_h, spec.kernel_w, oh, ow)
        for i in range(spec.kernel_h):
            for j in range(spec.kernel_w):
                gxp[:, i:i + s * oh:s, j:j + s * ow:s] += gcols[:, i, j]
        gx = gxp[:, p:p + h, p:p + w] if p else gxp
        return gx, gw, gb

    return _node(out, (x, weights, bias), grad_fn)


def conv_transpose2d(x: Tensor, spec: ConvSpec, weights: Tensor, bias: Tensor) -> Tensor:
    """Adjoint of conv2d (scatter-accumulate); weights (C_in, C_out, kh, kw).

    Output spatial size = (in - 1) * stride - 2 * padding + kernel.
    """
    _check_chw(x, spec.in_channels, "conv_transpose2d input")
    wshape = (spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w)
    if weights.shape != wshape:
        raise ShapeError(f"conv_transpose2d weights {weights.shape} != {wshape}")
    if bias.shape != (spec.out_channels,):
        raise ShapeError(f"conv_transpose2d bias {bias.shape} != ({spec.out_channels},)")
    _, h, w = x.shape
    s, p = spec.stride, spec.padding
    oh = (h - 1) * s - 2 * p + spec.kernel_h
    ow = (w - 1) * s - 2 * p + spec.kernel_w
    if oh < 1 or ow < 1:
        raise ShapeError(f"transpose conv output {oh}x{ow} < 1")
    fh, fw = (h - 1) * s + spec.kernel_h, (w - 1) * s + spec.kernel_w
    full = np.zeros((spec.out_channels, fh, fw), dtype=x.data.dtype)
    for i in range(spec.kernel_h):
        for j in range(spec.kernel_w):
            # (C_in, C_out)^T contracted with (C_in, H, W) -> (C_out, H, W)
            full[:, i:i + s * h:s, j:j + s * w:s] += np.tensordot(
                weights.data[:, :, i, j], x.data, axes=(0, 0))
    out = full[:, p:p + oh, p:p + ow] + bias.data[:, None, None]

    def grad_fn(g):
        gfull = np.zeros((spec.out_channels, fh, fw), dtype=g.dtype)
        gfull[:, p:p + oh, p:p + ow] = g
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(weights.data)
        for i in range(spec.kernel_h):
            for j in range(spec.kernel_w):
                patch = gfull[:, i:i + s * h:s, j:j + s * w:s]
                gx += np.tensordot(weights.data[:, :, i, j], patch, axes=(1, 0))
                gw[:, :, i, j] = np.tensordot(x.data, patch, axes=([1, 2], [1, 2]))
        return gx, gw, g.sum(axis=(1, 2))

    return _node(out, (x, weights, bias), grad_fn)


@dataclass
class BatchNormState:
    gamma: Tensor
    beta_shift: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    mode: str = "training"

    @classmethod
    def create(cls, channels, dtype=np.float64, momentum=0.1, eps=1e-5):
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta_shift=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )


def batchnorm2d(x: Tensor, state: BatchNormState) -> Tensor:
    """Normalize over all non-channel axes of a (C, H, W) tensor."""
    _check_chw(x, state.gamma.shape[0], "batchnorm2d input")
    c = x.shape[0]
    xd = x.data
    g = state.gamma.data[:, None, None]
    b = state.beta_shift.data[:, None, None]
    if state.mode == "training":
        mean = xd.mean(axis=(1, 2))
        var = xd.var(axis=(1, 2))
        state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mean
        state.running_var = (1 - state.momentum) * state.running_var + state.momentum * var
        ivstd = 1.0 / np.sqrt(var + state.eps)
        xhat = (xd - mean[:, None, None]) * ivstd[:, None, None]
        out = g * xhat + b

        def grad_fn(go):
            m = xd.shape[1] * xd.shape[2]
            dxhat = go * g
            iv = ivstd[:, None, None]
            xc = xd - mean[:, None, None]
            dvar = (dxhat * xc * -0.5 * iv ** 3).sum(axis=(1, 2))
            dmean = (-dxhat * iv).sum(axis=(1, 2)) + dvar * (-2.0 * xc.mean(axis=(1, 2)))
            gx = dxhat * iv + dvar[:, None, None] * 2.0 * xc / m + dmean[:, None, None] / m
            return gx, (go * xhat).sum(axis=(1, 2)), go.sum(axis=(1, 2))

        return _node(out, (x, state.gamma, state.beta_shift), grad_fn)

    ivstd = 1.0 / np.sqrt(state.running_var + state.eps)
    xhat = (xd - state.running_mean[:, None, None]) * ivstd[:, None, None]
    out = g * xhat + b

    def grad_fn(go):
        gx = go * g * ivstd[:, None, None]
        return gx, (go * xhat).sum(axis=(1, 2)), go.sum(axis=(1, 2))

    return _node(out, (x, state.gamma, state.beta_shift), grad_fn)


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    if not 0 < slope < 1:
        raise ValueError(f"slope must be in (0, 1), got {slope}")
    mask = x.data > 0
    out = np.where(mask, x.data, slope * x.data)
    return _node(out, (x,), lambda g: (np.where(mask, g, slope * g),))


def maxpool2d(x: Tensor, window: int = 2, stride: int = 2):
    """2x2/2 max pool; returns (pooled, argmax) with ties to the first
    window element in row-major order.  Gradient routes to the argmax."""
    if x.data.ndim != 3:
        raise ShapeError(f"maxpool2d expects (C, H, W), got {x.shape}")
    c, h, w = x.shape
    if h % window or w % window:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by {window}")
    oh, ow = h // stride, w // stride
    blocks = x.data.reshape(c, oh, window, ow, window).transpose(0, 1, 3, 2, 4)
    flat = blocks.reshape(c, oh, ow, window * window)
    idx = flat.argmax(axis=3)  # argmax takes the first maximal element
    out = np.take_along_axis(flat, idx[..., None], axis=3)[..., 0]

    def grad_fn(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=3)
        gx = gflat.reshape(c, oh, ow, window, window).transpose(0, 1, 3, 2, 4)
        return (gx.reshape(c, h, w),)

    return _node(out, (x,), grad_fn), idx


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat spatial mismatch: {a.shape} vs {b.shape}")
    c1 = a.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)
    return _node(out, (a, b), lambda g: (g[:c1], g[c1:]))


def activation_map(x: Tensor, kind: str) -> Tensor:
    if kind == "sigmoid":
        y = 1.0 / (1.0 + np.exp(-x.data))
        return _node(y, (x,), lambda g: (g * y * (1.0 - y),))
    if kind == "tanh":
        y = np.tanh(x.data)
        return _node(y, (x,), lambda g: (g * (1.0 - y * y),))
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def create(cls, params, lr=1e-4, beta1=0.9, beta2=0.999, eps_opt=1e-8):
        return cls(
            lr=lr, beta1=beta1, beta2=beta2, eps_opt=eps_opt,
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update, in place on params."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params/grads/state length mismatch")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps_opt)


def grad_check(fn, point: Tensor, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient of a scalar-valued
    `fn` and central finite differences at `point`."""
    if h <= 0:
        raise ValueError("h must be > 0")
    x = Tensor(point.data.astype(np.float64, copy=True), requires_grad=True)
    out = fn(x)
    if not np.isfinite(out.data):
        raise NumericError("function value not finite at the check point")
    out.backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(Tensor(x.data)).item()
        flat[i] = orig - h
        fm = fn(Tensor(x.data)).item()
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * h)
    if not np.all(np.isfinite(numeric)):
        raise NumericError("non-finite finite-difference values")
    a = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(a - numeric) / denom))
