"""Dense tensor layers with hand-derived gradients.

Exactly the layer set the fusion network needs: 2-D convolution
(cross-correlation), ReLU, max pooling, adaptive average pooling, fully
connected, softmax cross-entropy, and SGD with momentum/weight decay and
per-group learning rates. All math is float64; numpy supplies storage and
matmuls, the forward/backward algorithms live here.

Every backward function is validated against central finite differences
(see finite_diff_check); tests pin that agreement to 1e-6 relative error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import GeometryError


def conv_out_dim(size: int, k: int, stride: int, pad: int) -> int:
    out = (size + 2 * pad - k) // stride + 1
    if out <= 0:
        raise GeometryError(
            f"conv/pool output collapses: in={size}, k={k}, stride={stride}, pad={pad}"
        )
    return out


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """(N,C,H,W) -> columns (N, C*kh*kw, OH*OW)."""
    n, c, h, w = x.shape
    oh = conv_out_dim(h, kh, stride, pad)
    ow = conv_out_dim(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :oh, :ow]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(cols, x_shape, kh, kw, stride, pad, oh, ow):
    """Scatter-add columns back to (N,C,H,W); adjoint of _im2col."""
    n, c, h, w = x_shape
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    blocks = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                blocks[:, :, i, j]
            )
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return dx


def conv2d_forward(x, w, b, stride: int = 1, pad: int = 0):
    """Cross-correlation. x (N,C,H,W), w (O,C,kh,kw), b (O,) -> (N,O,OH,OW).

    Returns (y, cache) where the cache feeds conv2d_backward.
    """
    n = x.shape[0]
    o, c, kh, kw = w.shape
    if x.shape[1] != c:
        raise GeometryError(f"conv expects {c} input channels, got {x.shape[1]}")
    cols, oh, ow = _im2col(x, kh, kw, stride, pad)
    y = np.matmul(w.reshape(o, -1), cols) + b.reshape(1, o, 1)
    cache = (x.shape, cols, w, stride, pad, oh, ow)
    return y.reshape(n, o, oh, ow), cache


def conv2d_backward(dy, cache):
    """Gradients (dx, dw, db) of a conv2d_forward call."""
    x_shape, cols, w, stride, pad, oh, ow = cache
    n = x_shape[0]
    o, c, kh, kw = w.shape
    dy2 = dy.reshape(n, o, oh * ow)
    dw = np.einsum("nop,nkp->ok", dy2, cols).reshape(w.shape)
    db = dy2.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(o, -1).T, dy2)
    dx = _col2im(dcols, x_shape, kh, kw, stride, pad, oh, ow)
    return dx, dw, db


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def maxpool_forward(x, k: int = 3, stride: int = 2):
    """(N,C,H,W) max pooling, no padding. Returns (y, cache)."""
    n, c, h, w = x.shape
    oh = conv_out_dim(h, k, stride, 0)
    ow = conv_out_dim(w, k, stride, 0)
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :oh, :ow]
    flat = windows.reshape(n, c, oh, ow, k * k)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    cache = (x.shape, arg, k, stride, oh, ow)
    return y, cache


def maxpool_backward(dy, cache):
    """Routes each output gradient to its argmax input cell (scatter-add,
    overlapping windows accumulate)."""
    x_shape, arg, k, stride, oh, ow = cache
    n, c, h, w = x_shape
    dx = np.zeros(x_shape)
    ohs = np.arange(oh)[:, None] * stride
    ows = np.arange(ow)[None, :] * stride
    iy = ohs[None, None] + arg // k  # (N,C,OH,OW) absolute row
    ix = ows[None, None] + arg % k
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    flat_idx = ((ni * c + ci) * h + iy) * w + ix
    np.add.at(dx.reshape(-1), flat_idx.reshape(-1), dy.reshape(-1))
    return dx


def adaptive_avgpool_forward(x, out_hw: tuple[int, int]):
    """Average pooling onto a fixed output grid; input partitioned into
    [floor(i*H/m), floor((i+1)*H/m)) bands per axis."""
    n, c, h, w = x.shape
    mh, mw = out_hw
    if mh > h or mw > w:
        raise GeometryError(f"adaptive pool target {out_hw} exceeds input {(h, w)}")
    y = np.empty((n, c, mh, mw))
    bounds_h = [(i * h // mh, (i + 1) * h // mh) for i in range(mh)]
    bounds_w = [(j * w // mw, (j + 1) * w // mw) for j in range(mw)]
    for i, (h0, h1) in enumerate(bounds_h):
        for j, (w0, w1) in enumerate(bounds_w):
            y[:, :, i, j] = x[:, :, h0:h1, w0:w1].mean(axis=(2, 3))
    cache = (x.shape, bounds_h, bounds_w)
    return y, cache


def adaptive_avgpool_backward(dy, cache):
    x_shape, bounds_h, bounds_w = cache
    dx = np.zeros(x_shape)
    for i, (h0, h1) in enumerate(bounds_h):
        for j, (w0, w1) in enumerate(bounds_w):
            area = (h1 - h0) * (w1 - w0)
            dx[:, :, h0:h1, w0:w1] += dy[:, :, i : i + 1, j : j + 1] / area
    return dx


def fc_forward(x, w, b):
    """x (N,D), w (M,D), b (M,) -> (N,M)."""
    if x.shape[1] != w.shape[1]:
        raise GeometryError(f"fc expects {w.shape[1]} inputs, got {x.shape[1]}")
    return x @ w.T + b, x


def fc_backward(dy, cache, w):
    x = cache
    dw = dy.T @ x
    db = dy.sum(axis=0)
    dx = dy @ w
    return dx, dw, db


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_ce_forward(logits, labels):
    """Mean cross-entropy. logits (N,K), labels (N,) ints in [0,K)."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label outside logit range")
    probs = softmax(logits)
    n = logits.shape[0]
    loss = float(-np.log(probs[np.arange(n), labels] + 1e-300).mean())
    return loss, (probs, labels)


def softmax_ce_backward(cache):
    probs, labels = cache
    n = probs.shape[0]
    d = probs.copy()
    d[np.arange(n), labels] -= 1.0
    return d / n


@dataclass
class SGDConfig:
    """Learning rate per parameter group; groups are name prefixes."""

    lr: dict[str, float]
    default_lr: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4

    def rate_for(self, name: str) -> float:
        for prefix, rate in self.lr.items():
            if name == prefix or name.startswith(prefix + "."):
                return rate
        return self.default_lr


@dataclass
class SGDState:
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    cfg: SGDConfig,
    state: SGDState,
    lr_scale: float = 1.0,
) -> None:
    """In-place update p <- p - lr*(momentum-buffered grad + wd*p)."""
    for name, g in grads.items():
        p = params[name]
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
            state.velocity[name] = v
        v *= cfg.momentum
        v += g
        p -= cfg.rate_for(name) * lr_scale * (v + cfg.weight_decay * p)


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_param: dict[str, float]
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def finite_diff_check(
    loss_fn: Callable[[], float],
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    *,
    h: float = 1e-5,
    tolerance: float = 1e-6,
    coords_per_param: int = 4,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients to central finite differences.

    loss_fn re-evaluates the scalar loss from the (temporarily perturbed)
    params. Relative error uses max(|analytic|, |numeric|, 1) as the
    denominator so near-zero gradients are compared absolutely.
    """
    rng = rng or np.random.default_rng(0)
    per_param: dict[str, float] = {}
    checked = 0
    for name, grad in analytic.items():
        p = params[name]
        flat_p = p.reshape(-1)
        flat_g = grad.reshape(-1)
        k = min(coords_per_param, flat_p.size)
        idx = rng.choice(flat_p.size, size=k, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat_p[i]
            flat_p[i] = orig + h
            up = loss_fn()
            flat_p[i] = orig - h
            down = loss_fn()
            flat_p[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = flat_g[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, err)
            checked += 1
        per_param[name] = worst
    max_err = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(
        max_rel_error=max_err,
        tolerance=tolerance,
        per_param=per_param,
        checked=checked,
    )


def gaussian_init(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)
