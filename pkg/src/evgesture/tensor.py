"""Dense layer kernels with hand-written backward passes.

Arrays are plain numpy ndarrays (row-major). Image kernels take
``(..., C, H, W)`` so a batch of frames can be pushed through in one call.
Every ``foo`` has a ``foo_backward`` that maps the upstream gradient to
gradients of the inputs and weights; :func:`grad_check` verifies them against
central differences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


# -- convolutions ------------------------------------------------------------


def _check_dw(x, wh, wv):
    C = x.shape[-3]
    k = wh.shape[-1]
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if wh.shape != (C, 1, k) or wv.shape != (C, k, 1):
        raise ValueError(
            f"weights {wh.shape}/{wv.shape} do not match {C} channels and k={k}"
        )
    return k // 2


def _hpass(x, wh, r):
    W = x.shape[-1]
    pad = [(0, 0)] * (x.ndim - 1) + [(r, r)]
    xp = np.pad(x, pad)
    out = np.zeros_like(x)
    for a in range(2 * r + 1):
        out += wh[:, 0, a, None, None] * xp[..., a:a + W]
    return out


def _vpass(u, wv, r):
    H = u.shape[-2]
    pad = [(0, 0)] * (u.ndim - 2) + [(r, r), (0, 0)]
    up = np.pad(u, pad)
    out = np.zeros_like(u)
    for a in range(2 * r + 1):
        out += wv[:, a, 0, None, None] * up[..., a:a + H, :]
    return out


def conv_depthwise_asym(x, wh, wv):
    """Per-channel 1xk pass then kx1 pass, zero 'same' padding.

    ``wh`` has shape (C, 1, k), ``wv`` (C, k, 1). Cross-correlation, as in
    most deep-learning frameworks.
    """
    r = _check_dw(x, wh, wv)
    return _vpass(_hpass(x, wh, r), wv, r)


def conv_depthwise_asym_backward(gy, x, wh, wv):
    """Returns ``(gx, gwh, gwv)``."""
    r = _check_dw(x, wh, wv)
    k = 2 * r + 1
    H, W = x.shape[-2:]
    # contract everything but the channel axis
    lead = "nmopq"[:x.ndim - 3]
    spec = f"{lead}chw,{lead}chw->c"

    u = _hpass(x, wh, r)
    up = np.pad(u, [(0, 0)] * (u.ndim - 2) + [(r, r), (0, 0)])
    gup = np.zeros_like(up)
    gwv = np.zeros_like(wv)
    for a in range(k):
        gup[..., a:a + H, :] += wv[:, a, 0, None, None] * gy
        gwv[:, a, 0] = np.einsum(spec, gy, up[..., a:a + H, :])
    gu = gup[..., r:r + H, :]

    xp = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(r, r)])
    gxp = np.zeros_like(xp)
    gwh = np.zeros_like(wh)
    for a in range(k):
        gxp[..., a:a + W] += wh[:, 0, a, None, None] * gu
        gwh[:, 0, a] = np.einsum(spec, gu, xp[..., a:a + W])
    return gxp[..., r:r + W], gwh, gwv


def conv_pointwise(x, w, b):
    """1x1 convolution: ``w`` is (Cout, Cin), ``b`` is (Cout,)."""
    *lead, cin, H, W = x.shape
    if w.ndim != 2 or w.shape[1] != cin or b.shape != (w.shape[0],):
        raise ValueError(f"pointwise weights {w.shape}/{b.shape} vs input channels {cin}")
    xm = x.reshape(-1, cin, H * W)
    y = np.matmul(w, xm) + b[:, None]
    return y.reshape(*lead, w.shape[0], H, W)


def conv_pointwise_backward(gy, x, w, b):
    *lead, cin, H, W = x.shape
    cout = w.shape[0]
    gm = gy.reshape(-1, cout, H * W)
    xm = x.reshape(-1, cin, H * W)
    gx = np.matmul(w.T, gm).reshape(x.shape)
    gw = np.tensordot(gm, xm, axes=([0, 2], [0, 2]))
    gb = gm.sum(axis=(0, 2))
    return gx, gw, gb


# -- activations, pooling, dense --------------------------------------------


def relu(x):
    return np.maximum(x, 0)


def relu_backward(gy, x):
    return gy * (x > 0)


def _sigmoid(x):
    # logistic(x) = (1 + tanh(x/2)) / 2: one bounded transcendental, no overflow
    out = np.multiply(x, 0.5)
    np.tanh(out, out=out)
    out *= 0.5
    out += 0.5
    return out


def silu(x):
    return x * _sigmoid(x)


def silu_backward(gy, x):
    s = _sigmoid(x)
    return gy * s * (1.0 + x * (1.0 - s))


def softplus(x):
    return np.logaddexp(0.0, x)


_CORNERS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _corners(x):
    """The four strided views of the 2x2 windows, row-major order."""
    H, W = x.shape[-2:]
    if H % 2 or W % 2:
        raise ValueError(f"maxpool2x2 needs even H, W; got {H}x{W}")
    return [x[..., i::2, j::2] for i, j in _CORNERS]


def maxpool2x2(x):
    a, b, c, d = _corners(x)
    return np.maximum(np.maximum(a, b), np.maximum(c, d))


def maxpool2x2_backward(gy, x):
    """Gradient routes to the first maximum of each 2x2 window (row-major)."""
    views = _corners(x)
    top = maxpool2x2(x)
    g = np.zeros_like(x)
    free = np.ones(top.shape, dtype=bool)
    for (i, j), v in zip(_CORNERS, views):
        hit = free & (v == top)
        g[..., i::2, j::2] = np.where(hit, gy, 0)
        free &= ~hit
    return g


def global_avg_pool(x):
    return x.mean(axis=(-2, -1))


def global_avg_pool_backward(gy, x):
    H, W = x.shape[-2:]
    return np.broadcast_to(gy[..., None, None] / (H * W), x.shape).copy()


def linear(x, w, b):
    """``x @ w.T + b`` with ``w`` of shape (Fout, Fin)."""
    if x.shape[-1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ValueError(f"linear weights {w.shape} vs input features {x.shape[-1]}")
    return x @ w.T + b


def linear_backward(gy, x, w, b):
    x2 = x.reshape(-1, x.shape[-1])
    g2 = gy.reshape(-1, w.shape[0])
    return gy @ w, g2.T @ x2, g2.sum(axis=0)


def softmax(z):
    """Softmax over the last axis, stabilized by subtracting the row max."""
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(gp, p):
    return p * (gp - np.sum(gp * p, axis=-1, keepdims=True))


def layer_norm(x, eps=1e-5):
    """Normalize the last axis to zero mean, unit variance (no affine terms)."""
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def layer_norm_backward(gy, x, eps=1e-5):
    n = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + eps)
    xh = (x - mu) * inv
    return inv / n * (
        n * gy - gy.sum(axis=-1, keepdims=True) - xh * np.sum(gy * xh, axis=-1, keepdims=True)
    )


# -- loss --------------------------------------------------------------------


def cross_entropy(p, y) -> float:
    """``-sum_c y_c log p_c`` for one probability vector and a one-hot label.

    A zero probability on the true class is clamped to 1e-12 and logged.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError("p and y must be vectors of equal length")
    if abs(p.sum() - 1.0) > 1e-6 or np.any(p < 0):
        raise ValueError("p is not a probability vector")
    if np.count_nonzero(y) != 1 or y.max() != 1.0:
        raise ValueError("y must be one-hot")
    c = int(np.argmax(y))
    pc = p[c]
    if pc < PROB_FLOOR:
        logger.warning("true-class probability %g clamped to %g", pc, PROB_FLOOR)
        pc = PROB_FLOOR
    return float(-np.log(pc))


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over a batch of logits ``(B, C)`` and integer labels.

    Returns ``(loss, probs, dlogits)`` where ``dlogits = (p - y) / B``.
    """
    labels = np.asarray(labels)
    p = softmax(logits)
    B = logits.shape[0]
    pt = np.maximum(p[np.arange(B), labels], PROB_FLOOR)
    loss = float(-np.mean(np.log(pt)))
    g = p.copy()
    g[np.arange(B), labels] -= 1.0
    return loss, p, g / B


# -- gradient checking -------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_input: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def __str__(self):
        parts = ", ".join(f"{k}={v:.2e}" for k, v in self.per_input.items())
        status = "ok" if self.passed else "FAIL"
        return f"grad_check {status}: max rel err {self.max_rel_error:.2e} (tol {self.tol:g}) [{parts}]"


def numeric_grad(fn: Callable[[], float], x: np.ndarray, h: float) -> np.ndarray:
    """Central differences of ``fn`` w.r.t. ``x``, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = fn()
        flat[i] = old - h
        fm = fn()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def grad_check(
    fn: Callable[[], float],
    inputs: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``fn`` recomputes the scalar objective from the arrays in ``inputs``,
    which are perturbed in place. The relative error of each element is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    per = {}
    for name, x in inputs.items():
        if x.dtype != np.float64:
            raise TypeError(f"{name}: grad_check needs float64 inputs")
        num = numeric_grad(fn, x, h)
        ana = np.asarray(analytic[name], dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-8)
        per[name] = float(np.max(np.abs(ana - num) / denom)) if num.size else 0.0
    worst = max(per.values()) if per else 0.0
    return GradCheckReport(worst, tol, per)
