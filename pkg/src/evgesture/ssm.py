"""Selective state-space context block.

A diagonal linear recurrence per (feature, state) pair, discretized by zero-
order hold with an input-dependent step size::

    delta_t = softplus(w_delta . x_t + b_delta)
    B_t, C_t = W_B x_t, W_C x_t
    A_bar = exp(delta_t * A)
    B_bar = (A_bar - 1) / A * B_t
    h_t = A_bar * h_{t-1} + B_bar * x_t[f]
    y_t[f] = sum_s C_t[s] h_t[f, s] + D[f] x_t[f]

A small step size leaves the state coasting (A_bar near 1, B_bar near 0); the
learned step projection decides which timesteps get written into the state.
The sequential recurrence runs in :mod:`evgesture.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import kernels
from .tensor import _sigmoid, layer_norm, layer_norm_backward, softplus

DEFAULT_STATE = 8
DEFAULT_DELTA = 1e-3


@dataclass
class SsmParams:
    """Learnable state-space parameters for ``F`` features and ``S`` states.

    ``A`` is stored as ``A_log`` with ``A = -exp(A_log)`` so it stays negative
    under gradient updates.
    """

    A_log: np.ndarray  # (F, S)
    W_B: np.ndarray  # (S, F)
    W_C: np.ndarray  # (S, F)
    w_delta: np.ndarray  # (F,)
    b_delta: np.ndarray  # ()
    D: np.ndarray  # (F,)

    @property
    def A(self) -> np.ndarray:
        return -np.exp(self.A_log)

    @property
    def num_features(self) -> int:
        return self.A_log.shape[0]

    @property
    def num_states(self) -> int:
        return self.A_log.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def num_params(self) -> int:
        return sum(v.size for v in self.as_dict().values())

    @classmethod
    def init(cls, F: int, S: int = DEFAULT_STATE, rng=None, zero=False, dtype=np.float64):
        """Default init: ``A[f, s] = -(s + 1)``, ``softplus(b_delta) = 1e-3``.

        ``zero=True`` zeroes the projections and skip term so the block is
        an identity map through its residual.
        """
        rng = np.random.default_rng(rng)
        A_log = np.tile(np.log(np.arange(1, S + 1, dtype=np.float64)), (F, 1))
        b = np.log(np.expm1(DEFAULT_DELTA))
        if zero:
            W_B = np.zeros((S, F))
            W_C = np.zeros((S, F))
            w_d = np.zeros(F)
            D = np.zeros(F)
        else:
            lim = 1.0 / np.sqrt(F)
            W_B = rng.uniform(-lim, lim, (S, F))
            W_C = rng.uniform(-lim, lim, (S, F))
            w_d = rng.uniform(-lim, lim, F)
            D = np.ones(F)
        p = cls(A_log, W_B, W_C, w_d, np.array(b), D)
        for f in fields(p):
            setattr(p, f.name, getattr(p, f.name).astype(dtype))
        return p


def discretize(A, B, delta):
    """Zero-order hold: returns ``(A_bar, B_bar)``."""
    A = np.asarray(A, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValueError("step size must be positive")
    if np.any(A >= 0):
        raise ValueError("state matrix entries must be negative")
    A_bar = np.exp(delta * A)
    return A_bar, (A_bar - 1.0) / A * B


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ValueError(f"expected (N, F) or (Bt, N, F), got {x.shape}")
    return x, False


def selective_scan_forward(x, params: SsmParams):
    """Returns ``(y, cache)``; ``x`` is ``(N, F)`` or ``(Bt, N, F)``."""
    xb, single = _as_batch(x)
    if xb.shape[1] < 1:
        raise ValueError("empty sequence")
    if xb.shape[2] != params.num_features:
        raise ValueError(f"{xb.shape[2]} features, params expect {params.num_features}")
    p = {k: np.asarray(v, dtype=np.float64) for k, v in params.as_dict().items()}
    A = -np.exp(p["A_log"])
    z = xb @ p["w_delta"] + p["b_delta"]
    delta = np.ascontiguousarray(softplus(z))
    Bm = np.ascontiguousarray(xb @ p["W_B"].T)
    Cm = np.ascontiguousarray(xb @ p["W_C"].T)
    xc = np.ascontiguousarray(xb)
    y, hs = kernels.scan_forward(xc, delta, Bm, Cm, np.ascontiguousarray(A))
    y = y + p["D"] * xb
    bad = ~np.isfinite(y)
    if bad.any():
        step = int(np.argwhere(bad)[0][1])
        raise FloatingPointError(f"non-finite state-space output at step {step}")
    cache = dict(x=xc, z=z, delta=delta, Bm=Bm, Cm=Cm, A=A, hs=hs, p=p, single=single)
    return (y[0] if single else y), cache


def selective_scan(x, params: SsmParams) -> np.ndarray:
    return selective_scan_forward(x, params)[0]


def selective_scan_backward(gy, cache):
    """Reverse-time adjoint pass. Returns ``(gx, grads)`` keyed like SsmParams."""
    p = cache["p"]
    x = cache["x"]
    gy = np.ascontiguousarray(gy, dtype=np.float64).reshape(x.shape)
    gx, gd, gB, gC, gA = kernels.scan_backward(
        gy, x, cache["delta"], cache["Bm"], cache["Cm"], cache["A"], cache["hs"]
    )
    grads = {}
    grads["D"] = np.sum(gy * x, axis=(0, 1))
    gx = gx + gy * p["D"]
    gz = gd * _sigmoid(cache["z"])
    grads["w_delta"] = np.einsum("bn,bnf->f", gz, x)
    grads["b_delta"] = np.array(gz.sum())
    gx += gz[..., None] * p["w_delta"]
    grads["W_B"] = np.einsum("bns,bnf->sf", gB, x)
    grads["W_C"] = np.einsum("bns,bnf->sf", gC, x)
    gx += gB @ p["W_B"] + gC @ p["W_C"]
    grads["A_log"] = gA * cache["A"]
    if cache["single"]:
        gx = gx[0]
    return gx, grads


def ssm_block_forward(X, params: SsmParams):
    """``X + scan(layer_norm(X))`` over the chronological (T*Bn) sequence."""
    if X.ndim != 4:
        raise ValueError(f"expected (Bt, T, Bn, F), got {X.shape}")
    Bt, T, Bn, F = X.shape
    seq = X.reshape(Bt, T * Bn, F).astype(np.float64)
    u = layer_norm(seq)
    y, scan_cache = selective_scan_forward(u, params)
    out = X + y.reshape(X.shape).astype(X.dtype)
    return out, dict(seq=seq, scan=scan_cache)


def ssm_block(X, params: SsmParams) -> np.ndarray:
    return ssm_block_forward(X, params)[0]


def ssm_block_backward(g_out, cache):
    seq = cache["seq"]
    gy = g_out.reshape(seq.shape).astype(np.float64)
    gu, grads = selective_scan_backward(gy, cache["scan"])
    gX = g_out + layer_norm_backward(gu, seq).reshape(g_out.shape).astype(g_out.dtype)
    return gX, grads
