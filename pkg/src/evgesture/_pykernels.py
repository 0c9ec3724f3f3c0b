"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``.

Same signatures and results; used when the extension is not built.
"""

import numpy as np


def latest_stamp(frame, stamp, x, y, p, num_frames, height, width):
    out = np.zeros((num_frames, 2, height, width), dtype=np.float64)
    c = np.where(p > 0, 0, 1)
    np.maximum.at(out, (frame, c, y, x), stamp.astype(np.float64))
    return out


def scan_forward(u, delta, Bm, Cm, A):
    nb, N, F = u.shape
    S = A.shape[1]
    y = np.zeros((nb, N, F))
    hs = np.zeros((nb, N, F, S))
    h = np.zeros((nb, F, S))
    for t in range(N):
        ab = np.exp(delta[:, t, None, None] * A)
        h = ab * h + ((ab - 1.0) / A) * Bm[:, t, None, :] * u[:, t, :, None]
        hs[:, t] = h
        y[:, t] = np.einsum("bfs,bs->bf", h, Cm[:, t])
    return y, hs


def scan_backward(gy, u, delta, Bm, Cm, A, hs):
    nb, N, F = u.shape
    gu = np.zeros_like(u)
    gd = np.zeros((nb, N))
    gB = np.zeros_like(Bm)
    gC = np.zeros_like(Cm)
    gA = np.zeros_like(A)
    gh = np.zeros((nb,) + A.shape)
    for t in range(N - 1, -1, -1):
        d = delta[:, t, None, None]
        ab = np.exp(d * A)
        e = (ab - 1.0) / A
        hp = hs[:, t - 1] if t > 0 else np.zeros_like(gh)
        ut = u[:, t, :, None]
        Bt = Bm[:, t, None, :]
        g = gh + gy[:, t, :, None] * Cm[:, t, None, :]
        gC[:, t] = np.einsum("bf,bfs->bs", gy[:, t], hs[:, t])
        gab = g * hp
        ge = g * Bt * ut
        gB[:, t] = np.sum(g * e * ut, axis=1)
        gu[:, t] = np.sum(g * e * Bt, axis=2)
        gd[:, t] = np.sum(gab * ab * A + ge * ab, axis=(1, 2))
        gA += np.sum(gab * ab * d + ge * (d * ab * A - ab + 1.0) / (A * A), axis=0)
        gh = g * ab
    return gu, gd, gB, gC, gA
