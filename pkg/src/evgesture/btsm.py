"""Bins-temporal shift: a parameter-free permutation of a ``(Bt, T, Bn, F)``
feature volume.

The first quarter of the channels is rolled one step left along an axis, the
second quarter one step right, the remaining half is left alone. Rolls are
cyclic. The full module rolls along the frames-within-bin axis (2) first,
then along the bins axis (1).
"""

import numpy as np

INTRA_BIN = 2
INTER_BIN = 1


def _check(x, axis):
    if x.ndim != 4:
        raise ValueError(f"expected a (Bt, T, Bn, F) tensor, got shape {x.shape}")
    if x.shape[-1] % 4:
        raise ValueError(f"feature count {x.shape[-1]} not divisible by 4")
    if axis not in (INTER_BIN, INTRA_BIN):
        raise ValueError(f"shift axis must be 1 or 2, got {axis}")


def channel_split_roll(x: np.ndarray, axis: int, reverse: bool = False) -> np.ndarray:
    """Roll channels ``[0, F/4)`` by -1 and ``[F/4, F/2)`` by +1 along ``axis``.

    ``reverse`` applies the inverse permutation.
    """
    _check(x, axis)
    q = x.shape[-1] // 4
    s = 1 if reverse else -1
    out = x.copy()
    out[..., :q] = np.roll(x[..., :q], s, axis=axis)
    out[..., q:2 * q] = np.roll(x[..., q:2 * q], -s, axis=axis)
    return out


def btsm_forward(x: np.ndarray) -> np.ndarray:
    return channel_split_roll(channel_split_roll(x, INTRA_BIN), INTER_BIN)


def btsm_backward(grad_out: np.ndarray) -> np.ndarray:
    """Transpose of :func:`btsm_forward`, which for a permutation is its inverse."""
    return channel_split_roll(
        channel_split_roll(grad_out, INTER_BIN, reverse=True), INTRA_BIN, reverse=True
    )

