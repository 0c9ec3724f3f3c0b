"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``use_backend`` switches at runtime (tests and the benchmark run
both).
"""

import logging

from . import _pykernels

logger = logging.getLogger(__name__)

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
    logger.debug("compiled kernels unavailable, using numpy fallback")

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["compiled"] = _ckernels

_active = _ckernels if _ckernels is not None else _pykernels


def available_backends() -> list[str]:
    return list(BACKENDS)


def active_backend() -> str:
    return "compiled" if _active is _ckernels and _ckernels is not None else "python"


def use_backend(name: str) -> None:
    global _active
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    _active = BACKENDS[name]


def latest_stamp(frame, stamp, x, y, p, num_frames, height, width):
    return _active.latest_stamp(frame, stamp, x, y, p, num_frames, height, width)


def scan_forward(u, delta, Bm, Cm, A):
    return _active.scan_forward(u, delta, Bm, Cm, A)


def scan_backward(gy, u, delta, Bm, Cm, A, hs):
    return _active.scan_backward(gy, u, delta, Bm, Cm, A, hs)
