import numpy as np
import pytest

from evgesture import kernels
from evgesture.events import EventStream

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Run a test once per kernel backend, restoring the previous one after."""
    prev = kernels.active_backend()
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(prev)


def random_stream(rng, n, width=16, height=12, t_max=400_000, t0=0):
    t = np.sort(rng.integers(t0, t0 + t_max, n))
    return EventStream.from_arrays(
        width, height, t,
        rng.integers(0, width, n), rng.integers(0, height, n),
        rng.choice([-1, 1], n),
    )


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
