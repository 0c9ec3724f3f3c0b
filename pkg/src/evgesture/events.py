"""Event streams: CSV and ``EVG1`` binary I/O, validation, and slicing into the
bins/frames grid.

Events are held column-wise in a numpy structured array whose memory layout is
exactly the 16-byte ``EVG1`` record, so binary reads and writes are a single
``frombuffer``/``tobytes``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import BinaryIO, Iterator, NamedTuple

import numpy as np

MAGIC = b"EVG1"
HEADER = np.dtype([("magic", "S4"), ("width", "<u2"), ("height", "<u2")])
RECORD = np.dtype(
    {
        "names": ["t", "x", "y", "p", "pad"],
        "formats": ["<u8", "<u2", "<u2", "i1", "V3"],
        "offsets": [0, 8, 10, 12, 13],
        "itemsize": 16,
    }
)
CSV_HEADER = "t_us,x,y,p"

DEFAULT_BIN_LEN = 200_000
DEFAULT_FRAMES_PER_BIN = 6


class EventFormatError(ValueError):
    """Malformed or invariant-violating event data."""


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


def _empty_records(n: int) -> np.ndarray:
    return np.zeros(n, dtype=RECORD)


@dataclass
class EventStream:
    """Events from one sensor of size ``width`` x ``height``, sorted by time."""

    width: int
    height: int
    records: np.ndarray

    def __post_init__(self):
        if self.records.dtype != RECORD:
            raise TypeError("records must use the EVG1 record dtype")

    @classmethod
    def from_arrays(cls, width, height, t, x, y, p, validate=True) -> "EventStream":
        t = np.asarray(t)
        rec = _empty_records(len(t))
        rec["t"] = t
        rec["x"] = x
        rec["y"] = y
        rec["p"] = p
        s = cls(int(width), int(height), rec)
        if validate:
            s.validate()
        return s

    @classmethod
    def empty(cls, width, height) -> "EventStream":
        return cls(int(width), int(height), _empty_records(0))

    @property
    def t(self) -> np.ndarray:
        return self.records["t"]

    @property
    def x(self) -> np.ndarray:
        return self.records["x"]

    @property
    def y(self) -> np.ndarray:
        return self.records["y"]

    @property
    def p(self) -> np.ndarray:
        return self.records["p"]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Event]:
        for r in self.records:
            yield Event(int(r["t"]), int(r["x"]), int(r["y"]), int(r["p"]))

    def __getitem__(self, idx) -> "EventStream":
        return EventStream(self.width, self.height, self.records[idx])

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.records.tobytes() == other.records.tobytes()
        )

    def validate(self) -> None:
        """Raise EventFormatError on the first violated invariant."""
        if not (0 < self.width <= 0xFFFF and 0 < self.height <= 0xFFFF):
            raise EventFormatError(f"bad geometry {self.width}x{self.height}")
        if len(self) == 0:
            return
        bad = np.flatnonzero((self.x >= self.width) | (self.y >= self.height))
        if bad.size:
            i = bad[0]
            raise EventFormatError(
                f"coordinate ({self.x[i]}, {self.y[i]}) out of range at event {i}"
            )
        bad = np.flatnonzero((self.p != 1) & (self.p != -1))
        if bad.size:
            raise EventFormatError(f"polarity {self.p[bad[0]]} at event {bad[0]}")
        bad = np.flatnonzero(self.t[1:] < self.t[:-1])
        if bad.size:
            raise EventFormatError(f"non-monotonic timestamp at event {bad[0] + 1}")


# -- CSV ---------------------------------------------------------------------


def read_csv(source: BinaryIO | bytes | str, width: int, height: int) -> EventStream:
    """Parse ``t_us,x,y,p`` text. Polarity 0 is read as -1.

    Errors name the 1-based line number, counting the header as line 1.
    """
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read().decode("utf-8")
    lines = text.splitlines()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise EventFormatError(f"line 1: expected header '{CSV_HEADER}'")

    n = len(lines) - 1
    t = np.empty(n, dtype=np.uint64)
    xs = np.empty(n, dtype=np.int64)
    ys = np.empty(n, dtype=np.int64)
    ps = np.empty(n, dtype=np.int8)
    k = 0
    prev = -1
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise EventFormatError(f"malformed line {lineno}: {line!r}")
        try:
            ti, xi, yi, pi = (int(v) for v in parts)
        except ValueError:
            raise EventFormatError(f"malformed line {lineno}: {line!r}") from None
        if ti < 0 or ti >= 2**64:
            raise EventFormatError(f"timestamp out of range at line {lineno}")
        if not (0 <= xi < width and 0 <= yi < height):
            raise EventFormatError(f"coordinate ({xi}, {yi}) out of range at line {lineno}")
        if pi not in (1, 0, -1):
            raise EventFormatError(f"polarity {pi} at line {lineno}")
        if ti < prev:
            raise EventFormatError(f"non-monotonic at line {lineno}")
        prev = ti
        t[k], xs[k], ys[k], ps[k] = ti, xi, yi, 1 if pi == 1 else -1
        k += 1
    return EventStream.from_arrays(width, height, t[:k], xs[:k], ys[:k], ps[:k])


def write_csv(stream: EventStream) -> bytes:
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    for e in stream:
        out.write(f"{e.t},{e.x},{e.y},{e.p}\n")
    return out.getvalue().encode("utf-8")


# -- EVG1 binary -------------------------------------------------------------


def write_binary(stream: EventStream) -> bytes:
    head = np.zeros(1, dtype=HEADER)
    head["magic"] = MAGIC
    head["width"] = stream.width
    head["height"] = stream.height
    rec = stream.records.copy()
    rec["pad"] = b"\x00\x00\x00"
    return head.tobytes() + rec.tobytes()


def read_binary(source: BinaryIO | bytes) -> EventStream:
    data = bytes(source) if isinstance(source, (bytes, bytearray)) else source.read()
    if len(data) < HEADER.itemsize or data[:4] != MAGIC:
        raise EventFormatError("bad magic")
    head = np.frombuffer(data, dtype=HEADER, count=1)[0]
    body = data[HEADER.itemsize:]
    if len(body) % RECORD.itemsize:
        raise EventFormatError(
            f"truncated record: {len(body) % RECORD.itemsize} trailing bytes"
        )
    rec = np.frombuffer(body, dtype=RECORD).copy()
    if len(rec) and np.any(rec.view(np.uint8).reshape(-1, 16)[:, 13:]):
        raise EventFormatError("non-zero padding bytes")
    stream = EventStream(int(head["width"]), int(head["height"]), rec)
    stream.validate()
    return stream


def load(path, width: int | None = None, height: int | None = None) -> EventStream:
    """Read an ``EVG1`` file, or a ``.csv`` file given the sensor geometry."""
    with open(path, "rb") as f:
        if str(path).lower().endswith(".csv"):
            if width is None or height is None:
                raise EventFormatError("CSV input needs --width/--height")
            return read_csv(f, width, height)
        return read_binary(f)


def save(stream: EventStream, path) -> None:
    with open(path, "wb") as f:
        f.write(write_binary(stream))


# -- temporal grid -----------------------------------------------------------


@dataclass(frozen=True)
class WindowGrid:
    """A T x Bn grid of frames starting at ``t0``.

    Bins are exactly ``bin_len`` long. Frame ``j`` of a bin spans
    ``[floor(j * bin_len / Bn), floor((j + 1) * bin_len / Bn))`` relative to
    the bin start, so uneven divisions (200 ms / 6) keep the bin exact and
    frame lengths differ by at most 1 us.
    """

    t0: int
    bin_len: int
    T: int
    Bn: int

    def __post_init__(self):
        if self.T < 1 or self.Bn < 1:
            raise ValueError("T and Bn must be >= 1")
        if self.bin_len < self.Bn:
            raise ValueError("bin_len shorter than Bn microseconds")

    @property
    def frame_len(self) -> float:
        return self.bin_len / self.Bn

    @property
    def num_frames(self) -> int:
        return self.T * self.Bn

    @property
    def t_end(self) -> int:
        return self.t0 + self.T * self.bin_len

    def frame_bounds(self, k: int) -> tuple[int, int]:
        """[start, end) of flat frame index ``k = bin * Bn + frame``."""
        b, j = divmod(k, self.Bn)
        base = self.t0 + b * self.bin_len
        return (
            base + (j * self.bin_len) // self.Bn,
            base + ((j + 1) * self.bin_len) // self.Bn,
        )

    def boundaries(self) -> np.ndarray:
        """All frame edges, length ``num_frames + 1``."""
        k = np.arange(self.num_frames + 1, dtype=np.int64)
        b, j = np.divmod(k, self.Bn)
        return self.t0 + b * self.bin_len + (j * self.bin_len) // self.Bn

    def frame_index(self, t) -> np.ndarray:
        """Flat frame index of each timestamp (may exceed the grid)."""
        rel = np.asarray(t, dtype=np.int64) - self.t0
        b, r = np.divmod(rel, self.bin_len)
        # smallest j with floor((j+1)*L/Bn) > r
        j = ((r + 1) * self.Bn - 1) // self.bin_len
        return b * self.Bn + j


def make_grid(
    t0: int,
    t_last: int,
    bin_len: int = DEFAULT_BIN_LEN,
    frame_len: int | None = None,
    frames_per_bin: int | None = None,
    num_bins: int | None = None,
) -> WindowGrid:
    if frame_len is not None:
        if bin_len % frame_len:
            raise ValueError(f"bin_len {bin_len} not divisible by frame_len {frame_len}")
        bn = bin_len // frame_len
        if frames_per_bin is not None and frames_per_bin != bn:
            raise ValueError("frame_len and frames_per_bin disagree")
    else:
        bn = frames_per_bin or DEFAULT_FRAMES_PER_BIN
    if num_bins is None:
        num_bins = (t_last - t0) // bin_len + 1
    return WindowGrid(int(t0), int(bin_len), int(num_bins), int(bn))


def slice_windows(
    stream: EventStream,
    bin_len: int = DEFAULT_BIN_LEN,
    frame_len: int | None = None,
    frames_per_bin: int | None = None,
    t0: int | None = None,
    num_bins: int | None = None,
) -> tuple[WindowGrid, list[EventStream]]:
    """Partition a stream into ``T * Bn`` half-open frames.

    The grid starts at the first event unless ``t0`` is given. ``num_bins``
    fixes T; events past the grid end are dropped in that case.
    """
    if len(stream) == 0:
        raise EventFormatError("empty stream")
    first, last = int(stream.t[0]), int(stream.t[-1])
    if t0 is None:
        t0 = first
    elif t0 > first:
        raise ValueError("t0 after first event")
    grid = make_grid(t0, last, bin_len, frame_len, frames_per_bin, num_bins)
    edges = np.searchsorted(stream.t, grid.boundaries().astype(np.uint64), side="left")
    slices = [stream[edges[k]:edges[k + 1]] for k in range(grid.num_frames)]
    return grid, slices
