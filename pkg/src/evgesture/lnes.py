"""Locally normalized event surfaces.

Each frame becomes a 2 x H x W image: channel 0 for positive events, channel 1
for negative. A cell holds ``(t_latest - frame_start + 1) / frame_len`` for
the most recent event of that polarity at that pixel, or 0 if there was none.
The +1 keeps an event at ``frame_start`` distinct from an empty cell.
"""

from __future__ import annotations

import json

import numpy as np

from . import kernels
from .events import EventStream, WindowGrid, make_grid, slice_windows


def _as_i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def build_lnes(frame_events: EventStream, frame_start: int, frame_len: int) -> np.ndarray:
    """Surface of one frame, shape ``(2, H, W)``."""
    t = frame_events.t.astype(np.int64)
    if len(t) and (t.min() < frame_start or t.max() >= frame_start + frame_len):
        bad = t[(t < frame_start) | (t >= frame_start + frame_len)][0]
        raise ValueError(
            f"event at t={bad} outside frame [{frame_start}, {frame_start + frame_len})"
        )
    stamps = kernels.latest_stamp(
        np.zeros(len(t), dtype=np.int64),
        _as_i64(t - frame_start + 1),
        _as_i64(frame_events.x),
        _as_i64(frame_events.y),
        np.ascontiguousarray(frame_events.p, dtype=np.int8),
        1,
        frame_events.height,
        frame_events.width,
    )
    return stamps[0] / frame_len


def stack_lnes(grid: WindowGrid, slices: list[EventStream]) -> np.ndarray:
    """Volume of shape ``(T, Bn, 2, H, W)``; entry ``[t, b]`` is frame ``t*Bn + b``."""
    if len(slices) != grid.num_frames:
        raise ValueError(f"got {len(slices)} slices for a {grid.T}x{grid.Bn} grid")
    if not slices:
        raise ValueError("no slices")
    width, height = slices[0].width, slices[0].height
    edges = grid.boundaries()
    parts = []
    for k, s in enumerate(slices):
        t = s.t.astype(np.int64)
        if len(t) and (t[0] < edges[k] or t[-1] >= edges[k + 1]):
            raise ValueError(f"slice {k} has events outside its frame")
        parts.append(np.full(len(t), k, dtype=np.int64))
    frame = np.concatenate(parts)
    rec = np.concatenate([s.records for s in slices])
    stamp = rec["t"].astype(np.int64) - edges[frame] + 1
    out = kernels.latest_stamp(
        frame,
        _as_i64(stamp),
        _as_i64(rec["x"]),
        _as_i64(rec["y"]),
        np.ascontiguousarray(rec["p"], dtype=np.int8),
        grid.num_frames,
        height,
        width,
    )
    lens = np.diff(edges).astype(np.float64)
    out /= lens[:, None, None, None]
    return out.reshape(grid.T, grid.Bn, 2, height, width)


def stream_to_volume(
    stream: EventStream,
    bin_len: int,
    frames_per_bin: int,
    t0: int | None = 0,
    num_bins: int | None = None,
) -> np.ndarray:
    """Slice and stack in one call. Events beyond a fixed ``num_bins`` grid are dropped."""
    if len(stream) == 0:
        grid = make_grid(t0 or 0, t0 or 0, bin_len, frames_per_bin=frames_per_bin,
                         num_bins=num_bins or 1)
        return np.zeros((grid.T, grid.Bn, 2, stream.height, stream.width))
    if num_bins is not None:
        start = int(stream.t[0]) if t0 is None else t0
        end = start + num_bins * bin_len
        stream = stream[: int(np.searchsorted(stream.t, np.uint64(end), side="left"))]
        if len(stream) == 0:
            return stream_to_volume(stream, bin_len, frames_per_bin, start, num_bins)
    grid, slices = slice_windows(
        stream, bin_len, frames_per_bin=frames_per_bin, t0=t0, num_bins=num_bins
    )
    return stack_lnes(grid, slices)


def write_volume(f, volume: np.ndarray, bin_len: int, frames_per_bin: int) -> None:
    """JSON header line ``{shape, dtype, frame_len, bin_len}``, then float32 LE planar data."""
    header = {
        "shape": list(volume.shape),
        "dtype": "f32le",
        "frame_len": bin_len / frames_per_bin,
        "bin_len": bin_len,
    }
    f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
    f.write(np.ascontiguousarray(volume, dtype="<f4").tobytes())


def read_volume(f) -> tuple[dict, np.ndarray]:
    header = json.loads(f.readline().decode("utf-8"))
    if header.get("dtype") != "f32le":
        raise ValueError(f"unsupported volume dtype {header.get('dtype')!r}")
    shape = tuple(header["shape"])
    data = f.read()
    if len(data) != 4 * int(np.prod(shape)):
        raise ValueError("volume payload size does not match header shape")
    return header, np.frombuffer(data, dtype="<f4").reshape(shape)
