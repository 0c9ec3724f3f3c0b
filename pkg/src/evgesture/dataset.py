"""Turn a corpus manifest (or in-memory samples) into LNES training sets."""

from __future__ import annotations

import math
import os

import numpy as np

from .events import EventStream, load
from .lnes import stream_to_volume
from .model import LabeledSet
from .stats import load_manifest

SPLITS = ("train", "val", "test")


def volumes_from_streams(streams: list[EventStream], bin_len: int, frames_per_bin: int,
                         num_bins: int, dtype="float32") -> np.ndarray:
    """Stack fixed-grid LNES volumes ``(n, T, Bn, 2, H, W)`` with the grid at t=0."""
    return np.stack([
        stream_to_volume(s, bin_len, frames_per_bin, t0=0, num_bins=num_bins)
        for s in streams
    ]).astype(dtype)


def bins_for_duration(duration_us: int, bin_len: int) -> int:
    return max(1, math.ceil(duration_us / bin_len))


def from_samples(samples, split: str, bin_len=200_000, frames_per_bin=6, num_bins=2,
                 dtype="float32") -> LabeledSet:
    chosen = [s for s in samples if s.split == split]
    vols = volumes_from_streams([s.stream for s in chosen], bin_len, frames_per_bin,
                                num_bins, dtype)
    return LabeledSet(vols, np.array([s.label for s in chosen], dtype=np.int64))


def from_manifest(path, split: str, bin_len=200_000, frames_per_bin=6,
                  dtype="float32") -> LabeledSet:
    manifest = load_manifest(path)
    num_bins = bins_for_duration(int(manifest["duration_us"]), bin_len)
    entries = [e for e in manifest["samples"] if e["split"] == split]
    if not entries:
        raise ValueError(f"no samples in split {split!r}")
    streams = [load(os.path.join(manifest["_root"], e["path"])) for e in entries]
    vols = volumes_from_streams(streams, bin_len, frames_per_bin, num_bins, dtype)
    return LabeledSet(vols, np.array([int(e["class"]) for e in entries], dtype=np.int64))
