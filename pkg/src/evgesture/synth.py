"""Synthetic egocentric event streams.

A scene is a textured background that drifts with a smooth head-motion
trajectory, plus one or two bright Gaussian blobs ("hands") whose path encodes
the gesture class. Events come from a per-pixel log-intensity threshold
model sampled at a fixed step, with linearly interpolated timestamps and
Poisson background noise.

Classes:

* ``left_sweep``: one blob from the right edge to the left and back.
* ``right_sweep``: the mirror image, starting on the left.
* ``circle``: one blob on a circle, one revolution per sequence.
* ``converge_pair``: two blobs meet in the middle three times.
* ``static``: one motionless blob; only head motion and noise move.

The two sweeps visit the same positions with the same velocities, only in
opposite order, so telling them apart needs temporal context.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .events import EventStream, save

CLASS_NAMES = ("left_sweep", "right_sweep", "circle", "converge_pair", "static")
TWO_HANDED = {"converge_pair"}

# Style bands per parameter. Held-out subjects draw from a band that lies
# between the training bands and overlaps none of them.
TRAIN_STYLE = {
    "speed": ((0.70, 0.82), (0.98, 1.10)),
    "blob_size": ((2.4, 2.8), (3.4, 3.8)),
    "ego_amp": ((8.0, 16.0), (26.0, 34.0)),
}
TEST_STYLE = {
    "speed": ((0.85, 0.95),),
    "blob_size": ((2.9, 3.3),),
    "ego_amp": ((18.0, 24.0),),
}


@dataclass
class SynthConfig:
    width: int = 64
    height: int = 64
    duration: int = 400_000  # us
    classes: tuple = CLASS_NAMES
    ego_amplitude: float = 20.0  # px/s, peak head-motion speed
    threshold: float = 0.2  # log-intensity step per event
    noise_rate: float = 0.2  # events / px / s
    step: int = 1000  # us, simulation step
    seed: int = 0
    heterogeneous: bool = True
    subjects: tuple = (4, 1, 2)  # synthetic subjects per train/val/test split

    def __post_init__(self):
        self.classes = tuple(self.classes)
        self.subjects = tuple(self.subjects)
        if self.ego_amplitude < 0:
            raise ValueError("ego amplitude must be >= 0")
        if self.threshold <= 0:
            raise ValueError("threshold must be > 0")
        if self.duration <= 0 or self.step <= 0:
            raise ValueError("duration and step must be > 0")
        if self.noise_rate < 0:
            raise ValueError("noise rate must be >= 0")
        unknown = set(self.classes) - set(CLASS_NAMES)
        if unknown:
            raise ValueError(f"unknown classes {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classes"] = list(self.classes)
        d["subjects"] = list(self.subjects)
        return d


@dataclass
class Style:
    """Per-sample motion style. ``speed`` scales the gesture amplitude."""

    speed: float = 1.0
    blob_size: float = 3.0
    ego_amp: float | None = None  # None: use the config's ego_amplitude
    dx: float = 0.0
    dy: float = 0.0
    ego_phase: tuple = (0.0, 0.0)
    ego_freq: float = 1.5

    def to_dict(self):
        d = asdict(self)
        d["ego_phase"] = list(self.ego_phase)
        return d


# -- scene -------------------------------------------------------------------


def _texture_waves(seed):
    rng = np.random.default_rng([seed, 7919])
    n = 6
    ang = rng.uniform(0, math.pi, n)
    freq = rng.uniform(0.15, 0.5, n)
    return np.cos(ang) * freq, np.sin(ang) * freq, rng.uniform(0, 2 * math.pi, n)


def ego_offset(cfg: SynthConfig, style: Style, t: float) -> tuple[float, float]:
    """Background displacement in pixels; peak speed is the ego amplitude."""
    amp = cfg.ego_amplitude if style.ego_amp is None else style.ego_amp
    w = 2 * math.pi * style.ego_freq
    s = t * 1e-6
    px, py = style.ego_phase
    return (
        amp / w * (math.sin(w * s + px) - math.sin(px)),
        0.6 * amp / w * (math.sin(1.3 * w * s + py) - math.sin(py)),
    )


def blob_centers(cfg: SynthConfig, class_name: str, t: float, style: Style) -> list:
    W, H = cfg.width, cfg.height
    cx, cy = W / 2 + style.dx, H / 2 + style.dy
    A = style.speed * 0.3 * W
    ph = 2 * math.pi * t / cfg.duration
    if class_name == "left_sweep":
        return [(cx + A * math.cos(ph), cy)]
    if class_name == "right_sweep":
        return [(cx - A * math.cos(ph), cy)]
    if class_name == "circle":
        r = 0.7 * A
        return [(cx + r * math.cos(ph), cy + r * math.sin(ph))]
    if class_name == "converge_pair":
        gap = 0.08 * W
        off = gap + (A - gap) * (0.5 + 0.5 * math.cos(3 * ph))
        return [(cx - off, cy), (cx + off, cy)]
    if class_name == "static":
        return [(cx, cy)]
    raise ValueError(f"unknown class {class_name!r}")


class _Scene:
    """Pixel grid and background texture, built once per stream."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.ys, self.xs = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)
        self.kx, self.ky, self.ph = _texture_waves(cfg.seed)

    def render(self, class_id: int, t: float, style: Style) -> np.ndarray:
        ox, oy = ego_offset(self.cfg, style, t)
        bg = np.zeros_like(self.xs)
        for kx, ky, ph in zip(self.kx, self.ky, self.ph):
            bg += np.sin(kx * (self.xs + ox) + ky * (self.ys + oy) + ph)
        img = 0.35 + 0.04 * bg
        two_sig2 = 2 * style.blob_size ** 2
        for bx, by in blob_centers(self.cfg, self.cfg.classes[class_id], t, style):
            gx = np.exp(-((self.xs[0] - bx) ** 2) / two_sig2)
            gy = np.exp(-((self.ys[:, 0] - by) ** 2) / two_sig2)
            img += 0.8 * np.outer(gy, gx)
        return img


def render_scene(cfg: SynthConfig, class_id: int, t: float, style: Style | None = None):
    """Intensity image ``(H, W)`` at time ``t`` (us), values in (0, 1.5]."""
    return _Scene(cfg).render(class_id, t, style or Style())


# -- events ------------------------------------------------------------------


def emit_events(cfg: SynthConfig, class_id: int, style: Style | None = None,
                rng=None) -> EventStream:
    style = style or Style()
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    theta = cfg.threshold
    steps = cfg.duration // cfg.step
    scene = _Scene(cfg)
    prev = np.log(scene.render(class_id, 0.0, style))
    ref = prev.copy()
    ts, xs, ys, ps = [], [], [], []
    for k in range(1, steps + 1):
        t_prev = (k - 1) * cfg.step
        cur = np.log(scene.render(class_id, float(k * cfg.step), style))
        diff = cur - ref
        n = np.floor(np.abs(diff) / theta).astype(np.int64)
        if n.any():
            sign = np.sign(diff)
            change = cur - prev
            for j in range(1, int(n.max()) + 1):
                yy, xx = np.nonzero(n >= j)
                level = ref[yy, xx] + sign[yy, xx] * j * theta
                frac = (level - prev[yy, xx]) / change[yy, xx]
                frac = np.clip(frac, 0.0, 1.0)
                ts.append(np.floor(t_prev + frac * cfg.step).astype(np.int64))
                xs.append(xx)
                ys.append(yy)
                ps.append(sign[yy, xx].astype(np.int8))
            ref += np.sign(diff) * n * theta
        prev = cur
    n_noise = rng.poisson(cfg.noise_rate * cfg.width * cfg.height * cfg.duration * 1e-6)
    if n_noise:
        ts.append(rng.integers(0, cfg.duration, n_noise))
        xs.append(rng.integers(0, cfg.width, n_noise))
        ys.append(rng.integers(0, cfg.height, n_noise))
        ps.append(rng.choice(np.array([-1, 1], dtype=np.int8), n_noise))
    if not ts:
        return EventStream.empty(cfg.width, cfg.height)
    t = np.minimum(np.concatenate(ts), cfg.duration - 1)
    order = np.argsort(t, kind="stable")
    return EventStream.from_arrays(
        cfg.width, cfg.height, t[order],
        np.concatenate(xs)[order], np.concatenate(ys)[order], np.concatenate(ps)[order],
    )


# -- datasets ----------------------------------------------------------------


@dataclass
class Sample:
    stream: EventStream
    label: int
    split: str
    subject: str
    style: Style
    meta: dict = field(default_factory=dict)

    @property
    def class_name(self) -> str:
        return self.meta.get("class_name", str(self.label))


def split_counts(per_class: int) -> tuple[int, int, int]:
    """Per-class (train, val, test) counts; 12 -> (8, 2, 2)."""
    if per_class < 3:
        raise ValueError("need at least 3 samples per class to split")
    held = max(1, per_class // 6)
    return per_class - 2 * held, held, held


def _subject_styles(cfg: SynthConfig):
    """Subjects per split, each with one band and a center per style parameter.

    Training subjects alternate bands so both are covered.
    """
    rng = np.random.default_rng([cfg.seed, 104729])
    subjects = {}
    for split, count in zip(("train", "val", "test"), cfg.subjects):
        table = TEST_STYLE if (split == "test" and cfg.heterogeneous) else TRAIN_STYLE
        subs = []
        for i in range(count):
            bands = {k: b[(i + j) % len(b)] for j, (k, b) in enumerate(table.items())}
            center = {k: float(rng.uniform(*band)) for k, band in bands.items()}
            subs.append((f"{split}{i}", bands, center))
        subjects[split] = subs
    return subjects


def sample_style(bands: dict, center: dict, rng) -> Style:
    """A subject's style with per-sample jitter, kept inside the subject's bands."""
    vals = {}
    for k, (lo, hi) in bands.items():
        jitter = 0.25 * (hi - lo)
        vals[k] = float(np.clip(center[k] + rng.uniform(-jitter, jitter), lo, hi))
    return Style(
        speed=vals["speed"],
        blob_size=vals["blob_size"],
        ego_amp=vals["ego_amp"],
        dx=float(rng.uniform(-3, 3)),
        dy=float(rng.uniform(-3, 3)),
        ego_phase=(float(rng.uniform(0, 2 * math.pi)), float(rng.uniform(0, 2 * math.pi))),
        ego_freq=float(rng.uniform(1.0, 2.0)),
    )


def gen_dataset(cfg: SynthConfig, per_class: int) -> list[Sample]:
    """Balanced samples for every class, split into train/val/test.

    Each split has its own synthetic subjects. In heterogeneous mode the test
    subjects' style parameters come from bands disjoint from training.
    Every sample's RNG derives from ``(seed, class, index)``.
    """
    counts = split_counts(per_class)
    subjects = _subject_styles(cfg)
    out = []
    for c, name in enumerate(cfg.classes):
        idx = 0
        for split, count in zip(("train", "val", "test"), counts):
            subs = subjects[split]
            for i in range(count):
                sid, bands, center = subs[i % len(subs)]
                rng = np.random.default_rng([cfg.seed, c, idx])
                style = sample_style(bands, center, rng)
                stream = emit_events(cfg, c, style, rng)
                meta = {"class_name": name, "hands": 2 if name in TWO_HANDED else 1,
                        "index": idx}
                out.append(Sample(stream, c, split, sid, style, meta))
                idx += 1
    return out


def write_corpus(cfg: SynthConfig, samples: list[Sample], out_dir) -> str:
    """Write one ``EVG1`` file per sample and ``manifest.json``; returns its path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for s in samples:
        rel = f"{s.split}/{s.class_name}_{s.meta['index']:04d}.evg"
        os.makedirs(os.path.join(out_dir, s.split), exist_ok=True)
        save(s.stream, os.path.join(out_dir, rel))
        entries.append({
            "path": rel,
            "class": s.label,
            "class_name": s.class_name,
            "split": s.split,
            "subject": s.subject,
            "hands": s.meta["hands"],
            "handedness": "bimanual" if s.meta["hands"] == 2 else "unimanual",
            "style": s.style.to_dict(),
        })
    manifest = {
        "geometry": [cfg.width, cfg.height],
        "duration_us": cfg.duration,
        "classes": list(cfg.classes),
        "synth_config": cfg.to_dict(),
        "samples": entries,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1)
    return path
