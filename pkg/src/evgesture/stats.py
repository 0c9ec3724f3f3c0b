"""Event-rate and duration statistics over a corpus manifest.

A normalized rate is a sequence's event rate divided by the highest rate in
its group (subject, class, or handedness), so each group spans (0, 1] with
its maximum at exactly 1.
"""

from __future__ import annotations

import csv
import io
import json
import os
from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np

from .events import EventStream, load

GROUP_KEYS = ("subject", "class", "handedness")


@dataclass
class SequenceStats:
    duration_s: float
    count: int
    rate: float
    degenerate: bool = False


def sequence_stats(stream: EventStream) -> SequenceStats:
    """Duration, event count and rate. A single-timestamp stream reports its
    count as the rate and sets ``degenerate``."""
    n = len(stream)
    if n == 0:
        raise ValueError("empty stream")
    duration = (int(stream.t[-1]) - int(stream.t[0])) / 1e6
    if duration == 0:
        return SequenceStats(0.0, n, float(n), True)
    return SequenceStats(duration, n, n / duration)


def load_manifest(path) -> dict:
    with open(path) as f:
        manifest = json.load(f)
    manifest["_root"] = os.path.dirname(os.path.abspath(path))
    return manifest


def _group_value(entry: dict, key: str):
    if key == "handedness":
        if "handedness" in entry:
            return entry["handedness"]
        if "hands" in entry:
            return "bimanual" if int(entry["hands"]) == 2 else "unimanual"
    elif key in entry:
        return entry[key]
    raise KeyError(f"sequence {entry.get('path', '?')} has no {key!r} metadata")


def corpus_records(manifest: dict, splits=None, empty: list | None = None) -> list[dict]:
    """Manifest entries annotated with their sequence statistics.

    Sequences without events have no rate; their paths go to ``empty`` when
    a list is given, and are dropped either way.
    """
    out = []
    for entry in manifest["samples"]:
        if splits and entry.get("split") not in splits:
            continue
        stream = load(os.path.join(manifest["_root"], entry["path"]))
        if len(stream) == 0:
            if empty is not None:
                empty.append(entry["path"])
            continue
        st = sequence_stats(stream)
        out.append({**entry, **asdict(st)})
    return out


def normalized_rates(records: list[dict], group_by: str = "subject") -> dict:
    """Per-group normalized rates plus per-class means and a handedness split.

    Returns ``{"groups": {g: [{path, class, rate, normalized}, ...]},
    "class_means": {g: {class: mean}}, "handedness": {label: mean}}``.
    Output does not depend on record order.
    """
    if group_by not in GROUP_KEYS:
        raise ValueError(f"group_by must be one of {GROUP_KEYS}")
    groups: dict = defaultdict(list)
    for r in records:
        groups[str(_group_value(r, group_by))].append(r)
    result = {"group_by": group_by, "groups": {}, "class_means": {}, "handedness": {}}
    hand_vals = defaultdict(list)
    for g in sorted(groups):
        rows = sorted(groups[g], key=lambda r: r["path"])
        top = max(r["rate"] for r in rows)
        table = []
        per_class = defaultdict(list)
        for r in rows:
            norm = r["rate"] / top
            table.append({"path": r["path"], "class": r.get("class"), "rate": r["rate"],
                          "normalized": norm})
            per_class[str(r.get("class_name", r.get("class")))].append(norm)
            try:
                hand_vals[_group_value(r, "handedness")].append(norm)
            except KeyError:
                pass
        result["groups"][g] = table
        result["class_means"][g] = {c: float(np.mean(v)) for c, v in sorted(per_class.items())}
    result["handedness"] = {k: float(np.mean(v)) for k, v in sorted(hand_vals.items())}
    return result


def rate_spread(norm: dict) -> dict:
    """Max/min normalized rate within each group."""
    return {g: max(r["normalized"] for r in rows) / min(r["normalized"] for r in rows)
            for g, rows in norm["groups"].items()}


def duration_histogram(records: list[dict]) -> dict:
    """Cumulative duration (s) per class, split into per-subject segments.

    Classes with no sequences do not appear.
    """
    table: dict = defaultdict(lambda: defaultdict(float))
    for r in records:
        cls = str(r.get("class_name", _group_value(r, "class")))
        table[cls][str(_group_value(r, "subject"))] += r["duration_s"]
    return {
        c: {"total": float(sum(segs.values())), "subjects": dict(sorted(segs.items()))}
        for c, segs in sorted(table.items())
    }


def histogram_csv(hist: dict) -> str:
    subjects = sorted({s for row in hist.values() for s in row["subjects"]})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "total_s"] + subjects)
    for c, row in hist.items():
        w.writerow([c, f"{row['total']:.6f}"] + [f"{row['subjects'].get(s, 0.0):.6f}"
                                                  for s in subjects])
    return buf.getvalue()


def corpus_report(manifest_path, group_by: str = "subject") -> dict:
    manifest = load_manifest(manifest_path)
    empty: list = []
    records = corpus_records(manifest, empty=empty)
    if not records:
        raise ValueError("corpus has no non-empty sequences")
    norm = normalized_rates(records, group_by)
    return {
        "sequences": [{k: r[k] for k in ("path", "duration_s", "count", "rate", "degenerate")}
                      for r in records],
        "empty_sequences": empty,
        "normalized_rates": norm,
        "rate_spread": rate_spread(norm),
        "duration_histogram": duration_histogram(records),
    }
