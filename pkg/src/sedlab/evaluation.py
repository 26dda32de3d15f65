"""Detection scoring at three granularities: event, segment, and tag level.

Event matching uses onset/offset collars (defaults follow the DCASE
convention: 200 ms onset collar, offset collar max(200 ms, 20% of the
reference duration)) with deterministic greedy one-to-one matching:
references are visited in (onset, offset, class) order and each takes the
first unused same-class estimate in (onset, offset, class) order whose
collars fit.  Counts are micro-averaged across clips and classes by
default; macro averaging is available for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import medfilt

from .dataio import StrongLabel, WeakLabelRecord
from .features import frame_start_time

GRANULARITY_EVENT = "event"
GRANULARITY_SEGMENT = "segment"
GRANULARITY_TAG = "tag"


@dataclass
class EvalConfig:
    decode_threshold: float = 0.5
    median_window: int = 7
    onset_collar: float = 0.2
    offset_collar: float = 0.2
    offset_ratio: float = 0.2
    segment_length: float = 1.0
    average: str = "micro"
    tag_threshold: float = 0.5


@dataclass
class F1Report:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    granularity: str

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, granularity: str) -> "F1Report":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(tp, fp, fn, precision, recall, f1, granularity)


def decode_events(
    frame_probs: np.ndarray,
    clip_id: str,
    threshold: float = 0.5,
    median_window: int = 7,
    hop: int = 255,
    rate: int = 16000,
) -> list[StrongLabel]:
    """Binarize, median-filter, and emit one event per maximal active run."""
    if median_window % 2 != 1:
        raise ValueError("median_window must be odd")
    probs = np.asarray(frame_probs, dtype=np.float64)
    events: list[StrongLabel] = []
    for c in range(probs.shape[1]):
        binary = (probs[:, c] >= threshold).astype(np.float64)
        if median_window > 1 and len(binary) > 0:
            binary = medfilt(binary, kernel_size=median_window)
        active = binary > 0.5
        t = 0
        while t < len(active):
            if active[t]:
                start = t
                while t < len(active) and active[t]:
                    t += 1
                events.append(
                    StrongLabel(clip_id, c, frame_start_time(start, hop, rate), frame_start_time(t, hop, rate))
                )
            else:
                t += 1
    events.sort(key=lambda e: (e.onset, e.class_idx, e.offset))
    return events


def _group_by_clip(labels: Iterable[StrongLabel]) -> dict[str, list[StrongLabel]]:
    groups: dict[str, list[StrongLabel]] = {}
    for lab in labels:
        groups.setdefault(lab.clip_id, []).append(lab)
    return groups


def _greedy_match_counts(
    ref: Sequence[StrongLabel],
    est: Sequence[StrongLabel],
    onset_collar: float,
    offset_collar: float,
    offset_ratio: float,
) -> dict[int, list[int]]:
    """Per-class [tp, fp, fn] from the documented greedy one-to-one matching."""
    order = lambda lab: (lab.onset, lab.offset, lab.class_idx)
    ref_sorted = sorted(ref, key=order)
    est_sorted = sorted(est, key=order)
    used = [False] * len(est_sorted)
    counts: dict[int, list[int]] = {}
    for lab in ref_sorted + est_sorted:
        counts.setdefault(lab.class_idx, [0, 0, 0])
    for r in ref_sorted:
        collar_off = max(offset_collar, offset_ratio * (r.offset - r.onset))
        for k, e in enumerate(est_sorted):
            if used[k] or e.class_idx != r.class_idx:
                continue
            if abs(e.onset - r.onset) <= onset_collar and abs(e.offset - r.offset) <= collar_off:
                used[k] = True
                counts[r.class_idx][0] += 1
                break
        else:
            counts[r.class_idx][2] += 1
    for k, e in enumerate(est_sorted):
        if not used[k]:
            counts[e.class_idx][1] += 1
    return counts


def _aggregate(per_class: dict[int, list[int]], average: str, granularity: str) -> F1Report:
    tp = sum(v[0] for v in per_class.values())
    fp = sum(v[1] for v in per_class.values())
    fn = sum(v[2] for v in per_class.values())
    if average == "micro" or not per_class:
        return F1Report.from_counts(tp, fp, fn, granularity)
    if average != "macro":
        raise ValueError(f"average must be 'micro' or 'macro', got {average!r}")
    f1s = [F1Report.from_counts(*v, granularity).f1 for v in per_class.values()]
    macro = float(np.mean(f1s))
    report = F1Report.from_counts(tp, fp, fn, granularity)
    report.f1 = macro
    return report


def event_based_f1(
    ref: Iterable[StrongLabel],
    est: Iterable[StrongLabel],
    onset_collar: float = 0.2,
    offset_collar: float = 0.2,
    offset_ratio: float = 0.2,
    average: str = "micro",
) -> F1Report:
    """Collar-based event matching aggregated over clips and classes."""
    ref_groups = _group_by_clip(ref)
    est_groups = _group_by_clip(est)
    per_class: dict[int, list[int]] = {}
    for clip_id in sorted(set(ref_groups) | set(est_groups)):
        counts = _greedy_match_counts(
            ref_groups.get(clip_id, ()), est_groups.get(clip_id, ()), onset_collar, offset_collar, offset_ratio
        )
        for c, (tp, fp, fn) in counts.items():
            acc = per_class.setdefault(c, [0, 0, 0])
            acc[0] += tp
            acc[1] += fp
            acc[2] += fn
    return _aggregate(per_class, average, GRANULARITY_EVENT)


def segment_based_f1(
    ref: Iterable[StrongLabel],
    est: Iterable[StrongLabel],
    segment_length: float = 1.0,
    average: str = "micro",
) -> F1Report:
    """Fixed-length segment activity comparison (any overlap activates)."""
    if segment_length <= 0:
        raise ValueError("segment_length must be positive")
    ref_groups = _group_by_clip(ref)
    est_groups = _group_by_clip(est)
    per_class: dict[int, list[int]] = {}

    def active_segments(labels: Sequence[StrongLabel], n_segments: int) -> dict[int, set[int]]:
        out: dict[int, set[int]] = {}
        for lab in labels:
            first = int(np.floor(lab.onset / segment_length))
            last = int(np.ceil(lab.offset / segment_length))
            for s in range(max(first, 0), min(last, n_segments)):
                seg_start = s * segment_length
                if lab.onset < seg_start + segment_length and lab.offset > seg_start:
                    out.setdefault(lab.class_idx, set()).add(s)
        return out

    for clip_id in sorted(set(ref_groups) | set(est_groups)):
        r = ref_groups.get(clip_id, [])
        e = est_groups.get(clip_id, [])
        horizon = max([lab.offset for lab in r + e], default=0.0)
        n_segments = int(np.ceil(horizon / segment_length)) if horizon > 0 else 0
        ref_act = active_segments(r, n_segments)
        est_act = active_segments(e, n_segments)
        for c in set(ref_act) | set(est_act):
            acc = per_class.setdefault(c, [0, 0, 0])
            rs = ref_act.get(c, set())
            es = est_act.get(c, set())
            acc[0] += len(rs & es)
            acc[1] += len(es - rs)
            acc[2] += len(rs - es)
    return _aggregate(per_class, average, GRANULARITY_SEGMENT)


def tagging_f1(
    ref_weak: Iterable[WeakLabelRecord],
    est_weak: Iterable[WeakLabelRecord],
    average: str = "micro",
) -> F1Report:
    """Clip-level class presence comparison; clip id sets must match."""
    ref_map = {r.clip_id: r.classes for r in ref_weak}
    est_map = {r.clip_id: r.classes for r in est_weak}
    if set(ref_map) != set(est_map):
        only_ref = sorted(set(ref_map) - set(est_map))
        only_est = sorted(set(est_map) - set(ref_map))
        raise ValueError(f"clip id sets differ: ref-only {only_ref}, est-only {only_est}")
    per_class: dict[int, list[int]] = {}
    for clip_id in sorted(ref_map):
        for c in ref_map[clip_id] | est_map[clip_id]:
            acc = per_class.setdefault(c, [0, 0, 0])
            in_ref = c in ref_map[clip_id]
            in_est = c in est_map[clip_id]
            if in_ref and in_est:
                acc[0] += 1
            elif in_est:
                acc[1] += 1
            else:
                acc[2] += 1
    return _aggregate(per_class, average, GRANULARITY_TAG)
