"""Label processing: weak-from-strong derivation, frame rasterization, and
pseudo-strong labels from classification-branch frame probabilities.

A frame is considered active for a class when the frame's start time lies in
[onset, offset) of one of that class's events.  Pseudo labels carry a
per-frame certainty flag: a frame is certain only when every class
probability clears the positive threshold or falls below the negative one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dataio import StrongLabel, WeakLabelRecord


@dataclass
class FrameTagGrid:
    """Per-frame multi-hot class activity plus per-frame certainty."""

    active: np.ndarray  # (T, C) bool
    certain: np.ndarray  # (T,) bool

    @property
    def n_frames(self) -> int:
        return self.active.shape[0]

    def tags_at(self, t: int) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.active[t]).tolist())


def weak_from_strong(strong: Iterable[StrongLabel]) -> dict[str, WeakLabelRecord]:
    """Clip-level class sets: the union of classes in each clip's events."""
    sets: dict[str, set[int]] = {}
    for lab in strong:
        sets.setdefault(lab.clip_id, set()).add(lab.class_idx)
    return {cid: WeakLabelRecord(cid, frozenset(classes)) for cid, classes in sets.items()}


def strong_to_frame_grid(
    strong: Sequence[StrongLabel], n_frames: int, n_classes: int, hop: int, rate: int
) -> FrameTagGrid:
    """Rasterize ground-truth events; every frame is certain."""
    active = np.zeros((n_frames, n_classes), dtype=bool)
    if n_frames:
        starts = np.arange(n_frames) * hop / rate
        for lab in strong:
            active[(starts >= lab.onset) & (starts < lab.offset), lab.class_idx] = True
    return FrameTagGrid(active, np.ones(n_frames, dtype=bool))


def wps_from_probs(frame_probs: np.ndarray, tau_pos: float, tau_neg: float) -> FrameTagGrid:
    """Pseudo-strong labels from frame probabilities with a confidence band.

    active = p >= tau_pos; a frame is certain iff no class probability lies
    strictly inside (tau_neg, tau_pos).
    """
    if not (0.0 <= tau_neg < tau_pos <= 1.0):
        raise ValueError(f"need 0 <= tau_neg < tau_pos <= 1, got ({tau_neg}, {tau_pos})")
    probs = np.asarray(frame_probs, dtype=np.float64)
    active = probs >= tau_pos
    certain = np.all(active | (probs <= tau_neg), axis=1)
    return FrameTagGrid(active, certain)


def restrict_wps_to_weak(grid: FrameTagGrid, weak: WeakLabelRecord | frozenset[int]) -> FrameTagGrid:
    """Clear activity for classes outside the clip's weak label set."""
    classes = weak.classes if isinstance(weak, WeakLabelRecord) else weak
    mask = np.zeros(grid.active.shape[1], dtype=bool)
    mask[list(classes)] = True
    return FrameTagGrid(grid.active & mask[None, :], grid.certain.copy())
