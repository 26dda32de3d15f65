"""Hierarchical pair sampling: clip-level pairs, then same-timestamp frame
pairs classified as Positive / Negative / Ignored.

Clip pairs over a batch are all unique unordered combinations.  A clip pair
is Matching when the two tag sets are equal and nonempty, Disjoint when they
are nonempty with empty intersection, and Ignored otherwise (partial overlap
or any empty set).  Frame pairs inherit Ignored from their clip pair or from
an uncertain frame; within Matching clips equal nonempty frame tags are
Positive, within Disjoint clips two nonempty (hence different) frame tags
are Negative.

Silent frames (empty tag sets) are ignored by default; with
``silence_as_class=True`` the empty set is treated as a dedicated background
class, so silence-silence frames in Matching clips become Positive and
silence-event frames in Disjoint clips become Negative.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .labels import FrameTagGrid


class ClipCase(Enum):
    MATCHING = "matching"
    DISJOINT = "disjoint"
    IGNORED = "ignored"


class PairCase(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    IGNORED = "ignored"


@dataclass(frozen=True)
class ClipPair:
    i: int
    j: int
    case: ClipCase


@dataclass(frozen=True)
class FramePair:
    i: int
    j: int
    t: int
    case: PairCase


def classify_clip_pair(
    tags_i: frozenset[int] | set[int],
    tags_j: frozenset[int] | set[int],
    silence_as_class: bool = False,
) -> ClipCase:
    a, b = set(tags_i), set(tags_j)
    if silence_as_class:
        a = a or {-1}
        b = b or {-1}
    if a == b and a:
        return ClipCase.MATCHING
    if a and b and not (a & b):
        return ClipCase.DISJOINT
    return ClipCase.IGNORED


def enumerate_clip_pairs(
    batch_tags: Sequence[frozenset[int] | set[int]], silence_as_class: bool = False
) -> list[ClipPair]:
    """All n*(n-1)/2 unordered pairs, classified, in lexicographic (i, j) order."""
    n = len(batch_tags)
    return [
        ClipPair(i, j, classify_clip_pair(batch_tags[i], batch_tags[j], silence_as_class))
        for i in range(n)
        for j in range(i + 1, n)
    ]


def classify_frame_pair(
    clip_case: ClipCase,
    ftags_i: frozenset[int] | set[int],
    ftags_j: frozenset[int] | set[int],
    certain_i: bool,
    certain_j: bool,
    silence_as_class: bool = False,
) -> PairCase:
    if not (certain_i and certain_j) or clip_case is ClipCase.IGNORED:
        return PairCase.IGNORED
    a, b = set(ftags_i), set(ftags_j)
    if silence_as_class:
        a = a or {-1}
        b = b or {-1}
    if clip_case is ClipCase.MATCHING:
        return PairCase.POSITIVE if (a == b and a) else PairCase.IGNORED
    if silence_as_class:
        return PairCase.NEGATIVE if a != b else PairCase.IGNORED
    return PairCase.NEGATIVE if (a and b) else PairCase.IGNORED


def build_frame_pairs(
    grids: Sequence[FrameTagGrid],
    clip_pairs: Sequence[ClipPair],
    silence_as_class: bool = False,
) -> list[FramePair]:
    """Frame pairs for every non-Ignored clip pair at shared timestamps.

    Ignored frame pairs are dropped; output order is deterministic
    (clip-pair order, then ascending timestamp).
    """
    out: list[FramePair] = []
    for cp in clip_pairs:
        if cp.case is ClipCase.IGNORED:
            continue
        gi, gj = grids[cp.i], grids[cp.j]
        t_max = min(gi.n_frames, gj.n_frames)
        if t_max == 0:
            continue
        ai, aj = gi.active[:t_max], gj.active[:t_max]
        cert = gi.certain[:t_max] & gj.certain[:t_max]
        equal = (ai == aj).all(axis=1)
        if cp.case is ClipCase.MATCHING:
            hit = cert & equal
            if not silence_as_class:
                hit &= ai.any(axis=1)
            case = PairCase.POSITIVE
        else:
            if silence_as_class:
                hit = cert & ~equal
            else:
                hit = cert & ai.any(axis=1) & aj.any(axis=1)
            case = PairCase.NEGATIVE
        out.extend(FramePair(cp.i, cp.j, int(t), case) for t in np.flatnonzero(hit))
    return out


def count_candidate_frames(grids: Sequence[FrameTagGrid], clip_pairs: Sequence[ClipPair]) -> int:
    """Shared timestamps over all clip pairs, Ignored clip pairs included."""
    return sum(min(grids[cp.i].n_frames, grids[cp.j].n_frames) for cp in clip_pairs)


def subsample_pairs(pairs: Sequence[FramePair], cap: int, rng: np.random.Generator) -> list[FramePair]:
    """Cap the number of pairs per case, preserving the original order."""
    keep: set[int] = set()
    for case in (PairCase.POSITIVE, PairCase.NEGATIVE):
        positions = [k for k, p in enumerate(pairs) if p.case is case]
        if len(positions) > cap:
            chosen = rng.choice(len(positions), size=cap, replace=False)
            keep.update(positions[k] for k in chosen)
        else:
            keep.update(positions)
    return [p for k, p in enumerate(pairs) if k in keep]
