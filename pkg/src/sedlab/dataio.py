"""Dataset manifests, DCASE-style label files, and WAV audio I/O.

Label files follow the DCASE tab-separated convention:
strong labels are ``filename<TAB>onset<TAB>offset<TAB>event_label`` with an
optional header line, weak labels are ``filename<TAB>label1,label2,...``.
Times are serialized with 6 decimal places; class name matching is
case-sensitive.  Parsing either succeeds completely or raises a single
error naming the offending line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.io import wavfile

SOURCE_RW = "RW"
SOURCE_SS = "SS"

_STRONG_HEADER = ("filename", "onset", "offset", "event_label")
_WEAK_HEADER = ("filename", "event_labels")


class DatasetError(ValueError):
    """Base class for dataset reading/validation failures."""


class ParseError(DatasetError):
    """Malformed file content; the message names file and line number."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class ValidationError(DatasetError):
    """Well-formed content that violates a semantic invariant."""


@dataclass(frozen=True)
class Clip:
    """Mono audio samples in [-1, 1] plus sample rate and source marker."""

    id: str
    samples: np.ndarray
    sample_rate: int
    source: str = SOURCE_SS

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StrongLabel:
    """One event annotation: class index plus onset/offset in seconds."""

    clip_id: str
    class_idx: int
    onset: float
    offset: float


@dataclass(frozen=True)
class WeakLabelRecord:
    """Clip-level class presence without timing."""

    clip_id: str
    classes: frozenset[int]


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    source: str
    weak: bool
    strong: bool


@dataclass
class DatasetManifest:
    """Per-clip file listing plus the ordered class vocabulary."""

    entries: list[ManifestEntry]
    class_names: list[str]
    root: Path = field(default_factory=Path)

    def clip_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path


def _class_map(class_names: Sequence[str]) -> dict[str, int]:
    if len(set(class_names)) != len(class_names):
        raise ValidationError(f"duplicate class names: {list(class_names)}")
    return {name: i for i, name in enumerate(class_names)}


def _is_header(fields: Sequence[str], expected: Sequence[str]) -> bool:
    return [f.strip().lower() for f in fields] == list(expected)


def read_strong_labels(path, class_names: Sequence[str]) -> list[StrongLabel]:
    """Parse a strong-label TSV; output order equals input order."""
    cmap = _class_map(class_names)
    labels: list[StrongLabel] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if line_no == 1 and _is_header(fields, _STRONG_HEADER):
                continue
            if len(fields) != 4:
                raise ParseError(path, line_no, f"expected 4 tab-separated columns, got {len(fields)}")
            fname, onset_s, offset_s, label = fields
            try:
                onset = float(onset_s)
                offset = float(offset_s)
            except ValueError:
                raise ParseError(path, line_no, f"non-numeric onset/offset: {onset_s!r}, {offset_s!r}") from None
            if label not in cmap:
                raise ParseError(path, line_no, f"unknown class name {label!r}")
            if not (0.0 <= onset < offset):
                raise ValidationError(f"{path}:{line_no}: need 0 <= onset < offset, got [{onset}, {offset}]")
            labels.append(StrongLabel(fname, cmap[label], onset, offset))
    return labels


def write_strong_labels(path, labels: Iterable[StrongLabel], class_names: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            if not (0.0 <= lab.onset < lab.offset):
                raise ValidationError(f"refusing to write invalid label {lab}")
            fh.write(f"{lab.clip_id}\t{lab.onset:.6f}\t{lab.offset:.6f}\t{class_names[lab.class_idx]}\n")


def read_weak_labels(path, class_names: Sequence[str]) -> list[WeakLabelRecord]:
    """Parse a weak-label TSV; duplicate class names collapse into the set."""
    cmap = _class_map(class_names)
    records: list[WeakLabelRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if line_no == 1 and _is_header(fields, _WEAK_HEADER):
                continue
            if len(fields) != 2:
                raise ParseError(path, line_no, f"expected 2 tab-separated columns, got {len(fields)}")
            fname, class_field = fields
            classes: set[int] = set()
            for name in class_field.split(","):
                name = name.strip()
                if not name:
                    continue
                if name not in cmap:
                    raise ParseError(path, line_no, f"unknown class name {name!r}")
                classes.add(cmap[name])
            records.append(WeakLabelRecord(fname, frozenset(classes)))
    return records


def write_weak_labels(path, records: Iterable[WeakLabelRecord], class_names: Sequence[str]) -> None:
    """Write weak records; clips with empty class sets are omitted."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            if not rec.classes:
                continue
            names = ",".join(class_names[c] for c in sorted(rec.classes))
            fh.write(f"{rec.clip_id}\t{names}\n")


def load_clip(path, expected_rate: int, source: str = SOURCE_SS, clip_id: str | None = None) -> Clip:
    """Load a WAV file (PCM16 or float32, mono or first channel) at the expected rate.

    No resampling happens here: a rate mismatch is an error.
    """
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:  # scipy raises bare ValueError on truncation
        raise DatasetError(f"{path}: cannot read WAV file ({exc})") from exc
    if rate != expected_rate:
        raise ValidationError(f"{path}: sample rate {rate} != expected {expected_rate} (no resampling)")
    if data.ndim == 2:
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise DatasetError(f"{path}: unsupported WAV encoding {data.dtype} (need PCM16 or float32)")
    if not np.all(np.isfinite(samples)):
        raise ValidationError(f"{path}: non-finite samples")
    return Clip(clip_id or Path(path).name, samples, rate, source)


def save_clip(path, samples: np.ndarray, rate: int) -> None:
    """Write samples as a float32 WAV."""
    wavfile.write(path, rate, np.asarray(samples, dtype=np.float32))


def write_manifest(path, manifest: DatasetManifest) -> None:
    """JSON-lines manifest: one header line with class names, one line per clip."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"class_names": manifest.class_names}) + "\n")
        for e in manifest.entries:
            fh.write(json.dumps({"path": e.path, "source": e.source, "weak": e.weak, "strong": e.strong}) + "\n")


def load_manifest(path) -> DatasetManifest:
    """Load a manifest and check that every referenced clip exists."""
    path = Path(path)
    root = path.parent
    entries: list[ManifestEntry] = []
    class_names: list[str] | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON: {exc}") from None
            if line_no == 1:
                if "class_names" not in obj:
                    raise ParseError(path, line_no, "first manifest line must carry class_names")
                class_names = list(obj["class_names"])
                _class_map(class_names)
                continue
            missing = {"path", "source", "weak", "strong"} - set(obj)
            if missing:
                raise ParseError(path, line_no, f"missing keys {sorted(missing)}")
            if obj["source"] not in (SOURCE_RW, SOURCE_SS):
                raise ParseError(path, line_no, f"source must be RW or SS, got {obj['source']!r}")
            entries.append(ManifestEntry(obj["path"], obj["source"], bool(obj["weak"]), bool(obj["strong"])))
    if class_names is None:
        raise ParseError(path, 1, "empty manifest (missing class_names header)")
    manifest = DatasetManifest(entries, class_names, root)
    seen: set[str] = set()
    for e in entries:
        p = manifest.clip_path(e)
        if not p.exists():
            raise ValidationError(f"{path}: referenced clip does not exist: {p}")
        cid = Path(e.path).name
        if cid in seen:
            raise ValidationError(f"{path}: duplicate clip id {cid!r}")
        seen.add(cid)
    return manifest
