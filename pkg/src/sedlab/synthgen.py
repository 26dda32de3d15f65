"""Desk-scale soundscape synthesis with exact strong labels.

Clips are white-noise backgrounds with parametric foreground events (tones,
linear chirps, noise bursts, amplitude-modulated tones) placed at random
positions.  Event level is set against the measured background RMS inside
the event's support window, so the requested SNR is realized locally.
Every placed event is reported as a strong label covering exactly its
support; events may overlap.

Generation is deterministic: each clip derives its own child seed from
(seed, clip index), so serial and parallel generation agree bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dataio
from .dataio import Clip, DatasetManifest, ManifestEntry, StrongLabel
from .labels import weak_from_strong

KIND_TONE = "tone"
KIND_CHIRP = "chirp"
KIND_NOISE_BURST = "noise_burst"
KIND_AM_TONE = "am_tone"
KINDS = (KIND_TONE, KIND_CHIRP, KIND_NOISE_BURST, KIND_AM_TONE)
_TONAL_KINDS = (KIND_TONE, KIND_CHIRP, KIND_AM_TONE)

FADE_SECONDS = 0.010


@dataclass
class EventTemplateSpec:
    class_idx: int
    kind: str
    base_freq: float
    duration_range: tuple[float, float]
    snr_range: tuple[float, float]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown template kind {self.kind!r}")
        lo, hi = self.duration_range
        if not (0 < lo <= hi):
            raise ValueError(f"bad duration range {self.duration_range}")
        if self.snr_range[0] > self.snr_range[1]:
            raise ValueError(f"bad snr range {self.snr_range}")


@dataclass
class SoundscapeSpec:
    clip_duration: float
    events_per_clip_range: tuple[int, int]
    background_level_db: float
    class_distribution: Sequence[float]

    def __post_init__(self):
        lo, hi = self.events_per_clip_range
        if lo < 0 or lo > hi:
            raise ValueError(f"bad events-per-clip range {self.events_per_clip_range}")
        if self.clip_duration <= 0:
            raise ValueError("clip_duration must be positive")
        dist = np.asarray(self.class_distribution, dtype=np.float64)
        if abs(dist.sum() - 1.0) > 1e-9 or np.any(dist < 0):
            raise ValueError(f"class_distribution must be a probability vector, got {dist}")


def _raised_cosine_fades(n: int, rate: int) -> np.ndarray:
    m = min(int(round(FADE_SECONDS * rate)), n // 2)
    env = np.ones(n)
    if m > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * (np.arange(1, m + 1)) / m)
        env[:m] = ramp
        env[n - m :] = ramp[::-1]
    return env


def synth_event(template: EventTemplateSpec, duration: float, rate: int, seed) -> np.ndarray:
    """Render one event waveform: peak <= 1, 10 ms raised-cosine fades."""
    lo, hi = template.duration_range
    if not (lo <= duration <= hi):
        raise ValueError(f"duration {duration} outside template range [{lo}, {hi}]")
    if template.kind in _TONAL_KINDS and rate <= 2 * template.base_freq:
        raise ValueError(f"rate {rate} Hz cannot represent base frequency {template.base_freq} Hz")
    n = int(round(duration * rate))
    rng = np.random.default_rng(seed)
    t = np.arange(n) / rate
    if template.kind == KIND_TONE:
        wave = np.sin(2 * np.pi * template.base_freq * t + rng.uniform(0, 2 * np.pi))
    elif template.kind == KIND_CHIRP:
        f0 = template.base_freq
        f1 = min(2 * f0, 0.45 * rate)
        wave = np.sin(2 * np.pi * (f0 * t + (f1 - f0) / (2 * duration) * t**2) + rng.uniform(0, 2 * np.pi))
    elif template.kind == KIND_NOISE_BURST:
        wave = rng.standard_normal(n)
    else:  # am_tone
        carrier = np.sin(2 * np.pi * template.base_freq * t + rng.uniform(0, 2 * np.pi))
        mod_freq = rng.uniform(4.0, 12.0)
        wave = carrier * (0.55 + 0.45 * np.sin(2 * np.pi * mod_freq * t + rng.uniform(0, 2 * np.pi)))
    peak = np.max(np.abs(wave)) if n else 0.0
    if peak > 0:
        wave = wave / peak
    return wave * _raised_cosine_fades(n, rate)


def generate_soundscape(
    spec: SoundscapeSpec,
    templates: Sequence[EventTemplateSpec],
    rate: int,
    seed,
    clip_id: str = "clip.wav",
    source: str = dataio.SOURCE_SS,
) -> tuple[Clip, list[StrongLabel]]:
    """One clip plus the exact strong labels of every placed event."""
    dist = np.asarray(spec.class_distribution, dtype=np.float64)
    by_class: dict[int, list[EventTemplateSpec]] = {}
    for tmpl in templates:
        by_class.setdefault(tmpl.class_idx, []).append(tmpl)
    for c, p in enumerate(dist):
        if p > 0 and c not in by_class:
            raise ValueError(f"class {c} has probability {p} but no template")
    for tmpl in templates:
        if tmpl.duration_range[0] > spec.clip_duration:
            raise ValueError(f"template durations {tmpl.duration_range} exceed clip duration {spec.clip_duration}")
    rng = np.random.default_rng(seed)
    n_samples = int(round(spec.clip_duration * rate))
    bg_rms = 10.0 ** (spec.background_level_db / 20.0)
    samples = rng.standard_normal(n_samples) * bg_rms
    background = samples.copy()
    labels: list[StrongLabel] = []
    n_events = int(rng.integers(spec.events_per_clip_range[0], spec.events_per_clip_range[1], endpoint=True))
    for _ in range(n_events):
        c = int(rng.choice(len(dist), p=dist))
        pool = by_class[c]
        tmpl = pool[int(rng.integers(len(pool)))]
        lo, hi = tmpl.duration_range
        duration = float(rng.uniform(lo, min(hi, spec.clip_duration)))
        wave = synth_event(tmpl, duration, rate, int(rng.integers(2**31)))
        n_ev = len(wave)
        if n_ev == 0 or n_ev > n_samples:
            continue
        start = int(rng.integers(0, n_samples - n_ev, endpoint=True))
        snr_db = float(rng.uniform(*tmpl.snr_range))
        window_rms = float(np.sqrt(np.mean(background[start : start + n_ev] ** 2)))
        target_rms = max(window_rms, 1e-12) * 10.0 ** (snr_db / 20.0)
        wave_rms = float(np.sqrt(np.mean(wave**2)))
        if wave_rms > 0:
            samples[start : start + n_ev] += wave * (target_rms / wave_rms)
        labels.append(StrongLabel(clip_id, c, start / rate, (start + n_ev) / rate))
    peak = float(np.max(np.abs(samples))) if n_samples else 0.0
    if peak > 1.0:
        samples = samples / peak
    labels.sort(key=lambda lab: (lab.onset, lab.class_idx, lab.offset))
    return Clip(clip_id, samples, rate, source), labels


def generate_dataset(
    spec: SoundscapeSpec,
    templates: Sequence[EventTemplateSpec],
    class_names: Sequence[str],
    n_clips: int,
    out_dir,
    rate: int,
    seed: int,
    source: str = dataio.SOURCE_SS,
) -> DatasetManifest:
    """Write WAVs, strong/weak label TSVs, and a manifest under out_dir.

    Re-running with the same seed reproduces byte-identical label files.
    Clips generated with source RW keep their strong label rows on disk but
    are flagged strong=false in the manifest, so training treats them as
    weakly labeled.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=False, exist_ok=True)
        (out / "audio").mkdir(exist_ok=True)
    except OSError as exc:
        raise dataio.DatasetError(f"cannot create output directory {out}: {exc}") from exc
    prefix = source.lower()
    entries: list[ManifestEntry] = []
    all_strong: list[StrongLabel] = []
    for i in range(n_clips):
        clip_id = f"{prefix}_{i:05d}.wav"
        clip, labels = generate_soundscape(
            spec, templates, rate, np.random.SeedSequence((seed, i)), clip_id, source
        )
        try:
            dataio.save_clip(out / "audio" / clip_id, clip.samples, rate)
        except OSError as exc:
            raise dataio.DatasetError(f"cannot write {out / 'audio' / clip_id}: {exc}") from exc
        all_strong.extend(labels)
        entries.append(ManifestEntry(f"audio/{clip_id}", source, True, source == dataio.SOURCE_SS))
    all_strong.sort(key=lambda lab: (lab.clip_id, lab.onset, lab.class_idx, lab.offset))
    dataio.write_strong_labels(out / "strong.tsv", all_strong, class_names)
    weak = weak_from_strong(all_strong)
    dataio.write_weak_labels(out / "weak.tsv", [weak[cid] for cid in sorted(weak)], class_names)
    manifest = DatasetManifest(entries, list(class_names), out)
    dataio.write_manifest(out / "manifest.jsonl", manifest)
    return manifest


def default_templates(n_classes: int, rate: int) -> list[EventTemplateSpec]:
    """One template per class with distinct kinds and base frequencies."""
    base = [440.0, 880.0, 1800.0, 620.0, 1200.0, 2400.0, 760.0, 1500.0]
    out = []
    for c in range(n_classes):
        kind = KINDS[c % len(KINDS)]
        freq = base[c % len(base)] * (1 + c // len(base))
        out.append(EventTemplateSpec(c, kind, freq, (0.25, 1.0), (8.0, 18.0)))
    return out
