"""F0-to-note extraction: activation, smoothing, segmentation, cleanup.

The pipeline turns a monophonic semitone curve into frame-aligned note
events on the 72-class grid:

    activation_from_curve -> blur_activation -> segment_notes
        -> postprocess_notes -> notes_to_frames

Smoothing is a separable Gaussian blur over the time/pitch axes of the
activation map; it is what keeps vibrato from shattering a held note
into many short events. The blur sigmas, the segmentation threshold,
and the minimum note/rest durations are all exposed on
:class:`ScoreConfig`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .curves import N_NOTE_CLASSES, REST_CLASS, MIDI_LO, SemitoneCurve

__all__ = [
    "ActivationMap",
    "NoteEvent",
    "ScoreConfig",
    "activation_from_curve",
    "blur_activation",
    "segment_notes",
    "postprocess_notes",
    "notes_to_frames",
    "extract_score",
    "save_notes_file",
    "load_notes_file",
]


@dataclass(frozen=True)
class ActivationMap:
    """Frames x classes activation matrix with entries in [0, 1]."""

    values: np.ndarray
    frame_rate_hz: float

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] != N_NOTE_CLASSES:
            raise ValueError(f"activation map must be (frames, {N_NOTE_CLASSES})")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ValueError("activation entries must be finite and in [0, 1]")
        if self.frame_rate_hz <= 0:
            raise ValueError("frame_rate_hz must be positive")

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class NoteEvent:
    """One segmented note: [onset_frame, offset_frame) on a pitch class."""

    onset_frame: int
    offset_frame: int
    pitch_class: int

    def __post_init__(self) -> None:
        if not (0 <= self.onset_frame < self.offset_frame):
            raise ValueError("need 0 <= onset_frame < offset_frame")
        if not (0 <= self.pitch_class < N_NOTE_CLASSES):
            raise ValueError(f"pitch_class must lie in [0, {N_NOTE_CLASSES})")

    def duration_frames(self) -> int:
        return self.offset_frame - self.onset_frame


@dataclass(frozen=True)
class ScoreConfig:
    """Tunables for the extraction pipeline (defaults at 50 fps)."""

    sigma_time_frames: float = 4.0
    sigma_pitch_classes: float = 1.0
    threshold: float = 0.3
    min_note_s: float = 0.1
    min_rest_s: float = 0.05


def activation_from_curve(c: SemitoneCurve) -> ActivationMap:
    """Spread each voiced frame's pitch over its two nearest classes.

    A frame at semitone s contributes max(0, 1 - |(s - 24) - k|) to
    class k (a triangular kernel, so the weights of the two straddling
    classes sum to 1). Unvoiced frames produce all-zero rows.
    """
    n = len(c)
    values = np.zeros((n, N_NOTE_CLASSES), dtype=np.float64)
    pos = c.semitones - MIDI_LO
    lower = np.floor(pos).astype(np.int64)
    frac = pos - lower
    rows = np.arange(n)
    for k, w in ((lower, 1.0 - frac), (lower + 1, frac)):
        ok = c.voiced & (k >= 0) & (k < N_NOTE_CLASSES) & (w > 0)
        values[rows[ok], k[ok]] = w[ok]
    return ActivationMap(values=values, frame_rate_hz=c.frame_rate_hz)


def blur_activation(a: ActivationMap, sigma_time: float, sigma_pitch: float) -> ActivationMap:
    """Separable Gaussian blur along time then pitch.

    Kernels are truncated at radius ceil(3*sigma) and normalized to sum
    1; boundaries use reflect padding, which preserves total activation
    mass. sigma = 0 on an axis leaves that axis untouched.
    """
    if sigma_time < 0 or sigma_pitch < 0:
        raise ValueError("blur sigmas must be >= 0")
    values = a.values
    if sigma_time > 0:
        values = gaussian_filter1d(
            values, sigma_time, axis=0, mode="reflect",
            radius=int(math.ceil(3 * sigma_time)),
        )
    if sigma_pitch > 0:
        values = gaussian_filter1d(
            values, sigma_pitch, axis=1, mode="reflect",
            radius=int(math.ceil(3 * sigma_pitch)),
        )
    # Convolution with a normalized nonnegative kernel cannot leave [0, 1],
    # but guard against float dust before the constructor validates.
    values = np.clip(values, 0.0, 1.0)
    return ActivationMap(values=values, frame_rate_hz=a.frame_rate_hz)


def segment_notes(a: ActivationMap, threshold: float) -> list[NoteEvent]:
    """Greedy per-frame segmentation of an activation map.

    A frame is active when its argmax class reaches ``threshold``;
    maximal runs of consecutive frames sharing the active class become
    one event. Frames below threshold are rests.
    """
    if not (0 < threshold < 1):
        raise ValueError("threshold must lie strictly between 0 and 1")
    cls = np.argmax(a.values, axis=1)
    peak = a.values[np.arange(a.n_frames), cls]
    active = peak >= threshold
    # Label runs: a run breaks where activity or class changes.
    labels = np.where(active, cls, -1)
    breaks = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [a.n_frames]])
    return [
        NoteEvent(onset_frame=int(s), offset_frame=int(e), pitch_class=int(labels[s]))
        for s, e in zip(starts, ends)
        if labels[s] >= 0
    ]


def _merge_short_rests(
    notes: list[NoteEvent], min_rest_frames: float
) -> list[NoteEvent]:
    out: list[NoteEvent] = []
    for ev in notes:
        if (
            out
            and out[-1].pitch_class == ev.pitch_class
            and ev.onset_frame - out[-1].offset_frame < min_rest_frames
        ):
            out[-1] = replace(out[-1], offset_frame=ev.offset_frame)
        else:
            out.append(ev)
    return out


def _absorb_short_notes(
    notes: list[NoteEvent], min_note_frames: float
) -> list[NoteEvent]:
    """One simultaneous absorb/delete sweep over the event list.

    Decisions are made against the original list: a short event looks
    at the longer of its two neighbors. If that neighbor is strictly
    longer than the short event and within 1 class, the short event is
    absorbed into it; if it is strictly longer but further away in
    pitch, the short event is deleted; with no strictly longer
    neighbor the event is left alone. The sweep is intentionally
    non-iterative so that a train of short fragments (unsmoothed
    vibrato) is not swallowed whole.
    """
    n = len(notes)
    durations = [ev.duration_frames() for ev in notes]
    target = [-1] * n  # index absorbed into, -2 = delete, -1 = keep
    for i, ev in enumerate(notes):
        if durations[i] >= min_note_frames:
            continue
        neighbors = [j for j in (i - 1, i + 1) if 0 <= j < n]
        if not neighbors:
            continue
        j = max(neighbors, key=lambda j: (durations[j], -j))
        if durations[j] <= durations[i]:
            continue
        if abs(notes[j].pitch_class - ev.pitch_class) <= 1:
            target[i] = j
        else:
            target[i] = -2

    # Resolve spans: each surviving event covers itself plus everything
    # absorbed into it; absorption into a deleted event deletes too.
    onset = [ev.onset_frame for ev in notes]
    offset = [ev.offset_frame for ev in notes]
    for i in range(n):
        j = target[i]
        if j >= 0 and target[j] == -1:
            onset[j] = min(onset[j], notes[i].onset_frame)
            offset[j] = max(offset[j], notes[i].offset_frame)
    merged = [
        NoteEvent(onset_frame=onset[i], offset_frame=offset[i], pitch_class=notes[i].pitch_class)
        for i in range(n)
        if target[i] == -1
    ]
    # Absorption can leave overlapping spans when both sides claimed the
    # same gap; clip to keep events disjoint and sorted.
    out: list[NoteEvent] = []
    for ev in merged:
        if out and ev.onset_frame < out[-1].offset_frame:
            if ev.offset_frame <= out[-1].offset_frame:
                continue
            ev = replace(ev, onset_frame=out[-1].offset_frame)
        out.append(ev)
    return out


def postprocess_notes(
    notes: list[NoteEvent],
    min_note_s: float,
    min_rest_s: float,
    frame_rate_hz: float,
) -> list[NoteEvent]:
    """Remove short rests and short notes from a segmentation.

    First, rests shorter than ``min_rest_s`` between two events of the
    same class merge the pair. Second, events shorter than
    ``min_note_s`` are absorbed into a strictly longer neighbor within
    1 class (deleted when the longer neighbor is further away in
    pitch). A final rest-merge pass coalesces same-class events that
    absorption brought into contact.
    """
    if min_note_s < 0 or min_rest_s < 0:
        raise ValueError("minimum durations must be >= 0")
    if frame_rate_hz <= 0:
        raise ValueError("frame_rate_hz must be positive")
    if not notes:
        return []
    min_rest_frames = min_rest_s * frame_rate_hz
    min_note_frames = min_note_s * frame_rate_hz
    out = _merge_short_rests(list(notes), min_rest_frames)
    out = _absorb_short_notes(out, min_note_frames)
    out = _merge_short_rests(out, min_rest_frames)
    return out


def notes_to_frames(notes: list[NoteEvent], n_frames: int) -> np.ndarray:
    """Rasterize events to a per-frame class sequence; gaps are REST."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    y = np.full(n_frames, REST_CLASS, dtype=np.int64)
    last_offset = 0
    for ev in sorted(notes, key=lambda e: e.onset_frame):
        if ev.onset_frame < last_offset:
            raise ValueError("overlapping note events")
        if ev.offset_frame > n_frames:
            raise ValueError("note event extends past the frame range")
        y[ev.onset_frame:ev.offset_frame] = ev.pitch_class
        last_offset = ev.offset_frame
    return y


def extract_score(
    c: SemitoneCurve, cfg: ScoreConfig = ScoreConfig()
) -> tuple[list[NoteEvent], np.ndarray]:
    """Full curve-to-score pipeline; returns (events, per-frame classes)."""
    act = activation_from_curve(c)
    act = blur_activation(act, cfg.sigma_time_frames, cfg.sigma_pitch_classes)
    notes = segment_notes(act, cfg.threshold)
    notes = postprocess_notes(notes, cfg.min_note_s, cfg.min_rest_s, c.frame_rate_hz)
    return notes, notes_to_frames(notes, len(c))


def save_notes_file(path, notes: list[NoteEvent]) -> None:
    """Write events as a JSON list; pitch is stored as MIDI (class + 24)."""
    payload = [
        {
            "onset_frame": ev.onset_frame,
            "offset_frame": ev.offset_frame,
            "midi": ev.pitch_class + int(MIDI_LO),
        }
        for ev in notes
    ]
    with open(Path(path), "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_notes_file(path) -> list[NoteEvent]:
    with open(Path(path)) as fh:
        payload = json.load(fh)
    try:
        return [
            NoteEvent(
                onset_frame=int(item["onset_frame"]),
                offset_frame=int(item["offset_frame"]),
                pitch_class=int(item["midi"]) - int(MIDI_LO),
            )
            for item in payload
        ]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed notes file ({exc})") from exc
