"""Objective melody metrics and parametric style probes.

Frame metrics follow the usual melody-extraction conventions: RPA
counts reference-voiced frames matched within half a semitone, RCA is
the same after folding the error onto one octave, OA scores every frame
(an unvoiced reference frame is correct iff the estimate is unvoiced).

Style probes quantify vibrato on held notes so that "does the output
sing like the reference" becomes a measurable distance instead of a
classifier judgment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curves import SemitoneCurve
from .score import NoteEvent

__all__ = [
    "MelodyEvalResult",
    "StyleProbe",
    "melody_metrics",
    "vibrato_probe",
    "style_distance",
]

MIN_PROBE_NOTE_S = 1.0
PROBE_SKIP_FRACTION = 0.35
PROBE_SKIP_FLOOR_S = 0.7  # vibrato onset (<= 0.5 s) plus its ramp-in
RATE_BAND_HZ = (2.0, 10.0)
RATE_NOISE_FLOOR_ST = 0.05


@dataclass(frozen=True)
class MelodyEvalResult:
    """Percent metrics; rpa/rca are None when the reference has no voiced frames."""

    rpa: float | None
    rca: float | None
    oa: float
    n_voiced_ref: int
    n_frames: int


@dataclass(frozen=True)
class StyleProbe:
    """Vibrato summary over held notes; rate is None when no note shows vibrato."""

    vibrato_rate_hz: float | None
    vibrato_extent_st: float
    n_notes: int

    def __post_init__(self) -> None:
        if self.vibrato_rate_hz is not None and self.vibrato_rate_hz < 0:
            raise ValueError("vibrato rate must be >= 0")
        if self.vibrato_extent_st < 0:
            raise ValueError("vibrato extent must be >= 0")


def melody_metrics(est: SemitoneCurve, ref: SemitoneCurve) -> MelodyEvalResult:
    """Frame-level RPA / RCA / OA of an estimate against a reference."""
    if len(est) != len(ref):
        raise ValueError(f"length mismatch: est {len(est)} vs ref {len(ref)}")
    n = len(ref)
    ref_v = ref.voiced
    est_v = est.voiced
    n_voiced = int(np.count_nonzero(ref_v))

    delta = est.semitones - ref.semitones
    close = np.abs(delta) <= 0.5
    folded = 6.0 - np.mod(6.0 - delta, 12.0)
    chroma_close = np.abs(folded) <= 0.5

    voiced_hit = ref_v & est_v & close
    chroma_hit = ref_v & est_v & chroma_close
    oa_hit = np.where(ref_v, est_v & close, ~est_v)

    rpa = 100.0 * voiced_hit.sum() / n_voiced if n_voiced else None
    rca = 100.0 * chroma_hit.sum() / n_voiced if n_voiced else None
    oa = 100.0 * float(oa_hit.sum()) / n
    return MelodyEvalResult(
        rpa=None if rpa is None else float(rpa),
        rca=None if rca is None else float(rca),
        oa=oa,
        n_voiced_ref=n_voiced,
        n_frames=n,
    )


def _probe_note_segment(seg: np.ndarray, fps: float) -> tuple[float, float, float] | None:
    """(peak rate Hz, peak magnitude, extent st) of one detrended segment."""
    n = seg.size
    if n < 8:
        return None
    t = np.arange(n, dtype=np.float64)
    coef = np.polyfit(t, seg, 1)
    detrended = seg - np.polyval(coef, t)
    extent = float(np.pi / 2.0 * np.mean(np.abs(detrended)))
    n_fft = 1 << max(12, int(np.ceil(np.log2(8 * n))))
    spectrum = np.abs(np.fft.rfft(detrended, n=n_fft))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / fps)
    band = (freqs >= RATE_BAND_HZ[0]) & (freqs <= RATE_BAND_HZ[1])
    if not np.any(band):
        return None
    k = int(np.argmax(spectrum[band]))
    return float(freqs[band][k]), float(spectrum[band][k]), extent


def vibrato_probe(c: SemitoneCurve, notes: list[NoteEvent]) -> StyleProbe | None:
    """Measure vibrato rate and extent over held notes of at least 1 s.

    The first part of each note (35%, but never less than 0.7 s) is
    skipped so onset transients, glides, and the vibrato ramp-in do not
    contaminate the measurement; the remainder is linearly detrended
    before the spectral peak in the 2-10 Hz band is read off. The
    reported rate is the extent-weighted mean across notes and is None
    when every note sits below the noise floor. Returns None when no
    note qualifies.
    """
    if c.frame_rate_hz < 20:
        raise ValueError("vibrato probe needs a frame rate of at least 20 fps")
    fps = c.frame_rate_hz
    rates, weights, extents = [], [], []
    n_notes = 0
    for ev in notes:
        dur_s = ev.duration_frames() / fps
        if dur_s < MIN_PROBE_NOTE_S:
            continue
        skip = max(PROBE_SKIP_FRACTION * ev.duration_frames(), PROBE_SKIP_FLOOR_S * fps)
        start = ev.onset_frame + int(round(skip))
        seg = c.semitones[start:ev.offset_frame]
        measured = _probe_note_segment(np.asarray(seg, dtype=np.float64), fps)
        if measured is None:
            continue
        rate, magnitude, extent = measured
        n_notes += 1
        extents.append(extent)
        if extent >= RATE_NOISE_FLOOR_ST:
            rates.append(rate)
            weights.append(magnitude)
    if n_notes == 0:
        return None
    rate = float(np.average(rates, weights=weights)) if rates else None
    return StyleProbe(
        vibrato_rate_hz=rate,
        vibrato_extent_st=float(np.mean(extents)),
        n_notes=n_notes,
    )


def style_distance(gen: StyleProbe | None, ref: StyleProbe | None) -> float:
    """Range-normalized L1 distance between two probes.

    |rate difference| / 8 + |extent difference| / 1.5, with an absent
    rate contributing as zero rate. Raises on empty probes.
    """
    if gen is None or ref is None:
        raise ValueError("style_distance requires non-empty probes")
    rate_gen = gen.vibrato_rate_hz if gen.vibrato_rate_hz is not None else 0.0
    rate_ref = ref.vibrato_rate_hz if ref.vibrato_rate_hz is not None else 0.0
    return abs(rate_gen - rate_ref) / 8.0 + abs(gen.vibrato_extent_st - ref.vibrato_extent_st) / 1.5
