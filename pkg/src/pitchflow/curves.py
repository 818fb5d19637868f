"""Canonical pitch representations and conversions.

Everything downstream (score extraction, the flow model, task builders,
metrics) speaks one of three forms defined here:

* :class:`PitchCurve` -- per-frame F0 in Hz straight off an extractor,
  with 0.0 marking unvoiced frames.
* :class:`SemitoneCurve` -- the same signal on the MIDI semitone scale
  with an explicit voicing flag and unvoiced gaps filled by linear
  interpolation (so the curve is continuous everywhere).
* :class:`ModelSequence` -- the model's I/O triple: normalized pitch x
  in [-1, 1], per-frame note class y in {0..72} (72 = REST), and the
  unvoiced indicator u in {0, 1} (1 = unvoiced).

The note grid runs from C1 (MIDI 24) to B6 (MIDI 95), 72 classes.
Pitch is normalized affinely over [24, 96] so that a +-k semitone
shift is exactly +-k/36 in model units.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MIDI_LO = 24.0
MIDI_HI = 96.0
MIDI_CENTER = 60.0
MIDI_HALF_RANGE = 36.0
N_NOTE_CLASSES = 72
REST_CLASS = 72

__all__ = [
    "MIDI_LO",
    "MIDI_HI",
    "N_NOTE_CLASSES",
    "REST_CLASS",
    "PitchCurve",
    "SemitoneCurve",
    "ModelSequence",
    "Mask",
    "TrainingExample",
    "hz_to_semitone",
    "semitone_to_hz",
    "note_class",
    "class_to_semitone",
    "normalize_pitch",
    "denormalize_pitch",
    "to_semitone_curve",
    "resample_curve",
    "sample_mask",
    "shift_augment",
    "load_pitch_file",
    "save_pitch_file",
]


@dataclass(frozen=True)
class PitchCurve:
    """Raw per-frame F0 in Hz; 0.0 means the frame is unvoiced."""

    frame_rate_hz: float
    f0_hz: np.ndarray

    def __post_init__(self) -> None:
        f0 = np.asarray(self.f0_hz, dtype=np.float64)
        object.__setattr__(self, "f0_hz", f0)
        if self.frame_rate_hz <= 0 or not np.isfinite(self.frame_rate_hz):
            raise ValueError(f"frame_rate_hz must be positive, got {self.frame_rate_hz}")
        if f0.ndim != 1 or f0.size < 1:
            raise ValueError("f0_hz must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(f0)) or np.any(f0 < 0):
            raise ValueError("f0_hz values must be finite and >= 0")

    def __len__(self) -> int:
        return int(self.f0_hz.size)


@dataclass(frozen=True)
class SemitoneCurve:
    """Pitch on the MIDI semitone scale with explicit voicing.

    Unvoiced frames never carry a sentinel; they hold the value
    interpolated (or held) from neighboring voiced frames so the curve
    is finite and continuous everywhere.
    """

    semitones: np.ndarray
    voiced: np.ndarray
    frame_rate_hz: float = 50.0

    def __post_init__(self) -> None:
        s = np.asarray(self.semitones, dtype=np.float64)
        v = np.asarray(self.voiced, dtype=bool)
        object.__setattr__(self, "semitones", s)
        object.__setattr__(self, "voiced", v)
        if s.ndim != 1 or v.shape != s.shape:
            raise ValueError("semitones and voiced must be 1-D and the same length")
        if s.size < 1:
            raise ValueError("curve must contain at least one frame")
        if not np.all(np.isfinite(s)):
            raise ValueError("semitones must be finite")
        if self.frame_rate_hz <= 0:
            raise ValueError(f"frame_rate_hz must be positive, got {self.frame_rate_hz}")

    def __len__(self) -> int:
        return int(self.semitones.size)


@dataclass(frozen=True)
class ModelSequence:
    """Frame-aligned model I/O triple (x, y, u)."""

    x: np.ndarray
    y: np.ndarray
    u: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        u = np.asarray(self.u, dtype=np.int64)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "u", u)
        if not (x.shape == y.shape == u.shape) or x.ndim != 1:
            raise ValueError("x, y, u must be 1-D and the same length")
        if not np.all(np.isfinite(x)):
            raise ValueError("x must be finite")
        if np.any(y < 0) or np.any(y > REST_CLASS):
            raise ValueError(f"y values must lie in [0, {REST_CLASS}]")
        if not np.all((u == 0) | (u == 1)):
            raise ValueError("u values must be 0 or 1")

    def __len__(self) -> int:
        return int(self.x.size)


@dataclass(frozen=True)
class Mask:
    """Per-frame binary mask; 1 = frame to generate, 0 = context."""

    m: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=np.int64)
        object.__setattr__(self, "m", m)
        if m.ndim != 1 or m.size < 1:
            raise ValueError("mask must be a non-empty 1-D sequence")
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("mask values must be 0 or 1")

    def __len__(self) -> int:
        return int(self.m.size)


@dataclass(frozen=True)
class TrainingExample:
    seq: ModelSequence
    mask: Mask

    def __post_init__(self) -> None:
        if len(self.seq) != len(self.mask):
            raise ValueError("mask length must equal sequence length")


def hz_to_semitone(f):
    """Convert frequency in Hz to the MIDI semitone scale.

    s = 69 + 12 * log2(f / 440). Accepts scalars or arrays; every value
    must be finite and strictly positive.
    """
    arr = np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError("frequency must be finite and > 0")
    out = 69.0 + 12.0 * np.log2(arr / 440.0)
    return float(out) if np.isscalar(f) or arr.ndim == 0 else out


def semitone_to_hz(s):
    """Inverse of :func:`hz_to_semitone`: 440 * 2**((s - 69) / 12)."""
    arr = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("semitone value must be finite")
    out = 440.0 * np.exp2((arr - 69.0) / 12.0)
    return float(out) if np.isscalar(s) or arr.ndim == 0 else out


def note_class(s):
    """Map a semitone value to its note class on the C1..B6 grid.

    class = round(s) - 24, valid for round(s) in [24, 95]; C1 -> 0,
    B6 -> 71. Values off the grid raise ValueError (callers decide
    whether to clamp before calling).
    """
    arr = np.asarray(s, dtype=np.float64)
    rounded = np.rint(arr)
    if np.any(rounded < MIDI_LO) or np.any(rounded > MIDI_HI - 1):
        raise ValueError("pitch outside the C1..B6 note grid")
    out = rounded.astype(np.int64) - int(MIDI_LO)
    return int(out) if np.isscalar(s) or arr.ndim == 0 else out


def class_to_semitone(k):
    """Center semitone of a note class (class 0 -> MIDI 24)."""
    arr = np.asarray(k, dtype=np.int64)
    if np.any(arr < 0) or np.any(arr >= N_NOTE_CLASSES):
        raise ValueError(f"note class must lie in [0, {N_NOTE_CLASSES})")
    out = arr.astype(np.float64) + MIDI_LO
    return float(out) if np.isscalar(k) or arr.ndim == 0 else out


def normalize_pitch(s):
    """Map semitones in [24, 96] to model units in [-1, 1]: (s - 60) / 36."""
    arr = np.asarray(s, dtype=np.float64)
    if np.any(arr < MIDI_LO) or np.any(arr > MIDI_HI):
        raise ValueError(f"semitone value outside [{MIDI_LO}, {MIDI_HI}]")
    out = (arr - MIDI_CENTER) / MIDI_HALF_RANGE
    return float(out) if np.isscalar(s) or arr.ndim == 0 else out


def denormalize_pitch(x):
    """Inverse of :func:`normalize_pitch`: x * 36 + 60 for x in [-1, 1]."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < -1.0) or np.any(arr > 1.0):
        raise ValueError("normalized pitch outside [-1, 1]")
    out = arr * MIDI_HALF_RANGE + MIDI_CENTER
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def to_semitone_curve(p: PitchCurve) -> SemitoneCurve:
    """Convert an F0 curve in Hz to a gap-filled semitone curve.

    Voiced frames (f0 > 0) convert via :func:`hz_to_semitone` and clamp
    to [24, 96] (a warning reports how many frames needed clamping).
    Unvoiced gaps fill by linear interpolation between the neighboring
    voiced frames; gaps at either edge hold the nearest voiced value.
    An all-unvoiced curve fills with 60.0.
    """
    f0 = p.f0_hz
    voiced = f0 > 0
    semitones = np.full(f0.shape, MIDI_CENTER, dtype=np.float64)
    if np.any(voiced):
        s_voiced = hz_to_semitone(f0[voiced])
        n_clamped = int(np.count_nonzero((s_voiced < MIDI_LO) | (s_voiced > MIDI_HI)))
        if n_clamped:
            logger.warning(
                "clamped %d voiced frame(s) outside [%g, %g] semitones",
                n_clamped, MIDI_LO, MIDI_HI,
            )
        s_voiced = np.clip(s_voiced, MIDI_LO, MIDI_HI)
        idx = np.arange(f0.size, dtype=np.float64)
        # np.interp holds the edge values constant outside the voiced span,
        # which is exactly the edge-gap contract.
        semitones = np.interp(idx, idx[voiced], s_voiced)
    return SemitoneCurve(semitones=semitones, voiced=voiced, frame_rate_hz=p.frame_rate_hz)


def resample_curve(c: SemitoneCurve, from_rate: float, to_rate: float) -> SemitoneCurve:
    """Resample a semitone curve between frame rates.

    Semitones interpolate linearly at the new frame times; the voiced
    flag resamples by nearest neighbor. Output length is
    round(len * to_rate / from_rate).
    """
    if from_rate <= 0 or to_rate <= 0:
        raise ValueError("frame rates must be positive")
    n_in = len(c)
    n_out = int(round(n_in * to_rate / from_rate))
    if n_out < 1:
        raise ValueError("resampling would produce an empty curve")
    t_in = np.arange(n_in, dtype=np.float64) / from_rate
    t_out = np.arange(n_out, dtype=np.float64) / to_rate
    semitones = np.interp(t_out, t_in, c.semitones)
    nearest = np.clip(np.rint(t_out * from_rate).astype(np.int64), 0, n_in - 1)
    voiced = c.voiced[nearest]
    return SemitoneCurve(semitones=semitones, voiced=voiced, frame_rate_hz=to_rate)


def sample_mask(length: int, r_lo: float, r_hi: float, rng: np.random.Generator) -> Mask:
    """Draw a single contiguous mask span covering r% of the frames.

    r is uniform in [r_lo, r_hi] percent; the span holds exactly
    round(length * r / 100) ones at a uniformly random offset.
    """
    if not (0 <= r_lo <= r_hi <= 100):
        raise ValueError(f"need 0 <= r_lo <= r_hi <= 100, got [{r_lo}, {r_hi}]")
    if length < 1:
        raise ValueError("mask length must be >= 1")
    r = float(rng.uniform(r_lo, r_hi))
    n_masked = int(round(length * r / 100.0))
    start = int(rng.integers(0, length - n_masked + 1))
    m = np.zeros(length, dtype=np.int64)
    m[start:start + n_masked] = 1
    return Mask(m=m)


def shift_augment(
    seq: ModelSequence,
    shift: int | None = None,
    rng: np.random.Generator | None = None,
    max_shift: int = 4,
) -> tuple[ModelSequence, int]:
    """Transpose a sequence by a whole number of semitones.

    x moves by shift/36 in normalized units and every non-REST class by
    the same step; REST classes and u are untouched. If the requested
    shift would push any voiced frame outside [24, 96] or any non-REST
    class outside [0, 72), it is reduced to the largest same-sign shift
    that fits (possibly 0). Pass ``shift=None`` with an rng to draw
    uniformly from [-max_shift, max_shift].

    Returns the shifted sequence and the shift actually applied.
    """
    if shift is None:
        if rng is None:
            raise ValueError("either shift or rng must be provided")
        shift = int(rng.integers(-max_shift, max_shift + 1))
    shift = int(shift)
    if abs(shift) > max_shift:
        raise ValueError(f"|shift| must be <= {max_shift}, got {shift}")

    applied = shift
    voiced = seq.u == 0
    non_rest = seq.y != REST_CLASS
    if applied > 0:
        room = float("inf")
        if np.any(voiced):
            room = MIDI_HI - float(np.max(seq.x[voiced])) * MIDI_HALF_RANGE - MIDI_CENTER
        if np.any(non_rest):
            room = min(room, float(N_NOTE_CLASSES - 1 - int(np.max(seq.y[non_rest]))))
        applied = max(0, min(applied, int(np.floor(room + 1e-9))))
    elif applied < 0:
        room = float("inf")
        if np.any(voiced):
            room = float(np.min(seq.x[voiced])) * MIDI_HALF_RANGE + MIDI_CENTER - MIDI_LO
        if np.any(non_rest):
            room = min(room, float(np.min(seq.y[non_rest])))
        applied = min(0, max(applied, -int(np.floor(room + 1e-9))))

    if applied == 0:
        return seq, 0
    x = seq.x + applied / MIDI_HALF_RANGE
    y = np.where(non_rest, seq.y + applied, seq.y)
    return ModelSequence(x=x, y=y, u=seq.u), applied


def save_pitch_file(path, curve: PitchCurve) -> None:
    """Write a pitch file; .json holds rate + values, .csv the frames only.

    JSON is the canonical format. Floats serialize via repr so finite
    decimal values round-trip exactly.
    """
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "f0_hz"])
            for i, v in enumerate(curve.f0_hz):
                writer.writerow([i, repr(float(v))])
    else:
        payload = {
            "frame_rate_hz": float(curve.frame_rate_hz),
            "f0_hz": [float(v) for v in curve.f0_hz],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)
            fh.write("\n")


def load_pitch_file(path, frame_rate_hz: float = 100.0) -> PitchCurve:
    """Read a pitch file written by :func:`save_pitch_file`.

    The CSV form carries no rate, so ``frame_rate_hz`` supplies it
    (ignored for JSON, which stores its own).
    """
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["frame", "f0_hz"]:
                raise ValueError(f"{path}: expected CSV header 'frame,f0_hz'")
            f0 = [float(row[1]) for row in reader if row]
        return PitchCurve(frame_rate_hz=frame_rate_hz, f0_hz=np.asarray(f0))
    with open(path) as fh:
        payload = json.load(fh)
    try:
        rate = float(payload["frame_rate_hz"])
        f0 = np.asarray(payload["f0_hz"], dtype=np.float64)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed pitch file ({exc})") from exc
    return PitchCurve(frame_rate_hz=rate, f0_hz=f0)
