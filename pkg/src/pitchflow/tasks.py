"""Model-input builders for the three applications.

All three downstream uses share one shape: a context block (possibly empty)
followed by a block to generate, with the mask set on the suffix.  Pitch
correction pairs an off-key take with corrected notes on the same timing;
synthesis and conversion both concatenate a reference segment with the target
segment and regenerate the target, so they share a builder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curves import (
    MIDI_CENTER,
    MIDI_HALF_RANGE,
    Mask,
    ModelSequence,
    SemitoneCurve,
)

DEFAULT_MAX_LEN = 1024


@dataclass(frozen=True)
class TaskInput:
    """A built model input: sequence, suffix mask, and where the suffix starts."""

    seq: ModelSequence
    mask: Mask
    split_point: int

    def __post_init__(self) -> None:
        n = len(self.seq)
        if len(self.mask) != n:
            raise ValueError("mask and sequence lengths differ")
        if not 0 <= self.split_point <= n:
            raise ValueError(f"split_point {self.split_point} outside [0, {n}]")
        m = self.mask.m
        if np.any(m[: self.split_point] != 0) or np.any(m[self.split_point :] != 1):
            raise ValueError("mask must be 0 before split_point and 1 after")


def _suffix_mask(total: int, split: int) -> Mask:
    m = np.zeros(total, dtype=np.int64)
    m[split:] = 1
    return Mask(m)


def _check_length(total: int, max_len: int) -> None:
    if total > max_len:
        raise ValueError(f"combined length {total} exceeds max_len {max_len}")
    if total < 1:
        raise ValueError("built task would be empty")


def build_apc(
    off: ModelSequence, y_in: np.ndarray, max_len: int = DEFAULT_MAX_LEN
) -> TaskInput:
    """Pitch-correction input: the off-key take, then zeros under target notes.

    The corrected segment reuses the off-key take's voicing, which assumes the
    target notes follow the same timing as the take.
    """
    y_in = np.asarray(y_in, dtype=np.int64)
    n = len(off)
    if len(y_in) != n:
        raise ValueError(f"y_in length {len(y_in)} != off length {n}")
    _check_length(2 * n, max_len)
    seq = ModelSequence(
        x=np.concatenate([off.x, np.zeros(n)]),
        y=np.concatenate([off.y, y_in]),
        u=np.concatenate([off.u, off.u]),
    )
    return TaskInput(seq=seq, mask=_suffix_mask(2 * n, n), split_point=n)


def build_transfer(
    ref: ModelSequence, tgt: ModelSequence, max_len: int = DEFAULT_MAX_LEN
) -> TaskInput:
    """Style-transfer input: reference block kept, target block regenerated.

    Serves both synthesis (tgt carries score/voicing only, x zeroed by the
    caller) and conversion (tgt.x is an existing take).  An empty ref builds
    the no-context variant: everything masked.
    """
    total = len(ref) + len(tgt)
    _check_length(total, max_len)
    seq = ModelSequence(
        x=np.concatenate([ref.x, tgt.x]),
        y=np.concatenate([ref.y, tgt.y]),
        u=np.concatenate([ref.u, tgt.u]),
    )
    return TaskInput(seq=seq, mask=_suffix_mask(total, len(ref)), split_point=len(ref))


def split_result(
    x_hat: np.ndarray, task: TaskInput, frame_rate_hz: float = 50.0
) -> SemitoneCurve:
    """Cut the generated block out of a full output and denormalize it.

    Voicing comes from the task's target-block u flags (u = 0 means voiced).
    The affine map matches denormalize_pitch but skips its range guard:
    sampled values may stray outside the nominal grid and still count as
    (wrong) pitch for evaluation.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x_hat.shape != (len(task.seq),) :
        raise ValueError(f"x_hat length {x_hat.shape} != task length {len(task.seq)}")
    tail = x_hat[task.split_point :]
    semitones = tail * MIDI_HALF_RANGE + MIDI_CENTER
    voiced = task.seq.u[task.split_point :] == 0
    return SemitoneCurve(
        semitones=semitones, voiced=voiced, frame_rate_hz=frame_rate_hz
    )
