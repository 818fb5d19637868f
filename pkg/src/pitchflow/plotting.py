"""Deterministic SVG figures for the command-line reports.

All figures are written as SVG with text rendered to path elements and
with the embedded timestamp suppressed, so re-running a command with the
same inputs produces byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .curves import (
    MIDI_CENTER,
    MIDI_HALF_RANGE,
    MIDI_LO,
    REST_CLASS,
    ModelSequence,
    SemitoneCurve,
)

__all__ = ["save_comparison_svg", "save_loss_svg", "save_overlay_svg"]

_SAVEFIG_KW = {"format": "svg", "metadata": {"Date": None}}


def _new_axes() -> tuple[plt.Figure, plt.Axes]:
    plt.rcParams["svg.hashsalt"] = "pitchflow"
    plt.rcParams["svg.fonttype"] = "path"
    fig, ax = plt.subplots(figsize=(9.0, 3.2), dpi=100)
    return fig, ax


def _grid_semitones(y: np.ndarray) -> np.ndarray:
    """Per-frame note-grid line: class center in MIDI, NaN at rests."""
    y = np.asarray(y)
    return np.where(y == REST_CLASS, np.nan, y.astype(np.float64) + MIDI_LO)


def _finish(fig: plt.Figure, ax: plt.Axes, path: str | Path) -> None:
    ax.set_xlabel("time (s)")
    ax.set_ylabel("pitch (MIDI)")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(path), **_SAVEFIG_KW)
    plt.close(fig)


def save_overlay_svg(
    path: str | Path,
    seq: ModelSequence,
    mask: np.ndarray,
    generated: SemitoneCurve,
    frame_rate_hz: float = 50.0,
) -> None:
    """Overlay a task's context (blue), generated frames (red), and note grid.

    ``seq`` and ``mask`` describe the full model input; ``generated`` holds
    the result for the masked frames, in order.  Unvoiced frames break the
    lines (drawn as gaps).
    """
    mask = np.asarray(mask)
    n = len(seq)
    if len(mask) != n:
        raise ValueError("mask and sequence lengths differ")
    positions = np.flatnonzero(mask == 1)
    if len(positions) != len(generated):
        raise ValueError("generated curve does not match the masked frame count")
    t = np.arange(n) / frame_rate_hz

    context = np.full(n, np.nan)
    visible = (mask == 0) & (seq.u == 0)
    context[visible] = seq.x[visible] * MIDI_HALF_RANGE + MIDI_CENTER

    gen = np.full(n, np.nan)
    gen[positions] = np.where(generated.voiced, generated.semitones, np.nan)

    fig, ax = _new_axes()
    ax.plot(t, _grid_semitones(seq.y), color="0.75", lw=1.0, drawstyle="steps-post", label="note grid")
    ax.plot(t, context, color="tab:blue", lw=1.2, label="context")
    ax.plot(t, gen, color="tab:red", lw=1.2, label="generated")
    _finish(fig, ax, path)


def save_comparison_svg(
    path: str | Path,
    est: SemitoneCurve,
    ref: SemitoneCurve,
    note_classes: np.ndarray | None = None,
) -> None:
    """Plot a reference curve (blue) against an estimate (red).

    ``note_classes``, when given, draws the per-frame note grid behind
    both curves (same length as the reference).
    """
    if len(est) != len(ref):
        raise ValueError("est and ref lengths differ")
    t = np.arange(len(ref)) / ref.frame_rate_hz
    fig, ax = _new_axes()
    if note_classes is not None:
        ax.plot(t, _grid_semitones(note_classes), color="0.75", lw=1.0, drawstyle="steps-post", label="note grid")
    ax.plot(t, np.where(ref.voiced, ref.semitones, np.nan), color="tab:blue", lw=1.2, label="reference")
    ax.plot(t, np.where(est.voiced, est.semitones, np.nan), color="tab:red", lw=1.2, label="estimate")
    _finish(fig, ax, path)


def save_loss_svg(path: str | Path, steps: np.ndarray, losses: np.ndarray) -> None:
    """Plot a training loss trace with a running-mean overlay."""
    steps = np.asarray(steps, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if steps.shape != losses.shape or steps.ndim != 1:
        raise ValueError("steps and losses must be 1-D and the same length")
    fig, ax = _new_axes()
    ax.plot(steps, losses, color="0.8", lw=0.8, label="loss")
    window = min(len(losses), max(5, len(losses) // 50))
    if len(losses) >= 2 * window:
        kernel = np.full(window, 1.0 / window)
        smooth = np.convolve(losses, kernel, mode="valid")
        ax.plot(steps[window - 1 :], smooth, color="tab:red", lw=1.4, label=f"mean over {window}")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(path), **_SAVEFIG_KW)
    plt.close(fig)
