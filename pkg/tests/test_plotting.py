"""SVG helpers: byte determinism and input validation."""

import numpy as np
import pytest

from pitchflow.curves import Mask, ModelSequence, SemitoneCurve
from pitchflow.plotting import save_comparison_svg, save_loss_svg, save_overlay_svg


def _task_pieces():
    n = 12
    seq = ModelSequence(
        x=np.linspace(-0.4, 0.4, n),
        y=np.array([36] * 4 + [72] * 2 + [40] * 6, dtype=np.int64),
        u=np.array([0] * 4 + [1] * 2 + [0] * 6, dtype=np.int64),
    )
    mask = Mask(np.array([0] * 6 + [1] * 6))
    gen = SemitoneCurve(
        semitones=np.full(6, 64.0),
        voiced=np.array([True, True, False, True, True, True]),
        frame_rate_hz=50.0,
    )
    return seq, mask, gen


def test_overlay_svg_is_deterministic(tmp_path):
    seq, mask, gen = _task_pieces()
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    save_overlay_svg(a, seq, mask.m, gen)
    save_overlay_svg(b, seq, mask.m, gen)
    data = a.read_bytes()
    assert data == b.read_bytes()
    assert data.startswith(b"<?xml")
    assert b"<path" in data


def test_overlay_svg_validates_lengths(tmp_path):
    seq, mask, gen = _task_pieces()
    with pytest.raises(ValueError, match="mask"):
        save_overlay_svg(tmp_path / "x.svg", seq, mask.m[:-1], gen)
    short = SemitoneCurve(
        semitones=gen.semitones[:-1], voiced=gen.voiced[:-1], frame_rate_hz=50.0
    )
    with pytest.raises(ValueError, match="masked frame count"):
        save_overlay_svg(tmp_path / "x.svg", seq, mask.m, short)


def test_comparison_svg_deterministic_and_validating(tmp_path):
    rng = np.random.default_rng(3)
    ref = SemitoneCurve(
        semitones=60 + rng.normal(0, 1, 40),
        voiced=np.ones(40, dtype=bool),
        frame_rate_hz=50.0,
    )
    est = SemitoneCurve(
        semitones=ref.semitones + 0.2, voiced=ref.voiced, frame_rate_hz=50.0
    )
    grid = np.full(40, 36, dtype=np.int64)
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    save_comparison_svg(a, est, ref, grid)
    save_comparison_svg(b, est, ref, grid)
    assert a.read_bytes() == b.read_bytes()
    short = SemitoneCurve(
        semitones=est.semitones[:-1], voiced=est.voiced[:-1], frame_rate_hz=50.0
    )
    with pytest.raises(ValueError, match="lengths"):
        save_comparison_svg(tmp_path / "x.svg", short, ref)


def test_loss_svg_deterministic_and_validating(tmp_path):
    steps = np.arange(200)
    losses = 1.0 / (1.0 + steps / 30.0)
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    save_loss_svg(a, steps, losses)
    save_loss_svg(b, steps, losses)
    assert a.read_bytes() == b.read_bytes()
    with pytest.raises(ValueError, match="same length"):
        save_loss_svg(tmp_path / "x.svg", steps, losses[:-1])
