"""Synthetic singer: style sampling, score walks, rendering, datasets."""

from __future__ import annotations

import numpy as np
import pytest

from pitchflow.score import extract_score, notes_to_frames
from pitchflow.synth import (
    STYLE_RANGES,
    ScoreSpec,
    StyleParams,
    gen_dataset,
    load_dataset,
    render_curve,
    sample_score,
    sample_style,
    save_dataset,
)

FPS = 50.0


def _zero_style(**overrides) -> StyleParams:
    base = dict(
        vibrato_rate_hz=5.0,
        vibrato_depth_st=0.0,
        vibrato_onset_s=0.0,
        portamento_s=0.0,
        overshoot_st=0.0,
        drift_st=0.0,
        jitter_st=0.0,
    )
    base.update(overrides)
    return StyleParams(**base)


def test_sample_style_deterministic() -> None:
    a = sample_style(np.random.default_rng(0))
    b = sample_style(np.random.default_rng(0))
    assert a == b


def test_sample_style_within_ranges() -> None:
    rng = np.random.default_rng(4)
    for _ in range(1000):
        s = sample_style(rng)
        for name, (lo, hi) in STYLE_RANGES.items():
            assert lo <= getattr(s, name) <= hi


def test_sample_style_rate_mean() -> None:
    rng = np.random.default_rng(10)
    rates = [sample_style(rng).vibrato_rate_hz for _ in range(10_000)]
    assert abs(float(np.mean(rates)) - 5.5) <= 0.1


def test_style_params_validation() -> None:
    with pytest.raises(ValueError):
        _zero_style(vibrato_rate_hz=9.0)
    with pytest.raises(ValueError):
        _zero_style(jitter_st=-0.01)


def test_sample_score_invariants() -> None:
    rng = np.random.default_rng(2)
    for _ in range(100):
        sc = sample_score(rng, int(rng.integers(50, 800)), FPS)
        last = 0
        for ev in sc.events:
            assert ev.onset_frame >= last
            assert 24 <= ev.pitch_class <= 60
            last = ev.offset_frame
        assert last <= sc.total_frames


def test_sample_score_reproducible() -> None:
    a = sample_score(np.random.default_rng(5), 300, FPS)
    b = sample_score(np.random.default_rng(5), 300, FPS)
    assert a.events == b.events


def test_sample_score_rest_fraction() -> None:
    # The stated process gives about 3.5% rest frames in expectation
    # (rest prob 0.15 x mean rest 0.175 s against mean note 0.7 s).
    rng = np.random.default_rng(6)
    fracs = []
    for _ in range(1000):
        sc = sample_score(rng, 500, FPS)
        covered = sum(ev.duration_frames() for ev in sc.events)
        fracs.append(1.0 - covered / sc.total_frames)
    assert abs(float(np.mean(fracs)) - 0.036) <= 0.02


def test_sample_score_rejects_short() -> None:
    with pytest.raises(ValueError):
        sample_score(np.random.default_rng(0), 49, FPS)


def _two_note_score(n: int = 200) -> ScoreSpec:
    from pitchflow.score import NoteEvent

    return ScoreSpec(
        events=[
            NoteEvent(onset_frame=0, offset_frame=100, pitch_class=36),
            NoteEvent(onset_frame=100, offset_frame=200, pitch_class=40),
        ],
        frame_rate_hz=FPS,
        total_frames=n,
    )


def test_render_degenerate_style_is_exact() -> None:
    rng = np.random.default_rng(1)
    score = sample_score(rng, 400, FPS)
    curve, u = render_curve(score, _zero_style(), rng)
    y = notes_to_frames(score.events, score.total_frames)
    voiced_frames = y != 72
    assert np.array_equal(curve.voiced, voiced_frames)
    assert np.array_equal(u == 1, ~voiced_frames)
    assert np.array_equal(curve.semitones[voiced_frames], (y[voiced_frames] + 24).astype(float))


def test_render_unvoiced_exactly_on_rests() -> None:
    rng = np.random.default_rng(3)
    score = sample_score(rng, 300, FPS)
    style = sample_style(rng)
    _, u = render_curve(score, style, rng)
    y = notes_to_frames(score.events, score.total_frames)
    assert np.array_equal(u == 1, y == 72)


def test_render_vibrato_rate_via_fft() -> None:
    # Independent oracle: detrended spectrum of a held note peaks at the
    # vibrato rate.
    style = _zero_style(vibrato_rate_hz=6.0, vibrato_depth_st=0.5)
    curve, _ = render_curve(_two_note_score(), style, np.random.default_rng(0))
    seg = curve.semitones[10:90]
    seg = seg - seg.mean()
    spectrum = np.abs(np.fft.rfft(seg * np.hanning(seg.size), n=4096))
    freqs = np.fft.rfftfreq(4096, d=1.0 / FPS)
    band = (freqs >= 2.0) & (freqs <= 10.0)
    peak = freqs[band][np.argmax(spectrum[band])]
    assert abs(peak - 6.0) <= 0.5


def test_render_deterministic() -> None:
    score = sample_score(np.random.default_rng(8), 300, FPS)
    style = sample_style(np.random.default_rng(9))
    a, ua = render_curve(score, style, np.random.default_rng(42))
    b, ub = render_curve(score, style, np.random.default_rng(42))
    assert np.array_equal(a.semitones, b.semitones)
    assert np.array_equal(ua, ub)


def test_render_portamento_glides_monotonically() -> None:
    style = _zero_style(portamento_s=0.2)
    curve, _ = render_curve(_two_note_score(), style, np.random.default_rng(0))
    # Glide straddles the boundary at frame 100: strictly increasing there.
    window = curve.semitones[94:106]
    assert window[0] == 60.0
    assert window[-1] == 64.0
    assert np.all(np.diff(window) >= 0)


def test_render_overshoot_peaks_past_target() -> None:
    style = _zero_style(portamento_s=0.1, overshoot_st=0.4)
    curve, _ = render_curve(_two_note_score(), style, np.random.default_rng(0))
    second = curve.semitones[100:200]
    assert second.max() == pytest.approx(64.4, abs=0.05)
    assert abs(second[-1] - 64.0) <= 0.01


def test_gen_dataset_deterministic() -> None:
    a = gen_dataset(4, 200, seed=11)
    b = gen_dataset(4, 200, seed=11)
    for ea, eb in zip(a, b):
        assert np.array_equal(ea.seq.x, eb.seq.x)
        assert np.array_equal(ea.seq.y, eb.seq.y)
        assert np.array_equal(ea.seq.u, eb.seq.u)
        assert ea.style == eb.style


def test_gen_dataset_sequences_valid() -> None:
    for ex in gen_dataset(6, 256, seed=13):
        assert len(ex.seq) == 256
        assert np.all(np.abs(ex.seq.x) <= 1.0)
        assert np.all((ex.seq.y >= 0) & (ex.seq.y <= 72))
        assert np.array_equal(ex.seq.u == 1, ex.seq.y == 72)


def test_gen_dataset_score_recovery() -> None:
    # Cross-module oracle: the extraction pipeline recovers most frame
    # classes of rendered curves for moderate vibrato depth.
    examples = gen_dataset(100, 400, seed=0)
    rates = [
        float(np.mean(extract_score(ex.curve)[1] == ex.seq.y))
        for ex in examples
        if ex.style.vibrato_depth_st <= 1.0
    ]
    assert len(rates) > 50
    assert float(np.mean(rates)) >= 0.8


def test_dataset_round_trip(tmp_path) -> None:
    examples = gen_dataset(3, 200, seed=21)
    save_dataset(tmp_path, examples, seed=21)
    loaded = load_dataset(tmp_path)
    assert [ex.example_id for ex in loaded] == [ex.example_id for ex in examples]
    for ea, eb in zip(examples, loaded):
        assert np.array_equal(ea.seq.y, eb.seq.y)
        assert np.array_equal(ea.seq.u, eb.seq.u)
        assert np.max(np.abs(ea.seq.x - eb.seq.x)) <= 1e-12
        assert ea.style == eb.style


def test_dataset_files_byte_identical(tmp_path) -> None:
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    save_dataset(a_dir, gen_dataset(3, 200, seed=5), seed=5)
    save_dataset(b_dir, gen_dataset(3, 200, seed=5), seed=5)
    for path_a in sorted(a_dir.iterdir()):
        path_b = b_dir / path_a.name
        assert path_a.read_bytes() == path_b.read_bytes()
