"""Rectified-flow training and guided sampling over pitch sequences.

Training pairs each data sequence with per-frame Gaussian noise, interpolates
between them at a cosine-biased time, and regresses the network velocity
toward (data - noise) on the masked frames only.  Sampling starts from noise
and integrates the guided velocity field with a fixed-step midpoint solver,
then overwrites the visible context frames with their ground-truth values.

Everything random is derived from ``numpy.random.default_rng([seed, step])``
per training step, so a run can be stopped at any checkpoint and resumed
bit-exactly without serializing generator state.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .curves import ModelSequence, TrainingExample, sample_mask, shift_augment
from .model import (
    ALL_DROPPED,
    DropFlags,
    VelocityNet,
    load_checkpoint,
    read_named_arrays,
    save_checkpoint,
    write_named_arrays,
)

logger = logging.getLogger(__name__)

NO_DROPS = DropFlags(drop_y=False, drop_ctx=False, drop_u=False)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule and augmentation settings."""

    p_c: float = 0.5
    r_lo: float = 70.0
    r_hi: float = 100.0
    max_shift: int = 4
    phase1_steps: int = 100_000
    phase2_steps: int = 90_000
    lr_phase1: float = 1e-4
    lr_phase2: float = 1e-5
    warmup_steps: int = 5_000
    batch_size: int = 512
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_c <= 1.0:
            raise ValueError("p_c must lie in [0, 1]")
        if not 0.0 <= self.r_lo <= self.r_hi <= 100.0:
            raise ValueError("mask percents must satisfy 0 <= r_lo <= r_hi <= 100")
        if self.phase1_steps < 0 or self.phase2_steps < 0 or self.warmup_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.lr_phase1 <= 0 or self.lr_phase2 <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.max_shift < 0:
            raise ValueError("max_shift must be non-negative")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass(frozen=True)
class SamplerConfig:
    """Guided-sampling settings."""

    n_steps: int = 16
    cfg_scale: float = 1.25
    solver: str = "midpoint"

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.cfg_scale < 0:
            raise ValueError("cfg_scale must be non-negative")
        if self.solver != "midpoint":
            raise ValueError(f"unknown solver {self.solver!r}")


def sample_t(rng: np.random.Generator, size: int | None = None):
    """Draw flow times biased toward 0: t = 1 - cos(pi * u / 2), u ~ U[0, 1]."""
    u = rng.random(size)
    return 1.0 - np.cos(0.5 * np.pi * u)


def interpolate(x0: np.ndarray, x1: np.ndarray, t: float) -> np.ndarray:
    """Linear path (1 - t) * x0 + t * x1; endpoints reproduce x0 and x1."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {x1.shape}")
    return (1.0 - t) * x0 + t * x1


def flow_inputs(
    x: np.ndarray, mask: np.ndarray, eps: np.ndarray, t: float
) -> tuple[np.ndarray, np.ndarray]:
    """Assemble the noisy input and visible context for one example."""
    x_t = interpolate(eps, x, t)
    x_ctx = (1.0 - mask) * x
    return x_t, x_ctx


def _masked_mse(
    v: torch.Tensor, target: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Per-example mean squared error over masked frames; 0 where none are masked."""
    err = (v - target) ** 2 * mask
    n_masked = mask.sum(dim=-1)
    return err.sum(dim=-1) / n_masked.clamp(min=1.0)


def flow_loss(
    net: VelocityNet,
    example: TrainingExample,
    rng: np.random.Generator,
    p_c: float = 0.5,
    *,
    t: float | None = None,
    eps: np.ndarray | None = None,
    flags: DropFlags | None = None,
) -> torch.Tensor:
    """Masked flow-matching loss for a single example.

    Draw order from ``rng``: per-frame noise, then the flow time, then the
    three condition-drop coins (score, context, voicing).  Any of them can be
    pinned through the keyword arguments, which the finite-difference tests
    rely on.
    """
    seq = example.seq
    n = len(seq.x)
    if eps is None:
        eps = rng.standard_normal(n)
    if t is None:
        t = float(sample_t(rng))
    if flags is None:
        coins = rng.random(3) < p_c
        flags = DropFlags(bool(coins[0]), bool(coins[1]), bool(coins[2]))

    m = example.mask.m.astype(np.float64)
    x_t, x_ctx = flow_inputs(seq.x, m, eps, t)
    dtype = next(net.parameters()).dtype
    v = net(
        torch.as_tensor(x_t, dtype=dtype),
        torch.as_tensor(t, dtype=dtype),
        torch.as_tensor(seq.y),
        torch.as_tensor(x_ctx, dtype=dtype),
        torch.as_tensor(seq.u),
        flags,
    )
    target = torch.as_tensor(seq.x - eps, dtype=dtype)
    return _masked_mse(v, target, torch.as_tensor(m, dtype=dtype)).squeeze()


def guided_velocity(
    net: VelocityNet,
    x_t: torch.Tensor,
    t: torch.Tensor | float,
    y: torch.Tensor,
    x_ctx: torch.Tensor,
    u: torch.Tensor,
    cfg_scale: float,
) -> torch.Tensor:
    """Classifier-free guided velocity from exactly two network evaluations.

    Computed as (1 - a) * v_unconditional + a * v_conditional so the a = 0 and
    a = 1 endpoints pass the respective branch through bit-exactly.
    """
    v_unc = net(x_t, t, y, x_ctx, u, ALL_DROPPED)
    v_cond = net(x_t, t, y, x_ctx, u, NO_DROPS)
    if cfg_scale == 0.0:
        return v_unc
    if cfg_scale == 1.0:
        return v_cond
    return (1.0 - cfg_scale) * v_unc + cfg_scale * v_cond


def integrate_midpoint(field: Callable, x0, n_steps: int):
    """Integrate dx/dt = field(x, t) from t=0 to t=1 with the midpoint rule.

    Works on numpy arrays, torch tensors, or plain floats, as long as
    ``field`` returns the same kind it was given.  Raises FloatingPointError
    if the state stops being finite.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    h = 1.0 / n_steps
    x = x0
    for k in range(n_steps):
        t_k = k * h
        mid = x + (0.5 * h) * field(x, t_k)
        x = x + h * field(mid, t_k + 0.5 * h)
        if not _all_finite(x):
            raise FloatingPointError(
                f"midpoint integration diverged at step {k + 1}/{n_steps} (t={t_k + h:.4f})"
            )
    return x


def _all_finite(x) -> bool:
    if torch.is_tensor(x):
        return bool(torch.isfinite(x).all())
    return bool(np.all(np.isfinite(x)))


def generate(
    net: VelocityNet,
    y: np.ndarray,
    x_ctx: np.ndarray,
    m: np.ndarray,
    u: np.ndarray,
    sampler: SamplerConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample a full normalized pitch sequence for the masked frames.

    Integration covers the whole sequence; afterwards every visible frame
    (m = 0) is overwritten with its value from ``x_ctx``, so only masked
    frames carry model output.  Deterministic given the rng state.
    """
    y = np.asarray(y)
    x_ctx = np.asarray(x_ctx, dtype=np.float64)
    m = np.asarray(m)
    u = np.asarray(u)
    n = len(y)
    if not (len(x_ctx) == len(m) == len(u) == n):
        raise ValueError("y, x_ctx, m, u must share one length")
    if n > net.cfg.max_len:
        raise ValueError(f"sequence length {n} exceeds max_len {net.cfg.max_len}")
    if not np.any(m == 1):
        raise ValueError("at least one frame must be masked")

    dtype = next(net.parameters()).dtype
    y_t = torch.as_tensor(y)
    ctx_t = torch.as_tensor(x_ctx, dtype=dtype)
    u_t = torch.as_tensor(u)
    x_start = torch.as_tensor(rng.standard_normal(n), dtype=dtype)

    def field(x: torch.Tensor, t: float) -> torch.Tensor:
        return guided_velocity(net, x, t, y_t, ctx_t, u_t, sampler.cfg_scale)

    with torch.no_grad():
        x_end = integrate_midpoint(field, x_start, sampler.n_steps)
    out = x_end.double().numpy().copy()
    visible = np.asarray(m) == 0
    out[visible] = x_ctx[visible]
    return out


def learning_rate(cfg: TrainConfig, step: int) -> float:
    """Schedule value at an absolute step: per-phase linear warmup, cosine decay to 0."""
    total = cfg.phase1_steps + cfg.phase2_steps
    if not 0 <= step < total:
        raise ValueError(f"step {step} outside [0, {total})")
    if step < cfg.phase1_steps:
        peak, sp, length = cfg.lr_phase1, step, cfg.phase1_steps
    else:
        peak, sp, length = cfg.lr_phase2, step - cfg.phase1_steps, cfg.phase2_steps
    warmup = min(cfg.warmup_steps, length)
    if sp < warmup:
        return peak * sp / warmup
    if length == warmup:
        return peak
    return peak * 0.5 * (1.0 + math.cos(math.pi * (sp - warmup) / (length - warmup)))


def _assemble_step_batch(
    dataset: Sequence[ModelSequence],
    cfg: TrainConfig,
    step: int,
    phase: int,
) -> tuple[np.ndarray, ...]:
    """Build one training batch; all randomness comes from [seed, step].

    Per example, in order: dataset index, mask, transposition, per-frame
    noise, flow time, three drop coins.  Phase 1 overrides the voicing drop
    to True after the coins are drawn, keeping the stream layout identical
    across phases.
    """
    rng = np.random.default_rng([cfg.seed, step])
    n = len(dataset[0].x)
    b = cfg.batch_size
    xs = np.empty((b, n))
    ys = np.empty((b, n), dtype=np.int64)
    us = np.empty((b, n), dtype=np.int64)
    masks = np.empty((b, n))
    eps = np.empty((b, n))
    ts = np.empty(b)
    drops = np.empty((b, 3), dtype=bool)
    for i in range(b):
        idx = int(rng.integers(0, len(dataset)))
        mask = sample_mask(n, cfg.r_lo, cfg.r_hi, rng)
        seq, _ = shift_augment(dataset[idx], rng=rng, max_shift=cfg.max_shift)
        xs[i] = seq.x
        ys[i] = seq.y
        us[i] = seq.u
        masks[i] = mask.m
        eps[i] = rng.standard_normal(n)
        ts[i] = sample_t(rng)
        drops[i] = rng.random(3) < cfg.p_c
    if phase == 1:
        drops[:, 2] = True
    return xs, ys, us, masks, eps, ts, drops


def _batch_loss(
    net: VelocityNet,
    xs: np.ndarray,
    ys: np.ndarray,
    us: np.ndarray,
    masks: np.ndarray,
    eps: np.ndarray,
    ts: np.ndarray,
    drops: np.ndarray,
) -> torch.Tensor:
    dtype = next(net.parameters()).dtype
    x_t = (1.0 - ts)[:, None] * eps + ts[:, None] * xs
    ctx = (1.0 - masks) * xs
    flags = DropFlags(
        drop_y=torch.as_tensor(drops[:, 0]),
        drop_ctx=torch.as_tensor(drops[:, 1]),
        drop_u=torch.as_tensor(drops[:, 2]),
    )
    v = net(
        torch.as_tensor(x_t, dtype=dtype),
        torch.as_tensor(ts, dtype=dtype),
        torch.as_tensor(ys),
        torch.as_tensor(ctx, dtype=dtype),
        torch.as_tensor(us),
        flags,
    )
    target = torch.as_tensor(xs - eps, dtype=dtype)
    return _masked_mse(v, target, torch.as_tensor(masks, dtype=dtype)).mean()


def _save_train_checkpoint(
    directory: Path, net: VelocityNet, opt: torch.optim.AdamW, step: int, phase: int
) -> None:
    state = {name: opt.state.get(p) for name, p in net.named_parameters()}
    any_state = next((s for s in state.values() if s), None)
    optim_steps = int(any_state["step"].item()) if any_state else 0
    save_checkpoint(directory, net, metadata={"step": step, "phase": phase, "optim_steps": optim_steps})
    if any_state:
        arrays = {}
        for name, s in state.items():
            arrays[f"exp_avg/{name}"] = s["exp_avg"].numpy()
            arrays[f"exp_avg_sq/{name}"] = s["exp_avg_sq"].numpy()
        write_named_arrays(directory, "optim", arrays)


def load_train_checkpoint(directory: str | Path) -> tuple[VelocityNet, dict, dict[str, np.ndarray]]:
    """Load a training checkpoint: network, metadata, optimizer moment arrays."""
    directory = Path(directory)
    net, metadata = load_checkpoint(directory)
    optim_arrays: dict[str, np.ndarray] = {}
    if (directory / "optim.index.json").exists():
        optim_arrays = read_named_arrays(directory, "optim")
    return net, metadata, optim_arrays


def _make_optimizer(
    net: VelocityNet, cfg: TrainConfig, optim_arrays: dict[str, np.ndarray], optim_steps: int
) -> torch.optim.AdamW:
    opt = torch.optim.AdamW(
        net.parameters(), lr=0.0, weight_decay=cfg.weight_decay
    )
    if optim_arrays:
        for name, p in net.named_parameters():
            opt.state[p] = {
                "step": torch.tensor(float(optim_steps)),
                "exp_avg": torch.from_numpy(optim_arrays[f"exp_avg/{name}"].copy()),
                "exp_avg_sq": torch.from_numpy(optim_arrays[f"exp_avg_sq/{name}"].copy()),
            }
    return opt


def train(
    net: VelocityNet,
    dataset: Sequence[ModelSequence],
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    *,
    start_step: int = 0,
    optim_arrays: dict[str, np.ndarray] | None = None,
    optim_steps: int = 0,
    log_interval: int = 1,
    checkpoint_interval: int = 0,
) -> tuple[VelocityNet, list[tuple[int, float, float, int]]]:
    """Run the two-phase schedule from ``start_step`` to the end.

    Phase 1 (the first ``phase1_steps``) always drops the voicing condition;
    phase 2 subjects it to the usual coin.  Every step rebuilds its batch from
    ``default_rng([seed, step])``, which is what makes resuming exact.

    With ``out_dir`` set, appends ``trace.csv`` rows (step,loss,lr,phase)
    every ``log_interval`` steps and writes ``checkpoint-<step>`` directories
    every ``checkpoint_interval`` steps (0 disables periodic checkpoints; a
    final checkpoint is always written).  Returns the trained network and the
    trace rows it produced.

    A non-finite loss aborts with FloatingPointError; checkpoints already on
    disk are left in place.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    lengths = {len(seq.x) for seq in dataset}
    if len(lengths) != 1:
        raise ValueError(f"all training sequences must share one length, got {sorted(lengths)}")
    total = cfg.phase1_steps + cfg.phase2_steps
    if not 0 <= start_step <= total:
        raise ValueError(f"start_step {start_step} outside [0, {total}]")

    opt = _make_optimizer(net, cfg, optim_arrays or {}, optim_steps)
    trace: list[tuple[int, float, float, int]] = []
    trace_path = ckpt_root = None
    if out_dir is not None:
        ckpt_root = Path(out_dir)
        ckpt_root.mkdir(parents=True, exist_ok=True)
        trace_path = ckpt_root / "trace.csv"
        if start_step == 0:
            with open(trace_path, "w", newline="") as fh:
                csv.writer(fh).writerow(["step", "loss", "lr", "phase"])

    last_checkpoint = None
    for step in range(start_step, total):
        phase = 1 if step < cfg.phase1_steps else 2
        lr = learning_rate(cfg, step)
        for group in opt.param_groups:
            group["lr"] = lr
        batch = _assemble_step_batch(dataset, cfg, step, phase)
        loss = _batch_loss(net, *batch)
        if not torch.isfinite(loss):
            where = f"step {step}"
            if last_checkpoint is not None:
                where += f"; last good checkpoint: {last_checkpoint}"
            raise FloatingPointError(f"non-finite training loss at {where}")
        opt.zero_grad()
        loss.backward()
        opt.step()

        if (step + 1) % log_interval == 0 or step + 1 == total:
            row = (step, float(loss.item()), lr, phase)
            trace.append(row)
            if trace_path is not None:
                with open(trace_path, "a", newline="") as fh:
                    csv.writer(fh).writerow([row[0], repr(row[1]), repr(row[2]), row[3]])
        done = step + 1
        if ckpt_root is not None and (
            done == total or (checkpoint_interval > 0 and done % checkpoint_interval == 0)
        ):
            last_checkpoint = ckpt_root / f"checkpoint-{done:07d}"
            _save_train_checkpoint(last_checkpoint, net, opt, done, phase)
            logger.info("checkpoint at step %d (loss %.5f)", done, float(loss.item()))
    return net, trace


def resume_training(
    checkpoint_dir: str | Path,
    dataset: Sequence[ModelSequence],
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    **kwargs,
) -> tuple[VelocityNet, list[tuple[int, float, float, int]]]:
    """Continue a run from a checkpoint directory written by :func:`train`."""
    net, metadata, optim_arrays = load_train_checkpoint(checkpoint_dir)
    return train(
        net,
        dataset,
        cfg,
        out_dir,
        start_step=int(metadata["step"]),
        optim_arrays=optim_arrays,
        optim_steps=int(metadata.get("optim_steps", metadata["step"])),
        **kwargs,
    )
