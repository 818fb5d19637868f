"""Transformer velocity network over pitch-contour frames.

The network maps a noisy normalized pitch sequence ``x_t``, a flow time ``t``,
and three per-frame conditions (note classes ``y``, visible context ``x_ctx``,
unvoiced flags ``u``) to one velocity value per frame.  Each condition can be
dropped, in which case a learned null embedding stands in for it; this is what
classifier-free guidance trains against.

Architecture, per frame: the four inputs are embedded (two linear projections,
two lookup tables), concatenated channel-wise, and projected to the hidden
width.  A stack of pre-norm transformer blocks with rotary position encoding
follows, each modulated by the time embedding through zero-initialized
scale/shift/gate maps (adaLN), so the freshly initialized network is
near-identity along the residual stream.  A final modulated norm and a linear
head produce the velocity.

Checkpoints are a directory of three files: ``config.json`` (model config plus
caller metadata), ``weights.bin`` (raw little-endian float32, all parameters
concatenated in sorted name order), and ``weights.index.json`` mapping each
parameter name to its byte offset and shape.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

logger = logging.getLogger(__name__)

#: Width of the sinusoidal feature vector fed to the time MLP.
TIME_FREQ_DIM = 256

#: Flow times live in [0, 1]; they are scaled by this factor before the
#: sinusoidal encoding so the feature frequencies cover a useful range.
TIME_EMBED_SCALE = 1000.0

#: Hidden expansion factor of the per-block MLP.
MLP_RATIO = 4

#: Note-class table index standing for "no score information" (the table has
#: one row past the REST class for it).
NULL_NOTE_INDEX = 73

#: Unvoiced-flag table index standing for "no voicing information".
NULL_UNVOICED_INDEX = 2


@dataclass(frozen=True)
class ModelConfig:
    """Size hyperparameters of the velocity network."""

    n_layers: int = 8
    n_heads: int = 8
    hidden: int = 512
    pitch_embed: int = 512
    note_embed: int = 256
    unvoiced_embed: int = 64
    n_note_classes: int = 73
    max_len: int = 1024
    rope_base: float = 10000.0

    def __post_init__(self) -> None:
        for name in (
            "n_layers",
            "n_heads",
            "hidden",
            "pitch_embed",
            "note_embed",
            "unvoiced_embed",
            "n_note_classes",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.hidden % self.n_heads != 0:
            raise ValueError(
                f"hidden ({self.hidden}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.max_len < 1:
            raise ValueError("max_len must be at least 1")
        if self.rope_base <= 1.0:
            raise ValueError("rope_base must exceed 1")


@dataclass(frozen=True)
class DropFlags:
    """Which conditions to replace with their null embeddings.

    Each flag is either a plain bool applied to the whole batch or a boolean
    tensor of shape (batch,) for per-example dropping.
    """

    drop_y: bool | torch.Tensor = False
    drop_ctx: bool | torch.Tensor = False
    drop_u: bool | torch.Tensor = False


#: Every condition dropped: the unconditional branch of guidance.
ALL_DROPPED = DropFlags(drop_y=True, drop_ctx=True, drop_u=True)


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count for a config, summed shape by shape."""
    h = cfg.hidden
    h1 = cfg.pitch_embed
    h2 = cfg.note_embed
    hu = cfg.unvoiced_embed
    total = 2 * (h1 + h1)  # x_t and x_ctx projections (weight + bias each)
    total += (cfg.n_note_classes + 1) * h2  # note table, null row included
    total += 3 * hu  # unvoiced table: 0, 1, null
    total += h1  # null context vector
    cat = 2 * h1 + h2 + hu
    total += cat * h + h  # input projection
    total += TIME_FREQ_DIM * h + h + h * h + h  # two-layer time MLP
    per_block = (
        (h * 6 * h + 6 * h)  # adaLN modulation
        + (h * 3 * h + 3 * h)  # qkv
        + (h * h + h)  # attention output
        + (h * MLP_RATIO * h + MLP_RATIO * h)  # mlp in
        + (MLP_RATIO * h * h + h)  # mlp out
    )
    total += cfg.n_layers * per_block
    total += h * 2 * h + 2 * h  # final modulation
    total += h + 1  # velocity head
    return total


def _trunc_normal_(tensor: torch.Tensor, std: float, generator: torch.Generator) -> None:
    """In-place truncated normal (mean 0, cut at +-2 std) via inverse CDF."""
    lo = 0.5 * (1.0 + math.erf(-2.0 / math.sqrt(2.0)))
    hi = 0.5 * (1.0 + math.erf(2.0 / math.sqrt(2.0)))
    tensor.uniform_(2.0 * lo - 1.0, 2.0 * hi - 1.0, generator=generator)
    tensor.erfinv_()
    tensor.mul_(std * math.sqrt(2.0))


def _modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1.0 + scale.unsqueeze(1)) + shift.unsqueeze(1)


def _apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate head-dim halves of (batch, heads, frames, head_dim) by position."""
    x1, x2 = x.chunk(2, dim=-1)
    return torch.cat([x1 * cos - x2 * sin, x2 * cos + x1 * sin], dim=-1)


class _Block(nn.Module):
    """Pre-norm attention + MLP block, gated and modulated by the time vector."""

    def __init__(self, hidden: int, n_heads: int) -> None:
        super().__init__()
        self.n_heads = n_heads
        self.norm1 = nn.LayerNorm(hidden, elementwise_affine=False)
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.attn_out = nn.Linear(hidden, hidden)
        self.norm2 = nn.LayerNorm(hidden, elementwise_affine=False)
        self.mlp_in = nn.Linear(hidden, MLP_RATIO * hidden)
        self.mlp_out = nn.Linear(MLP_RATIO * hidden, hidden)
        self.modulation = nn.Linear(hidden, 6 * hidden)

    def forward(
        self, h: torch.Tensor, c: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor
    ) -> torch.Tensor:
        mods = self.modulation(F.silu(c))
        shift_a, scale_a, gate_a, shift_m, scale_m, gate_m = mods.chunk(6, dim=-1)

        a = _modulate(self.norm1(h), shift_a, scale_a)
        b, n, width = a.shape
        head_dim = width // self.n_heads
        qkv = self.qkv(a).view(b, n, 3, self.n_heads, head_dim).permute(2, 0, 3, 1, 4)
        q = _apply_rope(qkv[0], cos, sin)
        k = _apply_rope(qkv[1], cos, sin)
        attended = F.scaled_dot_product_attention(q, k, qkv[2])
        attended = attended.transpose(1, 2).reshape(b, n, width)
        h = h + gate_a.unsqueeze(1) * self.attn_out(attended)

        m = _modulate(self.norm2(h), shift_m, scale_m)
        h = h + gate_m.unsqueeze(1) * self.mlp_out(F.gelu(self.mlp_in(m)))
        return h


class VelocityNet(nn.Module):
    """Velocity field over frames, conditioned on score, context, and voicing.

    Inputs and outputs are torch tensors; callers working in numpy convert at
    the boundary.  Accepts either (frames,) sequences or (batch, frames)
    batches; the output matches the input's shape.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0) -> None:
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden
        self.x_proj = nn.Linear(1, cfg.pitch_embed)
        self.ctx_proj = nn.Linear(1, cfg.pitch_embed)
        self.y_embed = nn.Embedding(cfg.n_note_classes + 1, cfg.note_embed)
        self.u_embed = nn.Embedding(3, cfg.unvoiced_embed)
        self.null_ctx = nn.Parameter(torch.empty(cfg.pitch_embed))
        concat = 2 * cfg.pitch_embed + cfg.note_embed + cfg.unvoiced_embed
        self.in_proj = nn.Linear(concat, h)
        self.time_in = nn.Linear(TIME_FREQ_DIM, h)
        self.time_out = nn.Linear(h, h)
        self.blocks = nn.ModuleList(
            _Block(h, cfg.n_heads) for _ in range(cfg.n_layers)
        )
        self.final_norm = nn.LayerNorm(h, elementwise_affine=False)
        self.final_mod = nn.Linear(h, 2 * h)
        self.head = nn.Linear(h, 1)
        self.reset_parameters(seed)
        logger.debug(
            "velocity net built: %d parameters", sum(p.numel() for p in self.parameters())
        )

    def reset_parameters(self, seed: int) -> None:
        """Deterministic init: truncated normal weights, zero biases, zero modulation."""
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for name, p in self.named_parameters():
                if (
                    name.endswith(".bias")
                    or ".modulation." in name
                    or name.startswith("final_mod.")
                ):
                    p.zero_()
                else:
                    _trunc_normal_(p, 0.02, gen)

    def _time_vector(self, t: torch.Tensor) -> torch.Tensor:
        half = TIME_FREQ_DIM // 2
        exponent = torch.arange(half, dtype=t.dtype, device=t.device) / half
        freqs = torch.exp(-math.log(10000.0) * exponent)
        args = t.unsqueeze(-1) * TIME_EMBED_SCALE * freqs
        feats = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
        return self.time_out(F.silu(self.time_in(feats)))

    def _rope_tables(self, n: int, dtype: torch.dtype, device) -> tuple[torch.Tensor, torch.Tensor]:
        head_dim = self.cfg.hidden // self.cfg.n_heads
        idx = torch.arange(0, head_dim, 2, dtype=dtype, device=device) / head_dim
        inv_freq = self.cfg.rope_base ** (-idx)
        angles = torch.arange(n, dtype=dtype, device=device).unsqueeze(1) * inv_freq
        return angles.cos()[None, None], angles.sin()[None, None]

    @staticmethod
    def _substitute(
        emb: torch.Tensor, null: torch.Tensor, flag: bool | torch.Tensor
    ) -> torch.Tensor:
        if torch.is_tensor(flag):
            return torch.where(flag.view(-1, 1, 1), null, emb)
        if flag:
            return null.expand_as(emb).to(emb.dtype)
        return emb

    def forward(
        self,
        x_t: torch.Tensor,
        t: torch.Tensor | float,
        y: torch.Tensor,
        x_ctx: torch.Tensor,
        u: torch.Tensor,
        flags: DropFlags = DropFlags(),
    ) -> torch.Tensor:
        squeeze = x_t.ndim == 1
        if squeeze:
            x_t, y, x_ctx, u = (a.unsqueeze(0) for a in (x_t, y, x_ctx, u))
        shapes = {tuple(a.shape) for a in (x_t, y, x_ctx, u)}
        if len(shapes) != 1:
            raise ValueError(f"input sequences disagree in shape: {sorted(shapes)}")
        batch, n = x_t.shape
        if n > self.cfg.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.cfg.max_len}")

        dtype = self.in_proj.weight.dtype
        device = self.in_proj.weight.device
        x_t = x_t.to(dtype)
        x_ctx = x_ctx.to(dtype)
        t = torch.as_tensor(t, dtype=dtype, device=device)
        if t.ndim == 0:
            t = t.expand(batch)

        y = y.long()
        u = u.long()
        if torch.is_tensor(flags.drop_y):
            y = torch.where(flags.drop_y.view(-1, 1), torch.as_tensor(NULL_NOTE_INDEX), y)
        elif flags.drop_y:
            y = torch.full_like(y, NULL_NOTE_INDEX)
        if torch.is_tensor(flags.drop_u):
            u = torch.where(
                flags.drop_u.view(-1, 1), torch.as_tensor(NULL_UNVOICED_INDEX), u
            )
        elif flags.drop_u:
            u = torch.full_like(u, NULL_UNVOICED_INDEX)

        h_x = self.x_proj(x_t.unsqueeze(-1))
        h_ctx = self._substitute(
            self.ctx_proj(x_ctx.unsqueeze(-1)), self.null_ctx, flags.drop_ctx
        )
        h = torch.cat([h_x, h_ctx, self.y_embed(y), self.u_embed(u)], dim=-1)
        h = self.in_proj(h)

        c = self._time_vector(t)
        cos, sin = self._rope_tables(n, dtype, device)
        for block in self.blocks:
            h = block(h, c, cos, sin)

        shift, scale = self.final_mod(F.silu(c)).chunk(2, dim=-1)
        h = _modulate(self.final_norm(h), shift, scale)
        v = self.head(h).squeeze(-1)
        return v.squeeze(0) if squeeze else v


def write_named_arrays(directory: str | Path, stem: str, arrays: dict[str, np.ndarray]) -> None:
    """Write float32 arrays as ``<stem>.bin`` plus a ``<stem>.index.json``.

    The blob holds each array's raw little-endian float32 bytes, concatenated
    in sorted name order; the index records byte offsets and shapes.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(directory / f"{stem}.bin", "wb") as fh:
        for name in sorted(arrays):
            data = np.ascontiguousarray(arrays[name], dtype="<f4")
            fh.write(data.tobytes())
            entries.append({"name": name, "offset": offset, "shape": list(data.shape)})
            offset += data.nbytes
    index = {"dtype": "<f4", "entries": entries}
    with open(directory / f"{stem}.index.json", "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_named_arrays(directory: str | Path, stem: str) -> dict[str, np.ndarray]:
    """Read back a blob written by :func:`write_named_arrays`."""
    directory = Path(directory)
    with open(directory / f"{stem}.index.json") as fh:
        index = json.load(fh)
    if index.get("dtype") != "<f4":
        raise ValueError(f"unsupported weight dtype {index.get('dtype')!r}")
    raw = (directory / f"{stem}.bin").read_bytes()
    out: dict[str, np.ndarray] = {}
    end = 0
    for entry in index["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(raw):
            raise ValueError(f"weight blob truncated at entry {entry['name']!r}")
        out[entry["name"]] = np.frombuffer(raw[start:end], dtype="<f4").reshape(shape).copy()
    if end != len(raw):
        raise ValueError("weight blob has trailing bytes not covered by the index")
    return out


def save_checkpoint(
    directory: str | Path, net: VelocityNet, metadata: dict | None = None
) -> None:
    """Write a checkpoint directory: config.json, weights.bin, weights.index.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = {"model": asdict(net.cfg), "metadata": metadata or {}}
    with open(directory / "config.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    arrays = {k: v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    write_named_arrays(directory, "weights", arrays)


def load_checkpoint(directory: str | Path) -> tuple[VelocityNet, dict]:
    """Rebuild a network from a checkpoint directory; returns (net, metadata)."""
    directory = Path(directory)
    with open(directory / "config.json") as fh:
        payload = json.load(fh)
    cfg = ModelConfig(**payload["model"])
    net = VelocityNet(cfg, seed=0)
    arrays = read_named_arrays(directory, "weights")
    expected = set(net.state_dict())
    if set(arrays) != expected:
        missing = sorted(expected - set(arrays))
        extra = sorted(set(arrays) - expected)
        raise ValueError(f"checkpoint names mismatch: missing={missing} extra={extra}")
    net.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    return net, payload.get("metadata", {})
