"""1D U-Net noise predictor with sinusoidal timestep conditioning."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

KERNEL = 3


@dataclass(frozen=True)
class UNetConfig:
    base_channels: int = 16
    channel_mults: tuple[int, ...] = (1, 2, 4)
    res_blocks_per_level: int = 1
    groups: int = 8
    time_embed_dim: int = 128
    input_channels: int = 1
    grid_length: int = 168

    def __post_init__(self):
        object.__setattr__(self, "channel_mults", tuple(int(m) for m in self.channel_mults))
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")
        if self.base_channels % self.groups:
            raise ValueError(f"base_channels={self.base_channels} not divisible by groups={self.groups}")
        if self.grid_length % self.length_divisor:
            raise ValueError(
                f"grid_length={self.grid_length} must be divisible by {self.length_divisor} "
                f"for {len(self.channel_mults)} resolution levels"
            )
        if self.input_channels != 1:
            raise ValueError("only single-channel series are supported")

    @property
    def length_divisor(self) -> int:
        return 2 ** (len(self.channel_mults) - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_mults"] = list(self.channel_mults)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> UNetConfig:
        d = dict(d)
        if "channel_mults" in d:
            d["channel_mults"] = tuple(d["channel_mults"])
        return cls(**d)


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding, interleaved: [sin(t w_0), cos(t w_0), sin(t w_1), ...].

    ``t`` may be a scalar (returns [dim]) or a 1-d array (returns [len(t), dim]).
    """
    if dim % 2:
        raise ValueError(f"embedding dimension must be even, got {dim}")
    freqs = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    args = np.multiply.outer(np.asarray(t, dtype=np.float64), freqs)
    out = np.empty(args.shape[:-1] + (dim,))
    out[..., 0::2] = np.sin(args)
    out[..., 1::2] = np.cos(args)
    return out


# ---------------------------------------------------------------------------
# architecture description


def _res_block_shapes(prefix: str, c_in: int, c_out: int, temb: int) -> list[tuple[str, tuple[int, ...]]]:
    shapes = [
        (f"{prefix}.norm1.gamma", (c_in,)),
        (f"{prefix}.norm1.beta", (c_in,)),
        (f"{prefix}.conv1.w", (c_out, c_in, KERNEL)),
        (f"{prefix}.conv1.b", (c_out,)),
        (f"{prefix}.temb.w", (c_out, temb)),
        (f"{prefix}.temb.b", (c_out,)),
        (f"{prefix}.norm2.gamma", (c_out,)),
        (f"{prefix}.norm2.beta", (c_out,)),
        (f"{prefix}.conv2.w", (c_out, c_out, KERNEL)),
        (f"{prefix}.conv2.b", (c_out,)),
    ]
    if c_in != c_out:
        shapes += [(f"{prefix}.skip.w", (c_out, c_in, 1)), (f"{prefix}.skip.b", (c_out,))]
    return shapes


def _plan(cfg: UNetConfig):
    """Yield (name, shape) for every parameter and the block wiring."""
    temb = cfg.time_embed_dim
    shapes = [
        ("time.fc1.w", (temb, temb)),
        ("time.fc1.b", (temb,)),
        ("time.fc2.w", (temb, temb)),
        ("time.fc2.b", (temb,)),
        ("in_conv.w", (cfg.base_channels, cfg.input_channels, KERNEL)),
        ("in_conv.b", (cfg.base_channels,)),
    ]
    down, up = [], []
    ch = cfg.base_channels
    skip_ch = []
    n_levels = len(cfg.channel_mults)
    for i, mult in enumerate(cfg.channel_mults):
        out_ch = cfg.base_channels * mult
        blocks = []
        for j in range(cfg.res_blocks_per_level):
            name = f"down{i}.res{j}"
            shapes += _res_block_shapes(name, ch, out_ch, temb)
            blocks.append(name)
            ch = out_ch
        skip_ch.append(ch)
        has_down = i < n_levels - 1
        if has_down:
            shapes += [(f"down{i}.downsample.w", (ch, ch, KERNEL)), (f"down{i}.downsample.b", (ch,))]
        down.append((blocks, has_down))
    mid = []
    for j in range(2):
        name = f"mid.res{j}"
        shapes += _res_block_shapes(name, ch, ch, temb)
        mid.append(name)
    for i in reversed(range(n_levels)):
        out_ch = cfg.base_channels * cfg.channel_mults[i]
        blocks = []
        c_in = ch + skip_ch[i]
        for j in range(cfg.res_blocks_per_level):
            name = f"up{i}.res{j}"
            shapes += _res_block_shapes(name, c_in, out_ch, temb)
            blocks.append(name)
            c_in = out_ch
        ch = out_ch
        has_up = i > 0
        if has_up:
            shapes += [(f"up{i}.upsample.w", (ch, ch, KERNEL)), (f"up{i}.upsample.b", (ch,))]
        up.append((i, blocks, has_up))
    shapes += [
        ("out_norm.gamma", (ch,)),
        ("out_norm.beta", (ch,)),
        ("out_conv.w", (cfg.input_channels, ch, KERNEL)),
        ("out_conv.b", (cfg.input_channels,)),
    ]
    return shapes, down, mid, up


def parameter_shapes(cfg: UNetConfig) -> dict[str, tuple[int, ...]]:
    return dict(_plan(cfg)[0])


def init_params(cfg: UNetConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Normal(0, 1/fan_in) weights, zero biases, unit norm scales, zeroed output conv."""
    params = {}
    for name, shape in _plan(cfg)[0]:
        if name.endswith(".gamma"):
            data = np.ones(shape)
        elif name.endswith((".b", ".beta")) or name.startswith("out_conv."):
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            data = rng.standard_normal(shape) / np.sqrt(fan_in)
        params[name] = Tensor(data, requires_grad=True)
    return params


class UNet:
    """Callable noise predictor ``eps_hat = net(x_t, t)`` over [B, 1, L] inputs."""

    def __init__(self, config: UNetConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.config = config
        self._shapes, self._down, self._mid, self._up = _plan(config)
        self.params = params if params is not None else init_params(config, np.random.default_rng(seed))
        expected = dict(self._shapes)
        if set(self.params) != set(expected):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ValueError(f"parameter set mismatch: missing={missing[:5]} extra={extra[:5]}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def parameters(self) -> list[Tensor]:
        return [self.params[name] for name, _ in self._shapes]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def _res_block(self, prefix: str, x: Tensor, temb: Tensor) -> Tensor:
        p = self.params
        g = self.config.groups
        h = ad.silu(ad.group_norm(x, g, p[f"{prefix}.norm1.gamma"], p[f"{prefix}.norm1.beta"]))
        h = ad.conv1d(h, p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"], padding=1)
        proj = ad.linear(temb, p[f"{prefix}.temb.w"], p[f"{prefix}.temb.b"])
        h = h + proj.reshape(proj.shape[0], proj.shape[1], 1)
        h = ad.silu(ad.group_norm(h, g, p[f"{prefix}.norm2.gamma"], p[f"{prefix}.norm2.beta"]))
        h = ad.conv1d(h, p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"], padding=1)
        if f"{prefix}.skip.w" in p:
            x = ad.conv1d(x, p[f"{prefix}.skip.w"], p[f"{prefix}.skip.b"])
        return x + h

    def __call__(self, x: Tensor, t) -> Tensor:
        x = ad.as_tensor(x)
        cfg = self.config
        if x.data.ndim != 3 or x.shape[1] != cfg.input_channels or x.shape[2] % cfg.length_divisor:
            raise ad.ShapeError(
                f"input shape {x.shape} incompatible with U-Net (channels={cfg.input_channels}, "
                f"length divisible by {cfg.length_divisor})"
            )
        if x.shape[2] != cfg.grid_length:
            raise ad.ShapeError(f"input length {x.shape[2]} does not match configured grid_length {cfg.grid_length}")
        B = x.shape[0]
        t = np.broadcast_to(np.asarray(t), (B,))
        p = self.params

        temb = Tensor(time_embedding(t, cfg.time_embed_dim))
        temb = ad.silu(ad.linear(temb, p["time.fc1.w"], p["time.fc1.b"]))
        temb = ad.linear(temb, p["time.fc2.w"], p["time.fc2.b"])
        temb = ad.silu(temb)

        h = ad.conv1d(x, p["in_conv.w"], p["in_conv.b"], padding=1)
        skips = []
        for i, (blocks, has_down) in enumerate(self._down):
            for name in blocks:
                h = self._res_block(name, h, temb)
            skips.append(h)
            if has_down:
                h = ad.conv1d(h, p[f"down{i}.downsample.w"], p[f"down{i}.downsample.b"], stride=2, padding=1)
        for name in self._mid:
            h = self._res_block(name, h, temb)
        for i, blocks, has_up in self._up:
            skip = skips[i]
            assert skip.shape[2] == h.shape[2], f"skip length mismatch at level {i}"
            h = ad.concat([h, skip], axis=1)
            for name in blocks:
                h = self._res_block(name, h, temb)
            if has_up:
                h = ad.upsample_nearest2(h)
                h = ad.conv1d(h, p[f"up{i}.upsample.w"], p[f"up{i}.upsample.b"], padding=1)
        h = ad.silu(ad.group_norm(h, cfg.groups, p["out_norm.gamma"], p["out_norm.beta"]))
        return ad.conv1d(h, p["out_conv.w"], p["out_conv.b"], padding=1)
