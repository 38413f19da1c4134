"""Dual-branch attention U-net for joint drift and concentration prediction.

Two structurally identical U-net branches (velocity, concentration) run
side by side over an 18-channel input stack. At each of the three encoder
levels and three decoder levels a weighting attention module (WAM) fuses
the two feature maps into a weighted shared map, refines all three maps
with channel attention then spatial attention, and returns a weighted
share back to each branch:

    share      = a_in_siv * xi_siv + a_in_sic * xi_sic
    out_siv    = attend(xi_siv) + a_out_siv * attend(share)
    out_sic    = attend(xi_sic) + a_out_sic * attend(share)

The four a_* are learnable scalars (init 0.5); attend() is one channel
attention MLP plus one spatial attention conv per WAM, shared by the
three streams (bias-free, following the CBAM design). Every conv in the
branches is 3x3 with same padding, tanh activation. The velocity head is
linear (normalized units); the concentration head is sigmoid-constrained
when ``sic_sigmoid`` is on (hard (0,1) output range), linear otherwise
(the unconstrained baseline).

Encoder skips carry the post-WAM features. The bottleneck (below encoder
level 3) has no WAM.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad

__all__ = [
    "ModelConfig",
    "CheckpointError",
    "param_spec",
    "n_params",
    "init_params",
    "param_tensors",
    "forward",
    "wam",
    "channel_attention",
    "spatial_attention",
    "save_checkpoint",
    "load_checkpoint",
    "default_spatial_kernel",
]

_MAGIC = b"ICEPINN1"


class CheckpointError(ValueError):
    """Corrupt checkpoint file or configuration mismatch on load."""


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 18
    base_channels: int = 8
    levels: int = 3  # fixed: six WAMs sit at 3 encoder + 3 decoder steps
    attention_reduction: int = 4
    spatial_kernel: int = 7
    sic_sigmoid: bool = True
    include_xy: bool = False

    def __post_init__(self):
        if self.levels != 3:
            raise ValueError(f"levels is fixed at 3, got {self.levels}")
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if self.base_channels < 1 or self.base_channels % self.attention_reduction:
            raise ValueError(
                f"base_channels ({self.base_channels}) must be a positive multiple "
                f"of attention_reduction ({self.attention_reduction})"
            )
        if self.spatial_kernel % 2 == 0:
            raise ValueError("spatial_kernel must be odd")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def default_spatial_kernel(height: int, width: int) -> int:
    """7x7 spatial-attention conv, falling back to 3x3 on tiny grids."""
    return 7 if min(height, width) >= 16 else 3


# ---------------------------------------------------------------------------
# Parameter layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    kind: str  # weight | bias | wam_scalar
    fan_in: int


def _level_channels(config: ModelConfig):
    c = config.base_channels
    return [c, 2 * c, 4 * c]


def param_spec(config: ModelConfig) -> list:
    """Ordered parameter manifest; a pure function of the config.

    The order is the initialization draw order and the checkpoint payload
    order, so it must stay stable.
    """
    specs = []

    def conv(name, cin, cout, k):
        specs.append(ParamSpec(f"{name}.w", (cout, cin, k, k), "weight", cin * k * k))
        specs.append(ParamSpec(f"{name}.b", (1, cout, 1, 1), "bias", 0))

    def upconv(name, cin, cout):
        specs.append(ParamSpec(f"{name}.w", (cin, cout, 2, 2), "weight", cin * 4))
        specs.append(ParamSpec(f"{name}.b", (1, cout, 1, 1), "bias", 0))

    chans = _level_channels(config)
    cin0 = config.in_channels + (2 if config.include_xy else 0)
    for branch in ("siv", "sic"):
        prev = cin0
        for lvl, c in enumerate(chans, start=1):
            conv(f"{branch}.enc{lvl}.conv1", prev, c, 3)
            conv(f"{branch}.enc{lvl}.conv2", c, c, 3)
            prev = c
        cbott = 2 * chans[-1]
        conv(f"{branch}.bott.conv1", chans[-1], cbott, 3)
        conv(f"{branch}.bott.conv2", cbott, cbott, 3)
        prev = cbott
        for lvl in (3, 2, 1):
            c = chans[lvl - 1]
            upconv(f"{branch}.dec{lvl}.up", prev, c)
            conv(f"{branch}.dec{lvl}.conv1", 2 * c, c, 3)
            conv(f"{branch}.dec{lvl}.conv2", c, c, 3)
            prev = c
        out_ch = 2 if branch == "siv" else 1
        conv(f"{branch}.head", chans[0], out_ch, 1)

    r = config.attention_reduction
    ks = config.spatial_kernel
    wam_channels = [("enc1", chans[0]), ("enc2", chans[1]), ("enc3", chans[2]),
                    ("dec3", chans[2]), ("dec2", chans[1]), ("dec1", chans[0])]
    for tag, c in wam_channels:
        for scal in ("a_in_siv", "a_in_sic", "a_out_siv", "a_out_sic"):
            specs.append(ParamSpec(f"wam.{tag}.{scal}", (1, 1, 1, 1), "wam_scalar", 0))
        specs.append(ParamSpec(f"wam.{tag}.ca.fc1.w", (1, 1, c // r, c), "weight", c))
        specs.append(ParamSpec(f"wam.{tag}.ca.fc2.w", (1, 1, c, c // r), "weight", c // r))
        specs.append(ParamSpec(f"wam.{tag}.sa.conv.w", (1, 2, ks, ks), "weight", 2 * ks * ks))
    return specs


def n_params(config: ModelConfig) -> int:
    return sum(int(np.prod(s.shape)) for s in param_spec(config))


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> dict:
    """Uniform fan-in-scaled weights, zero biases, WAM scalars at 0.5;
    deterministic under seed."""
    rng = np.random.default_rng(seed)
    params = {}
    for spec in param_spec(config):
        if spec.kind == "weight":
            bound = 1.0 / np.sqrt(spec.fan_in)
            arr = rng.uniform(-bound, bound, size=spec.shape)
        elif spec.kind == "bias":
            arr = np.zeros(spec.shape)
        else:  # wam_scalar
            arr = np.full(spec.shape, 0.5)
        params[spec.name] = arr.astype(dtype)
    return params


def param_tensors(params: dict, requires_grad: bool = True) -> dict:
    return {k: ad.Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def channel_attention(x: ad.Tensor, fc1_w: ad.Tensor, fc2_w: ad.Tensor) -> ad.Tensor:
    """Gate each channel by sigmoid(MLP(avgpool) + MLP(maxpool))."""

    def mlp(d):
        return ad.dense(ad.relu(ad.dense(d, fc1_w, None)), fc2_w, None)

    gate = ad.sigmoid(ad.add(mlp(ad.global_avgpool(x)), mlp(ad.global_maxpool(x))))
    return ad.broadcast_mul_channel(x, gate)


def spatial_attention(x: ad.Tensor, conv_w: ad.Tensor) -> ad.Tensor:
    """Gate each location by sigmoid(conv(concat(mean_c, max_c)))."""
    k = conv_w.shape[2]
    desc = ad.concat_channels((ad.channel_mean(x), ad.channel_max(x)))
    gate = ad.sigmoid(ad.conv2d(desc, conv_w, None, padding=(k - 1) // 2))
    return ad.broadcast_mul_spatial(x, gate)


def wam(xi_siv: ad.Tensor, xi_sic: ad.Tensor, wp: dict) -> tuple:
    """Weighting attention module: weighted fusion, shared attention,
    weighted return paths."""
    if xi_siv.shape != xi_sic.shape:
        raise ValueError(f"wam: branch shapes differ, {xi_siv.shape} vs {xi_sic.shape}")

    def attend(t):
        t = channel_attention(t, wp["ca.fc1.w"], wp["ca.fc2.w"])
        return spatial_attention(t, wp["sa.conv.w"])

    share = ad.add(ad.scalar_mul(xi_siv, wp["a_in_siv"]),
                   ad.scalar_mul(xi_sic, wp["a_in_sic"]))
    att_share = attend(share)
    out_siv = ad.add(attend(xi_siv), ad.scalar_mul(att_share, wp["a_out_siv"]))
    out_sic = ad.add(attend(xi_sic), ad.scalar_mul(att_share, wp["a_out_sic"]))
    return out_siv, out_sic


def _wam_params(pt: dict, tag: str) -> dict:
    prefix = f"wam.{tag}."
    return {k[len(prefix):]: v for k, v in pt.items() if k.startswith(prefix)}


def _conv_block(pt: dict, name: str, t: ad.Tensor) -> ad.Tensor:
    t = ad.tanh(ad.conv2d(t, pt[f"{name}.conv1.w"], pt[f"{name}.conv1.b"], padding=1))
    t = ad.tanh(ad.conv2d(t, pt[f"{name}.conv2.w"], pt[f"{name}.conv2.b"], padding=1))
    return t


def _coordinate_channels(B, H, W, dtype):
    ys = np.linspace(-1.0, 1.0, H, dtype=dtype)
    xs = np.linspace(-1.0, 1.0, W, dtype=dtype)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    grid = np.stack([xx, yy])[None].astype(dtype)
    return np.broadcast_to(grid, (B, 2, H, W)).copy()


def forward(config: ModelConfig, pt: dict, x: ad.Tensor) -> tuple:
    """Run both branches; returns (siv_pred (B,2,H,W), sic_pred (B,1,H,W)).

    siv_pred is in normalized units; sic_pred is a fraction, strictly in
    (0,1) when sic_sigmoid is on.
    """
    B, C, H, W = x.shape
    if C != config.in_channels:
        raise ValueError(f"input has {C} channels, config expects {config.in_channels}")
    if H % 8 or W % 8:
        raise ValueError(f"spatial dims must be divisible by 8, got {H}x{W}")
    if config.include_xy:
        x = ad.concat_channels((x, ad.Tensor(_coordinate_channels(B, H, W, x.data.dtype))))

    t_siv, t_sic = x, x
    skips = {}
    for lvl in (1, 2, 3):
        t_siv = _conv_block(pt, f"siv.enc{lvl}", t_siv)
        t_sic = _conv_block(pt, f"sic.enc{lvl}", t_sic)
        t_siv, t_sic = wam(t_siv, t_sic, _wam_params(pt, f"enc{lvl}"))
        skips[lvl] = (t_siv, t_sic)
        t_siv = ad.maxpool2(t_siv)
        t_sic = ad.maxpool2(t_sic)

    t_siv = _conv_block(pt, "siv.bott", t_siv)
    t_sic = _conv_block(pt, "sic.bott", t_sic)

    for lvl in (3, 2, 1):
        t_siv = ad.upconv2(t_siv, pt[f"siv.dec{lvl}.up.w"], pt[f"siv.dec{lvl}.up.b"])
        t_sic = ad.upconv2(t_sic, pt[f"sic.dec{lvl}.up.w"], pt[f"sic.dec{lvl}.up.b"])
        t_siv = ad.concat_channels((t_siv, skips[lvl][0]))
        t_sic = ad.concat_channels((t_sic, skips[lvl][1]))
        t_siv = _conv_block(pt, f"siv.dec{lvl}", t_siv)
        t_sic = _conv_block(pt, f"sic.dec{lvl}", t_sic)
        t_siv, t_sic = wam(t_siv, t_sic, _wam_params(pt, f"dec{lvl}"))

    siv = ad.conv2d(t_siv, pt["siv.head.w"], pt["siv.head.b"], padding=0)
    sic = ad.conv2d(t_sic, pt["sic.head.w"], pt["sic.head.b"], padding=0)
    if config.sic_sigmoid:
        sic = ad.sigmoid(sic)
    return siv, sic


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: dict, config: ModelConfig, path) -> None:
    """Single file: magic, u32 header length, JSON header, float32 payload."""
    specs = param_spec(config)
    manifest = []
    offset = 0
    chunks = []
    for spec in specs:
        arr = np.ascontiguousarray(params[spec.name], dtype=np.float32)
        if arr.shape != spec.shape:
            raise CheckpointError(
                f"parameter {spec.name} has shape {arr.shape}, expected {spec.shape}"
            )
        manifest.append({"name": spec.name, "shape": list(spec.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.astype("<f4").tobytes(order="C"))
    header = json.dumps(
        {"format": "icepinn-checkpoint", "version": 1,
         "config": config.to_dict(), "manifest": manifest}
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.uint32(len(header)).astype("<u4").tobytes())
        fh.write(header)
        fh.write(b"".join(chunks))


def load_checkpoint(path, expect_config: ModelConfig = None) -> tuple:
    """Returns (params, config); validates structure against the embedded
    config and optionally against expect_config."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(_MAGIC) + 4 or raw[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: not an icepinn checkpoint")
    hlen = int(np.frombuffer(raw[len(_MAGIC):len(_MAGIC) + 4], dtype="<u4")[0])
    hstart = len(_MAGIC) + 4
    if len(raw) < hstart + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[hstart:hstart + hlen].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        manifest = header["manifest"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})")
    if expect_config is not None and config != expect_config:
        raise CheckpointError(
            f"{path}: config mismatch (stored {config.to_dict()}, "
            f"expected {expect_config.to_dict()})"
        )
    specs = param_spec(config)
    if len(manifest) != len(specs):
        raise CheckpointError(f"{path}: manifest does not match config parameter layout")
    payload = raw[hstart + hlen:]
    params = {}
    offset_check = 0
    for spec, entry in zip(specs, manifest):
        if entry["name"] != spec.name or tuple(entry["shape"]) != spec.shape \
                or entry["offset"] != offset_check:
            raise CheckpointError(
                f"{path}: manifest entry {entry['name']} does not match layout "
                f"{spec.name}{spec.shape}"
            )
        size = int(np.prod(spec.shape))
        start = entry["offset"] * 4
        if start + size * 4 > len(payload):
            raise CheckpointError(f"{path}: truncated payload at {spec.name}")
        params[spec.name] = (
            np.frombuffer(payload[start:start + size * 4], dtype="<f4")
            .reshape(spec.shape)
            .astype(np.float32)
        )
        offset_check += size
    if len(payload) != offset_check * 4:
        raise CheckpointError(
            f"{path}: payload is {len(payload)} bytes, expected {offset_check * 4}"
        )
    return params, config
