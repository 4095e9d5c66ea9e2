"""Toy 3-D encoder-decoder with asymmetric attention blocks.

Per encoder level: conv -> norm -> ReLU -> attention -> conv -> norm -> ReLU,
then 2x max-pool.  Per decoder level: nearest 2x upsample, 1x1x1 channel
reduction, concatenation with the (attended) skip, then the same two-conv
stage.  The head is a 1x1x1 conv to three region logits (WT, TC, ET).
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .attention import BLOCK_KINDS, COARSE_KINDS, AttentionBlock, make_block
from .autodiff import Tensor
from .layers import Conv3d, Module

N_REGIONS = 3
CHECKPOINT_MAGIC = b"CNET1"


def default_placement(levels: int) -> dict[str, str]:
    """CASPIAN++ on encoder levels 2..L, CASPIAN everywhere else, none at the bottleneck."""
    placement = {"bottleneck": "none"}
    for lvl in range(1, levels + 1):
        placement[f"enc{lvl}"] = "caspian" if lvl == 1 else "caspian_pp"
        placement[f"skip{lvl}"] = "caspian"
        placement[f"dec{lvl}"] = "caspian"
    return placement


def variant_placement(levels: int, variant: str) -> dict[str, str]:
    """Placement for an ablation variant.

    ``none``/``se``/``saam_only``/``saam_caam``/``caspian``/``caspian_mp`` are
    used at every site; the multiscale kinds sit on encoder levels 2..L with
    CASPIAN elsewhere, mirroring the default layout.
    """
    aliases = {
        "baseline": "none",
        "saam+caam": "saam_caam",
        "caspian+multiplanar": "caspian_mp",
        "caspian+multiscale": "caspian_ms",
    }
    kind = aliases.get(variant, variant)
    if kind not in BLOCK_KINDS:
        raise ValueError(f"unknown variant {variant!r}")
    placement = {"bottleneck": "none"}
    for lvl in range(1, levels + 1):
        if kind in COARSE_KINDS:
            placement[f"enc{lvl}"] = "caspian" if lvl == 1 else kind
            placement[f"skip{lvl}"] = "caspian"
            placement[f"dec{lvl}"] = "caspian"
        else:
            for site in ("enc", "skip", "dec"):
                placement[f"{site}{lvl}"] = kind
    return placement


@dataclass
class NetConfig:
    levels: int = 3
    base_channels: int = 8
    in_channels: int = 4
    crop: int = 32
    placement: dict[str, str] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.placement is None:
            self.placement = default_placement(self.levels)
        else:
            full = {"bottleneck": "none"}
            full.update({f"{s}{l}": "none" for l in range(1, self.levels + 1) for s in ("enc", "skip", "dec")})
            full.update(self.placement)
            self.placement = full
        self.validate()

    def validate(self) -> None:
        if self.levels < 2:
            raise ValueError("levels must be >= 2")
        if self.base_channels < 1 or self.in_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.crop % (2**self.levels) != 0:
            raise ValueError(f"crop {self.crop} must be divisible by 2**levels = {2**self.levels}")
        if self.placement.get("bottleneck", "none") != "none":
            raise ValueError("the bottleneck carries no attention")
        valid_sites = {"bottleneck"} | {
            f"{s}{l}" for l in range(1, self.levels + 1) for s in ("enc", "skip", "dec")
        }
        for site, kind in self.placement.items():
            if site not in valid_sites:
                raise ValueError(f"unknown placement site {site!r}")
            if kind not in BLOCK_KINDS:
                raise ValueError(f"unknown attention kind {kind!r} at {site}")
            if kind in COARSE_KINDS and (not site.startswith("enc") or site == "enc1"):
                raise ValueError(
                    f"{kind} at {site} rejected: multiscale attention needs a finer encoder level "
                    "(allowed on enc2..encL only)"
                )

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** (level - 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> NetConfig:
        return cls(**d)


class _Stage(Module):
    """Two conv3d + norm + ReLU with an attention block between them."""

    def __init__(self, in_ch: int, out_ch: int, attn: AttentionBlock, rng):
        super().__init__()
        self.conv_a = Conv3d(in_ch, out_ch, 3, rng)
        self.attn = attn
        self.conv_b = Conv3d(out_ch, out_ch, 3, rng)

    def forward(self, x: Tensor, x_s0: Tensor | None = None) -> Tensor:
        x = ad.relu(ad.instance_norm(self.conv_a(x)))
        x = self.attn(x, x_s0)
        return ad.relu(ad.instance_norm(self.conv_b(x)))


class Model(Module):
    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        cfg = config
        L = cfg.levels
        for lvl in range(1, L + 1):
            in_ch = cfg.in_channels if lvl == 1 else cfg.channels(lvl - 1)
            coarse = cfg.channels(lvl - 1) if lvl > 1 else None
            attn = make_block(cfg.placement[f"enc{lvl}"], cfg.channels(lvl), rng, coarse)
            setattr(self, f"enc{lvl}", _Stage(in_ch, cfg.channels(lvl), attn, rng))
        bott = cfg.channels(L + 1)
        self.bottleneck = _Stage(cfg.channels(L), bott, AttentionBlock(), rng)
        for lvl in range(L, 0, -1):
            c = cfg.channels(lvl)
            setattr(self, f"up{lvl}", Conv3d(cfg.channels(lvl + 1), c, 1, rng))
            setattr(self, f"skip{lvl}", make_block(cfg.placement[f"skip{lvl}"], c, rng))
            attn = make_block(cfg.placement[f"dec{lvl}"], c, rng)
            setattr(self, f"dec{lvl}", _Stage(2 * c, c, attn, rng))
        self.head = Conv3d(cfg.channels(1), N_REGIONS, 1, rng)

    def forward(
        self,
        x: Tensor,
        training: bool = False,
        dropout_rate: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        cfg = self.config
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float64))
        s = cfg.crop
        if x.ndim != 5 or x.shape[1] != cfg.in_channels or x.shape[2:] != (s, s, s):
            raise ValueError(f"expected input [N,{cfg.in_channels},{s},{s},{s}], got {x.shape}")
        skips = []
        h = x
        prev = None
        for lvl in range(1, cfg.levels + 1):
            h = getattr(self, f"enc{lvl}")(h, prev)
            skips.append(h)
            prev = h
            h = ad.maxpool3d(h, 2, 2)
        h = self.bottleneck(h)
        h = ad.dropout(h, dropout_rate, rng, training)
        for lvl in range(cfg.levels, 0, -1):
            up = getattr(self, f"up{lvl}")(ad.upsample_nearest(h, 2))
            skip = getattr(self, f"skip{lvl}")(skips[lvl - 1])
            h = getattr(self, f"dec{lvl}")(ad.concat([up, skip], axis=1))
        h = ad.dropout(h, dropout_rate, rng, training)
        return self.head(h)

    def attention_blocks(self) -> dict[str, AttentionBlock]:
        out = {}
        for name, mod in self.modules():
            if isinstance(mod, AttentionBlock) and mod.kind != "none":
                out[name.replace(".attn", "")] = mod
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def model_id(self) -> str:
        return hashlib.sha256(checkpoint_bytes(self)).hexdigest()[:16]


def build(config: NetConfig) -> Model:
    return Model(config)


def forward(
    model: Model,
    x,
    training: bool = False,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    return model.forward(x, training=training, dropout_rate=dropout_rate, rng=rng)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


def poly_lr(epoch: float, total_epochs: float, base: float = 1e-3) -> float:
    """``base * (1 - (e/E)**0.9)``."""
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    if epoch < 0 or epoch > total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return base * (1.0 - (epoch / total_epochs) ** 0.9)


class SGD:
    """Momentum SGD: ``v <- momentum*v + grad; p <- p - lr*v``."""

    def __init__(self, params: list[Tensor], momentum: float = 0.9):
        self.params = params
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float) -> None:
        for p in self.params:
            if p.grad is None:
                raise RuntimeError("sgd_step: missing gradients; call backward first")
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad
            p.data -= lr * v
            p.grad = None


class Adam:
    def __init__(self, params: list[Tensor], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float) -> None:
        for p in self.params:
            if p.grad is None:
                raise RuntimeError("adam step: missing gradients; call backward first")
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad * p.grad
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None


def make_optimizer(model: Model, name: str = "sgd", momentum: float = 0.9):
    if name == "sgd":
        return SGD(model.parameters(), momentum)
    if name == "adam":
        return Adam(model.parameters())
    raise ValueError(f"unknown optimizer {name!r}")


def sgd_step(model: Model, lr: float, momentum: float = 0.9) -> None:
    """One momentum-SGD update using gradients left by ``backward``.

    Velocity buffers live on the model so repeated calls accumulate momentum.
    """
    opt = getattr(model, "_sgd", None)
    if opt is None or opt.momentum != momentum:
        opt = SGD(model.parameters(), momentum)
        object.__setattr__(model, "_sgd", opt)
    opt.step(lr)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------
# layout (little-endian):
#   b"CNET1" | u32 config_len | config JSON (UTF-8, sorted keys)
#   u32 n_tensors | per tensor: u32 name_len, name, u32 rank, u32 extents[rank], f64 values


def checkpoint_bytes(model: Model) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    named = list(model.named_parameters())
    buf.write(struct.pack("<I", len(named)))
    for name, p in named:
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", p.ndim))
        buf.write(struct.pack(f"<{p.ndim}I", *p.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


class _Reader:
    def __init__(self, raw: bytes):
        self.buf = memoryview(raw)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ValueError("checkpoint truncated")
        out = bytes(self.buf[self.pos : self.pos + n])
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def model_from_bytes(raw: bytes) -> Model:
    r = _Reader(raw)
    if r.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint: bad magic")
    cfg = json.loads(r.take(r.u32()).decode("utf-8"))
    model = Model(NetConfig.from_dict(cfg))
    params = dict(model.named_parameters())
    count = r.u32()
    if count != len(params):
        raise ValueError(f"checkpoint has {count} tensors, config implies {len(params)}")
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        vals = np.frombuffer(r.take(8 * int(np.prod(shape))), dtype="<f8")
        if name not in params or params[name].shape != tuple(shape):
            raise ValueError(f"checkpoint tensor {name!r} {shape} does not match the model")
        params[name].data[...] = vals.reshape(shape)
    if r.pos != len(raw):
        raise ValueError("trailing bytes after checkpoint payload")
    return model


def load_checkpoint(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())


def clone(model: Model) -> Model:
    return model_from_bytes(checkpoint_bytes(model))
