"""Asymmetric channel/spatial attention (CASPIAN, CASPIAN++) and an SE baseline.

All tensors are laid out ``[N, C, H, W, D]``.  The three anatomical planes
select the flip axis: sagittal flips H, coronal flips W, axial flips D.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Module, param, uniform_fan_in

SAGITTAL, CORONAL, AXIAL = 1, 2, 3
PLANES = (SAGITTAL, CORONAL, AXIAL)
DEFAULT_EPS = 1e-8
SPATIAL_HIDDEN = 4


def plane_axis(plane: int) -> int:
    if plane not in PLANES:
        raise ValueError(f"plane must be one of {PLANES}, got {plane!r}")
    return plane + 1


def _check_volume(t: Tensor, name: str = "input") -> None:
    if t.ndim != 5:
        raise ValueError(f"{name} must be [N,C,H,W,D], got shape {t.shape}")


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------


def saam(u: Tensor, plane: int = SAGITTAL, eps: float = DEFAULT_EPS) -> Tensor:
    """Spatial asymmetry mask ``[N,1,H,W,D]``.

    Per voxel, the cosine between the channel vector and the channel vector
    of the mirrored voxel, mapped from [-1, 1] to [0, 1] as ``(1 - cos) / 2``.
    Norms are floored at ``eps``.
    """
    _check_volume(u)
    axis = plane_axis(plane)
    dot = ad.reduce_sum(u * ad.flip(u, axis), 1, keep_dims=True)
    norm = ad.sqrt(ad.clamp_min(ad.reduce_sum(ad.square(u), 1, keep_dims=True), eps * eps))
    # ||flip(u)|| at a voxel is ||u|| at its mirror, so flipping the norm map
    # keeps the mask exactly mirror-symmetric
    alpha = dot / (norm * ad.flip(norm, axis))
    return (1.0 - alpha) * 0.5


def caam(m: Tensor, plane: int = SAGITTAL, eps: float = DEFAULT_EPS) -> Tensor:
    """Channel asymmetry mask ``[N,C]``: cosine over all voxels of a channel."""
    _check_volume(m)
    axis = plane_axis(plane)
    dot = ad.reduce_sum(m * ad.flip(m, axis), (2, 3, 4))
    # a flip permutes voxels, so both norms equal ||m||
    sq = ad.clamp_min(ad.reduce_sum(ad.square(m), (2, 3, 4)), eps * eps)
    alpha = dot / sq
    return (1.0 - alpha) * 0.5


# ---------------------------------------------------------------------------
# excitation
# ---------------------------------------------------------------------------


class ExcitationParams(Module):
    """FC -> ReLU -> FC -> sigmoid, without a bottleneck.

    ``kind="channel"`` maps C -> C -> C over the channel mask.
    ``kind="spatial"`` is a pointwise 1 -> hidden -> 1 perceptron shared by
    every voxel of the spatial mask.
    """

    def __init__(self, kind: str, w1, b1, w2, b2):
        super().__init__()
        if kind not in ("spatial", "channel"):
            raise ValueError(f"unknown excitation kind {kind!r}")
        self.kind = kind
        self.w1 = w1
        self.b1 = b1
        self.w2 = w2
        self.b2 = b2

    @classmethod
    def create(
        cls,
        kind: str,
        channels: int = 1,
        rng: np.random.Generator | None = None,
        hidden: int = SPATIAL_HIDDEN,
    ) -> ExcitationParams:
        """Weights uniform in +-1/sqrt(fan_in), biases zero; all-zero if ``rng`` is None."""
        width_in, width_h = (1, hidden) if kind == "spatial" else (channels, channels)

        def w(shape, fan_in):
            return param(np.zeros(shape) if rng is None else uniform_fan_in(rng, shape, fan_in))

        w1 = w((width_h, width_in), width_in)
        b1 = param(np.zeros(width_h))
        w2 = w((width_in, width_h), width_h)
        b2 = param(np.zeros(width_in))
        return cls(kind, w1, b1, w2, b2)

    @classmethod
    def zeros(cls, kind: str, channels: int = 1, hidden: int = SPATIAL_HIDDEN) -> ExcitationParams:
        return cls.create(kind, channels, None, hidden)


def excite(mask: Tensor, params: ExcitationParams) -> Tensor:
    if params.kind == "spatial":
        if mask.ndim != 5 or mask.shape[1] != 1:
            raise ValueError(f"spatial excitation needs a [N,1,H,W,D] mask, got {mask.shape}")
        n, _, h, w, d = mask.shape
        z = ad.reshape(mask, (n, h, w, d, 1))
        z = ad.linear(ad.relu(ad.linear(z, params.w1, params.b1)), params.w2, params.b2)
        return ad.reshape(ad.sigmoid(z), mask.shape)
    if mask.ndim != 2:
        raise ValueError(f"channel excitation needs a [N,C] mask, got {mask.shape}")
    z = ad.linear(ad.relu(ad.linear(mask, params.w1, params.b1)), params.w2, params.b2)
    return ad.sigmoid(z)


def _per_channel(weights: Tensor) -> Tensor:
    n, c = weights.shape
    return ad.reshape(weights, (n, c, 1, 1, 1))


# ---------------------------------------------------------------------------
# composite attention
# ---------------------------------------------------------------------------


def spatial_attention(i: Tensor, sp: ExcitationParams, plane: int = SAGITTAL, eps: float = DEFAULT_EPS):
    """Excited spatial mask for one plane: ``sigma(FC(ReLU(FC(saam))))``."""
    return excite(saam(i, plane, eps), sp)


def channel_attention(i: Tensor, ch: ExcitationParams, plane: int = SAGITTAL, eps: float = DEFAULT_EPS):
    return excite(caam(i, plane, eps), ch)


def caspian(
    i: Tensor,
    sp_params: ExcitationParams,
    ch_params: ExcitationParams,
    plane: int = SAGITTAL,
    eps: float = DEFAULT_EPS,
) -> Tensor:
    """Spatially attended copy of ``i`` plus channel-attended copy of ``i``."""
    _check_volume(i)
    q_spatial = spatial_attention(i, sp_params, plane, eps) * i
    q_channel = _per_channel(channel_attention(i, ch_params, plane, eps)) * i
    return q_spatial + q_channel


def multiplanar(i: Tensor, sp_params: Sequence[ExcitationParams], eps: float = DEFAULT_EPS) -> Tensor:
    """Sum over sagittal, coronal and axial planes of ``S_plane * i``."""
    _check_volume(i)
    if len(sp_params) != 3:
        raise ValueError("multiplanar needs one parameter set per plane (3)")
    out = None
    for plane, sp in zip(PLANES, sp_params):
        term = spatial_attention(i, sp, plane, eps) * i
        out = term if out is None else out + term
    return out


def coarse_input(i_s1: Tensor, i_s0: Tensor, proj: tuple[Tensor, Tensor] | None = None) -> Tensor:
    """Max-pool the finer-scale tensor onto the grid of ``i_s1``.

    A 1x1x1 projection ``(weight, bias)`` aligns channel counts when they differ.
    """
    _check_volume(i_s1, "i_s1")
    _check_volume(i_s0, "i_s0")
    if any(a != 2 * b for a, b in zip(i_s0.shape[2:], i_s1.shape[2:])) or i_s0.shape[0] != i_s1.shape[0]:
        raise ValueError(f"misaligned scales: i_s0 {i_s0.shape} is not 2x i_s1 {i_s1.shape}")
    pooled = ad.maxpool3d(i_s0, 2, 2)
    if proj is not None:
        pooled = ad.conv3d(pooled, proj[0], proj[1])
    if pooled.shape[1] != i_s1.shape[1]:
        raise ValueError(
            f"i_s0 has {i_s0.shape[1]} channels, i_s1 has {i_s1.shape[1]}; a projection is required"
        )
    return pooled


def multiscale(
    i_s1: Tensor,
    i_s0: Tensor,
    sp_params_s1: ExcitationParams,
    sp_params_s0: ExcitationParams,
    plane: int = SAGITTAL,
    proj: tuple[Tensor, Tensor] | None = None,
    eps: float = DEFAULT_EPS,
) -> Tensor:
    """Gated two-scale spatial attention: ``S1*i + (1 - S1)*S0*i``.

    ``S0`` is the excited mask of the pooled finer-scale tensor, so regions the
    common-scale mask misses can still be picked up from the other scale.
    """
    pooled = coarse_input(i_s1, i_s0, proj)
    s1 = spatial_attention(i_s1, sp_params_s1, plane, eps)
    s0 = spatial_attention(pooled, sp_params_s0, plane, eps)
    return s1 * i_s1 + (1.0 - s1) * s0 * i_s1


def caspian_pp(
    i_s1: Tensor,
    i_s0: Tensor,
    ch_params: ExcitationParams,
    planar_params: Sequence[ExcitationParams],
    ms_params_s1: ExcitationParams,
    ms_params_s0: ExcitationParams,
    plane: int = SAGITTAL,
    proj: tuple[Tensor, Tensor] | None = None,
    eps: float = DEFAULT_EPS,
) -> Tensor:
    q_channel = _per_channel(channel_attention(i_s1, ch_params, plane, eps)) * i_s1
    q_ms = multiscale(i_s1, i_s0, ms_params_s1, ms_params_s0, plane, proj, eps)
    q_mp = multiplanar(i_s1, planar_params, eps)
    return q_channel + q_ms + q_mp


def se_baseline(i: Tensor, params: ExcitationParams) -> Tensor:
    """Squeeze-and-excitation: global average pool, excite, reweight channels."""
    _check_volume(i)
    if params.kind != "channel":
        raise ValueError("se_baseline needs channel-kind excitation params")
    pooled = ad.mean(i, (2, 3, 4))
    return _per_channel(excite(pooled, params)) * i


# ---------------------------------------------------------------------------
# blocks used by the network
# ---------------------------------------------------------------------------


class AttentionBlock(Module):
    """Shape-preserving attention stage.

    ``last_spatial`` holds the most recent voxelwise multiplier (``[N,1,...]``)
    for heat-map export.
    """

    kind = "none"
    needs_coarse = False

    def __init__(self):
        super().__init__()
        self.last_spatial: np.ndarray | None = None

    def forward(self, x: Tensor, x_s0: Tensor | None = None) -> Tensor:
        return x


class SEBlock(AttentionBlock):
    kind = "se"

    def __init__(self, channels: int, rng):
        super().__init__()
        self.ch = ExcitationParams.create("channel", channels, rng)

    def forward(self, x, x_s0=None):
        return se_baseline(x, self.ch)


class SAAMBlock(AttentionBlock):
    """Raw asymmetry mask times input, no excitation."""

    kind = "saam_only"

    def forward(self, x, x_s0=None):
        theta = saam(x)
        self.last_spatial = theta.data
        return theta * x


class SAAMCAAMBlock(AttentionBlock):
    kind = "saam_caam"

    def forward(self, x, x_s0=None):
        theta = saam(x)
        self.last_spatial = theta.data
        return theta * x + _per_channel(caam(x)) * x


class CaspianBlock(AttentionBlock):
    kind = "caspian"

    def __init__(self, channels: int, rng):
        super().__init__()
        self.sp = ExcitationParams.create("spatial", 1, rng)
        self.ch = ExcitationParams.create("channel", channels, rng)

    def forward(self, x, x_s0=None):
        s = spatial_attention(x, self.sp)
        self.last_spatial = s.data
        return s * x + _per_channel(channel_attention(x, self.ch)) * x


class _PlanarMixin:
    def _planar(self, x: Tensor) -> tuple[Tensor, np.ndarray]:
        out, total = None, 0.0
        for plane, sp in zip(PLANES, (self.planar1, self.planar2, self.planar3)):
            s = spatial_attention(x, sp, plane)
            total = total + s.data
            out = s * x if out is None else out + s * x
        return out, total


class _ScaleMixin:
    def _init_scale(self, channels: int, coarse_channels: int, rng):
        self.ms_s1 = ExcitationParams.create("spatial", 1, rng)
        self.ms_s0 = ExcitationParams.create("spatial", 1, rng)
        if coarse_channels != channels:
            self.proj_w = param(uniform_fan_in(rng, (channels, coarse_channels, 1, 1, 1), coarse_channels))
            self.proj_b = param(np.zeros(channels))
        else:
            self.proj_w = self.proj_b = None

    def _multiscale(self, x: Tensor, x_s0: Tensor | None) -> tuple[Tensor, np.ndarray]:
        if x_s0 is None:
            raise ValueError(f"{self.kind} block needs the finer-scale input")
        proj = None if self.proj_w is None else (self.proj_w, self.proj_b)
        pooled = coarse_input(x, x_s0, proj)
        s1 = spatial_attention(x, self.ms_s1)
        s0 = spatial_attention(pooled, self.ms_s0)
        gate = s1 + (1.0 - s1) * s0
        return gate * x, gate.data


class CaspianMultiplanarBlock(_PlanarMixin, AttentionBlock):
    kind = "caspian_mp"

    def __init__(self, channels: int, rng):
        super().__init__()
        self.ch = ExcitationParams.create("channel", channels, rng)
        self.planar1 = ExcitationParams.create("spatial", 1, rng)
        self.planar2 = ExcitationParams.create("spatial", 1, rng)
        self.planar3 = ExcitationParams.create("spatial", 1, rng)

    def forward(self, x, x_s0=None):
        q_mp, total = self._planar(x)
        self.last_spatial = total
        return _per_channel(channel_attention(x, self.ch)) * x + q_mp


class CaspianMultiscaleBlock(_ScaleMixin, AttentionBlock):
    kind = "caspian_ms"
    needs_coarse = True

    def __init__(self, channels: int, coarse_channels: int, rng):
        super().__init__()
        self.ch = ExcitationParams.create("channel", channels, rng)
        self._init_scale(channels, coarse_channels, rng)

    def forward(self, x, x_s0=None):
        q_ms, gate = self._multiscale(x, x_s0)
        self.last_spatial = gate
        return _per_channel(channel_attention(x, self.ch)) * x + q_ms


class CaspianPPBlock(_PlanarMixin, _ScaleMixin, AttentionBlock):
    kind = "caspian_pp"
    needs_coarse = True

    def __init__(self, channels: int, coarse_channels: int, rng):
        super().__init__()
        self.ch = ExcitationParams.create("channel", channels, rng)
        self.planar1 = ExcitationParams.create("spatial", 1, rng)
        self.planar2 = ExcitationParams.create("spatial", 1, rng)
        self.planar3 = ExcitationParams.create("spatial", 1, rng)
        self._init_scale(channels, coarse_channels, rng)

    def forward(self, x, x_s0=None):
        q_ms, gate = self._multiscale(x, x_s0)
        q_mp, total = self._planar(x)
        self.last_spatial = gate + total
        return _per_channel(channel_attention(x, self.ch)) * x + q_ms + q_mp


BLOCK_KINDS = ("none", "se", "saam_only", "saam_caam", "caspian", "caspian_mp", "caspian_ms", "caspian_pp")
COARSE_KINDS = ("caspian_ms", "caspian_pp")


def make_block(kind: str, channels: int, rng, coarse_channels: int | None = None) -> AttentionBlock:
    if kind == "none":
        return AttentionBlock()
    if kind == "se":
        return SEBlock(channels, rng)
    if kind == "saam_only":
        return SAAMBlock()
    if kind == "saam_caam":
        return SAAMCAAMBlock()
    if kind == "caspian":
        return CaspianBlock(channels, rng)
    if kind == "caspian_mp":
        return CaspianMultiplanarBlock(channels, rng)
    if kind in COARSE_KINDS:
        if coarse_channels is None:
            raise ValueError(f"{kind} needs a finer-scale input")
        cls = CaspianMultiscaleBlock if kind == "caspian_ms" else CaspianPPBlock
        return cls(channels, coarse_channels, rng)
    raise ValueError(f"unknown attention kind {kind!r}; expected one of {BLOCK_KINDS}")
