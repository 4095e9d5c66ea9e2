"""Finite-difference gradient suite over every differentiable op.

Each check builds an O(1) scalar from an op by contracting its output with
fixed random weights, then compares reverse-mode and central-difference
gradients.  Inputs keep clear of kinks (ReLU at 0, max-pool ties, |x| at 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import attention as at
from . import autodiff as ad
from . import losses
from .autodiff import Tensor
from .network import NetConfig, build

OP_TOL = 1e-5
NET_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name:<28s} rel_err={self.error:.3e} tol={self.tol:.0e}"


def _away_from_zero(rng, shape, lo=0.2, hi=1.5):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _contract(rng, fn: Callable[..., Tensor]) -> Callable[..., Tensor]:
    """Wrap ``fn`` so its output is reduced to a scalar by fixed random weights."""
    cache = {}

    def f(*xs):
        y = fn(*xs)
        if "w" not in cache:
            cache["w"] = rng.uniform(0.5, 1.5, size=y.shape)
        return ad.reduce_sum(y * Tensor(cache["w"]))

    return f


def _smooth_excitation(kind: str, channels: int, rng) -> at.ExcitationParams:
    """Excitation weights whose hidden ReLUs stay strictly active for masks in [0, 1]."""
    h, c = (at.SPATIAL_HIDDEN, 1) if kind == "spatial" else (channels, channels)
    return at.ExcitationParams(
        kind,
        Tensor(rng.uniform(0.2, 1.0, (h, c))),
        Tensor(rng.uniform(0.1, 0.5, h)),
        Tensor(_away_from_zero(rng, (c, h))),
        Tensor(rng.normal(0.0, 0.3, c)),
    )


def _assign(module, dotted: str, value: Tensor) -> None:
    parts = dotted.split(".")
    for p in parts[:-1]:
        module = getattr(module, p)
    setattr(module, parts[-1], value)


def op_cases(seed: int = 0) -> list[tuple[str, Callable, list[Tensor], float]]:
    rng = np.random.default_rng(seed)
    T = Tensor

    def R(*shape, lo=0.2, hi=1.5):
        return T(_away_from_zero(rng, shape, lo, hi))

    def P(*shape):
        return T(rng.uniform(0.5, 2.0, size=shape))

    c = []
    add = c.append
    a, b = R(3, 4), R(3, 4)
    add(("add", _contract(rng, ad.add), [a, R(4)], OP_TOL))
    add(("sub", _contract(rng, ad.sub), [a, b], OP_TOL))
    add(("mul", _contract(rng, ad.mul), [R(3, 1), b], OP_TOL))
    add(("div", _contract(rng, ad.div), [a, P(3, 4)], OP_TOL))
    add(("neg", _contract(rng, ad.neg), [a], OP_TOL))
    add(("relu", _contract(rng, ad.relu), [a], OP_TOL))
    add(("sigmoid", _contract(rng, ad.sigmoid), [a], OP_TOL))
    add(("log", _contract(rng, ad.log), [P(3, 4)], OP_TOL))
    add(("exp", _contract(rng, ad.exp), [a], OP_TOL))
    add(("sqrt", _contract(rng, ad.sqrt), [P(3, 4)], OP_TOL))
    add(("square", _contract(rng, ad.square), [a], OP_TOL))
    add(("abs", _contract(rng, ad.abs_), [a], OP_TOL))
    add(("softplus", _contract(rng, ad.softplus), [a], OP_TOL))
    add(("clamp_min", _contract(rng, lambda x: ad.clamp_min(x, 0.0)), [a], OP_TOL))
    add(("reduce_sum", _contract(rng, lambda x: ad.reduce_sum(x, (0, 2), keep_dims=True)), [R(2, 3, 4)], OP_TOL))
    add(("mean", _contract(rng, lambda x: ad.mean(x, 1)), [R(2, 3, 4)], OP_TOL))
    add(("reshape", _contract(rng, lambda x: ad.reshape(x, (6, 4))), [R(2, 3, 4)], OP_TOL))
    add(("transpose", _contract(rng, lambda x: ad.transpose(x, (2, 0, 1))), [R(2, 3, 4)], OP_TOL))
    add(("flip", _contract(rng, lambda x: ad.flip(x, 1) * x), [R(2, 3, 4)], OP_TOL))
    add(("concat", _contract(rng, lambda x, y: ad.concat([x, y], 1)), [R(2, 3, 4), R(2, 2, 4)], OP_TOL))
    add(("take", _contract(rng, lambda x: ad.take(x, 1, 1)), [R(2, 3, 4)], OP_TOL))
    add(("conv3d", _contract(rng, lambda x, w, bb: ad.conv3d(x, w, bb, 1, 1)), [R(2, 2, 4, 4, 4), R(3, 2, 3, 3, 3), R(3)], OP_TOL))
    add(("conv3d_stride2", _contract(rng, lambda x, w: ad.conv3d(x, w, None, 2, 0)), [R(1, 2, 5, 5, 5), R(2, 2, 3, 3, 3)], OP_TOL))
    # distinct values, far apart, so the arg-max never changes under +-h
    mp = rng.permutation(2 * 2 * 4 * 4 * 4).reshape(2, 2, 4, 4, 4) * 0.01
    add(("maxpool3d", _contract(rng, lambda x: ad.maxpool3d(x, 2, 2)), [T(mp)], OP_TOL))
    add(("upsample_nearest", _contract(rng, lambda x: ad.upsample_nearest(x, 2)), [R(1, 2, 2, 2, 2)], OP_TOL))
    add(("linear", _contract(rng, ad.linear), [R(2, 3, 4), R(5, 4), R(5)], OP_TOL))
    drop_rng_seed = int(rng.integers(1 << 31))
    add((
        "dropout",
        _contract(rng, lambda x: ad.dropout(x, 0.3, np.random.default_rng(drop_rng_seed), True)),
        [R(2, 4, 2, 2, 2)],
        OP_TOL,
    ))
    add(("instance_norm", _contract(rng, ad.instance_norm), [R(2, 2, 3, 3, 3)], OP_TOL))
    return c


def attention_cases(seed: int = 0) -> list[tuple[str, Callable, list[Tensor], float]]:
    rng = np.random.default_rng(seed + 1)
    T = Tensor

    def vol(c=3, s=4):
        return T(rng.normal(size=(2, c, s, s, s)))

    c = []
    add = c.append
    add(("saam", _contract(rng, lambda u: at.saam(u, at.SAGITTAL)), [vol()], OP_TOL))
    add(("saam_axial", _contract(rng, lambda u: at.saam(u, at.AXIAL)), [vol()], OP_TOL))
    add(("caam", _contract(rng, lambda m: at.caam(m, at.CORONAL)), [vol()], OP_TOL))

    sp = _smooth_excitation("spatial", 1, rng)
    ch = _smooth_excitation("channel", 3, rng)

    def exc(kind):
        def fn(mask, w1, b1, w2, b2):
            return at.excite(mask, at.ExcitationParams(kind, w1, b1, w2, b2))

        return fn

    sp_leaves = [sp.w1, sp.b1, sp.w2, sp.b2]
    ch_leaves = [ch.w1, ch.b1, ch.w2, ch.b2]
    add(("excite_spatial", _contract(rng, exc("spatial")), [T(rng.uniform(0.1, 0.9, (2, 1, 3, 3, 3)))] + sp_leaves, OP_TOL))
    add(("excite_channel", _contract(rng, exc("channel")), [T(rng.uniform(0.1, 0.9, (2, 3)))] + ch_leaves, OP_TOL))

    def casp(i, *w):
        s_ = at.ExcitationParams("spatial", *w[:4])
        c_ = at.ExcitationParams("channel", *w[4:])
        return at.caspian(i, s_, c_)

    add(("caspian", _contract(rng, casp), [vol()] + sp_leaves + ch_leaves, OP_TOL))

    planes = [_smooth_excitation("spatial", 1, rng) for _ in at.PLANES]
    plane_leaves = [t for p in planes for t in (p.w1, p.b1, p.w2, p.b2)]

    def mplan(i, *w):
        ps = [at.ExcitationParams("spatial", *w[4 * k : 4 * k + 4]) for k in range(3)]
        return at.multiplanar(i, ps)

    add(("multiplanar", _contract(rng, mplan), [vol()] + plane_leaves, OP_TOL))

    ms1 = _smooth_excitation("spatial", 1, rng)
    ms0 = _smooth_excitation("spatial", 1, rng)
    ms_leaves = [t for p in (ms1, ms0) for t in (p.w1, p.b1, p.w2, p.b2)]
    proj = [T(rng.normal(size=(3, 2, 1, 1, 1))), T(rng.normal(size=3))]

    def mscale(i1, i0, *w):
        p1 = at.ExcitationParams("spatial", *w[:4])
        p0 = at.ExcitationParams("spatial", *w[4:8])
        return at.multiscale(i1, i0, p1, p0, at.SAGITTAL, (w[8], w[9]))

    # coarse input at twice the resolution; distinct values keep pooling stable
    i0 = T((rng.permutation(2 * 2 * 8**3).reshape(2, 2, 8, 8, 8) - 1024) * 0.002)
    add(("multiscale", _contract(rng, mscale), [vol(), i0] + ms_leaves + proj, OP_TOL))

    def cpp(i1, i0_, *w):
        c_ = at.ExcitationParams("channel", *w[:4])
        ps = [at.ExcitationParams("spatial", *w[4 + 4 * k : 8 + 4 * k]) for k in range(3)]
        p1 = at.ExcitationParams("spatial", *w[16:20])
        p0 = at.ExcitationParams("spatial", *w[20:24])
        return at.caspian_pp(i1, i0_, c_, ps, p1, p0, at.SAGITTAL, (w[24], w[25]))

    add(("caspian_pp", _contract(rng, cpp), [vol(), i0] + ch_leaves + plane_leaves + ms_leaves + proj, OP_TOL))

    se = _smooth_excitation("channel", 3, rng)
    add((
        "se_baseline",
        _contract(rng, lambda i, *w: at.se_baseline(i, at.ExcitationParams("channel", *w))),
        [vol(), se.w1, se.b1, se.w2, se.b2],
        OP_TOL,
    ))
    return c


def loss_cases(seed: int = 0) -> list[tuple[str, Callable, list[Tensor], float]]:
    rng = np.random.default_rng(seed + 2)
    g = (rng.random((2, 4, 4, 4)) < 0.4).astype(np.float64)
    g3 = (rng.random((2, 3, 4, 4, 4)) < 0.4).astype(np.float64)
    return [
        ("bce", lambda x: losses.bce(g, x), [Tensor(rng.normal(size=g.shape))], OP_TOL),
        ("dice_loss", lambda x: losses.dice_loss(g, x), [Tensor(rng.normal(size=g.shape))], OP_TOL),
        ("total_loss", lambda x: losses.total_loss(g3, x), [Tensor(rng.normal(size=g3.shape))], OP_TOL),
    ]


def network_case(seed: int = 0):
    """Full forward + loss of a 2-level, crop-8 model, differentiated w.r.t. input and weights."""
    cfg = NetConfig(levels=2, base_channels=2, crop=8, seed=seed)
    model = build(cfg)
    rng = np.random.default_rng(seed + 3)
    x = Tensor(rng.normal(size=(1, 4, 8, 8, 8)))
    g = (rng.random((1, 3, 8, 8, 8)) < 0.3).astype(np.float64)
    # input gradient over the full graph
    f_x = lambda xx: losses.total_loss(g, model.forward(xx))  # noqa: E731
    # weight gradient through a representative subset (first conv, attention, head)
    names = [n for n, _ in model.named_parameters() if n.startswith(("enc1.conv_a", "enc2.attn.ch", "head"))]
    params = dict(model.named_parameters())

    def f_w(*leaves):
        for n, leaf in zip(names, leaves):
            _assign(model, n, leaf)
        return losses.total_loss(g, model.forward(x))

    return [
        ("network_input", f_x, [x], NET_TOL),
        ("network_weights", f_w, [params[n] for n in names], NET_TOL),
    ]


def run_suite(seed: int = 0, include_network: bool = True) -> list[CheckResult]:
    cases = op_cases(seed) + attention_cases(seed) + loss_cases(seed)
    if include_network:
        cases += network_case(seed)
    out = []
    for name, f, xs, tol in cases:
        out.append(CheckResult(name, ad.grad_check(f, xs), tol))
    return out
