"""Volumes on disk, synthetic bilateral phantoms and augmentation.

Images are ``[C, H, W, D]`` float64 arrays in memory and float32 on disk;
label maps are ``[H, W, D]`` uint8 with values in {0, 1, 2, 4}.  Axis H is
left-right: phantoms are exact mirror images across its mid-plane.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .losses import VALID_LABELS

CVOL_MAGIC = b"CVOL1\x00"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
IMAGE_FILE = "image.cvol"
LABEL_FILE = "label.cvol"
MANIFEST_FILE = "manifest.txt"


# ---------------------------------------------------------------------------
# CVOL container
# ---------------------------------------------------------------------------


def encode_cvol(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.uint8:
        code = 1
    elif arr.dtype.kind == "f":
        code = 0
        narrowed = arr.astype("<f4")
        if not np.all(np.isfinite(narrowed)):
            raise ValueError("CVOL float payload must be finite")
        arr = narrowed
    else:
        raise ValueError(f"unsupported dtype {arr.dtype} for CVOL")
    if arr.ndim > 255:
        raise ValueError("rank too large")
    header = CVOL_MAGIC + bytes([code, arr.ndim]) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode_cvol(raw: bytes) -> np.ndarray:
    """Float payloads widen to float64; uint8 payloads stay uint8."""
    if len(raw) < 8 or raw[:6] != CVOL_MAGIC:
        raise ValueError("not a CVOL file: bad magic")
    code, rank = raw[6], raw[7]
    if code not in _DTYPES:
        raise ValueError(f"unknown CVOL dtype code {code}")
    hdr_end = 8 + 4 * rank
    if len(raw) < hdr_end:
        raise ValueError("CVOL header truncated")
    shape = struct.unpack(f"<{rank}I", raw[8:hdr_end])
    dt = _DTYPES[code]
    expected = int(np.prod(shape)) * dt.itemsize
    if len(raw) - hdr_end != expected:
        raise ValueError(
            f"CVOL payload is {len(raw) - hdr_end} bytes, header declares {shape} ({expected} bytes)"
        )
    arr = np.frombuffer(raw, dtype=dt, offset=hdr_end).reshape(shape)
    return arr.astype(np.float64) if code == 0 else arr.copy()


def write_cvol(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_cvol(arr))


def read_cvol(path) -> np.ndarray:
    return decode_cvol(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# cases and datasets
# ---------------------------------------------------------------------------


@dataclass
class Case:
    case_id: str
    image: np.ndarray  # [C,H,W,D] float64
    label: np.ndarray | None = None  # [H,W,D] uint8

    def __post_init__(self):
        if self.image.ndim != 4 or min(self.image.shape[1:]) < 8:
            raise ValueError(f"image must be [C,H,W,D] with extents >= 8, got {self.image.shape}")
        if self.label is not None:
            if self.label.shape != self.image.shape[1:]:
                raise ValueError("label extents must match the image")
            if not np.isin(self.label, VALID_LABELS).all():
                raise ValueError("label values must lie in {0,1,2,4}")


def save_case(root, case: Case) -> Path:
    d = Path(root) / case.case_id
    d.mkdir(parents=True, exist_ok=True)
    write_cvol(d / IMAGE_FILE, case.image)
    if case.label is not None:
        write_cvol(d / LABEL_FILE, case.label.astype(np.uint8))
    return d


def load_case(case_dir, with_label: bool = True) -> Case:
    d = Path(case_dir)
    image = read_cvol(d / IMAGE_FILE)
    label = None
    if with_label and (d / LABEL_FILE).exists():
        label = read_cvol(d / LABEL_FILE)
    return Case(d.name, image, label)


def list_cases(root) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    manifest = root / MANIFEST_FILE
    if manifest.exists():
        ids = [ln.split()[0] for ln in manifest.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    else:
        ids = sorted(p.name for p in root.iterdir() if (p / IMAGE_FILE).exists())
    return ids


def load_dataset(root, with_label: bool = True) -> list[Case]:
    root = Path(root)
    return [load_case(root / cid, with_label) for cid in list_cases(root)]


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------


def zscore(image: np.ndarray) -> np.ndarray:
    """Per-channel standardisation over all voxels; constant channels become 0."""
    image = np.asarray(image, dtype=np.float64)
    out = np.empty_like(image)
    for c in range(image.shape[0]):
        ch = image[c]
        mu = ch.mean()
        sd = ch.std()
        out[c] = (ch - mu) / sd if sd > 0 else ch - mu
    return out


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------

# per-label additive offsets for the four synthetic modalities (T1, T1c, T2, FLAIR)
DEFAULT_OFFSETS = {
    2: (-0.2, 0.0, 0.9, 1.1),
    1: (-0.7, 0.3, 0.5, 0.4),
    4: (-0.3, 1.4, 0.3, 0.3),
}


@dataclass
class PhantomSpec:
    extent: int = 32
    lesions: int = 1
    edema_radius: tuple[float, float] = (4.0, 7.0)
    core_radius: tuple[float, float] = (2.5, 3.8)
    enhancing_radius: tuple[float, float] = (1.2, 2.2)
    offsets: dict[int, tuple[float, ...]] = field(default_factory=lambda: dict(DEFAULT_OFFSETS))
    blobs: int = 12
    noise: float = 0.08
    channels: int = 4
    seed: int = 0

    @classmethod
    def scaled(cls, extent: int, **kw) -> PhantomSpec:
        """Default lesion radii scaled from the 32-voxel reference to ``extent``."""
        f = extent / 32.0
        ref = cls()
        radii = {
            name: tuple(r * f for r in getattr(ref, name))
            for name in ("edema_radius", "core_radius", "enhancing_radius")
        }
        radii.update(kw)
        return cls(extent=extent, **radii)

    def validate(self) -> None:
        if self.extent < 8:
            raise ValueError("phantom extent must be >= 8")
        if self.lesions < 0 or self.blobs < 0:
            raise ValueError("lesion and blob counts must be non-negative")
        lows = (self.enhancing_radius[0], self.core_radius[0], self.edema_radius[0])
        highs = (self.enhancing_radius[1], self.core_radius[1], self.edema_radius[1])
        if not (lows[0] < lows[1] < lows[2] and highs[0] <= highs[1] <= highs[2]):
            raise ValueError("radii must satisfy enhancing < core < edema")
        for lab, off in self.offsets.items():
            if lab not in (1, 2, 4) or len(off) != self.channels:
                raise ValueError("offsets need one value per channel for labels 1, 2 and 4")


def mirror(vol: np.ndarray, axis: int) -> np.ndarray:
    """Make ``vol`` exactly mirror-symmetric along ``axis`` by copying its first half."""
    n = vol.shape[axis]
    half = (n + 1) // 2
    out = vol.copy()
    src = np.take(vol, np.arange(half), axis=axis)
    idx = [slice(None)] * vol.ndim
    idx[axis] = slice(n - half, n)
    out[tuple(idx)] = np.flip(src, axis=axis)
    return out


def _background(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.extent
    grid = np.indices((s, s, s), dtype=np.float64)
    c = spec.channels
    field_ = np.ones((c, s, s, s)) * rng.uniform(0.8, 1.2, size=(c, 1, 1, 1))
    # brain-like envelope centred on the mid-plane
    centre = (s - 1) / 2.0
    r2 = sum(((g - centre) / (0.48 * s)) ** 2 for g in grid)
    field_ *= 1.0 / (1.0 + np.exp(4.0 * (r2 - 1.0)))[None]
    for _ in range(spec.blobs):
        mu = rng.uniform(0, s - 1, size=3)
        sigma = rng.uniform(1.0, s / 6.0)
        amp = rng.normal(0.0, 0.35, size=c)
        d2 = sum((g - m) ** 2 for g, m in zip(grid, mu))
        field_ += amp[:, None, None, None] * np.exp(-d2 / (2 * sigma * sigma))[None]
    if spec.noise > 0:
        field_ += rng.normal(0.0, spec.noise, size=field_.shape)
    return mirror(field_, axis=1)


def _ellipsoid(shape, centre, axes) -> np.ndarray:
    grid = np.indices(shape, dtype=np.float64)
    return sum(((g - c) / a) ** 2 for g, c, a in zip(grid, centre, axes)) <= 1.0


def gen_phantom(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(image[C,S,S,S] float64, label[S,S,S] uint8)``.

    The background is mirror-symmetric across the H mid-plane.  Each lesion is
    three nested ellipsoids (edema 2 > core 1 > enhancing 4) lying entirely on
    one randomly chosen side.  Values are float32-representable so a CVOL
    round trip is exact.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    s = spec.extent
    image = _background(spec, rng)
    label = np.zeros((s, s, s), dtype=np.uint8)
    half = s // 2
    for _ in range(spec.lesions):
        r_ed = rng.uniform(*spec.edema_radius)
        r_co = min(rng.uniform(*spec.core_radius), 0.9 * r_ed)
        r_en = min(rng.uniform(*spec.enhancing_radius), 0.9 * r_co)
        axes_ed = r_ed * rng.uniform(0.8, 1.25, size=3)
        # keep the lesion's left-right extent inside one hemisphere
        axes_ed[0] = min(axes_ed[0], float((half - 1) // 2))
        lo = np.ceil(axes_ed).astype(int)
        hi = np.array([half - 1, s - 1, s - 1]) - lo
        if np.any(hi < lo):
            raise ValueError(f"lesion of radius {r_ed:.2f} does not fit in extent {s}")
        centre = np.array([rng.integers(lo[i], hi[i] + 1) for i in range(3)], dtype=np.float64)
        if rng.random() < 0.5:
            centre[0] = s - 1 - centre[0]
        ed = _ellipsoid(label.shape, centre, axes_ed)
        co = _ellipsoid(label.shape, centre, axes_ed * (r_co / r_ed))
        en = _ellipsoid(label.shape, centre, axes_ed * (r_en / r_ed))
        label[ed & (label == 0)] = 2
        label[co & (label != 4)] = 1
        label[en] = 4
    for lab, off in spec.offsets.items():
        m = label == lab
        if m.any():
            image[:, m] += np.asarray(off, dtype=np.float64)[:, None]
    image = image.astype(np.float32).astype(np.float64)
    return image, label


def mirror_mask(mask: np.ndarray, axis: int = 0) -> np.ndarray:
    return np.flip(mask, axis=axis)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


@dataclass
class AugmentConfig:
    crop: int = 32
    crop_jitter: bool = True
    flip_prob: tuple[float, float, float] = (0.5, 0.5, 0.5)
    rot_prob: float = 0.5
    # spatial-axis pairs (0=H, 1=W, 2=D); the default keeps H as the left-right axis
    rot_planes: tuple[tuple[int, int], ...] = ((1, 2),)
    scale_range: tuple[float, float] = (0.9, 1.1)
    shift_range: tuple[float, float] = (-0.1, 0.1)
    mixup_alpha: float = 0.2
    copy_paste_prob: float = 0.5

    def validate(self) -> None:
        probs = list(self.flip_prob) + [self.rot_prob, self.copy_paste_prob]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("augmentation probabilities must lie in [0, 1]")
        if self.mixup_alpha <= 0:
            raise ValueError("mixup alpha must be positive")
        for a, b in self.rot_planes:
            if a == b or not {a, b} <= {0, 1, 2}:
                raise ValueError(f"bad rotation plane {(a, b)}")

    @classmethod
    def identity(cls, crop: int) -> AugmentConfig:
        return cls(crop, False, (0.0, 0.0, 0.0), 0.0, ((1, 2),), (1.0, 1.0), (0.0, 0.0), 0.2, 0.0)


def centroid_crop(
    image: np.ndarray,
    label: np.ndarray,
    size: int,
    rng: np.random.Generator,
    jitter: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Crop a ``size``-cube around the WT centroid (+- size/4 jitter), clamped to bounds."""
    extents = label.shape
    if any(size > e for e in extents):
        raise ValueError(f"crop {size} larger than volume {extents}")
    wt = np.argwhere(label > 0)
    starts = []
    for ax, e in enumerate(extents):
        if len(wt):
            centre = int(np.floor(wt[:, ax].mean() + 0.5))
            j = int(rng.integers(-(size // 4), size // 4 + 1)) if jitter else 0
            st = centre - size // 2 + j
        else:
            st = int(rng.integers(0, e - size + 1))
        starts.append(min(max(st, 0), e - size))
    sl = tuple(slice(st, st + size) for st in starts)
    return image[(slice(None),) + sl].copy(), label[sl].copy()


def basic_augment(
    image: np.ndarray,
    label: np.ndarray,
    cfg: AugmentConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Flips, a 90-degree rotation, then per-channel intensity scale and shift."""
    img, lab = image, label
    for ax, p in enumerate(cfg.flip_prob):
        if rng.random() < p:
            img = np.flip(img, axis=ax + 1)
            lab = np.flip(lab, axis=ax)
    if cfg.rot_planes and rng.random() < cfg.rot_prob:
        a, b = cfg.rot_planes[int(rng.integers(len(cfg.rot_planes)))]
        k = int(rng.integers(1, 4))
        img = np.rot90(img, k, axes=(a + 1, b + 1))
        lab = np.rot90(lab, k, axes=(a, b))
    c = img.shape[0]
    scale = rng.uniform(*cfg.scale_range, size=c) if cfg.scale_range[0] != cfg.scale_range[1] else np.full(c, cfg.scale_range[0])
    shift = rng.uniform(*cfg.shift_range, size=c) if cfg.shift_range[0] != cfg.shift_range[1] else np.full(c, cfg.shift_range[0])
    img = img * scale[:, None, None, None] + shift[:, None, None, None]
    return np.ascontiguousarray(img), np.ascontiguousarray(lab)


def mixup(
    pair_a: tuple[np.ndarray, np.ndarray],
    pair_b: tuple[np.ndarray, np.ndarray],
    alpha: float,
    rng: np.random.Generator,
    lam: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Blend two (image, region-target) pairs with ``lam ~ Beta(alpha, alpha)``."""
    (ia, ta), (ib, tb) = pair_a, pair_b
    if ia.shape != ib.shape or np.shape(ta) != np.shape(tb):
        raise ValueError("mixup pairs must have equal shapes")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    return lam * ia + (1.0 - lam) * ib, lam * np.asarray(ta) + (1.0 - lam) * np.asarray(tb)


def copy_paste(
    donor: tuple[np.ndarray, np.ndarray],
    recipient: tuple[np.ndarray, np.ndarray],
    rng: np.random.Generator,
    max_shift: int | None = None,
    tries: int = 8,
) -> tuple[np.ndarray, np.ndarray]:
    """Hard-paste the donor's lesion voxels (all channels + labels) onto the recipient.

    The lesion is shifted by a random offset that keeps it inside the volume;
    after ``tries`` rejected offsets it is pasted in place.
    """
    (d_img, d_lab), (r_img, r_lab) = donor, recipient
    if d_img.shape != r_img.shape or d_lab.shape != r_lab.shape:
        raise ValueError("copy_paste volumes must have equal shapes")
    out_img, out_lab = r_img.copy(), r_lab.copy()
    pts = np.argwhere(d_lab > 0)
    if len(pts) == 0:
        return out_img, out_lab
    extents = np.array(d_lab.shape)
    max_shift = int(extents.min() // 4) if max_shift is None else max_shift
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    offset = np.zeros(3, dtype=int)
    for _ in range(tries):
        cand = rng.integers(-max_shift, max_shift + 1, size=3)
        if np.all(lo + cand >= 0) and np.all(hi + cand < extents):
            offset = cand
            break
    dst = pts + offset
    si, di = tuple(pts.T), tuple(dst.T)
    out_img[(slice(None),) + di] = d_img[(slice(None),) + si]
    out_lab[di] = d_lab[si]
    return out_img, out_lab
