"""Inference-time normalization and cropping of PET/CT channels, plus the lesion-biased patch sampler."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .volume import BinaryMask, Volume3D

logger = logging.getLogger("petfuse.preprocess")

DEFAULT_CLIP_PERCENTILES = (0.5, 99.5)
DEFAULT_CROP_CHANNEL = "ct"
DEFAULT_CROP_THRESHOLD = 0.05

BBox = tuple[tuple[int, int], tuple[int, int], tuple[int, int]]


@dataclass(frozen=True, eq=False)
class CaseBundle:
    """Aligned PET (SUV), CT and optional label grids for one case."""

    pet: Volume3D
    ct: Volume3D
    label: BinaryMask | None = None

    def __post_init__(self) -> None:
        members = [("pet", self.pet), ("ct", self.ct)]
        if self.label is not None:
            members.append(("label", self.label))
        dims = {name: vol.dims for name, vol in members}
        if len(set(dims.values())) != 1:
            raise ContractError(f"bundle members must share dims, got {dims}")
        spacing = {name: vol.spacing_mm for name, vol in members}
        if len(set(spacing.values())) != 1:
            raise ContractError(f"bundle members must share spacing, got {spacing}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.pet.dims

    @property
    def spacing_mm(self) -> tuple[float, float, float]:
        return self.pet.spacing_mm


@dataclass(frozen=True)
class SamplerConfig:
    """Patch sampling settings: patch size, lesion-centering probability, seed."""

    patch_dims: tuple[int, int, int] = (96, 96, 96)
    p_lesion: float = 2.0 / 3.0
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.patch_dims) != 3 or any(int(p) < 1 for p in self.patch_dims):
            raise ConfigError(f"patch_dims must be three sizes >= 1, got {self.patch_dims!r}")
        if not 0.0 <= self.p_lesion <= 1.0:
            raise ConfigError(f"p_lesion must lie in [0, 1], got {self.p_lesion!r}")


def suv_z_transform(pet: Volume3D) -> Volume3D:
    """Standardize a volume to zero mean and unit population standard deviation.

    A constant input (population sigma 0) maps to all zeros.
    """
    data = pet.data
    mean = float(data.mean(dtype=np.float64))
    std = float(data.std(dtype=np.float64))
    if std == 0.0:
        return Volume3D(np.zeros_like(data), pet.spacing_mm)
    out = ((data.astype(np.float64) - mean) / std).astype(np.float32)
    return Volume3D(out, pet.spacing_mm)


def nearest_rank_percentile(sorted_values: np.ndarray, p: float) -> float:
    """Nearest-rank percentile of an ascending array: index ceil(p/100*N)-1, clamped."""
    n = len(sorted_values)
    idx = math.ceil(p * n / 100.0) - 1
    idx = min(max(idx, 0), n - 1)
    return float(sorted_values[idx])


def ct_clip_scale(
    ct: Volume3D,
    p_low: float = DEFAULT_CLIP_PERCENTILES[0],
    p_high: float = DEFAULT_CLIP_PERCENTILES[1],
) -> Volume3D:
    """Percentile-clip the CT channel and scale it to [0, 1].

    Values are clipped to the nearest-rank percentiles [v_low, v_high] and
    mapped affinely so v_low -> 0 and v_high -> 1. A degenerate range
    (v_low == v_high) maps to all zeros.
    """
    if not 0.0 <= p_low < p_high <= 100.0:
        raise ConfigError(f"need 0 <= p_low < p_high <= 100, got ({p_low!r}, {p_high!r})")
    ordered = np.sort(ct.data.ravel())
    v_low = nearest_rank_percentile(ordered, p_low)
    v_high = nearest_rank_percentile(ordered, p_high)
    if v_low == v_high:
        return Volume3D(np.zeros_like(ct.data), ct.spacing_mm)
    clipped = np.clip(ct.data, v_low, v_high)
    out = (clipped - v_low) / np.float32(v_high - v_low)
    out = np.clip(out, 0.0, 1.0).astype(np.float32)
    return Volume3D(out, ct.spacing_mm)


def foreground_crop(
    bundle: CaseBundle,
    channel: str = DEFAULT_CROP_CHANNEL,
    threshold: float = DEFAULT_CROP_THRESHOLD,
) -> tuple[CaseBundle, BBox]:
    """Crop all channels to the tight bounding box of ``channel > threshold``.

    The bbox is half-open in original coordinates. With no voxel above the
    threshold the bundle is returned unchanged with the full-extent bbox.
    """
    if channel not in ("pet", "ct"):
        raise ConfigError(f"crop channel must be 'pet' or 'ct', got {channel!r}")
    ref = bundle.ct if channel == "ct" else bundle.pet
    above = ref.data > threshold
    nx, ny, nz = bundle.dims
    if not above.any():
        return bundle, ((0, nx), (0, ny), (0, nz))
    xs, ys, zs = np.nonzero(above)
    bbox: BBox = (
        (int(xs.min()), int(xs.max()) + 1),
        (int(ys.min()), int(ys.max()) + 1),
        (int(zs.min()), int(zs.max()) + 1),
    )
    (x0, x1), (y0, y1), (z0, z1) = bbox

    def cut(vol: Volume3D) -> np.ndarray:
        return vol.data[x0:x1, y0:y1, z0:z1]

    pet = Volume3D(cut(bundle.pet), bundle.spacing_mm)
    ct = Volume3D(cut(bundle.ct), bundle.spacing_mm)
    label = BinaryMask(cut(bundle.label), bundle.spacing_mm) if bundle.label is not None else None
    return CaseBundle(pet, ct, label), bbox


def sample_patch(
    bundle: CaseBundle,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
) -> tuple[CaseBundle, tuple[int, int, int]]:
    """Draw one patch, lesion-centered with probability ``cfg.p_lesion``.

    The returned center is the sampled target voxel (in x-fastest foreground
    order for lesion draws, uniform over the grid otherwise); the patch
    window is shifted so it lies fully inside the volume, so near boundaries
    the target may sit off-middle. With no usable label the draw falls back
    to uniform sampling. Passing the same seed reproduces the draw sequence
    bit-for-bit; callers making several draws should pass a persistent
    ``rng``.
    """
    dims = bundle.dims
    pdims = tuple(int(p) for p in cfg.patch_dims)
    if any(d < p for d, p in zip(dims, pdims)):
        raise ConfigError(f"patch dims {pdims} exceed volume dims {dims}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    # The Bernoulli draw is always consumed so the stream position does not
    # depend on the label contents.
    u = float(rng.random())
    fg_linear: np.ndarray | None = None
    if bundle.label is not None:
        flat = bundle.label.data.ravel(order="F")
        fg_linear = np.flatnonzero(flat > 0)
    elif cfg.p_lesion > 0.0:
        logger.warning("sample_patch: no label present, falling back to uniform sampling")

    nx, ny, _ = dims
    if u < cfg.p_lesion and fg_linear is not None and fg_linear.size > 0:
        lin = int(fg_linear[int(rng.integers(fg_linear.size))])
    else:
        lin = int(rng.integers(bundle.pet.n_voxels))
    x = lin % nx
    y = (lin // nx) % ny
    z = lin // (nx * ny)
    center = (x, y, z)

    starts = tuple(min(max(c - p // 2, 0), d - p) for c, p, d in zip(center, pdims, dims))
    (sx, sy, sz) = starts
    (px, py, pz) = pdims

    def cut(vol: Volume3D) -> np.ndarray:
        return vol.data[sx : sx + px, sy : sy + py, sz : sz + pz]

    pet = Volume3D(cut(bundle.pet), bundle.spacing_mm)
    ct = Volume3D(cut(bundle.ct), bundle.spacing_mm)
    label = BinaryMask(cut(bundle.label), bundle.spacing_mm) if bundle.label is not None else None
    return CaseBundle(pet, ct, label), center
