"""Sliding-window inference over pluggable patch models, late fusion and binarization.

A patch model is any callable ``(pet_patch, ct_patch) -> probability_patch``
over float32 arrays of identical shape with outputs in [0, 1]; it stands in
for whatever segmentation networks produce the per-window foreground
probabilities. Window outputs are blended with equal weight (plain per-voxel
mean over covering windows).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .preprocess import CaseBundle
from .volume import BinaryMask, ProbabilityVolume

PatchModel = Callable[[np.ndarray, np.ndarray], np.ndarray]

DEFAULT_WINDOW_DIMS = (96, 96, 96)
DEFAULT_OVERLAP = 0.25
DEFAULT_BINARIZE_THRESHOLD = 0.5


@dataclass(frozen=True, eq=False)
class WindowPlan:
    """Sliding-window tiling of a (possibly padded) volume.

    ``starts`` lists window origins in padded coordinates, x slowest:
    ``itertools.product`` order over the per-axis start lists. ``pad_low``
    records the low-side padding used to grow undersized axes up to the
    window (the extra voxel of an odd pad goes on the high side).
    """

    dims: tuple[int, int, int]
    window_dims: tuple[int, int, int]
    overlap: float
    starts: tuple[tuple[int, int, int], ...]
    padded_dims: tuple[int, int, int]
    pad_low: tuple[int, int, int]

    @property
    def n_windows(self) -> int:
        return len(self.starts)


def _axis_starts(dim: int, window: int, overlap: float) -> tuple[list[int], int, int]:
    """Per-axis (starts, padded_dim, pad_low)."""
    if dim < window:
        pad_total = window - dim
        pad_low = pad_total // 2
        padded = window
    else:
        pad_low = 0
        padded = dim
    # round half up so the stride is platform-independent for any overlap
    stride = max(1, int(math.floor(window * (1.0 - overlap) + 0.5)))
    span = padded - window
    n = (span + stride - 1) // stride + 1 if span > 0 else 1
    starts = [i * stride for i in range(n - 1)]
    starts.append(padded - window)
    return starts, padded, pad_low


def plan_windows(
    dims: tuple[int, int, int],
    window_dims: tuple[int, int, int] = DEFAULT_WINDOW_DIMS,
    overlap: float = DEFAULT_OVERLAP,
) -> WindowPlan:
    """Plan window origins covering every voxel of ``dims``.

    Per axis the stride is ``round(window * (1 - overlap))``; the final start
    is clamped to ``dim - window`` and axes smaller than the window are
    zero-padded up to it.
    """
    if not 0.0 <= overlap < 1.0:
        raise ConfigError(f"overlap must lie in [0, 1), got {overlap!r}")
    if len(window_dims) != 3 or any(int(w) < 1 for w in window_dims):
        raise ConfigError(f"window_dims must be three sizes >= 1, got {window_dims!r}")
    if len(dims) != 3 or any(int(d) < 1 for d in dims):
        raise ConfigError(f"dims must be three sizes >= 1, got {dims!r}")
    dims = tuple(int(d) for d in dims)
    window_dims = tuple(int(w) for w in window_dims)
    per_axis = [_axis_starts(d, w, overlap) for d, w in zip(dims, window_dims)]
    starts = tuple(product(*(axis[0] for axis in per_axis)))
    padded = tuple(axis[1] for axis in per_axis)
    pad_low = tuple(axis[2] for axis in per_axis)
    return WindowPlan(dims, window_dims, float(overlap), starts, padded, pad_low)


def blend_windows(plan: WindowPlan, patch_outputs: Sequence[np.ndarray]) -> ProbabilityVolume:
    """Average one output patch per window into a full-size probability volume.

    Every voxel becomes the plain mean of all patch values covering it
    (accumulated in float64, so the result is summation-order exact); the
    padding is cropped back to the original dims. Spacing is not known at
    this level, so the result carries unit spacing; callers re-wrap it.
    """
    if len(patch_outputs) != plan.n_windows:
        raise ContractError(f"plan has {plan.n_windows} windows but {len(patch_outputs)} patches were given")
    wx, wy, wz = plan.window_dims
    acc = np.zeros(plan.padded_dims, dtype=np.float64)
    cover = np.zeros(plan.padded_dims, dtype=np.int32)
    for start, patch in zip(plan.starts, patch_outputs):
        arr = np.asarray(patch, dtype=np.float64)
        if arr.shape != plan.window_dims:
            raise ContractError(f"patch for window at {start} has shape {arr.shape}, expected {plan.window_dims}")
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise ContractError(f"patch for window at {start} has values outside [0, 1]")
        sx, sy, sz = start
        acc[sx : sx + wx, sy : sy + wy, sz : sz + wz] += arr
        cover[sx : sx + wx, sy : sy + wy, sz : sz + wz] += 1
    if cover.min() < 1:
        raise ContractError("window plan leaves voxels uncovered")
    blended = acc / cover
    ox, oy, oz = plan.pad_low
    nx, ny, nz = plan.dims
    out = blended[ox : ox + nx, oy : oy + ny, oz : oz + nz].astype(np.float32)
    out = np.clip(out, 0.0, 1.0)
    return ProbabilityVolume(out, (1.0, 1.0, 1.0))


def sliding_window_infer(
    bundle: CaseBundle,
    model: PatchModel,
    window_dims: tuple[int, int, int] = DEFAULT_WINDOW_DIMS,
    overlap: float = DEFAULT_OVERLAP,
) -> ProbabilityVolume:
    """Tile the bundle, run the patch model per window and blend the outputs.

    Both channels are zero-padded where the volume is smaller than the
    window (zero is the background of both normalized channels). A model
    output with wrong dims or out-of-range values raises a contract error
    naming the offending window.
    """
    plan = plan_windows(bundle.dims, window_dims, overlap)
    pad = [(lo, pdim - dim - lo) for lo, pdim, dim in zip(plan.pad_low, plan.padded_dims, bundle.dims)]
    pet = np.pad(bundle.pet.data, pad)
    ct = np.pad(bundle.ct.data, pad)
    wx, wy, wz = plan.window_dims
    outputs = []
    for start in plan.starts:
        sx, sy, sz = start
        out = model(pet[sx : sx + wx, sy : sy + wy, sz : sz + wz], ct[sx : sx + wx, sy : sy + wy, sz : sz + wz])
        outputs.append(out)
    blended = blend_windows(plan, outputs)
    return ProbabilityVolume(blended.data, bundle.spacing_mm)


def late_fuse(
    probs: Sequence[ProbabilityVolume],
    weights: Sequence[float] | None = None,
) -> ProbabilityVolume:
    """Voxelwise weighted mean of aligned probability volumes (equal weights by default)."""
    if len(probs) < 1:
        raise ConfigError("late_fuse needs at least one probability volume")
    first = probs[0]
    for i, p in enumerate(probs[1:], start=1):
        if p.dims != first.dims:
            raise ContractError(f"probability volume {i} has dims {p.dims}, expected {first.dims}")
        if p.spacing_mm != first.spacing_mm:
            raise ContractError(f"probability volume {i} has spacing {p.spacing_mm}, expected {first.spacing_mm}")
    if weights is None:
        w = np.full(len(probs), 1.0 / len(probs))
    else:
        if len(weights) != len(probs):
            raise ConfigError(f"got {len(weights)} weights for {len(probs)} volumes")
        w = np.asarray([float(x) for x in weights], dtype=np.float64)
        if (w < 0.0).any() or not np.isfinite(w).all() or w.sum() <= 0.0:
            raise ConfigError(f"weights must be non-negative with a positive sum, got {weights!r}")
        w = w / w.sum()
    acc = np.zeros(first.dims, dtype=np.float64)
    for weight, p in zip(w, probs):
        acc += weight * p.data.astype(np.float64)
    out = np.clip(acc, 0.0, 1.0).astype(np.float32)
    return ProbabilityVolume(out, first.spacing_mm)


def binarize(prob: ProbabilityVolume, threshold: float = DEFAULT_BINARIZE_THRESHOLD) -> BinaryMask:
    """Threshold a probability volume: voxel = 1 iff p >= threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"binarize threshold must lie in [0, 1], got {threshold!r}")
    data = (prob.data >= threshold).astype(np.float32)
    return BinaryMask(data, prob.spacing_mm)
