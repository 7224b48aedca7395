"""Prediction cleanup: z-boundary zeroing and tiny-prediction suppression."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .components import DEFAULT_CONNECTIVITY, label_components
from .errors import ConfigError
from .volume import BinaryMask

logger = logging.getLogger("petfuse.postprocess")

DEFAULT_MIN_VOXELS = 10


@dataclass(frozen=True)
class BoundarySpec:
    """How many z-slices to zero at each end, as counts or fractions.

    ``mode`` is "slices" (lower/upper are slice counts) or "percent"
    (lower/upper are fractions of nz per side, at most 0.5 each).
    """

    mode: str = "slices"
    lower: float = 0
    upper: float = 0

    def __post_init__(self) -> None:
        if self.mode not in ("slices", "percent"):
            raise ConfigError(f"boundary mode must be 'slices' or 'percent', got {self.mode!r}")
        if self.lower < 0 or self.upper < 0:
            raise ConfigError("boundary extents must be non-negative")
        if self.mode == "percent" and (self.lower > 0.5 or self.upper > 0.5):
            raise ConfigError("percent boundaries are limited to 0.5 per side")
        if self.mode == "slices" and (self.lower != int(self.lower) or self.upper != int(self.upper)):
            raise ConfigError("slice boundaries must be whole numbers")

    def slice_counts(self, nz: int) -> tuple[int, int]:
        if self.mode == "slices":
            return int(self.lower), int(self.upper)
        # floor keeps the zeroed region no larger than requested
        return math.floor(self.lower * nz), math.floor(self.upper * nz)


def zero_z_boundaries(mask: BinaryMask, spec: BoundarySpec) -> BinaryMask:
    """Zero the lowest and highest z-slices per ``spec``; other voxels are unchanged.

    If the two slabs meet or overlap the whole mask is zeroed (with a
    warning) rather than raising.
    """
    nz = mask.dims[2]
    n_lower, n_upper = spec.slice_counts(nz)
    if n_lower + n_upper >= nz:
        logger.warning("zero_z_boundaries: %d + %d slices cover all %d z-slices; zeroing whole mask", n_lower, n_upper, nz)
        return BinaryMask.zeros(mask.dims, mask.spacing_mm)
    if n_lower == 0 and n_upper == 0:
        return mask
    data = mask.data.copy()
    if n_lower:
        data[:, :, :n_lower] = 0.0
    if n_upper:
        data[:, :, nz - n_upper :] = 0.0
    return BinaryMask(data, mask.spacing_mm)


def suppress_tiny_prediction(
    mask: BinaryMask,
    min_voxels: int = DEFAULT_MIN_VOXELS,
    per_component: bool = False,
    connectivity: int = DEFAULT_CONNECTIVITY,
) -> BinaryMask:
    """Zero predictions whose total foreground is below ``min_voxels``.

    The default rule is whole-mask: a prediction with fewer than
    ``min_voxels`` foreground voxels in total becomes empty, anything else
    passes unchanged. ``per_component=True`` switches to removing each
    connected component smaller than the cutoff instead.
    """
    if min_voxels < 0:
        raise ConfigError(f"min_voxels must be >= 0, got {min_voxels!r}")
    if not per_component:
        if mask.foreground_count() < min_voxels:
            return BinaryMask.zeros(mask.dims, mask.spacing_mm)
        return mask
    cmap = label_components(mask, connectivity)
    if cmap.n_components == 0:
        return mask
    small = [k + 1 for k, count in enumerate(cmap.counts) if count < min_voxels]
    if not small:
        return mask
    data = mask.data.copy()
    data[np.isin(cmap.labels, small)] = 0.0
    return BinaryMask(data, mask.spacing_mm)
