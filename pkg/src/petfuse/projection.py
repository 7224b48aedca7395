"""Maximum intensity projections of PET volumes and brain removal.

De-braining zeroes the largest connected component of the suprathreshold
uptake mask in 3D, then projections are recomputed, so the X and Y MIPs of
one de-brained volume are mutually consistent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .components import DEFAULT_CONNECTIVITY, label_components
from .errors import ConfigError
from .volume import Volume3D

AXES = ("X", "Y", "Z")
_AXIS_INDEX = {"X": 0, "Y": 1, "Z": 2}

DEFAULT_SUV_THRESHOLD = 3.0


@dataclass(frozen=True, eq=False)
class MIP2D:
    """A 2D maximum intensity projection.

    ``data`` is indexed by the two non-projected axes in ascending axis
    order, e.g. axis "Y" yields a (nx, nz) grid.
    """

    axis: str
    data: np.ndarray
    source_dims: tuple[int, int, int]

    def __post_init__(self) -> None:
        if self.axis not in AXES:
            raise ConfigError(f"axis must be one of {AXES}, got {self.axis!r}")

    @property
    def dims(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]


def mip(vol: Volume3D, axis: str) -> MIP2D:
    """Project ``vol`` along ``axis``, keeping the per-line maximum."""
    if axis not in _AXIS_INDEX:
        raise ConfigError(f"axis must be one of {AXES}, got {axis!r}")
    data = vol.data.max(axis=_AXIS_INDEX[axis])
    return MIP2D(axis, np.asarray(data, dtype=np.float32), vol.dims)


def mip_as_volume(m: MIP2D, source_spacing_mm: tuple[float, float, float]) -> Volume3D:
    """Embed a MIP as an (n1, n2, 1) volume so it can be persisted as MVOL."""
    kept = [i for i in range(3) if i != _AXIS_INDEX[m.axis]]
    spacing = (source_spacing_mm[kept[0]], source_spacing_mm[kept[1]], 1.0)
    return Volume3D(m.data[:, :, np.newaxis], spacing)


def debrain(
    pet: Volume3D,
    suv_threshold: float = DEFAULT_SUV_THRESHOLD,
    connectivity: int = DEFAULT_CONNECTIVITY,
) -> Volume3D:
    """Zero the largest connected suprathreshold uptake component.

    Voxels of the single largest component (by voxel count, ties broken by
    lowest label) of ``pet > suv_threshold`` are set to 0; everything else is
    unchanged. With no suprathreshold voxels the input is returned as-is.
    """
    if suv_threshold <= 0.0:
        raise ConfigError(f"suv_threshold must be > 0, got {suv_threshold!r}")
    above = pet.data > suv_threshold
    if not above.any():
        return pet
    cmap = label_components(above, connectivity)
    largest = int(np.argmax(cmap.counts)) + 1
    data = pet.data.copy()
    data[cmap.labels == largest] = 0.0
    return Volume3D(data, pet.spacing_mm)
