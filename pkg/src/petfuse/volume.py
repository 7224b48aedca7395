"""Core 3D grid types and bit-exact volume I/O.

The canonical interchange format (``MVOL``) is a small JSON header next to a
raw little-endian payload in x-fastest order::

    <name>.mvol.json   {"dims": [nx, ny, nz], "spacing_mm": [sx, sy, sz],
                        "dtype": "f32" | "u8", "order": "x-fastest",
                        "endianness": "little"}
    <name>.mvol.raw    nx*ny*nz values, linear index = x + nx*(y + ny*z)

NIfTI-1 is supported read-only for ingesting scanner exports: uncompressed
single-file ``.nii``, 3D, datatype uint8 / int16 / float32. Spacing is taken
from ``pixdim``; orientation and affine handling are out of scope.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DataFormatError

MVOL_HEADER_SUFFIX = ".mvol.json"
MVOL_RAW_SUFFIX = ".mvol.raw"

_MVOL_DTYPES = {"f32": 4, "u8": 1}

# NIfTI-1 datatype codes we accept (uint8, int16, float32).
_NIFTI_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}
_NIFTI_HEADER_SIZE = 348


@dataclass(frozen=True, eq=False)
class Volume3D:
    """A 3D scalar grid with physical voxel spacing.

    ``data`` is float32 with shape ``(nx, ny, nz)`` indexed ``data[x, y, z]``;
    the linear on-disk order is x-fastest. Instances are treated as immutable
    after construction and are safe to share across threads.
    """

    data: np.ndarray
    spacing_mm: tuple[float, float, float]

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ContractError(f"volume data must be 3D with positive dims, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ContractError("volume data contains non-finite values")
        spacing = tuple(float(s) for s in self.spacing_mm)
        if len(spacing) != 3 or any(not math.isfinite(s) or s <= 0.0 for s in spacing):
            raise ContractError(f"spacing_mm must be three positive finite values, got {self.spacing_mm!r}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing_mm", spacing)
        self._validate()

    def _validate(self) -> None:
        """Subclass hook for extra value constraints."""

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def n_voxels(self) -> int:
        return int(self.data.size)

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing_mm
        return sx * sy * sz


@dataclass(frozen=True, eq=False)
class BinaryMask(Volume3D):
    """A Volume3D whose voxels are exactly 0 or 1."""

    def _validate(self) -> None:
        d = self.data
        if not np.logical_or(d == 0.0, d == 1.0).all():
            raise ContractError("mask voxels must be exactly 0 or 1")

    @classmethod
    def from_volume(cls, vol: Volume3D) -> "BinaryMask":
        return cls(vol.data, vol.spacing_mm)

    @classmethod
    def zeros(cls, dims: tuple[int, int, int], spacing_mm: tuple[float, float, float]) -> "BinaryMask":
        return cls(np.zeros(dims, dtype=np.float32), spacing_mm)

    def foreground_count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True, eq=False)
class ProbabilityVolume(Volume3D):
    """A Volume3D whose voxels are foreground probabilities in [0, 1]."""

    def _validate(self) -> None:
        d = self.data
        if d.min() < 0.0 or d.max() > 1.0:
            raise ContractError("probability voxels must lie in [0, 1]")

    @classmethod
    def from_volume(cls, vol: Volume3D) -> "ProbabilityVolume":
        return cls(vol.data, vol.spacing_mm)

    @classmethod
    def zeros(cls, dims: tuple[int, int, int], spacing_mm: tuple[float, float, float]) -> "ProbabilityVolume":
        return cls(np.zeros(dims, dtype=np.float32), spacing_mm)


def linear_index(x: int, y: int, z: int, dims: tuple[int, int, int]) -> int:
    """x-fastest linear index of voxel (x, y, z)."""
    nx, ny, _ = dims
    return x + nx * (y + ny * z)


def voxel_coords(index: int, dims: tuple[int, int, int]) -> tuple[int, int, int]:
    """Inverse of :func:`linear_index`."""
    nx, ny, _ = dims
    x = index % nx
    y = (index // nx) % ny
    z = index // (nx * ny)
    return x, y, z


def mvol_paths(path: str | Path) -> tuple[Path, Path]:
    """Resolve (header, raw) paths from a header path, raw path or bare prefix."""
    p = Path(path)
    name = p.name
    if name.endswith(MVOL_HEADER_SUFFIX):
        base = name[: -len(MVOL_HEADER_SUFFIX)]
    elif name.endswith(MVOL_RAW_SUFFIX):
        base = name[: -len(MVOL_RAW_SUFFIX)]
    else:
        base = name
    return p.with_name(base + MVOL_HEADER_SUFFIX), p.with_name(base + MVOL_RAW_SUFFIX)


def save_volume(vol: Volume3D, path: str | Path, dtype: str | None = None) -> tuple[Path, Path]:
    """Write ``vol`` as an MVOL header + raw pair; returns the written paths.

    ``dtype`` defaults to ``"u8"`` for masks and ``"f32"`` otherwise. A u8
    payload stores one byte per voxel and requires binary voxel values.
    """
    header_path, raw_path = mvol_paths(path)
    if dtype is None:
        dtype = "u8" if isinstance(vol, BinaryMask) else "f32"
    if dtype not in _MVOL_DTYPES:
        raise ConfigError(f"unsupported MVOL dtype {dtype!r} (expected 'f32' or 'u8')")
    flat = vol.data.ravel(order="F")
    if dtype == "u8":
        if not np.logical_or(flat == 0.0, flat == 1.0).all():
            raise ConfigError("dtype 'u8' requires binary voxel values")
        payload = flat.astype(np.uint8).tobytes()
    else:
        payload = flat.astype("<f4").tobytes()
    header = {
        "dims": [int(d) for d in vol.dims],
        "spacing_mm": [float(s) for s in vol.spacing_mm],
        "dtype": dtype,
        "order": "x-fastest",
        "endianness": "little",
    }
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    raw_path.write_bytes(payload)
    return header_path, raw_path


def _parse_mvol_header(header_path: Path) -> tuple[tuple[int, int, int], tuple[float, float, float], str]:
    try:
        text = header_path.read_text()
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{header_path}: header is not valid UTF-8 JSON") from exc
    try:
        header = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{header_path}: invalid JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise DataFormatError(f"{header_path}: header must be a JSON object")
    if header.get("order") != "x-fastest":
        raise DataFormatError(f"{header_path}: unsupported voxel order {header.get('order')!r}")
    if header.get("endianness") != "little":
        raise DataFormatError(f"{header_path}: unsupported endianness {header.get('endianness')!r}")
    dtype = header.get("dtype")
    if dtype not in _MVOL_DTYPES:
        raise DataFormatError(f"{header_path}: unsupported dtype {dtype!r} (expected 'f32' or 'u8')")
    dims = header.get("dims")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(d, int) and not isinstance(d, bool) and d >= 1 for d in dims)
    ):
        raise DataFormatError(f"{header_path}: dims must be three positive integers, got {dims!r}")
    spacing = header.get("spacing_mm")
    if (
        not isinstance(spacing, list)
        or len(spacing) != 3
        or not all(isinstance(s, (int, float)) and not isinstance(s, bool) for s in spacing)
        or any(not math.isfinite(float(s)) or float(s) <= 0.0 for s in spacing)
    ):
        raise DataFormatError(f"{header_path}: spacing_mm must be three positive finite numbers, got {spacing!r}")
    return (dims[0], dims[1], dims[2]), (float(spacing[0]), float(spacing[1]), float(spacing[2])), dtype


def load_volume(path: str | Path) -> Volume3D:
    """Load an MVOL volume; u8 payloads come back as :class:`BinaryMask`.

    Raises FileNotFoundError for a missing header or raw file and
    :class:`DataFormatError` for header problems, header/raw size mismatches,
    non-finite values and unsupported dtypes.
    """
    header_path, raw_path = mvol_paths(path)
    dims, spacing, dtype = _parse_mvol_header(header_path)
    raw = raw_path.read_bytes()
    n_voxels = dims[0] * dims[1] * dims[2]
    expected = n_voxels * _MVOL_DTYPES[dtype]
    if len(raw) != expected:
        raise DataFormatError(
            f"{raw_path}: size mismatch: header declares {n_voxels} voxels "
            f"({expected} bytes) but the raw file has {len(raw)} bytes"
        )
    if dtype == "f32":
        flat = np.frombuffer(raw, dtype="<f4")
        if not np.isfinite(flat).all():
            raise DataFormatError(f"{raw_path}: payload contains non-finite values")
        data = flat.reshape(dims, order="F").astype(np.float32)
        return Volume3D(data, spacing)
    flat = np.frombuffer(raw, dtype=np.uint8)
    if flat.size and flat.max() > 1:
        raise DataFormatError(f"{raw_path}: u8 payload must contain only 0/1 mask values")
    data = flat.reshape(dims, order="F").astype(np.float32)
    return BinaryMask(data, spacing)


def load_nifti(path: str | Path) -> Volume3D:
    """Read an uncompressed single-file 3D NIfTI-1 volume.

    Accepted datatypes are uint8, int16 and float32; values are cast
    losslessly to float32 and returned unscaled (scl_slope/scl_inter are not
    applied). Both byte orders are handled. Gzip input is rejected
    explicitly; decompress to a plain ``.nii`` first.
    """
    p = Path(path)
    blob = p.read_bytes()
    if blob[:2] == b"\x1f\x8b":
        raise DataFormatError(f"{p}: gzip-compressed NIfTI is not supported; decompress to a plain .nii")
    if len(blob) < _NIFTI_HEADER_SIZE:
        raise DataFormatError(f"{p}: file too short for a NIfTI-1 header ({len(blob)} bytes)")
    byte_order = None
    for candidate in ("<", ">"):
        (sizeof_hdr,) = struct.unpack_from(candidate + "i", blob, 0)
        if sizeof_hdr == _NIFTI_HEADER_SIZE:
            byte_order = candidate
            break
    if byte_order is None:
        raise DataFormatError(f"{p}: not a NIfTI-1 file (sizeof_hdr != 348 in either byte order)")
    magic = blob[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise DataFormatError(f"{p}: bad NIfTI magic {magic!r} ('n+1'/'ni1' absent)")
    if magic == b"ni1\x00":
        raise DataFormatError(f"{p}: two-file NIfTI (.hdr/.img) is not supported")
    dim = struct.unpack_from(byte_order + "8h", blob, 40)
    if dim[0] != 3:
        raise DataFormatError(f"{p}: unsupported dimensionality {dim[0]} (only 3D volumes are supported)")
    nx, ny, nz = int(dim[1]), int(dim[2]), int(dim[3])
    if min(nx, ny, nz) < 1:
        raise DataFormatError(f"{p}: non-positive grid dims {(nx, ny, nz)}")
    datatype, bitpix = struct.unpack_from(byte_order + "2h", blob, 70)
    np_dtype = _NIFTI_DTYPES.get(datatype)
    if np_dtype is None:
        raise DataFormatError(
            f"{p}: unsupported NIfTI datatype code {datatype} (uint8, int16 and float32 are supported)"
        )
    itemsize = np.dtype(np_dtype).itemsize
    if bitpix != itemsize * 8:
        raise DataFormatError(f"{p}: bitpix {bitpix} inconsistent with datatype code {datatype}")
    pixdim = struct.unpack_from(byte_order + "8f", blob, 76)
    spacing = (float(pixdim[1]), float(pixdim[2]), float(pixdim[3]))
    if any(not math.isfinite(s) or s <= 0.0 for s in spacing):
        raise DataFormatError(f"{p}: non-positive or non-finite voxel spacing {spacing}")
    (vox_offset_f,) = struct.unpack_from(byte_order + "f", blob, 108)
    if not math.isfinite(vox_offset_f) or vox_offset_f < _NIFTI_HEADER_SIZE:
        raise DataFormatError(f"{p}: invalid vox_offset {vox_offset_f}")
    vox_offset = int(vox_offset_f)
    n_voxels = nx * ny * nz
    if len(blob) < vox_offset + n_voxels * itemsize:
        raise DataFormatError(
            f"{p}: truncated data section: need {n_voxels * itemsize} bytes at offset {vox_offset}, "
            f"file has {len(blob)} bytes"
        )
    flat = np.frombuffer(blob, dtype=np.dtype(np_dtype).newbyteorder(byte_order), count=n_voxels, offset=vox_offset)
    if np_dtype is np.float32 and not np.isfinite(flat).all():
        raise DataFormatError(f"{p}: data section contains non-finite values")
    data = flat.astype(np.float32).reshape((nx, ny, nz), order="F")
    return Volume3D(data, spacing)
