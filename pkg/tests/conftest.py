import struct
import sys

import numpy as np
import pytest

from petfuse.volume import BinaryMask, Volume3D


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("tests.test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def make_volume(data, spacing=(1.0, 1.0, 1.0)):
    return Volume3D(np.asarray(data, dtype=np.float32), spacing)


def make_mask(data, spacing=(1.0, 1.0, 1.0)):
    return BinaryMask(np.asarray(data, dtype=np.float32), spacing)


def random_mask(rng, dims, density=0.5, spacing=(1.0, 1.0, 1.0)):
    return make_mask(rng.random(dims) < density, spacing)


def xfastest_volume(dims, spacing=(1.0, 1.0, 1.0)):
    """Volume whose voxel value equals its x-fastest linear index."""
    n = dims[0] * dims[1] * dims[2]
    data = np.arange(n, dtype=np.float32).reshape(dims, order="F")
    return Volume3D(data, spacing)


def nifti1_bytes(
    dims,
    pixdim=(1.0, 1.0, 1.0),
    datatype=16,
    payload=None,
    magic=b"n+1\x00",
    vox_offset=352.0,
    ndim=3,
):
    """Assemble a single-file NIfTI-1 blob byte by byte."""
    bitpix = {2: 8, 4: 16, 16: 32}[datatype]
    header = bytearray(348)
    struct.pack_into("<i", header, 0, 348)
    struct.pack_into("<8h", header, 40, ndim, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    struct.pack_into("<2h", header, 70, datatype, bitpix)
    struct.pack_into("<8f", header, 76, 1.0, pixdim[0], pixdim[1], pixdim[2], 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, vox_offset)
    header[344:348] = magic
    if payload is None:
        n = dims[0] * dims[1] * dims[2]
        dtype = {2: "<u1", 4: "<i2", 16: "<f4"}[datatype]
        payload = np.arange(n).astype(dtype).tobytes()
    filler = b"\x00" * max(0, int(vox_offset) - 348)
    return bytes(header) + filler + payload
