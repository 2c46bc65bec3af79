"""Versioned binary container for stacks of equally shaped matrices.

Layout (little-endian)::

    offset  size  field
    0       4     magic  b"FTIM"
    4       4     version (uint32, currently 1)
    8       4     dtype tag b"f64\\0"
    12      4     reserved, zero
    16      8     rows (uint64)
    24      8     cols (uint64)
    32      8     nblocks (uint64)
    40      ...   nblocks * rows * cols float64 values, row-major

A single-block matrix can also be stored as CSV for inspection.
"""
import os
import struct
import tempfile

import numpy as np

from .exceptions import ContainerFormatError, DataError

MAGIC = b"FTIM"
VERSION = 1
DTYPE_F64 = b"f64\x00"
HEADER = struct.Struct("<4sI4sIQQQ")
CSV_MAX_ENTRIES = 10**6


def _atomic_write(path, write):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_container(path, blocks):
    """Write a stack of matrices; ``blocks`` is ``(n, rows, cols)`` or a list."""
    if isinstance(blocks, np.ndarray):
        arr = blocks
        if arr.ndim == 2:
            arr = arr[None]
    else:
        blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
        if not blocks:
            raise DataError("block shape is unknown for an empty list; pass an (0, r, c) array")
        shapes = {b.shape for b in blocks}
        if len(shapes) != 1:
            raise DataError(f"blocks have different shapes: {sorted(shapes)}")
        arr = np.stack(blocks)
    if arr.ndim != 3:
        raise DataError(f"expected (n, rows, cols), got shape {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    n, r, c = arr.shape
    header = HEADER.pack(MAGIC, VERSION, DTYPE_F64, 0, r, c, n)
    payload = arr.tobytes()

    def write(fh):
        fh.write(header)
        written = fh.write(payload)
        if written != len(payload):
            raise OSError(f"short write: {written} of {len(payload)} bytes")

    _atomic_write(path, write)


def read_container(path):
    """Read a container written by :func:`write_container` as ``(n, rows, cols)``."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
        if len(head) < HEADER.size:
            raise ContainerFormatError(f"{path}: truncated header ({len(head)} bytes)")
        magic, version, dtype, _, r, c, n = HEADER.unpack(head)
        if magic != MAGIC:
            raise ContainerFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise ContainerFormatError(f"{path}: unsupported container version {version}")
        if dtype != DTYPE_F64:
            raise ContainerFormatError(f"{path}: unsupported dtype tag {dtype!r}")
        expected = n * r * c * 8
        if size - HEADER.size != expected:
            raise ContainerFormatError(
                f"{path}: payload is {size - HEADER.size} bytes, header declares {expected}"
            )
        buf = fh.read(expected)
    return np.frombuffer(buf, dtype="<f8").reshape(n, r, c).astype(float)


def read_matrix(path):
    """Single matrix from a container (first block) or a CSV file."""
    if os.fspath(path).endswith(".csv"):
        return read_csv_matrix(path)
    blocks = read_container(path)
    if blocks.shape[0] != 1:
        raise ContainerFormatError(f"{path}: expected 1 block, found {blocks.shape[0]}")
    return blocks[0]


def write_csv_matrix(path, M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size > CSV_MAX_ENTRIES:
        raise DataError(f"CSV export is limited to {CSV_MAX_ENTRIES} entries")

    def write(fh):
        np.savetxt(fh, M, delimiter=",", fmt="%.17g")

    _atomic_write(path, write)


def read_csv_matrix(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))
