"""Array container I/O in the NPY 1.0 layout.

Only a fixed set of little-endian, C-ordered dtypes is accepted so files stay
readable by non-numpy consumers.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from numpy.lib import format as npyformat

SUPPORTED = {
    np.dtype("<c8"), np.dtype("<c16"), np.dtype("<f4"), np.dtype("<f8"), np.dtype("<i8"),
}


class ArrayIOError(IOError):
    pass


class MalformedHeader(ArrayIOError):
    pass


class DtypeMismatch(ArrayIOError):
    pass


class TruncatedPayload(ArrayIOError):
    pass


def write_array(path, array) -> Path:
    a = np.asarray(array)
    if a.dtype == np.bool_:
        a = a.astype(np.int64)
    # np.array keeps 0-d shapes, unlike ascontiguousarray
    a = np.array(a, dtype=a.dtype.newbyteorder("<"), order="C")
    if a.dtype not in SUPPORTED:
        raise DtypeMismatch(f"unsupported dtype {a.dtype}")
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as f:
        npyformat.write_array(f, a, version=(1, 0), allow_pickle=False)
    os.replace(tmp, path)
    return path


def read_array(path, dtype=None) -> np.ndarray:
    """Read a container; if `dtype` is given the stored dtype must match it."""
    with open(path, "rb") as f:
        try:
            version = npyformat.read_magic(f)
        except ValueError as e:
            raise MalformedHeader(f"{path}: {e}") from None
        if version != (1, 0):
            raise MalformedHeader(f"{path}: unsupported container version {version}")
        try:
            shape, fortran, stored = npyformat.read_array_header_1_0(f)
        except ValueError as e:
            raise MalformedHeader(f"{path}: {e}") from None
        if fortran:
            raise MalformedHeader(f"{path}: fortran_order must be false")
        if stored not in SUPPORTED:
            raise DtypeMismatch(f"{path}: unsupported dtype {stored}")
        if dtype is not None and np.dtype(dtype).newbyteorder("<") != stored:
            raise DtypeMismatch(f"{path}: expected {np.dtype(dtype)}, found {stored}")
        count = int(np.prod(shape, dtype=np.int64))
        payload = f.read(count * stored.itemsize)
        if len(payload) != count * stored.itemsize:
            raise TruncatedPayload(
                f"{path}: expected {count * stored.itemsize} bytes, got {len(payload)}"
            )
    return np.frombuffer(payload, dtype=stored).reshape(shape).copy()
