"""Raw map file format.

Layout: 8-byte magic ``FGMAP01\\0``, little-endian u32 rank, one u32 per
dimension, then the float32 payload.  Explanation maps are written
rank-3 as (1, H, W).
"""

import struct

import numpy as np

from .errors import ModelFormatError

MAGIC = b"FGMAP01\x00"


def write_map(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_map(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ModelFormatError("malformed-header", f"{path}: bad map magic")
    (rank,) = struct.unpack_from("<I", data, 8)
    shape = struct.unpack_from(f"<{rank}I", data, 12)
    start = 12 + 4 * rank
    count = int(np.prod(shape))
    payload = data[start:start + 4 * count]
    if len(payload) != 4 * count:
        raise ModelFormatError("checksum-mismatch", f"{path}: map truncated")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
