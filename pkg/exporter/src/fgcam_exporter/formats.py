"""Writers for the FGM model format and FGMAP raw float blobs.

Independent of the engine package on purpose: the byte layout is the
contract between the two sides.

FGM: UTF-8 JSON header, 8-byte magic ``FGCAMv01``, concatenated
little-endian float32 blobs in header order; each header blob entry has
shape, offset (relative to the end of the magic) and CRC-32.

FGMAP: magic ``FGMAP01\\0``, u32 rank, u32 per dimension, float32 data,
all little-endian.
"""

import json
import struct
import zlib

import numpy as np

FGM_MAGIC = b"FGCAMv01"
MAP_MAGIC = b"FGMAP01\x00"

BLOB_FIELDS = {
    "conv2d": ("weights", "bias"),
    "linear": ("weights", "bias"),
    "batchnorm2d": ("gamma", "beta", "running_mean", "running_var"),
}


def write_fgm(path, layers: list[dict], input_shape, class_count: int,
              mean, std) -> None:
    """``layers`` entries carry kind/name, hyperparameters, and numpy
    arrays under the blob field names for their kind."""
    blobs: list[bytes] = []
    offset = 0
    entries = []
    for layer in layers:
        entry = {k: v for k, v in layer.items()
                 if k not in BLOB_FIELDS.get(layer["kind"], ())}
        for fname in BLOB_FIELDS.get(layer["kind"], ()):
            arr = np.ascontiguousarray(layer[fname], dtype="<f4")
            raw = arr.tobytes()
            entry[fname] = {"shape": list(arr.shape), "offset": offset,
                            "crc32": zlib.crc32(raw)}
            blobs.append(raw)
            offset += len(raw)
        entries.append(entry)
    header = {
        "input_shape": list(input_shape),
        "class_count": int(class_count),
        "preprocessing": {"mean": [float(v) for v in mean],
                          "std": [float(v) for v in std]},
        "layers": entries,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(FGM_MAGIC)
        for raw in blobs:
            fh.write(raw)


def write_map(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAP_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_map(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    assert data[:8] == MAP_MAGIC, f"{path}: bad magic"
    (rank,) = struct.unpack_from("<I", data, 8)
    shape = struct.unpack_from(f"<{rank}I", data, 12)
    return np.frombuffer(data[12 + 4 * rank:], dtype="<f4").reshape(shape).copy()


def file_crc32(path) -> int:
    with open(path, "rb") as fh:
        return zlib.crc32(fh.read())
