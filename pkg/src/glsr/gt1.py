"""GT1 raw tensor format.

Layout: magic b"GT1\\0", u32 little-endian rank, rank * u32 dims, then f32
little-endian data in row-major order.  Used for checkpoints and debug dumps.
"""

import struct

import numpy as np

MAGIC = b"GT1\0"


def write_gt1(fh, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def read_gt1(fh):
    magic = fh.read(4)
    if magic != MAGIC:
        raise ValueError(f"bad GT1 magic {magic!r}")
    (rank,) = struct.unpack("<I", fh.read(4))
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    count = int(np.prod(dims)) if rank else 1
    buf = fh.read(4 * count)
    if len(buf) != 4 * count:
        raise ValueError("truncated GT1 tensor data")
    return np.frombuffer(buf, dtype="<f4").reshape(dims).copy()


def save(path, arr):
    with open(path, "wb") as fh:
        write_gt1(fh, arr)


def load(path):
    with open(path, "rb") as fh:
        return read_gt1(fh)
