"""Flat binary checkpoints for the backbone and pairwise parameters.

Layout: a 16-byte header (12-byte magic, uint32 version), a uint32
record count, then one record per array: uint32 ndim, uint64 dims,
float64 row-major data. Backbone-only files hold W0 and W1; extended
files append the K storage, the alpha vector, and a one-element
coefficient-mode code.
"""

import struct

import numpy as np

from .errors import StructuralInputError
from .factors import PairwiseParams
from .gcn import GcnParams

_MAGIC = b"MRFGCN-CKPT\x00"
_VERSION = 1
_MODE_CODES = {"none": 0.0, "layer": 1.0, "edge": 2.0}
_CODE_MODES = {v: k for k, v in _MODE_CODES.items()}


def _write_array(fh, arr):
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes())


def _read_array(fh):
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(fh.read(8 * count), dtype="<f8")
    if data.size != count:
        raise StructuralInputError("checkpoint truncated")
    return data.reshape(shape).copy()


def save_checkpoint(path, params: GcnParams, pairwise: PairwiseParams | None = None):
    arrays = [params.w0, params.w1]
    if pairwise is not None:
        arrays += [pairwise.raw, pairwise.alpha,
                   np.array([_MODE_CODES[pairwise.mode]])]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(arrays)))
        for arr in arrays:
            _write_array(fh, arr)


def load_checkpoint(path):
    """Returns (GcnParams, PairwiseParams or None)."""
    with open(path, "rb") as fh:
        if fh.read(12) != _MAGIC:
            raise StructuralInputError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise StructuralInputError(f"{path}: unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = [_read_array(fh) for _ in range(count)]
    if count == 2:
        return GcnParams(*arrays), None
    if count == 5:
        mode = _CODE_MODES.get(float(arrays[4][0]))
        if mode is None:
            raise StructuralInputError(f"{path}: unknown coefficient mode code")
        return GcnParams(arrays[0], arrays[1]), PairwiseParams(arrays[2], arrays[3], mode)
    raise StructuralInputError(f"{path}: unexpected record count {count}")
