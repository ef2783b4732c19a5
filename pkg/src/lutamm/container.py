"""Little-endian binary container plus CSV matrix I/O.

Container layout (all integers little-endian):

    offset  size  field
    0       4     magic b"LAMM"
    4       2     format version (currently 1)
    6       4     meta_len, length of the UTF-8 JSON metadata block
    10      -     metadata JSON: {"kind": ..., plus kind-specific fields}
    -       4     array count
    per array:
            2     name length, then UTF-8 name
            1     dtype code (see _DTYPES)
            1     ndim
            8*nd  uint64 dims
            -     raw C-order little-endian payload

One file holds one object: a matrix, a codebook, a PSum table, or a trainer
checkpoint (which is simply metadata plus several named arrays).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import InvalidInputError
from .metrics import LutPrecision
from .vq import Codebook, PSumTable

MAGIC = b"LAMM"
VERSION = 1

_DTYPES = {
    1: np.dtype("<f8"),
    2: np.dtype("<f4"),
    3: np.dtype("<i1"),
    4: np.dtype("<i4"),
    5: np.dtype("<i8"),
}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


def save_container(path: str, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    meta = dict(meta)
    meta["kind"] = kind
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            dtype = arr.dtype.newbyteorder("<")
            if dtype not in _DTYPE_CODES:
                raise InvalidInputError(f"unsupported dtype {arr.dtype} for array {name!r}")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<BB", _DTYPE_CODES[dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype(dtype, copy=False).tobytes(order="C"))


def load_container(path: str) -> tuple[str, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise InvalidInputError(f"{path}: bad magic, not a container file")
        version, meta_len = struct.unpack("<HI", fh.read(6))
        if version != VERSION:
            raise InvalidInputError(f"{path}: unsupported container version {version}")
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            dtype = _DTYPES[code]
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            arrays[name] = np.frombuffer(fh.read(n_bytes), dtype=dtype).reshape(shape).copy()
    return meta.pop("kind", "unknown"), meta, arrays


def save_matrix(path: str, a: np.ndarray) -> None:
    save_container(path, "matrix", {}, {"data": np.asarray(a, dtype=np.float64)})


def load_matrix(path: str) -> np.ndarray:
    kind, _, arrays = load_container(path)
    if kind != "matrix" or "data" not in arrays:
        raise InvalidInputError(f"{path}: not a matrix container")
    return arrays["data"]


def save_matrix_csv(path: str, a: np.ndarray) -> None:
    np.savetxt(path, np.asarray(a, dtype=np.float64), delimiter=",", fmt="%.17g")


def load_matrix_csv(path: str) -> np.ndarray:
    try:
        a = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: cannot parse CSV matrix: {exc}") from exc
    if a.size == 0:
        raise InvalidInputError(f"{path}: empty CSV matrix")
    return a


def save_codebook(path: str, codebook: Codebook) -> None:
    save_container(
        path,
        "codebook",
        {"input_dim": codebook.input_dim},
        {"centroids": codebook.centroids},
    )


def load_codebook(path: str) -> Codebook:
    kind, meta, arrays = load_container(path)
    if kind != "codebook":
        raise InvalidInputError(f"{path}: not a codebook container")
    return Codebook(arrays["centroids"], input_dim=int(meta["input_dim"]))


def save_psum_table(path: str, table: PSumTable) -> None:
    arrays = {"entries": table.entries}
    if table.scales is not None:
        arrays["scales"] = table.scales.astype(np.float64)
    save_container(
        path,
        "psum_table",
        {"precision": table.precision.value, "tile_n": table.tile_n},
        arrays,
    )


def load_psum_table(path: str) -> PSumTable:
    kind, meta, arrays = load_container(path)
    if kind != "psum_table":
        raise InvalidInputError(f"{path}: not a PSum-table container")
    precision = LutPrecision(meta["precision"])
    entries = arrays["entries"]
    entries = entries.astype(np.int8 if precision == LutPrecision.INT8 else np.float32)
    scales = arrays.get("scales")
    return PSumTable(
        entries,
        precision,
        scales=None if scales is None else scales.astype(np.float32),
        tile_n=int(meta["tile_n"]),
    )
