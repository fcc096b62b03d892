"""File formats: raw tensors and parameter checkpoints.

Raw-tensor files carry one ASCII header line
``dims: d1 d2 ...; dtype: f32; order: row-major`` followed by the
little-endian float32 payload.

Checkpoints are a self-describing container: a JSON header with run
metadata and a directory of named arrays (name, shape, dtype), followed
by the concatenated little-endian payloads. Loading validates the magic,
every byte count, and (via the caller) shapes against the model.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .errors import CheckpointError, InputError

_CKPT_MAGIC = "MRCK"
_CKPT_VERSION = 1


def write_raw_tensor(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.float32)
    header = "dims: " + " ".join(str(d) for d in array.shape) + "; dtype: f32; order: row-major\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(array.astype("<f4").tobytes())


def read_raw_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", errors="replace").strip()
        payload = f.read()
    try:
        dims_part, dtype_part, order_part = (p.strip() for p in header.split(";"))
        dims = tuple(int(d) for d in dims_part.removeprefix("dims:").split())
        dtype = dtype_part.removeprefix("dtype:").strip()
        order = order_part.removeprefix("order:").strip()
    except (ValueError, AttributeError):
        raise InputError(f"malformed raw-tensor header: {header!r}") from None
    if dtype != "f32" or order != "row-major":
        raise InputError(f"unsupported raw-tensor encoding: {header!r}")
    count = int(np.prod(dims)) if dims else 1
    if len(payload) != 4 * count:
        raise InputError(f"raw-tensor payload holds {len(payload)} bytes, expected {4 * count}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def config_digest(flat_config: dict) -> str:
    canonical = json.dumps(flat_config, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    directory = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype not in (np.float32, np.float64):
            raise InputError(f"checkpoint arrays must be float32/float64, got {arr.dtype} for {name}")
        code = "f4" if arr.dtype == np.float32 else "f8"
        directory.append({"name": name, "shape": list(arr.shape), "dtype": code})
        blobs.append(arr.astype("<" + code).tobytes())
    header = {"magic": _CKPT_MAGIC, "version": _CKPT_VERSION, "meta": meta, "arrays": directory}
    with open(path, "wb") as f:
        f.write((json.dumps(header) + "\n").encode())
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        line = f.readline()
        payload = f.read()
    try:
        header = json.loads(line)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    if header.get("magic") != _CKPT_MAGIC or header.get("version") != _CKPT_VERSION:
        raise CheckpointError("not a recognised checkpoint file")
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["arrays"]:
        dtype = np.dtype("<" + entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dtype.itemsize
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"truncated checkpoint while reading {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(entry["shape"]).copy()
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError("trailing bytes after the final checkpoint array")
    return arrays, header["meta"]


def restore_params(params: dict, arrays: dict[str, np.ndarray]) -> None:
    """Copies checkpoint arrays into live parameter tensors, rejecting any
    name or shape mismatch."""
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise CheckpointError(
            f"parameter names mismatch: missing {sorted(missing)[:4]}, unexpected {sorted(extra)[:4]}"
        )
    for name, tensor in params.items():
        if tuple(arrays[name].shape) != tuple(tensor.data.shape):
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {arrays[name].shape} vs model {tensor.data.shape}"
            )
        tensor.data = arrays[name].astype(tensor.data.dtype)
