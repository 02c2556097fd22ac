"""Flat binary parameter checkpoints.

Layout: ASCII magic ("FDN1" for the disentanglement network alone, "GCAN1"
for the full bundle), then one record per tensor:

    u32 LE  name length
    bytes   UTF-8 name
    u32 LE  rank
    u32 LE  extent, repeated rank times
    f64 LE  values, C order

Records run to end-of-file; order is the bundle's parameter order, so writes
are deterministic.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor

FDN_MAGIC = b"FDN1"
BUNDLE_MAGIC = b"GCAN1"


def save_tensors(path, named: list[tuple[str, Tensor]], magic: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(magic)
        for name, tensor in named:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            arr = np.ascontiguousarray(tensor.data, dtype=np.float64)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_tensors(path, magic: bytes) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if not raw.startswith(magic):
        raise ValueError(
            f"{path}: bad magic {raw[:len(magic)]!r}, expected {magic!r}"
        )
    pos = len(magic)
    out: dict[str, np.ndarray] = {}
    while pos < len(raw):
        (name_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=pos)
        pos += 8 * count
        out[name] = values.reshape(shape).astype(np.float64)
    if pos != len(raw):
        raise ValueError(f"{path}: trailing bytes after last record")
    return out


def restore_into(named: list[tuple[str, Tensor]], stored: dict[str, np.ndarray]) -> None:
    """Copy stored arrays into existing parameter tensors, by name."""
    for name, tensor in named:
        if name not in stored:
            raise ValueError(f"checkpoint is missing parameter {name!r}")
        if stored[name].shape != tensor.data.shape:
            raise ValueError(
                f"checkpoint parameter {name!r} has shape {stored[name].shape}, "
                f"model expects {tensor.data.shape}"
            )
        tensor.data = stored[name].copy()
    extra = set(stored) - {name for name, _ in named}
    if extra:
        raise ValueError(f"checkpoint has unknown parameters: {sorted(extra)}")


def save_fdn(fdn, path) -> None:
    save_tensors(path, fdn.named_parameters("fdn."), FDN_MAGIC)


def load_fdn(fdn, path) -> None:
    restore_into(fdn.named_parameters("fdn."), load_tensors(path, FDN_MAGIC))


def save_bundle(bundle, path) -> None:
    save_tensors(path, bundle.named_parameters(), BUNDLE_MAGIC)


def load_bundle(bundle, path) -> None:
    restore_into(bundle.named_parameters(), load_tensors(path, BUNDLE_MAGIC))
