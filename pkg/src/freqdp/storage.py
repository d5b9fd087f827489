"""On-disk formats: the FDP1 binary tensor container, sensitivity-map
bundles, training checkpoints and history CSVs.

FDP1 container layout (little-endian):
    magic  b"FDP1"
    u32    format version (1)
    u32    ndims
    u64[]  dims
    f32[]  payload, product(dims) values
    u32    CRC32 of every preceding byte
"""

from __future__ import annotations

import binascii
import csv
import json
import os
import struct
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dp import SensitivityMap
from .recognizer import ToyRecognizer, TrainConfig

MAGIC = b"FDP1"
FORMAT_VERSION = 1


class TensorFileError(Exception):
    """Base class for FDP1 container errors."""


class BadMagicError(TensorFileError):
    pass


class TruncatedFileError(TensorFileError):
    pass


class CrcMismatchError(TensorFileError):
    pass


def tensor_file_bytes(values: np.ndarray) -> bytes:
    """Serialize an ndarray into the FDP1 container format."""
    arr = np.ascontiguousarray(values, dtype="<f4")
    header = MAGIC + struct.pack("<II", FORMAT_VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    body = header + arr.tobytes()
    return body + struct.pack("<I", binascii.crc32(body))


def write_tensor_file(path, values: np.ndarray) -> None:
    Path(path).write_bytes(tensor_file_bytes(values))


def read_tensor_file(path) -> np.ndarray:
    """Read an FDP1 container; bad magic, truncation and CRC damage
    raise distinct errors."""
    data = Path(path).read_bytes()
    if len(data) < 12 or not data.startswith(MAGIC):
        if data[:4] != MAGIC:
            raise BadMagicError(f"{path}: not an FDP1 file")
        raise TruncatedFileError(f"{path}: header truncated")
    version, ndims = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise TensorFileError(f"{path}: unsupported version {version}")
    dims_end = 12 + 8 * ndims
    if len(data) < dims_end:
        raise TruncatedFileError(f"{path}: dimension list truncated")
    dims = struct.unpack_from(f"<{ndims}Q", data, 12)
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + 4 * count + 4
    if len(data) < expected:
        raise TruncatedFileError(
            f"{path}: payload truncated ({len(data)} < {expected} bytes)"
        )
    if len(data) > expected:
        raise TensorFileError(f"{path}: trailing garbage after CRC")
    (stored_crc,) = struct.unpack_from("<I", data, expected - 4)
    if binascii.crc32(data[: expected - 4]) != stored_crc:
        raise CrcMismatchError(f"{path}: CRC32 mismatch")
    payload = np.frombuffer(data, dtype="<f4", count=count, offset=dims_end)
    return payload.reshape(dims).copy()


def created_at() -> str:
    """ISO timestamp; honors SOURCE_DATE_EPOCH for reproducible output."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def save_sensitivity(s: SensitivityMap, out_dir) -> None:
    """Write a sensitivity map as min/max tensor files plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor_file(out / "r_min.fdp", s.r_min)
    write_tensor_file(out / "r_max.fdp", s.r_max)
    manifest = {
        "shape": list(s.shape),
        "image_count": s.image_count,
        "dataset_id": s.dataset_id,
        "created_at": created_at(),
    }
    (out / "sensitivity.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def load_sensitivity(in_dir) -> SensitivityMap:
    in_dir = Path(in_dir)
    manifest = json.loads((in_dir / "sensitivity.json").read_text())
    r_min = read_tensor_file(in_dir / "r_min.fdp").astype(np.float64)
    r_max = read_tensor_file(in_dir / "r_max.fdp").astype(np.float64)
    return SensitivityMap(
        r_min,
        r_max,
        image_count=manifest.get("image_count", 0),
        dataset_id=manifest.get("dataset_id", ""),
    )


def save_checkpoint(path, theta: np.ndarray, model: ToyRecognizer,
                    cfg: TrainConfig, epoch: int, metrics: dict) -> None:
    """Checkpoint = length-prefixed JSON header + FDP1 tensor blocks.

    Blocks appear in a fixed order: theta, then the model parameters in
    ToyRecognizer.PARAM_NAMES order.
    """
    header = {
        "config": asdict(cfg),
        "epoch": epoch,
        "metrics": metrics,
        "blocks": ["theta", *ToyRecognizer.NORM_NAMES, *ToyRecognizer.PARAM_NAMES],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    blobs = [tensor_file_bytes(theta)]
    blobs += [tensor_file_bytes(getattr(model, n)) for n in ToyRecognizer.NORM_NAMES]
    blobs += [tensor_file_bytes(p) for p in model.params.values()]
    Path(path).write_bytes(
        struct.pack("<Q", len(header_bytes)) + header_bytes + b"".join(blobs)
    )


def load_checkpoint(path):
    """Returns (theta, ToyRecognizer, TrainConfig, header dict)."""
    data = Path(path).read_bytes()
    (header_len,) = struct.unpack_from("<Q", data, 0)
    header = json.loads(data[8 : 8 + header_len])
    offset = 8 + header_len
    blocks = {}
    for name in header["blocks"]:
        version, ndims = struct.unpack_from("<II", data, offset + 4)
        dims = struct.unpack_from(f"<{ndims}Q", data, offset + 12)
        count = int(np.prod(dims)) if dims else 1
        size = 12 + 8 * ndims + 4 * count + 4
        block = data[offset : offset + size]
        blocks[name] = _tensor_from_bytes(block, path)
        offset += size
    cfg_dict = dict(header["config"])
    cfg_dict["milestones"] = tuple(cfg_dict.get("milestones", ()))
    cfg = TrainConfig(**cfg_dict)
    theta = blocks.pop("theta").astype(np.float64)
    model = ToyRecognizer(
        norm_lo=blocks["norm_lo"].astype(np.float64),
        norm_hi=blocks["norm_hi"].astype(np.float64),
        **{k: blocks[k] for k in ToyRecognizer.PARAM_NAMES},
    )
    return theta, model, cfg, header


def _tensor_from_bytes(block: bytes, label) -> np.ndarray:
    if block[:4] != MAGIC:
        raise BadMagicError(f"{label}: bad tensor block")
    (stored_crc,) = struct.unpack_from("<I", block, len(block) - 4)
    if binascii.crc32(block[:-4]) != stored_crc:
        raise CrcMismatchError(f"{label}: tensor block CRC mismatch")
    _, ndims = struct.unpack_from("<II", block, 4)
    dims = struct.unpack_from(f"<{ndims}Q", block, 12)
    count = 1
    for d in dims:
        count *= d
    payload = np.frombuffer(block, dtype="<f4", count=count, offset=12 + 8 * ndims)
    return payload.reshape(dims).copy()


def save_history_csv(path, history) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "loss", "accuracy"])
        writer.writeheader()
        for row in history:
            writer.writerow(row)
