"""TNSR tensor container and checkpoint directories.

Container layout: ``b"TNSR"``, little-endian u16 version, little-endian u32
header length, UTF-8 JSON header ``{"shape", "dtype", "layout"}``, then the
raw little-endian payload.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f32"
    if arr.dtype == np.float64:
        return "f64"
    raise TypeError(f"TNSR stores f32/f64 only, got {arr.dtype}")


def encode_tensor(arr: np.ndarray, layout: str | None = None) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    tag = _dtype_tag(arr)
    if layout is None:
        layout = "NCHW" if arr.ndim == 4 else "C"
    header = json.dumps({"shape": list(arr.shape), "dtype": tag, "layout": layout}).encode()
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
    return MAGIC + struct.pack("<HI", VERSION, len(header)) + header + payload


def decode_tensor(buf: bytes) -> tuple[np.ndarray, dict]:
    if buf[:4] != MAGIC:
        raise ValueError("not a TNSR container (bad magic)")
    version, hlen = struct.unpack("<HI", buf[4:10])
    if version != VERSION:
        raise ValueError(f"unsupported TNSR version {version}")
    header = json.loads(buf[10:10 + hlen].decode())
    dt = _DTYPES[header["dtype"]]
    shape = tuple(header["shape"])
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(buf, dtype=dt, count=count, offset=10 + hlen)
    return data.reshape(shape).astype(dt.newbyteorder("="), copy=True), header


def save_tensor(path, arr: np.ndarray, layout: str | None = None) -> None:
    Path(path).write_bytes(encode_tensor(arr, layout))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())[0]


def save_checkpoint(directory, module, extra: dict | None = None) -> None:
    """One container per parameter plus Adam moments, indexed by manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, p) in enumerate(module.named_parameters()):
        stem = f"p{i:03d}"
        save_tensor(directory / f"{stem}.tnsr", p.data)
        save_tensor(directory / f"{stem}.m.tnsr", p.adam_m)
        save_tensor(directory / f"{stem}.v.tnsr", p.adam_v)
        entries.append({"name": name, "file": f"{stem}.tnsr", "adam_m": f"{stem}.m.tnsr",
                        "adam_v": f"{stem}.v.tnsr", "step_count": p.step_count,
                        "shape": list(p.shape)})
    manifest = {"format": "dyntex-checkpoint", "version": 1, "parameters": entries}
    if extra:
        manifest["extra"] = extra
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(directory, module) -> dict:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    by_name = dict(module.named_parameters())
    for e in manifest["parameters"]:
        if e["name"] not in by_name:
            raise KeyError(f"checkpoint parameter {e['name']} not in module")
        p = by_name[e["name"]]
        data = load_tensor(directory / e["file"])
        if data.shape != p.shape:
            raise ValueError(f"shape mismatch for {e['name']}: checkpoint {data.shape} vs module {p.shape}")
        p.data = data.astype(p.dtype)
        p.adam_m = load_tensor(directory / e["adam_m"]).astype(p.dtype)
        p.adam_v = load_tensor(directory / e["adam_v"]).astype(p.dtype)
        p.step_count = int(e["step_count"])
        p.grad = np.zeros_like(p.data)
    return manifest.get("extra", {})
