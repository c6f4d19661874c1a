"""On-disk formats: the MKSP1 sample container, the weights file and key=value configs.

Containers are little-endian.  Layout::

    b"MKSP1"
    record(header JSON)            # sorted keys, UTF-8
    record(maps, complex64)        # (coils, H, W), real/imag interleaved
    record(sample) * n_samples

where ``record(payload) = u32 len | payload | u32 crc32(payload)``.  Image
containers (``content == "images"``) carry complex64 ``(H, W)`` planes
instead of maps and samples.
"""
from __future__ import annotations

from collections import OrderedDict
import io
import json
import os
import re
import struct
import zlib

import numpy as np
import torch

from .acquisition import ScanOrder
from .motion import MotionTrace
from .network import CascadeNet, NetworkConfig
from .numerics import RigidTransform
from .training import Dataset, TrainSample

CONTAINER_MAGIC = b"MKSP1"
WEIGHTS_MAGIC = b"MDCW1"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """A file does not follow one of the formats above."""


# -- low-level helpers -------------------------------------------------------

def _complex_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<c8").tobytes()


def _complex_from(buf: bytes, shape) -> np.ndarray:
    n = int(np.prod(shape))
    if len(buf) != 8 * n:
        raise FormatError(f"expected {8 * n} bytes of complex data, got {len(buf)}")
    return np.frombuffer(buf, dtype="<c8").reshape(shape).astype(np.complex128)


def _write_record(fh, payload: bytes) -> None:
    fh.write(struct.pack("<I", len(payload)))
    fh.write(payload)
    fh.write(struct.pack("<I", zlib.crc32(payload)))


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def _read_record(fh, what: str) -> bytes:
    (n,) = struct.unpack("<I", _read_exact(fh, 4, what))
    payload = _read_exact(fh, n, what)
    (crc,) = struct.unpack("<I", _read_exact(fh, 4, what))
    if zlib.crc32(payload) != crc:
        raise FormatError(f"CRC32 mismatch in {what}")
    return payload


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


# -- sample container --------------------------------------------------------

def _sample_payload(s: TrainSample) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<qII", s.seed, s.dp_pose, len(s.trace.timings)))
    for t, tr in zip(s.trace.timings, s.trace.transforms):
        out.write(struct.pack("<qddd", t, tr.angle, tr.shift_x, tr.shift_y))
    out.write(np.asarray(s.mask, dtype=np.uint8).tobytes())
    out.write(_complex_bytes(s.k_cor))
    out.write(_complex_bytes(s.target))
    return out.getvalue()


def _parse_sample(payload: bytes, n_coils: int, h: int, w: int) -> TrainSample:
    buf = io.BytesIO(payload)
    seed, dp_pose, n_motions = struct.unpack("<qII", _read_exact(buf, 16, "sample header"))
    timings, transforms = [], []
    for _ in range(n_motions):
        t, angle, sx, sy = struct.unpack("<qddd", _read_exact(buf, 32, "motion"))
        timings.append(t)
        transforms.append(RigidTransform(angle, sx, sy))
    mask = np.frombuffer(_read_exact(buf, w, "mask"), dtype=np.uint8).astype(np.float64)
    if not np.all((mask == 0) | (mask == 1)):
        raise FormatError("mask is not binary")
    k_cor = _complex_from(_read_exact(buf, 8 * n_coils * h * w, "k-space"), (n_coils, h, w))
    target = _complex_from(_read_exact(buf, 8 * h * w, "target"), (h, w))
    if buf.read(1):
        raise FormatError("trailing bytes in sample record")
    return TrainSample(seed=seed, trace=MotionTrace(tuple(timings), tuple(transforms)),
                       dp_pose=dp_pose, mask=mask, k_cor=k_cor, target=target)


def write_dataset(dataset: Dataset, path: str | os.PathLike, extra: dict | None = None) -> None:
    n_coils, h, w = dataset.maps.shape
    header = {
        "content": "dataset",
        "version": FORMAT_VERSION,
        "scan_order": {"kind": dataset.order.kind, "width": dataset.order.n_columns,
                       "columns": dataset.order.columns.tolist()},
        "height": h, "width": w, "n_coils": n_coils,
        "n_samples": len(dataset.samples),
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        _write_record(fh, _json_bytes(header))
        _write_record(fh, _complex_bytes(dataset.maps))
        for s in dataset.samples:
            _write_record(fh, _sample_payload(s))


def _read_header(fh) -> dict:
    if _read_exact(fh, len(CONTAINER_MAGIC), "magic") != CONTAINER_MAGIC:
        raise FormatError("bad magic: not an MKSP1 container")
    try:
        header = json.loads(_read_record(fh, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable container header: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported container version {header.get('version')!r}")
    return header


def read_container_header(path: str | os.PathLike) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh)


def read_dataset(path: str | os.PathLike) -> tuple[Dataset, dict]:
    """Return the dataset and its header ``extra`` dictionary."""
    with open(path, "rb") as fh:
        header = _read_header(fh)
        if header.get("content") != "dataset":
            raise FormatError(f"{path} holds {header.get('content')!r}, not a dataset")
        so = header["scan_order"]
        order = ScanOrder(so["kind"], so["width"], np.array(so["columns"], dtype=np.int64))
        n_coils, h, w = header["n_coils"], header["height"], header["width"]
        maps = _complex_from(_read_record(fh, "maps"), (n_coils, h, w))
        samples = [_parse_sample(_read_record(fh, f"sample {i}"), n_coils, h, w)
                   for i in range(header["n_samples"])]
        if fh.read(1):
            raise FormatError("trailing bytes after last sample")
    return Dataset(order=order, maps=maps, samples=samples), header.get("extra", {})


def write_images(images: dict[str, np.ndarray], path: str | os.PathLike) -> None:
    """Store named complex images (all of one shape) in an image container."""
    names = list(images)
    shape = np.shape(images[names[0]]) if names else (0, 0)
    header = {"content": "images", "version": FORMAT_VERSION, "names": names,
              "height": int(shape[0]), "width": int(shape[1])}
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        _write_record(fh, _json_bytes(header))
        for n in names:
            if np.shape(images[n]) != shape:
                raise ValueError("all images in a container must share one shape")
            _write_record(fh, _complex_bytes(images[n]))


def read_images(path: str | os.PathLike) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        header = _read_header(fh)
        if header.get("content") != "images":
            raise FormatError(f"{path} holds {header.get('content')!r}, not images")
        shape = (header["height"], header["width"])
        return OrderedDict((n, _complex_from(_read_record(fh, n), shape)) for n in header["names"])


# -- weights -----------------------------------------------------------------

def save_weights(model: CascadeNet, path: str | os.PathLike, meta: dict | None = None) -> None:
    """Magic, config echo (JSON), then named float32 tensors with explicit shapes."""
    state = model.state_dict()
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        cfg = _json_bytes({"config": model.cfg.to_dict(), "meta": meta or {}})
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(state)))
        for name, t in state.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", t.dim()))
            fh.write(struct.pack(f"<{t.dim()}I", *t.shape))
            fh.write(t.detach().cpu().numpy().astype("<f4").tobytes())


def load_weights(path: str | os.PathLike) -> tuple[CascadeNet, dict]:
    """Rebuild the model from a weights file; returns ``(model, meta)``."""
    with open(path, "rb") as fh:
        if fh.read(len(WEIGHTS_MAGIC)) != WEIGHTS_MAGIC:
            raise FormatError(f"bad magic: {path} is not an MDCW1 weights file")
        (n,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        try:
            echo = json.loads(_read_exact(fh, n, "config").decode("utf-8"))
            cfg = NetworkConfig(**echo["config"])
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"unreadable weights config: {exc}") from exc
        model = CascadeNet(cfg)
        expected = model.state_dict()
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        if count != len(expected):
            raise FormatError(f"weights file has {count} tensors, config implies {len(expected)}")
        state = OrderedDict()
        for _ in range(count):
            (ln,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, ln, "tensor name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "shape"))
            if name not in expected or tuple(expected[name].shape) != shape:
                raise FormatError(f"unexpected tensor {name!r} with shape {shape}")
            data = np.frombuffer(_read_exact(fh, 4 * int(np.prod(shape)), name), dtype="<f4")
            state[name] = torch.from_numpy(data.reshape(shape).astype(np.float32))
        if fh.read(1):
            raise FormatError("trailing bytes in weights file")
    model.load_state_dict(state)
    return model, echo.get("meta", {})


# -- key=value configs -------------------------------------------------------

def parse_config(text: str, defaults: dict) -> dict:
    """Flat ``key=value`` lines (``#`` comments).  Unknown keys are errors.

    Values are coerced to the type of the default; ``None`` defaults stay strings.
    """
    out = dict(defaults)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = re.sub(r"\s*=\s*", "=", raw.split("#", 1)[0].strip())
        if not line:
            continue
        for tok in line.split():
            if "=" not in tok:
                raise ValueError(f"config line {lineno}: expected key=value, got {tok!r}")
            key, val = tok.split("=", 1)
            if key not in defaults:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            out[key] = _coerce(val, defaults[key], key)
    return out


def _coerce(val: str, default, key: str):
    try:
        if isinstance(default, bool):
            if val.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return val.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(val)
        if isinstance(default, float):
            return float(val)
    except ValueError:
        raise ValueError(f"bad value {val!r} for {key}") from None
    return val


def load_config(path: str | os.PathLike | None, defaults: dict) -> dict:
    if path is None:
        return dict(defaults)
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), defaults)
