"""Spike encoding, input corruptions, IDX/CSV ingestion and checkpoints.

Checkpoint container (version 1)::

    FRACSPIKE-CKPT 1\\n
    <header byte length as decimal>\\n
    <UTF-8 JSON header of that length>\\n
    <payload: float64 little-endian weight arrays, layer order, row-major>

The header records the architecture and, for each layer, ``offset`` and
``nbytes`` of its weights relative to the payload start.
"""

from __future__ import annotations

import csv
import gzip
import json
import logging
import struct
import warnings
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .exceptions import FormatError
from .network import LayerSpec, NetworkSpec
from .neuron import NeuronParams
from .surrogate import SurrogateSpec

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
CKPT_MAGIC = b"FRACSPIKE-CKPT"
CKPT_VERSION = 1
ENCODINGS = ("bernoulli", "poisson")


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _clamp(values, what):
    values = np.asarray(values, dtype=np.float64)
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        warnings.warn(f"{what} outside [0, 1] were clamped", RuntimeWarning, stacklevel=3)
        values = np.clip(values, 0.0, 1.0)
    return values


def encode_bernoulli(intensities, T: int, seed=None) -> np.ndarray:
    """Independent Bernoulli spikes per step: shape ``(T, *intensities.shape)``, uint8."""
    p = _clamp(intensities, "intensities")
    rng = _rng(seed)
    return (rng.random((T,) + p.shape) < p).astype(np.uint8)


def encode_poisson(rates, T: int, seed=None) -> np.ndarray:
    """Rate coding with at most one spike per step, fired with probability ``min(rate, 1)``."""
    r = _clamp(rates, "rates")
    rng = _rng(seed)
    return (rng.random((T,) + r.shape) < np.minimum(r, 1.0)).astype(np.uint8)


def encode(kind: str, values, T: int, seed=None) -> np.ndarray:
    if kind == "bernoulli":
        return encode_bernoulli(values, T, seed)
    if kind == "poisson":
        return encode_poisson(values, T, seed)
    raise ValueError(f"unknown encoding {kind!r}; expected one of {ENCODINGS}")


def inject_gaussian_noise(spikes, sigma: float, seed=None) -> np.ndarray:
    """Real-valued ``spikes + N(0, sigma^2)``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    out = np.asarray(spikes, dtype=np.float64)
    if sigma == 0:
        return out.copy()
    return out + _rng(seed).normal(0.0, sigma, size=out.shape)


def discard_spikes(spikes, p: float, seed=None) -> np.ndarray:
    """Drop each spike independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("discard probability must lie in [0, 1]")
    out = np.asarray(spikes, dtype=np.float64)
    if p == 0:
        return out.copy()
    keep = _rng(seed).random(out.shape) >= p
    return out * keep


def occlude(spikes, fraction: float, side: int = 28) -> np.ndarray:
    """Zero a centred square covering ``fraction`` of a ``side x side`` feature grid."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("occlusion fraction must lie in [0, 1]")
    out = np.array(spikes, dtype=np.float64)
    if out.shape[-1] != side * side:
        raise ValueError(f"features ({out.shape[-1]}) do not form a {side}x{side} grid")
    width = int(round(side * np.sqrt(fraction)))
    if width == 0:
        return out
    lo = (side - width) // 2
    grid = out.reshape(out.shape[:-1] + (side, side))
    grid[..., lo : lo + width, lo : lo + width] = 0.0
    return grid.reshape(out.shape)


# -- IDX -------------------------------------------------------------------


def _open_bytes(path: PathLike) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx(path: PathLike, scale: bool = True) -> np.ndarray:
    """Parse an IDX image (``0x803``) or label (``0x801``) file.

    Images are flattened row-major to ``(n, rows*cols)`` and, with ``scale``,
    divided by 255. Gzip-compressed files are accepted.
    """
    raw = _open_bytes(path)
    if len(raw) < 8:
        raise FormatError(f"{path}: file too short for an IDX header", offset=len(raw))
    magic, n = struct.unpack(">II", raw[:8])
    if magic == IDX_LABELS:
        need = 8 + n
        if len(raw) < need:
            raise FormatError(f"{path}: truncated label payload ({len(raw)} of {need} bytes)", offset=len(raw))
        return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    if magic == IDX_IMAGES:
        if len(raw) < 16:
            raise FormatError(f"{path}: truncated image header", offset=len(raw))
        rows, cols = struct.unpack(">II", raw[8:16])
        need = 16 + n * rows * cols
        if len(raw) < need:
            raise FormatError(f"{path}: truncated image payload ({len(raw)} of {need} bytes)", offset=len(raw))
        data = np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(n, rows * cols)
        return data / 255.0 if scale else data.copy()
    raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}", offset=0)


def save_idx(path: PathLike, array, compress: bool = False) -> None:
    """Write uint8 labels ``(n,)`` or images ``(n, rows, cols)`` as IDX."""
    arr = np.asarray(array)
    if arr.ndim == 1:
        header = struct.pack(">II", IDX_LABELS, arr.shape[0])
    elif arr.ndim == 3:
        header = struct.pack(">IIII", IDX_IMAGES, *arr.shape)
    else:
        raise ValueError("IDX writer takes (n,) labels or (n, rows, cols) images")
    blob = header + arr.astype(np.uint8).tobytes()
    Path(path).write_bytes(gzip.compress(blob, mtime=0) if compress else blob)


def load_idx_dataset(images: PathLike, labels: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    X = load_idx(images)
    y = load_idx(labels)
    if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
        raise FormatError(f"image/label files disagree: {X.shape} vs {y.shape}")
    return X, y


def load_csv_dataset(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    """Header row, one sample per line, integer label in the last column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV") from None
        rows = [r for r in reader if r]
    if not rows:
        raise FormatError(f"{path}: no samples after the header")
    try:
        arr = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric entry ({exc})") from None
    if arr.shape[1] != len(header):
        raise FormatError(f"{path}: rows have {arr.shape[1]} columns, header has {len(header)}")
    return arr[:, :-1], arr[:, -1].astype(np.int64)


def save_csv_dataset(path: PathLike, X, y) -> None:
    X = np.asarray(X)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(X.shape[1])] + ["label"])
        for row, label in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


# -- checkpoints -----------------------------------------------------------


def _layer_meta(layer: LayerSpec) -> dict:
    p = layer.neuron
    return {
        "in_dim": layer.in_dim,
        "out_dim": layer.out_dim,
        "tau_alpha": p.tau_alpha,
        "theta": p.theta,
        "R": p.R,
        "reset": p.reset,
        "model": p.model,
        "surrogate": {"kind": p.surrogate.kind, "scale": p.surrogate.scale},
    }


def save_checkpoint(spec: NetworkSpec, path: PathLike, extra: dict = None) -> None:
    layers, payload, offset = [], [], 0
    for layer in spec.layers:
        blob = np.ascontiguousarray(layer.W, dtype="<f8").tobytes()
        meta = _layer_meta(layer)
        meta.update(offset=offset, nbytes=len(blob))
        layers.append(meta)
        payload.append(blob)
        offset += len(blob)
    header = {
        "format_version": CKPT_VERSION,
        "alpha": spec.alpha,
        "smooth": spec.smooth,
        "layers": layers,
        "payload_bytes": offset,
        "extra": extra or {},
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + b" " + str(CKPT_VERSION).encode() + b"\n")
        fh.write(str(len(hdr)).encode() + b"\n")
        fh.write(hdr + b"\n")
        for blob in payload:
            fh.write(blob)


def read_checkpoint_header(path: PathLike) -> Tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    first = raw.find(b"\n")
    if first < 0 or not raw.startswith(CKPT_MAGIC + b" "):
        raise FormatError(f"{path}: not a checkpoint (bad magic line)", offset=0)
    try:
        version = int(raw[len(CKPT_MAGIC) + 1 : first])
    except ValueError:
        raise FormatError(f"{path}: unreadable format version", offset=len(CKPT_MAGIC) + 1) from None
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version} (expected {CKPT_VERSION})")
    second = raw.find(b"\n", first + 1)
    try:
        hlen = int(raw[first + 1 : second])
    except ValueError:
        raise FormatError(f"{path}: unreadable header length", offset=first + 1) from None
    start = second + 1
    if second < 0 or start + hlen + 1 > len(raw):
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupted header (version {version}): {exc}", offset=start) from None
    if raw[start + hlen : start + hlen + 1] != b"\n":
        raise FormatError(f"{path}: header length does not match header", offset=start + hlen)
    return header, raw[start + hlen + 1 :]


def load_checkpoint(path: PathLike) -> NetworkSpec:
    header, payload = read_checkpoint_header(path)
    try:
        metas = header["layers"]
        alpha = header["alpha"]
    except (KeyError, TypeError):
        raise FormatError(f"{path}: header lacks layers/alpha") from None
    expected = 0
    layers = []
    for i, meta in enumerate(metas):
        shape = (int(meta["out_dim"]), int(meta["in_dim"]))
        nbytes = int(meta["nbytes"])
        off = int(meta["offset"])
        if nbytes != 8 * shape[0] * shape[1] or off != expected:
            raise FormatError(f"{path}: layer {i} offset/size inconsistent with its shape")
        if off + nbytes > len(payload):
            raise FormatError(
                f"{path}: payload truncated in layer {i} (need {off + nbytes} bytes, have {len(payload)})"
            )
        W = np.frombuffer(payload, dtype="<f8", count=shape[0] * shape[1], offset=off).reshape(shape)
        sur = meta["surrogate"]
        neuron = NeuronParams(
            alpha=alpha,
            tau_alpha=meta["tau_alpha"],
            R=meta["R"],
            theta=meta["theta"],
            reset=meta["reset"],
            model=meta["model"],
            surrogate=SurrogateSpec(sur["kind"], sur["scale"]),
        )
        layers.append(LayerSpec(W.astype(np.float64), neuron))
        expected = off + nbytes
    if expected != header.get("payload_bytes", expected) or len(payload) != expected:
        raise FormatError(f"{path}: payload size {len(payload)} != declared {header.get('payload_bytes')}")
    return NetworkSpec(layers, alpha=alpha, smooth=bool(header.get("smooth", False)))
