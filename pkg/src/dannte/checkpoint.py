"""Versioned, deterministic checkpoint files.

Layout::

    DANNTE-CKPT 1\\n
    <header length in bytes>\\n
    <JSON header, sorted keys>
    <raw little-endian float64 arrays, concatenated in header order>

The header lists every array with its shape and byte offset, the scaling
statistics, the training config, and the architecture. Nothing time- or
host-dependent is written, so identical models give identical bytes. The
domain head is stored but flagged ``discardable``; :func:`load_predictor`
skips it.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import layers as L
from .data import StandardizationStats
from .errors import DataError

MAGIC = b"DANNTE-CKPT"
VERSION = 1
_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    model: L.DannteModel
    stats: StandardizationStats
    config: dict


def _architecture(model: L.DannteModel) -> dict:
    ext = model.extractor
    arch = {
        "extractor": "lstm" if isinstance(ext, L.LstmParams) else "feedforward",
        "input_size": ext.input_size,
        "hidden_size": ext.hidden_size,
        "regressor": [layer.activation for layer in model.regressor.layers],
        "domain_head": [layer.activation for layer in model.domain_head.layers],
    }
    if isinstance(ext, L.FeedforwardParams):
        arch["window"] = ext.window
    return arch


def encode(model: L.DannteModel, stats: StandardizationStats, config: Optional[dict] = None) -> bytes:
    arrays = {f"stats.{k}": v for k, v in stats.arrays().items()}
    arrays.update(model.parameters())
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset,
                        "discardable": name.startswith("domain_head.")})
        chunks.append(data)
        offset += len(data)
    header = {
        "format": "dannte-checkpoint",
        "version": VERSION,
        "byteorder": "little",
        "dtype": "float64",
        "lambda": model.lam,
        "architecture": _architecture(model),
        "config": config or {},
        "arrays": entries,
        "payload_bytes": offset,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=True).encode()
    return MAGIC + b" " + str(VERSION).encode() + b"\n" + str(len(head)).encode() + b"\n" + head + b"".join(chunks)


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, model: L.DannteModel, stats: StandardizationStats, config: Optional[dict] = None) -> None:
    path = Path(path)
    _atomic_write(path, encode(model, stats, config))


def _parse(blob: bytes, origin: str) -> tuple[dict, memoryview]:
    try:
        first, rest = blob.split(b"\n", 1)
        magic, version = first.split(b" ")
        size_line, rest = rest.split(b"\n", 1)
        size = int(size_line)
    except ValueError:
        raise DataError(f"{origin}: not a checkpoint file") from None
    if magic != MAGIC:
        raise DataError(f"{origin}: not a checkpoint file")
    if int(version) != VERSION:
        raise DataError(f"{origin}: unsupported checkpoint version {int(version)}")
    try:
        header = json.loads(rest[:size].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{origin}: corrupt header ({exc})") from None
    payload = memoryview(rest)[size:]
    if len(payload) != header["payload_bytes"]:
        raise DataError(f"{origin}: payload is {len(payload)} bytes, header says {header['payload_bytes']}")
    return header, payload


def _arrays(header: dict, payload, skip_discardable: bool) -> dict[str, np.ndarray]:
    out = {}
    for e in header["arrays"]:
        if skip_discardable and e["discardable"]:
            continue
        n = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=_DTYPE, count=n, offset=e["offset"])
        out[e["name"]] = arr.astype(np.float64).reshape(e["shape"])
    return out


def _head(arrs: dict, prefix: str, activations: list[str]) -> L.HeadParams:
    return L.HeadParams([
        L.DenseLayer(arrs[f"{prefix}.{k}.weight"], arrs[f"{prefix}.{k}.bias"], act)
        for k, act in enumerate(activations)
    ])


def _extractor(arrs: dict, arch: dict):
    if arch["extractor"] == "lstm":
        return L.LstmParams(arrs["extractor.w"], arrs["extractor.u"], arrs["extractor.b"])
    return L.FeedforwardParams(arrs["extractor.weight"], arrs["extractor.bias"], arch["window"])


def _stats(arrs: dict) -> StandardizationStats:
    return StandardizationStats.from_arrays({k[len("stats."):]: v for k, v in arrs.items()
                                             if k.startswith("stats.")})


def read_header(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such checkpoint")
    return _parse(path.read_bytes(), str(path))[0]


def load(path) -> Checkpoint:
    """Full model including the domain head (for resuming or inspection)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such checkpoint")
    header, payload = _parse(path.read_bytes(), str(path))
    arrs = _arrays(header, payload, skip_discardable=False)
    arch = header["architecture"]
    model = L.DannteModel(_extractor(arrs, arch), _head(arrs, "regressor", arch["regressor"]),
                          _head(arrs, "domain_head", arch["domain_head"]), header["lambda"])
    return Checkpoint(model, _stats(arrs), header["config"])


@dataclass
class Predictor:
    """Extractor plus regressor only; the domain head is never loaded."""

    extractor: object
    regressor: L.HeadParams
    stats: StandardizationStats

    def embed(self, raw_sequences) -> np.ndarray:
        x = self.stats.transform_features(np.asarray(raw_sequences, dtype=np.float64))
        return L.encode_params(self.extractor, x)

    def predict_standardized(self, raw_sequences) -> np.ndarray:
        return L.regress_params(self.regressor, self.embed(raw_sequences))

    def predict(self, raw_sequences) -> np.ndarray:
        """Predictions in the original units of ``y``."""
        return self.stats.inverse_y(self.predict_standardized(raw_sequences))


def load_predictor(path) -> Predictor:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such checkpoint")
    header, payload = _parse(path.read_bytes(), str(path))
    arrs = _arrays(header, payload, skip_discardable=True)
    arch = header["architecture"]
    return Predictor(_extractor(arrs, arch), _head(arrs, "regressor", arch["regressor"]), _stats(arrs))
