"""Trained-model container and the binary model file.

File layout (all integers little-endian)::

    b"XCNN"                       magic
    u32 version                   FORMAT_VERSION
    u32 header_length             bytes of the JSON header
    header                        UTF-8 JSON: architecture, parameter layout/count, config echo
    f64[parameter_count]          parameters, concatenated in ``parameter_shapes`` order (C order)
    u32 crc32                     zlib CRC-32 of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..estimators import CorrelationTriplet, ShrinkageResult, reconstruct_rie
from .network import Architecture, count_parameters, forward, init_params, parameter_shapes
from .tokens import tokens_from_triplet

MAGIC = b"XCNN"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass
class NeuralModel:
    arch: Architecture
    params: dict
    config: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, arch: Architecture | None = None, seed: int = 0, config: dict | None = None) -> "NeuralModel":
        arch = Architecture() if arch is None else arch
        return cls(arch, init_params(arch, np.random.default_rng(seed)), dict(config or {}))

    @property
    def parameter_count(self) -> int:
        return count_parameters(self.params)

    def predict(self, tokens) -> np.ndarray:
        _, s_clean = forward(self.params, tokens.tokens_x, tokens.tokens_y, tokens.s_hat, self.arch.bounded)
        return s_clean

    def clean(self, t: CorrelationTriplet, d=None) -> ShrinkageResult:
        tok, d = tokens_from_triplet(t, d)
        s_clean = self.predict(tok)
        return ShrinkageResult("neural", s_clean, reconstruct_rie(d, s_clean), d)


def _header(model: NeuralModel) -> bytes:
    header = {
        "architecture": model.arch.to_dict(),
        "parameter_count": model.parameter_count,
        "layout": [[name, list(shape)] for name, shape in parameter_shapes(model.arch)],
        "config": model.config,
    }
    return json.dumps(header, sort_keys=True).encode("utf-8")


def model_bytes(model: NeuralModel) -> bytes:
    header = _header(model)
    flat = np.concatenate([model.params[name].ravel() for name, _ in parameter_shapes(model.arch)])
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + flat.astype("<f8").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def save_model(model: NeuralModel, path) -> None:
    Path(path).write_bytes(model_bytes(model))


def parse_model(blob: bytes) -> NeuralModel:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise ModelFormatError("not an XCNN model file")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != crc:
        raise ModelFormatError("checksum mismatch (truncated or corrupted file)")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    header = json.loads(blob[12: 12 + hlen].decode("utf-8"))
    arch = Architecture.from_dict(header["architecture"])
    shapes = parameter_shapes(arch)
    flat = np.frombuffer(blob[12 + hlen: -4], dtype="<f8").astype(np.float64)
    expected = sum(int(np.prod(s)) for _, s in shapes)
    if flat.size != expected or header["parameter_count"] != expected:
        raise ModelFormatError(f"parameter payload has {flat.size} values, expected {expected}")
    params, pos = {}, 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        params[name] = flat[pos: pos + size].reshape(shape).copy()
        pos += size
    return NeuralModel(arch, params, header.get("config", {}))


def load_model(path) -> NeuralModel:
    return parse_model(Path(path).read_bytes())


def read_header(path) -> dict:
    blob = Path(path).read_bytes()
    parse_model(blob)
    (hlen,) = struct.unpack("<I", blob[8:12])
    return json.loads(blob[12: 12 + hlen].decode("utf-8"))
