"""Feature extractor, classifier and reconstruction decoder, plus checkpoint I/O."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MAGIC = b"CDND1"


@dataclass
class ModelConfig:
    encoder_widths: tuple[int, ...] = (3, 64, 128, 256)
    classifier_widths: tuple[int, ...] = (256, 128)
    decoder_widths: tuple[int, ...] = (256, 256)
    num_classes: int = 4
    recon_points: int = 16

    def validate(self):
        if any(w < 1 for w in (*self.encoder_widths, *self.classifier_widths, *self.decoder_widths)):
            raise ValueError("layer widths must be >= 1")
        if self.encoder_widths[0] != 3:
            raise ValueError("encoder input width must be 3")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.classifier_widths[0] != self.encoder_widths[-1] or self.decoder_widths[0] != self.encoder_widths[-1]:
            raise ValueError("classifier and decoder must consume the pooled feature width")
        if self.recon_points < 1:
            raise ValueError("recon_points must be >= 1")


def _mlp_params(prefix: str, widths: Sequence[int], rng: np.random.Generator) -> dict[str, Tensor]:
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = 1.0 / math.sqrt(fan_in)
        params[f"{prefix}.{i}.weight"] = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)),
                                                requires_grad=True, name=f"{prefix}.{i}.weight")
        params[f"{prefix}.{i}.bias"] = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{prefix}.{i}.bias")
    return params


def _layers(params: dict[str, Tensor], prefix: str) -> list[tuple[Tensor, Tensor]]:
    out = []
    i = 0
    while f"{prefix}.{i}.weight" in params:
        out.append((params[f"{prefix}.{i}.weight"], params[f"{prefix}.{i}.bias"]))
        i += 1
    return out


def _mlp(x: Tensor, layers, relu_last: bool) -> Tensor:
    for i, (w, b) in enumerate(layers):
        x = ad.add(ad.matmul(x, w), b)
        if relu_last or i < len(layers) - 1:
            x = ad.relu(x)
    return x


@dataclass
class CDNDModel:
    """Holds E, C and h_SSL parameters in one flat, ordered name -> tensor map."""

    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> CDNDModel:
        config.validate()
        rng = np.random.default_rng(seed)
        params = {}
        params.update(_mlp_params("encoder", config.encoder_widths, rng))
        params.update(_mlp_params("classifier", (*config.classifier_widths, config.num_classes), rng))
        params.update(_mlp_params("decoder", (*config.decoder_widths, 3 * config.recon_points), rng))
        return cls(config, params)

    def group(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith(prefix + ".")}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    # -- forward passes

    def encode(self, clouds: Sequence[np.ndarray]) -> Tensor:
        if not clouds:
            raise ValueError("empty batch")
        sizes = {len(c) for c in clouds}
        if len(sizes) != 1:
            raise ValueError(f"all clouds in a batch need the same point count, got {sorted(sizes)}")
        stacked = Tensor(np.concatenate([np.asarray(c, dtype=np.float64) for c in clouds], axis=0))
        per_point = _mlp(stacked, _layers(self.params, "encoder"), relu_last=True)
        return ad.max_pool_points(per_point, len(clouds))

    def logits(self, features: Tensor) -> Tensor:
        if features.shape[1] != self.config.classifier_widths[0]:
            raise ValueError(f"feature width {features.shape[1]} != {self.config.classifier_widths[0]}")
        return _mlp(features, _layers(self.params, "classifier"), relu_last=False)

    def classify(self, features: Tensor) -> Tensor:
        return ad.softmax_rows(self.logits(features))

    def reconstruct(self, features: Tensor, r: int | None = None) -> list[Tensor]:
        """One ``(r, 3)`` point set per feature row."""
        if r is not None and r != self.config.recon_points:
            raise ValueError(f"decoder emits {self.config.recon_points} points, asked for {r}")
        out = _mlp(features, _layers(self.params, "decoder"), relu_last=False)
        rows = out.shape[0]
        flat = ad.reshape(out, (rows * self.config.recon_points, 3))
        return [_row_block(flat, i * self.config.recon_points, self.config.recon_points) for i in range(rows)]


def _row_block(a: Tensor, start: int, count: int) -> Tensor:
    def back(g):
        full = np.zeros_like(a.value)
        full[start:start + count] = g
        return (full,)

    return ad.make_node(a.value[start:start + count], (a,), back, "rows")


# -- checkpoints ------------------------------------------------------------------------------
# Layout: MAGIC, u32 record count, records of
#   (u32 name length, utf-8 name, u32 rank, u64 dims..., little-endian float64 payload),
# then u32 length + utf-8 JSON metadata (config echo, seed, epoch).


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    chunks = [MAGIC, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    meta_raw = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(meta_raw)) + meta_raw)
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not a CDND1 checkpoint")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    (count,) = take("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        dims = take(f"<{rank}Q") if rank else ()
        size = int(np.prod(dims)) if rank else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(dims).astype(np.float64)
        pos += 8 * size
    meta = {}
    if pos < len(data):
        (meta_len,) = take("<I")
        meta = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    return arrays, meta


def model_state(model: CDNDModel) -> dict[str, np.ndarray]:
    return {k: v.value for k, v in model.params.items()}


def load_state(model: CDNDModel, arrays: dict[str, np.ndarray]) -> None:
    missing = set(model.params) ^ set(arrays)
    if missing:
        raise ValueError(f"checkpoint/model parameter mismatch: {sorted(missing)}")
    for k, v in arrays.items():
        if model.params[k].shape != v.shape:
            raise ValueError(f"{k}: shape {v.shape} != {model.params[k].shape}")
        model.params[k].value = v.copy()
