"""Binary checkpoints: config, vocabulary and named float32 tensors.

Layout (all integers unsigned 64-bit little-endian)::

    b"MLNER1"
    n_config_lines, then per line: byte length, UTF-8 "key=value"
    n_vocab_lines,  then per line: byte length, UTF-8 "label<TAB>name" or "word<TAB>token"
    n_tensors, then per tensor: name length, name, rank, extents..., float32 LE values
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import model_config_from_lines, model_config_lines
from .data import FeatureVocab, LabelSet
from .model import MergeLabelModel, ModelConfig

MAGIC = b"MLNER1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: MergeLabelModel
    vocab: FeatureVocab
    labels: LabelSet

    @property
    def config(self) -> ModelConfig:
        return self.model.config


def _u64(n: int) -> bytes:
    return struct.pack("<Q", n)


def _lines(out: io.BytesIO, lines) -> None:
    out.write(_u64(len(lines)))
    for line in lines:
        raw = line.encode("utf-8")
        out.write(_u64(len(raw)))
        out.write(raw)


def _tensor(out: io.BytesIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    out.write(_u64(len(raw)))
    out.write(raw)
    out.write(_u64(arr.ndim))
    for n in arr.shape:
        out.write(_u64(n))
    out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def to_bytes(ckpt: Checkpoint) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    _lines(out, model_config_lines(ckpt.config) + [f"seed={ckpt.model.seed}"])
    vocab_lines = [f"label\t{n}" for n in ckpt.labels.names[1:]] + [f"word\t{w}" for w in ckpt.vocab.words]
    _lines(out, vocab_lines)
    tensors = dict(ckpt.model.state_arrays())
    tensors["vocab.vectors"] = ckpt.vocab.vectors
    tensors["vocab.unk"] = ckpt.vocab.unk
    tensors["vocab.cap"] = ckpt.vocab.cap_table
    out.write(_u64(len(tensors)))
    for name, arr in tensors.items():
        _tensor(out, name, arr)
    return out.getvalue()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    data = to_bytes(ckpt)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def lines(self) -> list[str]:
        return [self.take(self.u64()).decode("utf-8") for _ in range(self.u64())]


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    cfg_lines = r.lines()
    seed = 0
    model_lines = []
    for line in cfg_lines:
        if line.startswith("seed="):
            seed = int(line[5:])
        else:
            model_lines.append(line)
    config = model_config_from_lines(model_lines)
    labels, words = [], []
    for line in r.lines():
        kind, _, value = line.partition("\t")
        (labels if kind == "label" else words).append(value)
    tensors = {}
    for _ in range(r.u64()):
        name = r.take(r.u64()).decode("utf-8")
        rank = r.u64()
        if rank > 8:
            raise CheckpointError(f"tensor {name}: implausible rank {rank}")
        shape = tuple(r.u64() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after the last tensor")
    label_set = LabelSet(labels)
    if len(label_set) != config.n_classes:
        raise CheckpointError(f"header declares {config.n_classes} classes, vocabulary has {len(label_set)}")
    try:
        vecs, unk, cap = tensors.pop("vocab.vectors"), tensors.pop("vocab.unk"), tensors.pop("vocab.cap")
    except KeyError as exc:
        raise CheckpointError(f"missing vocabulary tensor {exc}") from None
    if vecs.shape != (len(words), config.word_dim) or cap.shape != (4, config.cap_dim):
        raise CheckpointError(
            f"vocabulary tensors {vecs.shape}/{cap.shape} do not match header dims "
            f"word_dim={config.word_dim}, cap_dim={config.cap_dim}"
        )
    model = MergeLabelModel(config, seed=seed)
    extra = set(tensors) - set(model.params)
    if extra:
        raise CheckpointError(f"unexpected tensors {sorted(extra)}")
    try:
        model.load_arrays(tensors)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(str(exc)) from None
    return Checkpoint(model, FeatureVocab(words, vecs, unk, cap), label_set)


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
