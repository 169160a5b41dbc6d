"""Single-file binary checkpoints: versioned header, then named tensors.

Layout (little-endian): an 8-byte magic, a uint32 format version, a JSON
metadata block (model spec, schema, vocabularies, frozen names), then each
tensor as name, shape, and raw float64 values.  Loading rebuilds a model
that evaluates identically to the saved one.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .embeddings import EdgeLabelTable, Vocabulary, WordEmbeddingTable
from .graph import RelationSchema
from .model import ModelSpec, RelationModel, spec_from_dict, spec_to_dict

MAGIC = b"GLSTMCK\x00"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict[str, np.ndarray]

    @property
    def spec(self) -> ModelSpec:
        return spec_from_dict(self.meta["spec"])


def save_checkpoint(path, model: RelationModel, extra_meta: dict | None = None) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "spec": spec_to_dict(model.spec),
        "schema": model.schema.labels,
        "vocab": model.vocab.words[:-1],  # UNK is implicit
        "edge_labels": model.edge_table.labels,
        "n_mentions": model.n_mentions,
        "seed": model.seed,
        "frozen": sorted(model.frozen),
        "word_table_frozen": model.word_table.frozen,
    }
    if extra_meta:
        meta["extra"] = extra_meta
    meta_bytes = json.dumps(meta).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(model.params)))
        for name, tensor in model.params.items():
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            arr = np.asarray(tensor.data, dtype="<f8")
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated checkpoint file")
    return data


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4))
        meta = json.loads(_read_exact(fh, meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0]
                          for _ in range(ndim))
            n_values = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, 8 * n_values)
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return Checkpoint(meta=meta, tensors=tensors)


def model_from_checkpoint(ckpt: Checkpoint | str) -> RelationModel:
    """Rebuild the full model from a checkpoint (path or loaded object)."""
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    meta = ckpt.meta
    spec = spec_from_dict(meta["spec"])
    schema = RelationSchema(meta["schema"])
    vocab = Vocabulary(meta["vocab"])
    dtype = spec.np_dtype
    word_vectors = ckpt.tensors["embed.words"].astype(dtype)
    word_table = WordEmbeddingTable(vectors=word_vectors,
                                    frozen=meta["word_table_frozen"])
    edge_vectors = ckpt.tensors["embed.edge_labels"].astype(dtype)
    edge_table = EdgeLabelTable(meta["edge_labels"], edge_vectors)
    model = RelationModel(spec=spec, schema=schema, vocab=vocab,
                          word_table=word_table, edge_table=edge_table,
                          n_mentions=meta["n_mentions"], seed=meta["seed"])
    loaded = set(ckpt.tensors)
    expected = set(model.params)
    if loaded != expected:
        missing = expected - loaded
        surplus = loaded - expected
        raise ValueError(f"checkpoint tensors do not match the model: "
                         f"missing {sorted(missing)}, surplus {sorted(surplus)}")
    for name, tensor in model.params.items():
        values = ckpt.tensors[name]
        if values.shape != tensor.shape:
            raise ValueError(f"{name}: shape {values.shape} does not match "
                             f"model shape {tensor.shape}")
        tensor.data[...] = values.astype(dtype)
    model.frozen = set(meta["frozen"])
    return model
