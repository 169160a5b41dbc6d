"""Word and edge-label embedding tables.

Word vectors come from a whitespace-separated text file (token followed by
its decimals) and stay frozen during training; edge-label embeddings are
small, trainable, and randomly initialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DEFAULT_DTYPE, Rng

UNK_WORD = "<unk>"
UNK_EDGE_LABEL = "<unk>"


class Vocabulary:
    """Dense word -> id map with an unknown-word id appended last."""

    def __init__(self, words: list[str]):
        if len(set(words)) != len(words):
            raise ValueError("duplicate words in vocabulary")
        if UNK_WORD in words:
            raise ValueError(f"{UNK_WORD!r} is reserved")
        self.words = list(words) + [UNK_WORD]
        self._index = {w: i for i, w in enumerate(self.words)}
        self.unk_id = len(self.words) - 1

    def __len__(self):
        return len(self.words)

    def index(self, word: str) -> int:
        return self._index.get(word, self.unk_id)

    def __contains__(self, word: str) -> bool:
        return word in self._index


@dataclass
class WordEmbeddingTable:
    """(|vocab|, d) matrix aligned with a Vocabulary; last row is UNK."""

    vectors: np.ndarray
    frozen: bool = True

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def load_word_vectors(path, vocab_limit: int | None = None,
                      dtype=DEFAULT_DTYPE) -> tuple[Vocabulary, WordEmbeddingTable]:
    """Parse a pretrained-vector text file into a vocabulary and table.

    Each line is a token followed by its decimals, whitespace-separated;
    the dimension is inferred from the first line and enforced afterwards.
    The UNK row is the mean of all loaded rows.
    """
    words: list[str] = []
    rows: list[list[float]] = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise ValueError(f"{path}, line {lineno}: no vector values")
            elif len(values) != dim:
                raise ValueError(
                    f"{path}, line {lineno}: expected {dim} values, got {len(values)}")
            words.append(word)
            rows.append([float(v) for v in values])
            if vocab_limit is not None and len(words) >= vocab_limit:
                break
    if not words:
        raise ValueError(f"{path}: empty embedding file")
    matrix = np.asarray(rows, dtype=dtype)
    unk = matrix.mean(axis=0, keepdims=True)
    table = WordEmbeddingTable(vectors=np.concatenate([matrix, unk], axis=0))
    return Vocabulary(words), table


def save_word_vectors(path, vocab: Vocabulary, table: WordEmbeddingTable) -> None:
    """Write the table back out (UNK row omitted; it is re-derived on load).

    Values are written with full round-trip precision, so a save/load
    cycle reproduces the table bit for bit.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for i, word in enumerate(vocab.words[:-1]):  # skip UNK
            vals = " ".join(repr(float(v)) for v in table.vectors[i])
            fh.write(f"{word} {vals}\n")


class EdgeLabelTable:
    """Trainable embedding rows for every edge label seen in the data."""

    def __init__(self, labels: list[str], vectors: np.ndarray):
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate edge labels")
        if len(labels) != vectors.shape[0]:
            raise ValueError("one row per label required")
        self.labels = list(labels)
        self.vectors = vectors
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        idx = self._index.get(label)
        if idx is None:
            if UNK_EDGE_LABEL in self._index:
                return self._index[UNK_EDGE_LABEL]
            raise ValueError(f"unknown edge label {label!r}")
        return idx


def init_edge_labels(labels: list[str], d_e: int, rng: Rng,
                     init_range: float = 0.1, dtype=DEFAULT_DTYPE) -> EdgeLabelTable:
    """Fresh table with rows drawn uniformly from [-init_range, init_range]."""
    if not labels:
        raise ValueError("no edge labels")
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate edge labels")
    vectors = rng.uniform(-init_range, init_range, (len(labels), d_e), dtype=dtype)
    return EdgeLabelTable(labels, vectors)


def edge_label_inventory(graphs) -> list[str]:
    """Sorted edge labels over a corpus, with the unknown label appended."""
    labels: set[str] = set()
    for g in graphs:
        labels |= g.edge_labels()
    ordered = sorted(labels)
    ordered.append(UNK_EDGE_LABEL)
    return ordered
