"""Plumbing shared by both graph encoders.

Covers integer views of a graph (word ids, edge endpoint/label arrays),
the learned per-edge input representation (edge-label embedding
concatenated with the source-word embedding, then an affine map), weight
initialization, and thread-safe cell-evaluation counters used by the
throughput benchmark.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .embeddings import EdgeLabelTable, Vocabulary
from .graph import DocumentGraph
from .tensor import Rng, Tensor


@dataclass
class EncoderTables:
    """Embedding matrices as tensors, ready for gather lookups."""

    word_vectors: Tensor   # (|vocab|, d_w), frozen by convention
    edge_vectors: Tensor   # (|labels|, d_e), trainable

    @property
    def word_dim(self) -> int:
        return self.word_vectors.shape[1]

    @property
    def edge_dim(self) -> int:
        return self.edge_vectors.shape[1]


@dataclass
class GraphArrays:
    """Integer arrays describing one graph against fixed vocabularies."""

    word_ids: np.ndarray   # (|V|,)
    src: np.ndarray        # (|E|,) edge source token
    tgt: np.ndarray        # (|E|,) edge target token
    label_ids: np.ndarray  # (|E|,)
    n_tokens: int

    @classmethod
    def from_graph(cls, graph: DocumentGraph, vocab: Vocabulary,
                   edge_table: EdgeLabelTable) -> "GraphArrays":
        word_ids = np.asarray([vocab.index(t.surface) for t in graph.tokens],
                              dtype=np.intp)
        src = np.asarray([e.source for e in graph.edges], dtype=np.intp)
        tgt = np.asarray([e.target for e in graph.edges], dtype=np.intp)
        label_ids = np.asarray([edge_table.index(e.label) for e in graph.edges],
                               dtype=np.intp)
        return cls(word_ids=word_ids, src=src, tgt=tgt, label_ids=label_ids,
                   n_tokens=graph.n_tokens)

    @property
    def n_edges(self) -> int:
        return len(self.src)


def edge_input(source_token: int, label_id: int, arrays: GraphArrays,
               tables: EncoderTables, w1: Tensor, b1: Tensor) -> Tensor:
    """Representation of a single edge: w1 @ [label_emb; source_word_emb] + b1.

    The edge label comes first in the concatenation, then the source word.
    Returns a (1, d_h) row.
    """
    if not 0 <= label_id < tables.edge_vectors.shape[0]:
        raise ValueError(f"unknown edge label id {label_id}")
    e_l = T.gather_rows(tables.edge_vectors, [label_id])
    e_i = T.gather_rows(tables.word_vectors, [arrays.word_ids[source_token]])
    cat = T.concat([e_l, e_i], axis=1)
    return T.add_bias(T.matmul(cat, T.transpose(w1)), b1)


def edge_inputs(arrays: GraphArrays, tables: EncoderTables,
                w1: Tensor, b1: Tensor) -> Tensor:
    """All edge representations at once; row k corresponds to edge k."""
    if arrays.n_edges == 0:
        d_h = w1.shape[0]
        return T.zeros((0, d_h), dtype=w1.dtype)
    e_l = T.gather_rows(tables.edge_vectors, arrays.label_ids)
    e_i = T.gather_rows(tables.word_vectors, arrays.word_ids[arrays.src])
    cat = T.concat([e_l, e_i], axis=1)
    return T.add_bias(T.matmul(cat, T.transpose(w1)), b1)


@dataclass
class PreparedGraph:
    """A graph with its split components and integer arrays, cached once."""

    graph: DocumentGraph
    arrays: GraphArrays
    forward: DocumentGraph
    backward: DocumentGraph
    arrays_forward: GraphArrays
    arrays_backward: GraphArrays

    def component(self, direction: str):
        if direction == "forward":
            return self.forward, self.arrays_forward
        if direction == "backward":
            return self.backward, self.arrays_backward
        raise ValueError(f"no component named {direction!r}")


def prepare_graph(graph: DocumentGraph, vocab: Vocabulary,
                  edge_table: EdgeLabelTable) -> PreparedGraph:
    from .graph import split_dags

    split = split_dags(graph)
    return PreparedGraph(
        graph=graph,
        arrays=GraphArrays.from_graph(graph, vocab, edge_table),
        forward=split.forward,
        backward=split.backward,
        arrays_forward=GraphArrays.from_graph(split.forward, vocab, edge_table),
        arrays_backward=GraphArrays.from_graph(split.backward, vocab, edge_table),
    )


def glorot_uniform(rng: Rng, shape: tuple[int, int], dtype=T.DEFAULT_DTYPE) -> Tensor:
    fan_out, fan_in = shape
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, shape, dtype=dtype))


GATES = ("i", "o", "f", "u")

ACTIVATIONS = {"sigmoid": T.sigmoid, "tanh": T.tanh}


def candidate_activation(name: str):
    """Nonlinearity for the candidate gate; the printed equations use sigma."""
    if name not in ACTIVATIONS:
        raise ValueError(f"candidate_activation must be one of {sorted(ACTIVATIONS)}")
    return ACTIVATIONS[name]


class CellCounter:
    """Thread-safe count of gated cell evaluations, for op-count reporting."""

    def __init__(self):
        self._lock = threading.Lock()
        self._n = 0

    def add(self, n: int) -> None:
        with self._lock:
            self._n += n

    def reset(self) -> None:
        with self._lock:
            self._n = 0

    @property
    def value(self) -> int:
        with self._lock:
            return self._n
