"""Small environment builders shared across encoder/model tests."""

from dataclasses import dataclass, replace

import numpy as np

from graphlstm.embeddings import (
    EdgeLabelTable,
    Vocabulary,
    WordEmbeddingTable,
    init_edge_labels,
)
from graphlstm.encoding import EncoderTables, PreparedGraph, prepare_graph
from graphlstm.tensor import Rng, Tensor


@dataclass
class Env:
    vocab: Vocabulary
    word_table: WordEmbeddingTable
    edge_table: EdgeLabelTable
    tables: EncoderTables

    def prepare(self, graph) -> PreparedGraph:
        return prepare_graph(graph, self.vocab, self.edge_table)

    def with_word_delta(self, word: str, delta) -> "Env":
        """Copy of the environment with one word vector perturbed."""
        vectors = self.word_table.vectors.copy()
        vectors[self.vocab.index(word)] += delta
        table = replace(self.word_table, vectors=vectors)
        tables = EncoderTables(word_vectors=Tensor(vectors),
                               edge_vectors=self.tables.edge_vectors)
        return Env(vocab=self.vocab, word_table=table,
                   edge_table=self.edge_table, tables=tables)


def build_env(words, labels, d_w=5, d_e=3, seed=0) -> Env:
    vocab = Vocabulary(list(words))
    rng = Rng(seed)
    vectors = rng.uniform(-0.5, 0.5, (len(vocab), d_w))
    word_table = WordEmbeddingTable(vectors=vectors)
    edge_table = init_edge_labels(list(labels) + ["<unk>"], d_e, rng.child(1))
    tables = EncoderTables(word_vectors=Tensor(word_table.vectors),
                           edge_vectors=Tensor(edge_table.vectors))
    return Env(vocab=vocab, word_table=word_table, edge_table=edge_table,
               tables=tables)


def graph_labels(graph) -> list[str]:
    return sorted(graph.edge_labels())


def np_sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
