"""Assembly of embeddings, one encoder, and the relation classifier."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .classifier import (
    ClassifierParams,
    init_classifier,
    logits_for,
    mention_state,
)
from .classifier import predict as classifier_predict
from .dag_lstm import DagLstmParams, encode_bidirectional, init_dag_params
from .embeddings import (
    EdgeLabelTable,
    Vocabulary,
    WordEmbeddingTable,
    edge_label_inventory,
    init_edge_labels,
)
from .encoding import EncoderTables, PreparedGraph, prepare_graph
from .graph import BINARY_LABELS, Instance, RelationSchema
from .graph_lstm import GrnParams, encode_masked, init_grn_params
from .tensor import Rng, Tensor

ENCODERS = ("grn", "dag")
MODES = ("binary", "multiclass")
GRN_MASKS = ("all", "forward", "backward", "concat")


@dataclass
class ModelSpec:
    """Architecture knobs; everything needed to rebuild a saved model."""

    encoder: str = "grn"
    mode: str = "binary"
    grn_mask: str = "all"
    hidden_size: int = 150
    steps: int = 5
    edge_dim: int = 3
    candidate_activation: str = "sigmoid"
    dropout: float = 0.3
    pooling: str = "mean"
    edge_init_range: float = 0.1
    dtype: str = "float64"

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.grn_mask not in GRN_MASKS:
            raise ValueError(f"grn_mask must be one of {GRN_MASKS}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")
        if self.hidden_size <= 0 or self.steps < 0 or self.edge_dim <= 0:
            raise ValueError("sizes must be positive (steps may be zero)")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


@dataclass
class ForwardResult:
    loss: Tensor
    probs: np.ndarray
    pred: int
    gold: int


class RelationModel:
    """One encoder/classifier stack over fixed vocabularies."""

    def __init__(self, spec: ModelSpec, schema: RelationSchema,
                 vocab: Vocabulary, word_table: WordEmbeddingTable,
                 edge_table: EdgeLabelTable, n_mentions: int, seed: int):
        if n_mentions < 2:
            raise ValueError("relations need at least two mentions")
        self.spec = spec
        self.schema = schema
        self.vocab = vocab
        self.word_table = word_table
        self.edge_table = edge_table
        self.n_mentions = n_mentions
        self.seed = seed
        dtype = spec.np_dtype
        self.tables = EncoderTables(
            word_vectors=Tensor(word_table.vectors.astype(dtype, copy=True)),
            edge_vectors=Tensor(edge_table.vectors.astype(dtype, copy=True)),
        )
        rng = Rng(seed)
        d_h = spec.hidden_size
        d_w = word_table.dim
        if spec.encoder == "dag":
            self.encoder_params = init_dag_params(d_h, d_w, spec.edge_dim,
                                                  rng.child(1), dtype)
            d_out = 2 * d_h
        elif spec.grn_mask == "concat":
            self.encoder_params = (
                init_grn_params(d_h, d_w, spec.edge_dim, rng.child(1), dtype),
                init_grn_params(d_h, d_w, spec.edge_dim, rng.child(2), dtype),
            )
            d_out = 2 * d_h
        else:
            self.encoder_params = init_grn_params(d_h, d_w, spec.edge_dim,
                                                  rng.child(1), dtype)
            d_out = d_h
        self.d_out = d_out
        n_classes = 2 if spec.mode == "binary" else len(schema)
        self.classifier = init_classifier(n_classes, n_mentions, d_out,
                                          rng.child(3), dtype)
        self.params = self._collect_params()
        self.frozen = {"embed.words"} if word_table.frozen else set()
        self._prepared: dict[int, tuple[Instance, PreparedGraph]] = {}

    def _collect_params(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {
            "embed.words": self.tables.word_vectors,
            "embed.edge_labels": self.tables.edge_vectors,
        }
        if self.spec.encoder == "dag":
            params.update(self.encoder_params.named("dag"))
        elif self.spec.grn_mask == "concat":
            params.update(self.encoder_params[0].named("grn.fwd"))
            params.update(self.encoder_params[1].named("grn.bwd"))
        else:
            params.update(self.encoder_params.named("grn"))
        params.update(self.classifier.named("cls"))
        return params

    @property
    def class_labels(self) -> list[str]:
        if self.spec.mode == "binary":
            return list(BINARY_LABELS)
        return list(self.schema.labels)

    def gold_index(self, instance: Instance) -> int:
        if self.spec.mode == "binary":
            return self.schema.binary_index(instance.gold)
        return self.schema.index(instance.gold)

    def prepare(self, instance: Instance) -> PreparedGraph:
        cached = self._prepared.get(id(instance))
        if cached is not None:
            return cached[1]
        prep = prepare_graph(instance.graph, self.vocab, self.edge_table)
        self._prepared[id(instance)] = (instance, prep)
        return prep

    def encode_states(self, prepared: PreparedGraph, *, training: bool = False,
                      rng: Rng | None = None) -> Tensor:
        spec = self.spec
        rate = spec.dropout if training else 0.0
        if spec.encoder == "dag":
            arrays = {"forward": prepared.arrays_forward,
                      "backward": prepared.arrays_backward}
            return encode_bidirectional(
                prepared.graph, arrays, self.tables, self.encoder_params,
                candidate=spec.candidate_activation, dropout_rate=rate,
                rng=rng, training=training)
        state = encode_masked(
            prepared, self.tables, self.encoder_params, spec.steps,
            spec.grn_mask, candidate=spec.candidate_activation,
            dropout_rate=rate, rng=rng, training=training)
        return state.h

    def forward(self, instance: Instance, *, training: bool = False,
                rng: Rng | None = None) -> ForwardResult:
        spec = self.spec
        prepared = self.prepare(instance)
        states = self.encode_states(prepared, training=training, rng=rng)
        pooled = [mention_state(states, m, spec.pooling)
                  for m in instance.mentions]
        rate = spec.dropout if training else 0.0
        logits = logits_for(pooled, self.classifier, dropout_rate=rate,
                            rng=rng, training=training)
        gold = self.gold_index(instance)
        n_classes = self.classifier.n_classes
        loss, probs = T.softmax_cross_entropy(
            T.reshape(logits, (n_classes,)), gold)
        return ForwardResult(loss=loss, probs=probs,
                             pred=int(np.argmax(probs)), gold=gold)

    def predict_instance(self, instance: Instance) -> ForwardResult:
        """Inference forward pass (no dropout; record nothing if no tape)."""
        return self.forward(instance, training=False)

    def predict_proba(self, instance: Instance) -> np.ndarray:
        """Class probabilities only; works on instances without gold labels."""
        prepared = self.prepare(instance)
        states = self.encode_states(prepared)
        pooled = [mention_state(states, m, self.spec.pooling)
                  for m in instance.mentions]
        probs, _ = classifier_predict(pooled, self.classifier)
        return probs


def check_mention_arity(instances: list[Instance]) -> int:
    ns = {len(inst.mentions) for inst in instances}
    if len(ns) != 1:
        raise ValueError(f"instances disagree on mention count: {sorted(ns)}")
    return ns.pop()


def build_model(spec: ModelSpec, schema: RelationSchema, vocab: Vocabulary,
                word_table: WordEmbeddingTable, instances: list[Instance],
                seed: int) -> RelationModel:
    """Model over the edge-label inventory observed in ``instances``."""
    labels = edge_label_inventory(inst.graph for inst in instances)
    edge_table = init_edge_labels(labels, spec.edge_dim, Rng(seed).child(17),
                                  init_range=spec.edge_init_range,
                                  dtype=spec.np_dtype)
    n_mentions = check_mention_arity(instances)
    return RelationModel(spec=spec, schema=schema, vocab=vocab,
                         word_table=word_table, edge_table=edge_table,
                         n_mentions=n_mentions, seed=seed)


def spec_to_dict(spec: ModelSpec) -> dict:
    return asdict(spec)


def spec_from_dict(d: dict) -> ModelSpec:
    return ModelSpec(**d)
