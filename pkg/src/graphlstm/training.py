"""Training, evaluation, cross-validation, and the throughput benchmark."""

from __future__ import annotations

import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from . import dag_lstm, graph_lstm
from . import tensor as T
from .embeddings import Vocabulary, WordEmbeddingTable
from .graph import Instance, RelationSchema
from .model import ModelSpec, RelationModel, build_model
from .tensor import NonFiniteError, Rng, Tensor


@dataclass
class TrainConfig:
    """Hyperparameters; defaults follow the reference experimental setup."""

    learning_rate: float = 0.001
    dropout: float = 0.3
    batch_size: int = 8
    steps: int = 5
    hidden_size: int = 150
    word_dim: int = 100
    edge_dim: int = 3
    max_epochs: int = 100
    patience: int = 10
    seed: int = 1
    encoder: str = "grn"
    mode: str = "binary"
    grn_mask: str = "all"
    candidate_activation: str = "sigmoid"
    pooling: str = "mean"
    dev_size: int = 200
    grad_clip: float = 0.0  # 0 disables clipping
    dtype: str = "float64"
    edge_init_range: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0:
            raise ValueError("learning_rate and batch_size must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.max_epochs <= 0 or self.patience <= 0 or self.dev_size <= 0:
            raise ValueError("max_epochs, patience and dev_size must be positive")
        self.model_spec()  # validates the architecture fields

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            encoder=self.encoder, mode=self.mode, grn_mask=self.grn_mask,
            hidden_size=self.hidden_size, steps=self.steps,
            edge_dim=self.edge_dim,
            candidate_activation=self.candidate_activation,
            dropout=self.dropout, pooling=self.pooling,
            edge_init_range=self.edge_init_range, dtype=self.dtype)


def parse_config_file(path) -> TrainConfig:
    """Flat key=value text; '#' starts a comment, blank lines are skipped."""
    values: dict = {}
    types = {f.name: f.type for f in fields(TrainConfig)}
    casts = {"float": float, "int": int, "str": str}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}, line {lineno}: expected key=value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{path}, line {lineno}: unknown key {key!r}")
            values[key] = casts[types[key]](raw)
    return TrainConfig(**values)


def config_to_text(config: TrainConfig) -> str:
    return "".join(f"{f.name}={getattr(config, f.name)}\n"
                   for f in fields(TrainConfig))


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators and the shared step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
              state: AdamState, lr: float, frozen=frozenset()) -> None:
    """Bias-corrected Adam update in place; frozen tensors are skipped."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        if name in frozen:
            continue
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} does not match "
                             f"parameter shape {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros(p.shape, dtype=np.float64)
            state.v[name] = np.zeros(p.shape, dtype=np.float64)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        p.data -= update.astype(p.dtype)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0.0 and total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def loss(instance: Instance, model: RelationModel, *, training: bool = False,
         rng: Rng | None = None) -> Tensor:
    """Cross-entropy of the gold label under the model."""
    return model.forward(instance, training=training, rng=rng).loss


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    dev_acc: float

    def to_json(self) -> str:
        return json.dumps({"epoch": self.epoch, "train_loss": self.train_loss,
                           "dev_acc": self.dev_acc})


@dataclass
class TrainResult:
    model: RelationModel
    best_epoch: int
    best_dev_acc: float
    log: list[EpochLog]
    stopped_early: bool


def _batches(ids: list[int], size: int):
    for start in range(0, len(ids), size):
        yield ids[start:start + size]


def carve_dev(instances: list[Instance], config: TrainConfig,
              key: int = 55) -> tuple[list[Instance], list[Instance]]:
    """Split off a dev set of config.dev_size instances (clamped for tiny
    datasets), deterministically from the run seed."""
    dev_n = config.dev_size
    if dev_n >= len(instances):
        dev_n = max(1, len(instances) // 5)
        warnings.warn(f"dev carve-out clamped to {dev_n} "
                      f"({len(instances)} instances available)")
    ids = list(range(len(instances)))
    Rng(config.seed).child(key).shuffle(ids)
    dev_ids = set(ids[:dev_n])
    dev = [instances[i] for i in sorted(dev_ids)]
    rest = [instances[i] for i in range(len(instances)) if i not in dev_ids]
    return rest, dev


def train(train_instances: list[Instance], dev_instances: list[Instance],
          config: TrainConfig, schema: RelationSchema, vocab: Vocabulary,
          word_table: WordEmbeddingTable, *, log_path=None,
          epoch_callback=None) -> TrainResult:
    """Adam over shuffled mini-batches with dev-based model selection.

    Keeps the parameters of the epoch with the best dev accuracy; stops
    when it has not improved for ``config.patience`` epochs.  Fully
    determined by (config.seed, config, data).  ``epoch_callback(model,
    entry)`` runs after each epoch; returning True ends training early
    (the best-dev parameters are still the ones restored).
    """
    if not train_instances:
        raise ValueError("empty training set")
    if not dev_instances:
        raise ValueError("empty dev set")
    spec = config.model_spec()
    model = build_model(spec, schema, vocab, word_table,
                        list(train_instances) + list(dev_instances),
                        seed=config.seed)
    rng = Rng(config.seed)
    shuffle_rng = rng.child(101)
    dropout_rng = rng.child(202)
    adam = AdamState()
    log: list[EpochLog] = []
    best_epoch = 0
    best_acc = -1.0
    best_snapshot: dict[str, np.ndarray] | None = None
    stopped_early = False
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            ids = list(range(len(train_instances)))
            shuffle_rng.shuffle(ids)
            total = 0.0
            seen = 0
            for batch in _batches(ids, config.batch_size):
                try:
                    with T.Tape() as tape:
                        losses = [
                            model.forward(train_instances[i], training=True,
                                          rng=dropout_rng).loss
                            for i in batch
                        ]
                        batch_loss = T.scale(T.sum_vectors(losses, ()),
                                             1.0 / len(batch))
                    tape.backward(batch_loss)
                except NonFiniteError as exc:
                    raise NonFiniteError(
                        f"non-finite loss at epoch {epoch} "
                        f"(batch starting at instance {batch[0]}): {exc}") from exc
                grads = {name: tape.grad(p) for name, p in model.params.items()}
                if config.grad_clip > 0.0:
                    clip_gradients(grads, config.grad_clip)
                adam_step(model.params, grads, adam, config.learning_rate,
                          frozen=model.frozen)
                total += float(batch_loss.data) * len(batch)
                seen += len(batch)
            dev_acc = evaluate(dev_instances, model).accuracy
            entry = EpochLog(epoch=epoch, train_loss=total / seen,
                             dev_acc=dev_acc)
            log.append(entry)
            if log_fh:
                log_fh.write(entry.to_json() + "\n")
                log_fh.flush()
            stop_requested = bool(epoch_callback(model, entry)) \
                if epoch_callback is not None else False
            if dev_acc > best_acc:
                best_acc = dev_acc
                best_epoch = epoch
                best_snapshot = {name: p.data.copy()
                                 for name, p in model.params.items()}
            elif epoch - best_epoch >= config.patience:
                stopped_early = True
                break
            if stop_requested:
                stopped_early = True
                break
    finally:
        if log_fh:
            log_fh.close()
    if best_snapshot is not None:
        for name, p in model.params.items():
            p.data[...] = best_snapshot[name]
    return TrainResult(model=model, best_epoch=best_epoch,
                       best_dev_acc=best_acc, log=log,
                       stopped_early=stopped_early)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    accuracy: float
    correct: int
    total: int
    per_class: dict[str, dict[str, int]]
    single_accuracy: float | None
    single_total: int


def _eval_labels(model: RelationModel, instance: Instance, pred: int,
                 mode: str) -> tuple[str, str]:
    schema = model.schema
    if mode == "binary":
        gold = schema.binarize(instance.gold)
        if model.spec.mode == "binary":
            pred_label = model.class_labels[pred]
        else:
            pred_label = schema.binarize(schema.labels[pred])
        return pred_label, gold
    return model.class_labels[pred], instance.gold


def evaluate(instances: list[Instance], model: RelationModel,
             mode: str | None = None) -> EvalResult:
    """Accuracy (plus per-class counts and the single-sentence subset).

    ``mode="binary"`` maps multi-class predictions and gold labels through
    the schema's binarization; evaluating a binary model as multi-class is
    a mode mismatch.
    """
    mode = mode or model.spec.mode
    if mode not in ("binary", "multiclass"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    if mode == "multiclass" and model.spec.mode == "binary":
        raise ValueError("mode mismatch: a binarized model cannot be "
                         "evaluated as multiclass")
    if not instances:
        raise ValueError("no instances to evaluate")
    per_class: dict[str, dict[str, int]] = {}
    correct = 0
    single_correct = 0
    single_total = 0
    for inst in instances:
        res = model.predict_instance(inst)
        pred_label, gold_label = _eval_labels(model, inst, res.pred, mode)
        for lab in (pred_label, gold_label):
            per_class.setdefault(lab, {"gold": 0, "pred": 0, "correct": 0})
        per_class[gold_label]["gold"] += 1
        per_class[pred_label]["pred"] += 1
        hit = pred_label == gold_label
        if hit:
            correct += 1
            per_class[gold_label]["correct"] += 1
        if inst.n_sentences == 1:
            single_total += 1
            single_correct += int(hit)
    return EvalResult(
        accuracy=correct / len(instances),
        correct=correct,
        total=len(instances),
        per_class=per_class,
        single_accuracy=(single_correct / single_total) if single_total else None,
        single_total=single_total,
    )


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


@dataclass
class FoldResult:
    fold: int
    accuracy: float
    single_accuracy: float | None
    n_test: int
    best_epoch: int


@dataclass
class CVResult:
    folds: list[FoldResult]
    mean_accuracy: float


def make_folds(n_instances: int, n_folds: int, rng: Rng) -> list[list[int]]:
    ids = list(range(n_instances))
    rng.shuffle(ids)
    folds = [sorted(ids[k::n_folds]) for k in range(n_folds)]
    return folds


def check_folds(folds: list[list[int]], n_instances: int) -> None:
    flat = [i for fold in folds for i in fold]
    if len(flat) != len(set(flat)):
        raise ValueError("folds overlap")
    if sorted(flat) != list(range(n_instances)):
        raise ValueError("folds do not partition the dataset")


def load_folds(path) -> list[list[int]]:
    with open(path, encoding="utf-8") as fh:
        folds = json.load(fh)
    if not isinstance(folds, list) or not all(isinstance(f, list) for f in folds):
        raise ValueError(f"{path}: expected a JSON array of index arrays")
    return [[int(i) for i in fold] for fold in folds]


def save_folds(folds: list[list[int]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(folds, fh)


def cross_validate(instances: list[Instance], config: TrainConfig,
                   schema: RelationSchema, vocab: Vocabulary,
                   word_table: WordEmbeddingTable,
                   folds: list[list[int]] | None = None,
                   eval_mode: str | None = None) -> CVResult:
    """Train per fold (with a dev carve-out) and average test accuracies."""
    if folds is None:
        folds = make_folds(len(instances), 5, Rng(config.seed).child(7))
    check_folds(folds, len(instances))
    results: list[FoldResult] = []
    for k, fold in enumerate(folds):
        test = [instances[i] for i in fold]
        pool_ids = [i for i in range(len(instances)) if i not in set(fold)]
        dev_n = config.dev_size
        if dev_n >= len(pool_ids):
            dev_n = max(1, len(pool_ids) // 5)
            warnings.warn(f"fold {k}: dev carve-out clamped to {dev_n} "
                          f"(training pool has {len(pool_ids)} instances)")
        carve_rng = Rng(config.seed).child(1000 + k)
        shuffled = list(pool_ids)
        carve_rng.shuffle(shuffled)
        dev_ids = set(shuffled[:dev_n])
        dev = [instances[i] for i in sorted(dev_ids)]
        tr = [instances[i] for i in pool_ids if i not in dev_ids]
        out = train(tr, dev, config, schema, vocab, word_table)
        ev = evaluate(test, out.model, mode=eval_mode)
        results.append(FoldResult(fold=k, accuracy=ev.accuracy,
                                  single_accuracy=ev.single_accuracy,
                                  n_test=len(test), best_epoch=out.best_epoch))
    mean = sum(r.accuracy for r in results) / len(results)
    return CVResult(folds=results, mean_accuracy=mean)


# ---------------------------------------------------------------------------
# throughput benchmark
# ---------------------------------------------------------------------------


@dataclass
class BenchmarkResult:
    encoder: str
    threads: int
    n_instances: int
    total_tokens: int
    train_epoch_seconds: float
    decode_seconds: float
    cell_evaluations: int
    expected_cell_evaluations: int
    critical_path_per_graph: list[int]

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


def decode_batch(model: RelationModel, instances: list[Instance],
                 threads: int = 1) -> list[int]:
    """Predictions for every instance; instances decode on a thread pool.

    Per-instance work is tape-free and reads shared parameters only, so
    results are independent of the schedule; the output order always
    matches the input order.
    """
    for inst in instances:  # warm the per-instance cache single-threaded
        model.prepare(inst)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(model.predict_instance, instances))
    else:
        results = [model.predict_instance(inst) for inst in instances]
    return [r.pred for r in results]


def _expected_cells(config: TrainConfig, instances: list[Instance]) -> tuple[int, list[int]]:
    sizes = [inst.graph.n_tokens for inst in instances]
    if config.encoder == "grn":
        per_graph = [config.steps * n for n in sizes]
        critical = [config.steps] * len(sizes)
    else:
        # one sequential cell per token in each direction; the critical
        # path is the token count itself
        per_graph = [2 * n for n in sizes]
        critical = sizes
    return sum(per_graph), critical


def benchmark(instances: list[Instance], config: TrainConfig,
              schema: RelationSchema, vocab: Vocabulary,
              word_table: WordEmbeddingTable, threads: int = 4) -> BenchmarkResult:
    """Wall-clock for one training epoch and one full decode."""
    spec = config.model_spec()
    model = build_model(spec, schema, vocab, word_table, instances,
                        seed=config.seed)
    rng = Rng(config.seed)
    dropout_rng = rng.child(202)
    adam = AdamState()

    ids = list(range(len(instances)))
    start = time.perf_counter()
    for batch in _batches(ids, config.batch_size):
        with T.Tape() as tape:
            losses = [model.forward(instances[i], training=True,
                                    rng=dropout_rng).loss for i in batch]
            batch_loss = T.scale(T.sum_vectors(losses, ()), 1.0 / len(batch))
        tape.backward(batch_loss)
        grads = {name: tape.grad(p) for name, p in model.params.items()}
        adam_step(model.params, grads, adam, config.learning_rate,
                  frozen=model.frozen)
    train_seconds = time.perf_counter() - start

    counter = graph_lstm.cell_counter if config.encoder == "grn" else dag_lstm.cell_counter
    counter.reset()
    start = time.perf_counter()
    decode_batch(model, instances, threads=threads)
    decode_seconds = time.perf_counter() - start
    measured = counter.value

    expected, critical = _expected_cells(config, instances)
    return BenchmarkResult(
        encoder=config.encoder,
        threads=threads,
        n_instances=len(instances),
        total_tokens=sum(inst.graph.n_tokens for inst in instances),
        train_epoch_seconds=train_seconds,
        decode_seconds=decode_seconds,
        cell_evaluations=measured,
        expected_cell_evaluations=expected,
        critical_path_per_graph=critical,
    )
