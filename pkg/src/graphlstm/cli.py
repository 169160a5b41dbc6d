"""Command-line entry points: train, eval, predict, cv, benchmark, gradcheck.

Every command is deterministic given the seed in its config.  ``synth``
generates ready-to-use synthetic datasets so the pipeline can be exercised
without the biomedical corpus.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import model_from_checkpoint, save_checkpoint
from .embeddings import load_word_vectors
from .graph import load_instances, load_schema, save_instances, save_schema
from .model import build_model
from .synthetic import (
    chain_task,
    instances_from_dicts,
    make_path_task,
    path_task_schema,
    synthetic_word_table,
    write_synthetic_embeddings,
)
from .training import (
    TrainConfig,
    benchmark,
    carve_dev,
    cross_validate,
    evaluate,
    load_folds,
    make_folds,
    parse_config_file,
    save_folds,
    train,
)
from .tensor import Rng, grad_check


def _load_config(path: str | None) -> TrainConfig:
    return parse_config_file(path) if path else TrainConfig()


def _load_corpus(args):
    schema = load_schema(args.schema)
    instances = load_instances(args.data, schema)
    vocab, word_table = load_word_vectors(args.emb)
    return schema, instances, vocab, word_table


def cmd_train(args) -> int:
    config = _load_config(args.config)
    schema, instances, vocab, word_table = _load_corpus(args)
    if args.dev:
        dev = load_instances(args.dev, schema)
        train_set = instances
    else:
        train_set, dev = carve_dev(instances, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(train_set, dev, config, schema, vocab, word_table,
                   log_path=out_dir / "train_log.jsonl")
    ckpt_path = out_dir / "model.ckpt"
    save_checkpoint(ckpt_path, result.model,
                    extra_meta={"best_epoch": result.best_epoch,
                                "best_dev_acc": result.best_dev_acc})
    print(f"trained {len(result.log)} epochs "
          f"(best dev accuracy {result.best_dev_acc:.4f} "
          f"at epoch {result.best_epoch})")
    print(f"checkpoint: {ckpt_path}")
    print(f"log: {out_dir / 'train_log.jsonl'}")
    return 0


def cmd_eval(args) -> int:
    model = model_from_checkpoint(args.ckpt)
    instances = load_instances(args.data, model.schema)
    result = evaluate(instances, model, mode=args.mode)
    report = {
        "accuracy": result.accuracy,
        "correct": result.correct,
        "total": result.total,
        "single_accuracy": result.single_accuracy,
        "single_total": result.single_total,
        "per_class": result.per_class,
    }
    print(json.dumps(report, indent=2))
    return 0


def cmd_predict(args) -> int:
    model = model_from_checkpoint(args.ckpt)
    instances = load_instances(args.data)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        labels = model.class_labels
        for inst in instances:
            probs = model.predict_proba(inst)
            gold = inst.gold
            if gold is not None and model.spec.mode == "binary":
                gold = model.schema.binarize(gold)
            line = json.dumps({
                "probs": [float(p) for p in probs],
                "pred": labels[int(np.argmax(probs))],
                "gold": gold,
            })
            out.write(line + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_cv(args) -> int:
    config = _load_config(args.config)
    schema, instances, vocab, word_table = _load_corpus(args)
    if args.folds:
        folds = load_folds(args.folds)
    else:
        folds = make_folds(len(instances), 5, Rng(config.seed).child(7))
        if args.save_folds:
            save_folds(folds, args.save_folds)
    result = cross_validate(instances, config, schema, vocab, word_table,
                            folds=folds)
    for fr in result.folds:
        single = "-" if fr.single_accuracy is None else f"{fr.single_accuracy:.4f}"
        print(f"fold {fr.fold}: accuracy {fr.accuracy:.4f} "
              f"(single-sentence {single}, {fr.n_test} test instances, "
              f"best epoch {fr.best_epoch})")
    print(f"mean accuracy over {len(result.folds)} folds: "
          f"{result.mean_accuracy:.4f}")
    return 0


def cmd_benchmark(args) -> int:
    config = _load_config(args.config)
    config.encoder = args.encoder
    if args.data:
        schema, instances, vocab, word_table = _load_corpus(args)
    else:
        schema = path_task_schema()
        instances = instances_from_dicts(
            chain_task(args.graphs, args.tokens, seed=config.seed))
        vocab, word_table = synthetic_word_table(config.word_dim,
                                                 seed=config.seed, scale=0.1)
    result = benchmark(instances, config, schema, vocab, word_table,
                       threads=args.threads)
    print(result.to_json())
    return 0


def cmd_gradcheck(args) -> int:
    config = _load_config(args.config)
    config.encoder = args.encoder
    config.hidden_size = args.hidden
    config.steps = args.steps
    config.word_dim = args.word_dim
    config.seed = args.seed
    config.dropout = 0.0  # the objective must be deterministic
    schema = path_task_schema()
    instances = instances_from_dicts(
        make_path_task(2, seed=args.seed, min_tokens=5, max_tokens=6))
    vocab, word_table = synthetic_word_table(config.word_dim, seed=args.seed,
                                             scale=0.3)
    model = build_model(config.model_spec(), schema, vocab, word_table,
                        instances, seed=args.seed)

    def objective():
        losses = [model.forward(inst).loss for inst in instances]
        return T.scale(T.sum_vectors(losses, ()), 1.0 / len(losses))

    report = grad_check(objective, model.params, step=args.step,
                        tolerance=args.tolerance)
    print(report)
    return 0 if report.passed else 1


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dicts = make_path_task(args.n, seed=args.seed, hops=args.hops)
    save_instances(dicts, out_dir / "data.jsonl")
    save_schema(path_task_schema(), out_dir / "labels.txt")
    write_synthetic_embeddings(out_dir / "embeddings.txt", args.word_dim,
                               seed=args.seed)
    folds = make_folds(args.n, 5, Rng(args.seed).child(7))
    save_folds(folds, out_dir / "folds.json")
    print(f"wrote data.jsonl, labels.txt, embeddings.txt, folds.json "
          f"to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphlstm",
        description="Graph LSTM encoders for cross-sentence n-ary relation "
                    "extraction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and save a checkpoint")
    p.add_argument("--config", help="key=value config file (defaults used "
                                    "when omitted)")
    p.add_argument("--data", required=True, help="training instances (JSONL)")
    p.add_argument("--schema", required=True, help="relation label list")
    p.add_argument("--emb", required=True, help="pretrained word vectors")
    p.add_argument("--dev", help="dev instances (JSONL); carved from --data "
                                 "when omitted")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["binary", "multiclass"], default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write per-instance predictions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="output path (stdout when omitted)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cv", help="five-fold cross-validation")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--folds", help="JSON array of 5 index arrays")
    p.add_argument("--save-folds", help="write generated folds here")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("benchmark", help="time one training epoch and a "
                                         "full decode")
    p.add_argument("--encoder", choices=["grn", "dag"], required=True)
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--emb")
    p.add_argument("--tokens", type=int, default=64,
                   help="chain length for synthetic graphs")
    p.add_argument("--graphs", type=int, default=32,
                   help="number of synthetic graphs")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--encoder", choices=["grn", "dag"], required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--config")
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--steps", type=int, default=3)
    p.add_argument("--word-dim", type=int, default=6)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--word-dim", type=int, default=8)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
