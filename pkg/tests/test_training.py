import json
import math

import numpy as np
import pytest

from graphlstm import tensor as T
from graphlstm.checkpoint import model_from_checkpoint, save_checkpoint
from graphlstm.graph import RelationSchema
from graphlstm.model import build_model
from graphlstm.synthetic import (
    chain_task,
    instances_from_dicts,
    make_path_task,
    marker_path_exists,
    path_task_schema,
    synthetic_word_table,
)
from graphlstm.training import (
    AdamState,
    TrainConfig,
    adam_step,
    benchmark,
    check_folds,
    clip_gradients,
    config_to_text,
    cross_validate,
    decode_batch,
    evaluate,
    load_folds,
    loss,
    make_folds,
    parse_config_file,
    save_folds,
    train,
)
from graphlstm.tensor import Rng, Tensor


@pytest.fixture(scope="module")
def task():
    schema = path_task_schema()
    train_set = instances_from_dicts(make_path_task(40, seed=61, hops=2))
    dev_set = instances_from_dicts(make_path_task(12, seed=62, hops=2))
    vocab, word_table = synthetic_word_table(d_w=6, seed=8, scale=0.1)
    return schema, train_set, dev_set, vocab, word_table


def tiny_config(**kw):
    base = dict(hidden_size=10, word_dim=6, edge_dim=3, steps=3, max_epochs=4,
                patience=3, seed=5, encoder="grn", mode="binary", dev_size=12,
                batch_size=8, dropout=0.1)
    base.update(kw)
    return TrainConfig(**base)


# --- config ---


def test_config_defaults_match_reference_setup():
    cfg = TrainConfig()
    assert cfg.learning_rate == 0.001
    assert cfg.dropout == 0.3
    assert cfg.batch_size == 8
    assert cfg.steps == 5
    assert cfg.hidden_size == 150
    assert cfg.word_dim == 100
    assert cfg.edge_dim == 3
    assert cfg.dev_size == 200


def test_config_file_round_trip(tmp_path):
    cfg = tiny_config(learning_rate=0.01, encoder="dag")
    path = tmp_path / "cfg.txt"
    path.write_text(config_to_text(cfg) + "# trailing comment\n")
    loaded = parse_config_file(path)
    assert loaded == cfg


def test_config_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("not_a_key=3\n")
    with pytest.raises(ValueError, match="unknown key"):
        parse_config_file(path)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(dropout=1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(encoder="rnn")


# --- Adam ---


def test_adam_zero_gradient_leaves_parameters_unchanged():
    p = Tensor(np.array([1.0, -2.0, 3.0]))
    before = p.data.copy()
    state = AdamState()
    adam_step({"p": p}, {"p": np.zeros(3)}, state, lr=0.1)
    np.testing.assert_array_equal(p.data, before)
    assert state.t == 1


def test_adam_first_step_closed_form():
    # with constant gradient g the first update is -lr * g / (|g| + eps)
    g = np.array([0.3, -0.7, 1.5])
    p = Tensor(np.zeros(3))
    state = AdamState()
    adam_step({"p": p}, {"p": g}, state, lr=0.001)
    expected = -0.001 * g / (np.abs(g) + state.eps)
    np.testing.assert_allclose(p.data, expected, rtol=1e-9)


def test_adam_skips_frozen_tensors():
    p = Tensor(np.ones(2))
    q = Tensor(np.ones(2))
    state = AdamState()
    adam_step({"p": p, "q": q}, {"p": np.ones(2), "q": np.ones(2)}, state,
              lr=0.1, frozen={"q"})
    assert (q.data == 1.0).all()
    assert (p.data != 1.0).all()


def test_adam_shape_mismatch():
    p = Tensor(np.ones(2))
    with pytest.raises(ValueError, match="shape"):
        adam_step({"p": p}, {"p": np.ones(3)}, AdamState(), lr=0.1)


def test_gradient_clipping_scales_to_max_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([0.0, 4.0])}
    total = clip_gradients(grads, max_norm=1.0)
    assert total == pytest.approx(5.0)
    clipped = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    assert clipped == pytest.approx(1.0)


# --- loss ---


def test_uniform_predictor_loss_is_ln2(task):
    schema, train_set, dev_set, vocab, word_table = task
    model = build_model(tiny_config().model_spec(), schema, vocab, word_table,
                        train_set, seed=1)
    model.params["cls.W0"].data[...] = 0.0
    model.params["cls.b0"].data[...] = 0.0
    val = float(loss(train_set[0], model).data)
    assert val == pytest.approx(np.log(2.0), abs=1e-12)


def test_perfect_predictor_loss_approaches_zero(task):
    schema, train_set, dev_set, vocab, word_table = task
    model = build_model(tiny_config().model_spec(), schema, vocab, word_table,
                        train_set, seed=1)
    inst = train_set[0]
    gold = model.gold_index(inst)
    model.params["cls.W0"].data[...] = 0.0
    model.params["cls.b0"].data[...] = -50.0
    model.params["cls.b0"].data[gold] = 50.0
    assert float(loss(inst, model).data) < 1e-12


def test_batch_gradient_matches_finite_differences(task):
    schema, train_set, dev_set, vocab, word_table = task
    cfg = tiny_config(hidden_size=6, steps=2, dropout=0.0)
    model = build_model(cfg.model_spec(), schema, vocab, word_table,
                        train_set, seed=2)
    batch = train_set[:3]

    def f():
        losses = [model.forward(inst).loss for inst in batch]
        return T.scale(T.sum_vectors(losses, ()), 1.0 / len(batch))

    report = T.grad_check(f, model.params, step=1e-5, tolerance=1e-4)
    assert report.passed, str(report)


# --- train loop ---


def test_training_is_deterministic_given_seed(task):
    schema, train_set, dev_set, vocab, word_table = task
    cfg = tiny_config(max_epochs=3)
    r1 = train(train_set, dev_set, cfg, schema, vocab, word_table)
    r2 = train(train_set, dev_set, cfg, schema, vocab, word_table)
    assert [e.__dict__ for e in r1.log] == [e.__dict__ for e in r2.log]
    for name in r1.model.params:
        np.testing.assert_array_equal(r1.model.params[name].data,
                                      r2.model.params[name].data)


def test_loss_decreases_over_first_ten_steps_both_encoders(task):
    schema, train_set, dev_set, vocab, word_table = task
    batch = train_set[:8]
    for encoder in ("grn", "dag"):
        cfg = tiny_config(encoder=encoder, dropout=0.0)
        model = build_model(cfg.model_spec(), schema, vocab, word_table,
                            batch, seed=4)
        state = AdamState()
        first = None
        last = None
        for step in range(10):
            with T.Tape() as tape:
                losses = [model.forward(inst).loss for inst in batch]
                batch_loss = T.scale(T.sum_vectors(losses, ()), 1.0 / len(batch))
            tape.backward(batch_loss)
            grads = {name: tape.grad(p) for name, p in model.params.items()}
            adam_step(model.params, grads, state, cfg.learning_rate,
                      frozen=model.frozen)
            if first is None:
                first = float(batch_loss.data)
            last = float(batch_loss.data)
        assert last < first, encoder


def test_frozen_word_table_is_bitwise_unchanged_by_training(task):
    schema, train_set, dev_set, vocab, word_table = task
    cfg = tiny_config(max_epochs=2)
    result = train(train_set, dev_set, cfg, schema, vocab, word_table)
    model = result.model
    np.testing.assert_array_equal(model.params["embed.words"].data,
                                  word_table.vectors)
    # but gradient does flow to the table
    with T.Tape() as tape:
        out = model.forward(train_set[0])
    tape.backward(out.loss)
    assert np.abs(tape.grad(model.params["embed.words"])).max() > 0


def test_edge_label_table_gets_gradient_and_moves(task):
    schema, train_set, dev_set, vocab, word_table = task
    cfg = tiny_config(max_epochs=2)
    model_before = build_model(cfg.model_spec(), schema, vocab, word_table,
                               train_set + dev_set, seed=cfg.seed)
    before = model_before.params["embed.edge_labels"].data.copy()
    result = train(train_set, dev_set, cfg, schema, vocab, word_table)
    after = result.model.params["embed.edge_labels"].data
    assert np.abs(after - before).max() > 0


def test_early_stopping_with_flat_dev_curve(task):
    schema, train_set, dev_set, vocab, word_table = task
    # dev accuracy is frozen by a constant classifier? instead: patience
    # small and max_epochs large; flat curves stop within patience+1 of best
    cfg = tiny_config(max_epochs=50, patience=5, learning_rate=1e-9)
    result = train(train_set, dev_set, cfg, schema, vocab, word_table)
    assert result.stopped_early
    assert len(result.log) <= result.best_epoch + 5
    assert result.best_epoch == 1  # nothing ever improves


def test_dev_selection_returns_best_epoch_params(task):
    schema, train_set, dev_set, vocab, word_table = task
    cfg = tiny_config(max_epochs=6, patience=6)
    result = train(train_set, dev_set, cfg, schema, vocab, word_table)
    assert result.best_dev_acc == max(e.dev_acc for e in result.log)
    got = evaluate(dev_set, result.model).accuracy
    assert got == pytest.approx(result.best_dev_acc)


def test_training_log_jsonl(tmp_path, task):
    schema, train_set, dev_set, vocab, word_table = task
    cfg = tiny_config(max_epochs=2)
    log_path = tmp_path / "log.jsonl"
    result = train(train_set, dev_set, cfg, schema, vocab, word_table,
                   log_path=log_path)
    lines = [json.loads(line) for line in log_path.read_text().splitlines()]
    assert len(lines) == len(result.log)
    assert set(lines[0]) == {"epoch", "train_loss", "dev_acc"}


def test_empty_dataset_rejected(task):
    schema, train_set, dev_set, vocab, word_table = task
    with pytest.raises(ValueError, match="empty"):
        train([], dev_set, tiny_config(), schema, vocab, word_table)


def test_checkpoint_round_trip_reproduces_accuracy(tmp_path, task):
    schema, train_set, dev_set, vocab, word_table = task
    cfg = tiny_config(max_epochs=3)
    result = train(train_set, dev_set, cfg, schema, vocab, word_table)
    acc = evaluate(dev_set, result.model).accuracy
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, result.model)
    reloaded = model_from_checkpoint(str(path))
    assert evaluate(dev_set, reloaded).accuracy == acc


# --- evaluation ---


def test_all_correct_gives_accuracy_one(task):
    schema, train_set, dev_set, vocab, word_table = task
    cfg = tiny_config()
    model = build_model(cfg.model_spec(), schema, vocab, word_table,
                        train_set, seed=1)
    # rig the classifier so it always predicts class of instance 0's gold
    subset = [inst for inst in train_set
              if model.gold_index(inst) == model.gold_index(train_set[0])]
    gold = model.gold_index(train_set[0])
    model.params["cls.W0"].data[...] = 0.0
    model.params["cls.b0"].data[...] = -10.0
    model.params["cls.b0"].data[gold] = 10.0
    res = evaluate(subset, model)
    assert res.accuracy == 1.0
    assert res.correct == res.total == len(subset)


def test_binary_evaluation_of_multiclass_model(task):
    schema, train_set, dev_set, vocab, word_table = task
    cfg = tiny_config(mode="multiclass")
    model = build_model(cfg.model_spec(), schema, vocab, word_table,
                        train_set, seed=3)
    res = evaluate(dev_set, model, mode="binary")
    assert 0.0 <= res.accuracy <= 1.0
    assert set(res.per_class) <= {"Yes", "No"}


def test_multiclass_evaluation_of_binary_model_is_mode_mismatch(task):
    schema, train_set, dev_set, vocab, word_table = task
    model = build_model(tiny_config().model_spec(), schema, vocab, word_table,
                        train_set, seed=3)
    with pytest.raises(ValueError, match="mode mismatch"):
        evaluate(dev_set, model, mode="multiclass")


def test_single_sentence_subset_accuracy(task):
    schema, train_set, dev_set, vocab, word_table = task
    model = build_model(tiny_config().model_spec(), schema, vocab, word_table,
                        train_set, seed=3)
    res = evaluate(train_set, model)
    # the synthetic task is single-sentence, so the subset is everything
    assert res.single_total == len(train_set)
    assert res.single_accuracy == res.accuracy


# --- cross-validation ---


def test_make_folds_partition():
    folds = make_folds(23, 5, Rng(3))
    check_folds(folds, 23)
    sizes = sorted(len(f) for f in folds)
    assert sizes == [4, 4, 5, 5, 5]


def test_check_folds_rejects_overlap_and_gaps():
    with pytest.raises(ValueError, match="overlap"):
        check_folds([[0, 1], [1, 2]], 3)
    with pytest.raises(ValueError, match="partition"):
        check_folds([[0], [2]], 3)


def test_folds_file_round_trip(tmp_path):
    folds = make_folds(10, 5, Rng(0))
    path = tmp_path / "folds.json"
    save_folds(folds, path)
    assert load_folds(path) == folds


def test_cross_validate_degenerate_identical_instances(task):
    schema, train_set, dev_set, vocab, word_table = task
    # all gold labels identical: accuracy is 0 or 1 uniformly per fold
    uniform = instances_from_dicts(make_path_task(20, seed=63))
    for inst in uniform:
        inst.gold = "linked"
    cfg = tiny_config(max_epochs=1, dev_size=100)  # larger than the pool
    with pytest.warns(UserWarning, match="clamped"):
        result = cross_validate(uniform, cfg, schema, vocab, word_table)
    assert len(result.folds) == 5
    for fr in result.folds:
        assert fr.accuracy in (0.0, 1.0)
    assert result.mean_accuracy == pytest.approx(
        sum(f.accuracy for f in result.folds) / 5)


def test_cross_validate_with_given_folds(task):
    schema, train_set, dev_set, vocab, word_table = task
    insts = train_set[:20]
    folds = make_folds(20, 5, Rng(9))
    cfg = tiny_config(max_epochs=1, dev_size=3)
    result = cross_validate(insts, cfg, schema, vocab, word_table, folds=folds)
    assert [fr.n_test for fr in result.folds] == [len(f) for f in folds]


# --- benchmark ---


def test_benchmark_reports_counts_and_times(task):
    schema, _, _, vocab, word_table = task
    insts = instances_from_dicts(chain_task(6, 16, seed=9))
    for encoder, cells, critical in (("grn", 3 * 16 * 6, 3),
                                     ("dag", 2 * 16 * 6, 16)):
        cfg = tiny_config(encoder=encoder, steps=3, max_epochs=1, dropout=0.0)
        r = benchmark(insts, cfg, schema, vocab, word_table, threads=2)
        assert r.cell_evaluations == cells == r.expected_cell_evaluations
        assert r.critical_path_per_graph == [critical] * 6
        assert r.train_epoch_seconds > 0 and r.decode_seconds > 0
        assert r.threads == 2
        parsed = json.loads(r.to_json())
        assert parsed["encoder"] == encoder


def test_threaded_decode_matches_sequential(task):
    schema, train_set, dev_set, vocab, word_table = task
    model = build_model(tiny_config().model_spec(), schema, vocab, word_table,
                        train_set, seed=6)
    seq = decode_batch(model, train_set, threads=1)
    par = decode_batch(model, train_set, threads=4)
    assert seq == par


# --- synthetic task sanity ---


def test_path_task_gold_labels_verified_by_checker():
    schema = path_task_schema()
    dicts = make_path_task(30, seed=77, hops=2)
    insts = instances_from_dicts(dicts, schema)
    labels = [inst.gold for inst in insts]
    assert labels.count("linked") == 15
    for inst in insts:
        a = inst.mentions[0].span[0]
        b = inst.mentions[1].span[0]
        expect = inst.gold == "linked"
        assert marker_path_exists(inst.graph, a, b, "marker", 2) == expect
        assert 6 <= inst.graph.n_tokens <= 12


def test_path_task_is_deterministic():
    assert make_path_task(10, seed=5) == make_path_task(10, seed=5)
