import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphlstm import tensor as T


# --- independent finite-difference oracle (kept free of tape internals) ---


def numeric_grad(f, arrays, step=1e-5):
    """Central finite differences of scalar f() w.r.t. each array, in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f()
            flat[i] = orig - step
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def rel_err(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum.reduce([np.abs(a), np.abs(b), np.full_like(a, floor)])


def _loss_of(out):
    flat = T.reshape(out, (out.size, 1))
    return T.reshape(T.sum_rows(flat), ())


# --- matmul ---


def test_matmul_identity():
    eye = T.Tensor(np.eye(2))
    m = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = T.matmul(eye, m)
    np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])


def test_matmul_hand_checked():
    a = T.Tensor([[1.0, 2.0]])
    b = T.Tensor([[3.0], [4.0]])
    assert T.matmul(a, b).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    a = T.Tensor(np.zeros((3, 4)))
    b = T.Tensor(np.zeros((3, 2)))
    with pytest.raises(ValueError, match=r"\(3, 4\).*\(3, 2\)"):
        T.matmul(a, b)


def test_matmul_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    a_np = rng.uniform(-1, 1, (3, 4))
    b_np = rng.uniform(-1, 1, (4, 2))
    a, b = T.Tensor(a_np.copy()), T.Tensor(b_np.copy())
    with T.Tape() as tape:
        out = T.matmul(a, b)
        loss = _loss_of(out)
    tape.backward(loss)

    def f():
        return float((a.data @ b.data).sum())

    na, nb = numeric_grad(f, [a.data, b.data])
    assert rel_err(tape.grad(a), na).max() < 1e-6
    assert rel_err(tape.grad(b), nb).max() < 1e-6


# --- elementwise ---


def test_sigmoid_symmetry_point():
    assert T.sigmoid(T.Tensor([0.0])).data[0] == 0.5


def test_tanh_zero():
    assert T.tanh(T.Tensor([0.0])).data[0] == 0.0


def test_mul_hand_checked():
    out = T.mul(T.Tensor([2.0, 3.0]), T.Tensor([4.0, 5.0]))
    assert out.data.tolist() == [8.0, 15.0]


def test_sigmoid_extreme_inputs_do_not_overflow():
    out = T.sigmoid(T.Tensor([-1000.0, 1000.0]))
    np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-12)


def test_elementwise_shape_mismatch():
    with pytest.raises(ValueError):
        T.add(T.Tensor([1.0]), T.Tensor([1.0, 2.0]))
    with pytest.raises(ValueError):
        T.mul(T.Tensor([1.0]), T.Tensor([[1.0]]))


# --- concat ---


def test_concat_vectors():
    out = T.concat([T.Tensor([1.0]), T.Tensor([2.0, 3.0])], axis=0)
    assert out.data.tolist() == [1.0, 2.0, 3.0]


def test_concat_single_part_is_identity():
    x = T.Tensor([[1.0, 2.0]])
    out = T.concat([x], axis=0)
    np.testing.assert_array_equal(out.data, x.data)


def test_concat_gradient_splits_by_extent():
    a = T.Tensor(np.ones((2, 2)))
    b = T.Tensor(np.ones((3, 2)))
    with T.Tape() as tape:
        cat = T.concat([a, b], axis=0)
        loss = _loss_of(cat)
    tape.backward(loss)
    np.testing.assert_array_equal(tape.grad(a), np.ones((2, 2)))
    np.testing.assert_array_equal(tape.grad(b), np.ones((3, 2)))


def test_concat_incompatible_extents():
    with pytest.raises(ValueError):
        T.concat([T.Tensor(np.ones((2, 2))), T.Tensor(np.ones((2, 3)))], axis=0)


# --- sum_vectors ---


def test_sum_vectors_empty_is_zero():
    out = T.sum_vectors([], (3,))
    assert out.data.tolist() == [0.0, 0.0, 0.0]


def test_sum_vectors_basic():
    out = T.sum_vectors([T.Tensor([1.0, 1.0]), T.Tensor([2.0, 2.0])], (2,))
    assert out.data.tolist() == [3.0, 3.0]


def test_sum_vectors_is_additive_identity():
    z = T.zeros((4,))
    out = T.sum_vectors([z], (4,))
    np.testing.assert_array_equal(out.data, z.data)


def test_sum_vectors_canonical_order_is_left_to_right():
    rng = np.random.default_rng(3)
    vs = [rng.uniform(-1, 1, (6,)) for _ in range(5)]
    out = T.sum_vectors([T.Tensor(v) for v in vs], (6,))
    acc = vs[0].copy()
    for v in vs[1:]:
        acc = acc + v
    np.testing.assert_array_equal(out.data, acc)
    # permuting inputs perturbs the 64-bit result only at rounding level
    perm = [3, 1, 4, 0, 2]
    out_perm = T.sum_vectors([T.Tensor(vs[i]) for i in perm], (6,))
    assert np.abs(out.data - out_perm.data).max() < 1e-12


# --- softmax cross entropy ---


def test_softmax_uniform_case():
    loss, probs = T.softmax_cross_entropy(T.Tensor([0.0, 0.0]), gold=0)
    assert float(loss.data) == pytest.approx(np.log(2.0), abs=1e-15)
    np.testing.assert_allclose(probs, [0.5, 0.5], atol=1e-15)


def test_softmax_large_logits_stable():
    loss, probs = T.softmax_cross_entropy(T.Tensor([1000.0, 0.0]), gold=0)
    assert float(loss.data) == pytest.approx(0.0, abs=1e-12)
    assert np.isfinite(probs).all()


def test_softmax_matches_naive_formula():
    rng = np.random.default_rng(11)
    z = rng.uniform(-2, 2, (5,))
    gold = 3
    loss, probs = T.softmax_cross_entropy(T.Tensor(z), gold=gold)
    naive = np.exp(z) / np.exp(z).sum()
    np.testing.assert_allclose(probs, naive, atol=1e-12)
    assert float(loss.data) == pytest.approx(-np.log(naive[gold]), abs=1e-12)


def test_softmax_probabilities_sum_to_one():
    rng = np.random.default_rng(4)
    for _ in range(20):
        z = rng.uniform(-5, 5, (7,))
        _, probs = T.softmax_cross_entropy(T.Tensor(z), gold=0)
        assert abs(probs.sum() - 1.0) < 1e-12
        assert ((probs > 0) & (probs < 1)).all()


def test_softmax_gold_out_of_range():
    with pytest.raises(ValueError):
        T.softmax_cross_entropy(T.Tensor([0.0, 1.0]), gold=2)


# --- dropout ---


def test_dropout_rate_zero_is_identity():
    x = T.Tensor([1.0, 2.0])
    assert T.dropout(x, 0.0, T.Rng(0), training=True) is x


def test_dropout_inference_is_identity():
    x = T.Tensor([1.0, 2.0])
    assert T.dropout(x, 0.3, T.Rng(0), training=False) is x


def test_dropout_monte_carlo():
    n = 100_000
    x = T.Tensor(np.ones(n))
    out = T.dropout(x, 0.3, T.Rng(123), training=True)
    survivors = np.count_nonzero(out.data)
    assert abs(survivors / n - 0.7) < 0.01
    # inverted scaling keeps the expectation near the input mean
    assert abs(out.data.mean() - 1.0) < 0.02


def test_dropout_rate_one_rejected():
    with pytest.raises(ValueError):
        T.dropout(T.Tensor([1.0]), 1.0, T.Rng(0), training=True)


# --- tape mechanics ---


def test_tape_backward_visits_exact_reverse_order():
    x = T.Tensor([[1.0, 2.0]])
    w = T.Tensor(np.full((2, 1), 0.5))
    with T.Tape() as tape:
        y = T.matmul(x, w)
        z = T.sigmoid(y)
        s = T.sum_rows(z)
        loss = T.reshape(s, ())
    tape.backward(loss)
    assert tape.operations == ["matmul", "sigmoid", "sum_rows", "reshape"]
    assert tape.last_backward_ops == list(reversed(tape.operations))


def test_off_path_tensor_gets_exactly_zero_gradient():
    x = T.Tensor([1.0, 2.0])
    y = T.Tensor([5.0, 5.0])
    with T.Tape() as tape:
        used = T.mul(x, x)
        _unused = T.mul(y, y)
        loss = _loss_of(used)
    tape.backward(loss)
    assert (tape.grad(y) == 0.0).all()
    assert (tape.grad(x) != 0.0).any()


def test_forward_determinism_bitwise():
    def run():
        rng = T.Rng(99)
        x = T.Tensor(rng.uniform(-1, 1, (4, 4)))
        w = T.Tensor(rng.uniform(-1, 1, (4, 4)))
        with T.Tape() as tape:
            h = T.tanh(T.matmul(x, w))
            d = T.dropout(h, 0.3, T.Rng(5), training=True)
            loss = _loss_of(d)
        tape.backward(loss)
        return h.data.copy(), tape.grad(w).copy()

    h1, g1 = run()
    h2, g2 = run()
    np.testing.assert_array_equal(h1, h2)
    np.testing.assert_array_equal(g1, g2)


def test_rng_same_seed_same_stream():
    a = T.Rng(42).uniform(-1, 1, (100,))
    b = T.Rng(42).uniform(-1, 1, (100,))
    np.testing.assert_array_equal(a, b)
    c = T.Rng(42).child(3).uniform(-1, 1, (10,))
    d = T.Rng(42).child(3).uniform(-1, 1, (10,))
    np.testing.assert_array_equal(c, d)


def test_non_finite_forward_is_hard_error():
    big = T.Tensor(np.full((2, 2), 1e308))
    with np.errstate(over="ignore"):
        with pytest.raises(T.NonFiniteError):
            T.add(big, big)
    with pytest.raises(T.NonFiniteError):
        T.Tensor([np.nan])


# --- gather / segment primitives ---


def test_gather_rows_and_scatter_gradient():
    x = T.Tensor(np.arange(12.0).reshape(4, 3))
    with T.Tape() as tape:
        rows = T.gather_rows(x, [1, 1, 3])
        loss = _loss_of(rows)
    tape.backward(loss)
    np.testing.assert_array_equal(rows.data, x.data[[1, 1, 3]])
    expected = np.zeros((4, 3))
    expected[1] = 2.0
    expected[3] = 1.0
    np.testing.assert_array_equal(tape.grad(x), expected)


def test_segment_sum_matches_loop_and_handles_empty_segments():
    rng = np.random.default_rng(0)
    x_np = rng.uniform(-1, 1, (6, 2))
    ids = [0, 2, 0, 2, 2, 0]
    out = T.segment_sum(T.Tensor(x_np), ids, num_segments=4)
    expected = np.zeros((4, 2))
    for row, sid in zip(x_np, ids):
        expected[sid] += row
    np.testing.assert_array_equal(out.data, expected)
    assert (out.data[1] == 0.0).all() and (out.data[3] == 0.0).all()


# --- per-primitive gradient property (inputs drawn in [-1, 1]) ---


@pytest.mark.parametrize("op", ["matmul", "add", "mul", "sigmoid", "tanh",
                                "concat", "add_bias", "gather_rows",
                                "segment_sum", "sum_rows", "scale", "dropout"])
def test_primitive_gradients_within_1e4(op):
    rng = np.random.default_rng(hash(op) % 2**32)
    a_np = rng.uniform(-1, 1, (3, 4))
    b_np = rng.uniform(-1, 1, (4, 3))
    v_np = rng.uniform(-1, 1, (4,))
    a, b, v = T.Tensor(a_np.copy()), T.Tensor(b_np.copy()), T.Tensor(v_np.copy())

    def build():
        if op == "matmul":
            return T.matmul(a, b), [a, b]
        if op == "add":
            return T.add(a, a), [a]
        if op == "mul":
            return T.mul(a, a), [a]
        if op == "sigmoid":
            return T.sigmoid(a), [a]
        if op == "tanh":
            return T.tanh(a), [a]
        if op == "concat":
            return T.concat([a, a], axis=1), [a]
        if op == "add_bias":
            return T.add_bias(a, v), [a, v]
        if op == "gather_rows":
            return T.gather_rows(a, [2, 0, 2]), [a]
        if op == "segment_sum":
            return T.segment_sum(a, [1, 0, 1], 3), [a]
        if op == "sum_rows":
            return T.sum_rows(a), [a]
        if op == "scale":
            return T.scale(a, 0.37), [a]
        if op == "dropout":
            return T.dropout(a, 0.4, T.Rng(17), training=True), [a]
        raise AssertionError(op)

    with T.Tape() as tape:
        out, wrt = build()
        loss = _loss_of(out)
    tape.backward(loss)

    def f():
        out2, _ = build()
        return float(out2.data.sum())

    numeric = numeric_grad(f, [t.data for t in wrt])
    for t, n in zip(wrt, numeric):
        assert rel_err(tape.grad(t), n).max() < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8), st.integers(0, 7))
def test_softmax_properties_hypothesis(logits, gold_raw):
    gold = gold_raw % len(logits)
    loss, probs = T.softmax_cross_entropy(T.Tensor(np.asarray(logits)), gold=gold)
    assert abs(probs.sum() - 1.0) < 1e-12
    assert float(loss.data) >= -1e-12


# --- grad_check ---


def test_grad_check_square_function():
    x = T.Tensor([3.0])

    def f():
        return T.reshape(T.mul(x, x), ())

    report = T.grad_check(f, {"x": x}, step=1e-5, tolerance=1e-8)
    assert report.passed
    assert report.max_rel_error < 1e-8


def test_grad_check_requires_float64():
    x = T.Tensor([1.0], dtype=np.float32)
    with pytest.raises(ValueError, match="float64"):
        T.grad_check(lambda: T.reshape(T.mul(x, x), ()), {"x": x})


def test_grad_check_reports_failure_for_wrong_gradient():
    # sum_vectors of x with itself doubles the gradient; a deliberately
    # mismatched objective must fail the check
    x = T.Tensor([0.5])

    calls = {"n": 0}

    def crooked():
        calls["n"] += 1
        if calls["n"] == 1:
            return T.reshape(T.mul(x, x), ())
        return T.reshape(T.scale(T.mul(x, x), 2.0), ())

    report = T.grad_check(crooked, {"x": x}, tolerance=1e-4)
    assert not report.passed
