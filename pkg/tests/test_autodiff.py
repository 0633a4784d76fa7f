import numpy as np
import pytest

from relground import autodiff as ad
from relground.autodiff import NumericFault, Tape, Tensor, backward, use_tape

from oracles import logsumexp_list, matmul_loops, softmax_list


def leaf(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def test_arithmetic_values():
    with use_tape(Tape()):
        a = leaf([1.0, -2.0, 3.0])
        b = leaf([4.0, 5.0, -6.0])
        assert np.allclose((a + b).values, [5.0, 3.0, -3.0])
        assert np.allclose((a - b).values, [-3.0, -7.0, 9.0])
        assert np.allclose((a * b).values, [4.0, -10.0, -18.0])
        assert np.allclose((-a).values, [-1.0, 2.0, -3.0])


def test_matmul_matches_loop_oracle():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3, 5))
    with use_tape(Tape()):
        got = ad.matmul(Tensor(a), Tensor(b)).values
    expected = np.array(matmul_loops(a.tolist(), b.tolist()))
    assert np.allclose(got, expected, atol=1e-14)


def test_matmul_vector_cases():
    rng = np.random.default_rng(4)
    m = rng.normal(size=(3, 4))
    v = rng.normal(size=4)
    u = rng.normal(size=3)
    with use_tape(Tape()):
        assert np.allclose(ad.matmul(Tensor(m), Tensor(v)).values, m @ v)
        assert np.allclose(ad.matmul(Tensor(u), Tensor(m)).values, u @ m)
        assert np.allclose(ad.matmul(Tensor(v), Tensor(v)).values, v @ v)


def test_matmul_rejects_bad_shapes():
    with use_tape(Tape()):
        with pytest.raises(ValueError):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
        with pytest.raises(ValueError):
            ad.matmul(Tensor(np.zeros((2, 2, 2))), Tensor(np.zeros(2)))


def test_softmax_uniform_on_equal_inputs():
    with use_tape(Tape()):
        p = ad.softmax(Tensor(np.zeros(3))).values
    assert np.allclose(p, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_softmax_matches_math_oracle():
    xs = [0.3, -1.7, 2.2, 0.0, 5.5]
    with use_tape(Tape()):
        p = ad.softmax(Tensor(np.array(xs))).values
    assert np.allclose(p, softmax_list(xs), atol=1e-14)
    assert np.isclose(p.sum(), 1.0, atol=1e-12)


def test_softmax_shift_invariant_and_stable():
    xs = np.array([1.0, 2.0, 3.0])
    with use_tape(Tape()):
        a = ad.softmax(Tensor(xs)).values
        b = ad.softmax(Tensor(xs + 1000.0)).values
        c = ad.softmax(Tensor(xs - 1e6)).values
    assert np.allclose(a, b, atol=1e-12)
    assert np.allclose(a, c, atol=1e-12)
    assert np.isfinite(b).all() and np.isfinite(c).all()


def test_softmax_rowwise_on_matrix():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 6))
    with use_tape(Tape()):
        p = ad.softmax(Tensor(x), axis=-1).values
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    for i in range(4):
        assert np.allclose(p[i], softmax_list(x[i].tolist()), atol=1e-14)


def test_logsumexp_matches_oracle_and_survives_large_inputs():
    xs = [0.1, -3.0, 2.5, 2.5]
    with use_tape(Tape()):
        got = ad.logsumexp(Tensor(np.array(xs))).item()
        big = ad.logsumexp(Tensor(np.array([1e4, 1e4]))).item()
    assert got == pytest.approx(logsumexp_list(xs), abs=1e-13)
    assert big == pytest.approx(1e4 + np.log(2.0), abs=1e-9)


def test_l2_normalize_unit_norm_and_zero_preservation():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 4))
    x[2] = 0.0
    with use_tape(Tape()):
        y = ad.l2_normalize(Tensor(x)).values
    norms = np.linalg.norm(y, axis=1)
    assert np.allclose(norms[[0, 1, 3, 4]], 1.0, atol=1e-12)
    assert np.all(y[2] == 0.0)


def test_dropout_identity_paths():
    x = Tensor(np.ones((3, 3)), requires_grad=True)
    with use_tape(Tape()):
        assert ad.dropout(x, 0.7, training=False) is x
        assert ad.dropout(x, 1.0, training=True) is x
    with pytest.raises(ValueError):
        ad.dropout(x, 0.0, training=True, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        ad.dropout(x, 0.5, training=True)


def test_dropout_training_mask_scaling():
    rng = np.random.default_rng(7)
    x = Tensor(np.ones((50, 50)), requires_grad=True)
    with use_tape(Tape()):
        y = ad.dropout(x, 0.7, training=True, rng=rng)
        backward(ad.reduce_sum(y))
    vals = np.unique(y.values)
    assert set(np.round(vals, 12)) <= {0.0, np.round(1 / 0.7, 12)}
    # kept fraction should be near keep_prob on 2500 draws
    assert abs((y.values != 0).mean() - 0.7) < 0.05
    assert np.array_equal(x.grad, np.where(y.values != 0, 1 / 0.7, 0.0))


def test_backward_simple_square():
    with use_tape(Tape()):
        x = leaf([3.0])
        y = ad.reduce_sum(x * x)
        backward(y)
    assert np.allclose(x.grad, [6.0])


def test_backward_fanout_accumulates():
    with use_tape(Tape()):
        x = leaf([1.5])
        backward(ad.reduce_sum(x + x))
    assert np.allclose(x.grad, [2.0])


def test_backward_grad_accumulates_across_calls():
    x = leaf([2.0])
    for _ in range(2):
        with use_tape(Tape()):
            backward(ad.reduce_sum(x * x))
    assert np.allclose(x.grad, [8.0])


def test_softmax_nll_gradient_is_p_minus_onehot():
    xs = np.array([0.2, -1.0, 0.7, 0.1])
    k = 2
    with use_tape(Tape()):
        x = leaf(xs)
        loss = ad.logsumexp(x) - ad.pick(x, k)
        backward(loss)
    expected = np.array(softmax_list(xs.tolist()))
    expected[k] -= 1.0
    assert np.allclose(x.grad, expected, atol=1e-12)


def test_reduce_max_routes_gradient_to_first_argmax():
    with use_tape(Tape()):
        x = leaf([1.0, 3.0, 3.0])
        backward(ad.reduce_max(x))
    assert np.array_equal(x.grad, [0.0, 1.0, 0.0])


def test_reduce_max_rowwise_gradient():
    with use_tape(Tape()):
        x = leaf([[1.0, 5.0, 2.0], [7.0, 0.0, 7.0]])
        backward(ad.reduce_sum(ad.reduce_max(x, axis=1)))
    assert np.array_equal(x.grad, [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])


def test_take_rows_accumulates_repeated_indices():
    with use_tape(Tape()):
        table = leaf(np.arange(6.0).reshape(3, 2))
        gathered = ad.take_rows(table, [0, 2, 0])
        backward(ad.reduce_sum(gathered))
    assert np.array_equal(table.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_structural_ops_roundtrip_gradients():
    with use_tape(Tape()):
        a = leaf([1.0, 2.0])
        b = leaf([3.0, 4.0])
        stacked = ad.stack([a, b])
        flat = ad.reshape(stacked, (4,))
        joined = ad.concat([flat, flat])
        backward(ad.reduce_sum(joined))
    assert np.array_equal(a.grad, [2.0, 2.0])
    assert np.array_equal(b.grad, [2.0, 2.0])


def test_row_and_pick_gradients():
    with use_tape(Tape()):
        m = leaf([[1.0, 2.0], [3.0, 4.0]])
        backward(ad.pick(ad.row(m, 1), 0))
    assert np.array_equal(m.grad, [[0.0, 0.0], [1.0, 0.0]])


def test_broadcasting_add_unbroadcasts_gradient():
    with use_tape(Tape()):
        m = leaf(np.zeros((3, 4)))
        v = leaf(np.zeros(4))
        backward(ad.reduce_sum(m + v))
    assert np.array_equal(m.grad, np.ones((3, 4)))
    assert np.array_equal(v.grad, np.full(4, 3.0))


@pytest.mark.parametrize(
    "name,fn",
    [
        ("sigmoid", ad.sigmoid),
        ("tanh", ad.tanh),
        ("softmax", ad.softmax),
        ("l2_normalize", ad.l2_normalize),
    ],
)
def test_elementwise_backward_matches_finite_differences(name, fn):
    rng = np.random.default_rng(11)
    x0 = rng.normal(size=6)
    probe = rng.normal(size=6)

    def value(vals):
        with use_tape(Tape()):
            t = Tensor(vals)
            return float((fn(t).values * probe).sum())

    with use_tape(Tape()):
        x = leaf(x0)
        backward(ad.reduce_sum(fn(x) * Tensor(probe)))
    h = 1e-6
    numeric = np.empty_like(x0)
    for i in range(x0.size):
        plus, minus = x0.copy(), x0.copy()
        plus[i] += h
        minus[i] -= h
        numeric[i] = (value(plus) - value(minus)) / (2 * h)
    assert np.allclose(x.grad, numeric, atol=1e-7), name


def test_sigmoid_extreme_inputs_do_not_overflow():
    with use_tape(Tape()):
        y = ad.sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).values
    assert np.allclose(y, [0.0, 0.5, 1.0], atol=1e-12)


def test_nonfinite_forward_raises_fault_naming_op():
    with use_tape(Tape()), np.errstate(over="ignore"):
        big = Tensor(np.array([1e308]))
        with pytest.raises(NumericFault, match="mul"):
            big * big


def test_backward_requires_scalar_loss():
    with use_tape(Tape()):
        x = leaf([1.0, 2.0])
        y = x * x
        with pytest.raises(ValueError):
            backward(y)


def test_backward_on_empty_tape_errors():
    with use_tape(Tape()):
        with pytest.raises(ValueError):
            backward(Tensor(np.asarray(1.0), requires_grad=True))


def test_no_grad_suppresses_recording():
    tape = Tape()
    with use_tape(tape):
        x = leaf([1.0, 2.0])
        with ad.no_grad():
            y = x * x
        assert not y.requires_grad
        assert len(tape.records) == 0


def test_untracked_inputs_record_nothing():
    tape = Tape()
    with use_tape(tape):
        a = Tensor(np.ones(3))
        b = Tensor(np.ones(3))
        c = a * b
        assert not c.requires_grad
        assert len(tape.records) == 0


def test_leaf_grads_start_at_zero_only_when_required():
    required = Tensor(np.ones(2), requires_grad=True)
    plain = Tensor(np.ones(2))
    assert np.array_equal(required.grad, np.zeros(2))
    assert plain.grad is None
