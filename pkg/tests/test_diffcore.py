import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mazegaze import diffcore as dc
from mazegaze.diffcore import DValue
from oracles import adam_trace, central_diff, max_rel_error


def analytic(f, arrays):
    xs = [DValue(a.copy(), requires_grad=True) for a in arrays]
    with dc.Tape():
        out = f(*xs)
        dc.backward(out)
    return [x.grad for x in xs]


def forward(f):
    def g(*arrays):
        with dc.no_grad():
            return float(f(*[DValue(a) for a in arrays]).data)

    return g


def check(f, arrays, tol=1e-6):
    ana = analytic(f, arrays)
    num = central_diff(forward(f), [a.copy() for a in arrays])
    for a, n in zip(ana, num):
        assert max_rel_error(a, n) <= tol


# -- conv2d ------------------------------------------------------------------


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(3, 6, 5))
    k = np.zeros((3, 3, 1, 1))
    k[[0, 1, 2], [0, 1, 2]] = 1.0
    out = dc.conv2d(DValue(x), DValue(k), DValue(np.zeros(3)))
    np.testing.assert_array_equal(out.data, x)


def test_conv_constant():
    out = dc.conv2d(DValue(np.ones((1, 5, 5))), DValue(np.ones((1, 1, 3, 3))), DValue(np.zeros(1)))
    assert out.shape == (1, 3, 3)
    np.testing.assert_array_equal(out.data, 9.0)


def test_conv_output_size_with_stride_and_padding():
    out = dc.conv2d(DValue(np.ones((2, 13, 13))), DValue(np.ones((4, 2, 3, 3))), DValue(np.zeros(4)), stride=2, padding=1)
    assert out.shape == (4, 7, 7)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
def test_conv_gradient_two_channels(stride, padding):
    r = np.random.default_rng(stride * 10 + padding)
    x, k, b = r.normal(size=(2, 6, 6)), r.normal(size=(3, 2, 3, 3)), r.normal(size=3)
    w = r.normal(size=dc.conv2d(DValue(x), DValue(k), DValue(b), stride, padding).shape)
    check(lambda x, k, b: dc.sum(dc.mul(dc.conv2d(x, k, b, stride, padding), DValue(w))), [x, k, b])


def test_conv_batched_matches_unbatched():
    r = np.random.default_rng(5)
    x, k, b = r.normal(size=(4, 2, 7, 7)), r.normal(size=(3, 2, 3, 3)), r.normal(size=3)
    batched = dc.conv2d(DValue(x), DValue(k), DValue(b), 2, 1).data
    for i in range(4):
        np.testing.assert_allclose(batched[i], dc.conv2d(DValue(x[i]), DValue(k), DValue(b), 2, 1).data, atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(dc.DimensionError, match="kernel"):
        dc.conv2d(DValue(np.ones((2, 5, 5))), DValue(np.ones((1, 3, 3, 3))), DValue(np.zeros(1)))
    with pytest.raises(dc.DimensionError):
        dc.conv2d(DValue(np.ones((1, 5, 5))), DValue(np.ones((1, 1, 2, 2))), DValue(np.zeros(1)))
    with pytest.raises(dc.DimensionError, match="bias"):
        dc.conv2d(DValue(np.ones((1, 5, 5))), DValue(np.ones((2, 1, 3, 3))), DValue(np.zeros(3)))


# -- linear ------------------------------------------------------------------


def test_linear_identity():
    x = np.array([1.5, -2.0, 3.0])
    np.testing.assert_array_equal(dc.linear(DValue(x), DValue(np.eye(3)), DValue(np.zeros(3))).data, x)


def test_linear_arithmetic():
    out = dc.linear(DValue([4.0]), DValue([[2.0]]), DValue([3.0]))
    np.testing.assert_array_equal(out.data, [11.0])


def test_linear_gradient_8_to_4():
    r = np.random.default_rng(3)
    x, w, b, c = r.normal(size=8), r.normal(size=(4, 8)), r.normal(size=4), r.normal(size=4)
    check(lambda x, w, b: dc.sum(dc.mul(dc.linear(x, w, b), DValue(c))), [x, w, b])


def test_linear_batched_gradient():
    r = np.random.default_rng(4)
    x, w, b, c = r.normal(size=(5, 3)), r.normal(size=(2, 3)), r.normal(size=2), r.normal(size=(5, 2))
    check(lambda x, w, b: dc.sum(dc.mul(dc.linear(x, w, b), DValue(c))), [x, w, b])


def test_linear_shape_error():
    with pytest.raises(dc.DimensionError):
        dc.linear(DValue(np.ones(3)), DValue(np.ones((2, 4))), DValue(np.ones(2)))


# -- elementwise -------------------------------------------------------------


def test_mse_examples():
    assert float(dc.mse(DValue([0.0, 0.0]), DValue([3.0, 4.0])).data) == 12.5
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert float(dc.mse(DValue(x), DValue(x)).data) == 0.0


def test_exp_gradient_at_zero():
    assert analytic(lambda x: dc.sum(dc.exp(x)), [np.zeros(1)])[0][0] == 1.0


def test_elementwise_shape_mismatch():
    for op in (dc.add, dc.mul, dc.sub, dc.mse):
        with pytest.raises(dc.DimensionError):
            op(DValue(np.ones(3)), DValue(np.ones(4)))


@pytest.mark.parametrize(
    "name,f",
    [
        ("add", lambda x, y: dc.sum(dc.mul(dc.add(x, y), x))),
        ("sub", lambda x, y: dc.sum(dc.mul(dc.sub(x, y), y))),
        ("mul", lambda x, y: dc.sum(dc.mul(x, y))),
        ("scale", lambda x, y: dc.sum(dc.mul(dc.scale(x, -2.5), y))),
        ("exp", lambda x, y: dc.sum(dc.mul(dc.exp(x), y))),
        ("relu", lambda x, y: dc.sum(dc.mul(dc.relu(x), y))),
        ("square", lambda x, y: dc.sum(dc.mul(dc.square(x), y))),
        ("mse", lambda x, y: dc.mse(x, y)),
        ("mean", lambda x, y: dc.mean(dc.mul(x, y))),
        ("reshape", lambda x, y: dc.sum(dc.mul(dc.reshape(x, (6,)), dc.reshape(y, (6,))))),
        ("concat", lambda x, y: dc.sum(dc.square(dc.concat([x, y], axis=1)))),
        ("stack", lambda x, y: dc.sum(dc.mul(dc.stack([x, y]), dc.stack([y, x])))),
        ("sum_axis", lambda x, y: dc.sum(dc.mul(dc.sum(x, axis=0), dc.sum(y, axis=0)))),
    ],
)
def test_op_gradients_random(name, f):
    r = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(20):
        x, y = r.normal(size=(2, 3)), r.normal(size=(2, 3))
        check(f, [x, y], tol=1e-5)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 2), elements=st.floats(-3, 3)), arrays(np.float64, (3, 2), elements=st.floats(-3, 3)))
def test_mse_matches_numpy(x, y):
    assert float(dc.mse(DValue(x), DValue(y)).data) == pytest.approx(np.mean((x - y) ** 2), rel=1e-12, abs=1e-15)


# -- backward ----------------------------------------------------------------


def test_backward_scalar_example():
    w = DValue([1.0], requires_grad=True)
    with dc.Tape():
        loss = dc.mse(dc.mul(w, DValue([2.0])), DValue([0.0]))
        dc.backward(loss)
    assert w.grad[0] == 8.0


def test_composite_graph_gradient():
    r = np.random.default_rng(11)
    x = r.normal(size=(1, 6, 6))
    y = r.normal(size=3)
    k, b = r.normal(size=(2, 1, 3, 3)), r.normal(size=2)
    w, c = r.normal(size=(3, 32)), r.normal(size=3)

    def f(k, b, w, c):
        h = dc.relu(dc.conv2d(DValue(x), k, b, 1, 0))
        return dc.mse(dc.linear(dc.reshape(h, (32,)), w, c), DValue(y))

    check(f, [k, b, w, c], tol=1e-5)


def test_backward_rejects_non_scalar():
    x = DValue(np.ones(3), requires_grad=True)
    with dc.Tape():
        y = dc.scale(x, 2.0)
        with pytest.raises(dc.ContractError):
            dc.backward(y)


def test_backward_twice_is_an_error():
    x = DValue(np.ones(3), requires_grad=True)
    with dc.Tape():
        loss = dc.sum(dc.square(x))
        dc.backward(loss)
        with pytest.raises(dc.ContractError):
            dc.backward(loss)


def test_gradients_of_a_reused_value_accumulate():
    x = DValue([3.0], requires_grad=True)
    with dc.Tape():
        dc.backward(dc.sum(dc.mul(x, x)))
    assert x.grad[0] == 6.0


def test_no_grad_records_nothing():
    x = DValue(np.ones(2), requires_grad=True)
    with dc.Tape() as tape, dc.no_grad():
        dc.sum(dc.square(x))
    assert len(tape.nodes) == 0


def test_replay_is_bit_identical():
    r = np.random.default_rng(2)
    k, x = r.normal(size=(2, 1, 3, 3)), r.normal(size=(1, 5, 5))

    def run():
        kv = DValue(k, requires_grad=True)
        with dc.Tape():
            out = dc.sum(dc.relu(dc.conv2d(DValue(x), kv, DValue(np.zeros(2)), 1, 1)))
            dc.backward(out)
        return out.data.copy(), kv.grad.copy()

    (a, ga), (b, gb) = run(), run()
    assert a.tobytes() == b.tobytes() and ga.tobytes() == gb.tobytes()


# -- adam --------------------------------------------------------------------


def test_adam_zero_gradient():
    p = {"w": DValue(np.array([1.0, -2.0]))}
    st_ = dc.AdamState()
    dc.adam_step(p, {"w": np.zeros(2)}, st_)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])
    assert st_.step == 1


def test_adam_first_step_hand_formula():
    g = np.array([0.3, -2.0, 1e-3])
    p = {"w": DValue(np.zeros(3))}
    st_ = dc.AdamState()
    dc.adam_step(p, {"w": g}, st_)
    mhat = (0.1 * g) / (1 - 0.9)
    vhat = (0.001 * g * g) / (1 - 0.999)
    np.testing.assert_allclose(p["w"].data, -3e-4 * mhat / (np.sqrt(vhat) + 1e-8), rtol=0, atol=1e-12)


def test_adam_matches_scripted_trace():
    p = {"w": DValue(np.array([0.0]))}
    st_ = dc.AdamState()
    got = []
    for _ in range(10):
        dc.adam_step(p, {"w": np.array([1.0])}, st_)
        got.append(float(p["w"].data[0]))
    np.testing.assert_allclose(got, adam_trace(1.0, 10), rtol=0, atol=1e-10)


def test_adam_zero_lr_is_identity():
    r = np.random.default_rng(0)
    p = {"w": DValue(r.normal(size=(3, 2)))}
    before = p["w"].data.copy()
    st_ = dc.AdamState(lr=0.0)
    for _ in range(5):
        dc.adam_step(p, {"w": r.normal(size=(3, 2))}, st_)
    np.testing.assert_array_equal(p["w"].data, before)
    assert st_.step == 5


def test_adam_moment_shapes():
    p = {"a": DValue(np.zeros((2, 3))), "b": DValue(np.zeros(4))}
    st_ = dc.AdamState()
    dc.adam_step(p, {"a": np.ones((2, 3)), "b": np.ones(4)}, st_)
    assert st_.m["a"].shape == (2, 3) and st_.v["b"].shape == (4,)
    with pytest.raises(dc.DimensionError):
        dc.adam_step(p, {"a": np.ones(3), "b": np.ones(4)}, st_)


# -- grad_check --------------------------------------------------------------


def test_grad_check_linear_function_is_exact():
    c = DValue(np.array([1.0, -2.0, 0.5]))
    rep = dc.grad_check(lambda x: dc.sum(dc.mul(x, c)), [DValue(np.array([0.3, 0.1, -4.0]))])
    assert rep.passed and rep.max_rel_error < 1e-9 and rep.n_checked == 3


def test_grad_check_flags_relu_kink():
    rep = dc.grad_check(lambda x: dc.sum(dc.relu(x)), [DValue(np.array([0.0, 1.0]))])
    assert rep.n_skipped == 1
    assert "non-differentiable point skipped" in rep.notes


def test_grad_check_catches_wrong_gradient():
    def bad(x):
        out = dc.sum(dc.square(x))
        return dc.record(out.data, (x,), lambda g: (g * x.data,), "bad")  # half the true gradient

    rep = dc.grad_check(bad, [DValue(np.array([1.0, 2.0]))])
    assert not rep.passed


def test_grad_check_agrees_with_independent_differences():
    r = np.random.default_rng(9)
    x = r.normal(size=(2, 3))
    f = lambda v: dc.sum(dc.exp(dc.scale(v, 0.5)))  # noqa: E731
    rep = dc.grad_check(f, [DValue(x.copy())])
    num = central_diff(forward(f), [x.copy()])[0]
    ana = analytic(f, [x])[0]
    assert rep.max_rel_error == pytest.approx(max_rel_error(ana, num, floor=1e-7), abs=1e-9)


# -- checkpoints -------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    r = np.random.default_rng(0)
    params = {"a.w": DValue(r.normal(size=(2, 3))), "a.b": DValue(r.normal(size=2))}
    st_ = dc.AdamState(lr=1e-3)
    dc.adam_step(params, {"a.w": r.normal(size=(2, 3)), "a.b": r.normal(size=2)}, st_)
    path = tmp_path / "c.npz"
    dc.save_checkpoint(path, params, st_, {"iteration": 7})
    p2, s2, meta = dc.load_checkpoint(path)
    assert meta == {"iteration": 7}
    for k in params:
        assert p2[k].data.tobytes() == params[k].data.tobytes()
        assert s2.m[k].tobytes() == st_.m[k].tobytes()
        assert s2.v[k].tobytes() == st_.v[k].tobytes()
    assert (s2.step, s2.lr) == (1, 1e-3)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.npz"
    np.savez(path, a=np.ones(2))
    with pytest.raises((ValueError, KeyError)):
        dc.load_checkpoint(path)
