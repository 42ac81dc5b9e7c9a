import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmquality.core_math import (
    AdamState,
    ParamBlock,
    ShapeError,
    adam_step,
    affine_backward,
    affine_forward,
    grad_check,
    load_checkpoint,
    numeric_gradient,
    relu,
    relu_backward,
    relative_error,
    save_checkpoint,
    sgd_step,
    sigmoid,
    sigmoid_backward,
    softmax,
    softmax_backward,
)


def central_diff(f, x, h=1e-5):
    """Independent finite-difference oracle over a plain array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# affine


def test_affine_identity():
    np.testing.assert_array_equal(affine_forward(np.array([3.0, -1.0]), np.eye(2), np.zeros(2)), [3.0, -1.0])


def test_affine_zero_map():
    np.testing.assert_array_equal(
        affine_forward(np.array([7.0, -2.0]), np.zeros((2, 2)), np.array([5.0, 5.0])), [5.0, 5.0]
    )


def test_affine_hand_multiply():
    # [[1,2],[3,4]] @ (1,1) + (1,1) = (1+2+1, 3+4+1)
    W = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(affine_forward(np.ones(2), W, np.ones(2)), [4.0, 8.0])


def test_affine_shape_errors_name_operands():
    with pytest.raises(ShapeError, match="W.*x"):
        affine_forward(np.ones(3), np.ones((2, 2)), np.ones(2))
    with pytest.raises(ShapeError, match="b"):
        affine_forward(np.ones(2), np.ones((2, 2)), np.ones(3))
    with pytest.raises(ShapeError):
        affine_backward(np.ones(2), np.ones((2, 2)), np.ones(3))


def test_affine_backward_zero_upstream():
    gx, gW, gb = affine_backward(np.ones(4), np.ones((3, 4)), np.zeros(3))
    assert not gx.any() and not gW.any() and not gb.any()


def test_affine_backward_identity():
    g = np.array([0.5, -2.0, 1.25])
    gx, _, gb = affine_backward(np.ones(3), np.eye(3), g)
    np.testing.assert_array_equal(gx, g)
    np.testing.assert_array_equal(gb, g)


def test_affine_backward_matches_finite_differences_3x4():
    rng = np.random.default_rng(3)
    x, W, b, r = rng.normal(size=4), rng.normal(size=(3, 4)), rng.normal(size=3), rng.normal(size=3)
    gx, gW, gb = affine_backward(x, W, r)
    assert relative_error(gx, central_diff(lambda v: affine_forward(v, W, b) @ r, x)).max() <= 1e-6
    assert relative_error(gW, central_diff(lambda M: affine_forward(x, M, b) @ r, W)).max() <= 1e-6
    assert relative_error(gb, central_diff(lambda c: affine_forward(x, W, c) @ r, b)).max() <= 1e-6


def test_affine_batched_rows_are_independent():
    rng = np.random.default_rng(0)
    X, W, b = rng.normal(size=(5, 4)), rng.normal(size=(3, 4)), rng.normal(size=3)
    out = affine_forward(X, W, b)
    for i in range(5):
        np.testing.assert_allclose(out[i], W @ X[i] + b, rtol=1e-14, atol=1e-14)
    G = rng.normal(size=(5, 3))
    gx, gW, gb = affine_backward(X, W, G)
    np.testing.assert_allclose(gW, sum(np.outer(G[i], X[i]) for i in range(5)), rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(gb, G.sum(axis=0), rtol=1e-13)


def test_backward_passes_match_finite_differences_on_100_random_shapes():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n_in, n_out = rng.integers(1, 9, size=2)
        x, W, b = rng.normal(size=n_in), rng.normal(size=(n_out, n_in)), rng.normal(size=n_out)
        r = rng.normal(size=n_out)
        gx, gW, gb = affine_backward(x, W, r)
        worst = max(
            worst,
            relative_error(gx, central_diff(lambda v: affine_forward(v, W, b) @ r, x)).max(),
            relative_error(gW, central_diff(lambda M: affine_forward(x, M, b) @ r, W)).max(),
            relative_error(gb, central_diff(lambda c: affine_forward(x, W, c) @ r, b)).max(),
        )
        z = rng.normal(size=n_out)
        z = z + np.sign(z) * 0.01  # keep away from the relu kink
        worst = max(
            worst,
            relative_error(relu_backward(z, r), central_diff(lambda v: relu(v) @ r, z)).max(),
            relative_error(sigmoid_backward(sigmoid(z), r), central_diff(lambda v: sigmoid(v) @ r, z)).max(),
            relative_error(softmax_backward(softmax(z), r), central_diff(lambda v: softmax(v) @ r, z)).max(),
        )
    assert worst <= 1e-6


# ---------------------------------------------------------------------------
# activations


def test_softmax_constant_vector_is_uniform():
    np.testing.assert_allclose(softmax(np.full(7, 3.3)), np.full(7, 1 / 7), rtol=0, atol=1e-15)


def test_sigmoid_zero():
    assert sigmoid(0.0) == 0.5


def test_softmax_large_inputs_shift_invariant():
    big = softmax(np.array([1000.0, 1001.0]))
    assert np.all(np.isfinite(big))
    np.testing.assert_allclose(big, softmax(np.array([0.0, 1.0])), rtol=0, atol=1e-15)


def test_sigmoid_stable_at_extremes():
    out = sigmoid(np.array([-1e4, -800.0, 0.0, 800.0, 1e4]))
    assert np.all(np.isfinite(out))
    assert out[0] == 0.0 and out[-1] == 1.0


def test_relu_clamps():
    np.testing.assert_array_equal(relu(np.array([-2.0, 0.0, 3.0])), [0.0, 0.0, 3.0])


def test_softmax_empty_rejected():
    with pytest.raises(ShapeError):
        softmax(np.array([]))


@settings(max_examples=200, deadline=None)
@given(
    arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)),
    st.floats(-100, 100),
)
def test_softmax_sums_to_one_and_is_shift_invariant(x, c):
    y = softmax(x)
    assert abs(y.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(softmax(x + c), y, rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# optimizers


def _block(values):
    p = ParamBlock({"w": (len(values),)})
    p.set_flat(values)
    return p


def test_adam_zero_gradient_fresh_state_is_bitwise_noop():
    p = _block([1.5, -2.25, 3e-7])
    before = p.flat.tobytes()
    state = AdamState.fresh(3, lr=0.1)
    adam_step(p, np.zeros(3), state)
    assert p.flat.tobytes() == before
    assert state.t == 1


def test_adam_first_step_hand_computed():
    p = _block([0.0])
    state = AdamState.fresh(1, lr=0.01)
    adam_step(p, np.array([1.0]), state)
    # m_hat = v_hat = 1 after bias correction
    assert state.m[0] / (1 - 0.9) == pytest.approx(1.0, rel=1e-12)
    assert state.v[0] / (1 - 0.999) == pytest.approx(1.0, rel=1e-12)
    assert p.flat[0] == pytest.approx(-0.01 / (1 + 1e-8), rel=1e-12)


def test_adam_updates_shrink_under_zero_gradients():
    p = _block([0.0])
    state = AdamState.fresh(1, lr=0.01)
    adam_step(p, np.array([1.0]), state)
    steps = []
    for _ in range(2):
        before = p.flat[0]
        adam_step(p, np.zeros(1), state)
        steps.append(abs(p.flat[0] - before))
    assert 0 < steps[1] < steps[0] < 0.01
    assert state.t == 3
    assert np.all(state.v >= 0)


def test_adam_length_mismatch():
    with pytest.raises(ShapeError):
        adam_step(_block([1.0, 2.0]), np.zeros(3), AdamState.fresh(2))


def test_sgd_cases():
    p = _block([1.0, 2.0])
    sgd_step(p, np.array([5.0, 5.0]), 0.0)
    np.testing.assert_array_equal(p.flat, [1.0, 2.0])
    sgd_step(p, p.flat.copy(), 1.0)
    np.testing.assert_array_equal(p.flat, [0.0, 0.0])
    q = _block([2.0])
    sgd_step(q, np.array([0.5]), 0.1)
    assert q.flat[0] == pytest.approx(1.95, abs=1e-15)
    with pytest.raises(ShapeError):
        sgd_step(q, np.zeros(2), 0.1)


# ---------------------------------------------------------------------------
# params and checkpoints


def test_param_block_views_share_flat_buffer():
    p = ParamBlock({"a": (2, 3), "b": (4,)})
    assert len(p) == 10
    p["a"][1, 2] = 7.0
    assert p.flat[5] == 7.0
    p.flat[6] = -1.0
    assert p["b"][0] == -1.0
    assert p.names() == ["a", "b"]


def test_flat_round_trip_is_bytewise_stable():
    rng = np.random.default_rng(1)
    p = ParamBlock({"x": (3, 2), "y": (5,), "z": (1, 4)})
    p.set_flat(rng.normal(size=len(p)))
    first = p.flat.tobytes()
    slots = {n: p[n].copy() for n in p.names()}
    q = p.zeros_like()
    for n, v in slots.items():
        q[n] = v
    assert q.flat.tobytes() == first


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    p = ParamBlock({"nextvlad.W": (3, 2), "head.L0.b": (4,)})
    p.set_flat(rng.normal(size=len(p)))
    save_checkpoint(tmp_path / "c.ckpt", p, {"note": "x"})
    q, meta = load_checkpoint(tmp_path / "c.ckpt")
    assert meta == {"note": "x"}
    assert q.names() == p.names()
    assert q.flat.tobytes() == p.flat.tobytes()
    raw = (tmp_path / "c.ckpt").read_bytes()
    assert raw[:8] == b"MMQCKPT1"
    n = int.from_bytes(raw[8:16], "little")
    assert (16 + n) % 8 == 0
    assert np.frombuffer(raw[16 + n:], dtype="<f8").tobytes() == p.flat.tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad")


# ---------------------------------------------------------------------------
# gradient checking


def test_grad_check_constant_function():
    p = _block([1.0, -3.0])
    rep = grad_check(lambda _: 4.2, p, np.zeros(2))
    assert rep.passed
    np.testing.assert_array_equal(rep.numeric, 0.0)


def test_grad_check_half_squared_norm():
    rng = np.random.default_rng(9)
    p = _block(rng.normal(size=6))
    rep = grad_check(lambda q: 0.5 * float(q.flat @ q.flat), p, p.flat.copy(), h=1e-5, tol=1e-8)
    assert rep.passed, rep


def test_grad_check_detects_wrong_gradient():
    p = _block([1.0, 2.0])
    rep = grad_check(lambda q: 0.5 * float(q.flat @ q.flat), p, np.array([1.0, 2.5]))
    assert not rep.passed
    assert rep.worst_slot == "w[1]"


def test_grad_check_restores_parameters():
    p = _block([0.1, 0.2, 0.3])
    before = p.flat.tobytes()
    numeric_gradient(lambda q: float(np.sin(q.flat).sum()), p)
    assert p.flat.tobytes() == before


def test_grad_check_non_finite_names_coordinate():
    p = ParamBlock({"a": (2,), "b": (2,)})

    def f(q):
        return math.inf if q["b"][1] > 0 else 0.0

    with pytest.raises(FloatingPointError, match=r"b\[1\]"):
        numeric_gradient(f, p)
