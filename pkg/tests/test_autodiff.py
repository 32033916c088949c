import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gada.autodiff import (
    BatchNormParams,
    OptState,
    Parameter,
    ShapeError,
    Tensor,
    backward,
    batch_norm,
    clip,
    concat,
    div,
    exp,
    finite_diff_check,
    gather,
    grad_reverse,
    log,
    matmul,
    mean,
    mul,
    read_checkpoint,
    relu,
    reshape,
    sgd_step,
    softmax,
    transpose,
    tsum,
    write_checkpoint,
)
from gada.autodiff.checkpoint import CheckpointError

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


class TestMatmul:
    def test_identity(self, rng):
        m = rng.normal(size=(2, 2))
        np.testing.assert_array_equal(matmul(np.eye(2), m).data, m)

    def test_hand_product(self):
        out = matmul(Tensor([[1, 2], [3, 4]]), Tensor([[0], [1]]))
        np.testing.assert_array_equal(out.data, [[2], [4]])

    def test_zeros(self, rng):
        np.testing.assert_array_equal(matmul(np.zeros((3, 3)), rng.normal(size=(3, 3))).data, np.zeros((3, 3)))

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_gradient_flows_to_both(self, rng):
        a = Parameter(rng.normal(size=(3, 4)))
        b = Parameter(rng.normal(size=(4, 2)))
        grads = backward(tsum(matmul(a, b)))
        np.testing.assert_allclose(grads[a], np.ones((3, 2)) @ b.data.T)
        np.testing.assert_allclose(grads[b], a.data.T @ np.ones((3, 2)))

    def test_batched_broadcast_gradcheck(self, rng):
        a = Parameter(rng.normal(size=(2, 3, 4)))
        b = Parameter(rng.normal(size=(4, 5)))
        w = rng.normal(size=(2, 3, 5))
        assert finite_diff_check(lambda: tsum(matmul(a, b) * w), [a, b], max_coords=None) < 1e-7


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)

    def test_no_overflow(self):
        out = softmax(Tensor([1000.0, 1000.0])).data
        np.testing.assert_array_equal(out, [0.5, 0.5])

    def test_closed_form(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, math.log(3)])).data, [0.25, 0.75], atol=1e-15)

    def test_bad_axis(self):
        with pytest.raises(ShapeError):
            softmax(Tensor([1.0, 2.0]), axis=1)

    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                      elements=st.floats(-1e3, 1e3)))
    def test_slices_sum_to_one(self, x):
        for axis in range(x.ndim):
            s = softmax(Tensor(x), axis=axis).data
            assert np.all(np.isfinite(s))
            np.testing.assert_allclose(s.sum(axis=axis), 1.0, atol=1e-12)


class TestBatchNorm:
    def test_constant_input_gives_zero(self):
        bn = BatchNormParams.init(3)
        out = batch_norm(Tensor(np.full((5, 3), 7.0)), bn, "train")
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_train_standardizes(self, rng):
        bn = BatchNormParams.init(4)
        x = rng.normal(3.0, 2.0, size=(6, 5, 4))
        out = batch_norm(Tensor(x), bn, "train").data.reshape(-1, 4)
        assert np.all(np.abs(out.mean(axis=0)) < 1e-6)
        var = x.reshape(-1, 4).var(axis=0)
        np.testing.assert_allclose(out.var(axis=0), var / (var + bn.eps), atol=1e-12)
        assert np.all(np.abs(out.var(axis=0) - 1) < 1e-4)

    def test_eval_identity_stats(self, rng):
        bn = BatchNormParams.init(4)
        x = rng.normal(size=(3, 4))
        np.testing.assert_allclose(batch_norm(Tensor(x), bn, "eval").data, x / np.sqrt(1 + bn.eps), rtol=1e-15)

    def test_running_stats_update(self, rng):
        bn = BatchNormParams.init(2)
        x = rng.normal(4.0, 3.0, size=(50, 2))
        batch_norm(Tensor(x), bn, "train")
        np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=0))
        np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=0, ddof=1))

    @pytest.mark.parametrize("mode", ["train", "eval"])
    def test_gradcheck(self, rng, mode):
        bn = BatchNormParams.init(3)
        bn.scale.data[:] = rng.normal(size=3)
        bn.shift.data[:] = rng.normal(size=3)
        bn.running_mean[:] = rng.normal(size=3)
        bn.running_var[:] = rng.uniform(0.5, 2, size=3)
        x = Parameter(rng.normal(size=(4, 2, 3)))
        w = rng.normal(size=(4, 2, 3))
        err = finite_diff_check(lambda: tsum(batch_norm(x, bn, mode) * w), [x, bn.scale, bn.shift], max_coords=None)
        assert err < 1e-6

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            batch_norm(Tensor(np.ones((2, 3))), BatchNormParams.init(4))


class TestElementwiseAndStructural:
    def test_relu(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])

    def test_concat_shape(self):
        assert concat([Tensor(np.ones((2, 3))), Tensor(np.ones((2, 5)))], axis=1).shape == (2, 8)

    def test_concat_mismatch(self):
        with pytest.raises(ShapeError):
            concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 5)))], axis=1)

    def test_gather_scalar(self):
        assert gather(Tensor([0.1, 0.7, 0.2]), 1).item() == 0.7

    def test_gather_rows(self):
        out = gather(Tensor([[0.1, 0.9], [0.6, 0.4]]), np.array([1, 0]), axis=1)
        np.testing.assert_array_equal(out.data, [0.9, 0.6])

    def test_gather_out_of_range(self):
        with pytest.raises(IndexError):
            gather(Tensor([0.1, 0.7]), 2)

    def test_log_add_mul(self):
        x = Tensor([1.0, math.e])
        np.testing.assert_allclose(log(x).data, [0.0, 1.0])
        np.testing.assert_array_equal((x + x).data, 2 * x.data)
        np.testing.assert_array_equal(mul(x, x).data, x.data**2)

    def test_clip_gradient_masked(self):
        x = Parameter([0.0, 0.5, 2.0])
        g = backward(tsum(clip(x, 0.1, 1.0)))[x]
        np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])

    def test_grad_reverse(self, rng):
        x = Parameter(rng.normal(size=4))
        w = rng.normal(size=4)
        out = grad_reverse(x, 0.7)
        np.testing.assert_array_equal(out.data, x.data)
        g = backward(tsum(out * w))[x]
        np.testing.assert_array_equal(g, -0.7 * w)


# Random-input gradient checks for every differentiable op, kept away from
# relu kinks and log's singularity.
OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: mul(a, b),
    "div": lambda a, b: div(a, exp(b)),
    "matmul": lambda a, b: matmul(a, transpose(b)),
    "relu": lambda a, b: relu(a) * b,
    "log": lambda a, b: log(exp(a) + 1.0) * b,
    "softmax": lambda a, b: softmax(a, axis=-1) * b,
    "softmax0": lambda a, b: softmax(a, axis=0) * b,
    "concat": lambda a, b: concat([a, b], axis=0),
    "reshape": lambda a, b: reshape(a, (-1,)) * reshape(b, (-1,)),
    "mean": lambda a, b: mean(a, axis=0) * mean(b, axis=0),
    "getitem": lambda a, b: a[1:, :2] * b[:-1, 1:],
    "gather": lambda a, b: gather(a, np.array([2, 0, 1]), axis=1) * b[:, 0],
    "clip": lambda a, b: clip(a, -0.5, 0.5) * b,
}


@pytest.mark.parametrize("name", sorted(OPS))
@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_op_gradcheck(name, seed):
    r = np.random.default_rng(seed)
    a_val = r.normal(size=(3, 3))
    a_val = np.where(np.abs(a_val) < 0.05, 0.3, a_val)
    if name == "clip":
        a_val = np.where(np.abs(np.abs(a_val) - 0.5) < 0.05, 0.2, a_val)
    a = Parameter(a_val)
    b = Parameter(r.normal(size=(3, 3)))
    op = OPS[name]
    assert finite_diff_check(lambda: tsum(op(a, b)), [a, b], eps=1e-5, max_coords=None) < 1e-4


class TestBackward:
    def test_sum_gives_ones(self, rng):
        p = Parameter(rng.normal(size=(2, 3, 4)))
        np.testing.assert_array_equal(backward(tsum(p))[p], np.ones((2, 3, 4)))

    def test_square(self):
        p = Parameter(3.0)
        assert backward(p * p)[p] == 6.0

    def test_non_scalar_rejected(self):
        with pytest.raises(ShapeError):
            backward(Parameter([1.0, 2.0]) * 2.0)

    def test_shared_subexpression_accumulates(self):
        p = Parameter(2.0)
        q = p * p
        assert backward(q * q + q)[p] == pytest.approx(4 * 8 + 4)

    def test_deterministic(self, rng):
        data = rng.normal(size=(4, 5))

        def run():
            p = Parameter(data.copy())
            out = tsum(softmax(matmul(p, transpose(p)), axis=-1) * p[:, :4])
            return out.data.tobytes(), backward(out)[p].tobytes()

        assert run() == run()


class TestFiniteDiff:
    def test_quadratic(self, rng):
        p = Parameter(rng.normal(size=(5,)))
        a = rng.normal(size=(5, 5))
        assert finite_diff_check(lambda: tsum(matmul(reshape(p, (1, 5)), a) * p), [p], max_coords=None) < 1e-7

    def test_detects_wrong_gradient(self):
        p = Parameter([1.0, 2.0])
        from gada.autodiff.tensor import _make

        def bad_square(x):
            return _make(x.data**2, (x,), lambda g: (g * x.data,))  # missing factor 2

        assert finite_diff_check(lambda: tsum(bad_square(p)), [p]) > 0.3

    def test_relu_away_from_kink(self):
        p = Parameter([-1.0, 0.5, 2.0])
        assert finite_diff_check(lambda: tsum(relu(p) * p), [p]) < 1e-7

    def test_kink_skipped_and_counted(self):
        # Kink 3e-6 right of the middle coordinate: central difference reads 0.35, analytic 0.
        p = Parameter([-1.0, -3e-6, 2.0])
        assert finite_diff_check(lambda: tsum(relu(p)), [p], max_coords=None) > 0.3
        stats = {}
        assert finite_diff_check(lambda: tsum(relu(p)), [p], max_coords=None, kink_tol=2e-4, stats=stats) < 1e-9
        assert stats == {"checked": 2, "skipped": 1}

    def test_kink_tol_does_not_hide_wrong_gradient(self):
        from gada.autodiff.tensor import _make

        p = Parameter([1.0, 2.0])
        bad = lambda: tsum(_make(p.data**2, (p,), lambda g: (g * p.data,)))  # noqa: E731
        stats = {}
        assert finite_diff_check(bad, [p], kink_tol=2e-4, stats=stats) > 0.3
        assert stats["skipped"] == 0

    def test_floor(self):
        from gada.autodiff.tensor import _make

        # Gradient 1e-7 reported as 1.1e-7: error 1e-8 / 1.1e-7 by default, 1e-8 / 1e-6 under the floor.
        p = Parameter([1.0])
        off = lambda: tsum(_make(p.data * 1e-7, (p,), lambda g: (g * 1.1e-7,)))  # noqa: E731
        assert finite_diff_check(off, [p]) == pytest.approx(1 / 11, rel=1e-6)
        assert finite_diff_check(off, [p], floor=1e-6) == pytest.approx(0.01, rel=1e-6)


class TestSgd:
    def test_zero_lr(self, rng):
        p = Parameter(rng.normal(size=3))
        before = p.data.copy()
        sgd_step([p], [rng.normal(size=3)], OptState(learning_rate=0.0))
        np.testing.assert_array_equal(p.data, before)

    def test_plain_sgd(self):
        p = Parameter([1.0, -2.0])
        sgd_step([p], [np.array([0.5, 1.0])], OptState(learning_rate=0.1, momentum=0.0, weight_decay=0.0))
        np.testing.assert_allclose(p.data, [0.95, -2.1])

    def test_nesterov_recurrence(self):
        # f(p) = p^2, hand-rolled: v1 = g0, p1 = p0 - lr (g0 + mu v1); v2 = mu v1 + g1, ...
        lr, mu, p_hand, v = 0.1, 0.9, 1.0, 0.0
        for _ in range(2):
            g = 2 * p_hand
            v = mu * v + g
            p_hand = p_hand - lr * (g + mu * v)
        p = Parameter(1.0)
        opt = OptState(learning_rate=lr, momentum=mu, weight_decay=0.0)
        for _ in range(2):
            sgd_step([p], [backward(p * p)[p]], opt)
            p.grad = None
        assert p.item() == pytest.approx(p_hand, abs=1e-15)
        assert p_hand == pytest.approx(1 - 0.38 - 0.1 * (2 * 0.62 + 0.9 * (0.9 * 2 + 2 * 0.62)))

    def test_weight_decay_only_on_decayed(self):
        w = Parameter([1.0], decay=True)
        s = Parameter([1.0], decay=False)
        sgd_step([w, s], [np.zeros(1), np.zeros(1)], OptState(learning_rate=1.0, momentum=0.0, weight_decay=0.5))
        assert w.item() == 0.5 and s.item() == 1.0

    def test_velocity_shape(self, rng):
        p = Parameter(rng.normal(size=(2, 3)))
        opt = OptState()
        sgd_step([p], [np.ones((2, 3))], opt)
        assert opt.velocity[0].shape == p.shape


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        arrays = {"a.weight": rng.normal(size=(3, 2)), "b": np.array(1.5), "é": rng.normal(size=(2, 1, 2))}
        write_checkpoint(tmp_path / "c.bin", arrays)
        back = read_checkpoint(tmp_path / "c.bin")
        assert list(back) == list(arrays)
        for k in arrays:
            np.testing.assert_array_equal(back[k], arrays[k])

    def test_layout(self, tmp_path):
        write_checkpoint(tmp_path / "c.bin", {"w": np.array([[1.0, 2.0]])})
        raw = (tmp_path / "c.bin").read_bytes()
        assert raw[:4] == b"GADA"
        assert raw[4:8] == (1).to_bytes(4, "little")
        assert raw[8:12] == (1).to_bytes(4, "little") and raw[12:13] == b"w"
        assert raw[13:17] == (2).to_bytes(4, "little")
        assert raw[-16:] == np.array([1.0, 2.0], dtype="<f8").tobytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "c.bin").write_bytes(b"NOPE" + bytes(4))
        with pytest.raises(CheckpointError):
            read_checkpoint(tmp_path / "c.bin")
