"""Tensor core: forward semantics, gradients vs finite differences,
parameter store round-trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import eetrack.numerics as nm
from eetrack.numerics import (CheckpointError, ParamStore, ShapeError, Tensor,
                              grad_check, load_params, save_params)


def rand(shape, seed=0, scale=1.0):
    return Tensor(np.random.default_rng(seed).normal(0, scale, shape))


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(nm.matmul(a, b).data, b.data)

    def test_projector_row_select(self):
        proj = Tensor([[1.0, 0.0], [0.0, 0.0]])
        b = Tensor([[5.0, 6.0], [7.0, 8.0]])
        assert np.array_equal(nm.matmul(proj, b).data, [[5.0, 6.0], [0.0, 0.0]])

    def test_grad_matches_finite_differences(self):
        b = np.random.default_rng(1).normal(size=(4, 3))
        report = grad_check(lambda a: nm.tsum(nm.matmul(a, Tensor(b))),
                            rand((5, 4), seed=2), tol=1e-6)
        assert report.passed, report.max_rel_err

    def test_grad_of_sum_is_bt_broadcast(self):
        a = Tensor(np.random.default_rng(3).normal(size=(5, 4)), requires_grad=True)
        b = np.random.default_rng(4).normal(size=(4, 3))
        nm.tsum(nm.matmul(a, Tensor(b))).backward()
        expected = np.tile(b.sum(axis=1), (5, 1))
        assert np.allclose(a.grad, expected, rtol=1e-12)

    def test_batched_matches_loop(self):
        a = np.random.default_rng(5).normal(size=(3, 4, 2))
        b = np.random.default_rng(6).normal(size=(3, 2, 5))
        out = nm.matmul(Tensor(a), Tensor(b)).data
        for i in range(3):
            assert np.allclose(out[i], a[i] @ b[i])

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            nm.matmul(rand((2, 3)), rand((4, 2)))


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert nm.sigmoid(Tensor(0.0)).item() == 0.5

    def test_logistic_identity(self):
        xs = np.linspace(-20, 20, 31)
        total = nm.sigmoid(Tensor(xs)).data + nm.sigmoid(Tensor(-xs)).data
        assert np.allclose(total, 1.0, atol=1e-12)

    def test_sigmoid_derivative_value(self):
        # d/dx sigmoid at 2.0, frozen from sigma(2)*(1-sigma(2))
        x = Tensor(np.array(2.0), requires_grad=True)
        nm.sigmoid(x).backward()
        assert x.grad == pytest.approx(0.10499358540350662, rel=1e-9)

    @pytest.mark.parametrize("op", [nm.relu, nm.gelu, nm.sigmoid, nm.exp,
                                    nm.square, nm.absolute])
    def test_grads_match_finite_differences(self, op):
        point = rand((7,), seed=11)
        point.data[np.abs(point.data) < 1e-2] += 0.1  # keep off relu/abs kinks
        report = grad_check(lambda t: nm.tsum(op(t)), point, tol=1e-6)
        assert report.passed, (op.__name__, report.max_rel_err)

    def test_sqrt_and_log_grads(self):
        point = Tensor(np.random.default_rng(12).uniform(0.5, 3.0, size=6))
        assert grad_check(lambda t: nm.tsum(nm.sqrt(t)), point, tol=1e-6).passed
        assert grad_check(lambda t: nm.tsum(nm.log(t)), point, tol=1e-6).passed

    def test_broadcast_add_grad(self):
        a = rand((3, 4), seed=13)
        b = rand((4,), seed=14)
        report = grad_check(lambda x, y: nm.tsum(nm.mul(nm.add(x, y), nm.add(x, 1.0))),
                            [a, b], tol=1e-6)
        assert report.passed

    def test_non_broadcastable_raises(self):
        with pytest.raises(ShapeError):
            nm.add(rand((3, 4)), rand((5,)))

    def test_constants_follow_tensor_dtype(self):
        x = Tensor(np.ones(3, dtype=np.float32))
        assert nm.add(x, 1.0).dtype == np.float32
        assert nm.div(1.0, x).dtype == np.float32

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 10 ** 6))
    @settings(max_examples=25, deadline=None)
    def test_maximum_minimum_bracket(self, n, m, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(n, m)), rng.normal(size=(n, m))
        hi = nm.maximum(Tensor(a), Tensor(b)).data
        lo = nm.minimum(Tensor(a), Tensor(b)).data
        assert (hi >= lo).all()
        assert np.allclose(hi + lo, a + b)


class TestSoftmaxNorms:
    def test_softmax_uniform(self):
        out = nm.softmax(Tensor([0.0, 0.0, 0.0])).data
        assert np.allclose(out, 1.0 / 3.0)

    @given(st.integers(1, 5), st.integers(2, 6), st.integers(0, 10 ** 6))
    @settings(max_examples=25, deadline=None)
    def test_softmax_rows_sum_to_one(self, rows, cols, seed):
        x = np.random.default_rng(seed).normal(0, 5, size=(rows, cols))
        out = nm.softmax(Tensor(x), axis=-1).data
        assert (out >= 0).all()
        assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-6)

    def test_softmax_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            nm.softmax(rand((2, 3)), axis=2)

    def test_softmax_grad(self):
        w = np.random.default_rng(15).normal(size=(3, 4))
        report = grad_check(lambda t: nm.tsum(nm.mul(nm.softmax(t, axis=-1), w)),
                            rand((3, 4), seed=16), tol=1e-6)
        assert report.passed

    def test_layernorm_constant_vector_gives_bias(self):
        gain = Tensor(np.random.default_rng(17).normal(size=5))
        bias = Tensor(np.random.default_rng(18).normal(size=5))
        out = nm.layernorm(Tensor(np.full((2, 5), 3.7)), gain, bias)
        assert np.allclose(out.data, np.tile(bias.data, (2, 1)), atol=1e-9)

    def test_layernorm_standardizes(self):
        x = rand((4, 16), seed=19, scale=3.0)
        out = nm.layernorm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)))
        assert np.allclose(out.data.mean(axis=-1), 0.0, atol=1e-9)
        assert np.allclose(out.data.var(axis=-1), 1.0, atol=1e-3)

    def test_layernorm_rejects_bad_eps(self):
        with pytest.raises(ValueError):
            nm.layernorm(rand((2, 3)), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=0.0)


class TestConv:
    def test_scalar_kernel_doubles(self):
        img = rand((1, 3, 3), seed=20)
        out = nm.conv2d(img, Tensor(np.full((1, 1, 1, 1), 2.0)))
        assert np.allclose(out.data, 2.0 * img.data)

    def test_matches_direct_convolution(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=(2, 5, 6))
        k = rng.normal(size=(3, 2, 3, 3))
        out = nm.conv2d(Tensor(x), Tensor(k), padding=1).data
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        for co in range(3):
            for i in range(5):
                for j in range(6):
                    ref = (xp[:, i:i + 3, j:j + 3] * k[co]).sum()
                    assert out[co, i, j] == pytest.approx(ref, rel=1e-12)

    def test_grad_through_conv(self):
        k = rand((2, 1, 3, 3), seed=22)
        report = grad_check(lambda x, w: nm.tsum(nm.square(nm.conv2d(x, w, padding=1))),
                            [rand((1, 4, 4), seed=23), k], tol=1e-5)
        assert report.passed

    def test_reflect_padding_grad(self):
        report = grad_check(
            lambda x: nm.tsum(nm.conv2d(x, Tensor(np.ones((1, 1, 3, 3)) / 9.0),
                                        padding=1, pad_mode="reflect")),
            rand((1, 4, 5), seed=24), tol=1e-5)
        assert report.passed

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            nm.conv2d(rand((2, 4, 4)), rand((1, 3, 3, 3)))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        w = Tensor(np.zeros(3), requires_grad=True)
        nm.tsum(w).backward()
        assert np.array_equal(w.grad, np.ones(3))

    def test_polynomial_gradient(self):
        w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        nm.tsum(nm.square(w)).backward()
        assert np.allclose(w.grad, [2.0, 4.0, 6.0])

    def test_backward_accumulates_until_zeroed(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        nm.tsum(nm.square(w)).backward()
        nm.tsum(nm.square(w)).backward()
        assert np.allclose(w.grad, [4.0, 8.0])
        w.zero_grad()
        assert w.grad is None

    def test_sum_of_losses_equals_sum_of_passes(self):
        base = np.random.default_rng(25).normal(size=4)
        w1 = Tensor(base.copy(), requires_grad=True)
        nm.add(nm.tsum(nm.square(w1)), nm.tsum(nm.exp(w1))).backward()
        w2 = Tensor(base.copy(), requires_grad=True)
        nm.tsum(nm.square(w2)).backward()
        nm.tsum(nm.exp(w2)).backward()
        assert np.allclose(w1.grad, w2.grad, rtol=1e-12)

    def test_non_scalar_backward_raises(self):
        with pytest.raises(ShapeError):
            rand((2, 2)).backward()

    def test_mlp_grads_match_finite_differences(self):
        rng = np.random.default_rng(26)
        widths = [5, 7, 6, 4, 1]
        weights = [Tensor(rng.normal(0, 0.5, size=(a, b)))
                   for a, b in zip(widths[:-1], widths[1:])]
        x = rng.normal(size=(3, 5))

        def f(*ws):
            h = Tensor(x)
            for i, w in enumerate(ws):
                h = nm.matmul(h, w)
                if i < len(ws) - 1:
                    h = nm.gelu(h)
            return nm.tsum(nm.square(h))

        report = grad_check(f, weights, tol=1e-4)
        assert report.passed, report.max_rel_err

    def test_no_grad_blocks_recording(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with nm.no_grad():
            out = nm.tsum(nm.square(w))
        assert not out.requires_grad
        assert out._parents == ()


class TestGradCheckHarness:
    def test_constant_function_zero_error(self):
        report = grad_check(lambda t: nm.tsum(nm.mul(t, 0.0)), rand((3,)), tol=1e-6)
        assert report.passed and report.max_rel_err == 0.0

    def test_wrong_backward_is_caught(self):
        def broken_square(t):
            out = Tensor(t.data ** 2)
            out.requires_grad = True
            out._parents = (t,)
            out._vjp = lambda g: (g * 3.0 * t.data,)  # deliberately wrong
            return nm.tsum(out)

        report = grad_check(broken_square, rand((4,), seed=27), tol=1e-4)
        assert not report.passed

    def test_max_entries_limits_probes(self):
        report = grad_check(lambda t: nm.tsum(nm.square(t)), rand((50,)), tol=1e-6,
                            max_entries=10)
        assert report.n_checked == 10 and report.passed

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_nonfinite_evaluation_raises(self):
        with pytest.raises(ValueError):
            grad_check(lambda t: nm.tsum(nm.log(t)), Tensor([-1.0]), tol=1e-4)


class TestMacCounter:
    def test_matmul_count(self):
        with nm.count_macs() as macs:
            nm.matmul(rand((3, 4)), rand((4, 5)))
        assert macs.total == 3 * 4 * 5

    def test_conv_count(self):
        with nm.count_macs() as macs:
            nm.conv2d(rand((2, 8, 8)), rand((3, 2, 3, 3)), padding=1)
        assert macs.total == 8 * 8 * 2 * 3 * 9

    def test_nested_counters(self):
        with nm.count_macs() as outer:
            nm.matmul(rand((2, 2)), rand((2, 2)))
            with nm.count_macs() as inner:
                nm.matmul(rand((2, 2)), rand((2, 2)))
        assert inner.total == 8 and outer.total == 16


class TestParamStore:
    def test_duplicate_name_rejected(self):
        store = ParamStore()
        store.add("w", np.ones(2))
        with pytest.raises(ValueError):
            store.add("w", np.ones(2))

    def test_iteration_sorted(self):
        store = ParamStore()
        for name in ["b.x", "a.y", "a.x"]:
            store.add(name, np.zeros(1))
        assert store.names() == ["a.x", "a.y", "b.x"]

    def test_save_load_roundtrip(self, tmp_path):
        store = ParamStore(rng_seed=7)
        rng = np.random.default_rng(0)
        store.add("embed.w", rng.normal(size=(4, 3)))
        store.add("head.b", rng.normal(size=(2,)))
        path = tmp_path / "ckpt.bdtk"
        save_params(store, path)
        loaded = load_params(path)
        assert loaded.names() == store.names()
        for name, tensor in store.items():
            # payload is float32; loading must be exact at that precision
            assert np.array_equal(loaded[name].data,
                                  tensor.data.astype(np.float32).astype(np.float64))
            assert loaded[name].requires_grad

    def test_magic_and_version_checked(self, tmp_path):
        path = tmp_path / "bad.bdtk"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError):
            load_params(path)
        good = ParamStore()
        good.add("w", np.ones(1))
        path2 = tmp_path / "v.bdtk"
        save_params(good, path2)
        raw = bytearray(path2.read_bytes())
        raw[4] = 99
        path2.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_params(path2)

    def test_trailing_bytes_rejected(self, tmp_path):
        store = ParamStore()
        store.add("w", np.ones(1))
        path = tmp_path / "t.bdtk"
        save_params(store, path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(CheckpointError):
            load_params(path)
