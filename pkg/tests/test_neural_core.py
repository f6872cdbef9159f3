import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiertpp import autodiff as ad
from hiertpp.checkpoint import load_checkpoint, save_checkpoint
from hiertpp.errors import ContractError, DimensionError, NumericError, ValidationError
from hiertpp.nn import (Adam, AdamState, LstmState, LstmWeights, adam_step, clip_global_norm,
                        init_lstm, lstm_step, zero_state)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def naive_lstm(x, h, c, wx, wh, b):
    """Independent per-gate LSTM step written out longhand."""
    n = len(h)
    out_c, out_h = np.zeros(n), np.zeros(n)
    for k in range(n):
        def pre(block):
            col = block * n + k
            return sum(x[i] * wx[i, col] for i in range(len(x))) + \
                sum(h[i] * wh[i, col] for i in range(n)) + b[col]
        i_g, f_g, o_g = _sigmoid(pre(0)), _sigmoid(pre(1)), _sigmoid(pre(2))
        cand = np.tanh(pre(3))
        out_c[k] = f_g * c[k] + i_g * cand
        out_h[k] = o_g * np.tanh(out_c[k])
    return out_h, out_c


def _weights(rng, n_in, n_hid, scale=1.0):
    return LstmWeights(ad.parameter(rng.uniform(-scale, scale, (n_in, 4 * n_hid)), "wx"),
                       ad.parameter(rng.uniform(-scale, scale, (n_hid, 4 * n_hid)), "wh"),
                       ad.parameter(rng.uniform(-scale, scale, 4 * n_hid), "b"))


class TestLstmStep:
    def test_zero_fixed_point(self):
        w = LstmWeights(ad.Tensor(np.zeros((3, 16))), ad.Tensor(np.zeros((4, 16))),
                        ad.Tensor(np.zeros(16)))
        out = lstm_step(np.zeros(3), zero_state(4), w)
        assert np.all(out.hidden.value == 0) and np.all(out.cell.value == 0)

    def test_saturated_forget_gate_keeps_cell(self):
        n = 4
        b = np.zeros(4 * n)
        b[n:2 * n] = 50.0
        w = LstmWeights(ad.Tensor(np.zeros((3, 4 * n))), ad.Tensor(np.zeros((n, 4 * n))),
                        ad.Tensor(b))
        c = np.array([0.3, -1.2, 2.0, 0.0])
        out = lstm_step(np.ones(3), LstmState(ad.Tensor(np.zeros(n)), ad.Tensor(c)), w)
        np.testing.assert_allclose(out.cell.value, c, atol=1e-9)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(11)
        w = _weights(rng, 5, 4)
        x, h, c = rng.normal(size=5), rng.uniform(-1, 1, 4), rng.normal(size=4)
        out = lstm_step(x, LstmState(ad.Tensor(h), ad.Tensor(c)), w)
        ref_h, ref_c = naive_lstm(x, h, c, w.wx.value, w.wh.value, w.b.value)
        np.testing.assert_allclose(out.hidden.value, ref_h, rtol=0, atol=1e-12)
        np.testing.assert_allclose(out.cell.value, ref_c, rtol=0, atol=1e-12)

    def test_batch_rows_match_single(self):
        rng = np.random.default_rng(2)
        w = _weights(rng, 3, 5)
        xs = rng.normal(size=(4, 3))
        batch = lstm_step(xs, zero_state(5, 4), w)
        for i in range(4):
            single = lstm_step(xs[i], zero_state(5), w)
            np.testing.assert_allclose(batch.hidden.value[i], single.hidden.value, atol=1e-15)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        w = _weights(rng, 3, 4)
        x = rng.normal(size=3)
        a = lstm_step(x, zero_state(4), w).hidden.value
        b = lstm_step(x, zero_state(4), w).hidden.value
        assert a.tobytes() == b.tobytes()

    @pytest.mark.parametrize("bad", ["x", "wx", "hidden"])
    def test_shape_errors_name_tensor(self, bad):
        rng = np.random.default_rng(0)
        w = _weights(rng, 3, 4)
        x, state = np.zeros(3), zero_state(4)
        if bad == "x":
            x = np.zeros(2)
        elif bad == "wx":
            w = w._replace(wx=ad.Tensor(np.zeros((3, 12))))
        else:
            state = zero_state(5)
        with pytest.raises(DimensionError, match=bad):
            lstm_step(x, state, w)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_finite_and_bounded_for_bounded_weights(self, seed):
        rng = np.random.default_rng(seed)
        w = _weights(rng, 3, 4, scale=5.0)
        state = zero_state(4)
        for _ in range(10):
            state = lstm_step(rng.uniform(-5, 5, 3), state, w)
            assert np.all(np.isfinite(state.cell.value))
            assert np.all(np.abs(state.hidden.value) < 1)


class TestForwardBackward:
    def test_sum_of_squares(self):
        p = ad.parameter([1.0, 2.0], "p")
        loss, (g,) = ad.forward_backward(lambda: ad.sum(p * p), [p])
        assert loss == 5.0
        np.testing.assert_array_equal(g, [2.0, 4.0])

    def test_disconnected_parameter_gets_exact_zero(self):
        p, q = ad.parameter([1.0, 2.0], "p"), ad.parameter([3.0], "q")
        _, (gp, gq) = ad.forward_backward(lambda: ad.sum(p * p), [p, q])
        assert np.all(gq == 0.0)

    def test_non_scalar_loss_rejected(self):
        p = ad.parameter([1.0, 2.0], "p")
        with pytest.raises(ContractError):
            ad.forward_backward(lambda: p * p, [p])

    @pytest.mark.filterwarnings("ignore:invalid value encountered in log")
    def test_nan_reports_node(self):
        p = ad.parameter([-1.0], "p")
        with pytest.raises(NumericError, match="log"):
            ad.forward_backward(lambda: ad.sum(ad.log(p)), [p])

    def test_shared_subexpression_accumulates(self):
        p = ad.parameter(3.0, "p")
        _, (g,) = ad.forward_backward(lambda: (lambda y: y * y + y)(p * p), [p])
        # d/dp (p^4 + p^2) = 4p^3 + 2p
        assert g == pytest.approx(4 * 27 + 6)

    def test_quadratic_grad_check_is_tight(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(4, 4))
        p = ad.parameter(rng.normal(size=4), "p")
        err = ad.grad_check(lambda: ad.sum((p @ ad.Tensor(A)) * p), [p])
        assert err < 1e-9

    def test_every_op_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        W = ad.parameter(rng.normal(size=(3, 5)), "W")
        x = ad.parameter(rng.normal(size=(2, 3)), "x")
        u = ad.parameter(0.3, "u")
        idx = np.array([1, 4])

        def loss():
            z = x @ W
            a = ad.sigmoid(z[:, :2]) * ad.tanh(z[:, 2:4])
            lp = ad.pick(ad.log_softmax(z), idx)
            e = ad.expm1_ratio(u, np.array([0.5, 2.0])) * ad.exp(z[:, 4])
            rows = ad.take_rows(W.T, idx)
            return ad.sum(a) + ad.sum(lp) - ad.sum(e) + ad.sum(rows * rows) + \
                ad.sum(ad.log(ad.exp(z[:, 0]) + 1.0))

        assert ad.grad_check(loss, [W, x, u]) < 1e-6

    @pytest.mark.parametrize("u", [0.0, 1e-12, 1e-9, 1e-4, 2e-3, -0.7, 1.5])
    def test_expm1_ratio_value_and_slope(self, u):
        d = np.array([0.0, 0.3, 1.0, 4.0])
        p = ad.parameter(u, "u")
        val = ad.expm1_ratio(p, d).value
        ref = d if u == 0 else np.expm1(u * d) / u
        np.testing.assert_allclose(val, ref, rtol=1e-13, atol=1e-15)
        h = 1e-6
        num = (np.expm1((u + h) * d) / (u + h) - np.expm1((u - h) * d) / (u - h)) / (2 * h) \
            if abs(u) > 1e-3 else d * d * (0.5 + u * d / 3)
        _, (g,) = ad.forward_backward(lambda: ad.sum(ad.expm1_ratio(p, d)), [p])
        assert g == pytest.approx(np.sum(num), rel=1e-6, abs=1e-9)


class TestAdam:
    def test_zero_grad_fresh_state_is_identity(self):
        p = np.array([1.0, -2.0, 3.0])
        new, state = adam_step(p, np.zeros(3), AdamState.fresh(3))
        np.testing.assert_array_equal(new, p)
        assert state.step == 1

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 50))
    def test_zero_grad_is_identity_for_any_state(self, seed, step):
        rng = np.random.default_rng(seed)
        state = AdamState(step, rng.normal(size=5), rng.uniform(0, 2, 5))
        p = rng.normal(size=5)
        new, state2 = adam_step(p, np.zeros(5), state)
        np.testing.assert_array_equal(new, p)
        assert state2.step == step + 1
        assert np.all(state2.second_moment >= 0)

    def test_first_step_is_lr_times_sign(self):
        g = np.array([0.5, -3.0, 1e-3, -7e2])
        new, _ = adam_step(np.zeros(4), g, AdamState.fresh(4, learning_rate=0.001))
        np.testing.assert_allclose(new, -0.001 * np.sign(g), atol=1e-6)

    def test_quadratic_descends_monotonically(self):
        p, state = np.array([1.0]), AdamState.fresh(1, learning_rate=0.01)
        losses = [float(p[0] ** 2)]
        for _ in range(10):
            p, state = adam_step(p, 2 * p, state)
            losses.append(float(p[0] ** 2))
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            adam_step(np.zeros(3), np.zeros(2), AdamState.fresh(3))

    def test_clip_global_norm(self):
        grads = [np.array([3.0, 0.0]), np.array([[4.0]])]
        clipped, norm = clip_global_norm(grads, 1.0)
        assert norm == 5.0
        assert np.sqrt(sum(np.sum(g * g) for g in clipped)) == pytest.approx(1.0)
        same, _ = clip_global_norm(grads, 10.0)
        np.testing.assert_array_equal(same[0], grads[0])

    def test_optimizer_updates_in_place(self):
        p = ad.parameter([2.0, -1.0], "p")
        opt = Adam([p], learning_rate=0.1)
        for _ in range(50):
            _, g = ad.forward_backward(lambda: ad.sum(p * p), [p])
            opt.step(g)
        assert np.all(np.abs(p.value) < 0.5)


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        tensors = {"a": rng.normal(size=(3, 4)), "b": np.array(2.5), "c": rng.normal(size=7)}
        save_checkpoint(tmp_path / "m.ckpt", tensors, {"hidden": 4})
        cfg, out = load_checkpoint(tmp_path / "m.ckpt", {"a": (3, 4), "b": (), "c": (7,)})
        assert cfg == {"hidden": 4}
        for k in tensors:
            assert out[k].tobytes() == np.asarray(tensors[k]).tobytes()

    def test_layout_is_header_then_little_endian_payload(self, tmp_path):
        save_checkpoint(tmp_path / "m.ckpt", {"x": np.array([1.0, 2.0])})
        raw = (tmp_path / "m.ckpt").read_bytes()
        assert raw[:8] == b"HTPPCKPT"
        hlen = int.from_bytes(raw[8:16], "little")
        assert raw[16 + hlen:] == np.array([1.0, 2.0], dtype="<f8").tobytes()

    def test_shape_validation(self, tmp_path):
        save_checkpoint(tmp_path / "m.ckpt", {"x": np.zeros((2, 3))})
        with pytest.raises(DimensionError):
            load_checkpoint(tmp_path / "m.ckpt", {"x": (3, 2)})
        with pytest.raises(ValidationError):
            load_checkpoint(tmp_path / "m.ckpt", {"x": (2, 3), "y": (1,)})

    def test_rejects_foreign_file(self, tmp_path):
        (tmp_path / "junk").write_bytes(b"not a checkpoint at all")
        with pytest.raises(ValidationError):
            load_checkpoint(tmp_path / "junk")


def test_init_lstm_bounds():
    w = init_lstm(np.random.default_rng(0), 3, 16, "enc")
    for t in w:
        assert np.all(np.abs(t.value) <= 0.25)
    assert w.wx.name == "enc.wx"
