import math

import numpy as np
import pytest

from updrspred.errors import (
    EmptyInputError,
    NumericError,
    ParameterError,
    ShapeError,
    StateError,
)
from updrspred.linalg import RandomSource
from updrspred.nn import (
    INVARIANT_CHECKS,
    AttentionParams,
    LstmParams,
    attention_forward,
    batchnorm_forward,
    bilstm_forward,
    commit_batchnorm,
    dense_forward,
    draw_dropout_masks,
    dropout_forward,
    grad_check,
    init_model_params,
    load_checkpoint,
    lstm_cell_forward,
    model_backward,
    model_forward,
    random_gradcheck_model,
    reset_invariant_counters,
    save_checkpoint,
)


def zero_lstm(input_dim, units):
    rows = units + input_dim
    return LstmParams(
        w_forget=np.zeros((rows, units)), w_input=np.zeros((rows, units)),
        w_cell=np.zeros((rows, units)), w_output=np.zeros((rows, units)),
        b_forget=np.zeros(units), b_input=np.zeros(units),
        b_cell=np.zeros(units), b_output=np.zeros(units),
    )


def random_lstm(rng, input_dim, units, scale=0.6):
    rows = units + input_dim
    def draw(shape):
        return rng.gaussians(0, scale, int(np.prod(shape))).reshape(shape)
    return LstmParams(
        w_forget=draw((rows, units)), w_input=draw((rows, units)),
        w_cell=draw((rows, units)), w_output=draw((rows, units)),
        b_forget=draw((units,)), b_input=draw((units,)),
        b_cell=draw((units,)), b_output=draw((units,)),
    )


def tiny_model(seed, dropout=0.0, l2=0.0):
    return init_model_params(
        RandomSource(seed), input_dim=1, units=4, attn_dim=3,
        dense_widths=(6, 4), dropout_rate=dropout, l2=l2,
    )


def scalar_cell_oracle(x, h_prev, c_prev, p):
    """Step-by-step recomputation with plain Python floats."""
    z = list(h_prev) + list(x)
    u = p.units
    f = [1.0 / (1.0 + math.exp(-(sum(z[r] * p.w_forget[r, j] for r in range(len(z)))
                                 + p.b_forget[j]))) for j in range(u)]
    i = [1.0 / (1.0 + math.exp(-(sum(z[r] * p.w_input[r, j] for r in range(len(z)))
                                 + p.b_input[j]))) for j in range(u)]
    g = [math.tanh(sum(z[r] * p.w_cell[r, j] for r in range(len(z))) + p.b_cell[j])
         for j in range(u)]
    o = [1.0 / (1.0 + math.exp(-(sum(z[r] * p.w_output[r, j] for r in range(len(z)))
                                 + p.b_output[j]))) for j in range(u)]
    c = [f[j] * c_prev[j] + i[j] * g[j] for j in range(u)]
    h = [o[j] * math.tanh(c[j]) for j in range(u)]
    return h, c


class TestLstmCell:
    def test_zero_parameters(self):
        p = zero_lstm(2, 3)
        state = lstm_cell_forward(np.array([5.0, -1.0]), np.zeros(3), np.zeros(3), p)
        assert np.allclose(state.forget, 0.5)
        assert np.allclose(state.input, 0.5)
        assert np.allclose(state.output, 0.5)
        assert np.allclose(state.candidate, 0.0)
        assert np.allclose(state.c, 0.0)
        assert np.allclose(state.h, 0.0)

    def test_saturated_forget_gate_preserves_cell(self):
        p = zero_lstm(1, 2)
        p.b_forget[:] = 100.0
        c_prev = np.array([0.7, -0.3])
        state = lstm_cell_forward(np.array([2.0]), np.zeros(2), c_prev, p)
        assert np.allclose(state.c, c_prev, atol=1e-12)

    def test_matches_scalar_oracle(self):
        rng = RandomSource(414)
        p = random_lstm(rng, 2, 3)
        x = rng.gaussians(0, 1, 2)
        h_prev = rng.gaussians(0, 1, 3)
        c_prev = rng.gaussians(0, 1, 3)
        state = lstm_cell_forward(x, h_prev, c_prev, p)
        h_ref, c_ref = scalar_cell_oracle(x, h_prev, c_prev, p)
        assert np.allclose(state.h, h_ref, atol=1e-12)
        assert np.allclose(state.c, c_ref, atol=1e-12)

    def test_gate_ranges(self):
        # moderate magnitudes: the open-interval bounds hold mathematically
        # but float64 rounds tanh(|x| > 19) to exactly 1
        rng = RandomSource(5)
        p = random_lstm(rng, 1, 4, scale=0.8)
        state = lstm_cell_forward(rng.gaussians(0, 1, 1), rng.gaussians(0, 1, 4),
                                  rng.gaussians(0, 1, 4), p)
        for gate in (state.forget, state.input, state.output):
            assert np.all((gate > 0) & (gate < 1))
        assert np.all((state.candidate > -1) & (state.candidate < 1))

    def test_shape_mismatch(self):
        p = zero_lstm(2, 3)
        with pytest.raises(ShapeError):
            lstm_cell_forward(np.zeros(5), np.zeros(3), np.zeros(3), p)


class TestBilstm:
    def test_t1_uses_same_step_twice(self):
        rng = RandomSource(6)
        p = random_lstm(rng, 1, 3)
        seq = np.array([[0.4]])
        H = bilstm_forward(seq, p, p)
        assert H.shape == (1, 6)
        assert np.allclose(H[0, :3], H[0, 3:])

    def test_palindrome_symmetry(self):
        rng = RandomSource(7)
        p = random_lstm(rng, 1, 4)
        seq = np.array([[0.3], [-1.2], [0.5], [-1.2], [0.3]])
        H = bilstm_forward(seq, p, p)
        T = seq.shape[0]
        for t in range(T):
            assert np.allclose(H[t, :4], H[T - 1 - t, 4:], atol=1e-12)

    def test_zero_parameters_zero_states(self):
        p = zero_lstm(1, 3)
        H = bilstm_forward(np.array([[1.0], [2.0]]), p, p)
        assert np.array_equal(H, np.zeros((2, 6)))

    def test_empty_sequence_rejected(self):
        p = zero_lstm(1, 2)
        with pytest.raises(EmptyInputError):
            bilstm_forward(np.zeros((0, 1)), p, p)


class TestAttention:
    def test_identical_rows_uniform_weights(self):
        rng = RandomSource(8)
        p = AttentionParams(
            w=rng.gaussians(0, 1, 12).reshape(3, 4), v=rng.gaussians(0, 1, 3)
        )
        row = rng.gaussians(0, 1, 4)
        H = np.tile(row, (5, 1))
        context, weights = attention_forward(H, p)
        assert np.allclose(weights, 0.2, atol=1e-12)
        assert np.allclose(context, row, atol=1e-12)

    def test_saturated_scores_pick_one_state(self):
        # v . tanh(w h) = 20 * h[0]: second row scores far above the first.
        p = AttentionParams(w=np.array([[20.0, 0.0]]), v=np.array([20.0]))
        H = np.array([[0.0, 1.0], [1.0, 5.0]])
        context, weights = attention_forward(H, p)
        assert weights[1] > 1 - 1e-6
        assert np.allclose(context, H[1], atol=1e-4)

    def test_matches_scalar_oracle(self):
        rng = RandomSource(9)
        p = AttentionParams(
            w=rng.gaussians(0, 1, 8).reshape(2, 4), v=rng.gaussians(0, 1, 2)
        )
        H = rng.gaussians(0, 1, 12).reshape(3, 4)
        context, weights = attention_forward(H, p)
        scores = []
        for t in range(3):
            pre = [math.tanh(sum(p.w[a, d] * H[t, d] for d in range(4))) for a in range(2)]
            scores.append(sum(p.v[a] * pre[a] for a in range(2)))
        mx = max(scores)
        exps = [math.exp(s - mx) for s in scores]
        ref_w = [e / sum(exps) for e in exps]
        ref_c = [sum(ref_w[t] * H[t, d] for t in range(3)) for d in range(4)]
        assert np.allclose(weights, ref_w, atol=1e-12)
        assert np.allclose(context, ref_c, atol=1e-12)

    def test_weights_sum_to_one(self):
        rng = RandomSource(10)
        p = AttentionParams(
            w=rng.gaussians(0, 2, 20).reshape(4, 5), v=rng.gaussians(0, 2, 4)
        )
        for _ in range(25):
            H = rng.gaussians(0, 5, 35).reshape(7, 5)
            _, weights = attention_forward(H, p)
            assert abs(weights.sum() - 1.0) <= 1e-9
            assert np.all(weights >= 0)

    def test_score_shift_invariance(self):
        # Adding a constant to every score must leave the weights unchanged;
        # shifting v's output via an extra constant row reproduces that.
        rng = RandomSource(11)
        H = rng.gaussians(0, 1, 20).reshape(5, 4)
        p = AttentionParams(w=rng.gaussians(0, 1, 12).reshape(3, 4),
                            v=rng.gaussians(0, 1, 3))
        _, base = attention_forward(H, p)
        pre = np.tanh(H @ p.w.T)
        scores = pre @ p.v
        for shift in (-50.0, 3.7, 200.0):
            shifted = scores + shift
            e = np.exp(shifted - shifted.max())
            w = e / e.sum()
            assert np.allclose(w, base, atol=1e-9)

    def test_empty_rejected(self):
        p = AttentionParams(w=np.zeros((2, 3)), v=np.zeros(2))
        with pytest.raises(EmptyInputError):
            attention_forward(np.zeros((0, 3)), p)


class TestDense:
    def test_relu_clamps(self):
        out = dense_forward(np.array([-1.0, 0.0, 2.0]), np.eye(3), np.zeros(3), "relu")
        assert np.array_equal(out, [0.0, 0.0, 2.0])

    def test_identity_linear(self):
        x = np.array([3.0, -4.0])
        assert np.array_equal(dense_forward(x, np.eye(2), np.zeros(2), "linear"), x)

    def test_hand_computed(self):
        w = np.array([[1.0, 2.0, 3.0], [0.0, -1.0, 1.0]])
        b = np.array([0.5, -0.5])
        x = np.array([1.0, 1.0, 2.0])
        # rows: 1+2+6+0.5 = 9.5, 0-1+2-0.5 = 0.5
        assert np.array_equal(dense_forward(x, w, b, "linear"), [9.5, 0.5])

    def test_unknown_activation(self):
        with pytest.raises(ParameterError):
            dense_forward(np.zeros(2), np.eye(2), np.zeros(2), "softplus")

    def test_shape_check(self):
        with pytest.raises(ShapeError):
            dense_forward(np.zeros(3), np.eye(2), np.zeros(2), "relu")


class TestBatchNorm:
    def bn(self, d, **kw):
        from updrspred.nn import BatchNormParams
        base = dict(gamma=np.ones(d), beta=np.zeros(d),
                    running_mean=np.zeros(d), running_var=np.ones(d))
        base.update(kw)
        return BatchNormParams(**base)

    def test_train_mode_normalizes(self):
        rng = RandomSource(12)
        X = rng.gaussians(3.0, 2.0, 200).reshape(50, 4)
        out, _ = batchnorm_forward(X, self.bn(4), "train")
        assert np.all(np.abs(out.mean(axis=0)) < 1e-9)
        assert np.allclose(out.var(axis=0), 1.0, atol=1e-4)

    def test_constant_column_maps_to_beta(self):
        bn = self.bn(1, beta=np.array([5.0]))
        X = np.full((10, 1), 2.5)
        out, _ = batchnorm_forward(X, bn, "train")
        assert np.allclose(out, 5.0, atol=1e-12)

    def test_infer_mode_uses_running_stats(self):
        bn = self.bn(2, running_mean=np.array([1.0, -2.0]),
                     running_var=np.array([1.0, 1.0]), beta=np.array([0.5, 0.5]))
        X = np.array([[1.0, -2.0]])
        out, _ = batchnorm_forward(X, bn, "infer")
        assert np.allclose(out, 0.5, atol=1e-5)

    def test_batch_of_one_rejected_in_train(self):
        with pytest.raises(ParameterError):
            batchnorm_forward(np.ones((1, 3)), self.bn(3), "train")

    def test_running_stats_updated_with_momentum(self):
        bn = self.bn(1)
        X = np.array([[2.0], [4.0]])  # batch mean 3, var 1
        _, cache = batchnorm_forward(X, bn, "train")
        new_mean, new_var = cache["new_running"]
        assert new_mean[0] == pytest.approx(0.9 * 0.0 + 0.1 * 3.0)
        assert new_var[0] == pytest.approx(0.9 * 1.0 + 0.1 * 1.0)


class TestDropout:
    def test_rate_zero_identity(self):
        x = np.arange(5.0)
        out, mask = dropout_forward(x, 0.0, "train", RandomSource(0))
        assert np.array_equal(out, x) and np.all(mask == 1.0)

    def test_infer_identity(self):
        x = np.arange(4.0)
        out, _ = dropout_forward(x, 0.9, "infer")
        assert np.array_equal(out, x)

    def test_expectation_preserved(self):
        rng = RandomSource(13)
        total = np.zeros(8)
        trials = 100_000
        x = np.ones(8)
        for _ in range(trials // 100):
            out, _ = dropout_forward(np.tile(x, (100, 1)), 0.3, "train", rng)
            total += out.sum(axis=0)
        assert np.all(np.abs(total / trials - 1.0) < 0.02)

    def test_rate_one_rejected(self):
        with pytest.raises(ParameterError):
            dropout_forward(np.ones(3), 1.0, "train", RandomSource(0))

    def test_mask_reuse(self):
        x = np.ones((4, 3))
        _, mask = dropout_forward(x, 0.5, "train", RandomSource(14))
        out2, mask2 = dropout_forward(x, 0.5, "train", mask=mask)
        assert np.array_equal(mask, mask2)
        assert np.array_equal(out2, x * mask)


class TestModelForward:
    def test_zero_parameters_predict_bias(self):
        p = tiny_model(1)
        for arr in p.learnable().values():
            arr[:] = 0.0
        p.out_b[0] = 7.25
        pred, _ = model_forward(np.ones((5, 1)), p, mode="infer")
        assert pred == pytest.approx(7.25)

    def test_infer_deterministic(self):
        p = tiny_model(2, dropout=0.3)
        x = RandomSource(3).gaussians(0, 1, 5).reshape(5, 1)
        p1, _ = model_forward(x, p, mode="infer")
        p2, _ = model_forward(x, p, mode="infer")
        assert p1 == p2

    def test_prediction_finite(self):
        p = tiny_model(4)
        rng = RandomSource(5)
        for _ in range(10):
            x = rng.gaussians(0, 10, 5).reshape(5, 1)
            pred, _ = model_forward(x, p, mode="infer")
            assert math.isfinite(pred)

    def test_batch_shape(self):
        p = tiny_model(6)
        X = RandomSource(7).gaussians(0, 1, 3 * 5).reshape(3, 5, 1)
        preds, _ = model_forward(X, p, mode="infer")
        assert preds.shape == (3,)

    def test_train_mode_single_sample_rejected(self):
        p = tiny_model(8, dropout=0.0)
        with pytest.raises(ParameterError):
            model_forward(np.ones((5, 1)), p, mode="train", rng=RandomSource(0))

    def test_wrong_step_width_rejected(self):
        p = tiny_model(9)
        with pytest.raises(ShapeError):
            model_forward(np.ones((4, 2)), p, mode="infer")


class TestModelBackward:
    def forward_train(self, p, seed=21, batch=3, T=5):
        X = RandomSource(seed).gaussians(0, 1, batch * T).reshape(batch, T, 1)
        masks = draw_dropout_masks(p, batch, RandomSource(seed + 1))
        preds, cache = model_forward(X, p, mode="train", dropout_masks=masks)
        return X, preds, cache

    def test_perfect_fit_zero_loss_and_output_grad(self):
        p = tiny_model(10, l2=0.0)
        _, preds, cache = self.forward_train(p)
        loss, grads = model_backward(cache, preds.copy(), p)
        assert loss == 0.0
        assert np.allclose(grads["out.w"], 0.0)
        assert np.allclose(grads["out.b"], 0.0)

    def test_penalty_only_gradient_is_2_lambda_w(self):
        p = tiny_model(11, l2=0.05)
        for name, arr in p.learnable().items():
            if name not in ("dense1.w", "dense2.w"):
                arr[:] = 0.0
        _, preds, cache = self.forward_train(p)
        assert np.allclose(preds, 0.0)
        loss, grads = model_backward(cache, np.zeros_like(preds), p)
        assert np.allclose(grads["dense1.w"], 2 * 0.05 * p.dense1.w, atol=1e-12)
        assert np.allclose(grads["dense2.w"], 2 * 0.05 * p.dense2.w, atol=1e-12)

    def test_infer_cache_rejected(self):
        p = tiny_model(12)
        X = np.ones((3, 5, 1))
        _, cache = model_forward(X, p, mode="infer")
        with pytest.raises(StateError):
            model_backward(cache, np.zeros(3), p)

    def test_missing_cache_rejected(self):
        with pytest.raises(StateError):
            model_backward({"nope": 1}, np.zeros(3), tiny_model(13))

    def test_gradients_cover_all_parameters(self):
        p = tiny_model(14, dropout=0.2, l2=0.01)
        _, preds, cache = self.forward_train(p)
        _, grads = model_backward(cache, preds + 1.0, p)
        assert set(grads) == set(p.learnable())
        for name, g in grads.items():
            assert g.shape == p.learnable()[name].shape, name


class TestGradCheck:
    def test_tiny_random_models_pass(self):
        for seed in range(5):
            p, X, y = random_gradcheck_model(seed)
            worst, _ = grad_check(p, X, y, eps=1e-4)
            assert worst < 1e-5, f"seed {seed}: {worst}"

    def test_corrupted_gradient_detected(self, monkeypatch):
        import updrspred.nn as nn_module
        original = nn_module.model_backward

        def corrupted(cache, target, p):
            loss, grads = original(cache, target, p)
            grads["fwd.w_forget"] = np.zeros_like(grads["fwd.w_forget"])
            return loss, grads

        monkeypatch.setattr(nn_module, "model_backward", corrupted)
        p, X, y = random_gradcheck_model(7)
        worst, per_block = grad_check(p, X, y, eps=1e-4)
        assert worst > 1e-2
        assert per_block["fwd.w_forget"] > 1e-2

    def test_penalty_only_model_near_exact(self):
        # zero data path: only the quadratic penalty contributes, and its
        # central difference is exact up to rounding of a tiny loss
        p = tiny_model(300, dropout=0.0, l2=0.05)
        for arr in p.learnable().values():
            arr[:] = 0.0
        p.dense1.w[2, 3] = 1.0
        p.dense2.w[1, 4] = -0.8
        X = np.zeros((3, 5, 1))
        y = np.zeros(3)
        worst, _ = grad_check(p, X, y, eps=1e-4)
        assert worst < 1e-10

    def test_bad_eps_rejected(self):
        p = tiny_model(400)
        with pytest.raises(ParameterError):
            grad_check(p, np.zeros((3, 5, 1)), np.zeros(3), eps=0.0)


class TestInvariantCounters:
    def test_counters_advance(self):
        reset_invariant_counters()
        p = tiny_model(15)
        X = RandomSource(16).gaussians(0, 1, 4 * 5).reshape(4, 5, 1)
        model_forward(X, p, mode="train", rng=RandomSource(17))
        assert INVARIANT_CHECKS["attention_weight_sum"] == 4
        assert INVARIANT_CHECKS["batchnorm_zero_mean"] == 2

    def test_violation_raises(self):
        p = AttentionParams(w=np.zeros((2, 3)), v=np.zeros(2))
        H = np.full((2, 2, 3), np.nan)
        from updrspred.nn import _attention_batch
        with pytest.raises(NumericError):
            _attention_batch(H, p)


class TestBatchNormCommit:
    def test_commit_applies_running_updates(self):
        p = tiny_model(18)
        X = RandomSource(19).gaussians(0, 1, 4 * 5).reshape(4, 5, 1)
        _, cache = model_forward(X, p, mode="train", rng=RandomSource(20))
        before = p.bn1.running_mean.copy()
        commit_batchnorm(cache, p)
        assert not np.array_equal(p.bn1.running_mean, before)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = tiny_model(21, dropout=0.25, l2=0.005)
        p.bn1.running_mean[:] = 0.3
        path = tmp_path / "model.ckpt.json"
        save_checkpoint(p, path)
        q = load_checkpoint(path)
        for name, arr in p.learnable().items():
            assert np.array_equal(arr, q.learnable()[name]), name
        assert np.array_equal(p.bn1.running_mean, q.bn1.running_mean)
        assert q.dropout_rate == 0.25 and q.l2 == 0.005
        x = RandomSource(22).gaussians(0, 1, 5).reshape(5, 1)
        assert model_forward(x, p)[0] == model_forward(x, q)[0]

    def test_version_checked(self, tmp_path):
        p = tiny_model(23)
        path = tmp_path / "model.ckpt.json"
        save_checkpoint(p, path)
        import json
        doc = json.loads(path.read_text())
        doc["version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(StateError):
            load_checkpoint(path)
