"""Engine-level tests: activations, forward/backward, Adam, early stopping, checkpoints."""

import math

import numpy as np
import pytest

from specinv import nncore
from specinv.nncore import (
    ACT_IDENTITY,
    ACT_SILU,
    EarlyStopping,
    MlpModel,
    TrainingDivergedError,
    adam_init,
    adam_step,
    backward,
    forward,
    init_mlp,
    silu,
)


def finite_difference_grads(loss_fn, params, h=1e-5):
    """Central differences over every coordinate of every parameter array."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = p[i]
            p[i] = orig + h
            lp = loss_fn()
            p[i] = orig - h
            lm = loss_fn()
            p[i] = orig
            g[i] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


class TestSilu:
    def test_zero(self):
        assert silu(np.array([0.0]))[0] == 0.0

    def test_saturation(self):
        assert abs(silu(np.array([100.0]))[0] - 100.0) < 1e-9

    def test_unit_value(self):
        # scalar oracle: 1 * 1/(1 + e^-1)
        want = 1.0 / (1.0 + math.exp(-1.0))
        assert abs(silu(np.array([1.0]))[0] - want) < 1e-9

    def test_elementwise(self):
        v = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
        out = silu(v)
        for i, x in enumerate(v):
            assert out[i] == pytest.approx(x / (1.0 + math.exp(-x)), abs=1e-12)


class TestForward:
    def test_zero_weights_give_zero_output(self):
        model = MlpModel(
            layer_widths=[4, 3, 2],
            weights=[np.zeros((3, 4)), np.zeros((2, 3))],
            biases=[np.zeros(3), np.zeros(2)],
            activations=[ACT_SILU, ACT_SILU],
        )
        out, _ = forward(model, np.array([1.0, -2.0, 3.0, 4.0]))
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_identity_weight_layer_is_silu(self):
        model = MlpModel(
            layer_widths=[3, 3],
            weights=[np.eye(3)],
            biases=[np.zeros(3)],
            activations=[ACT_SILU],
        )
        v = np.array([-1.0, 0.3, 2.0])
        out, _ = forward(model, v)
        np.testing.assert_allclose(out, silu(v), rtol=0, atol=0)

    def test_eval_mode_ignores_rng(self):
        rng = np.random.default_rng(0)
        model = init_mlp([5, 7, 2], rng, dropout_after={0})
        x = rng.normal(size=5)
        out1, _ = forward(model, x, rng=np.random.default_rng(1))
        out2, _ = forward(model, x, rng=np.random.default_rng(2))
        np.testing.assert_array_equal(out1, out2)

    def test_shape_mismatch_raises(self):
        model = init_mlp([5, 2], np.random.default_rng(0))
        with pytest.raises(ValueError, match="input shape"):
            forward(model, np.zeros(4))

    def test_batch_matches_single(self):
        # batched and single paths may differ by BLAS summation order only
        rng = np.random.default_rng(3)
        model = init_mlp([6, 4, 3], rng)
        xs = rng.normal(size=(5, 6))
        batch_out, _ = forward(model, xs)
        for i in range(5):
            single, _ = forward(model, xs[i])
            np.testing.assert_allclose(batch_out[i], single, rtol=1e-12, atol=1e-15)


class TestDropout:
    def test_train_mode_mean_matches_eval(self):
        """Inverted scaling keeps the expected activation equal to the eval value."""
        rng = np.random.default_rng(0)
        model = init_mlp([4, 6], rng, dropout_after={0})
        x = np.abs(rng.normal(size=4)) + 0.5
        eval_out, _ = forward(model, x)
        n = 10_000
        batch = np.tile(x, (n, 1))
        rate = 0.3
        out, _ = forward(model, batch, train=True, dropout_rate=rate,
                         rng=np.random.default_rng(99))
        mean = out.mean(axis=0)
        se = out.std(axis=0, ddof=1) / math.sqrt(n)
        assert np.all(np.abs(mean - eval_out) <= 3.0 * se + 1e-12)

    def test_dropout_requires_rng(self):
        model = init_mlp([4, 4], np.random.default_rng(0), dropout_after={0})
        with pytest.raises(ValueError, match="rng"):
            forward(model, np.zeros(4), train=True, dropout_rate=0.5)


class TestBackward:
    def test_zero_output_gradient(self):
        rng = np.random.default_rng(1)
        model = init_mlp([3, 4, 2], rng)
        _, tape = forward(model, rng.normal(size=3))
        grads, gin = backward(model, tape, np.zeros(2))
        for g in grads:
            assert not g.any()
        assert not gin.any()

    def test_single_linear_layer_weight_gradient_is_input(self):
        """For loss = scalar output of one affine layer, dL/dW_ij = x_j."""
        model = MlpModel(
            layer_widths=[3, 1],
            weights=[np.array([[0.2, -0.4, 0.6]])],
            biases=[np.zeros(1)],
            activations=[ACT_IDENTITY],
        )
        x = np.array([1.5, -2.0, 0.25])
        _, tape = forward(model, x)
        grads, _ = backward(model, tape, np.ones(1))
        np.testing.assert_array_equal(grads[0], x[None, :])
        np.testing.assert_array_equal(grads[1], np.ones(1))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        model = init_mlp([3, 4, 2], rng)
        x = rng.normal(size=3)
        w = rng.normal(size=2)  # fixed projection makes the loss scalar

        def loss():
            out, _ = forward(model, x)
            return float(out @ w)

        _, tape = forward(model, x)
        grads, _ = backward(model, tape, w)
        numeric = finite_difference_grads(loss, model.parameters())
        assert max_rel_error(grads, numeric) <= 1e-4

    def test_dropout_mask_replayed(self):
        """With the rng re-seeded per evaluation the masked loss is deterministic,
        so finite differences check the train-mode (masked) gradient."""
        rng = np.random.default_rng(5)
        model = init_mlp([3, 5, 2], rng, dropout_after={0})
        x = rng.normal(size=3)
        w = rng.normal(size=2)

        def loss():
            out, _ = forward(model, x, train=True, dropout_rate=0.4,
                             rng=np.random.default_rng(123))
            return float(out @ w)

        _, tape = forward(model, x, train=True, dropout_rate=0.4,
                          rng=np.random.default_rng(123))
        grads, _ = backward(model, tape, w)
        numeric = finite_difference_grads(loss, model.parameters())
        assert max_rel_error(grads, numeric) <= 1e-4

    def test_tape_model_mismatch_raises(self):
        rng = np.random.default_rng(0)
        model = init_mlp([3, 4, 2], rng)
        other = init_mlp([3, 2], rng)
        _, tape = forward(model, np.zeros(3))
        with pytest.raises(ValueError):
            backward(other, tape, np.zeros(2))


class TestAdam:
    def test_zero_gradients_leave_parameters_unchanged(self):
        rng = np.random.default_rng(0)
        params = [rng.normal(size=(3, 2)), rng.normal(size=3)]
        before = [p.copy() for p in params]
        state = adam_init(params)
        for _ in range(25):
            adam_step(params, [np.zeros_like(p) for p in params], state)
        for p, b in zip(params, before):
            np.testing.assert_array_equal(p, b)

    def test_first_step_oracle(self):
        """After one update, delta = -lr * g / (|g| + eps) exactly (bias-corrected)."""
        g = np.array([0.3, -2.0, 1e-6])
        params = [np.zeros(3)]
        state = adam_init(params, learning_rate=1e-3)
        adam_step(params, [g], state)
        want = -1e-3 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(params[0], want, rtol=1e-12)

    def test_step_count(self):
        params = [np.ones(2)]
        state = adam_init(params)
        for n in range(1, 6):
            adam_step(params, [np.ones(2)], state)
            assert state.step_count == n

    def test_shape_mismatch_raises(self):
        params = [np.ones((2, 2))]
        state = adam_init(params)
        with pytest.raises(ValueError):
            adam_step(params, [np.ones(3)], state)

    def test_defaults(self):
        state = adam_init([np.zeros(1)])
        assert state.beta1 == 0.9
        assert state.beta2 == 0.999
        assert state.epsilon == 1e-8
        assert state.learning_rate == 1e-3


class TestEarlyStopping:
    def test_decreasing_losses_never_stop_early(self):
        stop = EarlyStopping(patience=5, min_delta=0.0, max_epochs=100)
        for i in range(99):
            assert not stop.update(100.0 - i, checkpoint=i)
        assert stop.update(0.5, checkpoint=99)  # max_epochs reached
        assert stop.epoch == 100

    def test_constant_loss_stops_after_patience(self):
        stop = EarlyStopping(patience=50, min_delta=1e-4, max_epochs=1000)
        stopped_at = None
        for epoch in range(1, 1000):
            if stop.update(2.0, checkpoint=epoch):
                stopped_at = epoch
                break
        assert stopped_at == 51

    def test_best_checkpoint_retained(self):
        stop = EarlyStopping(patience=50, min_delta=1e-4, max_epochs=1000)
        for epoch, loss in enumerate([3.0, 2.0, 2.5, 2.4, 2.3, 2.2], start=1):
            stop.update(loss, checkpoint=f"epoch-{epoch}")
        assert stop.best_checkpoint == "epoch-2"
        assert stop.best_val_loss == 2.0

    def test_best_val_loss_non_increasing(self):
        rng = np.random.default_rng(0)
        stop = EarlyStopping(patience=1000, max_epochs=2000)
        prev = math.inf
        for loss in rng.uniform(0.0, 5.0, size=200):
            stop.update(float(loss), checkpoint=None)
            assert stop.best_val_loss <= prev
            prev = stop.best_val_loss

    def test_nan_loss_raises(self):
        stop = EarlyStopping()
        with pytest.raises(TrainingDivergedError):
            stop.update(float("nan"), checkpoint=None)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        model = init_mlp([7, 5, 3], rng, dropout_after={0})
        path = tmp_path / "model.json"
        nncore.save_mlp(path, model)
        loaded = nncore.load_mlp(path)
        assert loaded.layer_widths == model.layer_widths
        assert loaded.activations == model.activations
        assert loaded.dropout_after == model.dropout_after
        for a, b in zip(model.parameters(), loaded.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_floats_written_with_17_significant_digits(self):
        text = nncore.dump_checkpoint_text({"x": 0.1})
        assert "0.10000000000000001" in text

    def test_wrong_kind_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        nncore.save_checkpoint(path, {"kind": "something-else"})
        with pytest.raises(ValueError, match="kind"):
            nncore.load_mlp(path)

    def test_non_finite_values_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            nncore.dump_checkpoint_text({"x": float("inf")})


class TestDeterminism:
    def test_identical_seeds_identical_trajectories(self):
        """Same seeds, same data: parameter trajectories are bit-identical."""

        def run():
            rng = np.random.default_rng(42)
            model = init_mlp([4, 8, 2], rng, dropout_after={0})
            data_rng = np.random.default_rng(1)
            x = data_rng.normal(size=(16, 4))
            t = data_rng.normal(size=(16, 2))
            params = model.parameters()
            state = adam_init(params)
            drop_rng = np.random.default_rng(9)
            for _ in range(20):
                out, tape = forward(model, x, train=True, dropout_rate=0.2, rng=drop_rng)
                g_out = 2.0 * (out - t) / out.size
                grads, _ = backward(model, tape, g_out)
                adam_step(params, grads, state)
            return [p.copy() for p in params]

        for a, b in zip(run(), run()):
            np.testing.assert_array_equal(a, b)
