import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from equilcast import neural
from equilcast.errors import ModelFormatError, NonFiniteInput, ShapeMismatch
from equilcast.neural import (
    NetworkConfig,
    TrainConfig,
    adam_init,
    adam_step,
    batch_nll,
    forward_batch,
    gaussian_nll,
    init_params,
    load_model,
    loss_and_grads,
    lstm_forward,
    network_forward,
    save_model,
    softplus,
    train_base_learner,
    zero_params,
)


def small_cfg(layers=(3, 4), T=12):
    return NetworkConfig(lstm_layer_sizes=layers, sequence_length=T)


def _scalar_lstm(xs, W, U, b):
    """Loop-over-scalars LSTM, gate order input, forget, cell, output."""
    H = U.shape[0]
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    h = [0.0] * H
    c = [0.0] * H
    out = []
    for x in xs:
        z = [sum(x[i] * W[i, j] for i in range(len(x))) + sum(h[k] * U[k, j] for k in range(H)) + b[j]
             for j in range(4 * H)]
        nh, nc = [], []
        for u in range(H):
            i, f, g, o = sig(z[u]), sig(z[H + u]), math.tanh(z[2 * H + u]), sig(z[3 * H + u])
            nc.append(f * c[u] + i * g)
            nh.append(o * math.tanh(nc[-1]))
        h, c = nh, nc
        out.append(list(h))
    return np.array(out)


class TestForward:
    def test_zero_weights_zero_hidden(self):
        h, _ = lstm_forward(np.ones((5, 1)), np.zeros((1, 8)), np.zeros((2, 8)), np.zeros(8))
        assert np.all(h == 0.0)

    def test_shapes(self):
        cfg = small_cfg()
        p = init_params(cfg, 0)
        mu, var, _ = forward_batch(np.zeros((12, 5)), p, cfg)
        assert mu.shape == var.shape == (12, 5)
        assert np.all(var >= cfg.variance_floor) and np.all(mu >= 0)

    def test_scalar_oracle(self, rng):
        W = rng.normal(0, 0.7, (1, 8))
        U = rng.normal(0, 0.7, (2, 8))
        b = rng.normal(0, 0.3, 8)
        xs = rng.normal(size=(3, 1))
        h, _ = lstm_forward(xs, W, U, b)
        np.testing.assert_allclose(h, _scalar_lstm(xs, W, U, b), atol=1e-12, rtol=0)

    def test_softplus(self):
        assert softplus(0.0) == pytest.approx(math.log(2))
        assert softplus(800.0) == pytest.approx(800.0)

    def test_zero_network_outputs(self):
        cfg = small_cfg()
        f = network_forward(np.linspace(0, 1, 12), zero_params(cfg), cfg)
        np.testing.assert_allclose(f.mu, 0.6931, atol=1e-4)
        np.testing.assert_allclose(f.var, 0.6931, atol=1e-4)

    def test_causality(self, rng):
        cfg = small_cfg()
        p = init_params(cfg, 4)
        x = rng.normal(size=12)
        y = x.copy()
        y[7:] += rng.normal(size=5)
        a, b = network_forward(x, p, cfg), network_forward(y, p, cfg)
        np.testing.assert_array_equal(a.mu[:7], b.mu[:7])
        np.testing.assert_array_equal(a.var[:7], b.var[:7])
        assert not np.allclose(a.mu[7:], b.mu[7:])

    def test_nonfinite_input(self):
        cfg = small_cfg()
        with pytest.raises(NonFiniteInput):
            network_forward(np.array([0.0, np.nan, 1.0]), zero_params(cfg), cfg)

    def test_wrong_width(self):
        cfg = small_cfg()
        with pytest.raises(ShapeMismatch):
            network_forward(np.zeros((4, 2)), zero_params(cfg), cfg)


class TestLoss:
    def test_reference_values(self):
        assert gaussian_nll(0.0, 1.0, 0.0) == pytest.approx(0.918939, abs=1e-6)
        assert gaussian_nll(0.0, 1.0, 1.0) == pytest.approx(1.418939, abs=1e-6)

    def test_variance_minimum_at_squared_residual(self):
        v = np.linspace(0.05, 3, 2000)
        best = v[np.argmin(gaussian_nll(0.0, v, 0.8))]
        assert best == pytest.approx(0.64, abs=2e-3)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(1e-3, 10))
    def test_bounded_by_variance_optimum(self, mu, y, var):
        r2 = (y - mu) ** 2
        if r2 < 1e-12:
            return
        floor = 0.5 * (math.log(2 * math.pi) + math.log(r2)) + 0.5
        assert gaussian_nll(mu, var, y) >= floor - 1e-12


def _numeric_grad(X, y, params, cfg, name, idx, eps=1e-5):
    p1 = {k: v.copy() for k, v in params.items()}
    p2 = {k: v.copy() for k, v in params.items()}
    p1[name][idx] += eps
    p2[name][idx] -= eps
    f1 = batch_nll(*forward_batch(X, p1, cfg)[:2], y)
    f2 = batch_nll(*forward_batch(X, p2, cfg)[:2], y)
    return (f1 - f2) / (2 * eps)


class TestGradients:
    @pytest.mark.parametrize("draw", range(3))
    def test_finite_difference(self, draw):
        rng = np.random.default_rng(100 + draw)
        cfg = small_cfg((4, 8), T=10)
        p = init_params(cfg, draw)
        X = rng.uniform(0, 1, (10, 2))
        y = rng.uniform(0.2, 1, 2)
        _, g = loss_and_grads(X, y, p, cfg)
        worst = 0.0
        for name, arr in p.items():
            for flat in rng.choice(arr.size, size=min(arr.size, 8), replace=False):
                idx = np.unravel_index(flat, arr.shape)
                num = _numeric_grad(X, y, p, cfg, name, idx)
                ana = g[name][idx]
                worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-4))
        assert worst <= 1e-5

    def test_mean_channel_stationary_at_zero_residual(self):
        cfg = small_cfg((3,), T=5)
        p = init_params(cfg, 0)
        X = np.full((5, 2), 0.3)
        # zero head weights give a constant forecast; the targets sit exactly on it
        p["head.W"] = np.zeros_like(p["head.W"])
        mu, _, _ = forward_batch(X, p, cfg)
        _, g = loss_and_grads(X, mu[-1], p, cfg)
        assert abs(g["head.b"][0]) < 1e-14

    def test_batch_gradient_is_mean(self, rng):
        cfg = small_cfg((3,), T=6)
        p = init_params(cfg, 3)
        X = rng.uniform(0, 1, (6, 4))
        y = rng.uniform(0, 1, 4)
        _, g = loss_and_grads(X, y, p, cfg)
        parts = [loss_and_grads(X[:, [j]], y[[j]], p, cfg)[1] for j in range(4)]
        for k in g:
            np.testing.assert_allclose(g[k], np.mean([q[k] for q in parts], axis=0), atol=1e-13)


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = {"w": np.array([1.0, -2.0])}
        new, _ = adam_step(p, {"w": np.zeros(2)}, adam_init(p), 1, TrainConfig())
        np.testing.assert_array_equal(new["w"], p["w"])

    def test_first_step_is_lr_times_sign(self):
        cfg = TrainConfig(learning_rate=0.01)
        p = {"w": np.array([1.0, -2.0, 0.5])}
        new, _ = adam_step(p, {"w": np.array([3.0, -0.2, 1e-3])}, adam_init(p), 1, cfg)
        np.testing.assert_allclose(p["w"] - new["w"], 0.01 * np.array([1, -1, 1]), rtol=1e-4)

    def test_step_counter(self):
        p = {"w": np.zeros(1)}
        with pytest.raises(ValueError):
            adam_step(p, p, adam_init(p), 0, TrainConfig())


class TestTraining:
    @pytest.mark.slow
    def test_constant_curves_reach_nll_optimum(self):
        rng = np.random.default_rng(0)
        T = 250
        cfg = NetworkConfig((32,), sequence_length=T)
        X = np.tile(rng.uniform(0, 1, 1024)[:, None], (1, T))
        V = np.tile(rng.uniform(0, 1, 32)[:, None], (1, T))
        tc = TrainConfig(epochs=50, batch_size=8, learning_rate=1e-2, lr_schedule="cosine",
                         min_learning_rate=1e-5)
        params, log = train_base_learner(X, cfg, tc, seed=0, val_X=V)
        optimum = 0.5 * (math.log(2 * math.pi) + math.log(cfg.variance_floor))
        assert len(log.val_nll) == 50
        assert min(log.val_nll) - optimum <= 0.05
        mu, var, _ = forward_batch(V.T, params, cfg)
        assert batch_nll(mu, var, V[:, -1]) == pytest.approx(min(log.val_nll))

    def test_cosine_schedule(self):
        tc = TrainConfig(epochs=11, learning_rate=1e-2, lr_schedule="cosine", min_learning_rate=1e-4)
        assert tc.lr_at(0) == pytest.approx(1e-2)
        assert tc.lr_at(10) == pytest.approx(1e-4)
        assert tc.lr_at(5) == pytest.approx(0.5 * (1e-2 + 1e-4))
        assert TrainConfig(learning_rate=3e-3).lr_at(7) == 3e-3

    def test_determinism_and_seed_dependence(self, rng):
        cfg = NetworkConfig((4,), sequence_length=8)
        X = rng.uniform(0, 1, (6, 8))
        tc = TrainConfig(epochs=3, batch_size=4)
        a, _ = train_base_learner(X, cfg, tc, seed=1)
        b, _ = train_base_learner(X, cfg, tc, seed=1)
        c, _ = train_base_learner(X, cfg, tc, seed=2)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])
        assert any(not np.array_equal(a[k], c[k]) for k in a)

    def test_length_checked(self):
        with pytest.raises(ShapeMismatch):
            train_base_learner(np.zeros((3, 5)), NetworkConfig((2,), sequence_length=6), TrainConfig(epochs=1))


class TestModelFile:
    def test_round_trip(self, tmp_path):
        cfg = small_cfg()
        p = init_params(cfg, 9)
        save_model(tmp_path / "m.eqm", p, cfg, seed=9)
        q, cfg2, header = load_model(tmp_path / "m.eqm")
        assert cfg2 == cfg and header["training_seed"] == 9
        for k in p:
            np.testing.assert_array_equal(q[k], p[k].astype(np.float32))

    def test_truncated(self, tmp_path):
        cfg = small_cfg()
        save_model(tmp_path / "m.eqm", init_params(cfg, 0), cfg)
        data = (tmp_path / "m.eqm").read_bytes()
        (tmp_path / "t.eqm").write_bytes(data[:-10])
        with pytest.raises(ModelFormatError):
            load_model(tmp_path / "t.eqm")
        (tmp_path / "x.eqm").write_bytes(b"\x01")
        with pytest.raises(ModelFormatError):
            load_model(tmp_path / "x.eqm")

    def test_wrong_format(self, tmp_path):
        import json
        import struct
        blob = json.dumps({"format": "other"}).encode()
        (tmp_path / "o.eqm").write_bytes(struct.pack("<Q", len(blob)) + blob)
        with pytest.raises(ModelFormatError):
            load_model(tmp_path / "o.eqm")
