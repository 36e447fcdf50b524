import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from equilcast import ensemble, neural
from equilcast.datahub import MinMaxStats
from equilcast.ensemble import EnsembleModel, aggregate, load_ensemble, save_ensemble, train_ensemble
from equilcast.errors import ModelFormatError, ShapeMismatch
from equilcast.neural import NetworkConfig, ProbabilisticForecast, TrainConfig


def pf(mu, var):
    return ProbabilisticForecast(np.atleast_1d(np.asarray(mu, float)), np.atleast_1d(np.asarray(var, float)))


class TestAggregate:
    def test_single_member(self, rng):
        f = pf(rng.normal(size=7), rng.uniform(0.1, 1, 7))
        a = aggregate([f])
        np.testing.assert_array_equal(a.mu_star, f.mu)
        np.testing.assert_array_equal(a.var_star, f.var)

    def test_identical_members(self):
        f = pf([1.0, 2.0], [0.5, 0.25])
        a = aggregate([f] * 5)
        np.testing.assert_array_equal(a.mu_star, f.mu)
        np.testing.assert_array_equal(a.var_star, f.var)

    def test_two_point_example(self):
        a = aggregate([pf(0.0, 1.0), pf(2.0, 1.0)])
        assert a.mu_star[0] == 1.0 and a.var_star[0] == 2.0

    def test_monte_carlo_mixture(self, rng):
        mus = np.array([-1.0, 0.5, 2.0, 0.1])
        vs = np.array([0.3, 1.0, 0.2, 2.0])
        a = aggregate([pf(m, v) for m, v in zip(mus, vs)])
        k = rng.integers(0, 4, 1_000_000)
        draws = rng.normal(mus[k], np.sqrt(vs[k]))
        assert draws.mean() == pytest.approx(a.mu_star[0], abs=0.01 * np.sqrt(a.var_star[0]))
        assert draws.var() == pytest.approx(a.var_star[0], rel=0.01)

    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(1e-3, 5)), min_size=1, max_size=8),
           st.randoms(use_true_random=False))
    def test_permutation_and_lower_bound(self, members, rnd):
        fs = [pf(m, v) for m, v in members]
        a = aggregate(fs)
        shuffled = list(fs)
        rnd.shuffle(shuffled)
        b = aggregate(shuffled)
        np.testing.assert_allclose(a.mu_star, b.mu_star, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(a.var_star, b.var_star, rtol=1e-12, atol=1e-12)
        assert a.var_star[0] >= np.mean([v for _, v in members]) * (1 - 1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            aggregate([pf([1, 2], [1, 1]), pf([1, 2, 3], [1, 1, 1])])


@pytest.fixture(scope="module")
def tiny_model():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 1, 10)
    X = np.array([a * (1 - np.exp(-t / 0.3)) for a in rng.uniform(0.2, 0.9, 12)])
    cfg = NetworkConfig((4,), sequence_length=10)
    model = train_ensemble(X, cfg, TrainConfig(epochs=4, batch_size=4), m=3, master_seed=11,
                           normalizer=MinMaxStats(0.0, 1.0), train_ids=[f"c{i}" for i in range(12)])
    return model, X


class TestEnsembleModel:
    def test_members_distinct_and_seeded(self, tiny_model):
        model, _ = tiny_model
        assert model.member_seeds == [11, 12, 13]
        assert not np.array_equal(model.members[0]["head.W"], model.members[1]["head.W"])
        assert all(lg.train_ids == model.logs[0].train_ids for lg in model.logs)

    def test_determinism(self, tiny_model):
        model, X = tiny_model
        again = train_ensemble(X, model.config, TrainConfig(epochs=4, batch_size=4), m=3, master_seed=11)
        for a, b in zip(model.members, again.members):
            for k in a:
                np.testing.assert_array_equal(a[k], b[k])

    def test_stream_matches_batch(self, tiny_model):
        model, X = tiny_model
        mu, var = ensemble.predict_batch(model, X[:3])
        for j in range(3):
            a = ensemble.predict_stream(model, X[j])
            np.testing.assert_allclose(a.mu_star, mu[j], rtol=1e-12)
            np.testing.assert_allclose(a.var_star, var[j], rtol=1e-12)
            # a shorter prefix reproduces the leading forecasts
            p = ensemble.predict_stream(model, X[j, :6])
            np.testing.assert_allclose(p.mu_star, mu[j, :6], rtol=1e-12)

    def test_subset(self, tiny_model):
        model, X = tiny_model
        one = model.subset(1)
        mu, var = ensemble.predict_batch(one, X[:2])
        m0, v0 = neural.predict_batch(X[:2], model.members[0], model.config)
        np.testing.assert_array_equal(mu, m0)
        np.testing.assert_allclose(var, v0)
        with pytest.raises(ValueError):
            model.subset(4)

    def test_save_load(self, tiny_model, tmp_path):
        model, X = tiny_model
        save_ensemble(model, tmp_path / "ens")
        back = load_ensemble(tmp_path / "ens")
        assert len(back) == 3 and back.member_seeds == model.member_seeds
        assert back.normalizer == model.normalizer
        mu, _ = ensemble.predict_batch(model, X[:2])
        mu2, _ = ensemble.predict_batch(back, X[:2])
        np.testing.assert_allclose(mu, mu2, rtol=1e-5)

    def test_load_errors(self, tmp_path):
        with pytest.raises(ModelFormatError):
            load_ensemble(tmp_path)
        (tmp_path / "ensemble.json").write_text("{bad")
        with pytest.raises(ModelFormatError):
            load_ensemble(tmp_path)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            EnsembleModel([], NetworkConfig((2,)))
