import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from npdetect.errors import TrainingError, ValidationError
from npdetect.vae import (
    PARAM_NAMES, VaeConfig, VaeModel, elbo, elbo_and_grad, encode, epoch_noise, init_params,
    kl_to_standard_normal, latent_features, param_shapes, train, zero_model,
)

from oracles import fd_gradient, max_relative_error, mc_kl


def random_model(cfg, scale=0.5, seed=0):
    rng = np.random.default_rng(seed)
    return VaeModel({k: rng.normal(0, scale, s) for k, s in param_shapes(cfg).items()}, cfg)


def clusters(n=300, d=13, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 2, (3, d))
    X = centers[rng.integers(0, 3, n)] + 0.3 * rng.standard_normal((n, d))
    return (X - X.mean(0)) / X.std(0)


class TestEncode:
    def test_zero_network(self):
        mu, lv = encode(zero_model(VaeConfig()), np.ones(13))
        assert np.all(mu == 0) and np.all(lv == 0)

    @pytest.mark.parametrize("latent", [3, 5])
    def test_dims(self, latent):
        mu, lv = encode(random_model(VaeConfig(latent_dim=latent)), np.ones(13))
        assert mu.shape == lv.shape == (latent,)

    def test_deterministic(self):
        m = random_model(VaeConfig())
        x = np.linspace(-1, 1, 13)
        a, b = encode(m, x), encode(m, x)
        assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            encode(zero_model(VaeConfig()), np.ones(12))
        with pytest.raises(ValidationError):
            latent_features(zero_model(VaeConfig()), np.ones((4, 14)))


class TestKl:
    def test_prior(self):
        assert kl_to_standard_normal(np.zeros(3), np.zeros(3)) == 0.0

    def test_unit_mean(self):
        assert kl_to_standard_normal(np.array([1.0]), np.array([0.0])) == 0.5

    @pytest.mark.parametrize("seed", range(4))
    def test_monte_carlo(self, seed):
        rng = np.random.default_rng(seed)
        mu = rng.normal(0, 1, 3)
        lv = rng.normal(0, 0.7, 3)
        est, se = mc_kl(mu, lv, 100_000, rng)
        assert abs(kl_to_standard_normal(mu, lv) - est) <= 3 * se

    @given(arrays(np.float64, 4, elements=st.floats(-20, 20)),
           arrays(np.float64, 4, elements=st.floats(-15, 15)))
    def test_nonnegative(self, mu, lv):
        assert kl_to_standard_normal(mu, lv) >= 0.0

    def test_elbo_with_zero_network(self):
        # KL vanishes, decoder is N(0, I): ELBO is the standard normal log-density
        x = np.array([0.5, -1.0, 0.0, 2.0])
        cfg = VaeConfig(input_dim=4, hidden_dim=3, latent_dim=2)
        want = -0.5 * np.sum(np.log(2 * np.pi) + x ** 2)
        assert elbo(zero_model(cfg), x, np.array([0.3, -0.2])) == pytest.approx(want, rel=1e-15)

    def test_noise_shape(self):
        with pytest.raises(ValidationError):
            elbo(zero_model(VaeConfig()), np.zeros(13), np.zeros(2))

    def test_non_finite_term_named(self):
        cfg = VaeConfig(input_dim=4, hidden_dim=3, latent_dim=2)
        m = zero_model(cfg)
        m.params["enc_b_logvar"][:] = 1e6
        with pytest.raises(TrainingError) as exc:
            elbo(m, np.zeros(4), np.zeros(2))
        assert exc.value.term == "kl"


class TestGradient:
    @pytest.mark.parametrize("seed", range(3))
    def test_central_differences(self, seed):
        cfg = VaeConfig(input_dim=4, hidden_dim=3, latent_dim=2)
        m = random_model(cfg, 0.5, seed)
        rng = np.random.default_rng(100 + seed)
        x = rng.standard_normal((1, 4))
        eps = rng.standard_normal((1, 2))
        _, g = elbo_and_grad(m.params, x, eps)
        num = fd_gradient(lambda p: float(elbo_and_grad(p, x, eps)[0][0]), m.params, 1e-5)
        assert max_relative_error(g, num) <= 1e-4

    def test_weights_sum_rows(self):
        cfg = VaeConfig(input_dim=4, hidden_dim=3, latent_dim=2)
        m = random_model(cfg, 0.4, 7)
        rng = np.random.default_rng(7)
        X, E = rng.standard_normal((3, 4)), rng.standard_normal((3, 2))
        w = np.array([0.2, 0.5, 0.3])
        _, g = elbo_and_grad(m.params, X, E, w)
        parts = [elbo_and_grad(m.params, X[i:i + 1], E[i:i + 1])[1] for i in range(3)]
        for k in g:
            np.testing.assert_allclose(g[k], sum(wi * p[k] for wi, p in zip(w, parts)), atol=1e-12)


class TestTrain:
    def test_init_std(self):
        cfg = VaeConfig(input_dim=100, hidden_dim=50, latent_dim=5)
        p = init_params(cfg)
        w = np.concatenate([v.ravel() for k, v in p.items() if "_w" in k])
        assert w.size >= 10_000
        assert abs(w.std() - 0.01) <= 0.2 * 0.01
        assert all(np.all(v == 0) for k, v in p.items() if "_b" in k)

    def test_trace_improves(self):
        m = train(clusters(), VaeConfig(epochs=60, batch_size=32, learning_rate=1e-2, seed=3))
        t = m.training_elbo_trace
        assert len(t) == 60
        assert np.mean(t[-6:]) > t[0]

    def test_seed_determinism(self):
        X = clusters(120)
        cfg = VaeConfig(epochs=5, batch_size=16, seed=11)
        a, b = train(X, cfg), train(X, cfg)
        for k in PARAM_NAMES:
            assert a.params[k].tobytes() == b.params[k].tobytes()
        c = train(X, VaeConfig(epochs=5, batch_size=16, seed=12))
        assert not np.array_equal(a.params["enc_w1"], c.params["enc_w1"])

    def test_noise_is_order_free(self):
        cfg = VaeConfig(seed=2)
        np.testing.assert_array_equal(epoch_noise(cfg, 4, 10)[:, :5], epoch_noise(cfg, 4, 5))

    def test_divergence_reported(self):
        X = clusters(64) * 1e200
        with pytest.raises(TrainingError) as exc:
            train(X, VaeConfig(epochs=3, batch_size=32))
        assert exc.value.epoch == 0 and exc.value.batch == 0

    def test_bad_input(self):
        with pytest.raises(ValidationError):
            train(np.zeros((0, 13)), VaeConfig())
        with pytest.raises(ValidationError):
            train(np.zeros((5, 12)), VaeConfig())
        with pytest.raises(ValidationError):
            train(np.full((5, 13), np.nan), VaeConfig())

    @pytest.mark.parametrize("kw", [dict(latent_dim=13), dict(hidden_dim=0),
                                    dict(learning_rate=0.0), dict(adam_beta1=1.0), dict(epochs=0)])
    def test_config_validation(self, kw):
        with pytest.raises(ValidationError):
            VaeConfig(**kw)


class TestLatent:
    def test_shape(self):
        Z = latent_features(random_model(VaeConfig(latent_dim=5)), np.ones((7, 13)))
        assert Z.shape == (7, 5)

    def test_duplicates_and_zero(self):
        X = np.random.default_rng(0).standard_normal((3, 13))
        X = np.vstack([X, X[1]])
        Z = latent_features(random_model(VaeConfig()), X)
        np.testing.assert_array_equal(Z[1], Z[3])
        assert np.all(latent_features(zero_model(VaeConfig()), X) == 0)

    def test_matches_encode(self):
        m = random_model(VaeConfig(), seed=4)
        X = np.random.default_rng(4).standard_normal((5, 13))
        Z = latent_features(m, X)
        for i in range(5):
            np.testing.assert_allclose(Z[i], encode(m, X[i])[0], rtol=0, atol=1e-14)

    def test_zero_noise_gives_mean(self):
        # with eps = 0 the sampled latent equals mu exactly
        from npdetect.vae import _forward
        m = random_model(VaeConfig(), seed=5)
        X = np.random.default_rng(5).standard_normal((4, 13))
        *_, cache = _forward(m.params, X, np.zeros((4, 3)))
        np.testing.assert_array_equal(cache[4], cache[1])


class TestPersistence:
    def test_json_round_trip(self):
        m = train(clusters(60), VaeConfig(epochs=2, batch_size=32))
        back = VaeModel.from_json(m.to_json())
        assert back.config == m.config
        for k in PARAM_NAMES:
            np.testing.assert_array_equal(back.params[k], m.params[k])
        assert back.training_elbo_trace == m.training_elbo_trace

    def test_shape_mismatch(self):
        m = zero_model(VaeConfig())
        text = m.to_json().replace('"latent_dim": 3', '"latent_dim": 4')
        with pytest.raises(ValidationError):
            VaeModel.from_json(text)
