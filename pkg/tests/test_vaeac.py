import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaeacshap import vaeac
from vaeacshap.nncore import ConfigurationError
from vaeacshap.vaeac import FeatureSchema, LatentGaussian, VaeacHyper, VaeacModel

TINY = VaeacHyper(depth=2, width=6, latent_dim=3, epochs=3, multistart=2, warmup_epochs=1,
                  iwae_samples=4, batch_size=16)


def _mixed_data(rng, n=80):
    X = np.column_stack([rng.standard_normal(n), rng.integers(1, 4, n), rng.standard_normal(n)])
    return X.astype(float), FeatureSchema((0, 3, 0))


class TestSchema:
    def test_widths(self):
        s = FeatureSchema((0, 3, 0, 2))
        assert s.encoded_width == 1 + 3 + 1 + 2
        assert s.decoder_width == 2 + 3 + 2 + 2
        assert list(s.column_features()) == [0, 1, 1, 1, 2, 3, 3]
        assert s.categorical == [1, 3] and s.continuous_features == [0, 2]

    def test_single_level_rejected(self):
        with pytest.raises(vaeac.SchemaError):
            FeatureSchema((0, 1))

    def test_validate_reports_feature(self):
        with pytest.raises(vaeac.SchemaError, match="feature 2"):
            FeatureSchema((0, 3)).validate(np.array([[0.5, 4.0]]))


class TestMasking:
    def test_uniform_rate(self, rng):
        m = vaeac.sample_masks(vaeac.UniformMasking(), 6, 20000, rng)
        assert abs(m.mean() - 0.5) < 0.01

    def test_frequency_masks_follow_counts(self, rng):
        scheme = vaeac.FrequencyMasking([0b001, 0b110], [1.0, 3.0])
        m = vaeac.sample_masks(scheme, 3, 20000, rng)
        # coalition 0b001 observes feature 1 only, so the mask hides 2 and 3
        frac = np.mean(np.all(m == [False, True, True], axis=1))
        assert abs(frac - 0.25) < 0.015
        assert np.all(np.all(m == [False, True, True], axis=1) | np.all(m == [True, False, False], axis=1))

    def test_frequency_rejects_bad_counts(self):
        with pytest.raises(ConfigurationError):
            vaeac.FrequencyMasking([1, 2], [1.0, 0.0])

    def test_coalition_masks(self):
        assert vaeac.coalition_masks([0b101], 3).tolist() == [[False, True, False]]


class TestKl:
    def test_identical_is_zero(self):
        g = LatentGaussian(np.array([[0.3, -1.0]]), np.array([[0.5, 2.0]]))
        assert vaeac.kl_diag_gauss(g, g)[0] == pytest.approx(0.0, abs=1e-15)

    def test_known_value(self):
        # KL(N(1, 1) || N(0, 4)) = log 2 + (1 + 1) / 8 - 1/2
        q = LatentGaussian(np.array([1.0]), np.array([1.0]))
        p = LatentGaussian(np.array([0.0]), np.array([2.0]))
        assert vaeac.kl_diag_gauss(q, p) == pytest.approx(np.log(2) + 0.25 - 0.5)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-3, 3), st.floats(0.1, 3), st.floats(-3, 3), st.floats(0.1, 3))
    def test_nonnegative(self, m1, s1, m2, s2):
        q = LatentGaussian(np.array([m1]), np.array([s1]))
        p = LatentGaussian(np.array([m2]), np.array([s2]))
        assert vaeac.kl_diag_gauss(q, p) >= -1e-12

    def test_matches_monte_carlo_in_standard_errors(self):
        from scipy import stats

        r = np.random.default_rng(7)
        for _ in range(10):
            q = LatentGaussian(r.uniform(-1, 1, 3), r.uniform(0.5, 1.5, 3))
            p = LatentGaussian(r.uniform(-1, 1, 3), r.uniform(0.5, 1.5, 3))
            z = q.mu + q.sigma * r.standard_normal((50000, 3))
            ratio = stats.norm.logpdf(z, q.mu, q.sigma).sum(1) - stats.norm.logpdf(z, p.mu, p.sigma).sum(1)
            se = ratio.std(ddof=1) / np.sqrt(ratio.size)
            assert abs(vaeac.kl_diag_gauss(q, p) - ratio.mean()) < 4 * se


class TestModel:
    def test_theta_views(self, rng):
        model = VaeacModel.init(FeatureSchema((0, 3)), TINY, rng)
        model.theta[:] = 0.25
        assert np.all(model.decoder.layers[0].weights == 0.25)

    def test_gradient_matches_finite_differences(self, rng):
        X, schema = _mixed_data(rng, 6)
        model = VaeacModel.init(schema, TINY, rng)
        masks = rng.random((6, 3)) < 0.5
        eps = rng.standard_normal((6, 3))
        _, g = model.vlb_and_grad(X, masks, eps)
        idx = rng.choice(model.theta.size, 40, replace=False)
        fd = np.empty(idx.size)
        for k, i in enumerate(idx):
            old = model.theta[i]
            model.theta[i] = old + 1e-5
            up = model.vlb_res(X, masks, eps).mean()
            model.theta[i] = old - 1e-5
            down = model.vlb_res(X, masks, eps).mean()
            model.theta[i] = old
            fd[k] = (up - down) / 2e-5
        assert np.linalg.norm(fd - g[idx]) <= 1e-5 * max(np.linalg.norm(fd), 1e-8)

    def test_untrained_sampling_refused(self, rng):
        model = VaeacModel.init(FeatureSchema((0, 0)), TINY, rng)
        with pytest.raises(vaeac.UsageError):
            model.sample_conditional(np.zeros(2), np.array([True, False]), 3, rng)

    def test_mask_shape_checked(self, rng):
        model = VaeacModel.init(FeatureSchema((0, 0)), TINY, rng)
        with pytest.raises(ConfigurationError):
            model.vlb_res(np.zeros((2, 2)), np.zeros((3, 2), dtype=bool), np.zeros((2, 3)))

    def test_fixed_length_encode(self):
        schema = FeatureSchema((0, 3))
        enc = vaeac.fixed_length_encode([2.0, 3.0], [False, True], schema, mean=[1.0, 0.0], sd=[2.0, 1.0])
        # standardized continuous value, zeroed one-hot of the hidden category, then the mask
        assert enc.tolist() == [0.5, 0.0, 0.0, 0.0, 0.0, 1.0]


class TestTraining:
    def test_deterministic_and_samples_valid(self, rng, tmp_path):
        X, schema = _mixed_data(rng)
        m1, log1 = vaeac.train(X, schema, hyper=TINY, rng=np.random.default_rng(3))
        m2, log2 = vaeac.train(X, schema, hyper=TINY, rng=np.random.default_rng(3))
        assert np.array_equal(m1.theta, m2.theta)
        assert log1.best_epoch == log2.best_epoch and 1 <= log1.best_epoch <= 3
        assert len(log1.start_vlb) == 2
        x = X[0]
        mask = np.array([True, True, False])
        draws = m1.sample_conditional(x, mask, 200, np.random.default_rng(0))
        assert draws.shape == (200, 3)
        assert np.all(draws[:, 2] == x[2])
        assert set(np.unique(draws[:, 1])) <= {1.0, 2.0, 3.0}

        path = tmp_path / "m.bin"
        m1.save(path, extra={"phi0": 1.5})
        back, extra = VaeacModel.load(path)
        assert extra == {"phi0": 1.5}
        assert np.array_equal(back.theta, m1.theta)
        a = back.sample_conditional(x, mask, 10, np.random.default_rng(4))
        b = m1.sample_conditional(x, mask, 10, np.random.default_rng(4))
        assert np.array_equal(a, b)

    def test_log_csv(self, rng, tmp_path):
        X, schema = _mixed_data(rng)
        vaeac.train(X, schema, hyper=TINY, rng=np.random.default_rng(1), log_path=tmp_path / "log.csv")
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_vlb,val_iwae" and len(lines) == 4

    def test_frequency_scheme_trains(self, rng):
        X, schema = _mixed_data(rng)
        scheme = vaeac.FrequencyMasking([0b011, 0b100], [2.0, 1.0])
        model, _ = vaeac.train(X, schema, scheme, TINY, np.random.default_rng(2))
        assert model.trained

    def test_too_few_rows(self, rng):
        with pytest.raises(ConfigurationError):
            vaeac.train(np.zeros((3, 2)), FeatureSchema((0, 0)), hyper=TINY, rng=rng)

    def test_constant_feature_rejected(self, rng):
        X = np.column_stack([rng.standard_normal(30), np.ones(30)])
        with pytest.raises(ConfigurationError, match=r"\[2\]"):
            vaeac.train(X, FeatureSchema((0, 0)), hyper=TINY, rng=rng)

    def test_epoch_default(self):
        assert VaeacHyper().resolved_epochs(1000) == 200
        assert VaeacHyper().resolved_epochs(1001) == 100
        assert VaeacHyper(epochs=7).resolved_epochs(10) == 7

    def test_learns_gaussian_conditional(self):
        # rho = 0.9: E[x2 | x1] = 0.9 x1, checked on the sample mean of draws
        r = np.random.default_rng(0)
        C = np.array([[1.0, 0.9], [0.9, 1.0]])
        X = r.standard_normal((600, 2)) @ np.linalg.cholesky(C).T
        hyper = VaeacHyper(depth=2, width=16, latent_dim=4, epochs=60, multistart=2, warmup_epochs=2)
        model, _ = vaeac.train(X, FeatureSchema((0, 0)), hyper=hyper, rng=np.random.default_rng(1))
        xs = np.array([-1.5, 0.0, 1.5])
        means = [model.sample_conditional([x1, 0.0], [False, True], 2000, r)[:, 1].mean() for x1 in xs]
        slope = np.polyfit(xs, means, 1)[0]
        assert 0.7 < slope < 1.1
