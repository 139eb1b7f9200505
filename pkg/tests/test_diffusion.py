import math

import numpy as np
import pytest

from oracles import finite_difference_grad, log_gaussian, log_mixture
from psdm_ct.diffusion import (CountingScore, GaussianScore, GmmPrior, GmmScore, NoiseSchedule,
                               NoisyScore, OracleScore, ZeroScore, corrector_step, denoise_step,
                               dsm_loss, dsm_loss_terms, gmm_score, oracle_score, pc_sample,
                               predictor_step, sigma_at)
from psdm_ct.errors import IndexOutOfRange, OutOfRange, ShapeMismatch


@pytest.fixture
def sched():
    return NoiseSchedule(0.01, 1.0, 500)


class TestSchedule:
    def test_endpoints(self, sched):
        assert sigma_at(sched, 0.0) == pytest.approx(0.01)
        assert sigma_at(sched, 1.0) == pytest.approx(1.0)
        assert sigma_at(sched, 0.5) == pytest.approx(math.sqrt(0.01 * 1.0))

    def test_out_of_range(self, sched):
        with pytest.raises(OutOfRange):
            sigma_at(sched, 1.0001)
        with pytest.raises(OutOfRange):
            sigma_at(sched, -0.1)

    def test_grid(self, sched):
        assert sched.times[0] == 0 and sched.times[-1] == 1
        assert np.all(np.diff(sched.sigmas) > 0)
        assert len(sched.sigmas) == 500

    def test_single_step(self):
        assert NoiseSchedule(0.01, 1.0, 1).times.tolist() == [0.0]

    @pytest.mark.parametrize("args", [(0.0, 1.0, 10), (1.0, 0.5, 10), (0.01, 1.0, 0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            NoiseSchedule(*args)


class TestScores:
    def test_oracle_values(self, sched):
        x = np.arange(6.0).reshape(2, 3)
        assert not oracle_score(x, x, sched, 0.3).any()
        big = NoiseSchedule(0.5, 2.0, 10)
        np.testing.assert_allclose(oracle_score(x - 1, x, big, 1.0), 0.25)

    def test_oracle_finite_difference(self, sched, rng):
        x_true = rng.random((3, 3))
        for _ in range(10):
            t = float(rng.uniform(0, 1))
            x = x_true + sigma_at(sched, t) * rng.standard_normal((3, 3))
            var = sigma_at(sched, t) ** 2
            fd = finite_difference_grad(lambda z: log_gaussian(z, x_true, var), x,
                                        h=1e-4 * math.sqrt(var))
            np.testing.assert_allclose(oracle_score(x, x_true, sched, t), fd, rtol=1e-5,
                                       atol=1e-5 * np.abs(fd).max())

    def test_oracle_shape(self, sched):
        with pytest.raises(ShapeMismatch):
            oracle_score(np.zeros(3), np.zeros(4), sched, 0.5)

    def test_gmm_single_component_is_gaussian(self, sched, rng):
        mean = rng.random((4, 4))
        prior = GmmPrior([1.0], [mean], [0.2])
        x = rng.random((4, 4))
        expected = (mean - x) / (0.2**2 + sigma_at(sched, 0.4) ** 2)
        np.testing.assert_allclose(gmm_score(x, prior, sched, 0.4), expected, rtol=1e-12)
        np.testing.assert_allclose(GaussianScore(mean, 0.2, sched)(x, 0.4), expected, rtol=1e-12)

    def test_gmm_symmetric_midpoint(self, sched):
        prior = GmmPrior([0.5, 0.5], [np.zeros(2), np.full(2, 2.0)], [0.1, 0.1])
        np.testing.assert_allclose(gmm_score(np.ones(2), prior, sched, 0.3), 0.0, atol=1e-12)

    def test_gmm_finite_difference(self, sched, rng):
        means = [rng.random(2), rng.random(2)]
        w, s = [0.35, 0.65], [0.05, 0.12]
        prior = GmmPrior(w, means, s)
        for _ in range(10):
            t = float(rng.uniform(0, 1))
            x = rng.random(2)
            var = [sk**2 + sigma_at(sched, t) ** 2 for sk in s]
            h = 1e-4 * math.sqrt(min(var))
            fd = finite_difference_grad(lambda z: log_mixture(z, w, means, var), x, h=h)
            np.testing.assert_allclose(gmm_score(x, prior, sched, t), fd, rtol=1e-5,
                                       atol=1e-5 * np.abs(fd).max())

    def test_gmm_far_point_is_stable(self, sched):
        prior = GmmPrior([0.5, 0.5], [np.zeros(4), np.ones(4)], [0.01, 0.01])
        out = gmm_score(np.full(4, 1e3), prior, sched, 0.0)
        assert np.isfinite(out).all()

    def test_gmm_batch_axes(self, sched, rng):
        prior = GmmPrior([0.3, 0.7], [np.zeros(2), np.ones(2)], [0.1, 0.2])
        xs = rng.random((5, 2))
        batch = gmm_score(xs, prior, sched, 0.2)
        for k in range(5):
            np.testing.assert_allclose(batch[k], gmm_score(xs[k], prior, sched, 0.2), rtol=1e-13)

    def test_gmm_shape(self, sched):
        prior = GmmPrior([1.0], [np.zeros((2, 2))], [0.1])
        with pytest.raises(ShapeMismatch):
            gmm_score(np.zeros((3, 3)), prior, sched, 0.2)

    @pytest.mark.parametrize("w,s", [([0.5, 0.6], [0.1, 0.1]), ([0.5, 0.5], [0.1, 0.0]),
                                     ([1.0], [0.1, 0.1])])
    def test_gmm_invalid(self, w, s):
        with pytest.raises(ValueError):
            GmmPrior(w, [np.zeros(2)] * len(s), s)

    def test_gmm_save_load(self, tmp_path, rng):
        prior = GmmPrior([0.25, 0.75], [rng.random((3, 4)), rng.random((3, 4))], [0.1, 0.3])
        path = tmp_path / "prior.json"
        prior.save(path)
        back = GmmPrior.load(path)
        np.testing.assert_allclose(back.weights, prior.weights)
        np.testing.assert_allclose(back.stds, prior.stds)
        for a, b in zip(back.means, prior.means):
            np.testing.assert_allclose(a, b, rtol=1e-7)

    def test_score_output_shapes(self, sched, rng):
        x = rng.random((5, 6))
        for score in (ZeroScore(), OracleScore(x, sched), GaussianScore(x, 0.1, sched),
                      NoisyScore(ZeroScore(), 0.1, sched, 3)):
            out = score(x, 0.5)
            assert out.shape == x.shape and np.isfinite(out).all()

    def test_noisy_score_reproducible(self, sched):
        s = NoisyScore(ZeroScore(), 0.2, sched, seed=9)
        x = np.zeros((4, 4))
        np.testing.assert_array_equal(s(x, 0.37), s(x, 0.37))
        assert not np.array_equal(s(x, 0.37), s(x, 0.38))

    def test_counting_score(self):
        c = CountingScore(ZeroScore())
        for _ in range(3):
            c(np.zeros(2), 0.1)
        assert c.calls == 3


class TestDsm:
    def test_perfect_target_is_zero(self, sched):
        x0 = np.full((3, 3), 0.4)
        # With a single clean image every noisy draw is x0 + sigma z, so the
        # exact conditional target -z/sigma is the oracle score.
        assert dsm_loss(OracleScore(x0, sched), [x0], sched, 200, seed=1) == pytest.approx(
            0.0, abs=1e-18)

    def test_zero_score_equals_pixel_count(self, sched, rng):
        clean = [rng.random((4, 5)) for _ in range(3)]
        terms = dsm_loss_terms(ZeroScore(), clean, sched, 10_000, seed=2)
        se = terms.std(ddof=1) / math.sqrt(terms.size)
        assert abs(terms.mean() - 20) <= 3 * se

    def test_oracle_beats_perturbations(self, sched):
        x0 = np.linspace(0, 1, 9).reshape(3, 3)
        oracle = OracleScore(x0, sched)
        base = dsm_loss(oracle, [x0], sched, 10_000, seed=5)
        for factor in (0.5, 2.0, 0.0):
            other = dsm_loss(lambda x, t, f=factor: f * oracle(x, t), [x0], sched, 10_000, seed=5)
            assert base < other

    def test_invalid_draws(self, sched):
        with pytest.raises(ValueError):
            dsm_loss(ZeroScore(), [np.zeros(2)], sched, 0)


class TestSteps:
    def test_predictor_zero_score(self, sched, rng):
        x = rng.random((3, 3))
        np.testing.assert_array_equal(predictor_step(x, ZeroScore(), 10, sched, stochastic=False), x)

    def test_predictor_contracts_with_oracle(self, sched, rng):
        x_true = rng.random((3, 3))
        score = OracleScore(x_true, sched)
        x = x_true + rng.standard_normal((3, 3))
        for i in (1, 100, 499):
            out = predictor_step(x, score, i, sched, stochastic=False)
            assert np.linalg.norm(out - x_true) < np.linalg.norm(x - x_true)

    def test_predictor_formula(self, sched, rng):
        x = rng.random(4)
        score = GaussianScore(np.zeros(4), 0.3, sched)
        i = 250
        dvar = sched.sigmas[i] ** 2 - sched.sigmas[i - 1] ** 2
        z = np.random.default_rng(4).standard_normal(4)
        expected = x + dvar * score(x, sched.times[i]) + math.sqrt(dvar) * z
        np.testing.assert_allclose(predictor_step(x, score, i, sched, np.random.default_rng(4)),
                                   expected, rtol=1e-14)

    @pytest.mark.parametrize("i", [0, 500, -1])
    def test_predictor_index(self, sched, i):
        with pytest.raises(IndexOutOfRange):
            predictor_step(np.zeros(2), ZeroScore(), i, sched)

    def test_corrector_noop_cases(self, sched, rng):
        x = rng.random((3, 3))
        score = CountingScore(OracleScore(np.zeros((3, 3)), sched))
        np.testing.assert_array_equal(corrector_step(x, score, 5, sched, rng, snr=0.0), x)
        assert score.calls == 0
        np.testing.assert_array_equal(corrector_step(x, ZeroScore(), 5, sched, rng), x)

    def test_corrector_formula(self, sched, rng):
        x = rng.random(5)
        score = GaussianScore(np.ones(5), 0.2, sched)
        z = np.random.default_rng(11).standard_normal(5)
        s = score(x, sched.times[7])
        eps = 2 * (0.16 * np.linalg.norm(z) / np.linalg.norm(s)) ** 2
        np.testing.assert_allclose(corrector_step(x, score, 7, sched, np.random.default_rng(11)),
                                   x + eps * s + math.sqrt(2 * eps) * z, rtol=1e-14)

    def test_corrector_invalid(self, sched):
        with pytest.raises(ValueError):
            corrector_step(np.zeros(2), ZeroScore(), 1, sched, snr=-1)
        with pytest.raises(IndexOutOfRange):
            corrector_step(np.zeros(2), ZeroScore(), 500, sched)

    def test_corrector_stationarity(self):
        # each chain is one scalar pixel; stacking chains in one grid keeps
        # the step size common, which is what a batch of chains would share
        sched = NoiseSchedule(0.01, 1.0, 10)
        score = GaussianScore(np.zeros(2000), 0.0, sched)
        rng = np.random.default_rng(3)
        x = rng.standard_normal(2000)
        for _ in range(50):
            x = corrector_step(x, score, 9, sched, rng)
        assert abs(x.mean()) <= 3 / math.sqrt(2000)
        assert x.var() == pytest.approx(1.0, rel=0.1)

    def test_denoise_step_is_tweedie(self, sched):
        x_true = np.full(3, 0.5)
        x = x_true + 0.01
        out = denoise_step(x, OracleScore(x_true, sched), sched)
        np.testing.assert_allclose(out, x_true, atol=1e-15)


class TestSampler:
    def test_gaussian_moments(self):
        sched = NoiseSchedule(0.01, 1.0, 500)
        mu = np.array([0.5, 0.8])
        score = GaussianScore(np.tile(mu, (2000, 1)), 0.1, sched)
        x = pc_sample(score, (2000, 2), sched, np.random.default_rng(0))
        np.testing.assert_allclose(x.mean(axis=0), mu, rtol=0.05)
        np.testing.assert_allclose(x.var(axis=0), 0.1**2 + 0.01**2, rtol=0.10)

    def test_oracle_deterministic_collapse(self, rng):
        sched = NoiseSchedule(0.01, 1.0, 500)
        x_true = rng.random((8, 8))
        x = pc_sample(OracleScore(x_true, sched), (8, 8), sched, np.random.default_rng(1), snr=0.0,
                      stochastic=False)
        assert np.sqrt(np.mean((x - x_true) ** 2)) <= 1e-3

    def test_gmm_mode_weights(self):
        sched = NoiseSchedule(0.01, 1.0, 500)
        prior = GmmPrior([0.3, 0.7], [np.full(2, 0.2), np.full(2, 0.8)], [0.05, 0.05])
        x = pc_sample(GmmScore(prior, sched), (2000, 2), sched, np.random.default_rng(0))
        near_first = np.linalg.norm(x - 0.2, axis=1) < np.linalg.norm(x - 0.8, axis=1)
        assert abs(near_first.mean() - 0.3) <= 0.05

    def test_reproducible(self):
        sched = NoiseSchedule(0.01, 1.0, 50)
        score = GaussianScore(np.zeros((4, 4)), 0.1, sched)
        a = pc_sample(score, (4, 4), sched, np.random.default_rng(3))
        b = pc_sample(score, (4, 4), sched, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_score_budget(self):
        sched = NoiseSchedule(0.01, 1.0, 37)
        score = CountingScore(GaussianScore(np.zeros(3), 0.1, sched))
        pc_sample(score, (3,), sched, np.random.default_rng(0))
        assert score.calls == 2 * (37 - 1)
