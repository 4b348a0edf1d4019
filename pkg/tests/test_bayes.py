import math
import random

import pytest

from samplesched.bayes import (
    GaussianPrior,
    GridTooNarrowError,
    InfinitePriorVarianceError,
    NoInformationError,
    Regime,
    TaskNoise,
    history_estimate,
    posterior_quadrature_oracle,
    regime_advantage,
    sampling_posterior,
)

NOISE1 = TaskNoise(1.0)


class TestHistoryEstimate:
    def test_prior_passthrough(self):
        assert history_estimate(GaussianPrior(5.0, 2.0)) == (5.0, 2.0)

    def test_zero_mean(self):
        assert history_estimate(GaussianPrior(0.0, 1.0)) == (0.0, 1.0)

    def test_infinite_prior_rejected(self):
        with pytest.raises(InfinitePriorVarianceError):
            history_estimate(GaussianPrior(1.0, math.inf))


class TestSamplingPosterior:
    def test_no_prior_reduces_to_sample_mean(self):
        mean, var = sampling_posterior(
            GaussianPrior(0.0, math.inf), TaskNoise(4.0), [2.0, 4.0, 6.0]
        )
        assert mean == pytest.approx(4.0)
        assert var == pytest.approx(4.0 / 3.0)

    def test_one_sample_closed_form(self):
        # verified against the quadrature oracle below
        mean, var = sampling_posterior(GaussianPrior(2.0, 1.0), NOISE1, [4.0])
        assert mean == pytest.approx(3.0)
        assert var == pytest.approx(0.5)

    def test_no_samples_reduces_to_prior(self):
        assert sampling_posterior(GaussianPrior(5.0, 2.0), NOISE1, []) == (5.0, 2.0)

    def test_no_prior_no_samples(self):
        with pytest.raises(NoInformationError):
            sampling_posterior(GaussianPrior(0.0, math.inf), NOISE1, [])


class TestQuadratureOracle:
    def test_one_sample_case(self):
        mean, var = posterior_quadrature_oracle(
            GaussianPrior(2.0, 1.0), NOISE1, [4.0], -20.0, 20.0, 1e-4
        )
        assert mean == pytest.approx(3.0, abs=1e-6)
        assert var == pytest.approx(0.5, abs=1e-6)

    def test_symmetric_case(self):
        mean, var = posterior_quadrature_oracle(
            GaussianPrior(0.0, 1.0), NOISE1, [0.0, 0.0], -20.0, 20.0, 1e-4
        )
        assert mean == pytest.approx(0.0, abs=1e-6)
        assert var == pytest.approx(1.0 / 3.0, abs=1e-6)

    def test_narrow_grid_rejected(self):
        with pytest.raises(GridTooNarrowError):
            posterior_quadrature_oracle(
                GaussianPrior(2.0, 1.0), NOISE1, [4.0], 0.0, 0.1, 1e-4
            )


class TestRegime:
    def test_sampling_better(self):
        assert (
            regime_advantage(GaussianPrior(0.0, 1.0), TaskNoise(1.0), 10)
            is Regime.SAMPLING_BETTER
        )

    def test_history_better(self):
        assert (
            regime_advantage(GaussianPrior(0.0, 0.01), TaskNoise(1.0), 1)
            is Regime.HISTORY_BETTER
        )

    def test_tie(self):
        assert (
            regime_advantage(GaussianPrior(0.0, 0.5), TaskNoise(1.0), 2)
            is Regime.TIE
        )


class TestPosteriorProperties:
    def test_variance_nonincreasing_in_m(self):
        rng = random.Random(5)
        prior = GaussianPrior(1.0, 2.0)
        noise = TaskNoise(3.0)
        last = math.inf
        samples = []
        for m in range(1, 21):
            samples.append(rng.gauss(1.0, 1.0))
            _, var = sampling_posterior(prior, noise, samples)
            assert var <= last + 1e-12
            last = var

    def test_mean_between_prior_and_sample_mean(self):
        rng = random.Random(6)
        for _ in range(200):
            mu = rng.uniform(-10, 10)
            prior = GaussianPrior(mu, rng.uniform(0.1, 10))
            noise = TaskNoise(rng.uniform(0.1, 10))
            samples = [rng.gauss(mu, 2.0) for _ in range(rng.randint(1, 20))]
            ybar = sum(samples) / len(samples)
            mean, _ = sampling_posterior(prior, noise, samples)
            lo, hi = min(mu, ybar), max(mu, ybar)
            assert lo - 1e-9 <= mean <= hi + 1e-9

    def test_large_prior_variance_approaches_sample_mean(self):
        samples = [3.0, 5.0, 10.0]
        mean, _ = sampling_posterior(GaussianPrior(100.0, 1e9), NOISE1, samples)
        ybar = sum(samples) / len(samples)
        assert abs(mean - ybar) / ybar < 1e-6
