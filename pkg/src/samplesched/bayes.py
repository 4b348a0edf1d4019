"""Gaussian posterior estimators for a job's mean task length.

Model: the mean task length x of a job is drawn from Normal(mu, sigma0^2)
(job-wise variation); each observed task length is Normal(x, sigma1^2)
(task-wise variation).  A history-only estimator must predict with the
prior alone; a sampling estimator conditions on m observed task lengths.
An infinite prior variance is representable and selects the no-prior
limit, where the posterior is Normal(sample mean, sigma1^2/m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np


class InfinitePriorVarianceError(ValueError):
    """History-based estimation is undefined without a finite prior."""


class NoInformationError(ValueError):
    """No prior and no samples: the posterior does not exist."""


class GridTooNarrowError(ValueError):
    """Quadrature grid does not cover the posterior mass."""


@dataclass(frozen=True)
class GaussianPrior:
    """Prior over the mean task length: Normal(mu, sigma0_sq).

    ``sigma0_sq`` may be ``math.inf`` to express the no-prior mode.
    """

    mu: float
    sigma0_sq: float

    def __post_init__(self):
        if not self.sigma0_sq > 0:
            raise ValueError("sigma0_sq must be positive")


@dataclass(frozen=True)
class TaskNoise:
    """Task-wise variance around the job's mean task length."""

    sigma1_sq: float

    def __post_init__(self):
        if not self.sigma1_sq > 0:
            raise ValueError("sigma1_sq must be positive")


class Regime(Enum):
    SAMPLING_BETTER = "sampling-better"
    HISTORY_BETTER = "history-better"
    TIE = "tie"


def history_estimate(prior: GaussianPrior) -> tuple[float, float]:
    """Best history-only estimate: the prior mean, with the prior variance."""
    if math.isinf(prior.sigma0_sq):
        raise InfinitePriorVarianceError(
            "history-based estimation requires a finite prior variance"
        )
    return prior.mu, prior.sigma0_sq


def sampling_posterior(
    prior: GaussianPrior, noise: TaskNoise, samples: Sequence[float]
) -> tuple[float, float]:
    """Closed-form posterior (mean, variance) of x given observed task lengths.

    mean = (sum(y)/sigma1^2 + mu/sigma0^2) / (m/sigma1^2 + 1/sigma0^2),
    variance = 1 / (m/sigma1^2 + 1/sigma0^2).  With an infinite prior
    variance this reduces to (sample mean, sigma1^2/m).
    """
    m = len(samples)
    if math.isinf(prior.sigma0_sq):
        if m == 0:
            raise NoInformationError("no prior and no samples")
        mean = sum(samples) / m
        return mean, noise.sigma1_sq / m
    if m == 0:
        return prior.mu, prior.sigma0_sq
    precision = m / noise.sigma1_sq + 1.0 / prior.sigma0_sq
    mean = (sum(samples) / noise.sigma1_sq + prior.mu / prior.sigma0_sq) / precision
    return mean, 1.0 / precision


def posterior_quadrature_oracle(
    prior: GaussianPrior,
    noise: TaskNoise,
    samples: Sequence[float],
    lo: float,
    hi: float,
    step: float,
) -> tuple[float, float]:
    """Numerically integrated posterior (mean, variance) on a uniform grid.

    Trapezoidal integration of P(y|x)P(x) over x in [lo, hi].  Test oracle
    only: it never reuses the closed form except to verify that the grid
    covers the posterior (closed-form mean must lie in [lo+4s, hi-4s]).
    """
    if math.isinf(prior.sigma0_sq):
        raise InfinitePriorVarianceError("quadrature oracle needs a finite prior")
    if hi <= lo or step <= 0:
        raise ValueError("need hi > lo and step > 0")
    cf_mean, cf_var = sampling_posterior(prior, noise, samples)
    sd = math.sqrt(cf_var)
    if not (lo + 4 * sd <= cf_mean <= hi - 4 * sd):
        raise GridTooNarrowError(
            f"grid [{lo}, {hi}] too narrow around posterior mean {cf_mean:.6g}"
        )

    x = np.arange(lo, hi + step / 2, step)
    log_density = -((x - prior.mu) ** 2) / (2.0 * prior.sigma0_sq)
    for y in samples:
        log_density = log_density - (y - x) ** 2 / (2.0 * noise.sigma1_sq)
    density = np.exp(log_density - log_density.max())
    z = np.trapezoid(density, x)
    mean = np.trapezoid(x * density, x) / z
    second = np.trapezoid(x * x * density, x) / z
    return float(mean), float(second - mean * mean)


def regime_advantage(prior: GaussianPrior, noise: TaskNoise, m: int) -> Regime:
    """Which estimator is more accurate: compare sigma0^2 against sigma1^2/m."""
    if math.isinf(prior.sigma0_sq):
        raise InfinitePriorVarianceError("regime comparison needs a finite prior")
    if m < 1:
        raise ValueError("m must be >= 1")
    sampling_var = noise.sigma1_sq / m
    if prior.sigma0_sq > sampling_var:
        return Regime.SAMPLING_BETTER
    if prior.sigma0_sq < sampling_var:
        return Regime.HISTORY_BETTER
    return Regime.TIE
