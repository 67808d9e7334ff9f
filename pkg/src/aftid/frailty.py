"""Posterior moments of the shared gamma frailty and the variance objective.

Conditionally on a subject's data and the current parameters, the gamma
frailty stays gamma distributed, so its posterior mean and log-mean have
closed forms in the subject's event count and total cumulative hazard.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics
from .data import Dataset, Observation
from .errors import DomainError, NegativeIncrement

__all__ = [
    "EStepState",
    "total_cumulative_hazard",
    "posterior_mean",
    "posterior_mean_log",
    "sigma_loglik",
    "update_estep",
    "maximize_sigma",
]

# Tolerance below which a truncation-interval hazard increment may dip under 0
# from interpolation rounding before it is clamped.
_INCREMENT_TOL = 1e-9


def _features(model, transition: str, p: int) -> np.ndarray:
    feats = getattr(model, "features_", None)
    if feats is None or feats.get(transition) is None:
        return np.arange(p)
    return np.asarray(feats[transition], dtype=int)


def _linear_predictor(model, transition: str, x: np.ndarray) -> np.ndarray:
    beta = np.asarray(model.coefs_[transition], dtype=float)
    idx = _features(model, transition, x.shape[1])
    return x[:, idx] @ beta


def total_hazard_vector(data: Dataset, model) -> np.ndarray:
    """Per-subject total cumulative hazard accumulated over the observed path.

    Sums the two state-0 cumulative hazards at the first observed time and,
    for diagnosed subjects, the 1->2 increment between diagnosis and the last
    observed time, all on the covariate-rescaled time axis.
    """
    t01 = data.v * np.exp(-_linear_predictor(model, "01", data.x))
    t02 = data.v * np.exp(-_linear_predictor(model, "02", data.x))
    total = model.cumulative_hazard("01", t01) + model.cumulative_hazard("02", t02)

    diagnosed = data.delta1 == 1
    if np.any(diagnosed):
        eta12 = _linear_predictor(model, "12", data.x[diagnosed])
        scale = np.exp(-eta12)
        h_exit = model.cumulative_hazard("12", data.w[diagnosed] * scale)
        h_entry = model.cumulative_hazard("12", data.v[diagnosed] * scale)
        increment = h_exit - h_entry
        if np.any(increment < -_INCREMENT_TOL):
            worst = float(increment.min())
            raise NegativeIncrement(
                f"1->2 cumulative hazard decreased by {-worst:.3e} over a truncation "
                "interval; the estimated hazard is not monotone"
            )
        np.clip(increment, 0.0, None, out=increment)
        bump = np.zeros(data.n)
        bump[diagnosed] = increment
        total = total + bump
    return total


def total_cumulative_hazard(obs: Observation, model) -> float:
    """Total cumulative hazard for a single observation (see vector form)."""
    data = Dataset.from_observations([obs])
    return float(total_hazard_vector(data, model)[0])


def posterior_mean(n_events, sigma, total_hazard):
    """Posterior mean of the frailty: (events + 1/sigma) / (1/sigma + hazard)."""
    if np.any(np.asarray(sigma) <= 0.0):
        raise DomainError("sigma must be positive")
    inv = 1.0 / sigma
    out = (np.asarray(n_events, dtype=float) + inv) / (inv + np.asarray(total_hazard, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def posterior_mean_log(n_events, sigma, total_hazard):
    """Posterior mean of the log frailty: digamma(events + 1/sigma) - log(1/sigma + hazard)."""
    if np.any(np.asarray(sigma) <= 0.0):
        raise DomainError("sigma must be positive")
    inv = 1.0 / sigma
    out = numerics.digamma(np.asarray(n_events, dtype=float) + inv) - np.log(
        inv + np.asarray(total_hazard, dtype=float)
    )
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class EStepState:
    """Posterior frailty moments for every subject at the current iterate."""

    gamma_mean: np.ndarray
    gamma_log_mean: np.ndarray

    def __post_init__(self):
        gm = np.asarray(self.gamma_mean, dtype=float)
        gl = np.asarray(self.gamma_log_mean, dtype=float)
        if gm.shape != gl.shape:
            raise DomainError("moment vectors must have equal length")
        if np.any(gm <= 0.0):
            raise DomainError("posterior frailty means must be positive")
        # E[log g] <= log E[g] by Jensen; allow rounding slack.
        if np.any(gl > np.log(gm) + 1e-12):
            raise DomainError("log-mean exceeds log of mean; moments are inconsistent")
        object.__setattr__(self, "gamma_mean", gm)
        object.__setattr__(self, "gamma_log_mean", gl)


def update_estep(data: Dataset, model) -> EStepState:
    """Posterior frailty moments for every subject under the current fit."""
    sigma = model.sigma_
    if sigma is None:
        raise DomainError("update_estep needs a frailty fit (sigma is absent)")
    total = total_hazard_vector(data, model)
    d = (data.delta1 + data.delta2 + data.delta3).astype(float)
    return EStepState(
        gamma_mean=posterior_mean(d, sigma, total),
        gamma_log_mean=posterior_mean_log(d, sigma, total),
    )


def sigma_loglik(sigma, n_events, state: EStepState, weights=None) -> float:
    """Expected complete-data log likelihood of the frailty variance.

    Each subject contributes ``(events + 1/sigma) * E[log g] - E[g]/sigma``;
    the gamma normalizer ``-(log sigma)/sigma - log_gamma(1/sigma)`` enters
    once per (weighted) subject. ``weights`` are the per-subject resampling
    weights, 1 when absent.
    """
    return _sigma_loglik_from_log(math.log(float(sigma)), np.asarray(n_events, dtype=float), state, weights)


def _sigma_loglik_from_log(log_sigma: float, d: np.ndarray, state: EStepState, weights=None) -> float:
    # 1/sigma as exp(-log sigma): stable when the search walks to tiny sigma.
    inv = math.exp(-log_sigma)
    n = d.shape[0]
    g = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    term_events = float(np.sum((d + inv) * state.gamma_log_mean * g)) / n
    term_mean = inv * float(np.sum(state.gamma_mean * g)) / n
    normalizer = -inv * log_sigma - numerics.log_gamma(inv)
    return term_events - term_mean + normalizer * float(np.mean(g))


def maximize_sigma(
    n_events,
    state: EStepState,
    weights=None,
    bounds=(1e-4, 100.0),
    tol=1e-6,
) -> float:
    """Maximize the variance objective over log sigma within ``bounds``."""
    d = np.asarray(n_events, dtype=float)
    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    u, _ = numerics.maximize_scalar(
        lambda t: _sigma_loglik_from_log(t, d, state, weights), lo, hi, tol=tol
    )
    return math.exp(u)
