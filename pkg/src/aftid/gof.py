"""Marginal survival functions and randomized survival probabilities.

Marginalizing the gamma frailty gives closed-form survival probabilities for
staying healthy and for surviving after diagnosis. Randomized survival
probabilities evaluate those at the observed times, replacing each censored
value with a uniform draw below it; under the generating model both families
are uniform on (0, 1), so flat histograms and an insignificant
Kolmogorov-Smirnov statistic indicate good fit.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special as _special

from .data import Dataset
from .errors import DomainError, ExtrapolationWarning

__all__ = [
    "marginal_survival_state0",
    "marginal_survival_12",
    "RspSample",
    "rsp",
    "UniformityReport",
    "ks_uniform",
    "uniformity_report",
]


def _check_support(model, transition: str, times: np.ndarray) -> None:
    hazards = getattr(model, "hazards_", None)
    if hazards is None:
        return
    t_max = getattr(hazards.get(transition), "t_max", None)
    if t_max is not None and np.any(times > t_max):
        warnings.warn(
            f"transition {transition}: evaluation beyond the estimated range "
            f"(t_max={t_max:.6g}); cumulative hazard held constant there",
            ExtrapolationWarning,
            stacklevel=3,
        )


def _state0_hazard_sum(model, t, x) -> np.ndarray:
    """H01 + H02 on the covariate-rescaled axes, vectorized over subjects."""
    t = np.asarray(t, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    total = np.zeros(np.broadcast_shapes(t.shape, (x.shape[0],)))
    for jk in ("01", "02"):
        eta = model.linear_predictor(jk, x)
        scaled = t * np.exp(-eta)
        _check_support(model, jk, scaled)
        total = total + np.asarray(model.cumulative_hazard(jk, scaled))
    return total


def marginal_survival_state0(t, x, model):
    """P(no diagnosis and no death by t) given covariates, frailty averaged out.

    ``(1 + sigma * (H01 + H02))**(-1/sigma)`` under the frailty model,
    collapsing to ``exp(-(H01 + H02))`` when the fit has no frailty.
    """
    scalar = np.ndim(t) == 0 and np.ndim(x) == 1
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0.0):
        raise DomainError("t must be non-negative")
    total = _state0_hazard_sum(model, t_arr, x)
    sigma = model.sigma_
    if sigma is None:
        out = np.exp(-total)
    else:
        out = (1.0 + sigma * total) ** (-1.0 / sigma)
    return float(out[0]) if scalar else out


def marginal_survival_12(t, t1, x, model):
    """P(alive at t | diagnosed at t1) given covariates, frailty averaged out.

    The frailty form is the ratio of ``1 + sigma * (accumulated hazard)``
    before and after adding the 1->2 increment, raised to ``1/sigma + 1``;
    without frailty it is ``exp(-(H12(t) - H12(t1)))`` on the rescaled axis.
    Equals 1 at ``t == t1``.
    """
    scalar = np.ndim(t) == 0 and np.ndim(t1) == 0 and np.ndim(x) == 1
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    t1_arr = np.atleast_1d(np.asarray(t1, dtype=float))
    if np.any(t1_arr <= 0.0):
        raise DomainError("t1 must be positive")
    if np.any(t_arr < t1_arr):
        raise DomainError("t must not precede the diagnosis time t1")
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    eta12 = model.linear_predictor("12", x2)
    scale = np.exp(-eta12)
    _check_support(model, "12", t_arr * scale)
    increment = np.asarray(model.cumulative_hazard("12", t_arr * scale)) - np.asarray(
        model.cumulative_hazard("12", t1_arr * scale)
    )
    increment = np.clip(increment, 0.0, None)
    sigma = model.sigma_
    if sigma is None:
        out = np.exp(-increment)
    else:
        base = _state0_hazard_sum(model, t1_arr, x2)
        out = ((1.0 + sigma * base) / (1.0 + sigma * (base + increment))) ** (1.0 / sigma + 1.0)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class RspSample:
    """Randomized survival probabilities plus the unmodified survivals.

    ``rsp0`` has one entry per subject; ``rsp12`` covers diagnosed subjects
    only, in dataset order. ``survival0``/``survival12`` are the survival
    probabilities before randomization (the censored entries of those are not
    uniform and are kept for the side-by-side histograms).
    """

    rsp0: np.ndarray
    rsp12: np.ndarray
    survival0: np.ndarray
    survival12: np.ndarray
    u_seed: int

    def __post_init__(self):
        for name in ("rsp0", "rsp12"):
            vals = getattr(self, name)
            if np.any((vals < 0.0) | (vals > 1.0)):
                raise DomainError(f"{name} must lie in [0, 1]")


def rsp(data: Dataset, model, u_seed: int = 0) -> RspSample:
    """Randomized survival probabilities for a dataset under a fitted model.

    Event subjects keep their survival probability exactly; censored subjects
    get an independent uniform fraction of theirs. Draw order is fixed (all
    state-0 uniforms, then the post-diagnosis ones), so the sample is a pure
    function of ``(data, model, u_seed)``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(u_seed))
    u1 = rng.random(data.n)
    diag = data.delta1 == 1
    n1 = int(diag.sum())
    u2 = rng.random(n1)

    surv0 = marginal_survival_state0(data.v, data.x, model)
    first_event = (data.delta1 + data.delta2) == 1
    rsp0 = np.where(first_event, surv0, u1 * surv0)

    if n1:
        surv12 = marginal_survival_12(data.w[diag], data.v[diag], data.x[diag], model)
        death = data.delta3[diag] == 1
        rsp12 = np.where(death, surv12, u2 * surv12)
    else:
        surv12 = np.empty(0)
        rsp12 = np.empty(0)
    return RspSample(rsp0=rsp0, rsp12=rsp12, survival0=surv0, survival12=surv12, u_seed=u_seed)


def ks_uniform(values) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov statistic against U(0,1), asymptotic p-value."""
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    if n < 1:
        raise DomainError("need at least one value")
    if np.any((v < 0.0) | (v > 1.0)):
        raise DomainError("values must lie in [0, 1]")
    grid = np.arange(1, n + 1) / n
    d_plus = float(np.max(grid - v))
    d_minus = float(np.max(v - (grid - 1.0 / n)))
    stat = max(d_plus, d_minus)
    p = float(_special.kolmogorov(math.sqrt(n) * stat))
    return stat, p


@dataclass(frozen=True)
class UniformityReport:
    """Histogram of values on [0,1] with the uniform reference and a KS test."""

    bin_edges: np.ndarray
    counts: np.ndarray
    expected: float
    ks_stat: float
    p_value: float
    n: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_left", "bin_right", "count", "expected"])
            for j in range(self.counts.size):
                writer.writerow(
                    [
                        repr(float(self.bin_edges[j])),
                        repr(float(self.bin_edges[j + 1])),
                        int(self.counts[j]),
                        repr(float(self.expected)),
                    ]
                )

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "bins": int(self.counts.size),
                "expected_per_bin": float(self.expected),
                "ks_stat": float(self.ks_stat),
                "p_value": float(self.p_value),
            },
            sort_keys=True,
            indent=2,
        )


def uniformity_report(values, bins: int = 20) -> UniformityReport:
    """Bin values on [0,1] and test them against the uniform distribution."""
    if bins < 2:
        raise DomainError("bins must be at least 2")
    v = np.asarray(values, dtype=float)
    counts, edges = np.histogram(v, bins=bins, range=(0.0, 1.0))
    stat, p = ks_uniform(v)
    return UniformityReport(
        bin_edges=edges,
        counts=counts,
        expected=v.size / bins,
        ks_stat=stat,
        p_value=p,
        n=v.size,
    )
