"""EM driver for the gamma-frailty AFT illness-death model.

The algorithm alternates posterior frailty moments (E-step) with three
profile-likelihood maximizations, a scalar frailty-variance maximization, and
a refresh of the baseline-hazard estimators (M-step). The no-frailty variant
is the same machinery with the frailty moments pinned at 1 and no iteration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import frailty as _frailty
from . import numerics, smoothing
from .data import Dataset, transition_counts
from .errors import (
    DomainError,
    EmptyRiskSet,
    FlatCoordinateWarning,
    NegativeIncrement,
    NonFiniteObjective,
    ZeroEvents,
)
from .frailty import EStepState
from .smoothing import BandwidthSet, BaselineHazard

__all__ = ["FitConfig", "ModelFit", "initialize", "em_iterate", "fit", "fit_no_frailty"]

TRANSITIONS = ("01", "02", "12")


@dataclass(frozen=True)
class FitConfig:
    """Tuning knobs for one fit; the defaults reproduce the reference setup."""

    zeta_beta: float = 0.5
    zeta_hazard: float = 0.01
    sigma_init: float = 2.0
    max_iterations: int = 200
    tol_beta: float = 1e-5
    tol_hazard: float = 1e-4
    tol_sigma: float = 1e-4
    kernel: str = "gaussian"
    sigma_bounds: tuple = (1e-4, 100.0)
    grid_size: int = 512
    optimizer_max_iter: int = 200
    bandwidths: BandwidthSet | None = None
    check_identifiability: bool = True
    # squared-extrapolation acceleration of the EM fixed point; the plain
    # alternating loop is kept under accelerate=False and reaches the same
    # fixed point, only slower
    accelerate: bool = True

    def __post_init__(self):
        for name in ("tol_beta", "tol_hazard", "tol_sigma"):
            if not getattr(self, name) > 0.0:
                raise DomainError(f"{name} must be positive")
        if not self.sigma_init > 0.0:
            raise DomainError("sigma_init must be positive")
        if self.kernel not in numerics.KERNELS:
            raise DomainError(f"unknown kernel {self.kernel!r}")


def _resolve_features(data: Dataset, features) -> dict:
    """Normalize per-transition feature selections to column-index arrays."""
    out = {}
    for jk in TRANSITIONS:
        sel = None if features is None else features.get(jk)
        if sel is None:
            out[jk] = np.arange(data.p)
        else:
            sel = list(sel)
            if sel and isinstance(sel[0], str):
                out[jk] = data.covariate_index(sel)
            else:
                out[jk] = np.asarray(sel, dtype=int)
    return out


class ModelFit:
    """Fitted model state: coefficients, frailty variance, hazards, diagnostics."""

    def __init__(self, coefs, sigma, hazards, estep, features, coef_names, bandwidths):
        self.coefs_: dict = coefs
        self.sigma_ = sigma
        self.hazards_: dict = hazards
        self.estep_: EStepState = estep
        self.features_: dict = features
        self.coef_names_: dict = coef_names
        self.bandwidths_: BandwidthSet = bandwidths
        self.n_iter_: int = 0
        self.converged_: bool = False
        self.trace_: list = []

    def cumulative_hazard(self, transition: str, times):
        return self.hazards_[transition].cumulative(times)

    def hazard(self, transition: str, times):
        return self.hazards_[transition].hazard(times)

    def linear_predictor(self, transition: str, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x[:, self.features_[transition]] @ self.coefs_[transition]

    def parameters(self) -> dict:
        """Flat name -> value mapping of sigma and all coefficients."""
        out = {}
        if self.sigma_ is not None:
            out["sigma"] = float(self.sigma_)
        for jk in TRANSITIONS:
            for name, val in zip(self.coef_names_[jk], self.coefs_[jk]):
                out[f"{jk}:{name}"] = float(val)
        return out


def _maximize_transition(beta0, transition, data, e1, bw_pair, weights, kernel, features,
                         tol, max_iter, hess0=None):
    a_den, a_cum = bw_pair

    def value(b):
        try:
            return smoothing.profile_loglik(
                b, transition, data, e1, a_den, cum_bandwidth=a_cum,
                weights=weights, kernel=kernel, features=features,
            )
        except EmptyRiskSet:
            return -np.inf

    def grad(b):
        _, g = smoothing.profile_loglik(
            b, transition, data, e1, a_den, cum_bandwidth=a_cum,
            weights=weights, kernel=kernel, features=features, want_grad=True,
        )
        return g

    # The smoothed objectives degenerate far from the data (every event ends
    # up explained by its own kernel bump); bounding the per-iteration move
    # keeps the search at the maximum the initializer points at.
    best, _, h_inv = numerics.maximize_multivariate(
        value, beta0, tol=tol, grad=grad, max_iter=max_iter, hess0=hess0,
        full_output=True, max_step=0.5,
    )
    return best, h_inv


def _estimate_hazards(coefs, data, e1, bandwidths, weights, kernel, features, grid_size):
    out = {}
    for jk in TRANSITIONS:
        a_den, a_cum = bandwidths.for_hazard(jk)
        out[jk] = smoothing.estimate_hazard(
            coefs[jk], jk, data, e1, a_den, cum_bandwidth=a_cum,
            weights=weights, kernel=kernel, features=features[jk], grid_size=grid_size,
        )
    return out


def _residual_time_points(data, coefs, features):
    """Evaluation points for the hazard-change criterion, at the current coefficients."""
    pts = {}
    for jk in ("01", "02"):
        eta = data.x[:, features[jk]] @ coefs[jk]
        pts[jk] = data.v * np.exp(-eta)
    diag = data.delta1 == 1
    eta = data.x[diag][:, features["12"]] @ coefs["12"]
    pts["12"] = data.w[diag] * np.exp(-eta)
    return pts


def initialize(data: Dataset, cfg: FitConfig = FitConfig(), features=None, weights=None,
               warm_start: ModelFit | None = None) -> ModelFit:
    """Starting state for the EM loop.

    Frailty means start at 1 and the post-diagnosis coefficients at 0; the
    two healthy-state coefficient vectors come from maximizing the no-frailty
    profile likelihoods from zero (self-contained stand-in for an external
    rank-based starter). ``warm_start`` short-circuits all of that with a
    previous fit's parameters.
    """
    counts = transition_counts(data)
    if min(counts.n01, counts.n02, counts.n12) < 1:
        raise ZeroEvents(f"every transition needs at least one event, got {counts!r}")
    feats = _resolve_features(data, features)
    kernel = numerics.KERNELS[cfg.kernel]
    bandwidths = cfg.bandwidths or smoothing.select_bandwidths(
        data, zeta_beta=cfg.zeta_beta, zeta_hazard=cfg.zeta_hazard
    )
    ones = np.ones(data.n)

    coefs = {}
    if warm_start is not None:
        for jk in TRANSITIONS:
            coefs[jk] = np.asarray(warm_start.coefs_[jk], dtype=float).copy()
        e1 = np.asarray(warm_start.estep_.gamma_mean, dtype=float).copy()
        e2 = np.asarray(warm_start.estep_.gamma_log_mean, dtype=float).copy()
        sigma = warm_start.sigma_ if warm_start.sigma_ is not None else cfg.sigma_init
    else:
        for jk in ("01", "02"):
            coefs[jk], _ = _maximize_transition(
                np.zeros(feats[jk].size), jk, data, ones, bandwidths.for_beta(jk),
                weights, kernel, feats[jk], tol=0.1 * cfg.tol_beta,
                max_iter=cfg.optimizer_max_iter,
            )
        coefs["12"] = np.zeros(feats["12"].size)
        e1, e2 = ones, np.zeros(data.n)
        sigma = cfg.sigma_init

    hazards = _estimate_hazards(coefs, data, e1, bandwidths, weights, kernel, feats, cfg.grid_size)
    coef_names = {jk: tuple(data.covariate_names[j] for j in feats[jk]) for jk in TRANSITIONS}
    fit_state = ModelFit(
        coefs=coefs,
        sigma=float(sigma),
        hazards=hazards,
        estep=EStepState(gamma_mean=e1, gamma_log_mean=e2),
        features=feats,
        coef_names=coef_names,
        bandwidths=bandwidths,
    )
    return fit_state


def em_iterate(fit_state: ModelFit, data: Dataset, cfg: FitConfig = FitConfig(), weights=None) -> ModelFit:
    """One E-step plus one M-step, updating ``fit_state`` in place.

    Appends a trace record with the parameter changes this iteration so the
    caller can decide on convergence.
    """
    kernel = numerics.KERNELS[cfg.kernel]
    n_events = (data.delta1 + data.delta2 + data.delta3).astype(float)

    estep = _frailty.update_estep(data, fit_state)
    e1 = estep.gamma_mean

    sigma_old = fit_state.sigma_
    loglik_old = _frailty.sigma_loglik(sigma_old, n_events, estep, weights)
    sigma_new = _frailty.maximize_sigma(
        n_events, estep, weights, bounds=cfg.sigma_bounds, tol=0.1 * cfg.tol_sigma
    )
    loglik_new = _frailty.sigma_loglik(sigma_new, n_events, estep, weights)

    coefs_old = {jk: fit_state.coefs_[jk] for jk in TRANSITIONS}
    coefs_new = {}
    hess_cache = getattr(fit_state, "_hess_cache", {})
    for jk in TRANSITIONS:
        coefs_new[jk], hess_cache[jk] = _maximize_transition(
            coefs_old[jk], jk, data, e1, fit_state.bandwidths_.for_beta(jk),
            weights, kernel, fit_state.features_[jk], tol=0.1 * cfg.tol_beta,
            max_iter=cfg.optimizer_max_iter, hess0=hess_cache.get(jk),
        )
    fit_state._hess_cache = hess_cache

    hazards_old = fit_state.hazards_
    hazards_new = _estimate_hazards(
        coefs_new, data, e1, fit_state.bandwidths_, weights, kernel,
        fit_state.features_, cfg.grid_size,
    )

    points = _residual_time_points(data, coefs_new, fit_state.features_)
    mean_dhazard = {}
    for jk in TRANSITIONS:
        t = points[jk]
        mean_dhazard[jk] = float(
            np.mean(np.abs(hazards_new[jk].cumulative(t) - hazards_old[jk].cumulative(t)))
        )
    max_dbeta = max(
        float(np.max(np.abs(coefs_new[jk] - coefs_old[jk]))) for jk in TRANSITIONS
    )
    dsigma = abs(sigma_new - sigma_old)

    fit_state.coefs_ = coefs_new
    fit_state.sigma_ = float(sigma_new)
    fit_state.hazards_ = hazards_new
    fit_state.estep_ = estep
    fit_state.n_iter_ += 1
    fit_state.trace_.append(
        {
            "iteration": fit_state.n_iter_,
            "sigma": float(sigma_new),
            "coefs": {jk: coefs_new[jk].tolist() for jk in TRANSITIONS},
            "max_dbeta": max_dbeta,
            "mean_dhazard": mean_dhazard,
            "dsigma": float(dsigma),
            "sigma_loglik_before": float(loglik_old),
            "sigma_loglik_after": float(loglik_new),
        }
    )
    return fit_state


def _check_identifiability(fit_state: ModelFit, data: Dataset, cfg: FitConfig, weights):
    """Warn when the profile likelihood is flat in some coordinate."""
    kernel = numerics.KERNELS[cfg.kernel]
    e1 = fit_state.estep_.gamma_mean
    for jk in TRANSITIONS:
        a_den, a_cum = fit_state.bandwidths_.for_beta(jk)
        beta = fit_state.coefs_[jk]

        def value(b):
            try:
                return smoothing.profile_loglik(
                    b, jk, data, e1, a_den, cum_bandwidth=a_cum, weights=weights,
                    kernel=kernel, features=fit_state.features_[jk],
                )
            except EmptyRiskSet:
                return -np.inf

        f0 = value(beta)
        for q in range(beta.size):
            h = 1e-3
            bp, bm = beta.copy(), beta.copy()
            bp[q] += h
            bm[q] -= h
            curvature = (value(bp) - 2.0 * f0 + value(bm)) / (h * h)
            if abs(curvature) < 1e-6:
                warnings.warn(
                    f"transition {jk}, coefficient {fit_state.coef_names_[jk][q]!r}: "
                    "profile likelihood is nearly flat; the coefficient is weakly identified",
                    FlatCoordinateWarning,
                    stacklevel=3,
                )


def _is_converged(record: dict, cfg: FitConfig) -> bool:
    return (
        record["max_dbeta"] < cfg.tol_beta
        and all(v < cfg.tol_hazard for v in record["mean_dhazard"].values())
        and record["dsigma"] < cfg.tol_sigma
    )


def observed_loglik(fit_state: ModelFit, data: Dataset, weights=None) -> float:
    """Observed-data log likelihood at the current state.

    The gamma frailty integrates out in closed form, leaving hazard values at
    the event residual times, cumulative-hazard totals, and gamma-function
    terms. Used to monitor ascent and to guard accelerated steps; with
    ``weights`` each subject's contribution is scaled accordingly.
    """
    g = np.ones(data.n) if weights is None else np.asarray(weights, dtype=float)
    total_events = 0.0
    ll = 0.0
    hazard_total = np.zeros(data.n)
    for jk, delta in (("01", data.delta1), ("02", data.delta2)):
        eta = data.x[:, fit_state.features_[jk]] @ fit_state.coefs_[jk]
        t = data.v * np.exp(-eta)
        hazard_total += np.asarray(fit_state.cumulative_hazard(jk, t))
        ev = delta == 1
        hv = np.maximum(np.asarray(fit_state.hazard(jk, t[ev])), 1e-300)
        ll += float(np.sum(g[ev] * (np.log(hv) - eta[ev])))
    diag = data.delta1 == 1
    eta12 = data.x[diag][:, fit_state.features_["12"]] @ fit_state.coefs_["12"]
    t_exit = data.w[diag] * np.exp(-eta12)
    t_entry = data.v[diag] * np.exp(-eta12)
    increment = np.asarray(fit_state.cumulative_hazard("12", t_exit)) - np.asarray(
        fit_state.cumulative_hazard("12", t_entry)
    )
    bump = np.zeros(data.n)
    bump[diag] = np.clip(increment, 0.0, None)
    hazard_total += bump
    ev3 = data.delta3[diag] == 1
    hv = np.maximum(np.asarray(fit_state.hazard("12", t_exit[ev3])), 1e-300)
    ll += float(np.sum(g[diag][ev3] * (np.log(hv) - eta12[ev3])))

    if fit_state.sigma_ is None:
        ll -= float(np.sum(g * hazard_total))
        return ll
    inv = 1.0 / fit_state.sigma_
    d = (data.delta1 + data.delta2 + data.delta3).astype(float)
    ll += float(
        np.sum(
            g
            * (
                numerics.log_gamma(d + inv)
                - numerics.log_gamma(inv)
                - inv * np.log(fit_state.sigma_)
                - (d + inv) * np.log(hazard_total + inv)
            )
        )
    )
    return ll


def _parameter_vector(state: ModelFit) -> np.ndarray:
    parts = [np.array([np.log(state.sigma_)])]
    parts.extend(state.coefs_[jk] for jk in TRANSITIONS)
    return np.concatenate(parts)


def _apply_parameter_vector(state: ModelFit, vector, data, cfg, weights) -> None:
    """Overwrite (sigma, coefficients) and rebuild the hazards to match."""
    kernel = numerics.KERNELS[cfg.kernel]
    pos = 1
    coefs = {}
    for jk in TRANSITIONS:
        size = state.coefs_[jk].size
        coefs[jk] = np.asarray(vector[pos:pos + size], dtype=float)
        pos += size
    state.sigma_ = float(np.exp(vector[0]))
    state.coefs_ = coefs
    state.hazards_ = _estimate_hazards(
        coefs, data, state.estep_.gamma_mean, state.bandwidths_, weights, kernel,
        state.features_, cfg.grid_size,
    )


def _run_plain(state: ModelFit, data, cfg, weights) -> None:
    for _ in range(cfg.max_iterations):
        em_iterate(state, data, cfg, weights=weights)
        if _is_converged(state.trace_[-1], cfg):
            state.converged_ = True
            return


def _run_accelerated(state: ModelFit, data, cfg, weights) -> None:
    """Monotone squared extrapolation over the EM map.

    Every cycle takes two plain EM steps, extrapolates (log sigma, all
    coefficients) along the observed contraction, rebuilds the hazards there,
    and stabilizes with one more plain EM step. A jump is kept only when it
    does not lose observed-data likelihood; otherwise it backs off toward the
    plain-EM point. Convergence is only ever declared on a plain step from an
    EM-produced state, with the same criteria as the plain loop, so the
    scheme tracks the same ascent path as plain EM, just faster.
    """
    jump_errors = (FloatingPointError, EmptyRiskSet, ZeroEvents, NonFiniteObjective, NegativeIncrement)
    while state.n_iter_ < cfg.max_iterations:
        u0 = _parameter_vector(state)
        em_iterate(state, data, cfg, weights=weights)
        if _is_converged(state.trace_[-1], cfg):
            state.converged_ = True
            return
        if state.n_iter_ >= cfg.max_iterations:
            return
        u1 = _parameter_vector(state)
        em_iterate(state, data, cfg, weights=weights)
        if _is_converged(state.trace_[-1], cfg):
            state.converged_ = True
            return
        if state.n_iter_ >= cfg.max_iterations:
            return
        u2 = _parameter_vector(state)

        r = u1 - u0
        v = (u2 - u1) - r
        v_norm = float(np.linalg.norm(v))
        if v_norm < 1e-14:
            continue
        alpha = -max(1.0, float(np.linalg.norm(r)) / v_norm)
        if alpha >= -1.0:
            continue  # extrapolation would not move past the plain step
        loglik_plain = observed_loglik(state, data, weights)
        guard = loglik_plain - 1e-8 * (1.0 + abs(loglik_plain))
        stash = (state.sigma_, state.coefs_, state.hazards_)
        for _trial in range(3):
            u_acc = u0 - 2.0 * alpha * r + alpha * alpha * v
            try:
                if not np.all(np.isfinite(u_acc)):
                    raise FloatingPointError("non-finite extrapolation")
                _apply_parameter_vector(state, u_acc, data, cfg, weights)
                em_iterate(state, data, cfg, weights=weights)
                state.trace_[-1]["accelerated"] = True
                if observed_loglik(state, data, weights) < guard:
                    raise FloatingPointError("jump lost likelihood")
                break
            except jump_errors:
                # rewind to the plain-EM point and shrink the jump
                state.sigma_, state.coefs_, state.hazards_ = stash
                if state.trace_ and state.trace_[-1].get("accelerated"):
                    state.trace_.pop()
                    state.n_iter_ -= 1
                alpha = 0.5 * (alpha - 1.0)
                if alpha >= -1.0:
                    break  # no room left beyond the plain step; keep u2


def fit(data: Dataset, cfg: FitConfig = FitConfig(), features=None, weights=None,
        warm_start: ModelFit | None = None) -> ModelFit:
    """Full EM fit of the frailty model.

    Converged means, between consecutive iterations: every coefficient moved
    less than ``tol_beta``, the mean absolute change of each cumulative hazard
    at the observed residual-scale times fell below ``tol_hazard``, and the
    frailty variance moved less than ``tol_sigma``. Hitting
    ``max_iterations`` first is reported through ``converged_``, not raised.
    """
    state = initialize(data, cfg, features=features, weights=weights, warm_start=warm_start)
    if cfg.accelerate:
        _run_accelerated(state, data, cfg, weights)
    else:
        _run_plain(state, data, cfg, weights)
    if cfg.check_identifiability:
        _check_identifiability(state, data, cfg, weights)
    return state


def fit_no_frailty(data: Dataset, cfg: FitConfig = FitConfig(), features=None, weights=None,
                   warm_start: ModelFit | None = None) -> ModelFit:
    """One-pass fit with the frailty pinned at 1 (no EM loop, no variance).

    Each coefficient vector is maximized once against the unit frailty means
    and the hazards are estimated once; ``sigma_`` is absent.
    """
    counts = transition_counts(data)
    if min(counts.n01, counts.n02, counts.n12) < 1:
        raise ZeroEvents(f"every transition needs at least one event, got {counts!r}")
    feats = _resolve_features(data, features)
    kernel = numerics.KERNELS[cfg.kernel]
    bandwidths = cfg.bandwidths or smoothing.select_bandwidths(
        data, zeta_beta=cfg.zeta_beta, zeta_hazard=cfg.zeta_hazard
    )
    ones = np.ones(data.n)

    coefs = {}
    for jk in TRANSITIONS:
        if warm_start is not None:
            start = np.asarray(warm_start.coefs_[jk], dtype=float).copy()
        else:
            start = np.zeros(feats[jk].size)
        coefs[jk], _ = _maximize_transition(
            start, jk, data, ones, bandwidths.for_beta(jk), weights, kernel,
            feats[jk], tol=0.1 * cfg.tol_beta, max_iter=cfg.optimizer_max_iter,
        )
    hazards = _estimate_hazards(coefs, data, ones, bandwidths, weights, kernel, feats, cfg.grid_size)
    coef_names = {jk: tuple(data.covariate_names[j] for j in feats[jk]) for jk in TRANSITIONS}
    state = ModelFit(
        coefs=coefs,
        sigma=None,
        hazards=hazards,
        estep=EStepState(gamma_mean=ones, gamma_log_mean=np.zeros(data.n)),
        features=feats,
        coef_names=coef_names,
        bandwidths=bandwidths,
    )
    state.n_iter_ = 1
    state.converged_ = True
    state.trace_.append(
        {
            "iteration": 1,
            "sigma": None,
            "coefs": {jk: coefs[jk].tolist() for jk in TRANSITIONS},
            "max_dbeta": 0.0,
            "mean_dhazard": {jk: 0.0 for jk in TRANSITIONS},
            "dsigma": 0.0,
        }
    )
    if cfg.check_identifiability:
        _check_identifiability(state, data, cfg, weights)
    return state
