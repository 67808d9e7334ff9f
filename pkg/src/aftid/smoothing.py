"""Kernel-smoothed profile likelihoods and baseline-hazard estimators.

Everything operates on log-time residuals ``log(time) - beta @ x``. For the
two transitions out of the healthy state the risk set at a point is smoothed
with the kernel cumulative; for the post-diagnosis transition each diagnosed
subject contributes a truncation window ``[entry residual, exit residual]``
instead, which encodes left truncation at diagnosis.

Pairwise kernel sums skip terms outside the kernel's numerical support
(density below 1e-300, cumulative saturated to 0/1 at double precision), so
the vectorized paths reproduce the dense sums to the last bit that survives
rounding.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .data import Dataset, transition_counts
from .errors import (
    DegenerateBandwidth,
    DegenerateDenominatorWarning,
    DomainError,
    EmptyRiskSet,
    ZeroEvents,
)
from .numerics import GAUSSIAN, KernelFn

__all__ = [
    "DENSITY_BANDWIDTH_CONSTANT",
    "CUMULATIVE_BANDWIDTH_CONSTANT",
    "bandwidth_density",
    "bandwidth_cumulative",
    "BandwidthSet",
    "select_bandwidths",
    "profile_loglik",
    "profile_loglik_0k",
    "profile_loglik_12",
    "BaselineHazard",
    "estimate_hazard",
    "estimate_hazard_0k",
    "estimate_hazard_12",
    "PiecewiseHazard",
    "piecewise_c_hat",
    "piecewise_profile_loglik",
]

DENSITY_BANDWIDTH_CONSTANT = (8.0 * math.sqrt(2.0) / 3.0) ** 0.2
CUMULATIVE_BANDWIDTH_CONSTANT = 4.0 ** (1.0 / 3.0)

# Denominators below this are treated as an exhausted risk set: the hazard is
# reported as 0 there and a warning is emitted.
DENOMINATOR_FLOOR = 1e-10

# Density contributions beyond this many bandwidths are dropped: the largest
# omitted term is below 1e-17 of the kernel peak, invisible in every sum the
# package takes a log of or integrates.
_DENSITY_RADIUS_CAP = 9.0

_TRANSITIONS = ("01", "02", "12")


# ---------------------------------------------------------------------------
# Bandwidths


def bandwidth_density(zeta: float, log_time_sd: float, n_events: int) -> float:
    """Bandwidth for kernel-density terms: zeta * sd * (8*sqrt(2)/3)^(1/5) * n^(-1/5)."""
    if not zeta > 0.0:
        raise DomainError("zeta must be positive")
    if n_events < 1:
        raise ZeroEvents("no events for this transition")
    return zeta * float(log_time_sd) * DENSITY_BANDWIDTH_CONSTANT * n_events ** (-0.2)


def bandwidth_cumulative(zeta: float, log_time_sd: float, n_state: int) -> float:
    """Bandwidth for cumulative-kernel terms: zeta * sd * 4^(1/3) * n^(-1/3)."""
    if not zeta > 0.0:
        raise DomainError("zeta must be positive")
    if n_state < 1:
        raise ZeroEvents("no subjects in this state")
    return zeta * float(log_time_sd) * CUMULATIVE_BANDWIDTH_CONSTANT * n_state ** (-1.0 / 3.0)


def _spread(values: np.ndarray) -> float:
    """Sample SD of log times, falling back to IQR/1.349 under ties."""
    if values.size >= 2:
        sd = float(np.std(values, ddof=1))
        if sd > 0.0:
            return sd
    if values.size >= 2:
        q75, q25 = np.percentile(values, [75.0, 25.0])
        iqr = float(q75 - q25) / 1.349
        if iqr > 0.0:
            return iqr
    raise DegenerateBandwidth(
        "log event times carry no spread; cannot form a positive bandwidth"
    )


@dataclass(frozen=True)
class BandwidthSet:
    """Per-transition smoothing scales at unit zeta, plus the two multipliers.

    ``density[jk]`` and ``cumulative[jk]`` are the data-driven parts of the
    two bandwidth rules; multiply by ``zeta_beta`` when maximizing regression
    coefficients and by ``zeta_hazard`` when estimating baseline hazards.
    """

    density: Mapping[str, float]
    cumulative: Mapping[str, float]
    zeta_beta: float = 0.5
    zeta_hazard: float = 0.01

    def __post_init__(self):
        for jk in _TRANSITIONS:
            if not (self.density[jk] > 0.0 and self.cumulative[jk] > 0.0):
                raise DomainError(f"bandwidths for transition {jk} must be positive")
        if not (self.zeta_beta > 0.0 and self.zeta_hazard > 0.0):
            raise DomainError("zeta multipliers must be positive")

    def for_beta(self, transition: str) -> tuple[float, float]:
        return (
            self.zeta_beta * self.density[transition],
            self.zeta_beta * self.cumulative[transition],
        )

    def for_hazard(self, transition: str) -> tuple[float, float]:
        return (
            self.zeta_hazard * self.density[transition],
            self.zeta_hazard * self.cumulative[transition],
        )


def select_bandwidths(data: Dataset, zeta_beta: float = 0.5, zeta_hazard: float = 0.01) -> BandwidthSet:
    """Data-driven bandwidths for all three transitions.

    Density scales use the SD of log event times among subjects with the
    transition's event; cumulative scales use the SD of log first times over
    everyone (healthy state) or log last times over all diagnosed subjects
    (diseased state).
    """
    counts = transition_counts(data)
    if counts.n01 == 0 or counts.n02 == 0 or counts.n12 == 0:
        raise ZeroEvents(
            f"every transition needs at least one event, got {counts!r}"
        )
    log_v = np.log(data.v)
    diagnosed = data.delta1 == 1
    log_w = np.log(data.w[diagnosed])
    density = {
        "01": _spread(log_v[data.delta1 == 1]) * DENSITY_BANDWIDTH_CONSTANT * counts.n01 ** -0.2,
        "02": _spread(log_v[data.delta2 == 1]) * DENSITY_BANDWIDTH_CONSTANT * counts.n02 ** -0.2,
        "12": _spread(log_w[data.delta3[diagnosed] == 1]) * DENSITY_BANDWIDTH_CONSTANT * counts.n12 ** -0.2,
    }
    cumulative = {
        "01": _spread(log_v) * CUMULATIVE_BANDWIDTH_CONSTANT * counts.n0 ** (-1.0 / 3.0),
        "02": _spread(log_v) * CUMULATIVE_BANDWIDTH_CONSTANT * counts.n0 ** (-1.0 / 3.0),
        "12": _spread(log_w) * CUMULATIVE_BANDWIDTH_CONSTANT * counts.n1 ** (-1.0 / 3.0),
    }
    return BandwidthSet(
        density=density, cumulative=cumulative, zeta_beta=zeta_beta, zeta_hazard=zeta_hazard
    )


# ---------------------------------------------------------------------------
# Sorted pairwise kernel sums


def _segment_sum(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    if values.size == 0:
        return np.zeros(offsets.size - 1)
    # reduceat needs a sentinel for trailing empty segments; empty segments
    # otherwise copy the next element, so zero them explicitly
    padded = np.concatenate((values, [0.0]))
    sums = np.add.reduceat(padded, offsets[:-1])
    empty = offsets[1:] == offsets[:-1]
    if empty.any():
        sums[empty] = 0.0
    return sums


def _pair_index(centers_sorted: np.ndarray, queries: np.ndarray, radius: float):
    """Indices of centers within ``radius`` of each query.

    Returns flat center indices, per-pair query values, segment offsets, and
    the index of the first center beyond the right edge of each window.
    """
    lo = np.searchsorted(centers_sorted, queries - radius, side="left")
    hi = np.searchsorted(centers_sorted, queries + radius, side="right")
    counts = hi - lo
    offsets = np.concatenate(([0], np.cumsum(counts)))
    total = int(offsets[-1])
    if total == 0:
        return (
            np.empty(0, dtype=int),
            np.empty(0),
            offsets,
            hi,
        )
    idx = np.arange(total) - np.repeat(offsets[:-1], counts) + np.repeat(lo, counts)
    q_rep = np.repeat(queries, counts)
    return idx, q_rep, offsets, hi


class _DensityPack:
    """Sorted centers with weights for local kernel-density sums."""

    __slots__ = ("centers", "weights", "extras")

    def __init__(self, centers, weights, *extras):
        order = np.argsort(centers, kind="stable")
        self.centers = centers[order]
        self.weights = weights[order]
        self.extras = tuple(e[order] for e in extras)

    def density_sum(self, queries, bandwidth, kernel, *, pairs=False):
        radius = min(kernel.density_radius, _DENSITY_RADIUS_CAP) * bandwidth
        idx, q_rep, offsets, _ = _pair_index(self.centers, queries, radius)
        z = self.centers[idx]
        z -= q_rep
        z /= bandwidth
        if kernel is GAUSSIAN:
            # in-place exp(-z^2/2), normalized on the per-query sums
            vals = z * z
            vals *= -0.5
            np.exp(vals, out=vals)
            vals *= self.weights[idx]
            sums = _segment_sum(vals, offsets)
            sums *= 1.0 / math.sqrt(2.0 * math.pi)
        else:
            vals = self.weights[idx] * kernel.density(z)
            sums = _segment_sum(vals, offsets)
        if pairs:
            return sums, (idx, q_rep, offsets, z)
        return sums


class _TailPack:
    """Sorted centers with weights for smoothed risk-set (tail) sums."""

    __slots__ = ("centers", "weights", "suffix", "extras")

    def __init__(self, centers, weights, *extras):
        order = np.argsort(centers, kind="stable")
        self.centers = centers[order]
        self.weights = weights[order]
        self.suffix = np.concatenate((np.cumsum(self.weights[::-1])[::-1], [0.0]))
        self.extras = tuple(e[order] for e in extras)

    def tail_sum(self, queries, bandwidth, kernel, *, pairs=False):
        """sum_j w_j * CDF((c_j - q)/bandwidth) for each query."""
        radius = kernel.cdf_radius * bandwidth
        idx, q_rep, offsets, hi = _pair_index(self.centers, queries, radius)
        sums = self.suffix[hi]  # fancy indexing copies; safe to add into
        z = self.centers[idx]
        z -= q_rep
        z /= bandwidth
        if idx.size:
            vals = np.asarray(kernel.cdf(z), dtype=float)
            vals *= self.weights[idx]
            sums += _segment_sum(vals, offsets)
        if pairs:
            return sums, (idx, q_rep, offsets, z)
        return sums


# ---------------------------------------------------------------------------
# Profile log likelihoods


def _design(data: Dataset, features) -> np.ndarray:
    if features is None:
        return data.x
    return data.x[:, np.asarray(features, dtype=int)]


def _as_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise DomainError(f"weights must have shape ({n},)")
    if np.any(w <= 0.0):
        raise DomainError("weights must be strictly positive")
    return w


def profile_loglik(
    beta,
    transition: str,
    data: Dataset,
    frailty_mean,
    bandwidth: float,
    cum_bandwidth: float | None = None,
    weights=None,
    kernel: KernelFn = GAUSSIAN,
    features=None,
    want_grad: bool = False,
):
    """Kernel-smoothed profile log likelihood of one transition's coefficients.

    Three terms, all averaged over the full sample: minus the log event times,
    the log smoothed density of event residuals, and minus the log smoothed
    risk set (truncation windows for transition "12"). ``frailty_mean`` holds
    the current posterior frailty means; ``weights`` are optional positive
    resampling weights. With ``want_grad`` the exact gradient is returned
    alongside the value.
    """
    if transition not in _TRANSITIONS:
        raise DomainError(f"unknown transition {transition!r}")
    if not bandwidth > 0.0:
        raise DomainError("bandwidth must be positive")
    a_cum = bandwidth if cum_bandwidth is None else float(cum_bandwidth)
    if not a_cum > 0.0:
        raise DomainError("cumulative bandwidth must be positive")

    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    x = _design(data, features)
    if x.shape[1] != beta.size:
        raise DomainError(f"beta has {beta.size} entries for {x.shape[1]} design columns")
    n = data.n
    g = _as_weights(weights, n)
    e1 = np.asarray(frailty_mean, dtype=float)
    if e1.shape != (n,):
        raise DomainError(f"frailty_mean must have shape ({n},)")

    eta = x @ beta
    if transition == "12":
        return _profile_12(beta, data, x, eta, e1, g, bandwidth, a_cum, kernel, want_grad)
    k = 1 if transition == "01" else 2
    return _profile_0k(beta, k, data, x, eta, e1, g, bandwidth, a_cum, kernel, want_grad)


def profile_loglik_0k(beta, k: int, data: Dataset, frailty_mean, bandwidth, **kwargs):
    """Profile log likelihood for the healthy-to-diagnosis (k=1) or healthy-to-death (k=2) transition."""
    if k not in (1, 2):
        raise DomainError("k must be 1 or 2")
    return profile_loglik(beta, f"0{k}", data, frailty_mean, bandwidth, **kwargs)


def profile_loglik_12(beta, data: Dataset, frailty_mean, bandwidth, **kwargs):
    """Profile log likelihood for the post-diagnosis death transition."""
    return profile_loglik(beta, "12", data, frailty_mean, bandwidth, **kwargs)


def _profile_0k(beta, k, data, x, eta, e1, g, a_den, a_cum, kernel, want_grad):
    delta = data.delta1 if k == 1 else data.delta2
    ev = delta == 1
    n = data.n
    if not np.any(ev):
        return (0.0, np.zeros(beta.size)) if want_grad else 0.0

    r_all = np.log(data.v) - eta
    r_ev = r_all[ev]
    g_ev = g[ev]

    num_pack = _DensityPack(r_ev, g_ev, x[ev])
    den_pack = _TailPack(r_all, e1 * g, x)

    s2_raw, dens_pairs = num_pack.density_sum(r_ev, a_den, kernel, pairs=True)
    s3_raw, tail_pairs = den_pack.tail_sum(r_ev, a_cum, kernel, pairs=True)
    s2 = s2_raw / (n * a_den)
    s3 = s3_raw / n
    if np.any(s2 <= 0.0) or np.any(s3 <= 0.0):
        raise EmptyRiskSet(
            f"transition 0{k}: a smoothed risk-set or density sum underflowed to 0"
        )

    value = float(np.sum(g_ev * (-np.log(data.v[ev]) + np.log(s2) - np.log(s3)))) / n
    if not want_grad:
        return value

    x_ev = x[ev]
    grad = np.zeros(beta.size)

    # d/dbeta of the log smoothed event density.
    idx, _, offsets, z = dens_pairs
    coef_q = g_ev / s2  # per query
    dvals = num_pack.weights[idx] * kernel.density_gradient(z)
    row = _segment_sum(dvals, offsets)
    col = np.bincount(idx, weights=dvals * np.repeat(coef_q, np.diff(offsets)), minlength=num_pack.centers.size)
    grad += (x_ev.T @ (coef_q * row) - num_pack.extras[0].T @ col) / (n * n * a_den * a_den)

    # d/dbeta of minus the log smoothed risk set.
    idx, _, offsets, z = tail_pairs
    coef_q = g_ev / s3
    dvals = den_pack.weights[idx] * kernel.density(z)
    row = _segment_sum(dvals, offsets)
    col = np.bincount(idx, weights=dvals * np.repeat(coef_q, np.diff(offsets)), minlength=den_pack.centers.size)
    grad -= (x_ev.T @ (coef_q * row) - den_pack.extras[0].T @ col) / (n * n * a_cum)
    return value, grad


def _profile_12(beta, data, x, eta, e1, g, a_den, a_cum, kernel, want_grad):
    n = data.n
    ev = data.delta3 == 1
    if not np.any(ev):
        return (0.0, np.zeros(beta.size)) if want_grad else 0.0
    diag = data.delta1 == 1

    with np.errstate(divide="ignore"):
        log_w = np.where(diag, np.log(np.where(diag, data.w, 1.0)), -np.inf)
    r_exit = log_w - eta  # defined for diagnosed subjects only
    r_entry = np.log(data.v) - eta

    q = r_exit[ev]
    g_ev = g[ev]
    num_pack = _DensityPack(q, g_ev, x[ev])
    # each diagnosed subject contributes cdf(exit) - cdf(entry); folding the
    # sign into the weights lets one pack serve both window edges
    wden = (e1 * g)[diag]
    window_pack = _TailPack(
        np.concatenate((r_exit[diag], r_entry[diag])),
        np.concatenate((wden, -wden)),
        np.vstack((x[diag], x[diag])),
    )

    s2_raw, dens_pairs = num_pack.density_sum(q, a_den, kernel, pairs=True)
    s3_raw, window_pairs = window_pack.tail_sum(q, a_cum, kernel, pairs=True)
    s2 = s2_raw / (n * a_den)
    s3 = s3_raw / n
    if np.any(s2 <= 0.0) or np.any(s3 <= 0.0):
        raise EmptyRiskSet(
            "transition 12: a truncation-window risk-set sum underflowed to 0"
        )

    value = float(np.sum(g_ev * (-np.log(data.w[ev]) + np.log(s2) - np.log(s3)))) / n
    if not want_grad:
        return value

    x_ev = x[ev]
    grad = np.zeros(beta.size)

    idx, _, offsets, z = dens_pairs
    coef_q = g_ev / s2
    dvals = num_pack.weights[idx] * kernel.density_gradient(z)
    row = _segment_sum(dvals, offsets)
    col = np.bincount(idx, weights=dvals * np.repeat(coef_q, np.diff(offsets)), minlength=num_pack.centers.size)
    grad += (x_ev.T @ (coef_q * row) - num_pack.extras[0].T @ col) / (n * n * a_den * a_den)

    idx, _, offsets, z = window_pairs
    coef_q = g_ev / s3
    dvals = window_pack.weights[idx] * kernel.density(z)
    row = _segment_sum(dvals, offsets)
    col = np.bincount(idx, weights=dvals * np.repeat(coef_q, np.diff(offsets)), minlength=window_pack.centers.size)
    grad -= (x_ev.T @ (coef_q * row) - window_pack.extras[0].T @ col) / (n * n * a_cum)
    return value, grad


# ---------------------------------------------------------------------------
# Baseline-hazard estimators


class BaselineHazard:
    """Kernel estimator of one transition's baseline hazard on residual time.

    Evaluates the hazard pointwise and carries a precomputed monotone grid of
    the cumulative hazard on ``[t_min, t_max]``; the cumulative is 0 below
    ``t_min`` and held constant above ``t_max``.

    Pointwise evaluation reports 0 wherever the smoothed risk set falls below
    ``DENOMINATOR_FLOOR``. The cumulative grid instead floors the risk mass
    at a tenth of a typical subject's weight: increments with less risk mass
    behind them carry no usable information but would otherwise be unbounded
    (the integrand behaves like 1/risk-mass), and flooring the divisor keeps
    the cumulative finite, monotone, and Lipschitz in the inputs while
    leaving it exact wherever the risk set is non-negligible.
    """

    def __init__(
        self,
        transition: str,
        n: int,
        bandwidth: float,
        cum_bandwidth: float,
        kernel: KernelFn,
        num_pack: _DensityPack,
        risk_pack,
        t_max: float,
        grid_size: int = 512,
        residual_v=None,
        residual_w=None,
        event_flags=None,
        entry_flags=None,
        weights=None,
    ):
        self.transition = transition
        self.n = int(n)
        self.bandwidth = float(bandwidth)
        self.cum_bandwidth = float(cum_bandwidth)
        self.kernel = kernel
        self._num = num_pack
        self._risk = risk_pack  # smoothed at-risk set (signed windows for "12")
        # a tenth of a typical subject's weight, per the class docstring
        positive = self._risk.weights[self._risk.weights > 0.0]
        self._mass_floor = 0.1 * float(np.median(positive)) / max(int(n), 1)
        self.t_max = float(t_max)
        self.t_min = 1e-6 * self.t_max
        self.residual_v = residual_v
        self.residual_w = residual_w
        self.event_flags = event_flags
        self.entry_flags = entry_flags
        self.weights = weights
        self._degenerate_seen = 0
        self._build_grid(int(grid_size))

    # -- raw sums ---------------------------------------------------------

    def _numerator(self, u: np.ndarray) -> np.ndarray:
        return self._num.density_sum(u, self.bandwidth, self.kernel) / (self.n * self.bandwidth)

    def _denominator(self, u: np.ndarray) -> np.ndarray:
        return self._risk.tail_sum(u, self.cum_bandwidth, self.kernel) / self.n

    def _log_time_rate(self, u: np.ndarray) -> np.ndarray:
        """Hazard mass per unit log time, with exhausted risk sets clamped to 0."""
        num = self._numerator(u)
        den = self._denominator(u)
        bad = den < DENOMINATOR_FLOOR
        n_bad = int(np.count_nonzero(bad & (num > 0.0)))
        if n_bad:
            self._degenerate_seen += n_bad
            warnings.warn(
                f"transition {self.transition}: risk-set denominator below "
                f"{DENOMINATOR_FLOOR:g} at {n_bad} point(s); hazard set to 0 there",
                DegenerateDenominatorWarning,
                stacklevel=3,
            )
        out = np.zeros_like(num)
        ok = ~bad
        out[ok] = num[ok] / den[ok]
        return out

    # -- construction ------------------------------------------------------

    def _grid_integrand(self, u: np.ndarray) -> np.ndarray:
        """Hazard mass per unit log time with the risk set floored.

        Dividing by ``max(risk mass, floor)`` bounds every event's cumulative
        increment by (event weight)/(n * floor) instead of letting it blow up
        as the smoothed risk set empties, and keeps the cumulative continuous
        in the inputs; wherever at least one subject-equivalent is at risk
        this is exactly the unfloored ratio.
        """
        num = self._numerator(u)
        den = self._denominator(u)
        return num / np.maximum(den, self._mass_floor)

    def _build_grid(self, grid_size: int) -> None:
        u_min = math.log(self.t_min)
        u_max = math.log(self.t_max)
        base = np.linspace(u_min, u_max, grid_size)
        spacing = (u_max - u_min) / (grid_size - 1)
        nodes = base
        # The numerator is a mixture of kernel bumps of width ~bandwidth; when
        # the base grid cannot resolve them, cluster nodes around each bump.
        if 0.25 * self.bandwidth < spacing:
            offsets = np.arange(-6.0, 6.0 + 1e-12, 0.25) * self.bandwidth
            local = (self._num.centers[:, None] + offsets[None, :]).ravel()
            local = np.clip(local, u_min, u_max)
            nodes = np.unique(np.concatenate((base, local)))
        mids = 0.5 * (nodes[:-1] + nodes[1:])
        g_all = self._grid_integrand(np.concatenate((nodes, mids)))
        g_nodes = g_all[: nodes.size]
        g_mids = g_all[nodes.size :]
        h = np.diff(nodes)
        increments = h / 6.0 * (g_nodes[:-1] + 4.0 * g_mids + g_nodes[1:])
        cumulative = np.concatenate(([0.0], np.cumsum(increments)))
        self.grid_t = np.exp(nodes)
        self.grid_cumulative = cumulative

    # -- evaluation --------------------------------------------------------

    def hazard(self, times) -> np.ndarray:
        """Hazard at positive times (0 where the risk set is exhausted)."""
        t = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(t <= 0.0):
            raise DomainError("hazard is defined for t > 0 only")
        rate = self._log_time_rate(np.log(t))
        out = rate / t
        return out if np.ndim(times) else float(out[0])

    def cumulative(self, times) -> np.ndarray:
        """Cumulative hazard: 0 at 0, linear interpolation on the grid, flat past t_max."""
        t = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(t < 0.0):
            raise DomainError("cumulative hazard is defined for t >= 0")
        out = np.interp(t, self.grid_t, self.grid_cumulative, left=0.0, right=self.grid_cumulative[-1])
        return out if np.ndim(times) else float(out[0])


def estimate_hazard(
    beta,
    transition: str,
    data: Dataset,
    frailty_mean,
    bandwidth: float,
    cum_bandwidth: float | None = None,
    weights=None,
    kernel: KernelFn = GAUSSIAN,
    features=None,
    grid_size: int = 512,
) -> BaselineHazard:
    """Baseline-hazard estimator for one transition at fixed coefficients.

    The numerator smooths the event residuals with the density bandwidth; the
    denominator smooths the at-risk set (or the diagnosed subjects' truncation
    windows) with the cumulative bandwidth. The upper end of the support is
    1.01 times the largest observed residual-scale time.
    """
    if transition not in _TRANSITIONS:
        raise DomainError(f"unknown transition {transition!r}")
    if not bandwidth > 0.0:
        raise DomainError("bandwidth must be positive")
    a_cum = bandwidth if cum_bandwidth is None else float(cum_bandwidth)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    x = _design(data, features)
    n = data.n
    g = _as_weights(weights, n)
    e1 = np.asarray(frailty_mean, dtype=float)
    eta = x @ beta

    if transition == "12":
        diag = data.delta1 == 1
        ev = data.delta3 == 1
        if not np.any(ev):
            raise ZeroEvents("transition 12 has no observed events")
        scale = np.exp(-eta[diag])
        exit_time = data.w[diag] * scale
        t_max = 1.01 * float(exit_time.max())
        r_exit = np.log(data.w[diag]) - eta[diag]
        r_entry = np.log(data.v[diag]) - eta[diag]
        wden = (e1 * g)[diag]
        num_pack = _DensityPack(np.log(data.w[ev]) - eta[ev], g[ev])
        risk = _TailPack(
            np.concatenate((r_exit, r_entry)), np.concatenate((wden, -wden))
        )
        return BaselineHazard(
            transition,
            n,
            bandwidth,
            a_cum,
            kernel,
            num_pack,
            risk,
            t_max,
            grid_size=grid_size,
            residual_v=np.log(data.v) - eta,
            residual_w=r_exit,
            event_flags=np.asarray(data.delta3, dtype=int),
            entry_flags=np.asarray(data.delta1, dtype=int),
            weights=e1 * g,
        )

    k = 1 if transition == "01" else 2
    delta = data.delta1 if k == 1 else data.delta2
    ev = delta == 1
    if not np.any(ev):
        raise ZeroEvents(f"transition 0{k} has no observed events")
    r_all = np.log(data.v) - eta
    t_max = 1.01 * float((data.v * np.exp(-eta)).max())
    num_pack = _DensityPack(r_all[ev], g[ev])
    risk = _TailPack(r_all, e1 * g)
    return BaselineHazard(
        transition,
        n,
        bandwidth,
        a_cum,
        kernel,
        num_pack,
        risk,
        t_max,
        grid_size=grid_size,
        residual_v=r_all,
        residual_w=None,
        event_flags=np.asarray(delta, dtype=int),
        entry_flags=None,
        weights=e1 * g,
    )


def estimate_hazard_0k(beta, k: int, data: Dataset, frailty_mean, bandwidth, **kwargs):
    if k not in (1, 2):
        raise DomainError("k must be 1 or 2")
    return estimate_hazard(beta, f"0{k}", data, frailty_mean, bandwidth, **kwargs)


def estimate_hazard_12(beta, data: Dataset, frailty_mean, bandwidth, **kwargs):
    return estimate_hazard(beta, "12", data, frailty_mean, bandwidth, **kwargs)


# ---------------------------------------------------------------------------
# Piecewise-constant profile construction (kept as an independent oracle)


@dataclass(frozen=True)
class PiecewiseHazard:
    """Piecewise-constant hazard on equally spaced bins over [0, upper]."""

    upper: float
    heights: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=float)
        if self.upper <= 0.0:
            raise DomainError("upper must be positive")
        if h.ndim != 1 or h.size < 1 or not np.all(np.isfinite(h)):
            raise DomainError("heights must be a finite vector")
        object.__setattr__(self, "heights", h)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.upper, self.heights.size + 1)

    def hazard(self, times) -> np.ndarray:
        t = np.atleast_1d(np.asarray(times, dtype=float))
        width = self.upper / self.heights.size
        idx = np.clip((t / width).astype(int), 0, self.heights.size - 1)
        out = np.where((t >= 0.0) & (t < self.upper), self.heights[idx], 0.0)
        return out if np.ndim(times) else float(out[0])

    def cumulative(self, times) -> np.ndarray:
        t = np.atleast_1d(np.asarray(times, dtype=float))
        width = self.upper / self.heights.size
        csum = np.concatenate(([0.0], np.cumsum(self.heights * width)))
        idx = np.clip((t / width).astype(int), 0, self.heights.size - 1)
        inside = csum[idx] + self.heights[idx] * (t - idx * width)
        out = np.where(t >= self.upper, csum[-1], np.where(t > 0.0, inside, 0.0))
        return out if np.ndim(times) else float(out[0])


def _piecewise_terms(beta, transition, data, frailty_mean, n_bins, upper, features, weights):
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    x = _design(data, features)
    n = data.n
    g = _as_weights(weights, n)
    e1 = np.asarray(frailty_mean, dtype=float)
    eta = x @ beta
    width = upper / n_bins

    def binned(s, wts):
        """Within-bin exposure sums; times at or past ``upper`` carry none."""
        inside = (s >= 0.0) & (s < upper)
        b = np.floor(s[inside] / width).astype(int)
        return np.bincount(b, weights=wts[inside] * (s[inside] - b * width), minlength=n_bins)

    def bin_counts(s, wts):
        inside = (s >= 0.0) & (s < upper)
        b = np.floor(s[inside] / width).astype(int)
        return np.bincount(b, weights=wts[inside], minlength=n_bins)

    if transition == "12":
        diag = data.delta1 == 1
        ev = data.delta3 == 1
        s_exit = data.w[diag] * np.exp(-eta[diag])
        s_entry = data.v[diag] * np.exp(-eta[diag])
        wden = (e1 * g)[diag]
        s_ev = data.w[ev] * np.exp(-eta[ev])
        num = bin_counts(s_ev, g[ev])
        den = binned(s_exit, wden) - binned(s_entry, wden)
        edges = np.arange(1, n_bins + 1) * width
        at_or_past_exit = s_exit[None, :] >= edges[:, None]
        at_or_past_entry = s_entry[None, :] >= edges[:, None]
        den += width * ((at_or_past_exit.astype(float) - at_or_past_entry.astype(float)) @ wden)
        event_weight = g[ev]
        event_bins = np.clip(np.floor(s_ev / width).astype(int), 0, n_bins - 1)
        linear_term = -float(np.sum(g[ev] * eta[ev])) / n
    else:
        k = 1 if transition == "01" else 2
        delta = data.delta1 if k == 1 else data.delta2
        ev = delta == 1
        s_all = data.v * np.exp(-eta)
        wden = e1 * g
        num = bin_counts(s_all[ev], g[ev])
        den = binned(s_all, wden)
        edges = np.arange(1, n_bins + 1) * width
        past = s_all[None, :] >= edges[:, None]
        den += width * (past.astype(float) @ wden)
        event_weight = g[ev]
        event_bins = np.clip(np.floor(s_all[ev] / width).astype(int), 0, n_bins - 1)
        linear_term = -float(np.sum(g[ev] * eta[ev])) / n

    heights = np.zeros(n_bins)
    nz = (num > 0.0) & (den > 0.0)
    heights[nz] = num[nz] / den[nz]
    return heights, num, den, event_bins, event_weight, linear_term


def piecewise_c_hat(
    beta,
    transition: str,
    data: Dataset,
    frailty_mean,
    n_bins: int,
    upper: float,
    features=None,
    weights=None,
) -> PiecewiseHazard:
    """Closed-form piecewise-constant hazard heights at fixed coefficients.

    Each height is the (weighted) event count in its bin over the weighted
    exposure accumulated in the bin; empty bins get height 0.
    """
    if n_bins < 1:
        raise DomainError("n_bins must be at least 1")
    if not upper > 0.0:
        raise DomainError("upper must be positive")
    heights, *_ = _piecewise_terms(
        beta, transition, data, frailty_mean, n_bins, upper, features, weights
    )
    return PiecewiseHazard(upper=float(upper), heights=heights)


def piecewise_profile_loglik(
    beta,
    transition: str,
    data: Dataset,
    frailty_mean,
    n_bins: int,
    upper: float,
    features=None,
    weights=None,
) -> float:
    """Profile log likelihood with the piecewise heights maximized out.

    Used as a slow, independent check that the kernel-smoothed objective ranks
    candidate coefficients the same way as the raw piecewise construction.
    """
    heights, num, den, event_bins, event_weight, linear_term = _piecewise_terms(
        beta, transition, data, frailty_mean, n_bins, upper, features, weights
    )
    n = data.n
    h_at_events = heights[event_bins]
    if np.any(h_at_events <= 0.0):
        return -np.inf
    value = linear_term + float(np.sum(event_weight * np.log(h_at_events))) / n
    value -= float(np.sum(event_weight)) / n
    return value
