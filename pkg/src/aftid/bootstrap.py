"""Weighted-bootstrap standard errors and Wald-type inference tables.

Instead of resampling rows (which starves highly censored transitions of
distinct event times), every bootstrap replicate refits the model with fresh
i.i.d. standard-exponential subject weights in all likelihood sums.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import special as _special

from . import emfit
from .data import Dataset
from .errors import DomainError, TooManyFailures

__all__ = [
    "draw_weights",
    "weighted_fit",
    "BootstrapResult",
    "bootstrap",
    "InferenceTable",
    "wald_table",
    "holm_adjust",
]

TRANSITIONS = ("01", "02", "12")


def draw_weights(n: int, rng) -> np.ndarray:
    """n i.i.d. standard-exponential weights (mean and variance 1), all positive."""
    if n < 1:
        raise DomainError("n must be at least 1")
    w = rng.standard_exponential(n)
    # a zero draw has probability ~2^-53 but would break the weighted logs
    return np.where(w > 0.0, w, np.nextafter(0.0, 1.0))


def weighted_fit(
    data: Dataset,
    weights,
    cfg: emfit.FitConfig = emfit.FitConfig(),
    features=None,
    frailty: bool = True,
    warm_start: emfit.ModelFit | None = None,
) -> emfit.ModelFit:
    """Refit with per-subject weights carried through every likelihood sum."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (data.n,):
        raise DomainError(f"weights must have shape ({data.n},)")
    if np.any(weights <= 0.0):
        raise DomainError("weights must be strictly positive")
    if frailty:
        return emfit.fit(data, cfg, features=features, weights=weights, warm_start=warm_start)
    return emfit.fit_no_frailty(data, cfg, features=features, weights=weights, warm_start=warm_start)


@dataclass
class BootstrapResult:
    """Per-replicate parameter draws and the standard errors they imply."""

    parameter_names: list
    estimates: np.ndarray          # successful replicates x parameters
    se: dict                       # parameter name -> sd over replicates
    hazard_times: tuple
    hazard_estimates: dict         # transition -> replicates x times
    hazard_se: dict                # transition -> sd over replicates per time
    n_requested: int
    n_failed: int
    seed: object


def bootstrap(
    data: Dataset,
    cfg: emfit.FitConfig = emfit.FitConfig(),
    n_replicates: int = 500,
    seed: object = 0,
    frailty: bool = True,
    features=None,
    hazard_times: Sequence[float] = (),
    warm_start: emfit.ModelFit | None = None,
) -> BootstrapResult:
    """Weighted bootstrap with ``n_replicates`` independent weight vectors.

    Replicate streams are spawned from the master seed, so results do not
    depend on execution order. Replicates that raise or fail to converge are
    dropped from the standard deviations and counted; more failures than half
    the request raises :class:`TooManyFailures`.
    """
    if n_replicates < 2:
        raise DomainError("bootstrap needs at least 2 replicates")
    hazard_times = tuple(float(t) for t in hazard_times)
    # fits skip the per-fit identifiability probe; the base fit already ran it
    cfg_b = emfit.FitConfig(**{**cfg.__dict__, "check_identifiability": False})

    master = np.random.SeedSequence(seed)
    children = master.spawn(n_replicates)
    rows = []
    hazard_rows = {jk: [] for jk in TRANSITIONS}
    n_failed = 0
    for child in children:
        rng = np.random.default_rng(child)
        weights = draw_weights(data.n, rng)
        try:
            res = weighted_fit(
                data, weights, cfg_b, features=features, frailty=frailty, warm_start=warm_start
            )
        except Exception:  # noqa: BLE001 - failed replicates are counted, not fatal
            n_failed += 1
            continue
        if not res.converged_:
            n_failed += 1
            continue
        rows.append(res.parameters())
        if hazard_times:
            for jk in TRANSITIONS:
                hazard_rows[jk].append(
                    np.asarray(res.cumulative_hazard(jk, np.asarray(hazard_times)))
                )
    if n_failed > n_replicates / 2:
        raise TooManyFailures(
            f"{n_failed} of {n_replicates} bootstrap replicates failed"
        )

    names = sorted({k for r in rows for k in r})
    names.sort(key=lambda s: (s != "sigma", s))
    estimates = np.array([[r[k] for k in names] for r in rows])
    se = {
        k: float(np.std(estimates[:, j], ddof=1)) for j, k in enumerate(names)
    }
    hazard_estimates = {}
    hazard_se = {}
    if hazard_times:
        for jk in TRANSITIONS:
            mat = np.array(hazard_rows[jk])
            hazard_estimates[jk] = mat
            hazard_se[jk] = np.std(mat, axis=0, ddof=1)
    return BootstrapResult(
        parameter_names=names,
        estimates=estimates,
        se=se,
        hazard_times=hazard_times,
        hazard_estimates=hazard_estimates,
        hazard_se=hazard_se,
        n_requested=n_replicates,
        n_failed=n_failed,
        seed=seed,
    )


def holm_adjust(p) -> np.ndarray:
    """Step-down Holm adjustment, monotone and capped at 1."""
    p = np.asarray(p, dtype=float)
    if p.size == 0:
        return p.copy()
    if np.any((p < 0.0) | (p > 1.0)):
        raise DomainError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    adjusted = np.empty(m)
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, (m - rank) * p[idx])
        adjusted[idx] = min(1.0, running)
    return adjusted


COLUMN_ORDER = (
    "parameter",
    "transition",
    "estimate",
    "exp",
    "se",
    "z",
    "p",
    "p_holm",
    "ci_lo",
    "ci_hi",
)


@dataclass
class InferenceTable:
    """Wald-type estimates, intervals, and Holm-adjusted p-values."""

    rows: list
    level: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(COLUMN_ORDER)
            for row in self.rows:
                writer.writerow(["" if row[c] is None else repr(row[c]) if isinstance(row[c], float) else row[c] for c in COLUMN_ORDER])

    def to_json(self) -> str:
        return json.dumps({"level": self.level, "rows": self.rows}, sort_keys=True, indent=2)


def _two_sided_p(z: float) -> float:
    return float(2.0 * _special.ndtr(-abs(z)))


def wald_table(fit: emfit.ModelFit, boot: BootstrapResult, level: float = 0.95) -> InferenceTable:
    """Combine point estimates with bootstrap SEs into normal-theory inference.

    Rows follow the fit's parameter order (frailty variance first); the
    ``exp`` column carries exponentiated coefficients for time-ratio reading
    and is empty for the variance row.
    """
    if not 0.0 < level < 1.0:
        raise DomainError("level must be inside (0, 1)")
    z_crit = float(_special.ndtri(0.5 + level / 2.0))
    params = fit.parameters()
    rows = []
    p_values = []
    for name in boot.parameter_names:
        if name not in params:
            continue
        est = params[name]
        se = boot.se[name]
        if se > 0.0:
            z = est / se
            p = _two_sided_p(z)
        else:
            z = math.inf if est > 0 else (-math.inf if est < 0 else 0.0)
            p = 0.0 if est != 0.0 else 1.0
        if name == "sigma":
            transition, label, expcol = "", "sigma", None
        else:
            transition, label = name.split(":", 1)
            expcol = float(np.exp(est))
        rows.append(
            {
                "parameter": label,
                "transition": transition,
                "estimate": float(est),
                "exp": expcol,
                "se": float(se),
                "z": float(z),
                "p": float(p),
                "p_holm": None,
                "ci_lo": float(est - z_crit * se),
                "ci_hi": float(est + z_crit * se),
            }
        )
        p_values.append(p)
    adjusted = holm_adjust(np.array(p_values))
    for row, adj in zip(rows, adjusted):
        row["p_holm"] = float(adj)
    return InferenceTable(rows=rows, level=level)
