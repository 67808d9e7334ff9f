"""Scikit-learn style estimator wrapping the EM fit.

The estimator composes with sklearn tooling (``get_params``/``set_params``,
cloning) while accepting survival data as a :class:`~aftid.data.Dataset`, a
pandas DataFrame with the canonical columns, or a path to the CSV schema.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import emfit, gof
from .data import Dataset, load_csv, validate

__all__ = ["as_dataset", "IllnessDeathAft"]


def as_dataset(X) -> Dataset:
    """Coerce supported inputs to a validated :class:`Dataset`."""
    if isinstance(X, Dataset):
        return X
    if hasattr(X, "columns") and hasattr(X, "to_dict"):
        return validate(X.to_dict(orient="records"))
    if isinstance(X, (str, bytes)) or hasattr(X, "__fspath__"):
        return load_csv(X)
    raise TypeError(
        "expected a Dataset, a DataFrame with columns v,w,delta1,delta2,delta3,..., "
        "or a CSV path"
    )


class IllnessDeathAft(BaseEstimator):
    """Accelerated failure time illness-death model with optional gamma frailty.

    Parameters
    ----------
    frailty : bool, default=True
        Fit the shared-frailty model by EM; ``False`` fits the one-pass
        model with the frailty pinned at 1 (no variance parameter).
    sigma_init : float, default=2.0
        Starting value of the frailty variance.
    zeta_beta, zeta_hazard : float
        Bandwidth multipliers for the coefficient objectives and for the
        baseline-hazard estimators.
    max_iterations : int, default=200
        EM iteration cap; hitting it flags ``converged_ = False``.
    tol_beta, tol_hazard, tol_sigma : float
        Convergence thresholds on the coefficient change, the mean absolute
        cumulative-hazard change at the observed residual times, and the
        frailty-variance change.
    kernel : str, default="gaussian"
        Smoothing kernel name; see :data:`aftid.numerics.KERNELS`.
    features01, features02, features12 : sequence of str, optional
        Covariate names each transition uses; all columns when omitted.
    grid_size : int, default=512
        Base resolution of the cumulative-hazard grids.

    Attributes
    ----------
    coefs_ : dict of transition -> ndarray
    sigma_ : float or None
    hazards_ : dict of transition -> BaselineHazard
    converged_ : bool
    n_iter_ : int
    trace_ : list of per-iteration records
    """

    def __init__(
        self,
        *,
        frailty: bool = True,
        sigma_init: float = 2.0,
        zeta_beta: float = 0.5,
        zeta_hazard: float = 0.01,
        max_iterations: int = 200,
        tol_beta: float = 1e-5,
        tol_hazard: float = 1e-4,
        tol_sigma: float = 1e-4,
        kernel: str = "gaussian",
        features01=None,
        features02=None,
        features12=None,
        grid_size: int = 512,
    ):
        self.frailty = frailty
        self.sigma_init = sigma_init
        self.zeta_beta = zeta_beta
        self.zeta_hazard = zeta_hazard
        self.max_iterations = max_iterations
        self.tol_beta = tol_beta
        self.tol_hazard = tol_hazard
        self.tol_sigma = tol_sigma
        self.kernel = kernel
        self.features01 = features01
        self.features02 = features02
        self.features12 = features12
        self.grid_size = grid_size

    def _config(self) -> emfit.FitConfig:
        return emfit.FitConfig(
            zeta_beta=self.zeta_beta,
            zeta_hazard=self.zeta_hazard,
            sigma_init=self.sigma_init,
            max_iterations=self.max_iterations,
            tol_beta=self.tol_beta,
            tol_hazard=self.tol_hazard,
            tol_sigma=self.tol_sigma,
            kernel=self.kernel,
            grid_size=self.grid_size,
        )

    def fit(self, X, y=None, sample_weight=None):
        """Fit the model; ``X`` is a Dataset, DataFrame, or CSV path."""
        data = as_dataset(X)
        features = {"01": self.features01, "02": self.features02, "12": self.features12}
        cfg = self._config()
        if self.frailty:
            result = emfit.fit(data, cfg, features=features, weights=sample_weight)
        else:
            result = emfit.fit_no_frailty(data, cfg, features=features, weights=sample_weight)
        self.result_ = result
        self.coefs_ = result.coefs_
        self.sigma_ = result.sigma_
        self.hazards_ = result.hazards_
        self.estep_ = result.estep_
        self.features_ = result.features_
        self.coef_names_ = result.coef_names_
        self.bandwidths_ = result.bandwidths_
        self.n_iter_ = result.n_iter_
        self.converged_ = result.converged_
        self.trace_ = result.trace_
        self.n_features_in_ = data.p
        self.feature_names_in_ = np.asarray(data.covariate_names, dtype=object)
        return self

    # -- fitted-model interface --------------------------------------------

    def cumulative_hazard(self, transition: str, times):
        return self.result_.cumulative_hazard(transition, times)

    def hazard(self, transition: str, times):
        return self.result_.hazard(transition, times)

    def linear_predictor(self, transition: str, x):
        return self.result_.linear_predictor(transition, x)

    def parameters(self) -> dict:
        return self.result_.parameters()

    def predict_survival_state0(self, times, x):
        """Marginal probability of staying event-free to each time."""
        return gof.marginal_survival_state0(times, x, self)

    def predict_survival_after_diagnosis(self, times, t1, x):
        """Marginal probability of surviving to each time given diagnosis at t1."""
        return gof.marginal_survival_12(times, t1, x, self)

    def rsp(self, X, u_seed: int = 0) -> gof.RspSample:
        """Randomized survival probabilities of ``X`` under this fit."""
        return gof.rsp(as_dataset(X), self, u_seed=u_seed)
