"""Gamma-frailty accelerated failure time models for illness-death data.

Fit semi-parametric AFT models for the healthy -> diseased -> dead process
with a shared gamma frailty, estimate uncertainty by weighted bootstrap,
simulate from the model, and diagnose fit with randomized survival
probabilities. ``IllnessDeathAft`` is the high-level estimator; the
submodules expose each stage of the pipeline.
"""

from . import bootstrap, data, emfit, errors, frailty, gof, numerics, simulate, smoothing
from .bootstrap import (
    BootstrapResult,
    InferenceTable,
    bootstrap as bootstrap_fit,
    draw_weights,
    holm_adjust,
    wald_table,
    weighted_fit,
)
from .data import Dataset, Observation, load_csv, transition_counts, validate
from .emfit import FitConfig, ModelFit, fit, fit_no_frailty
from .estimator import IllnessDeathAft, as_dataset
from .frailty import EStepState, posterior_mean, posterior_mean_log, sigma_loglik, update_estep
from .gof import RspSample, marginal_survival_12, marginal_survival_state0, rsp, uniformity_report
from .simulate import (
    Scenario,
    SimulatedData,
    TrueModel,
    invert_time,
    paper_scenario,
    run_experiment,
    sample_frailty,
    simulate_dataset,
    true_model,
)
from .smoothing import (
    BandwidthSet,
    BaselineHazard,
    PiecewiseHazard,
    bandwidth_cumulative,
    bandwidth_density,
    estimate_hazard,
    piecewise_c_hat,
    profile_loglik,
    select_bandwidths,
)

__version__ = "0.1.0"

__all__ = [
    "IllnessDeathAft",
    "Dataset",
    "Observation",
    "load_csv",
    "validate",
    "transition_counts",
    "FitConfig",
    "ModelFit",
    "fit",
    "fit_no_frailty",
    "EStepState",
    "update_estep",
    "posterior_mean",
    "posterior_mean_log",
    "sigma_loglik",
    "BandwidthSet",
    "BaselineHazard",
    "PiecewiseHazard",
    "bandwidth_density",
    "bandwidth_cumulative",
    "select_bandwidths",
    "profile_loglik",
    "estimate_hazard",
    "piecewise_c_hat",
    "draw_weights",
    "weighted_fit",
    "bootstrap_fit",
    "BootstrapResult",
    "wald_table",
    "holm_adjust",
    "InferenceTable",
    "Scenario",
    "paper_scenario",
    "sample_frailty",
    "invert_time",
    "simulate_dataset",
    "SimulatedData",
    "TrueModel",
    "true_model",
    "run_experiment",
    "rsp",
    "RspSample",
    "marginal_survival_state0",
    "marginal_survival_12",
    "uniformity_report",
    "as_dataset",
    "errors",
    "__version__",
]
