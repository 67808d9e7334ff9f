"""Command-line interface: fit, simulate, experiment, bootstrap, and gof.

Every command reads CSV/INI inputs, writes JSON and CSV artifacts under
--output-dir, and is a pure function of its inputs and --seed: rerunning a
command reproduces its outputs byte for byte, regardless of --threads.

Exit codes: 0 success; 1 runtime or numerical failure; 2 invalid input or
configuration. Failures print a one-line JSON object with the error kind.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bootstrap as _bootstrap
from . import emfit, gof, simulate
from .data import Dataset, load_csv
from .errors import AftidError, ConfigError
from .simulate import Scenario, parse_covariate, parse_hazard

TRANSITIONS = ("01", "02", "12")


# ---------------------------------------------------------------------------
# small deterministic writers


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(c) for c in row])


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _json_error(exc: Exception) -> None:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}, sort_keys=True))


# ---------------------------------------------------------------------------
# configuration loading


def _read_config(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path is not None:
        found = parser.read(path)
        if not found:
            raise ConfigError(f"config file not found: {path}")
    return parser


def _fit_config(section, args) -> emfit.FitConfig:
    def get(key, cast, default):
        if getattr(args, key, None) is not None:
            return cast(getattr(args, key))
        if section is not None and key in section:
            return cast(section[key])
        return default

    return emfit.FitConfig(
        zeta_beta=get("zeta_beta", float, 0.5),
        zeta_hazard=get("zeta_hazard", float, 0.01),
        sigma_init=get("sigma_init", float, 2.0),
        max_iterations=get("max_iterations", int, 200),
        tol_beta=get("tol_beta", float, 1e-5),
        tol_hazard=get("tol_hazard", float, 1e-4),
        tol_sigma=get("tol_sigma", float, 1e-4),
        kernel=get("kernel", str, "gaussian"),
        grid_size=get("grid_size", int, 512),
        accelerate=get("accelerate", lambda s: str(s).lower() not in ("0", "false", "no"), True),
    )


def _features_from(section) -> dict | None:
    if section is None:
        return None
    out = {}
    for jk in TRANSITIONS:
        key = f"features{jk}"
        if key in section:
            out[jk] = tuple(s.strip() for s in section[key].split(",") if s.strip())
    return out or None


def _csv_list(text):
    return [s.strip() for s in text.split(",") if s.strip()]


def _scenario_from(config: configparser.ConfigParser, seed_override=None) -> Scenario:
    """Build a scenario from the [scenario] section.

    All fields default to the benchmark setting, so a two-line section (for
    example ``sigma`` and ``replicates``) reproduces the reference study.
    """
    if not config.has_section("scenario"):
        raise ConfigError("config needs a [scenario] section")
    sec = config["scenario"]
    base = simulate.paper_scenario()
    sigma_text = sec.get("sigma", "0.5").strip().lower()
    sigma = None if sigma_text in ("none", "0", "") else float(sigma_text)

    if "covariates" in sec:
        covariates = tuple(parse_covariate(s) for s in _csv_list(sec["covariates"]))
        names = tuple(_csv_list(sec["covariate_names"])) if "covariate_names" in sec else tuple(
            f"x{j + 1}" for j in range(len(covariates))
        )
    else:
        covariates, names = base.covariates, base.covariate_names

    coefs = {}
    features = {}
    for jk in TRANSITIONS:
        if f"beta{jk}" in sec:
            coefs[jk] = tuple(float(s) for s in _csv_list(sec[f"beta{jk}"]))
        else:
            coefs[jk] = base.coefs[jk]
        if f"features{jk}" in sec:
            features[jk] = tuple(_csv_list(sec[f"features{jk}"]))
        elif "covariates" in sec:
            features[jk] = names  # custom covariates default to all columns
        else:
            features[jk] = base.feature_names(jk)
    hazards = {
        jk: parse_hazard(sec[f"hazard{jk}"]) if f"hazard{jk}" in sec else base.hazards[jk]
        for jk in TRANSITIONS
    }
    seed = seed_override if seed_override is not None else sec.getint("seed", fallback=base.seed)
    return Scenario(
        n=sec.getint("n", fallback=1000),
        sigma=sigma,
        coefs=coefs,
        hazards=hazards,
        covariates=covariates,
        covariate_names=names,
        features=features,
        censoring_max=sec.getfloat("censoring_max", fallback=15.0),
        replicates=sec.getint("replicates", fallback=20),
        seed=seed,
    )


def _prepare_outdir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# fit artifacts


def _hazard_rows(hz):
    return zip(hz.grid_t.tolist(), hz.hazard(hz.grid_t).tolist(), hz.grid_cumulative.tolist())


def _write_fit(out: Path, result: emfit.ModelFit, data: Dataset, cfg: emfit.FitConfig, seed) -> None:
    payload = {
        "model": "illness-death-aft",
        "frailty": result.sigma_ is not None,
        "sigma": result.sigma_,
        "coefficients": {
            jk: {name: float(v) for name, v in zip(result.coef_names_[jk], result.coefs_[jk])}
            for jk in TRANSITIONS
        },
        "coefficient_order": {jk: list(result.coef_names_[jk]) for jk in TRANSITIONS},
        "covariate_names": list(data.covariate_names),
        "converged": bool(result.converged_),
        "n_iterations": int(result.n_iter_),
        "n_subjects": int(data.n),
        "hazard_files": {jk: f"hazard_{jk}.csv" for jk in TRANSITIONS},
        "hazard_support": {jk: [result.hazards_[jk].t_min, result.hazards_[jk].t_max] for jk in TRANSITIONS},
        "config": {
            "zeta_beta": cfg.zeta_beta,
            "zeta_hazard": cfg.zeta_hazard,
            "sigma_init": cfg.sigma_init,
            "max_iterations": cfg.max_iterations,
            "tol_beta": cfg.tol_beta,
            "tol_hazard": cfg.tol_hazard,
            "tol_sigma": cfg.tol_sigma,
            "kernel": cfg.kernel,
        },
        "seed": seed,
    }
    _write_json(out / "fit.json", payload)
    for jk in TRANSITIONS:
        _write_csv(
            out / f"hazard_{jk}.csv",
            ["t", "hazard", "cumulative_hazard"],
            _hazard_rows(result.hazards_[jk]),
        )
    rows = []
    for rec in result.trace_:
        rows.append(
            [
                rec["iteration"],
                "" if rec["sigma"] is None else rec["sigma"],
                rec["max_dbeta"],
                rec["mean_dhazard"]["01"],
                rec["mean_dhazard"]["02"],
                rec["mean_dhazard"]["12"],
                rec["dsigma"],
                int(bool(rec.get("accelerated", False))),
            ]
        )
    _write_csv(
        out / "iterations.csv",
        ["iteration", "sigma", "max_dbeta", "dhazard_01", "dhazard_02", "dhazard_12", "dsigma", "accelerated"],
        rows,
    )


class LoadedModel:
    """Fit reloaded from artifacts, exposing the fitted-model interface."""

    def __init__(self, fit_dir: Path, payload: dict):
        self.sigma_ = payload["sigma"]
        self.coef_names_ = {jk: tuple(payload["coefficient_order"][jk]) for jk in TRANSITIONS}
        self.coefs_ = {
            jk: np.array([payload["coefficients"][jk][name] for name in self.coef_names_[jk]])
            for jk in TRANSITIONS
        }
        self.covariate_names = tuple(payload["covariate_names"])
        lookup = {name: j for j, name in enumerate(self.covariate_names)}
        self.features_ = {
            jk: np.array([lookup[name] for name in self.coef_names_[jk]], dtype=int)
            for jk in TRANSITIONS
        }
        self._grids = {}
        for jk, fname in payload["hazard_files"].items():
            t, h, cum = [], [], []
            with open(fit_dir / fname, newline="", encoding="utf-8") as fh:
                for row in csv.DictReader(fh):
                    t.append(float(row["t"]))
                    cum.append(float(row["cumulative_hazard"]))
            self._grids[jk] = (np.array(t), np.array(cum))
        self.hazards_ = {
            jk: _LoadedHazard(*self._grids[jk], support=payload["hazard_support"][jk])
            for jk in TRANSITIONS
        }

    def linear_predictor(self, transition, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x[:, self.features_[transition]] @ self.coefs_[transition]

    def cumulative_hazard(self, transition, times):
        return self.hazards_[transition].cumulative(times)


class _LoadedHazard:
    def __init__(self, grid_t, grid_cumulative, support):
        self.grid_t = grid_t
        self.grid_cumulative = grid_cumulative
        self.t_min, self.t_max = support

    def cumulative(self, times):
        t = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.interp(t, self.grid_t, self.grid_cumulative, left=0.0, right=self.grid_cumulative[-1])
        return out if np.ndim(times) else float(out[0])


def load_fit(fit_path) -> LoadedModel:
    fit_path = Path(fit_path)
    with open(fit_path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return LoadedModel(fit_path.parent, payload)


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    config = _read_config(args.config)
    data = load_csv(args.input)
    cfg = _fit_config(config["fit"] if config.has_section("fit") else None, args)
    features = _features_from(config["fit"] if config.has_section("fit") else None)
    out = _prepare_outdir(args)
    if args.no_frailty:
        result = emfit.fit_no_frailty(data, cfg, features=features)
    else:
        result = emfit.fit(data, cfg, features=features)
    _write_fit(out, result, data, cfg, args.seed)
    return 0


def cmd_simulate(args) -> int:
    config = _read_config(args.config)
    scenario = _scenario_from(config, seed_override=args.seed)
    out = _prepare_outdir(args)
    sim = simulate.simulate_dataset(scenario, replicate=args.replicate)
    sim.dataset.to_csv(out / "dataset.csv")
    _write_csv(
        out / "latent.csv",
        ["t1", "t2", "gamma", "censoring"],
        zip(sim.t1.tolist(), sim.t2.tolist(), sim.gamma.tolist(), sim.censoring.tolist()),
    )
    _write_json(
        out / "simulate.json",
        {
            "n": scenario.n,
            "sigma": scenario.sigma,
            "replicate": args.replicate,
            "seed": scenario.seed,
            "label": scenario.label,
        },
    )
    return 0


def cmd_experiment(args) -> int:
    config = _read_config(args.config)
    scenario = _scenario_from(config, seed_override=args.seed)
    sec = config["experiment"] if config.has_section("experiment") else None
    fit_mode = "no-frailty" if args.no_frailty else (
        sec.get("fit_mode", "frailty") if sec is not None else "frailty"
    )
    n_bootstrap = args.bootstrap if args.bootstrap is not None else (
        sec.getint("bootstrap", fallback=0) if sec is not None else 0
    )
    cfg = _fit_config(config["fit"] if config.has_section("fit") else None, args)
    out = _prepare_outdir(args)
    summary = simulate.run_experiment(
        scenario,
        fit_mode=fit_mode,
        with_bootstrap=n_bootstrap > 0,
        n_bootstrap=n_bootstrap,
        cfg=cfg,
        threads=args.threads,
        level=args.level,
    )
    _write_csv(
        out / "parameters.csv",
        ["parameter", "truth", "mean", "sd", "se", "coverage"],
        [
            [r["parameter"], _none(r["truth"]), r["mean"], r["sd"], _none(r["se"]), _none(r["coverage"])]
            for r in summary.parameter_table()
        ],
    )
    _write_csv(
        out / "hazards.csv",
        ["transition", "t", "truth", "mean", "sd", "se", "coverage"],
        [
            [r["transition"], r["t"], r["truth"], r["mean"], r["sd"], _none(r["se"]), _none(r["coverage"])]
            for r in summary.hazard_table()
        ],
    )
    _write_json(
        out / "experiment.json",
        {
            "fit_mode": summary.fit_mode,
            "replicates": scenario.replicates,
            "n_failed": summary.n_failed,
            "n_unconverged": summary.n_unconverged,
            "bootstrap": n_bootstrap,
            "seed": scenario.seed,
            "level": summary.level,
        },
    )
    return 0


def _none(value):
    return "" if value is None else value


def cmd_bootstrap(args) -> int:
    config = _read_config(args.config)
    data = load_csv(args.input)
    cfg = _fit_config(config["fit"] if config.has_section("fit") else None, args)
    features = _features_from(config["fit"] if config.has_section("fit") else None)
    n_replicates = args.bootstrap if args.bootstrap is not None else 50
    out = _prepare_outdir(args)
    frailty = not args.no_frailty
    if frailty:
        base = emfit.fit(data, cfg, features=features)
    else:
        base = emfit.fit_no_frailty(data, cfg, features=features)
    boot = _bootstrap.bootstrap(
        data, cfg, n_replicates=n_replicates, seed=args.seed if args.seed is not None else 0,
        frailty=frailty, features=features, warm_start=base,
    )
    table = _bootstrap.wald_table(base, boot, level=args.level)
    table.to_csv(out / "inference.csv")
    with open(out / "inference.json", "w", encoding="utf-8") as fh:
        fh.write(table.to_json())
        fh.write("\n")
    _write_json(
        out / "bootstrap.json",
        {
            "replicates_requested": boot.n_requested,
            "replicates_failed": boot.n_failed,
            "seed": boot.seed,
            "se": {k: float(v) for k, v in boot.se.items()},
        },
    )
    return 0


def cmd_gof(args) -> int:
    data = load_csv(args.input)
    model = load_fit(args.fit)
    missing = [c for c in model.covariate_names if c not in data.covariate_names]
    if missing or tuple(model.covariate_names) != tuple(data.covariate_names):
        raise ConfigError(
            f"fit covariates {list(model.covariate_names)} do not match dataset "
            f"columns {list(data.covariate_names)}"
        )
    out = _prepare_outdir(args)
    seed = args.seed if args.seed is not None else 0
    sample = gof.rsp(data, model, u_seed=seed)
    reports = {
        "rsp_state0": gof.uniformity_report(sample.rsp0, bins=args.bins),
        "rsp_12": gof.uniformity_report(sample.rsp12, bins=args.bins),
        "survival_state0": gof.uniformity_report(sample.survival0, bins=args.bins),
        "survival_12": gof.uniformity_report(sample.survival12, bins=args.bins),
    }
    for name, report in reports.items():
        report.to_csv(out / f"{name}.csv")
    _write_json(
        out / "ks.json",
        {
            name: {
                "ks_stat": float(r.ks_stat),
                "p_value": float(r.p_value),
                "n": int(r.n),
            }
            for name, r in reports.items()
        }
        | {"u_seed": seed, "bins": args.bins},
    )
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aftid",
        description="Frailty AFT illness-death models: fit, simulate, bootstrap, diagnose.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=False, needs_config=False):
        if needs_input:
            p.add_argument("--input", required=True, help="dataset CSV")
        p.add_argument("--output-dir", required=True)
        p.add_argument("--config", required=needs_config, help="INI configuration file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--no-frailty", action="store_true")
        p.add_argument("--bootstrap", type=int, default=None, metavar="B")
        p.add_argument("--bins", type=int, default=20)
        p.add_argument("--zeta-beta", dest="zeta_beta", type=float, default=None)
        p.add_argument("--zeta-hazard", dest="zeta_hazard", type=float, default=None)
        p.add_argument("--level", type=float, default=0.95)

    p_fit = sub.add_parser("fit", help="fit the model to a CSV dataset")
    common(p_fit, needs_input=True)
    p_fit.set_defaults(func=cmd_fit)

    p_fnf = sub.add_parser("fit-no-frailty", help="fit with the frailty pinned at 1")
    common(p_fnf, needs_input=True)
    p_fnf.set_defaults(func=cmd_fit, force_no_frailty=True)

    p_sim = sub.add_parser("simulate", help="simulate one dataset from a scenario")
    common(p_sim, needs_config=True)
    p_sim.add_argument("--replicate", type=int, default=0)
    p_sim.set_defaults(func=cmd_simulate)

    p_exp = sub.add_parser("experiment", help="replicate study with summary tables")
    common(p_exp, needs_config=True)
    p_exp.set_defaults(func=cmd_experiment)

    p_boot = sub.add_parser("bootstrap", help="weighted-bootstrap inference table")
    common(p_boot, needs_input=True)
    p_boot.set_defaults(func=cmd_bootstrap)

    p_gof = sub.add_parser("gof", help="randomized survival probability diagnostics")
    common(p_gof, needs_input=True)
    p_gof.add_argument("--fit", required=True, help="fit.json produced by the fit command")
    p_gof.set_defaults(func=cmd_gof)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "force_no_frailty", False):
            args.no_frailty = True
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        _json_error(exc)
        return 2
    except AftidError as exc:
        kind = type(exc).__name__
        _json_error(exc)
        # malformed inputs are configuration problems; numerical trouble is not
        return 2 if kind in (
            "InvalidFlagCombination", "NegativeTime", "DimensionMismatch",
            "MissingValue", "ZeroEvents", "ConfigError", "DomainError",
        ) else 1
    except Exception as exc:  # noqa: BLE001 - the CLI contract is exit 1 + JSON
        _json_error(exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
