"""Acceptance gate: every criterion runs at its stated tolerance.

Each test prints one PASS/FAIL line (run with ``pytest -s`` to stream them).
The replicate studies mirror the benchmark setup at desk scale: n = 1000,
20 replicates (10 datasets for the bootstrap-calibration criterion), with
per-criterion details in the assertions. Bootstrap replicate fits inside the
studies use mildly loosened stopping thresholds; the induced parameter error
(about 3e-3) is far below every standard error they feed.
"""

import json
import subprocess
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate as sci_integrate

from aftid import simulate
from aftid.bootstrap import bootstrap
from aftid.data import Dataset
from aftid.emfit import FitConfig, fit, fit_no_frailty
from aftid.frailty import posterior_mean, posterior_mean_log
from aftid.gof import ks_uniform, rsp
from aftid.simulate import run_experiment, true_model
from aftid.smoothing import profile_loglik

warnings.filterwarnings("ignore")

TRANSITIONS = ("01", "02", "12")
CFG = FitConfig(check_identifiability=False)
# replicate fits inside bootstrap loops: same coefficient precision, lighter
# polish on the hazard grid and the variance tail
CFG_BOOT = FitConfig(
    check_identifiability=False, tol_beta=1e-4, tol_hazard=3e-3, tol_sigma=1e-3
)


def _report(tag: str, ok: bool, detail: str) -> None:
    print(f"[acceptance] {tag}: {'PASS' if ok else 'FAIL'} ({detail})", flush=True)


def _features(sc):
    return {jk: sc.feature_names(jk) for jk in TRANSITIONS}


# ---------------------------------------------------------------------------
# C1  E-step oracle equivalence


def test_c1_estep_oracle():
    rng = np.random.default_rng(314)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(0, 4))
        sigma = float(rng.uniform(0.1, 5.0))
        h = float(rng.uniform(0.0, 10.0))
        shape = d + 1.0 / sigma
        rate = 1.0 / sigma + h

        def weight(u):
            return np.exp(shape * u - rate * np.exp(u))

        mode = np.log(shape / rate)
        pts = sorted({-60.0, -30.0, -10.0, -3.0, 0.0, 3.0, mode - 2.0, mode, mode + 2.0})
        kw = {"limit": 200, "points": pts}
        norm, _ = sci_integrate.quad(weight, -120.0, 12.0, **kw)
        mean, _ = sci_integrate.quad(lambda u: np.exp(u) * weight(u), -120.0, 12.0, **kw)
        logm, _ = sci_integrate.quad(lambda u: u * weight(u), -120.0, 12.0, **kw)
        worst = max(
            worst,
            abs(posterior_mean(d, sigma, h) - mean / norm),
            abs(posterior_mean_log(d, sigma, h) - logm / norm),
        )
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 1.0
    _report("C1 e-step oracle", ok, f"max abs err {worst:.2e}, {elapsed:.2f} s")
    assert worst <= 1e-6
    assert elapsed < 1.0


# ---------------------------------------------------------------------------
# C2  hand-computed profile likelihood


def test_c2_profile_hand_value():
    data = Dataset(
        v=[1.0, np.e], w=[1.0, np.e], delta1=[1, 1], delta2=[0, 0], delta3=[0, 0],
        x=[[0.0], [1.0]],
    )
    value = profile_loglik(np.zeros(1), "01", data, np.ones(2), 1.0)
    ok = abs(value - (-0.8830)) <= 1e-4
    _report("C2 hand-computed profile", ok, f"value {value:.6f} vs -0.8830 +/- 1e-4")
    assert value == pytest.approx(-0.8830, abs=1e-4)


# ---------------------------------------------------------------------------
# C3  no-frailty recovery with coverage


@pytest.fixture(scope="module")
def c3_summary():
    sc = simulate.paper_scenario(sigma=None, n=1000, replicates=20, seed=20210)
    return run_experiment(
        sc, fit_mode="no-frailty", with_bootstrap=True, n_bootstrap=30, cfg=CFG_BOOT
    )


def test_c3_no_frailty_recovery(c3_summary):
    rows = {r["parameter"]: r for r in c3_summary.parameter_table()}
    biases = {k: abs(r["mean"] - r["truth"]) for k, r in rows.items()}
    coverages = {k: r["coverage"] for k, r in rows.items()}
    max_bias = max(biases.values())
    min_cov, max_cov = min(coverages.values()), max(coverages.values())
    ok = max_bias <= 0.05 and 0.85 <= min_cov and max_cov <= 1.00
    _report(
        "C3 no-frailty recovery", ok,
        f"max |bias| {max_bias:.3f} (<=0.05), coverage in [{min_cov:.2f}, {max_cov:.2f}]",
    )
    assert max_bias <= 0.05
    assert min_cov >= 0.85 and max_cov <= 1.00


# ---------------------------------------------------------------------------
# C4  frailty recovery, sigma = 0.5 block


def test_c4_frailty_recovery():
    sc = simulate.paper_scenario(sigma=0.5, n=1000, replicates=20, seed=20210)
    summary = run_experiment(sc, fit_mode="frailty", with_bootstrap=False)
    rows = {r["parameter"]: r for r in summary.parameter_table()}
    sigma_mean = rows["sigma"]["mean"]
    beta_bias = {
        k: abs(r["mean"] - r["truth"]) for k, r in rows.items() if k != "sigma"
    }
    h01 = [
        r for r in summary.hazard_table()
        if r["transition"] == "01" and abs(r["t"] - 0.5) < 1e-9
    ][0]
    ok = (
        abs(sigma_mean - 0.44) <= 0.10
        and max(beta_bias.values()) <= 0.10
        and abs(h01["mean"] - 0.25) <= 0.05
    )
    _report(
        "C4 frailty recovery", ok,
        f"mean sigma {sigma_mean:.3f} (0.44 +/- 0.10), max beta bias "
        f"{max(beta_bias.values()):.3f} (<=0.10), H01(0.5) {h01['mean']:.3f} (0.25 +/- 0.05)",
    )
    assert abs(sigma_mean - 0.44) <= 0.10
    assert max(beta_bias.values()) <= 0.10
    assert abs(h01["mean"] - 0.25) <= 0.05


# ---------------------------------------------------------------------------
# C5  misspecification direction, sigma = 2


@pytest.fixture(scope="module")
def c5_summary():
    sc = simulate.paper_scenario(sigma=2.0, n=1000, replicates=20, seed=20210)
    return run_experiment(
        sc, fit_mode="no-frailty", with_bootstrap=True, n_bootstrap=30, cfg=CFG_BOOT
    )


def test_c5_misspecification_direction(c5_summary):
    rows = {r["parameter"]: r for r in c5_summary.parameter_table()}
    b123 = rows["12:x4"]
    b011 = rows["01:x1"]
    ok = b123["mean"] >= 1.6 and b123["coverage"] <= 0.7 and b011["mean"] >= 1.15
    _report(
        "C5 misspecification direction", ok,
        f"mean beta12,3 {b123['mean']:.2f} (>=1.6), CR {b123['coverage']:.2f} (<=0.7), "
        f"mean beta01,1 {b011['mean']:.2f} (>=1.15)",
    )
    assert b123["mean"] >= 1.6
    assert b123["coverage"] <= 0.7
    assert b011["mean"] >= 1.15


# ---------------------------------------------------------------------------
# C6  bootstrap calibration


def test_c6_bootstrap_calibration():
    sc = simulate.paper_scenario(sigma=0.5, n=1000, seed=20210)
    feats = _features(sc)
    estimates = []
    ratios = []
    for rep in range(10):
        data = simulate.simulate_dataset(sc, rep).dataset
        base = fit(data, CFG, features=feats)
        boot = bootstrap(
            data, CFG_BOOT, n_replicates=50, seed=(20210, rep, 0x626F6F74),
            frailty=True, features=feats, warm_start=base,
        )
        estimates.append(base.parameters()["01:x1"])
        ratios.append(boot.se["01:x1"])
    empirical_sd = float(np.std(estimates, ddof=1))
    ratio = np.median(np.asarray(ratios) / empirical_sd)
    ok = 0.5 <= ratio <= 2.0
    _report(
        "C6 bootstrap calibration", ok,
        f"median SE/SD ratio {ratio:.2f} in [0.5, 2.0] "
        f"(median SE {np.median(ratios):.3f}, empirical SD {empirical_sd:.3f})",
    )
    assert 0.5 <= ratio <= 2.0


# ---------------------------------------------------------------------------
# C7  RSP uniformity and misspecification detection


def test_c7_rsp_uniformity(c5_summary):
    # at the generating parameters both families are uniform
    sc_true = simulate.paper_scenario(sigma=1.0, n=1000, seed=20210)
    model = true_model(sc_true)
    rej0 = rej12 = 0
    for rep in range(20):
        data = simulate.simulate_dataset(sc_true, rep).dataset
        sample = rsp(data, model, u_seed=rep)
        rej0 += ks_uniform(sample.rsp0)[1] < 0.01
        rej12 += ks_uniform(sample.rsp12)[1] < 0.01
    ok_true = rej0 <= 2 and rej12 <= 2
    _report(
        "C7a rsp uniform at truth", ok_true,
        f"rejections at 1%: state0 {rej0}/20, post-diagnosis {rej12}/20 (<=2 each)",
    )

    # the frailty-ignored fit on high-dependence data
    sc_mis = simulate.paper_scenario(sigma=2.0, n=1000, seed=20210)
    feats = _features(sc_mis)
    rej_mis = 0
    for rep in range(20):
        data = simulate.simulate_dataset(sc_mis, rep).dataset
        res = fit_no_frailty(data, CFG, features=feats)
        sample = rsp(data, res, u_seed=rep)
        p0 = ks_uniform(sample.rsp0)[1]
        p12 = ks_uniform(sample.rsp12)[1]
        rej_mis += (p0 < 0.01) or (p12 < 0.01)
    ok_mis = rej_mis >= 15
    _report(
        "C7b rsp rejects misspecified fit", ok_mis,
        f"rejections at 1%: {rej_mis}/20 (>=15 required); the refitted "
        "no-frailty hazards absorb most of the marginal misfit at n=1000",
    )
    assert ok_true
    assert ok_mis, (
        f"only {rej_mis}/20 datasets rejected: the randomized-survival-probability "
        "diagnostic has limited power against the frailty-ignored fit at n=1000 "
        "(its systematic deviation is ~0.03, below the 1% KS critical value 0.052); "
        "see the decisions ledger for the power analysis"
    )


# ---------------------------------------------------------------------------
# C8  determinism of the command line


def _run_cli(*argv):
    return subprocess.run(
        [sys.executable, "-m", "aftid"] + [str(a) for a in argv],
        capture_output=True, text=True, timeout=1200,
    )


def _tree(root: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(root.iterdir()) if p.is_file()}


def test_c8_cli_determinism(tmp_path):
    sc = simulate.paper_scenario(sigma=0.5, n=80, seed=42)
    data_path = tmp_path / "data.csv"
    simulate.simulate_dataset(sc, 0).dataset.to_csv(data_path)
    cfg = tmp_path / "cfg.ini"
    cfg.write_text(
        "[scenario]\nsigma = 0.5\nn = 60\nreplicates = 3\nseed = 5\n"
        "[fit]\nfeatures01 = x1, x2\nfeatures02 = x2, x3\nfeatures12 = x1, x2, x4\n"
        "max_iterations = 40\n",
        encoding="utf-8",
    )
    checks = []

    outs = [tmp_path / f"fit{i}" for i in (1, 2)]
    for out in outs:
        r = _run_cli("fit", "--input", data_path, "--output-dir", out, "--config", cfg,
                     "--no-frailty", "--seed", 9)
        assert r.returncode == 0, r.stdout + r.stderr
    checks.append(("fit", _tree(outs[0]) == _tree(outs[1])))

    outs = [tmp_path / f"exp{i}" for i in (1, 2)]
    threads = (1, 2)
    for out, th in zip(outs, threads):
        r = _run_cli("experiment", "--config", cfg, "--output-dir", out,
                     "--no-frailty", "--threads", th, "--seed", 5)
        assert r.returncode == 0, r.stdout + r.stderr
    checks.append(("experiment across --threads", _tree(outs[0]) == _tree(outs[1])))

    outs = [tmp_path / f"boot{i}" for i in (1, 2)]
    for out in outs:
        r = _run_cli("bootstrap", "--input", data_path, "--output-dir", out,
                     "--config", cfg, "--no-frailty", "--bootstrap", 4, "--seed", 3)
        assert r.returncode == 0, r.stdout + r.stderr
    checks.append(("bootstrap", _tree(outs[0]) == _tree(outs[1])))

    outs = [tmp_path / f"gof{i}" for i in (1, 2)]
    for out in outs:
        r = _run_cli("gof", "--input", data_path, "--fit", tmp_path / "fit1" / "fit.json",
                     "--output-dir", out, "--seed", 7)
        assert r.returncode == 0, r.stdout + r.stderr
    checks.append(("gof", _tree(outs[0]) == _tree(outs[1])))

    ok = all(flag for _, flag in checks)
    _report("C8 determinism", ok, "; ".join(f"{name}: {'ok' if f else 'MISMATCH'}" for name, f in checks))
    assert ok


# ---------------------------------------------------------------------------
# C9  property suites run standalone


def test_c9_property_suites():
    result = subprocess.run(
        [sys.executable, "-m", "pytest", "tests/test_properties.py", "-q", "--no-header"],
        capture_output=True, text=True, timeout=900, cwd=Path(__file__).resolve().parent.parent,
    )
    ok = result.returncode == 0
    tail = result.stdout.strip().splitlines()[-1] if result.stdout.strip() else "no output"
    _report("C9 property suites", ok, tail)
    assert ok, result.stdout + result.stderr
