"""Exit-criteria suite.

Every criterion runs at its stated size and tolerance and prints one
``criterion k [PASS|FAIL] ...`` line (echoed again in the terminal summary).
Run alone with ``pytest -m acceptance -s tests/test_acceptance.py``.
"""

import time
from dataclasses import replace

import numpy as np
import pytest
from oracles import convolution_B, full_coefficients, retained_modes, triad_table

from tamed_nse.cli import main as cli_main
from tamed_nse.config import build, load_config, packaged_config
from tamed_nse.diagnostics import INEQUALITIES, budget_refinement, observed_order, strong_convergence
from tamed_nse.invariant_measure import (
    DampedConfig,
    averaged_norm_check,
    radius_for_bound,
    run_damped,
    tail_bound_check,
)
from tamed_nse.operators import RHS, DriftParams, NoiseModel, nonlinear_B
from tamed_nse.sde_integrator import BlowUpError, SimConfig, simulate_ensemble
from tamed_nse.spectral_core import Grid, leray_project, mode_field, norm, random_field, rescale
from tamed_nse.suites import (
    apriori_ladder_point,
    apriori_lines,
    inequality_checks,
    ladder_configs,
    operator_checks,
    taming_checks,
)

pytestmark = pytest.mark.acceptance


def _fmt(x) -> str:
    return "[" + ", ".join(f"{v:.3e}" for v in x) + "]"


def acceptance_sim(**kw) -> SimConfig:
    sim = build(load_config(packaged_config("acceptance")))
    return sim.with_(**kw) if kw else sim


def test_c01_operator_identities(criterion):
    t0 = time.perf_counter()
    lines = operator_checks(count=1000)
    elapsed = time.perf_counter() - t0
    bad = [f"{x.name}={x.observed:.2e}" for x in lines if not x.passed]
    worst = max(x.observed for x in lines if x.bound == 1e-12)
    ok = not bad and elapsed < 30
    criterion(1, "operator identities", ok,
              f"1000 fields, worst projection residual {worst:.2e} (tol 1e-12), {elapsed:.1f} s (limit 30 s)"
              + (f"; failing {bad}" if bad else ""))
    assert ok


def test_c02_taming_function(criterion):
    lines = taming_checks(N=10.0, samples=100_000)
    ok = all(x.passed for x in lines)
    detail = ", ".join(f"{x.name} {x.observed:.3g}/{x.bound:g}" for x in lines)
    criterion(2, "taming function", ok, f"1e5 samples; {detail}")
    assert ok


def test_c03_nonlinearity_oracle(criterion):
    grid, n = Grid(16), 4.0
    rng = np.random.default_rng(3)
    modes = retained_modes(grid, grid.state_mask(n))
    table = triad_table(modes)
    rhs = RHS(grid, n, DriftParams(tf=None), None)
    worst_b, worst_o = 0.0, 0.0
    for _ in range(100):
        u = random_field(grid, n, rng, amplitude=rng.uniform(0.1, 10.0))
        b = nonlinear_B(u)
        want = convolution_B(grid, full_coefficients(grid, u.coeffs, modes), modes, table)
        got = full_coefficients(grid, b.coeffs, modes)
        worst_b = max(worst_b, np.linalg.norm(got - want) / np.linalg.norm(want))
        v = rhs.compress(u.coeffs)
        scale = np.sqrt(rhs.norm2(v) * rhs.norm2(v, rhs.k2) * rhs.norm2(v, (1 + rhs.k2) ** 2))
        worst_o = max(worst_o, abs(float(rhs.dot(rhs.compress(b.coeffs), v))) / float(scale))
    ok = worst_b <= 1e-10 and worst_o <= 1e-10
    criterion(3, "nonlinearity oracle", ok,
              f"100 fields M=16 n=4: max rel |B - conv| {worst_b:.2e}, scaled <B(u),u> {worst_o:.2e} (tol 1e-10)")
    assert ok


def test_c04_inequality_suite(criterion):
    lines = inequality_checks(count=1000, lo=1e-2, hi=1e2)
    stated = [x for x in lines if x.name in INEQUALITIES]
    extra = [x for x in lines if x.name not in INEQUALITIES]
    bad = [x for x in stated if not x.passed]
    ok = not bad
    detail = "; ".join(f"{x.name} max {x.observed:.3g}" for x in stated)
    detail += "; reported: " + "; ".join(f"{x.name} max {x.observed:.3g}" for x in extra)
    if bad:
        detail = f"VIOLATED {[x.name for x in bad]}; " + detail
    criterion(4, "inequality suite", ok, f"1000 fields, amplitudes 1e-2..1e2; {detail}")
    assert ok, f"violated: {[(x.name, x.observed) for x in bad]}"


def test_c05_integrator_convergence(criterion):
    t0 = time.perf_counter()
    # deterministic linear mode: u(t) = exp(-(alpha + nu |k|^2) t) u0
    g = Grid(16)
    u0 = rescale(leray_project(mode_field(g, (1, 1, 0), (0, 0, 1), n=4.0)), 1.0, "H")
    alpha, nu, T = 0.5, 1.0, 1.0
    base = SimConfig(g, 4.0, 0.02, T, DriftParams(nu=nu, alpha=alpha, tf=None, nonlinear=False),
                     NoiseModel(g, 0), u0)
    dts = np.array([0.02, 0.01, 0.005, 0.0025])
    exact = np.exp(-(alpha + nu * 2.0) * T)
    errs = np.array([abs(np.sqrt(simulate_ensemble(base.with_(dt=dt)).record.H2[-1, 0]) - exact) for dt in dts])
    lin_order = observed_order(dts, errs)
    # strong order, full tamed system, coupled increments, 128 paths
    cfg = acceptance_sim(T=0.256, n_paths=128, full_diagnostics=False)
    study = strong_convergence(cfg, factors=(16, 8, 4, 2))
    elapsed = time.perf_counter() - t0
    ok = 0.9 <= lin_order <= 1.1 and study.order >= 0.45 and elapsed < 300
    criterion(5, "integrator convergence", ok,
              f"linear order {lin_order:.3f} (in [0.9, 1.1]); strong order {study.order:.3f} (>= 0.45), "
              f"errors {_fmt(study.errors)} at dt {study.dts.tolist()}; {elapsed:.0f} s (limit 300 s)")
    assert ok


def test_c06_energy_budget(criterion):
    cfg = acceptance_sim(T=0.128, n_paths=64, full_diagnostics=False)
    study = budget_refinement(cfg, factors=(8, 4, 2, 1))
    ok = study.order >= 1.0
    criterion(6, "energy budget", ok,
              f"RMS residual {_fmt(study.errors)} at dt {study.dts.tolist()}, "
              f"order {study.order:.3f} (>= 1)")
    assert ok


def test_c07_apriori_monitors(criterion):
    t0 = time.perf_counter()
    cfg = acceptance_sim(full_diagnostics=False)
    assert cfg.n_paths == 128 and cfg.T == 1.0 and cfg.dt == 1e-3
    assert norm(cfg.u0, "V") == pytest.approx(2.0)
    cutoffs = (4, 6, 8)
    runs = [apriori_ladder_point(c, moments=(2, 3)) for c in ladder_configs(cfg, cutoffs)]
    lines = apriori_lines(runs, cutoffs)
    ok = all(x.passed for x in lines)
    summary = "; ".join(
        f"{k}: " + "/".join(f"{r[k].mean:.4g}" for r in runs) for k in runs[0])
    bad = [x.name for x in lines if not x.passed]
    criterion(7, "a-priori monitors across n=4/6/8", ok,
              f"128 paths each, {time.perf_counter() - t0:.0f} s; {summary}" + (f"; failing {bad}" if bad else ""))
    assert ok


def test_c08_invariant_measure_bound(criterion):
    t0 = time.perf_counter()
    d = build(load_config(packaged_config("damped")))
    assert isinstance(d, DampedConfig)
    assert (d.sim.params.alpha, d.sim.params.nu, d.delta, d.gamma) == (1.0, 1.0, 0.875, 0.5)
    assert d.f_norm2 == pytest.approx(0.01) and d.u0_norm2 == pytest.approx(1.0)
    assert d.sim.T == 40.0 and d.sim.n_paths == 64
    ens = run_damped(d)
    rep = averaged_norm_check(ens, d)
    est = rep.estimate
    slack = 3 * est.se + rep.allowance
    formula_ok = est.mean <= rep.bound + slack
    printed = 0.025 + 0.005
    printed_ok = est.mean <= printed + slack
    R = radius_for_bound(d, 0.1)
    tail = tail_bound_check(ens, R, d)
    elapsed = time.perf_counter() - t0
    ok = formula_ok and printed_ok and tail.passed and elapsed < 600
    criterion(8, "invariant-measure bound", ok,
              f"(1/T) int E||u||_V^2 = {est.mean:.5f} +- {est.se:.2g}; bound {rep.bound:.4f} (formula) and "
              f"{printed:.3f} (as printed), slack 3SE + {rep.allowance:.2g}; tail at R={R:.3f}: "
              f"{tail.estimate.mean:.4f} vs Chebyshev {tail.chebyshev:.3f}; {elapsed:.0f} s (limit 600 s)")
    assert ok


def test_c09_reproducibility(criterion, tmp_path, capsys):
    cfg = str(packaged_config("acceptance"))
    a, b = tmp_path / "a", tmp_path / "b"
    rc1 = cli_main(["simulate", "--config", cfg, "--paths", "8", "--out", str(a)])
    rc2 = cli_main(["simulate", "--manifest", str(a / "run_manifest.json"), "--out", str(b)])
    same = (a / "diagnostics.csv").read_bytes() == (b / "diagnostics.csv").read_bytes()
    ok = rc1 == 0 and rc2 == 0 and same
    size = (a / "diagnostics.csv").stat().st_size
    criterion(9, "reproducibility", ok,
              f"acceptance config, 8 paths x 1001 steps, manifest replay diagnostics.csv bitwise identical: {same} "
              f"({size} bytes)")
    assert ok


def test_c10_taming_efficacy(criterion):
    tamed = build(load_config(packaged_config("taming_efficacy")))
    assert tamed.T == 5.0 and tamed.dt == 1e-3
    sup0 = float(np.sqrt(tamed.u0.to_physical().magnitude2().max()))
    assert sup0 == pytest.approx(10.0)
    ens = simulate_ensemble(tamed)
    finite = bool(np.all(np.isfinite(ens.record.V2)) and np.all(np.isfinite(ens.final.coeffs)))
    tamed_note = f"tamed: finite={finite}, max ||u||_V {np.sqrt(ens.record.V2.max()):.4g}, " \
                 f"final E||u||_V {np.sqrt(ens.record.V2[-1]).mean():.3g}"
    untamed = replace(tamed, params=replace(tamed.params, tf=None))
    try:
        ens_u = simulate_ensemble(untamed)
        untamed_note = (f"untamed (reported only): finite, max ||u||_V {np.sqrt(ens_u.record.V2.max()):.4g}, "
                        f"final E||u||_V {np.sqrt(ens_u.record.V2[-1]).mean():.3g}")
    except BlowUpError as e:
        untamed_note = f"untamed (reported only): blow-up at t={e.t:.4g} on paths {e.paths}"
    criterion(10, "taming efficacy", finite,
              f"sup|u0| = 10, ||u0||_V = {float(norm(tamed.u0, 'V')):.3g}, T=5, {tamed.n_paths} paths; "
              f"{tamed_note}; {untamed_note}")
    assert finite
