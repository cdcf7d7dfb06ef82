"""Verification suites behind ``tamed-nse verify``.

Each check yields a ``VerifyLine`` (name, reference, observed, bound,
verdict).  References are short descriptions of the property checked.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .diagnostics import (
    INEQUALITIES,
    SUPPLEMENTARY,
    Estimate,
    VerifyLine,
    amplitude_sweep,
    apriori_monitors,
    budget_refinement,
    common_bound,
    higher_moment_monitor,
    inequality_lines,
    inequality_residuals,
    random_fields,
    significant_growth,
)
from .operators import RHS, DriftParams, NoiseModel, make_forcing
from .sde_integrator import SimConfig, simulate_ensemble
from .spectral_core import (
    Grid,
    SpectralField,
    inner,
    leray_coeffs,
    norm,
    project_ball,
    random_field,
    stokes_apply,
)
from .taming import TamingFunction, g_eval, g_prime

SUITES = ("operators", "taming", "energy", "apriori")

# split of the inequality table between the taming and energy suites
TAMING_INEQUALITIES = ("taming_gradient", "taming_L4", "taming_gradient_corrected")
ENERGY_INEQUALITIES = ("B_gradient", "noise_H", "noise_V", "growth_F", "dissipation_D", "H3_prime")

REFERENCES = {
    "ball_idempotent": "Fourier-ball projection is idempotent",
    "ball_orthogonal": "Fourier-ball projection is H-orthogonal",
    "ball_contracts_V": "Fourier-ball projection contracts the V norm",
    "ball_commutes_A": "Stokes operator maps the ball space into itself",
    "leray_gradients": "Leray projection annihilates gradients",
    "leray_idempotent": "Leray projection is idempotent",
    "B_orthogonal": "trilinear antisymmetry, <B_n(u),u> = 0",
    "g_at_N": "taming function vanishes at the threshold",
    "g_at_N_plus_1": "taming function equals 1 at the threshold plus one",
    "g_below_r": "taming function bounded by its argument",
    "g_lipschitz_2": "taming function Lipschitz with constant 2",
    "g_C1_gluing": "bridge glues in C^1 at both ends",
    "budget_order": "Ito energy-budget residual decays at least like dt",
    "budget_rms": "Ito energy-budget residual at the configured dt",
}


def _rel(num, den):
    den = np.asarray(den, float)
    return np.asarray(num, float) / np.where(den > 0, den, 1.0)


def operator_checks(grid: Grid | None = None, n: float = 4.0, count: int = 1000, seed: int = 0,
                    batch: int = 50, tol: float = 1e-12) -> list[VerifyLine]:
    """Projection identities and B_n orthogonality over ``count`` random fields."""
    grid = grid or Grid(16)
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(
        ("ball_idempotent", "ball_orthogonal", "ball_contracts_V", "ball_commutes_A",
         "leray_gradients", "leray_idempotent", "B_orthogonal"), 0.0)
    p = DriftParams(tf=None)
    rhs = RHS(grid, n, p, None)
    done = 0
    while done < count:
        b = min(batch, count - done)
        done += b
        u = random_field(grid, np.inf, rng, 1.0, batch=(b,), scale_by="H", slope=1.0)
        Pu = project_ball(u, n)
        h = norm(u, "H")
        worst["ball_idempotent"] = max(worst["ball_idempotent"],
                                       float(np.max(_rel(norm(project_ball(Pu, n) - Pu, "H"), h))))
        worst["ball_orthogonal"] = max(worst["ball_orthogonal"],
                                       float(np.max(_rel(np.abs(inner(Pu, u - Pu)), h**2))))
        v_all, v_n = norm(u, "V"), norm(Pu, "V")
        worst["ball_contracts_V"] = max(worst["ball_contracts_V"], float(np.max(_rel(v_n - v_all, v_all))))
        Au = stokes_apply(Pu)
        worst["ball_commutes_A"] = max(worst["ball_commutes_A"],
                                       float(np.max(_rel(norm(project_ball(Au, n) - Au, "H"), norm(Au, "H")))))
        phi = grid.to_spectral(rng.standard_normal((b,) + grid.physical_shape)) * grid.dealias_mask
        grad = 1j * grid.k * phi[:, None]
        gnorm = np.sqrt(grid.spectral_sum(np.sum(np.abs(grad) ** 2, axis=-4)))
        pg = leray_coeffs(grid, grad)
        pnorm = np.sqrt(grid.spectral_sum(np.sum(np.abs(pg) ** 2, axis=-4)))
        worst["leray_gradients"] = max(worst["leray_gradients"], float(np.max(_rel(pnorm, gnorm))))
        w = SpectralField(grid, grid.to_spectral(rng.standard_normal((b, 3) + grid.physical_shape)))
        lw = leray_coeffs(grid, w.coeffs)
        worst["leray_idempotent"] = max(worst["leray_idempotent"], float(np.max(
            _rel(norm(SpectralField(grid, leray_coeffs(grid, lw) - lw), "H"), norm(w, "H")))))
        un = random_field(grid, n, rng, 1.0, batch=(b,), scale_by="H")
        v = rhs.compress(un.coeffs)
        Bv = rhs.evaluate(v, need_grad=False).B
        scale = np.sqrt(rhs.norm2(v) * rhs.norm2(v, rhs.k2) * rhs.norm2(v, (1 + rhs.k2) ** 2))
        worst["B_orthogonal"] = max(worst["B_orthogonal"], float(np.max(_rel(np.abs(rhs.dot(Bv, v)), scale))))
    bounds = {k: tol for k in worst}
    bounds["B_orthogonal"] = 1e-10
    return [VerifyLine(k, REFERENCES[k], v, bounds[k], v <= bounds[k]) for k, v in worst.items()]


def taming_checks(N: float = 10.0, samples: int = 100_000, seed: int = 0) -> list[VerifyLine]:
    """Branch values, |g(r)| <= r, 2-Lipschitz and C^1 gluing."""
    tf = TamingFunction(N)
    rng = np.random.default_rng(seed)
    # half the mass near the bridge, the rest spread to large r
    r = np.concatenate([rng.uniform(0, N + 2, samples // 2), rng.exponential(5 * N, samples - samples // 2)])
    s = np.concatenate([rng.uniform(0, N + 2, samples // 2), rng.exponential(5 * N, samples - samples // 2)])
    g_r, g_s = g_eval(r, tf), g_eval(s, tf)
    keep = r != s
    lip = float(np.max(np.abs(g_r - g_s)[keep] / np.abs(r - s)[keep]))
    glue = 0.0
    for r0 in (N, N + 1.0):
        lo, hi = np.nextafter(r0, -np.inf), np.nextafter(r0, np.inf)
        glue = max(glue, abs(g_eval(hi, tf) - g_eval(lo, tf)), abs(g_prime(hi, tf) - g_prime(lo, tf)))
    lines = [
        VerifyLine("g_at_N", REFERENCES["g_at_N"], abs(g_eval(N, tf)), 0.0, g_eval(N, tf) == 0.0),
        VerifyLine("g_at_N_plus_1", REFERENCES["g_at_N_plus_1"], abs(g_eval(N + 1, tf) - 1.0), 0.0,
                   g_eval(N + 1, tf) == 1.0),
        VerifyLine("g_below_r", REFERENCES["g_below_r"], float(np.max(np.abs(g_r) - r)), 0.0,
                   bool(np.all(np.abs(g_r) <= r))),
        VerifyLine("g_lipschitz_2", REFERENCES["g_lipschitz_2"], lip, 2.0, lip <= 2.0),
        VerifyLine("g_C1_gluing", REFERENCES["g_C1_gluing"], glue, 1e-10, glue <= 1e-10),
    ]
    return lines


def inequality_checks(names=None, grid: Grid | None = None, n: float = 4.0, count: int = 1000,
                      seed: int = 0, lo: float = 1e-2, hi: float = 1e2,
                      params: DriftParams | None = None, noise: NoiseModel | None = None) -> list[VerifyLine]:
    """Worst residual of each named inequality over a log-uniform amplitude sweep."""
    grid = grid or Grid(16)
    rng = np.random.default_rng(seed)
    params = params or DriftParams(forcing=make_forcing(grid, n))
    noise = noise or NoiseModel(grid)
    fields = random_fields(grid, n, amplitude_sweep(grid, n, count, rng, lo, hi), rng)
    known = set(INEQUALITIES) | set(SUPPLEMENTARY)
    names = list(INEQUALITIES) + list(SUPPLEMENTARY) if names is None else list(names)
    bad = [k for k in names if k not in known]
    if bad:
        raise ValueError(f"unknown inequalities {bad}")
    return inequality_lines(inequality_residuals(fields, params, noise, names=names))


def energy_checks(cfg: SimConfig, factors=(8, 4, 2, 1), fields: int = 1000, studies=None) -> list[VerifyLine]:
    """Energy-side inequalities plus the Ito budget refinement on ``cfg``.

    The refinement study is stored in ``studies["energy_budget"]`` when a dict is given.
    """
    lines = inequality_checks(ENERGY_INEQUALITIES, cfg.grid, cfg.n, fields, params=cfg.params, noise=cfg.noise)
    study = budget_refinement(cfg, factors)
    if studies is not None:
        studies["energy_budget"] = study
    lines.append(VerifyLine("budget_order", REFERENCES["budget_order"], study.order, 1.0, study.order >= 1.0))
    rms = float(study.errors[-1])
    scale = float(norm(cfg.u0, "H") ** 2) or 1.0
    lines.append(VerifyLine("budget_rms", REFERENCES["budget_rms"], rms / scale, 1e-2, rms / scale <= 1e-2))
    return lines


def ladder_configs(cfg: SimConfig, cutoffs=(4, 6, 8), grids=None) -> list[SimConfig]:
    """Copies of cfg at each cutoff with the same u0 and f0 (both inside the smallest ball)."""
    grids = grids or {4: 16, 6: 20, 8: 28}
    out = []
    for n in cutoffs:
        g = Grid(grids.get(n, max(cfg.grid.M, 3 * int(n) + 4 + (3 * int(n)) % 2)), cfg.grid.L)
        u0 = _regrid(cfg.u0, g)
        params = cfg.params
        if params.forcing is not None:
            params = replace(params, forcing=replace(params.forcing, f0=_regrid(params.forcing.f0, g)))
        noise = NoiseModel(g, cfg.noise.J, cfg.noise.kind, cfg.noise.sigma2, cfg.noise.modulation)
        out.append(cfg.with_(grid=g, n=float(n), u0=u0, params=params, noise=noise))
    return out


def _regrid(u: SpectralField, g: Grid) -> SpectralField:
    """Copy the coefficients of u onto a (larger or smaller) grid; modes must fit."""
    src = u.grid
    if src.M == g.M:
        return u
    z = np.rint(src.z.reshape(3, -1)).astype(int)
    c = u.coeffs.reshape(u.batch_shape + (3, -1))
    nz = np.flatnonzero(np.any(np.abs(c) > 0, axis=tuple(range(c.ndim - 1))))
    if nz.size and np.any(np.abs(z[:, nz]) >= g.M // 2):
        raise ValueError(f"field has modes beyond the Nyquist band of M={g.M}")
    out = np.zeros(u.batch_shape + (3,) + g.spectral_shape, complex)
    zz = z[:, nz]
    out[..., zz[0] % g.M, zz[1] % g.M, zz[2]] = c[..., nz]
    return SpectralField(g, out, u.n)


def apriori_checks(cfg: SimConfig, cutoffs=(4, 6, 8), grids=None, moments=(2, 3)) -> list[VerifyLine]:
    """Monitors of the a-priori estimates across a cutoff ladder: finite and sharing a 3-SE bound."""
    runs = [apriori_ladder_point(c, moments) for c in ladder_configs(cfg, cutoffs, grids)]
    return apriori_lines(runs, cutoffs)


def apriori_ladder_point(cfg: SimConfig, moments=(2, 3)) -> dict[str, Estimate]:
    ens = simulate_ensemble(cfg)
    mon = apriori_monitors(ens, cfg.R_stop)
    out = {"sup_V2": mon.sup_V2, "int_DA2": mon.int_DA2, "int_L4": mon.int_L4}
    for p in moments:
        m = higher_moment_monitor(ens, p)
        out[f"sup_V2^{p}"] = m.sup
        out[f"int_V2^{p - 1}_A2"] = m.integral
    return out


def apriori_lines(runs: list[dict[str, Estimate]], cutoffs) -> list[VerifyLine]:
    lines = []
    for key in runs[0]:
        ests = [r[key] for r in runs]
        finite = all(np.isfinite(e.mean) and np.isfinite(e.se) for e in ests)
        ok, lo, hi = common_bound(ests)
        grows = significant_growth(ests)
        means = ", ".join(f"n={c}: {e.mean:.4g}+-{e.se:.2g}" for c, e in zip(cutoffs, ests))
        ref = f"a-priori monitor E[{key}] bounded uniformly in the cutoff ({means})"
        spread = max(e.mean for e in ests) - min(e.mean for e in ests)
        lines.append(VerifyLine(f"apriori_{key}", ref, spread, 3 * max(np.hypot(a.se, b.se) for a in ests for b in ests),
                                finite and ok and not grows))
    return lines


def run_suite(name: str, cfg: SimConfig | None = None, fields: int = 1000, studies=None) -> list[VerifyLine]:
    if name == "operators":
        return operator_checks(count=fields)
    if name == "taming":
        return taming_checks() + inequality_checks(TAMING_INEQUALITIES, count=fields)
    if name == "energy":
        return energy_checks(cfg or default_energy_config(), fields=fields, studies=studies)
    if name == "apriori":
        return apriori_checks(cfg or default_apriori_config())
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")


def default_energy_config() -> SimConfig:
    g = Grid(16)
    u0 = random_field(g, 1.5, np.random.default_rng(1), 2.0, scale_by="V")
    return SimConfig(g, 4.0, 1e-3, 0.064, DriftParams(forcing=make_forcing(g, 4.0)), NoiseModel(g), u0,
                     n_paths=32, full_diagnostics=False)


def default_apriori_config() -> SimConfig:
    g = Grid(16)
    u0 = random_field(g, 1.5, np.random.default_rng(1), 2.0, scale_by="V")
    return SimConfig(g, 4.0, 1e-3, 0.1, DriftParams(forcing=make_forcing(g, 4.0)), NoiseModel(g), u0,
                     n_paths=16, R_stop=10.0, full_diagnostics=False)
