"""Inequality residuals, energy budget and Monte-Carlo a-priori monitors.

Every residual is ``lhs - rhs`` of an inequality, so a value <= 0 means the
inequality holds on that field.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .sde_integrator import DiagnosticsRecord, EnsembleStats
from .operators import RHS, DriftParams, NoiseModel, Terms
from .spectral_core import SpectralField
from .taming import TamingFunction, g_prime


# constants -----------------------------------------------------------------

def C_N_gradient(tf: TamingFunction) -> float:
    """2 sup_r |phi'(r) r| for the cubic bridge; equals 2N once N >= 1/3."""
    t = np.linspace(0.0, 1.0, 20001)
    r = tf.N + t
    bridge = np.abs((1.0 - g_prime(r, tf)) * r).max()
    return 2.0 * max(tf.N, bridge)


def C_N_gradient_corrected(tf: TamingFunction) -> float:
    """Constant of the provable form ((-g u, u)) <= C |grad u|^2 - || |u||grad u| ||^2."""
    return tf.phi_max


def C_N(tf: TamingFunction) -> float:
    """Constant in <-g_n(u), u> <= -||u||_L4^4 + C_N |u|^2 (uses phi <= N + 1)."""
    return tf.N + 1.0


def C_Nf(p: DriftParams) -> float:
    return p.tf.N + 1.5 + p.C_f / 2


def K1(p: DriftParams) -> float:
    return 0.75 + 2 * p.C_f + 2 * p.b_f_L1


def delta(nu: float, noise: NoiseModel) -> float:
    """(H3)' constant: 2 nu |grad u|^2 - ||G(u)||^2 >= 2 delta |grad u|^2."""
    return (2 * nu - noise.sigma2) / 2


# field functionals -----------------------------------------------------------

@dataclass
class FieldFunctionals:
    """Norms and pairings of a batch of fields, computed once."""

    H2: np.ndarray
    grad2: np.ndarray
    A2: np.ndarray
    L4_4: np.ndarray
    ugu2: np.ndarray
    B_u: np.ndarray  # <B_n(u), u>
    B_Au: np.ndarray  # ((B_n(u), u))
    g_u: np.ndarray  # <g_n(u), u>
    g_Au: np.ndarray  # ((g_n(u), u))
    G_H2: np.ndarray
    G_V2: np.ndarray
    u_drift: np.ndarray
    scale_B: np.ndarray

    @property
    def F(self):
        return self.G_H2 + 2 * self.u_drift

    @property
    def D(self):
        return self.u_drift + 0.5 * self.G_H2


def field_functionals(u: SpectralField, p: DriftParams, nm: NoiseModel) -> FieldFunctionals:
    if not np.isfinite(u.n):
        raise ValueError("field needs a finite ball radius")
    r = RHS(u.grid, u.n, p, nm)
    v = r.compress(u.coeffs)
    terms: Terms = r.evaluate(v)
    g = u.grid
    m2 = np.sum(terms.values**2, axis=-4)
    H2, grad2, A2 = r.norm2(v), r.norm2(v, r.k2), r.norm2(v, r.k2**2)
    Av = r.k2 * v
    G = terms.G
    G_grad2 = r.norm2(G, r.k2).sum(axis=0) if len(G) else np.zeros(H2.shape)
    return FieldFunctionals(
        H2=H2,
        grad2=grad2,
        A2=A2,
        L4_4=g.integrate(m2**2),
        ugu2=g.integrate(m2 * np.sum(terms.grad**2, axis=(-5, -4))),
        B_u=r.dot(terms.B, v),
        B_Au=r.dot(terms.B, Av),
        g_u=r.dot(terms.g, v),
        g_Au=r.dot(terms.g, Av),
        G_H2=r.hs_norm2(G),
        G_V2=r.hs_norm2(G) + G_grad2,
        u_drift=r.dot(v, r.drift(v, terms)),
        scale_B=np.sqrt(H2 * (H2 + grad2) * (H2 + A2)),
    )


def drift_dissipation(u: SpectralField, p: DriftParams, nm: NoiseModel) -> np.ndarray:
    """D(u) = <u, drift(u)> + 1/2 ||G_n(u)||^2."""
    return field_functionals(u, p, nm).D


# inequality residuals --------------------------------------------------------

Residual = Callable[[FieldFunctionals, DriftParams, NoiseModel], np.ndarray]


def res_B_orthogonal(f, p, nm):
    """|<B_n(u), u>| relative to |u|_H ||u||_V |u|_D(A); compared with 1e-10."""
    return np.abs(f.B_u) / np.where(f.scale_B > 0, f.scale_B, 1.0) - 1e-10


def res_B_gradient(f, p, nm):
    """|((B_n(u), u))| <= 1/2 |u|^2_D(A) + 1/2 || |u||grad u| ||^2 (1e-6 slack on 1/2)."""
    return np.abs(f.B_Au) - (0.5 + 1e-6) * ((f.H2 + f.A2) + f.ugu2)


def res_taming_gradient(f, p, nm):
    """((-g_n(u), u)) <= C_N |grad u|^2 - 2 || |u||grad u| ||^2, C_N = 2 sup|phi'(r) r|."""
    return -f.g_Au - (C_N_gradient(p.tf) * f.grad2 - 2 * f.ugu2)


def res_taming_gradient_corrected(f, p, nm):
    """((-g_n(u), u)) <= (N + 4/27) |grad u|^2 - || |u||grad u| ||^2."""
    return -f.g_Au - (C_N_gradient_corrected(p.tf) * f.grad2 - f.ugu2)


def res_taming_L4(f, p, nm):
    """<-g_n(u), u> <= -||u||^4_L4 + (N + 1)|u|^2."""
    return -f.g_u - (-f.L4_4 + C_N(p.tf) * f.H2)


def res_noise_H(f, p, nm):
    """||G(u)||^2_{L2(l2;H)} <= 1/4 |grad u|^2."""
    return f.G_H2 - 0.25 * f.grad2


def res_noise_V(f, p, nm):
    """||G(u)||^2_{L2(l2;V)} <= 1/2 |Au|^2 + C_sigma |grad u|^2."""
    return f.G_V2 - (0.5 * f.A2 + nm.C_sigma * f.grad2)


def res_growth_F(f, p, nm):
    """F(u) <= K1 (1 + |u|^2)."""
    return f.F - K1(p) * (1 + f.H2)


def res_dissipation_D(f, p, nm):
    """D(u) <= -alpha|u|^2 - (nu - sigma2/2)|grad u|^2 - ||u||^4_L4 + C_Nf |u|^2 + 1/2 |b_f|_L1."""
    coef = p.nu - nm.sigma2 / 2
    return f.D - (-p.alpha * f.H2 - coef * f.grad2 - f.L4_4 + C_Nf(p) * f.H2 + 0.5 * p.b_f_L1)


def res_H3(f, p, nm):
    """2 nu |grad u|^2 - ||G(u)||^2 >= 2 delta |grad u|^2."""
    return f.G_H2 + 2 * delta(p.nu, nm) * f.grad2 - 2 * p.nu * f.grad2


def res_stokes_n2(f, p, nm, n):
    """|A u| <= n^2 |u| on the ball."""
    return np.sqrt(f.A2) - n**2 * np.sqrt(f.H2) * (1 + 1e-12)


def res_stokes_n(f, p, nm, n):
    """|A u| <= n |u|, the weaker form; expected to fail for n > 1."""
    return np.sqrt(f.A2) - n * np.sqrt(f.H2) * (1 + 1e-12)


INEQUALITIES: dict[str, tuple[Residual, str]] = {
    "B_orthogonal": (res_B_orthogonal, "trilinear antisymmetry, <B_n(u),u> = 0"),
    "B_gradient": (res_B_gradient, "nonlinear term against Au, Young bound"),
    "taming_gradient": (res_taming_gradient, "tamed term against Au, constant 2 sup|phi' r|"),
    "taming_L4": (res_taming_L4, "tamed term against u, L4 coercivity with N + 1"),
    "noise_H": (res_noise_H, "transport noise Hilbert-Schmidt bound in H"),
    "noise_V": (res_noise_V, "transport noise Hilbert-Schmidt bound in V"),
    "growth_F": (res_growth_F, "growth functional linear bound with K1"),
    "dissipation_D": (res_dissipation_D, "drift dissipation bound behind the energy inequality"),
    "H3_prime": (res_H3, "dissipativity hypothesis of the damped system"),
}

# Reported alongside as a provable variant; not one of the stated inequalities.
SUPPLEMENTARY = {
    "taming_gradient_corrected": (res_taming_gradient_corrected, "tamed term against Au, provable form N + 4/27"),
}


def amplitude_sweep(grid, n, count, rng, lo=1e-2, hi=1e2):
    """Log-uniform sup-norm amplitudes in [lo, hi]."""
    return np.exp(rng.uniform(np.log(lo), np.log(hi), size=count))


def random_fields(grid, n, amplitudes, rng, batch=50):
    from .spectral_core import random_field

    out = []
    for i in range(0, len(amplitudes), batch):
        a = np.asarray(amplitudes[i : i + batch])
        u = random_field(grid, n, rng, 1.0, batch=(len(a),))
        out.append(u * a)
    return out


def inequality_residuals(fields: Sequence[SpectralField], p: DriftParams, nm: NoiseModel,
                         names=None, supplementary=True) -> dict[str, np.ndarray]:
    """Residuals of each named inequality over all fields (concatenated)."""
    table = dict(INEQUALITIES)
    if supplementary:
        table.update(SUPPLEMENTARY)
    names = list(table) if names is None else list(names)
    out: dict[str, list] = {k: [] for k in names}
    for u in fields:
        f = field_functionals(u, p, nm)
        for k in names:
            out[k].append(np.atleast_1d(table[k][0](f, p, nm)))
    return {k: np.concatenate(v) for k, v in out.items()}


def lipschitz_ratios(u: SpectralField, v: SpectralField, p: DriftParams, nm: NoiseModel) -> dict[str, np.ndarray]:
    """|Op(u) - Op(v)|_H / |u - v|_H for B_n, g_n, f_n and G_n."""
    r = RHS(u.grid, u.n, p, nm)
    a, b = r.compress(u.coeffs), r.compress(v.coeffs)
    ta, tb = r.evaluate(a), r.evaluate(b)
    d = np.sqrt(r.norm2(a - b))
    return {
        "B": np.sqrt(r.norm2(ta.B - tb.B)) / d,
        "g": np.sqrt(r.norm2(ta.g - tb.g)) / d,
        "f": np.sqrt(r.norm2(ta.f - tb.f)) / d,
        "G": np.sqrt(r.hs_norm2(ta.G - tb.G)) / d,
    }


# trajectories ----------------------------------------------------------------

@dataclass
class BudgetReport:
    residuals: np.ndarray
    max: float
    rms: float


def energy_budget(record: DiagnosticsRecord) -> BudgetReport:
    """Ito-expansion residuals of |u|_H^2 over each step."""
    res = record.energy_residual[1:]
    if res.size == 0:
        return BudgetReport(res, 0.0, 0.0)
    return BudgetReport(res, float(np.abs(res).max()), float(np.sqrt(np.mean(res**2))))


def observed_order(dts, errors) -> float:
    """Least-squares slope of log(error) against log(dt)."""
    return float(np.polyfit(np.log(dts), np.log(errors), 1)[0])


@dataclass
class Estimate:
    mean: float
    se: float

    @classmethod
    def of(cls, samples) -> "Estimate":
        x = np.asarray(samples, float)
        se = x.std(ddof=1) / np.sqrt(x.size) if x.size > 1 else 0.0
        return cls(float(x.mean()), float(se))

    def __iter__(self):
        return iter((self.mean, self.se))


def _stop_mask(record: DiagnosticsRecord, R: float | None, closed: bool) -> np.ndarray:
    t = record.t[:, None]
    if R is None:
        return np.ones_like(record.H2, bool)
    tau = record.hitting_time(R)[None, :]
    return t <= tau if closed else t < tau


def _path_sup(x, mask):
    return np.where(mask, x, -np.inf).max(axis=0)


def _path_int(x, mask, dt):
    # left Riemann sum over [0, T ^ tau)
    return (np.where(mask, x, 0.0)[:-1]).sum(axis=0) * dt


@dataclass
class MonitorReport:
    """Monte-Carlo estimates, raw and stopped at the first V-norm hit of R."""

    R: float | None
    sup_V2: Estimate
    int_DA2: Estimate
    int_L4: Estimate
    int_A2: Estimate
    stopped_sup_V2: Estimate
    stopped_int_DA2: Estimate
    stopped_int_L4: Estimate
    per_path: dict

    def as_dict(self) -> dict[str, Estimate]:
        return {k: v for k, v in vars(self).items() if isinstance(v, Estimate)}


def apriori_monitors(ens: EnsembleStats | DiagnosticsRecord, R: float | None = None) -> MonitorReport:
    """E sup ||u||_V^2, E int |u|^2_D(A), E int ||u||^4_L4 (raw and stopped)."""
    rec = ens.record if isinstance(ens, EnsembleStats) else ens
    dt = rec.dt
    full = np.ones_like(rec.H2, bool)
    closed, open_ = _stop_mask(rec, R, True), _stop_mask(rec, R, False)
    A2 = rec.DA2 - rec.H2
    paths = {
        "sup_V2": _path_sup(rec.V2, full),
        "int_DA2": _path_int(rec.DA2, full, dt),
        "int_L4": _path_int(rec.L4_4, full, dt),
        "int_A2": _path_int(A2, full, dt),
        "stopped_sup_V2": _path_sup(rec.V2, closed),
        "stopped_int_DA2": _path_int(rec.DA2, open_, dt),
        "stopped_int_L4": _path_int(rec.L4_4, open_, dt),
    }
    return MonitorReport(R=R, per_path=paths, **{k: Estimate.of(v) for k, v in paths.items()})


@dataclass
class MomentReport:
    p: float
    sup: Estimate
    integral: Estimate


def higher_moment_monitor(ens: EnsembleStats | DiagnosticsRecord, p: float) -> MomentReport:
    """E sup ||u||_V^{2p} and E int ||u||_V^{2(p-1)} |Au|^2 for p in [1, 3]."""
    if not 1 <= p <= 3:
        raise ValueError(f"moment order p must lie in [1, 3], got {p}")
    rec = ens.record if isinstance(ens, EnsembleStats) else ens
    full = np.ones_like(rec.H2, bool)
    A2 = rec.DA2 - rec.H2
    sup = _path_sup(rec.V2**p, full)
    integral = _path_int(rec.V2 ** (p - 1) * A2, full, rec.dt)
    return MomentReport(p, Estimate.of(sup), Estimate.of(integral))


def common_bound(estimates: Sequence[Estimate], k: float = 3.0) -> tuple[bool, float, float]:
    """True if the k-SE intervals of all estimates share a point.

    Intervals are widened by 1e-12 relative so that exactly reproducible
    estimates (SE = 0) agreeing to rounding still count as common.
    """
    eps = 1e-12 * max(abs(e.mean) for e in estimates)
    lo = max(e.mean - k * e.se for e in estimates)
    hi = min(e.mean + k * e.se for e in estimates)
    return lo <= hi + eps, lo, hi


def significant_growth(estimates: Sequence[Estimate], k: float = 3.0) -> bool:
    """Strictly increasing along the ladder and last minus first beyond k combined SE."""
    means = [e.mean for e in estimates]
    rising = all(b > a for a, b in zip(means, means[1:]))
    first, last = estimates[0], estimates[-1]
    eps = 1e-12 * max(abs(m) for m in means)
    return rising and (last.mean - first.mean) > k * np.hypot(first.se, last.se) + eps


# verification report -------------------------------------------------------------

@dataclass
class VerifyLine:
    name: str
    reference: str
    observed: float
    bound: float
    passed: bool

    def format(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{self.name}\t{self.reference}\t{self.observed:.6g}\t{self.bound:.6g}\t{verdict}"


def inequality_lines(res: dict[str, np.ndarray]) -> list[VerifyLine]:
    table = dict(INEQUALITIES)
    table.update(SUPPLEMENTARY)
    out = []
    for k, r in res.items():
        worst = float(np.max(r))
        out.append(VerifyLine(k, table[k][1], worst, 0.0, worst <= 0))
    return out


# refinement studies --------------------------------------------------------------

@dataclass
class RefinementStudy:
    dts: np.ndarray
    errors: np.ndarray
    order: float


def strong_convergence(cfg, factors=(16, 8, 4, 2), batch: int = 64) -> RefinementStudy:
    """Strong error at T against a reference at cfg.dt with shared increments.

    ``factors`` are the coarse-to-reference step ratios; the error is
    sqrt(E |u_dt(T) - u_ref(T)|_H^2).
    """
    from .sde_integrator import run_coupled

    paths = np.arange(cfg.n_paths)
    rhs = RHS(cfg.grid, cfg.n, cfg.params, cfg.noise)
    sq = np.zeros(len(factors))
    for start in range(0, len(paths), batch):
        chunk = paths[start : start + batch]
        ref = rhs.compress(run_coupled(cfg, 1, chunk).final)
        for i, m in enumerate(factors):
            coarse = rhs.compress(run_coupled(cfg, m, chunk).final)
            sq[i] += rhs.norm2(coarse - ref).sum()
    errors = np.sqrt(sq / len(paths))
    dts = cfg.dt * np.asarray(factors, float)
    return RefinementStudy(dts, errors, observed_order(dts, errors))


def budget_refinement(cfg, factors=(8, 4, 2, 1), batch: int = 64) -> RefinementStudy:
    """RMS energy-budget residual at dt = cfg.dt * factor, shared Brownian paths."""
    from .sde_integrator import run_coupled

    paths = np.arange(cfg.n_paths)
    rms = []
    for m in factors:
        acc, count = 0.0, 0
        for start in range(0, len(paths), batch):
            res = run_coupled(cfg, m, paths[start : start + batch], record=True).record.energy_residual[1:]
            acc += float(np.sum(res**2))
            count += res.size
        rms.append(np.sqrt(acc / count))
    dts = cfg.dt * np.asarray(factors, float)
    rms = np.asarray(rms)
    return RefinementStudy(dts, rms, observed_order(dts, rms))
