"""Damped system, time-averaged empirical measures and the tail bound."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import Estimate, delta
from .sde_integrator import DiagnosticsRecord, EnsembleStats, SimConfig, simulate_ensemble
from .spectral_core import SpectralField, norm, shell_spectrum

OBSERVABLES = {
    "V2": "||u||_V^2",
    "H2": "|u|_H^2",
    "L4_4": "||u||_L4^4",
    "one": "1",
}


@dataclass(frozen=True)
class DampedConfig:
    """A SimConfig for the damped system: alpha > 0 and forcing fixed in u."""

    sim: SimConfig

    def __post_init__(self):
        p = self.sim.params
        if not p.alpha > 0:
            raise ValueError(f"damped system needs model.alpha > 0, got {p.alpha}")
        if p.forcing is not None and p.forcing.kind != "fixed":
            raise ValueError("damped system needs forcing.kind = fixed")
        if not self.delta > 0:
            raise ValueError(f"dissipativity fails: 2 nu - sup|sigma|^2 = {2 * self.delta} <= 0")

    @property
    def delta(self) -> float:
        return delta(self.sim.params.nu, self.sim.noise)

    @property
    def gamma(self) -> float:
        return min(self.sim.params.alpha / 2, self.delta)

    @property
    def f_norm2(self) -> float:
        f = self.sim.params.forcing
        return float(norm(f.f0, "H") ** 2) if f is not None else 0.0

    @property
    def u0_norm2(self) -> float:
        return float(norm(self.sim.u0, "H") ** 2)

    def default_horizon(self) -> float:
        return 20.0 / self.gamma

    def averaged_bound(self, T: float | None = None) -> float:
        """|u0|^2 / (2 gamma T) + |f|^2 / (4 gamma^2)."""
        T = self.sim.T if T is None else T
        return self.u0_norm2 / (2 * self.gamma * T) + self.f_norm2 / (4 * self.gamma**2)


def run_damped(cfg: DampedConfig, T: float | None = None) -> EnsembleStats:
    """Integrate the damped system; ``T=None`` keeps cfg's horizon, ``T="default"`` uses 20/gamma."""
    sim = cfg.sim
    if T == "default":
        sim = sim.with_(T=cfg.default_horizon())
    elif T is not None:
        sim = sim.with_(T=T)
    return simulate_ensemble(sim)


@dataclass
class EmpiricalMeasure:
    name: str
    burn_in: float
    times: np.ndarray
    samples: np.ndarray  # (n_times, n_paths)
    average: float
    se: float
    path_averages: np.ndarray
    edges: np.ndarray
    counts: np.ndarray
    bin_sums: np.ndarray
    running: np.ndarray
    window_averages: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def histogram_mean(self) -> float:
        return float(self.bin_sums.sum() / self.counts.sum())

    def density(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def _series(record: DiagnosticsRecord, name: str) -> np.ndarray:
    if name == "one":
        return np.ones_like(record.H2)
    if name not in OBSERVABLES:
        raise ValueError(f"unknown observable {name!r}; choose from {sorted(OBSERVABLES)}")
    return getattr(record, name)


def histogram(samples: np.ndarray, edges=None):
    """Freedman-Diaconis histogram; also returns per-bin sums of the samples."""
    x = np.ravel(samples)
    if edges is None:
        edges = np.histogram_bin_edges(x, bins="fd") if np.ptp(x) > 0 else np.array([x[0] - 0.5, x[0] + 0.5])
    counts, _ = np.histogram(x, bins=edges)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(edges) - 2)
    sums = np.bincount(idx, weights=x, minlength=len(edges) - 1)
    return edges, counts, sums


def time_average(ens: EnsembleStats | DiagnosticsRecord, observable: str, burn_in: float = 0.0,
                 windows: int = 4, edges=None) -> EmpiricalMeasure:
    """(1/(T - burn_in)) sum_k phi(u(t_k)) dt over burn_in <= t_k < T, per path, then pooled."""
    rec = ens.record if isinstance(ens, EnsembleStats) else ens
    T = rec.t[-1]
    if not 0 <= burn_in < T:
        raise ValueError(f"burn-in must lie in [0, T) = [0, {T}), got {burn_in}")
    keep = (rec.t >= burn_in - 1e-12) & (np.arange(rec.t.size) < rec.t.size - 1)
    x = _series(rec, observable)[keep]
    per_path = x.mean(axis=0)
    est = Estimate.of(per_path)
    e, counts, sums = histogram(x, edges)
    running = np.cumsum(x.mean(axis=1)) / np.arange(1, x.shape[0] + 1)
    w = np.array([chunk.mean() for chunk in np.array_split(x, windows) if chunk.size])
    return EmpiricalMeasure(observable, burn_in, rec.t[keep], x, est.mean, est.se, per_path,
                            e, counts, sums, running, w)


def spectrum_average(snapshots: list[tuple[float, SpectralField]], burn_in: float = 0.0):
    """Time- and path-averaged shell spectrum over snapshots taken at t >= burn_in."""
    kept = [u for t, u in snapshots if t >= burn_in - 1e-12]
    if not kept:
        raise ValueError("no snapshots after the burn-in time")
    spectra = []
    for u in kept:
        kappa, E = shell_spectrum(u)
        spectra.append(E.reshape(-1, E.shape[-1]))
    allE = np.concatenate(spectra)
    se = allE.std(axis=0, ddof=1) / np.sqrt(len(allE)) if len(allE) > 1 else np.zeros(allE.shape[1])
    return kappa, allE.mean(axis=0), se


@dataclass
class TailReport:
    R: float
    estimate: Estimate
    chebyshev: float
    passed: bool


def exceedance_fraction(record: DiagnosticsRecord, R: float) -> np.ndarray:
    """(1/T) int_0^T 1{||u(t)||_V > R} dt per path (left Riemann sum)."""
    over = np.sqrt(record.V2[:-1]) > R
    return over.mean(axis=0)


def tail_bound_check(ens: EnsembleStats, R: float, cfg: DampedConfig) -> TailReport:
    """MC exceedance fraction against (1/R^2)[|u0|^2/(2 gamma T) + |f|^2/(4 gamma^2)]."""
    if not R > 0:
        raise ValueError("R must be positive")
    est = Estimate.of(exceedance_fraction(ens.record, R))
    cheb = cfg.averaged_bound(ens.record.t[-1]) / R**2
    return TailReport(R, est, cheb, est.mean <= cheb + 3 * est.se)


def radius_for_bound(cfg: DampedConfig, level: float, T: float | None = None) -> float:
    """R making the Chebyshev tail bound equal to ``level``."""
    return float(np.sqrt(cfg.averaged_bound(T) / level))


@dataclass
class AveragedNormReport:
    estimate: Estimate
    bound: float
    allowance: float
    passed: bool


def averaged_norm_check(ens: EnsembleStats, cfg: DampedConfig) -> AveragedNormReport:
    """(1/T) int_0^T E||u||_V^2 against the averaged bound + 3 SE + dt ||u0||_V^2 / T.

    The allowance bounds the left-Riemann overshoot of a nonincreasing integrand.
    """
    rec = ens.record
    T = rec.t[-1]
    est = Estimate.of(rec.V2[:-1].mean(axis=0))
    bound = cfg.averaged_bound(T)
    allowance = rec.dt * float(norm(cfg.sim.u0, "V") ** 2) / T
    return AveragedNormReport(est, bound, allowance, est.mean <= bound + 3 * est.se + allowance)


def two_start_comparison(cfg: DampedConfig, u0a: SpectralField, u0b: SpectralField,
                         observables=("V2", "H2", "L4_4"), burn_in: float = 0.0,
                         seeds: tuple[int, int] | None = None) -> dict[str, float]:
    """L1 distance between normalized histograms of two runs on common bins (reported only)."""
    sa, sb = seeds if seeds is not None else (cfg.sim.seed, cfg.sim.seed)
    ra = simulate_ensemble(replace(cfg.sim, u0=u0a, seed=sa))
    rb = simulate_ensemble(replace(cfg.sim, u0=u0b, seed=sb))
    out = {}
    for obs in observables:
        a = time_average(ra, obs, burn_in)
        b = time_average(rb, obs, burn_in)
        edges, _, _ = histogram(np.concatenate([a.samples.ravel(), b.samples.ravel()]))
        pa = histogram(a.samples, edges)[1]
        pb = histogram(b.samples, edges)[1]
        out[obs] = float(np.abs(pa / pa.sum() - pb / pb.sum()).sum())
    return out
