"""Ito time integration of the truncated system with reproducible noise.

Each path draws its Wiener increments from its own counter-based stream
(Philox4x64-10 keyed by ``(seed, path_index)``), so a path's trajectory does
not depend on which other paths share its batch or on execution order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterator, Literal

import numpy as np

from .operators import RHS, DriftParams, NoiseModel, Terms
from .spectral_core import Grid, SpectralField

log = logging.getLogger(__name__)

RNG_ALGORITHM = "Philox4x64-10 (numpy.random.Philox), key = (seed, path_index)"
Scheme = Literal["semi-implicit", "explicit"]


class BlowUpError(FloatingPointError):
    """A state became non-finite during integration."""

    def __init__(self, step: int, t: float, paths):
        self.step, self.t, self.paths = step, t, list(paths)
        super().__init__(f"non-finite state at step {step} (t = {t:.6g}) on paths {self.paths}")


def path_stream(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based generator for one path; a pure function of (seed, path_index)."""
    if not 0 <= seed < 2**64 or not 0 <= path_index < 2**64:
        raise ValueError("seed and path index must fit in 64 unsigned bits")
    key = np.array([seed, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def wiener_increments(stream: np.random.Generator, J: int, dt: float, steps: int | None = None):
    """J independent N(0, dt) increments (or a (steps, J) block of them)."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    shape = (J,) if steps is None else (steps, J)
    return stream.standard_normal(shape) * np.sqrt(dt)


class BrownianSource:
    """Blocks of increments for a set of paths, optionally coarsened.

    Increments are drawn at ``dt_fine`` and summed in groups of ``substeps``,
    so runs at different step sizes can share one Brownian path.
    """

    def __init__(self, seed: int, paths, J: int, dt_fine: float, substeps: int = 1):
        self.streams = [path_stream(seed, int(p)) for p in paths]
        self.J, self.dt_fine, self.substeps = J, dt_fine, substeps

    def blocks(self, n_steps: int, block: int = 256) -> Iterator[np.ndarray]:
        """Yield arrays of shape (b, P, J) until n_steps coarse increments are produced."""
        done = 0
        while done < n_steps:
            b = min(block, n_steps - done)
            fine = np.stack(
                [wiener_increments(s, self.J, self.dt_fine, b * self.substeps) for s in self.streams],
                axis=1,
            )
            yield fine.reshape(b, self.substeps, len(self.streams), self.J).sum(axis=1)
            done += b


@dataclass(frozen=True)
class SimConfig:
    grid: Grid
    n: float
    dt: float
    T: float
    params: DriftParams
    noise: NoiseModel
    u0: SpectralField
    seed: int = 12345
    n_paths: int = 1
    scheme: Scheme = "semi-implicit"
    R_stop: float | None = None
    snapshot_every: int = 0
    batch_size: int = 64
    debug: bool = False
    full_diagnostics: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"time.dt must be positive, got {self.dt}")
        if self.T < 0:
            raise ValueError(f"time.T must be >= 0, got {self.T}")
        if self.n < 0:
            raise ValueError(f"model.n must be >= 0, got {self.n}")
        if self.n_paths < 1:
            raise ValueError("run.paths must be >= 1")
        if self.scheme not in ("semi-implicit", "explicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.R_stop is not None and not self.R_stop > 0:
            raise ValueError("run.R_stop must be positive when set")
        if self.scheme == "explicit":
            limit = 2.0 / (self.params.alpha + self.params.nu * self.n_eff**2)
            if self.dt > limit:
                raise ValueError(f"explicit scheme unstable: dt = {self.dt} > 2/(alpha + nu n^2) = {limit:.4g}")
        if self.u0.batch_shape:
            raise ValueError("initial field must not carry batch axes")
        if not np.isfinite(self.u0.coeffs).all():
            raise ValueError("initial field has non-finite coefficients")

    @property
    def n_eff(self) -> float:
        return self.grid.effective_cutoff(self.n)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)


RECORD_FIELDS = (
    "H2", "grad2", "V2", "DA2", "L4_4", "ugu2", "gu2",
    "u_dot_drift", "G_HS2", "F", "D", "energy_residual",
)


@dataclass
class DiagnosticsRecord:
    """Per-step functionals, each of shape (n_times, n_paths).

    ``u_dot_G`` and ``dW`` have an extra trailing J axis.  ``dW[k]`` is the
    increment of the step t_k -> t_{k+1}; ``energy_residual[k]`` belongs to
    the step ending at t_k (row 0 is zero).
    """

    t: np.ndarray
    H2: np.ndarray
    grad2: np.ndarray
    V2: np.ndarray
    DA2: np.ndarray
    L4_4: np.ndarray
    ugu2: np.ndarray
    gu2: np.ndarray
    u_dot_drift: np.ndarray
    G_HS2: np.ndarray
    F: np.ndarray
    D: np.ndarray
    energy_residual: np.ndarray
    u_dot_G: np.ndarray
    dW: np.ndarray
    dt: float = 0.0

    @property
    def n_paths(self) -> int:
        return self.H2.shape[1]

    def path(self, p: int) -> "DiagnosticsRecord":
        kw = {name: getattr(self, name)[:, p : p + 1] for name in RECORD_FIELDS + ("u_dot_G", "dW")}
        return DiagnosticsRecord(t=self.t, dt=self.dt, **kw)

    def hitting_time(self, R: float) -> np.ndarray:
        """First recorded time with ||u||_V >= R, per path (inf if never)."""
        hit = np.sqrt(self.V2) >= R
        first = np.argmax(hit, axis=0)
        return np.where(hit.any(axis=0), self.t[first], np.inf)

    @staticmethod
    def concat_paths(records: list["DiagnosticsRecord"]) -> "DiagnosticsRecord":
        kw = {
            name: np.concatenate([getattr(r, name) for r in records], axis=1)
            for name in RECORD_FIELDS + ("u_dot_G", "dW")
        }
        return DiagnosticsRecord(t=records[0].t, dt=records[0].dt, **kw)


def state_functionals(rhs: RHS, v: np.ndarray, terms: Terms) -> dict[str, np.ndarray]:
    """All per-state diagnostics from one right-hand-side evaluation."""
    g = rhs.grid
    H2 = rhs.norm2(v)
    grad2 = rhs.norm2(v, rhs.k2)
    m2 = np.sum(terms.values**2, axis=-4)
    udd = rhs.dot(v, rhs.drift(v, terms))
    G2 = rhs.hs_norm2(terms.G)
    if terms.grad is None:
        ugu2 = np.full(H2.shape, np.nan)
    else:
        ugu2 = g.integrate(m2 * np.sum(terms.grad**2, axis=(-5, -4)))
    udG = rhs.dot(v[None], terms.G) if len(terms.G) else np.zeros((0,) + H2.shape)
    return {
        "H2": H2,
        "grad2": grad2,
        "V2": H2 + grad2,
        "DA2": H2 + rhs.norm2(v, rhs.k2**2),
        "L4_4": g.integrate(m2**2),
        "ugu2": ugu2,
        "gu2": g.integrate(terms.gmag * m2),
        "u_dot_drift": udd,
        "G_HS2": G2,
        "F": G2 + 2 * udd,
        "D": udd + 0.5 * G2,
        "u_dot_G": np.moveaxis(udG, 0, -1),
    }


def check_state(rhs: RHS, v: np.ndarray, tol: float = 1e-12) -> None:
    """Raise if a compressed state is not divergence-free."""
    div = np.abs(np.einsum("ar,...ar->...r", rhs.k, v)).max(initial=0.0)
    scale = np.abs(v).max(initial=0.0) * max(rhs.n, rhs.grid.k0)
    if div > tol * max(scale, 1e-300):
        raise AssertionError(f"state is not divergence-free (|div| = {div:.3g})")


def step(v: np.ndarray, rhs: RHS, dt: float, dW: np.ndarray, scheme: Scheme = "semi-implicit",
         terms: Terms | None = None) -> np.ndarray:
    """One Euler-Maruyama step for a batch of compressed states (..., 3, R).

    ``dW`` has shape (..., J) matching the batch axes.  The semi-implicit
    variant treats only the linear part implicitly.
    """
    terms = terms if terms is not None else rhs.evaluate(v)
    explicit = v + dt * terms.nonlinear
    if terms.G.shape[0]:
        explicit = explicit + np.einsum("j...ar,...j->...ar", terms.G, dW)
    if scheme == "semi-implicit":
        new = explicit / (1.0 + dt * rhs.linear_symbol)
    else:
        new = explicit - dt * rhs.linear_symbol * v
    return rhs.project(new)


@dataclass
class PathBatchResult:
    record: DiagnosticsRecord
    final: np.ndarray
    snapshots: list[tuple[float, np.ndarray]] = field(default_factory=list)


def integrate_batch(cfg: SimConfig, paths, source: BrownianSource | None = None,
                    dt: float | None = None, record: bool = True) -> PathBatchResult:
    """Integrate the listed paths together from cfg.u0 over [0, T]."""
    # overflow on the way to a blow-up is reported through BlowUpError instead
    with np.errstate(over="ignore", invalid="ignore"):
        return _integrate(cfg, paths, source, dt, record)


def _integrate(cfg, paths, source, dt, record) -> PathBatchResult:
    dt = cfg.dt if dt is None else dt
    n_steps = int(round(cfg.T / dt))
    P = len(paths)
    rhs = RHS(cfg.grid, cfg.n, cfg.params, cfg.noise)
    J = cfg.noise.J
    if source is None:
        source = BrownianSource(cfg.seed, paths, J, dt)
    v0 = rhs.project_full(cfg.u0.coeffs)
    c = np.broadcast_to(v0, (P,) + v0.shape).copy()

    n_rec = n_steps + 1
    rec = {name: np.zeros((n_rec, P)) for name in RECORD_FIELDS} if record else None
    if record:
        rec["u_dot_G"] = np.zeros((n_rec, P, J))
        rec["dW"] = np.zeros((n_rec, P, J))
    snaps: list[tuple[float, np.ndarray]] = [(0.0, rhs.expand(c))]
    every = cfg.snapshot_every

    def store(k, vals):
        for name, v in vals.items():
            rec[name][k] = v

    blocks = source.blocks(n_steps)
    prev = None
    block, bi = None, 0
    for k in range(n_steps + 1):
        terms = rhs.evaluate(c, need_grad=cfg.full_diagnostics)
        if record:
            vals = state_functionals(rhs, c, terms)
            store(k, vals)
            if k > 0:
                rec["energy_residual"][k] = _residual(prev, vals["H2"], dt)
        if k == n_steps:
            break
        if block is None or bi == len(block):
            block, bi = next(blocks), 0
        dW = block[bi]
        bi += 1
        c = step(c, rhs, dt, dW, cfg.scheme, terms)
        if not np.isfinite(c).all():
            bad = np.where(~np.isfinite(c).reshape(P, -1).all(axis=1))[0]
            raise BlowUpError(k + 1, (k + 1) * dt, [paths[i] for i in bad])
        if cfg.debug or (k + 1) % 100 == 0:
            check_state(rhs, c)
        if record:
            rec["dW"][k] = dW
            prev = (vals["H2"], vals["u_dot_drift"], vals["G_HS2"], vals["u_dot_G"], dW)
        if every and (k + 1) % every == 0 and k + 1 < n_steps:
            snaps.append(((k + 1) * dt, rhs.expand(c)))
    if n_steps:
        snaps.append((n_steps * dt, rhs.expand(c)))
    t = np.arange(n_rec) * dt
    diag = DiagnosticsRecord(t=t, dt=dt, **rec) if record else None
    return PathBatchResult(diag, rhs.expand(c), snaps)


def _residual(prev, H2_next, dt):
    H2, udd, G2, udG, dW = prev
    return H2_next - H2 - 2 * dt * udd - G2 * dt - 2 * np.sum(udG * dW, axis=-1)


@dataclass
class Trajectory:
    times: np.ndarray
    snapshots: list[SpectralField]
    snapshot_times: np.ndarray
    record: DiagnosticsRecord
    hitting_time: float = np.inf


def simulate_path(cfg: SimConfig, path_index: int = 0) -> Trajectory:
    res = integrate_batch(cfg, [path_index])
    snaps = [SpectralField(cfg.grid, c[0], cfg.n_eff) for _, c in res.snapshots]
    hit = float(res.record.hitting_time(cfg.R_stop)[0]) if cfg.R_stop else np.inf
    return Trajectory(res.record.t, snaps, np.array([t for t, _ in res.snapshots]), res.record, hit)


@dataclass
class EnsembleStats:
    """Per-path diagnostics plus Monte-Carlo mean and standard error per time."""

    record: DiagnosticsRecord
    path_indices: np.ndarray
    final: SpectralField
    hitting_times: np.ndarray
    snapshots: list[tuple[float, SpectralField]] = field(default_factory=list)

    @property
    def n_paths(self) -> int:
        return len(self.path_indices)

    def series(self, name: str) -> np.ndarray:
        rec = self.record
        if name in ("H", "V", "DA"):
            return np.sqrt(getattr(rec, {"H": "H2", "V": "V2", "DA": "DA2"}[name]))
        if name == "L4":
            return rec.L4_4**0.25
        return getattr(rec, name)

    def mean(self, name: str) -> np.ndarray:
        return self.series(name).mean(axis=1)

    def se(self, name: str) -> np.ndarray:
        x = self.series(name)
        if x.shape[1] < 2:
            return np.zeros(x.shape[0])
        return x.std(axis=1, ddof=1) / np.sqrt(x.shape[1])


def simulate_ensemble(cfg: SimConfig, paths=None) -> EnsembleStats:
    """Run cfg.n_paths paths (or the given path indices) in batches."""
    paths = np.arange(cfg.n_paths) if paths is None else np.asarray(paths)
    results = []
    for start in range(0, len(paths), cfg.batch_size):
        chunk = [int(p) for p in paths[start : start + cfg.batch_size]]
        log.debug("integrating paths %s..%s", chunk[0], chunk[-1])
        results.append(integrate_batch(cfg, chunk))
    record = DiagnosticsRecord.concat_paths([r.record for r in results])
    final = SpectralField(cfg.grid, np.concatenate([r.final for r in results]), cfg.n_eff)
    snaps = [
        (t, SpectralField(cfg.grid, np.concatenate([r.snapshots[i][1] for r in results]), cfg.n_eff))
        for i, (t, _) in enumerate(results[0].snapshots)
    ]
    hit = record.hitting_time(cfg.R_stop) if cfg.R_stop else np.full(len(paths), np.inf)
    return EnsembleStats(record, paths, final, hit, snaps)


def run_coupled(cfg: SimConfig, substeps: int, paths=None, record: bool = False) -> PathBatchResult:
    """Integrate with dt = cfg.dt * substeps, driven by cfg.dt-level increments summed in groups.

    Runs with different ``substeps`` but the same cfg share one Brownian path per path index.
    """
    paths = list(range(cfg.n_paths)) if paths is None else [int(p) for p in paths]
    source = BrownianSource(cfg.seed, paths, cfg.noise.J, cfg.dt, substeps)
    return integrate_batch(cfg, paths, source=source, dt=cfg.dt * substeps, record=record)
