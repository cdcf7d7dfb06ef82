"""Command-line entry point: simulate, verify, invariant, emit-plots.

Exit codes: 0 success, 1 usage or configuration error, 2 verification
failure, 3 numerical blow-up.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from .config import Config, ConfigError, build, format_config, load_config, parse_text
from .invariant_measure import (
    OBSERVABLES,
    DampedConfig,
    averaged_norm_check,
    histogram,
    radius_for_bound,
    run_damped,
    spectrum_average,
    tail_bound_check,
    time_average,
)
from .sde_integrator import RNG_ALGORITHM, BlowUpError, EnsembleStats, SimConfig, simulate_ensemble
from .spectral_core import read_snapshot, shell_spectrum, write_snapshot

log = logging.getLogger("tamed_nse")

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_BLOWUP = 0, 1, 2, 3

DIAG_COLUMNS = [
    ("t", "time"), ("path", "index"), ("H", "nondim"), ("V", "nondim"), ("DA", "nondim"),
    ("L4", "nondim"), ("F", "nondim"), ("energy_residual", "nondim"), ("hit_R", "flag"),
]
SERIES = ("H", "V", "DA", "L4", "F", "energy_residual")


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


# csv helpers -------------------------------------------------------------------

def header(columns) -> str:
    return ",".join(f"{name}[{unit}]" for name, unit in columns)


def write_csv(path: Path, columns, rows) -> None:
    """Rows as %.17g so that reruns compare bitwise."""
    rows = np.asarray(rows, float).reshape(-1, len(columns))
    with open(path, "w") as fh:
        fh.write(header(columns) + "\n")
        for r in rows:
            fh.write(",".join(_num(x) for x in r) + "\n")


def _num(x: float) -> str:
    if np.isnan(x):
        return "nan"
    if float(x).is_integer() and abs(x) < 2**53:
        return str(int(x))
    return f"{x:.17g}"


def read_csv(path: Path) -> dict[str, np.ndarray]:
    """Columns by bare name (units stripped)."""
    with open(path) as fh:
        first = fh.readline().strip()
        if not first:
            raise ValueError(f"{path}: missing header row")
        names = [c.split("[", 1)[0] for c in first.split(",")]
        body = fh.read()
    data = np.loadtxt(body.splitlines(), delimiter=",", ndmin=2) if body.strip() else np.zeros((0, len(names)))
    return {n: data[:, i] for i, n in enumerate(names)}


# run manifest ----------------------------------------------------------------------

@dataclass
class RunManifest:
    config: str
    seed: int
    paths: int
    version: str
    rng_rule: str
    threads: dict
    started: str
    finished: str = ""
    command: str = ""
    platform: str = ""

    @classmethod
    def new(cls, cfg: Config, command: str) -> "RunManifest":
        return cls(
            config=format_config(cfg), seed=cfg["run.seed"], paths=cfg["run.paths"], version=version(),
            rng_rule=f"{RNG_ALGORITHM}; path p uses key (run.seed, p)",
            threads=thread_config(), started=_now(), command=command,
            platform=f"python {platform.python_version()}, numpy {np.__version__}, scipy {scipy.__version__}",
        )

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            return cls(**json.loads(Path(path).read_text()))
        except (OSError, ValueError, TypeError) as e:
            raise ConfigError(f"cannot read manifest {path}: {e}") from None

    def resolved(self) -> Config:
        return parse_text(self.config, "<manifest>")


def thread_config() -> dict:
    keys = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
    return {"fft_workers": 1, **{k: os.environ.get(k, "") for k in keys}}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# simulate ---------------------------------------------------------------------------

def diagnostics_rows(ens: EnsembleStats, R: float | None) -> np.ndarray:
    rec = ens.record
    nt, P = rec.H2.shape
    t = np.broadcast_to(rec.t[:, None], (nt, P))
    path = np.broadcast_to(np.asarray(ens.path_indices)[None, :], (nt, P))
    hit = (t >= ens.hitting_times[None, :]) if R else np.zeros((nt, P), bool)
    cols = [t, path, np.sqrt(rec.H2), np.sqrt(rec.V2), np.sqrt(rec.DA2), rec.L4_4**0.25,
            rec.F, rec.energy_residual, hit]
    # path-major: all steps of path 0, then path 1, ...
    return np.stack([np.asarray(c, float).T.ravel() for c in cols], axis=1)


def write_run(out: Path, ens: EnsembleStats, sim: SimConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "diagnostics.csv", DIAG_COLUMNS, diagnostics_rows(ens, sim.R_stop))
    sdir = out / "snapshots"
    sdir.mkdir(exist_ok=True)
    index = []
    for t, u in ens.snapshots:
        step = int(round(t / sim.dt))
        for i, p in enumerate(ens.path_indices):
            write_snapshot(sdir / f"p{int(p):05d}_s{step:07d}.tnse", u[i])
            index.append((int(p), step, t))
    write_csv(sdir / "index.csv", [("path", "index"), ("step", "index"), ("t", "time")], index)


def _sim_config(cfg: Config) -> SimConfig:
    built = build(cfg)
    return built.sim if isinstance(built, DampedConfig) else built


def cmd_simulate(args) -> int:
    if args.manifest:
        man = RunManifest.read(args.manifest)
        cfg = man.resolved()
    else:
        if not args.config:
            raise ConfigError("simulate needs --config FILE or --manifest FILE")
        cfg = load_config(args.config)
    if args.paths is not None:
        cfg = cfg.with_(run__paths=args.paths)
    if args.seed is not None:
        cfg = cfg.with_(run__seed=args.seed)
    sim = _sim_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest.new(cfg, " ".join(["tamed-nse"] + sys.argv[1:]))
    log.info("simulate: %d paths, %d steps, M=%d, n=%g", sim.n_paths, sim.n_steps, sim.grid.M, sim.n)
    try:
        ens = simulate_ensemble(sim)
    except BlowUpError as e:
        man.finished = _now()
        man.write(out / "run_manifest.json")
        print(f"blow-up: {e}", file=sys.stderr)
        return EXIT_BLOWUP
    write_run(out, ens, sim)
    man.finished = _now()
    man.write(out / "run_manifest.json")
    print(f"wrote {out / 'diagnostics.csv'} ({ens.n_paths} paths x {sim.n_steps + 1} rows)")
    return EXIT_OK


# verify -------------------------------------------------------------------------------

def cmd_verify(args) -> int:
    from . import suites

    sim = _sim_config(load_config(args.config)) if args.config else None
    studies: dict = {}
    lines = suites.run_suite(args.suite, sim, fields=args.fields, studies=studies)
    report = "name\treference\tobserved\tbound\tverdict\n" + "".join(line.format() + "\n" for line in lines)
    print(report, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"verify_{args.suite}.tsv").write_text(report)
        for name, st in studies.items():
            write_csv(out / f"refinement_{name}.csv", [("dt", "time"), ("error", "nondim")],
                      np.column_stack([st.dts, st.errors]))
    return EXIT_OK if all(line.passed for line in lines) else EXIT_VERIFY


# invariant ----------------------------------------------------------------------------

def cmd_invariant(args) -> int:
    cfg = load_config(args.config)
    if args.paths is not None:
        cfg = cfg.with_(run__paths=args.paths)
    if args.seed is not None:
        cfg = cfg.with_(run__seed=args.seed)
    built = build(cfg)
    if not isinstance(built, DampedConfig):
        raise ConfigError("invariant needs the damped system: model.alpha > 0 and forcing.kind = fixed or none")
    observables = args.observables.split(",") if args.observables else list(cfg["invariant.observables"])
    observables = [o.strip() for o in observables if o.strip()]
    unknown = [o for o in observables if o not in OBSERVABLES]
    if unknown:
        raise ConfigError(f"invariant.observables: unknown {unknown}; choose from {sorted(OBSERVABLES)}")
    burn_in = cfg["invariant.burn_in"] if args.burn_in is None else args.burn_in
    if not 0 <= burn_in < built.sim.T:
        raise ConfigError(f"invariant.burn_in = {burn_in} must lie in [0, time.T = {built.sim.T})")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest.new(cfg, " ".join(["tamed-nse"] + sys.argv[1:]))
    try:
        ens = run_damped(built)
    except BlowUpError as e:
        print(f"blow-up: {e}", file=sys.stderr)
        return EXIT_BLOWUP
    rows = []
    for obs in observables:
        m = time_average(ens, obs, burn_in)
        write_csv(out / f"measure_{obs}.csv", [("bin_left", "nondim"), ("bin_right", "nondim"), ("count", "count")],
                  np.column_stack([m.edges[:-1], m.edges[1:], m.counts]))
        rows.append((obs, m.average, m.se, m.histogram_mean, m.samples.size))
    with open(out / "averages.csv", "w") as fh:
        fh.write("observable[name],burn_in[time],mean[nondim],se[nondim],histogram_mean[nondim],samples[count]\n")
        for obs, mean, se, hm, size in rows:
            fh.write(f"{obs},{_num(burn_in)},{_num(mean)},{_num(se)},{_num(hm)},{size}\n")
    avg = averaged_norm_check(ens, built)
    R = radius_for_bound(built, cfg["invariant.tail_level"], ens.record.t[-1])
    tail = tail_bound_check(ens, R, built)
    with open(out / "bounds.csv", "w") as fh:
        fh.write("check[name],observed[nondim],se[nondim],bound[nondim],allowance[nondim],verdict[flag]\n")
        fh.write(f"time_averaged_V2,{_num(avg.estimate.mean)},{_num(avg.estimate.se)},{_num(avg.bound)},"
                 f"{_num(avg.allowance)},{int(avg.passed)}\n")
        fh.write(f"tail_fraction_R={_num(R)},{_num(tail.estimate.mean)},{_num(tail.estimate.se)},"
                 f"{_num(tail.chebyshev)},0,{int(tail.passed)}\n")
    if ens.snapshots:
        kappa, E, se = spectrum_average(ens.snapshots, burn_in) if any(
            t >= burn_in for t, _ in ens.snapshots) else (np.zeros(0), np.zeros(0), np.zeros(0))
        write_csv(out / "spectrum.csv", [("kappa", "wavenumber"), ("E_mean", "nondim"), ("E_se", "nondim")],
                  np.column_stack([kappa, E, se]) if kappa.size else np.zeros((0, 3)))
    man.finished = _now()
    man.write(out / "run_manifest.json")
    for obs, mean, se, _, _ in rows:
        print(f"{obs}\tmean {mean:.6g}\tse {se:.3g}")
    print(f"time-averaged ||u||_V^2: {avg.estimate.mean:.6g} +- {avg.estimate.se:.3g}, bound {avg.bound:.6g}"
          f" (+ allowance {avg.allowance:.3g}) {'PASS' if avg.passed else 'FAIL'}")
    print(f"tail at R = {R:.4g}: {tail.estimate.mean:.4g} +- {tail.estimate.se:.3g}, Chebyshev {tail.chebyshev:.4g}"
          f" {'PASS' if tail.passed else 'FAIL'}")
    return EXIT_OK


# emit-plots ---------------------------------------------------------------------------

def linear_oracle(cfg: Config | None, t: np.ndarray) -> np.ndarray:
    """|u0|_H exp(-(alpha + nu |k|^2) t) for a deterministic linear single-mode run, else NaN."""
    nan = np.full(t.shape, np.nan)
    if cfg is None:
        return nan
    deterministic = cfg["noise.J"] == 0 or cfg["noise.sigma2"] == 0
    linear = not cfg["model.nonlinear"] and not cfg["taming.enabled"] and cfg["forcing.kind"] == "none"
    if not (deterministic and linear and cfg["init.kind"] == "mode"):
        return nan
    sim = _sim_config(cfg)
    from .spectral_core import norm

    k2 = float(np.sum((np.asarray(cfg["init.wavevector"]) * sim.grid.k0) ** 2))
    h0 = float(norm(sim.u0, "H"))
    return h0 * np.exp(-(cfg["model.alpha"] + cfg["model.nu"] * k2) * t)


def emit_plots(run_dir) -> list[Path]:
    run = Path(run_dir)
    diag = run / "diagnostics.csv"
    if not diag.is_file():
        raise ConfigError(f"missing input: {diag}")
    d = read_csv(diag)
    cfg = RunManifest.read(run / "run_manifest.json").resolved() if (run / "run_manifest.json").is_file() else None
    written = []

    # norm time series, mean and SE over paths
    t_all = d["t"]
    times = np.unique(t_all)
    cols = [("t", "time"), ("paths", "count")]
    for s in SERIES:
        cols += [(f"{s}_mean", "nondim"), (f"{s}_se", "nondim")]
    cols.append(("H_oracle", "nondim"))
    rows = []
    for tv in times:
        sel = t_all == tv
        row = [tv, sel.sum()]
        for s in SERIES:
            x = d[s][sel]
            row += [x.mean(), x.std(ddof=1) / np.sqrt(x.size) if x.size > 1 else 0.0]
        rows.append(row)
    rows = np.asarray(rows, float).reshape(-1, len(cols) - 1)
    rows = np.column_stack([rows, linear_oracle(cfg, times)])
    write_csv(run / "norm_series.csv", cols, rows)
    written.append(run / "norm_series.csv")

    # histograms over all recorded samples
    for s in ("H", "V"):
        x = d[s]
        if x.size:
            edges, counts, _ = histogram(x)
            data = np.column_stack([edges[:-1], edges[1:], counts])
        else:
            data = np.zeros((0, 3))
        p = run / f"histogram_{s}.csv"
        write_csv(p, [("bin_left", "nondim"), ("bin_right", "nondim"), ("count", "count")], data)
        written.append(p)

    # energy spectra of every snapshot
    spec_rows = []
    index = run / "snapshots" / "index.csv"
    if index.is_file():
        idx = read_csv(index)
        for p, step, tv in zip(idx["path"], idx["step"], idx["t"]):
            u = read_snapshot(run / "snapshots" / f"p{int(p):05d}_s{int(step):07d}.tnse")
            kappa, E = shell_spectrum(u)
            spec_rows += [(tv, p, k, e) for k, e in zip(kappa, E)]
    p = run / "spectra.csv"
    write_csv(p, [("t", "time"), ("path", "index"), ("kappa", "wavenumber"), ("E", "nondim")],
              np.asarray(spec_rows, float).reshape(-1, 4))
    written.append(p)

    # convergence-order tables from refinement studies written by `verify --out`
    conv = []
    for f in sorted(run.glob("refinement_*.csv")):
        r = read_csv(f)
        dts, err = r["dt"], r["error"]
        order = np.full(dts.shape, np.nan)
        order[1:] = np.log(err[1:] / err[:-1]) / np.log(dts[1:] / dts[:-1])
        name = f.stem.removeprefix("refinement_")
        conv += [(name, a, b, c) for a, b, c in zip(dts, err, order)]
    p = run / "convergence.csv"
    with open(p, "w") as fh:
        fh.write("study[name],dt[time],error[nondim],local_order[nondim]\n")
        for name, a, b, c in conv:
            fh.write(f"{name},{_num(a)},{_num(b)},{_num(c)}\n")
    written.append(p)
    return written


def cmd_emit_plots(args) -> int:
    for p in emit_plots(args.run_dir):
        print(p)
    return EXIT_OK


# argument parsing -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def make_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tamed-nse", description="Stochastic tamed Navier-Stokes simulator and verification lab.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="integrate an ensemble and write diagnostics")
    s.add_argument("--config", help="flat key = value config file")
    s.add_argument("--manifest", help="replay a run_manifest.json instead of --config")
    s.add_argument("--paths", type=int, help="override run.paths")
    s.add_argument("--seed", type=int, help="override run.seed")
    s.add_argument("--out", default="run", help="output directory (default: run)")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("--suite", required=True, choices=("operators", "taming", "energy", "apriori"))
    v.add_argument("--config", help="config for the energy and apriori suites")
    v.add_argument("--fields", type=int, default=1000, help="random fields per inequality sweep")
    v.add_argument("--out", help="directory for the report and refinement tables")
    v.set_defaults(func=cmd_verify)

    i = sub.add_parser("invariant", help="time-averaged empirical measures of the damped system")
    i.add_argument("--config", required=True)
    i.add_argument("--observables", help="comma-separated list (default: invariant.observables)")
    i.add_argument("--burn-in", type=float, dest="burn_in", help="override invariant.burn_in")
    i.add_argument("--paths", type=int)
    i.add_argument("--seed", type=int)
    i.add_argument("--out", default="invariant")
    i.set_defaults(func=cmd_invariant)

    e = sub.add_parser("emit-plots", help="derive plot-ready CSVs from a run directory")
    e.add_argument("run_dir")
    e.set_defaults(func=cmd_emit_plots)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
