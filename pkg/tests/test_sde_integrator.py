import numpy as np
import pytest

from tamed_nse.sde_integrator import (
    RNG_ALGORITHM,
    BlowUpError,
    BrownianSource,
    SimConfig,
    path_stream,
    run_coupled,
    simulate_ensemble,
    simulate_path,
    state_functionals,
    wiener_increments,
)
from tamed_nse.operators import RHS, DriftParams, NoiseModel, make_forcing
from tamed_nse.spectral_core import Grid, SpectralField, mode_field, norm, random_field


def make_cfg(grid=None, n=4, dt=1e-3, T=0.02, paths=4, u0=None, **kw):
    grid = grid or Grid(16)
    params = kw.pop("params", DriftParams(forcing=make_forcing(grid, n)))
    noise = kw.pop("noise", NoiseModel(grid))
    if u0 is None:
        u0 = random_field(grid, n, np.random.default_rng(1), amplitude=2.0, scale_by="V")
    return SimConfig(grid, n, dt, T, params, noise, u0, n_paths=paths, **kw)


def test_increment_statistics():
    dt = 1e-3
    x = wiener_increments(path_stream(7, 0), 1, dt, steps=10**6).ravel()
    assert abs(x.mean()) <= 4e-3 * np.sqrt(dt)
    assert abs(x.var() / dt - 1) <= 0.01
    y = wiener_increments(path_stream(7, 0), 1, dt, steps=10**6).ravel()
    assert np.array_equal(x, y)
    assert not np.array_equal(x[:10], wiener_increments(path_stream(7, 1), 1, dt, steps=10).ravel())
    with pytest.raises(ValueError):
        wiener_increments(path_stream(7, 0), 4, 0.0)
    assert "Philox" in RNG_ALGORITHM


def test_block_draws_equal_sequential_draws():
    s = BrownianSource(3, [0, 5], 4, 1e-3)
    blocks = np.concatenate(list(s.blocks(700, block=256)))
    seq = np.stack([[wiener_increments(path_stream(3, p), 4, 1e-3, steps=700)] for p in (0, 5)])[:, 0]
    assert np.array_equal(blocks, np.moveaxis(seq, 0, 1))


def test_coarse_increments_sum_fine_ones():
    fine = np.concatenate(list(BrownianSource(3, [2], 4, 1e-3).blocks(64)))
    coarse = np.concatenate(list(BrownianSource(3, [2], 4, 1e-3, substeps=4).blocks(16)))
    assert np.allclose(coarse, fine.reshape(16, 4, 1, 4).sum(axis=1), rtol=0, atol=1e-15)


def test_config_validation():
    with pytest.raises(ValueError):
        make_cfg(dt=0.0)
    with pytest.raises(ValueError):
        make_cfg(R_stop=-1.0)
    with pytest.raises(ValueError, match="explicit"):
        make_cfg(scheme="explicit", dt=0.2)
    make_cfg(scheme="explicit", dt=1e-3)
    with pytest.raises(ValueError):
        make_cfg(paths=0)


def test_zero_horizon_returns_initial_state():
    cfg = make_cfg(T=0.0)
    tr = simulate_path(cfg)
    assert len(tr.snapshots) == 1 and tr.times.tolist() == [0.0]
    assert np.allclose(tr.snapshots[0].coeffs, cfg.u0.coeffs)


def test_zero_state_stays_zero():
    grid = Grid(16)
    cfg = make_cfg(grid, u0=SpectralField.zeros(grid), params=DriftParams())
    tr = simulate_path(cfg)
    assert np.abs(tr.snapshots[-1].coeffs).max() == 0


@pytest.mark.parametrize("scheme", ["semi-implicit", "explicit"])
def test_linear_mode_decay(scheme):
    grid = Grid(16)
    u0 = mode_field(grid, (1, 2, 0), (0, 0, 1))
    lam = 0.5 + 0.8 * 5
    params = DriftParams(nu=0.8, alpha=0.5, tf=None, nonlinear=False)
    errs = []
    dts = [0.02, 0.01, 0.005]
    for dt in dts:
        cfg = make_cfg(grid, dt=dt, T=0.4, params=params, noise=NoiseModel(grid, J=0), u0=u0, scheme=scheme)
        h = norm(simulate_path(cfg).snapshots[-1], "H")
        errs.append(abs(h / norm(u0, "H") - np.exp(-lam * 0.4)))
    order = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert 0.9 <= order <= 1.1


def test_bitwise_determinism_and_batch_independence():
    cfg = make_cfg(paths=6, batch_size=4)
    a = simulate_ensemble(cfg)
    b = simulate_ensemble(cfg)
    c = simulate_ensemble(cfg.with_(batch_size=6))
    d = simulate_ensemble(cfg, paths=[5, 4, 3, 2, 1, 0])
    assert np.array_equal(a.final.coeffs, b.final.coeffs)
    assert np.array_equal(a.final.coeffs, c.final.coeffs)
    assert np.array_equal(a.final.coeffs[::-1], d.final.coeffs)
    alone = simulate_path(cfg, 3)
    assert np.array_equal(alone.snapshots[-1].coeffs, a.final.coeffs[3])
    assert np.array_equal(alone.record.H2[:, 0], a.record.H2[:, 3])


def test_single_path_ensemble_matches_path():
    cfg = make_cfg(paths=1)
    e = simulate_ensemble(cfg)
    tr = simulate_path(cfg)
    assert np.array_equal(e.mean("H"), np.sqrt(tr.record.H2[:, 0]))
    assert np.all(e.se("H") == 0)


def test_invariants_hold_every_step():
    cfg = make_cfg(debug=True, T=0.01)
    res = simulate_ensemble(cfg)
    grid = cfg.grid
    assert np.abs(res.final.coeffs * ~grid.state_mask(4)).max() == 0
    assert np.abs(res.final.coeffs[..., 0, 0, 0]).max() == 0


def test_record_matches_recomputation_from_snapshots():
    cfg = make_cfg(T=0.01, snapshot_every=5)
    tr = simulate_path(cfg)
    rhs = RHS(cfg.grid, cfg.n, cfg.params, cfg.noise)
    for t, snap in zip(tr.snapshot_times, tr.snapshots):
        k = int(round(t / cfg.dt))
        v = rhs.compress(snap.coeffs)
        vals = state_functionals(rhs, v, rhs.evaluate(v))
        for name in ("H2", "V2", "DA2", "L4_4", "ugu2", "F", "D"):
            logged = getattr(tr.record, name)[k, 0]
            assert np.isclose(logged, vals[name], rtol=1e-10, atol=1e-14), name
    assert tr.snapshot_times.tolist() == [0.0, 0.005, 0.01]


def test_hitting_time_recorded_not_enforced():
    cfg = make_cfg(T=0.02, R_stop=1.0)
    tr = simulate_path(cfg)
    assert tr.hitting_time == 0.0
    assert tr.times[-1] == pytest.approx(0.02)
    assert simulate_path(cfg.with_(R_stop=1e6)).hitting_time == np.inf


def test_non_finite_initial_data_rejected():
    grid = Grid(16)
    bad = random_field(grid, 4, np.random.default_rng(0))
    bad.coeffs[0, 1, 0, 0] = np.nan
    with pytest.raises(ValueError):
        make_cfg(grid, u0=bad)


def test_blow_up_detected():
    grid = Grid(16)
    f = make_forcing(grid, 4, kappa=1e4)
    cfg = make_cfg(grid, dt=0.1, T=20.0, paths=2, params=DriftParams(tf=None, forcing=f))
    with pytest.raises(BlowUpError) as err:
        simulate_ensemble(cfg)
    assert err.value.paths == [0, 1] and err.value.step > 1


def test_standard_error_scaling():
    small = simulate_ensemble(make_cfg(paths=32, T=0.01, full_diagnostics=False))
    large = simulate_ensemble(make_cfg(paths=64, T=0.01, full_diagnostics=False))
    ratio = small.se("H")[-1] / large.se("H")[-1]
    spread = np.sqrt(2) * np.sqrt(1 / (2 * 31) + 1 / (2 * 63))
    assert abs(ratio - np.sqrt(2)) <= 3 * spread


def test_coupled_run_with_unit_substep_matches_plain_run():
    cfg = make_cfg(paths=3)
    a = run_coupled(cfg, 1, record=True)
    b = simulate_ensemble(cfg)
    assert np.array_equal(a.final, b.final.coeffs)
