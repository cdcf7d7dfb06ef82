import numpy as np
import pytest

from tamed_nse.spectral_core import (
    Grid,
    PhysicalField,
    SpectralField,
    divergence,
    gradient,
    grad_norm2,
    inner,
    leray_project,
    mode_field,
    norm,
    project_ball,
    random_field,
    shell_spectrum,
    stokes_apply,
    stokes_norm2,
)


def unrestricted(grid, rng, batch=()):
    """Random real field with every resolved mode populated (no projection)."""
    values = rng.standard_normal(batch + (3,) + grid.physical_shape)
    return PhysicalField(grid, values).to_spectral()


def test_grid_validation():
    for bad in (7, 9, 6, 0):
        with pytest.raises(ValueError):
            Grid(bad)
    with pytest.raises(ValueError):
        Grid(16, L=-1.0)


def test_wavenumbers_are_fft_ordering(grid):
    z = grid.full_frequencies()
    assert sorted(z) == list(range(-grid.M // 2, grid.M // 2))
    assert np.array_equal(z, np.fft.fftfreq(grid.M, 1 / grid.M))
    assert np.allclose(Grid(16, L=4.0).k[0, 1, 0, 0], 2 * np.pi / 4.0)


def test_round_trip(grid, rng):
    values = rng.standard_normal((2, 3) + grid.physical_shape)
    back = grid.to_physical(grid.to_spectral(values))
    assert np.linalg.norm(back - values) <= 1e-12 * np.linalg.norm(values)


def test_parseval_matches_quadrature(grid, rng):
    u = unrestricted(grid, rng, (4,))
    spectral = norm(u, "H") ** 2
    quad = grid.integrate(u.to_physical().magnitude2())
    assert np.allclose(spectral, quad, rtol=1e-10, atol=0)


def test_project_ball_single_modes(grid):
    inside = mode_field(grid, (1, 2, 0), (0, 0, 1))
    outside = mode_field(grid, (4, 3, 0), (0, 0, 1))
    assert np.allclose(project_ball(inside, 3).coeffs, inside.coeffs)
    assert np.abs(project_ball(outside, 3).coeffs).max() == 0


def test_project_ball_orthogonal_and_idempotent(grid, rng):
    u = unrestricted(grid, rng)
    for n in (1.5, 3, 4.2):
        p = project_ball(u, n)
        assert np.array_equal(project_ball(p, n).coeffs, p.coeffs)
        # inner products against a basis of retained modes: (u - P u) has no retained coefficient
        resid = (u - p).coeffs * grid.ball_mask(n)
        assert np.abs(resid).max() == 0
        v = project_ball(unrestricted(grid, rng), n)
        assert abs(inner(u - p, v)) <= 1e-12 * float(norm(u) * norm(v))


def test_project_ball_self_adjoint(grid, rng):
    u, v = unrestricted(grid, rng), unrestricted(grid, rng)
    a = inner(project_ball(u, 3), v)
    b = inner(u, project_ball(v, 3))
    assert abs(a - b) <= 1e-12 * abs(a)


def test_projection_contracts_V_norm(grid, rng):
    u = unrestricted(grid, rng, (8,))
    for n in (0, 1, 2.5, 6):
        assert np.all(norm(project_ball(u, n), "V") <= norm(u, "V") * (1 + 1e-14))


def test_leray_examples(grid, rng):
    k0 = (0, 0, 1)
    along = mode_field(grid, k0, (1, 0, 0))
    assert np.allclose(leray_project(along).coeffs, along.coeffs, atol=1e-15)
    normal = mode_field(grid, k0, (0, 0, 1))
    assert np.abs(leray_project(normal).coeffs).max() < 1e-15

    p = rng.standard_normal(grid.physical_shape)
    grad_p = 1j * grid.k * grid.to_spectral(p)
    assert np.abs(leray_project(SpectralField(grid, grad_p)).coeffs).max() < 1e-14


def test_leray_idempotent_and_divergence_free(grid, rng):
    u = unrestricted(grid, rng, (3,))
    p = leray_project(u)
    assert np.allclose(leray_project(p).coeffs, p.coeffs, atol=1e-15)
    div = np.abs(divergence(p)).max()
    assert div <= 1e-12 * np.sqrt(grad_norm2(p).max())
    # mean mode passes through unchanged
    assert np.array_equal(p.coeffs[..., 0, 0, 0], u.coeffs[..., 0, 0, 0])


def test_stokes_symbol(grid):
    u = mode_field(grid, (1, 2, 0), (0, 0, 1))
    au = stokes_apply(u)
    assert np.allclose(au.coeffs, 5 * u.coeffs)
    assert np.allclose(stokes_apply(u, nu=2.0, alpha=0.5).coeffs, 10.5 * u.coeffs)
    assert np.abs(stokes_apply(SpectralField.zeros(grid)).coeffs).max() == 0


@pytest.mark.parametrize("n", [2, 3, 4])
def test_stokes_bound_n_squared(grid, rng, n):
    u = random_field(grid, n, rng, batch=(16,))
    ratio = np.sqrt(stokes_norm2(u)) / norm(u, "H")
    assert np.all(ratio <= n**2 * (1 + 1e-12))


def test_norms_of_single_mode(grid):
    u = mode_field(grid, (1, 2, 2), (1, 0, 0))
    h2 = norm(u, "H") ** 2
    assert np.isclose(norm(u, "V") ** 2 / h2, 1 + 9)
    assert np.isclose(norm(u, "D(A)") ** 2 / h2, 1 + 81)
    assert np.isclose(norm(u, "Vgamma", gamma=0.5) ** 2 / h2, np.sqrt(10))
    # sin has L2 norm^2 = volume / 2
    assert np.isclose(h2, grid.volume / 2)
    for which in ("H", "V", "D(A)", "L4"):
        assert norm(SpectralField.zeros(grid), which) == 0


def test_norm_equivalence_on_ball(grid, rng):
    n = 4
    u = random_field(grid, n, rng, batch=(16,))
    h, v = norm(u, "H"), norm(u, "V")
    assert np.all(h <= v) and np.all(v <= np.sqrt(1 + n**2) * h * (1 + 1e-14))


def test_gradient_single_mode(grid):
    u = mode_field(grid, (0, 1, 0), (1, 0, 0))
    d = grid.to_physical(gradient(u))
    x = grid.x
    assert np.allclose(d[1, 0], np.cos(x[1]), atol=1e-13)
    assert np.abs(np.delete(d.reshape(9, -1), 3, axis=0)).max() < 1e-13
    const = PhysicalField(grid, np.ones((3,) + grid.physical_shape)).to_spectral()
    assert np.abs(gradient(const)).max() < 1e-15


def test_L4_by_quadrature(grid):
    # |sin|^4 averages to 3/8
    u = mode_field(grid, (1, 0, 0), (0, 1, 0))
    assert np.isclose(norm(u, "L4") ** 4, 3 / 8 * grid.volume, rtol=1e-12)


def test_appendix_convergence_monotone(grid):
    x = grid.x
    psi = np.stack([np.exp(np.sin(x[1])) * np.cos(x[2]), np.sin(x[0] + x[2]) ** 3, np.exp(np.cos(x[0]))])
    u = leray_project(PhysicalField(grid, psi).to_spectral())
    ns = np.arange(0, grid.M // 2 + 1)
    errs = {w: [float(norm(project_ball(u, n) - u, w, gamma=0.5)) for n in ns] for w in ("H", "V", "Vgamma")}
    for w, e in errs.items():
        assert np.all(np.diff(e) <= 1e-14), w
        assert e[-1] < 1e-3 * e[0], w


def test_random_field_properties(grid, rng):
    u = random_field(grid, 4, rng, amplitude=3.0, batch=(5,))
    assert np.abs(u.coeffs * ~grid.state_mask(4)).max() == 0
    sup = np.sqrt(u.to_physical().magnitude2().max(axis=(-3, -2, -1)))
    assert np.allclose(sup, 3.0)
    assert np.abs(divergence(u)).max() < 1e-13
    v = random_field(grid, 4, rng, amplitude=2.0, scale_by="V")
    assert np.isclose(norm(v, "V"), 2.0)


def test_hermitian_symmetry(grid, rng):
    u = random_field(grid, 4, rng)
    full = np.fft.fftn(u.to_physical().values, axes=(-3, -2, -1))
    flipped = np.roll(np.flip(full, axis=(-3, -2, -1)), 1, axis=(-3, -2, -1))
    assert np.allclose(full, np.conj(flipped), atol=1e-12)


def test_shell_spectrum_sums_to_energy(grid, rng):
    u = random_field(grid, 4, rng, batch=(2,))
    kappa, e = shell_spectrum(u)
    assert np.allclose(e.sum(axis=-1), 0.5 * norm(u, "H") ** 2)
    assert e.shape == (2, kappa.size)


def test_field_shape_checked(grid):
    with pytest.raises(ValueError):
        SpectralField(grid, np.zeros((3, 4, 4, 3)))
