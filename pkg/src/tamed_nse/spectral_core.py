"""Periodic-box pseudo-spectral infrastructure.

Fields live on the torus ``[0, L)^3`` sampled on an ``M^3`` collocation grid.
Spectral coefficients are Fourier-series coefficients in real-FFT layout,
shape ``(..., 3, M, M, M//2 + 1)``, so that

    u(x) = sum_k  c_k exp(i k.x),      k = (2 pi / L) z,  z in Z^3.

Any number of leading batch axes is allowed (ensembles of paths are stored
that way); every reduction returns one value per batch entry.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
from scipy import fft as sfft

AXES = (-3, -2, -1)
NormName = Literal["H", "V", "D(A)", "L4", "Vgamma"]


@dataclass(frozen=True)
class Grid:
    """Collocation grid and wavenumber tables for the periodic box.

    Parameters
    ----------
    M : int
        Points per axis; even and at least 8.
    L : float
        Box side length.
    """

    M: int
    L: float = 2.0 * np.pi

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 8 or self.M % 2:
            raise ValueError(f"grid size M must be an even integer >= 8, got {self.M!r}")
        if not (self.L > 0 and np.isfinite(self.L)):
            raise ValueError(f"box length L must be positive, got {self.L!r}")

    @property
    def spectral_shape(self) -> tuple[int, int, int]:
        return (self.M, self.M, self.M // 2 + 1)

    @property
    def physical_shape(self) -> tuple[int, int, int]:
        return (self.M, self.M, self.M)

    @property
    def k0(self) -> float:
        """Fundamental wavenumber 2 pi / L."""
        return 2.0 * np.pi / self.L

    @property
    def volume(self) -> float:
        return self.L**3

    @property
    def cell_volume(self) -> float:
        return (self.L / self.M) ** 3

    @cached_property
    def z(self) -> np.ndarray:
        """Integer frequency vectors, shape (3, M, M, M//2+1)."""
        zf = np.fft.fftfreq(self.M, 1.0 / self.M)
        zr = np.fft.rfftfreq(self.M, 1.0 / self.M)
        return np.stack(np.meshgrid(zf, zf, zr, indexing="ij"))

    @cached_property
    def k(self) -> np.ndarray:
        """Physical wavenumber vectors, shape (3, M, M, M//2+1)."""
        return self.k0 * self.z

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.k**2, axis=0)

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def hermitian_weight(self) -> np.ndarray:
        """Multiplicity of each stored half-space mode in the full spectrum."""
        w = np.full(self.M // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w

    @property
    def nyquist(self) -> float:
        return self.k0 * self.M / 2

    @property
    def dealias_radius(self) -> float:
        """Two-thirds of the Nyquist wavenumber; modes must lie strictly inside."""
        return 2.0 * self.nyquist / 3.0

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        return self.kmag < self.dealias_radius * (1 - 1e-12)

    @cached_property
    def x(self) -> np.ndarray:
        """Collocation coordinates, shape (3, M, M, M)."""
        x1 = np.arange(self.M) * (self.L / self.M)
        return np.stack(np.meshgrid(x1, x1, x1, indexing="ij"))

    def full_frequencies(self) -> np.ndarray:
        """Per-axis integer frequencies in complex-FFT order."""
        return np.fft.fftfreq(self.M, 1.0 / self.M).astype(int)

    def ball_mask(self, n: float) -> np.ndarray:
        if n < 0:
            raise ValueError(f"cutoff must be nonnegative, got {n}")
        return self.kmag <= n * (1 + 1e-12) + 1e-12

    def state_mask(self, n: float) -> np.ndarray:
        """Modes carried by the simulator: ball of radius n, alias-free, mean-free."""
        mask = self.ball_mask(n) & self.dealias_mask
        mask[0, 0, 0] = False
        return mask

    def effective_cutoff(self, n: float) -> float:
        return min(n, self.dealias_radius)

    def to_spectral(self, values: np.ndarray) -> np.ndarray:
        return sfft.rfftn(values, axes=AXES, norm="forward")

    def to_physical(self, coeffs: np.ndarray) -> np.ndarray:
        return sfft.irfftn(coeffs, s=self.physical_shape, axes=AXES, norm="forward")

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Collocation quadrature of a scalar field over the box."""
        return values.sum(axis=AXES) * self.cell_volume

    def spectral_sum(self, weighted: np.ndarray) -> np.ndarray:
        """Sum a real half-spectrum array over the full spectrum."""
        return np.einsum("...ijk,k->...", weighted, self.hermitian_weight) * self.volume


@dataclass(frozen=True)
class SpectralField:
    """Fourier coefficients of a real 3-component field.

    ``n`` records the ball radius the field is known to be supported in
    (``inf`` for an unrestricted field).
    """

    grid: Grid
    coeffs: np.ndarray = field(repr=False)
    n: float = np.inf

    def __post_init__(self):
        if self.coeffs.shape[-4:] != (3,) + self.grid.spectral_shape:
            raise ValueError(
                f"coefficient array shape {self.coeffs.shape} does not match grid "
                f"(expected (..., 3) + {self.grid.spectral_shape})"
            )

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[:-4]

    def replace(self, coeffs: np.ndarray, n: float | None = None) -> "SpectralField":
        return SpectralField(self.grid, coeffs, self.n if n is None else n)

    def to_physical(self) -> "PhysicalField":
        return PhysicalField(self.grid, self.grid.to_physical(self.coeffs))

    def __getitem__(self, idx) -> "SpectralField":
        """Index the batch axes."""
        return self.replace(self.coeffs[idx])

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return self.replace(self.coeffs + other.coeffs, max(self.n, other.n))

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return self.replace(self.coeffs - other.coeffs, max(self.n, other.n))

    def __mul__(self, a) -> "SpectralField":
        a = np.asarray(a)
        return self.replace(self.coeffs * a.reshape(a.shape + (1,) * 4))

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return self.replace(-self.coeffs)

    @classmethod
    def zeros(cls, grid: Grid, batch: tuple[int, ...] = (), n: float = np.inf) -> "SpectralField":
        return cls(grid, np.zeros(batch + (3,) + grid.spectral_shape, complex), n)


@dataclass(frozen=True)
class PhysicalField:
    """Real-space samples of a 3-component field, shape (..., 3, M, M, M)."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.values.shape[-4:] != (3,) + self.grid.physical_shape:
            raise ValueError(f"value array shape {self.values.shape} does not match grid")

    def to_spectral(self, n: float = np.inf) -> SpectralField:
        coeffs = self.grid.to_spectral(self.values)
        if np.isfinite(n):
            coeffs = coeffs * self.grid.ball_mask(n)
        return SpectralField(self.grid, coeffs, n)

    def magnitude2(self) -> np.ndarray:
        return np.sum(self.values**2, axis=-4)


def project_ball(u: SpectralField, n: float) -> SpectralField:
    """Keep modes with |k| <= n and zero the rest."""
    return u.replace(u.coeffs * u.grid.ball_mask(n), min(n, u.n))


def leray_coeffs(grid: Grid, c: np.ndarray) -> np.ndarray:
    """Apply I - k k^T / |k|^2 per mode; the k = 0 mode passes through."""
    k = grid.k
    k2 = np.where(grid.k2 == 0, 1.0, grid.k2)
    kdotc = np.sum(k * c, axis=-4) / k2
    return c - k * kdotc[..., None, :, :, :]


def leray_project(u: SpectralField) -> SpectralField:
    return u.replace(leray_coeffs(u.grid, u.coeffs))


def stokes_apply(u: SpectralField, nu: float = 1.0, alpha: float = 0.0) -> SpectralField:
    """Multiply each mode by alpha + nu |k|^2."""
    return u.replace(u.coeffs * (alpha + nu * u.grid.k2))


def gradient_coeffs(grid: Grid, c: np.ndarray) -> np.ndarray:
    """Spectral gradient; entry [..., i, j, :] is d_i of component j."""
    return 1j * grid.k[:, None] * c[..., None, :, :, :, :]


def gradient(u: SpectralField) -> np.ndarray:
    return gradient_coeffs(u.grid, u.coeffs)


def divergence(u: SpectralField) -> np.ndarray:
    """Scalar spectral coefficients of div u."""
    return 1j * np.sum(u.grid.k * u.coeffs, axis=-4)


def inner(u: SpectralField, v: SpectralField) -> np.ndarray:
    """L^2 inner product, evaluated by Parseval."""
    prod = np.real(u.coeffs * np.conj(v.coeffs)).sum(axis=-4)
    return u.grid.spectral_sum(prod)


def weighted_norm2(u: SpectralField, weight: np.ndarray) -> np.ndarray:
    return u.grid.spectral_sum((np.abs(u.coeffs) ** 2).sum(axis=-4) * weight)


def norm(u: SpectralField, which: NormName = "H", gamma: float | None = None) -> np.ndarray:
    """Norm of ``u`` in H, V, D(A), L4 or the scaled space V_gamma.

    H, V, D(A) and V_gamma are exact Parseval sums with weights 1, 1 + |k|^2,
    1 + |k|^4 and (1 + |k|^2)^gamma. L4 uses collocation quadrature.
    """
    g = u.grid
    if which == "H":
        out = weighted_norm2(u, np.ones_like(g.k2))
    elif which == "V":
        out = weighted_norm2(u, 1.0 + g.k2)
    elif which == "D(A)":
        out = weighted_norm2(u, 1.0 + g.k2**2)
    elif which == "Vgamma":
        if gamma is None:
            raise ValueError("the V_gamma norm needs gamma")
        out = weighted_norm2(u, (1.0 + g.k2) ** gamma)
    elif which == "L4":
        m2 = u.to_physical().magnitude2()
        return g.integrate(m2**2) ** 0.25
    else:
        raise ValueError(f"unknown norm {which!r}")
    return np.sqrt(out)


def grad_norm2(u: SpectralField) -> np.ndarray:
    """|grad u|^2 in L^2."""
    return weighted_norm2(u, u.grid.k2)


def stokes_norm2(u: SpectralField) -> np.ndarray:
    """|A u|^2 in L^2 with A = -Laplacian (nu = 1, alpha = 0)."""
    return weighted_norm2(u, u.grid.k2**2)


def random_field(
    grid: Grid,
    n: float,
    rng: np.random.Generator,
    amplitude: float = 1.0,
    batch: tuple[int, ...] = (),
    scale_by: Literal["sup", "H", "V"] = "sup",
    slope: float = 0.0,
) -> SpectralField:
    """Random real, divergence-free, mean-free field supported in the state ball.

    Each batch entry is rescaled so that its sup-norm (or H / V norm) equals
    ``amplitude``. ``slope`` tilts the spectrum by |k|^-slope.
    """
    noise = rng.standard_normal(batch + (3,) + grid.physical_shape)
    c = grid.to_spectral(noise) * grid.state_mask(n)
    if slope:
        c = c * np.where(grid.k2 > 0, grid.kmag, 1.0) ** (-slope)
    u = SpectralField(grid, leray_coeffs(grid, c), grid.effective_cutoff(n))
    return rescale(u, amplitude, scale_by)


def rescale(u: SpectralField, amplitude: float, scale_by: str = "sup") -> SpectralField:
    if scale_by == "sup":
        cur = np.sqrt(u.to_physical().magnitude2().max(axis=AXES))
    elif scale_by in ("H", "V"):
        cur = norm(u, scale_by)
    else:
        raise ValueError(f"unknown scaling {scale_by!r}")
    cur = np.where(cur > 0, cur, 1.0)
    return u * (amplitude / cur)


def mode_field(
    grid: Grid, wavevector, direction, amplitude: float = 1.0, n: float = np.inf
) -> SpectralField:
    """The real field amplitude * direction * sin(k.x) for integer ``wavevector``.

    Coefficients are set exactly: c_k = a d / (2i), c_{-k} = conj(c_k).
    """
    z = np.asarray(wavevector, int)
    if np.any(np.abs(z) >= grid.M // 2):
        raise ValueError(f"wavevector {tuple(z)} is not resolved on an M={grid.M} grid")
    d = np.asarray(direction, float)
    c = np.zeros((3,) + grid.spectral_shape, complex)
    if z.any():
        ck = amplitude * d / 2j
        for sign, val in ((1, ck), (-1, np.conj(ck))):
            zz = sign * z
            if zz[2] >= 0:
                c[:, zz[0] % grid.M, zz[1] % grid.M, zz[2]] += val
    u = SpectralField(grid, c)
    return project_ball(u, n) if np.isfinite(n) else u


def shell_spectrum(u: SpectralField) -> tuple[np.ndarray, np.ndarray]:
    """Shell-summed energy spectrum E(kappa) with sum_kappa E = |u|_H^2 / 2.

    Shells are unit-width bins of |z| centred on integers.
    """
    g = u.grid
    e = 0.5 * (np.abs(u.coeffs) ** 2).sum(axis=-4) * g.hermitian_weight * g.volume
    shell = np.rint(np.sqrt(np.sum(g.z**2, axis=0))).astype(int)
    nshell = shell.max() + 1
    flat = e.reshape(e.shape[:-3] + (-1,))
    batch = flat.shape[:-1]
    flat = flat.reshape(-1, flat.shape[-1])
    out = np.stack([np.bincount(shell.ravel(), weights=row, minlength=nshell) for row in flat])
    return np.arange(nshell) * g.k0, out.reshape(batch + (nshell,))


SNAPSHOT_MAGIC = b"TNSE"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIdd")


def write_snapshot(path, u: SpectralField) -> None:
    """Write one field as a little-endian snapshot file.

    Layout: magic ``TNSE``, u32 version, u32 M, f64 n, f64 L, then the
    3*M^3 full-FFT-order coefficients (numpy ``fftn`` ordering along each
    axis, component-major) as complex64 (real, imag) pairs.
    """
    if u.batch_shape:
        raise ValueError("write_snapshot takes a single field; index the batch first")
    g = u.grid
    full = sfft.fftn(g.to_physical(u.coeffs), axes=AXES, norm="forward")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, g.M, float(u.n), float(g.L)))
        fh.write(full.astype("<c8").tobytes())


def read_snapshot(path) -> SpectralField:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError(f"{path}: truncated snapshot header")
        magic, version, M, n, L = _HEADER.unpack(head)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not a snapshot file (magic {magic!r})")
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"{path}: unsupported snapshot version {version}")
        data = np.frombuffer(fh.read(), dtype="<c8")
    if data.size != 3 * M**3:
        raise ValueError(f"{path}: expected {3 * M**3} coefficients, found {data.size}")
    full = data.reshape(3, M, M, M).astype(complex)
    return SpectralField(Grid(M, L), full[..., : M // 2 + 1].copy(), n)
