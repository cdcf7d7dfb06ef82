"""Right-hand-side operators of the Fourier-ball truncated tamed system.

Every operator maps a field supported in the ball of radius ``u.n`` back into
that ball: nonlinear products are formed on the collocation grid, transformed,
Leray-projected and cut back to the retained modes.  The retained set is the
ball intersected with the 2/3-rule alias-free region, with the mean mode
removed (the state space on the torus is mean-free).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np

from .spectral_core import (
    Grid,
    SpectralField,
    inner,
    random_field,
    rescale,
)
from .taming import TamingFunction, g_eval

SIGMA_BOUND = 0.25


def _cutoff(u: SpectralField) -> float:
    if not np.isfinite(u.n):
        raise ValueError("operator needs a field with a finite ball radius (u.n)")
    return u.n


@dataclass(frozen=True)
class NoiseModel:
    """Finite family of transport-noise vector fields sigma_j.

    ``kind="constant"``: sigma_j = c_j e_{d_j}.  ``kind="banded"``: the same
    vectors modulated by ``1 - b + b cos(x_{d'_j} + theta_j)`` along an axis
    ``d'_j`` orthogonal to ``d_j`` (each sigma_j stays divergence-free).
    """

    grid: Grid
    J: int = 4
    kind: Literal["constant", "banded"] = "constant"
    sigma2: float = SIGMA_BOUND
    modulation: float = 0.25

    def __post_init__(self):
        if self.J < 0:
            raise ValueError(f"noise.J must be >= 0, got {self.J}")
        if self.kind not in ("constant", "banded"):
            raise ValueError(f"noise.kind must be 'constant' or 'banded', got {self.kind!r}")
        if not 0 <= self.sigma2 <= SIGMA_BOUND:
            raise ValueError(f"sup_x sum_j |sigma_j|^2 must lie in [0, 1/4], got {self.sigma2}")
        if not 0 <= self.modulation <= 1:
            raise ValueError(f"noise modulation must lie in [0, 1], got {self.modulation}")
        if self.bound_check > SIGMA_BOUND * (1 + 1e-12):
            raise ValueError(f"noise violates the 1/4 bound: {self.bound_check}")

    @property
    def directions(self) -> np.ndarray:
        return np.arange(self.J) % 3

    @property
    def amplitudes(self) -> np.ndarray:
        return np.full(self.J, np.sqrt(self.sigma2 / self.J)) if self.J else np.zeros(0)

    @property
    def vectors(self) -> np.ndarray:
        """Constant parts c_j e_{d_j}, shape (J, 3)."""
        v = np.zeros((self.J, 3))
        v[np.arange(self.J), self.directions] = self.amplitudes
        return v

    @cached_property
    def profiles(self) -> np.ndarray:
        """Scalar modulation of each sigma_j on the grid, shape (J, M, M, M)."""
        g = self.grid
        if self.kind == "constant":
            return np.ones((self.J,) + g.physical_shape)
        b = self.modulation
        out = np.empty((self.J,) + g.physical_shape)
        for j, d in enumerate(self.directions):
            axis = (d + 1) % 3
            theta = 2 * np.pi * j / max(self.J, 1)
            out[j] = 1 - b + b * np.cos(g.k0 * g.x[axis] + theta)
        return out

    @cached_property
    def bound_check(self) -> float:
        """sup over grid points of sum_j |sigma_j(x)|^2."""
        if self.J == 0:
            return 0.0
        s = np.einsum("j,j...->...", self.amplitudes**2, self.profiles**2)
        return float(s.max())

    @property
    def grad_bound(self) -> float:
        """Upper bound for sup_x sum_{a,j} |d_a sigma_j(x)|^2."""
        if self.kind == "constant":
            return 0.0
        return self.sigma2 * (self.modulation * self.grid.k0) ** 2

    @property
    def C_sigma(self) -> float:
        """Constant in ||G(u)||^2_{L2(l2;V)} <= 1/2 |Au|^2 + C_sigma |grad u|^2."""
        return self.sigma2 + 2.0 * self.grad_bound


@dataclass(frozen=True)
class Forcing:
    """Forcing f(x, u) = f0(x) + kappa u ("state") or the fixed field f0 ("fixed")."""

    f0: SpectralField
    kind: Literal["state", "fixed"] = "state"
    kappa: float = 0.1

    def __post_init__(self):
        if self.kind not in ("state", "fixed"):
            raise ValueError(f"forcing.kind must be 'state' or 'fixed', got {self.kind!r}")
        if self.kappa < 0:
            raise ValueError(f"forcing.kappa must be >= 0, got {self.kappa}")
        if self.f0.batch_shape:
            raise ValueError("forcing field must not carry batch axes")

    @property
    def lipschitz(self) -> float:
        return self.kappa if self.kind == "state" else 0.0

    @property
    def C_f(self) -> float:
        """One constant serving both |f|^2 <= C_f|u|^2 + b_f and the Lipschitz bound."""
        k = self.lipschitz
        return max(k, 2 * k * k)

    @property
    def b_f_L1(self) -> float:
        """Integral of b_f, with b_f = 2|f0|^2 (state) or |f0|^2 (fixed)."""
        f2 = float(inner(self.f0, self.f0))
        return 2 * f2 if self.kind == "state" else f2


def make_forcing(
    grid: Grid,
    n: float,
    kind: str = "state",
    kappa: float = 0.1,
    f0_norm2: float = 0.01,
    radius: float = 1.5,
    seed: int = 7,
) -> Forcing:
    """Fixed random low-mode divergence-free f0 with |f0|_H^2 = f0_norm2."""
    if f0_norm2 < 0:
        raise ValueError("forcing.f0_norm2 must be >= 0")
    rng = np.random.default_rng(seed)
    f0 = random_field(grid, min(radius, n), rng)
    f0 = rescale(f0, np.sqrt(f0_norm2), "H") if f0_norm2 > 0 else f0 * 0.0
    return Forcing(f0, kind, kappa)


@dataclass(frozen=True)
class DriftParams:
    nu: float = 1.0
    alpha: float = 0.0
    tf: TamingFunction | None = field(default_factory=TamingFunction)
    forcing: Forcing | None = None
    nonlinear: bool = True

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"model.nu must be positive, got {self.nu}")
        if self.alpha < 0:
            raise ValueError(f"model.alpha must be >= 0, got {self.alpha}")

    @property
    def C_f(self) -> float:
        return self.forcing.C_f if self.forcing else 0.0

    @property
    def b_f_L1(self) -> float:
        return self.forcing.b_f_L1 if self.forcing else 0.0


@dataclass
class Terms:
    """Everything one right-hand-side evaluation produces.

    Spectral entries are compressed to the retained modes, shape (..., 3, R).
    """

    values: np.ndarray  # (..., 3, M, M, M) physical u
    grad: np.ndarray | None  # (..., 3, 3, M, M, M) physical d_i u_j
    B: np.ndarray  # P_n Pi[(u.grad)u]
    g: np.ndarray  # P_n Pi[g(|u|^2)u]
    f: np.ndarray  # P_n Pi f(u)
    G: np.ndarray  # (J, ..., 3, R) G_j(u)
    gmag: np.ndarray  # g(|u(x)|^2)

    @property
    def nonlinear(self) -> np.ndarray:
        return self.f - self.B - self.g


class RHS:
    """Precomputed evaluator of all drift and diffusion terms on one grid.

    The state is carried as a compressed vector over the retained modes,
    shape (..., 3, R); it is expanded to the full real-FFT layout only around
    transforms.
    """

    def __init__(self, grid: Grid, n: float, params: DriftParams, noise: NoiseModel | None):
        self.grid = grid
        self.n = grid.effective_cutoff(n)
        self.params = params
        self.noise = noise if noise is not None else NoiseModel(grid, J=0)
        self.mask = grid.state_mask(n)
        self.idx = np.flatnonzero(self.mask)
        self.R = self.idx.size
        self.k = grid.k.reshape(3, -1)[:, self.idx]
        self.k2 = grid.k2.ravel()[self.idx]
        kz = np.broadcast_to(grid.hermitian_weight, grid.spectral_shape).ravel()[self.idx]
        self.weight = kz * grid.volume
        self.linear_symbol = params.alpha + params.nu * self.k2
        self._iksigma = None
        if self.noise.kind == "constant" and self.noise.J:
            # i (sigma_j . k), shape (J, 1, R)
            self._iksigma = 1j * (self.noise.vectors @ self.k)[:, None, :]
        f = params.forcing
        self._f0 = self.project_full(f.f0.coeffs) if f is not None else None

    def compress(self, c: np.ndarray) -> np.ndarray:
        return c.reshape(c.shape[:-3] + (-1,))[..., self.idx]

    def expand(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(v.shape[:-1] + (int(np.prod(self.grid.spectral_shape)),), complex)
        out[..., self.idx] = v
        return out.reshape(v.shape[:-1] + self.grid.spectral_shape)

    def project(self, v: np.ndarray) -> np.ndarray:
        """Leray projection of a compressed vector."""
        kdotv = np.einsum("ar,...ar->...r", self.k, v) / self.k2
        return v - self.k * kdotv[..., None, :]

    def project_full(self, c: np.ndarray) -> np.ndarray:
        return self.project(self.compress(c))

    def dot(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """L^2 inner product of compressed fields (Parseval)."""
        return (np.real(a * np.conj(b)).sum(axis=-2) * self.weight).sum(axis=-1)

    def norm2(self, v: np.ndarray, weight: np.ndarray | None = None) -> np.ndarray:
        a2 = (v.real**2 + v.imag**2).sum(axis=-2)
        w = self.weight if weight is None else weight * self.weight
        # row-wise sums keep each path's value independent of the batch it sits in
        return (a2 * w).sum(axis=-1)

    def physical(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Physical samples of u and of its gradient d_i u_j."""
        g = self.grid
        values = g.to_physical(self.expand(v))
        grad = g.to_physical(self.expand(1j * self.k[:, None] * v[..., None, :, :]))
        return values, grad

    def vorticity(self, v: np.ndarray) -> np.ndarray:
        """Physical samples of curl u."""
        w = 1j * np.cross(self.k, v, axisa=0, axisb=-2, axisc=-2)
        return self.grid.to_physical(self.expand(w))

    def advection(self, values: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Convective form (u . grad) u."""
        adv = np.einsum("...iabc,...ijabc->...jabc", values, grad)
        return self.project_full(self.grid.to_spectral(adv))

    def advection_rot(self, values: np.ndarray, vort: np.ndarray) -> np.ndarray:
        """Rotational form omega x u; equal to the convective form after Leray projection."""
        lamb = np.cross(vort, values, axis=-4)
        return self.project_full(self.grid.to_spectral(lamb))

    def taming(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        tf = self.params.tf
        if tf is None:
            return np.zeros(values.shape[:-4] + values.shape[-3:]), None
        gmag = g_eval(np.sum(values**2, axis=-4), tf)
        if not gmag.any():
            return gmag, None
        return gmag, self.project_full(self.grid.to_spectral(gmag[..., None, :, :, :] * values))

    def forcing(self, v: np.ndarray) -> np.ndarray | None:
        f = self.params.forcing
        if f is None:
            return None
        out = np.broadcast_to(self._f0, v.shape)
        if f.kind == "state" and f.kappa:
            out = out + f.kappa * v
        return out

    def noise_terms(self, v: np.ndarray, grad: np.ndarray | None) -> np.ndarray:
        nm = self.noise
        if nm.J == 0:
            return np.zeros((0,) + v.shape, complex)
        if self._iksigma is not None:
            return self._iksigma.reshape((nm.J,) + (1,) * (v.ndim - 2) + (1, self.R)) * v
        out = []
        for j, d in enumerate(nm.directions):
            w = nm.amplitudes[j] * nm.profiles[j] * grad[..., d, :, :, :, :]
            out.append(self.project_full(self.grid.to_spectral(w)))
        return np.stack(out)

    def evaluate(self, v: np.ndarray, need_grad: bool = True) -> Terms:
        """All terms at state v.

        With ``need_grad=False`` the advection uses the rotational form and
        the physical gradient is skipped unless the noise needs it.
        """
        zero = np.zeros_like(v)
        need_grad = need_grad or (self.noise.kind != "constant" and self.noise.J > 0)
        if need_grad:
            values, grad = self.physical(v)
            B = self.advection(values, grad) if self.params.nonlinear else zero
        else:
            values = self.grid.to_physical(self.expand(v))
            grad = None
            B = self.advection_rot(values, self.vorticity(v)) if self.params.nonlinear else zero
        gmag, g = self.taming(values)
        f = self.forcing(v)
        return Terms(
            values=values,
            grad=grad,
            B=B,
            g=zero if g is None else g,
            f=zero if f is None else f,
            G=self.noise_terms(v, grad),
            gmag=gmag,
        )

    def drift(self, v: np.ndarray, terms: Terms | None = None) -> np.ndarray:
        terms = terms if terms is not None else self.evaluate(v)
        return -self.linear_symbol * v + terms.nonlinear

    def hs_norm2(self, G: np.ndarray) -> np.ndarray:
        """sum_j |G_j|_H^2 of a stacked compressed (J, ..., 3, R) array."""
        if G.shape[0] == 0:
            return np.zeros(G.shape[1:-2])
        return self.norm2(G).sum(axis=0)


def _rhs(u: SpectralField, p: DriftParams | None = None, nm: NoiseModel | None = None) -> RHS:
    return RHS(u.grid, _cutoff(u), p if p is not None else DriftParams(), nm)


def nonlinear_B(u: SpectralField) -> SpectralField:
    """P_n Pi[(u . grad) u], pseudo-spectral with 2/3-rule dealiasing."""
    r = _rhs(u)
    return u.replace(r.expand(r.advection(*r.physical(r.compress(u.coeffs)))))


def tamed_gn(u: SpectralField, tf: TamingFunction) -> SpectralField:
    """P_n Pi[g(|u|^2) u]."""
    r = _rhs(u, DriftParams(tf=tf))
    _, g = r.taming(u.grid.to_physical(u.coeffs))
    return u.replace(np.zeros_like(u.coeffs) if g is None else r.expand(g))


def forcing_fn(u: SpectralField, p: DriftParams) -> SpectralField:
    """P_n Pi f(u)."""
    r = _rhs(u, p)
    f = r.forcing(r.compress(u.coeffs))
    return u.replace(np.zeros_like(u.coeffs) if f is None else r.expand(np.array(f)))


def noise_apply(u: SpectralField, nm: NoiseModel) -> list[SpectralField]:
    """[P_n Pi((sigma_j . grad) u) for j in 1..J]."""
    r = _rhs(u, None, nm)
    v = r.compress(u.coeffs)
    grad = None if nm.kind == "constant" else r.physical(v)[1]
    return [u.replace(r.expand(G)) for G in r.noise_terms(v, grad)]


def drift(u: SpectralField, p: DriftParams, nm: NoiseModel | None = None) -> SpectralField:
    """-(alpha + nu|k|^2) u - B_n(u) - g_n(u) + f_n(u)."""
    r = _rhs(u, p, nm)
    return u.replace(r.expand(r.drift(r.compress(u.coeffs))))


def hs_norm2(G: np.ndarray, grid: Grid) -> np.ndarray:
    """Hilbert-Schmidt norm squared sum_j |G_j|_H^2 of a stacked (J, ...) array."""
    if G.shape[0] == 0:
        return np.zeros(G.shape[1:-4])
    e = (np.abs(G) ** 2).sum(axis=(0, -4))
    return grid.spectral_sum(e)


def growth_functional_F(u: SpectralField, p: DriftParams, nm: NoiseModel | None = None) -> np.ndarray:
    """||G_n(u)||^2_{L2(l2;H)} + 2 <u, drift(u)>_H."""
    r = _rhs(u, p, nm)
    v = r.compress(u.coeffs)
    terms = r.evaluate(v)
    return r.hs_norm2(terms.G) + 2 * r.dot(v, r.drift(v, terms))
