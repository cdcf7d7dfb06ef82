"""Taming function and the pointwise tamed term.

The taming function vanishes below the threshold ``N``, equals ``r - N``
above ``N + 1`` and is bridged on ``[N, N + 1]`` by the cubic Hermite
interpolant ``g(N + t) = 2 t^2 - t^3`` (C^1, slope in ``[0, 4/3]``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral_core import PhysicalField


def _check_nonneg(r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(np.isnan(r)):
        raise ValueError("taming function is defined for r >= 0 only")
    return r


@dataclass(frozen=True)
class TamingFunction:
    N: float = 10.0

    def __post_init__(self):
        if not self.N > 0:
            raise ValueError(f"taming threshold N must be positive, got {self.N}")

    # Largest value of phi(r) = r - g(r); attained on the bridge at t = 1/3.
    @property
    def phi_max(self) -> float:
        return self.N + 4.0 / 27.0

    def __call__(self, r):
        return g_eval(r, self)


def _bridge_t(r, N):
    return np.clip(r - N, 0.0, 1.0)


def g_eval(r, tf: TamingFunction):
    r = _check_nonneg(r)
    t = _bridge_t(r, tf.N)
    out = np.where(r >= tf.N + 1, r - tf.N, t * t * (2.0 - t))
    return out if out.ndim else float(out)


def g_prime(r, tf: TamingFunction):
    r = _check_nonneg(r)
    t = _bridge_t(r, tf.N)
    out = np.where(r >= tf.N + 1, 1.0, t * (4.0 - 3.0 * t))
    return out if out.ndim else float(out)


def phi_eval(r, tf: TamingFunction):
    """phi(r) = r - g(r): identity below N, constant N above N + 1."""
    r = _check_nonneg(r)
    out = r - g_eval(r, tf)
    return out if np.ndim(out) else float(out)


def g_of_magnitude(values: np.ndarray, tf: TamingFunction) -> np.ndarray:
    """g(|u(x)|^2) for physical samples shaped (..., 3, M, M, M)."""
    return g_eval(np.sum(values**2, axis=-4), tf)


def tamed_term(u: PhysicalField, tf: TamingFunction) -> PhysicalField:
    """Pointwise g(|u(x)|^2) u(x)."""
    g = g_of_magnitude(u.values, tf)
    return PhysicalField(u.grid, g[..., None, :, :, :] * u.values)
