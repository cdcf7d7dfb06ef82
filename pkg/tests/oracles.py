"""Independent reference implementations used by the tests."""

import numpy as np


def retained_modes(grid, mask):
    """Integer wavevectors of every full-spectrum mode in a half-spectrum mask."""
    z = grid.z.reshape(3, -1)[:, mask.ravel()].T.astype(int)
    return np.unique(np.concatenate([z, -z]), axis=0)


def full_coefficients(grid, coeffs, modes):
    """Look up c_k for each integer mode, using c_{-k} = conj(c_k) off the stored half."""
    M = grid.M
    out = np.empty(coeffs.shape[:-4] + (len(modes), 3), complex)
    for i, z in enumerate(modes):
        if z[2] >= 0:
            out[..., i, :] = coeffs[..., :, z[0] % M, z[1] % M, z[2]]
        else:
            out[..., i, :] = np.conj(coeffs[..., :, -z[0] % M, -z[1] % M, -z[2]])
    return out


def triad_table(modes):
    """Index triples (p, q, k) with z_p + z_q = z_k, all inside ``modes``."""
    index = {tuple(z): i for i, z in enumerate(modes)}
    P, Q, K = [], [], []
    for ip, zp in enumerate(modes):
        for iq, zq in enumerate(modes):
            j = index.get(tuple(zp + zq))
            if j is not None:
                P.append(ip)
                Q.append(iq)
                K.append(j)
    return np.array(P), np.array(Q), np.array(K)


def convolution_B(grid, u_hat, modes, table=None):
    """Leray-projected triadic sum  sum_{p+q=k} (u_p . i q) u_q  for k in modes.

    ``u_hat`` has shape (R, 3) over ``modes``; no FFT is involved.
    """
    P, Q, K = triad_table(modes) if table is None else table
    kk = modes * grid.k0
    coef = 1j * np.sum(u_hat[P] * kk[Q], axis=1)
    out = np.zeros_like(u_hat)
    np.add.at(out, K, coef[:, None] * u_hat[Q])
    k2 = np.sum(kk**2, axis=1)
    k2[k2 == 0] = 1
    return out - kk * (np.sum(kk * out, axis=1) / k2)[:, None]
