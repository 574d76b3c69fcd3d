"""Pure numpy implementations of the hot kernels.

Signatures mirror the compiled ``_core`` module exactly; ``_backend`` picks
one of the two at import time. All arrays are float64 and C-contiguous.
"""
from __future__ import annotations

import numpy as np

NAME = "python"


def set_num_threads(n: int) -> None:  # noqa: ARG001 - parity with the compiled core
    pass


def conv3x3(u, w):
    """Zero-padded 3x3 multichannel convolution, ``out[i,j,p]``."""
    n = u.shape[0]
    up = np.pad(u, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros((n, n, w.shape[2]))
    for r in range(3):
        for c in range(3):
            out += up[r:r + n, c:c + n] @ w[r, c].T
    return out


def element_values(u):
    """Nodal values of every element, ``(N-1, N-1, Q, 4)`` in local node order."""
    return np.stack([u[1:, :-1], u[1:, 1:], u[:-1, 1:], u[:-1, :-1]], axis=-1)


def scatter_nodes(f, n):
    """Sum local element contributions ``(N-1, N-1, P, 4)`` onto nodes."""
    out = np.zeros((n, n, f.shape[2]))
    out[1:, :-1] += f[..., 0]
    out[1:, 1:] += f[..., 1]
    out[:-1, 1:] += f[..., 2]
    out[:-1, :-1] += f[..., 3]
    return out


def biphase_apply(u, h, theta):
    """Phase-blended element convolution; ``theta[0]`` is weighted by ``h``."""
    ue = element_values(u)
    diff = theta[0] - theta[1]
    f = np.einsum("pqab,ijqb->ijpa", theta[1], ue)
    f += h[:, :, None, None] * np.einsum("pqab,ijqb->ijpa", diff, ue)
    return scatter_nodes(f, u.shape[0])


def element_bilinear(u, vhat, d):
    """Per-element ``<vhat_e, d u_e>``."""
    return np.einsum("ijpa,pqab,ijqb->ij", element_values(vhat), d, element_values(u))


def element_outer(u, vhat, h):
    """Phase-weighted sums of ``vhat_e[p,a] * u_e[q,b]`` over elements."""
    ve = element_values(vhat)
    ue = element_values(u)
    g0 = np.einsum("ij,ijpa,ijqb->pqab", h, ve, ue)
    total = np.einsum("ijpa,ijqb->pqab", ve, ue)
    return np.stack([g0, total - g0])


def jacobi_homogeneous(u, v, w, pinv, free, omega, steps):
    """Run ``steps`` damped Jacobi layers in place on ``u``.

    Returns the squared free-node residual norm before each layer.
    """
    res = np.empty(steps)
    fm = free.astype(bool)[:, :, None]
    for t in range(steps):
        r = np.where(fm, v - conv3x3(u, w), 0.0)
        res[t] = float(np.sum(r * r))
        u += omega * pinv * r
    return res


def jacobi_biphase(u, v, h, theta, pinv, free, omega, steps):
    res = np.empty(steps)
    fm = free.astype(bool)[:, :, None]
    for t in range(steps):
        r = np.where(fm, v - biphase_apply(u, h, theta), 0.0)
        res[t] = float(np.sum(r * r))
        u += omega * pinv * r
    return res
