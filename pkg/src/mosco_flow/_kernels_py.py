"""Pure numpy versions of the compiled kernels (same signatures and results)."""

from __future__ import annotations

import numpy as np


def _adjoint(y, head, tail, dim):
    out = np.bincount(head, weights=y, minlength=dim)
    mask = tail >= 0
    out -= np.bincount(tail[mask], weights=y[mask], minlength=dim)
    return out


def _forward(x, head, tail):
    xe = np.append(x, 0.0)
    return xe[head] - xe[tail]  # tail = -1 picks the appended zero


def edge_laplacian_apply(x, head, tail, coeff):
    """Return ``K^T diag(coeff) K x``."""
    x = np.asarray(x, dtype=float)
    return _adjoint(coeff * _forward(x, head, tail), head, tail, x.size)


def tv_dual_fista(w, winv, head, tail, coeff, lam, lipschitz, z, max_iter, check_every, tol):
    """Accelerated projected gradient on ``|z_e| <= 1``; ``z`` is updated in place."""
    dim = w.size
    step = lam / lipschitz
    y = z.copy()
    t = 1.0
    gap = 0.0
    it = 0

    def primal(zz):
        return w - lam * winv * _adjoint(coeff * zz, head, tail, dim)

    while it < max_iter:
        d = _forward(primal(y), head, tail)
        z_old = z.copy()
        z[:] = np.clip(y + step * coeff * d, -1.0, 1.0)
        it += 1
        if np.dot(y - z, z - z_old) > 0.0:
            t = 1.0
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        t = t_next
        y = z + beta * (z - z_old)
        if it % check_every == 0 or it == max_iter:
            d = _forward(primal(z), head, tail)
            gap = lam * float(np.sum(coeff * (np.abs(d) - z * d)))
            if gap <= tol:
                break
    return it, gap
