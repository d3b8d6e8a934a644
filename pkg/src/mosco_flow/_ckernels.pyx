# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: edge-operator products and the box-constrained dual
iteration for total-variation type resolvents."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


cdef inline void _adjoint(const double[::1] y, const long long[::1] head,
                          const long long[::1] tail, double[::1] out) noexcept nogil:
    # out = K^T y
    cdef Py_ssize_t e, n = out.shape[0]
    for e in range(n):
        out[e] = 0.0
    for e in range(head.shape[0]):
        out[head[e]] += y[e]
        if tail[e] >= 0:
            out[tail[e]] -= y[e]


cdef inline void _forward(const double[::1] x, const long long[::1] head,
                          const long long[::1] tail, double[::1] out) noexcept nogil:
    # out = K x
    cdef Py_ssize_t e
    cdef double t
    for e in range(head.shape[0]):
        t = x[head[e]]
        if tail[e] >= 0:
            t -= x[tail[e]]
        out[e] = t


def edge_laplacian_apply(const double[::1] x, const long long[::1] head,
                         const long long[::1] tail, const double[::1] coeff):
    """Return ``K^T diag(coeff) K x``."""
    cdef Py_ssize_t E = head.shape[0], e
    cdef double[::1] d = np.empty(E)
    out = np.empty(x.shape[0])
    cdef double[::1] o = out
    with nogil:
        _forward(x, head, tail, d)
        for e in range(E):
            d[e] *= coeff[e]
        _adjoint(d, head, tail, o)
    return out


cdef inline void _primal(const double[::1] w, const double[::1] winv,
                         const long long[::1] head, const long long[::1] tail,
                         const double[::1] coeff, double lam, const double[::1] z,
                         double[::1] flux, double[::1] v) noexcept nogil:
    # v = w - lam W^{-1} K^T C z
    cdef Py_ssize_t e, i
    for e in range(z.shape[0]):
        flux[e] = coeff[e] * z[e]
    _adjoint(flux, head, tail, v)
    for i in range(v.shape[0]):
        v[i] = w[i] - lam * winv[i] * v[i]


cdef inline double _gap(const double[::1] d, const double[::1] z,
                        const double[::1] coeff, double lam) noexcept nogil:
    cdef Py_ssize_t e
    cdef double s = 0.0
    for e in range(d.shape[0]):
        s += coeff[e] * (fabs(d[e]) - z[e] * d[e])
    return lam * s


def tv_dual_fista(const double[::1] w, const double[::1] winv,
                  const long long[::1] head, const long long[::1] tail,
                  const double[::1] coeff, double lam, double lipschitz,
                  double[::1] z, long max_iter, long check_every, double tol):
    """Accelerated projected gradient on ``|z_e| <= 1`` with adaptive restart.

    ``z`` is updated in place.  Returns ``(iterations, gap)`` where ``gap`` is
    the duality gap at the final ``z``.
    """
    cdef Py_ssize_t E = head.shape[0], dim = w.shape[0], e
    cdef double[::1] y = np.array(z, dtype=float)
    cdef double[::1] z_old = np.array(z, dtype=float)
    cdef double[::1] flux = np.empty(E)
    cdef double[::1] d = np.empty(E)
    cdef double[::1] v = np.empty(dim)
    cdef double t = 1.0, t_next, beta, step = lam / lipschitz, zn, restart
    cdef double gap = 0.0
    cdef long it = 0
    with nogil:
        while it < max_iter:
            _primal(w, winv, head, tail, coeff, lam, y, flux, v)
            _forward(v, head, tail, d)
            restart = 0.0
            for e in range(E):
                zn = y[e] + step * coeff[e] * d[e]
                if zn > 1.0:
                    zn = 1.0
                elif zn < -1.0:
                    zn = -1.0
                z_old[e] = z[e]
                z[e] = zn
                restart += (y[e] - zn) * (zn - z_old[e])
            it += 1
            if restart > 0.0:
                t = 1.0
            t_next = 0.5 * (1.0 + sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_next
            t = t_next
            for e in range(E):
                y[e] = z[e] + beta * (z[e] - z_old[e])
            if it % check_every == 0 or it == max_iter:
                _primal(w, winv, head, tail, coeff, lam, z, flux, v)
                _forward(v, head, tail, d)
                gap = _gap(d, z, coeff, lam)
                if gap <= tol:
                    break
    return it, gap
