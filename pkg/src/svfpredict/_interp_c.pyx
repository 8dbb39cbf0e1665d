# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled multilinear sampling kernels (2-D and 3-D) and their adjoints.

Mirrors :mod:`svfpredict._interp_py` exactly in semantics: clamp-to-edge
sampling, zero coordinate gradient on clamped axes, and the average of the
one-sided derivatives when a sample sits exactly on a grid line.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline void _axis(double p, Py_ssize_t n, Py_ssize_t* i0, double* f,
                       double* dm, double* d0, double* dp) noexcept nogil:
    cdef double top = <double>(n - 1)
    cdef double pc = p
    cdef bint clamped = p < 0.0 or p > top
    cdef Py_ssize_t i
    if p < 0.0:
        pc = 0.0
    elif p > top:
        pc = top
    i = <Py_ssize_t>floor(pc)
    if i > n - 2:
        i = n - 2
    i0[0] = i
    f[0] = pc - i
    if clamped:
        dm[0] = 0.0
        d0[0] = 0.0
        dp[0] = 0.0
    elif f[0] == 0.0 and i >= 1:
        dm[0] = -0.5
        d0[0] = 0.0
        dp[0] = 0.5
    elif f[0] == 0.0 or f[0] == 1.0:
        dm[0] = 0.0
        d0[0] = -0.5
        dp[0] = 0.5
    else:
        dm[0] = 0.0
        d0[0] = -1.0
        dp[0] = 1.0


def sample_linear_2d(const double[:, :, ::1] src, const double[:, :, ::1] coords):
    cdef Py_ssize_t C = src.shape[0], n0 = src.shape[1], n1 = src.shape[2]
    cdef Py_ssize_t m0 = coords.shape[1], m1 = coords.shape[2]
    out_arr = np.empty((C, m0, m1), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t a, b, c, i, j
    cdef double fx, fy, dm, d0, dp
    with nogil:
        for a in range(m0):
            for b in range(m1):
                _axis(coords[0, a, b], n0, &i, &fx, &dm, &d0, &dp)
                _axis(coords[1, a, b], n1, &j, &fy, &dm, &d0, &dp)
                for c in range(C):
                    out[c, a, b] = ((1.0 - fx) * ((1.0 - fy) * src[c, i, j] + fy * src[c, i, j + 1])
                                    + fx * ((1.0 - fy) * src[c, i + 1, j] + fy * src[c, i + 1, j + 1]))
    return out_arr


def sample_linear_2d_backward(const double[:, :, ::1] src, const double[:, :, ::1] coords,
                              const double[:, :, ::1] grad_out):
    cdef Py_ssize_t C = src.shape[0], n0 = src.shape[1], n1 = src.shape[2]
    cdef Py_ssize_t m0 = coords.shape[1], m1 = coords.shape[2]
    gsrc_arr = np.zeros((C, n0, n1), dtype=np.float64)
    gcrd_arr = np.zeros((2, m0, m1), dtype=np.float64)
    cdef double[:, :, ::1] gsrc = gsrc_arr
    cdef double[:, :, ::1] gcrd = gcrd_arr
    cdef Py_ssize_t a, b, c, i, j
    cdef double fx, fy, xm, x0, xp, ym, y0, yp, g, s0, s1, im, jm
    with nogil:
        for a in range(m0):
            for b in range(m1):
                _axis(coords[0, a, b], n0, &i, &fx, &xm, &x0, &xp)
                _axis(coords[1, a, b], n1, &j, &fy, &ym, &y0, &yp)
                s0 = 0.0
                s1 = 0.0
                for c in range(C):
                    g = grad_out[c, a, b]
                    if g == 0.0:
                        continue
                    gsrc[c, i, j] += g * (1.0 - fx) * (1.0 - fy)
                    gsrc[c, i, j + 1] += g * (1.0 - fx) * fy
                    gsrc[c, i + 1, j] += g * fx * (1.0 - fy)
                    gsrc[c, i + 1, j + 1] += g * fx * fy
                    # derivative along axis 0, interpolated along axis 1
                    im = 0.0
                    if xm != 0.0:
                        im = xm * ((1.0 - fy) * src[c, i - 1, j] + fy * src[c, i - 1, j + 1])
                    s0 += g * (im + x0 * ((1.0 - fy) * src[c, i, j] + fy * src[c, i, j + 1])
                               + xp * ((1.0 - fy) * src[c, i + 1, j] + fy * src[c, i + 1, j + 1]))
                    jm = 0.0
                    if ym != 0.0:
                        jm = ym * ((1.0 - fx) * src[c, i, j - 1] + fx * src[c, i + 1, j - 1])
                    s1 += g * (jm + y0 * ((1.0 - fx) * src[c, i, j] + fx * src[c, i + 1, j])
                               + yp * ((1.0 - fx) * src[c, i, j + 1] + fx * src[c, i + 1, j + 1]))
                gcrd[0, a, b] = s0
                gcrd[1, a, b] = s1
    return gsrc_arr, gcrd_arr


cdef inline double _lerp2(const double[:, :, :, ::1] src, Py_ssize_t c, Py_ssize_t i,
                          Py_ssize_t j, Py_ssize_t k, double fy, double fz) noexcept nogil:
    # bilinear in (axis1, axis2) at fixed axis-0 index i
    return ((1.0 - fy) * ((1.0 - fz) * src[c, i, j, k] + fz * src[c, i, j, k + 1])
            + fy * ((1.0 - fz) * src[c, i, j + 1, k] + fz * src[c, i, j + 1, k + 1]))


def sample_linear_3d(const double[:, :, :, ::1] src, const double[:, :, :, ::1] coords):
    cdef Py_ssize_t C = src.shape[0], n0 = src.shape[1], n1 = src.shape[2], n2 = src.shape[3]
    cdef Py_ssize_t m0 = coords.shape[1], m1 = coords.shape[2], m2 = coords.shape[3]
    out_arr = np.empty((C, m0, m1, m2), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t a, b, e, c, i, j, k
    cdef double fx, fy, fz, dm, d0, dp
    with nogil:
        for a in range(m0):
            for b in range(m1):
                for e in range(m2):
                    _axis(coords[0, a, b, e], n0, &i, &fx, &dm, &d0, &dp)
                    _axis(coords[1, a, b, e], n1, &j, &fy, &dm, &d0, &dp)
                    _axis(coords[2, a, b, e], n2, &k, &fz, &dm, &d0, &dp)
                    for c in range(C):
                        out[c, a, b, e] = ((1.0 - fx) * _lerp2(src, c, i, j, k, fy, fz)
                                           + fx * _lerp2(src, c, i + 1, j, k, fy, fz))
    return out_arr


def sample_linear_3d_backward(const double[:, :, :, ::1] src, const double[:, :, :, ::1] coords,
                              const double[:, :, :, ::1] grad_out):
    cdef Py_ssize_t C = src.shape[0], n0 = src.shape[1], n1 = src.shape[2], n2 = src.shape[3]
    cdef Py_ssize_t m0 = coords.shape[1], m1 = coords.shape[2], m2 = coords.shape[3]
    gsrc_arr = np.zeros((C, n0, n1, n2), dtype=np.float64)
    gcrd_arr = np.zeros((3, m0, m1, m2), dtype=np.float64)
    cdef double[:, :, :, ::1] gsrc = gsrc_arr
    cdef double[:, :, :, ::1] gcrd = gcrd_arr
    cdef Py_ssize_t a, b, e, c, i, j, k, ii, jj, kk
    cdef double fx, fy, fz, xm, x0, xp, ym, y0, yp, zm, z0, zp, g, s0, s1, s2, t
    cdef double wx[2]
    cdef double wy[2]
    cdef double wz[2]
    cdef double cx[3]
    cdef double cy[3]
    cdef double cz[3]
    with nogil:
        for a in range(m0):
            for b in range(m1):
                for e in range(m2):
                    _axis(coords[0, a, b, e], n0, &i, &fx, &xm, &x0, &xp)
                    _axis(coords[1, a, b, e], n1, &j, &fy, &ym, &y0, &yp)
                    _axis(coords[2, a, b, e], n2, &k, &fz, &zm, &z0, &zp)
                    wx[0] = 1.0 - fx; wx[1] = fx
                    wy[0] = 1.0 - fy; wy[1] = fy
                    wz[0] = 1.0 - fz; wz[1] = fz
                    cx[0] = xm; cx[1] = x0; cx[2] = xp
                    cy[0] = ym; cy[1] = y0; cy[2] = yp
                    cz[0] = zm; cz[1] = z0; cz[2] = zp
                    s0 = 0.0
                    s1 = 0.0
                    s2 = 0.0
                    for c in range(C):
                        g = grad_out[c, a, b, e]
                        if g == 0.0:
                            continue
                        for ii in range(2):
                            for jj in range(2):
                                for kk in range(2):
                                    gsrc[c, i + ii, j + jj, k + kk] += g * wx[ii] * wy[jj] * wz[kk]
                        t = 0.0
                        for ii in range(3):
                            if cx[ii] == 0.0:
                                continue
                            for jj in range(2):
                                for kk in range(2):
                                    t += cx[ii] * wy[jj] * wz[kk] * src[c, i + ii - 1, j + jj, k + kk]
                        s0 += g * t
                        t = 0.0
                        for jj in range(3):
                            if cy[jj] == 0.0:
                                continue
                            for ii in range(2):
                                for kk in range(2):
                                    t += cy[jj] * wx[ii] * wz[kk] * src[c, i + ii, j + jj - 1, k + kk]
                        s1 += g * t
                        t = 0.0
                        for kk in range(3):
                            if cz[kk] == 0.0:
                                continue
                            for ii in range(2):
                                for jj in range(2):
                                    t += cz[kk] * wx[ii] * wy[jj] * src[c, i + ii, j + jj, k + kk - 1]
                        s2 += g * t
                    gcrd[0, a, b, e] = s0
                    gcrd[1, a, b, e] = s1
                    gcrd[2, a, b, e] = s2
    return gsrc_arr, gcrd_arr
