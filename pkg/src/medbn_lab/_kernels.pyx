# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled per-channel normalization kernels.

Mirror of ``_kernels_py`` with fused sequential loops. Kept in lockstep
with the pure backend; semantics are identical, floating-point results
agree to roundoff (summation order differs).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


cdef inline void _swap(double* a, Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    cdef double t = a[i]
    a[i] = a[j]
    a[j] = t


cdef double _kth_smallest(double* a, Py_ssize_t n, Py_ssize_t k) noexcept nogil:
    """Quickselect (Hoare partition, median-of-three pivot) on a scratch buffer."""
    cdef Py_ssize_t lo = 0, hi = n - 1, i, j, mid
    cdef double pivot
    while True:
        if lo >= hi:
            return a[k]
        mid = lo + (hi - lo) // 2
        # median-of-three pivot selection
        if a[mid] < a[lo]:
            _swap(a, mid, lo)
        if a[hi] < a[lo]:
            _swap(a, hi, lo)
        if a[hi] < a[mid]:
            _swap(a, hi, mid)
        pivot = a[mid]
        i = lo
        j = hi
        while i <= j:
            while a[i] < pivot:
                i += 1
            while a[j] > pivot:
                j -= 1
            if i <= j:
                _swap(a, i, j)
                i += 1
                j -= 1
        if k <= j:
            hi = j
        elif k >= i:
            lo = i
        else:
            return a[k]


def _check_group(cs):
    if cs.ndim != 2:
        raise ValueError("channel slices must be 2-D (C, N)")
    if cs.shape[1] == 0:
        raise ValueError("empty reduction group")


def tebn_stats(cnp.ndarray[double, ndim=2] cs):
    _check_group(cs)
    cdef Py_ssize_t C = cs.shape[0], N = cs.shape[1], c, i
    cdef cnp.ndarray[double, ndim=1] loc = np.empty(C)
    cdef cnp.ndarray[double, ndim=1] var = np.empty(C)
    cdef double acc, m, d
    for c in range(C):
        acc = 0.0
        for i in range(N):
            acc += cs[c, i]
        m = acc / N
        loc[c] = m
        acc = 0.0
        for i in range(N):
            d = cs[c, i] - m
            acc += d * d
        var[c] = acc / N
    return loc, var


def channel_median(cnp.ndarray[double, ndim=2] cs):
    _check_group(cs)
    cdef Py_ssize_t C = cs.shape[0], N = cs.shape[1], c, i, k = cs.shape[1] // 2
    cdef cnp.ndarray[double, ndim=1] vals = np.empty(C)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sel = np.empty(C, dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1] buf = np.empty(N)
    cdef double v
    for c in range(C):
        for i in range(N):
            buf[i] = cs[c, i]
        v = _kth_smallest(&buf[0], N, k)
        vals[c] = v
        for i in range(N):
            if cs[c, i] == v:
                sel[c] = i
                break
    return vals, sel


def medbn_stats(cnp.ndarray[double, ndim=2] cs):
    cdef Py_ssize_t C = cs.shape[0], N = cs.shape[1], c, i
    vals, sel = channel_median(cs)
    cdef cnp.ndarray[double, ndim=1] eta = vals
    cdef cnp.ndarray[double, ndim=1] rho2 = np.empty(C)
    cdef double acc, d, e
    for c in range(C):
        e = eta[c]
        acc = 0.0
        for i in range(N):
            d = cs[c, i] - e
            acc += d * d
        rho2[c] = acc / N
    return eta, rho2, sel


def mad_stats(cnp.ndarray[double, ndim=2] cs):
    cdef Py_ssize_t C = cs.shape[0], N = cs.shape[1], c, i, k = cs.shape[1] // 2
    eta_arr, sel_eta = channel_median(cs)
    cdef cnp.ndarray[double, ndim=1] eta = eta_arr
    cdef cnp.ndarray[double, ndim=1] mad = np.empty(C)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sel_dev = np.empty(C, dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1] dev = np.empty(N)
    cdef cnp.ndarray[double, ndim=1] buf = np.empty(N)
    cdef double v, e
    for c in range(C):
        e = eta[c]
        for i in range(N):
            dev[i] = fabs(cs[c, i] - e)
            buf[i] = dev[i]
        v = _kth_smallest(&buf[0], N, k)
        mad[c] = v
        for i in range(N):
            if dev[i] == v:
                sel_dev[c] = i
                break
    return eta, mad, sel_eta, sel_dev


def bn_forward(cnp.ndarray[double, ndim=2] cs,
               cnp.ndarray[double, ndim=1] loc,
               cnp.ndarray[double, ndim=1] scale_sq,
               cnp.ndarray[double, ndim=1] gamma,
               cnp.ndarray[double, ndim=1] beta,
               double eps):
    cdef Py_ssize_t C = cs.shape[0], N = cs.shape[1], c, i
    cdef cnp.ndarray[double, ndim=2] out = np.empty((C, N))
    cdef double a, b, l
    for c in range(C):
        l = loc[c]
        a = gamma[c] / sqrt(scale_sq[c] + eps)
        b = beta[c]
        for i in range(N):
            out[c, i] = a * (cs[c, i] - l) + b
    return out


def bn_backward_core(cnp.ndarray[double, ndim=2] cs,
                     cnp.ndarray[double, ndim=2] g,
                     cnp.ndarray[double, ndim=1] loc,
                     cnp.ndarray[double, ndim=1] scale_sq,
                     cnp.ndarray[double, ndim=1] gamma,
                     double eps):
    cdef Py_ssize_t C = cs.shape[0], N = cs.shape[1], c, i
    cdef cnp.ndarray[double, ndim=2] dz = np.empty((C, N))
    cdef cnp.ndarray[double, ndim=1] dgamma = np.empty(C)
    cdef cnp.ndarray[double, ndim=1] dbeta = np.empty(C)
    cdef cnp.ndarray[double, ndim=1] dloc = np.empty(C)
    cdef cnp.ndarray[double, ndim=1] dscale_sq = np.empty(C)
    cdef double s, l, gsum, gcsum, coef
    for c in range(C):
        s = sqrt(scale_sq[c] + eps)
        l = loc[c]
        gsum = 0.0
        gcsum = 0.0
        for i in range(N):
            gsum += g[c, i]
            gcsum += g[c, i] * (cs[c, i] - l)
        dbeta[c] = gsum
        dgamma[c] = gcsum / s
        coef = gamma[c] / s
        for i in range(N):
            dz[c, i] = g[c, i] * coef
        dloc[c] = -coef * gsum
        dscale_sq[c] = -(gamma[c] / (2.0 * s * s * s)) * gcsum
    return dz, dgamma, dbeta, dloc, dscale_sq


def tebn_stats_backward(cnp.ndarray[double, ndim=2] cs,
                        cnp.ndarray[double, ndim=1] cur_loc,
                        cnp.ndarray[double, ndim=1] dloc,
                        cnp.ndarray[double, ndim=1] dscale_sq,
                        cnp.ndarray[double, ndim=2] dz):
    cdef Py_ssize_t C = cs.shape[0], N = cs.shape[1], c, i
    cdef double a, b, l
    for c in range(C):
        a = dloc[c] / N
        b = dscale_sq[c] * 2.0 / N
        l = cur_loc[c]
        for i in range(N):
            dz[c, i] += a + b * (cs[c, i] - l)


def medbn_stats_backward(cnp.ndarray[double, ndim=2] cs,
                         cnp.ndarray[double, ndim=1] eta,
                         cnp.ndarray[cnp.int64_t, ndim=1] sel,
                         cnp.ndarray[double, ndim=1] dloc,
                         cnp.ndarray[double, ndim=1] dscale_sq,
                         cnp.ndarray[double, ndim=2] dz):
    cdef Py_ssize_t C = cs.shape[0], N = cs.shape[1], c, i
    cdef double b, e, acc
    for c in range(C):
        e = eta[c]
        b = dscale_sq[c] * 2.0 / N
        acc = 0.0
        for i in range(N):
            acc += cs[c, i] - e
            dz[c, i] += b * (cs[c, i] - e)
        dz[c, sel[c]] += dloc[c] - dscale_sq[c] * 2.0 * (acc / N)


def mad_stats_backward(cnp.ndarray[double, ndim=2] cs,
                       cnp.ndarray[double, ndim=1] eta,
                       cnp.ndarray[double, ndim=1] mad,
                       cnp.ndarray[cnp.int64_t, ndim=1] sel_eta,
                       cnp.ndarray[cnp.int64_t, ndim=1] sel_dev,
                       cnp.ndarray[double, ndim=1] dloc,
                       cnp.ndarray[double, ndim=1] dscale_sq,
                       cnp.ndarray[double, ndim=2] dz):
    cdef Py_ssize_t C = cs.shape[0], c
    cdef double sgn, d, dmad
    for c in range(C):
        d = cs[c, sel_dev[c]] - eta[c]
        sgn = 0.0
        if d > 0.0:
            sgn = 1.0
        elif d < 0.0:
            sgn = -1.0
        dmad = dscale_sq[c] * 2.0 * mad[c]
        dz[c, sel_dev[c]] += dmad * sgn
        dz[c, sel_eta[c]] -= dmad * sgn
        dz[c, sel_eta[c]] += dloc[c]
