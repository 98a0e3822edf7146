# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sliding-window power-cap enforcement.

Both entry points mirror ``raplprop._kernels_py`` exactly; see that module
for the algorithm.  ``hist`` holds the most recent delivered powers
(oldest first) and must be at least ``w - 1`` long.
"""

import numpy as np

from libc.math cimport INFINITY


def enforce_single(const double[::1] demand, double bound, Py_ssize_t w, const double[::1] hist):
    cdef Py_ssize_t n = demand.shape[0]
    cdef Py_ssize_t h = hist.shape[0]
    cdef Py_ssize_t i, j
    if w < 1 or w - 1 > h:
        raise ValueError("window of %d ticks needs %d history entries, have %d" % (w, w - 1, h))
    buf_arr = np.empty(h + n)
    scale_arr = np.ones(n)
    cdef double[::1] buf = buf_arr
    cdef double[::1] scale = scale_arr
    buf[:h] = hist
    cdef bint capped = bound != INFINITY
    cdef double budget = bound * w
    cdef double prior = 0.0
    cdef double d, p, allowed
    for j in range(h - (w - 1), h):
        prior += buf[j]
    for i in range(n):
        j = h + i
        d = demand[i]
        p = d
        if capped:
            allowed = budget - prior
            if d > allowed:
                p = allowed if allowed > 0.0 else 0.0
                scale[i] = p / d if d > 0.0 else 1.0
        buf[j] = p
        prior += p - buf[j - w + 1]
    return buf_arr[h:], scale_arr, buf_arr[n:].copy()


def enforce_nested(
    const double[::1] inner,
    const double[::1] rest,
    double inner_bound,
    Py_ssize_t inner_w,
    double outer_bound,
    Py_ssize_t outer_w,
    const double[::1] inner_hist,
    const double[::1] outer_hist,
):
    cdef Py_ssize_t n = inner.shape[0]
    cdef Py_ssize_t hi = inner_hist.shape[0]
    cdef Py_ssize_t ho = outer_hist.shape[0]
    cdef Py_ssize_t i, ji, jo
    if rest.shape[0] != n:
        raise ValueError("inner and rest demand lengths differ")
    if inner_w < 1 or inner_w - 1 > hi or outer_w < 1 or outer_w - 1 > ho:
        raise ValueError("history too short for the requested windows")
    ibuf_arr = np.empty(hi + n)
    obuf_arr = np.empty(ho + n)
    rest_out_arr = np.empty(n)
    iscale_arr = np.ones(n)
    oscale_arr = np.ones(n)
    cdef double[::1] ibuf = ibuf_arr
    cdef double[::1] obuf = obuf_arr
    cdef double[::1] rest_out = rest_out_arr
    cdef double[::1] iscale = iscale_arr
    cdef double[::1] oscale = oscale_arr
    ibuf[:hi] = inner_hist
    obuf[:ho] = outer_hist
    cdef bint icap = inner_bound != INFINITY
    cdef bint ocap = outer_bound != INFINITY
    cdef double ibudget = inner_bound * inner_w
    cdef double obudget = outer_bound * outer_w
    cdef double iprior = 0.0, oprior = 0.0
    cdef double c, r, pc, pr, pk, allowed, f
    for ji in range(hi - (inner_w - 1), hi):
        iprior += ibuf[ji]
    for jo in range(ho - (outer_w - 1), ho):
        oprior += obuf[jo]
    for i in range(n):
        ji = hi + i
        jo = ho + i
        c = inner[i]
        r = rest[i]
        pc = c
        pr = r
        if icap:
            allowed = ibudget - iprior
            if c > allowed:
                pc = allowed if allowed > 0.0 else 0.0
        if ocap:
            pk = pc + pr
            allowed = obudget - oprior
            if pk > allowed and pk > 0.0:
                f = (allowed if allowed > 0.0 else 0.0) / pk
                pc = pc * f
                pr = pr * f
        ibuf[ji] = pc
        obuf[jo] = pc + pr
        rest_out[i] = pr
        if c > 0.0:
            iscale[i] = pc / c
        if c + r > 0.0:
            oscale[i] = (pc + pr) / (c + r)
        iprior += pc - ibuf[ji - inner_w + 1]
        oprior += (pc + pr) - obuf[jo - outer_w + 1]
    return (
        ibuf_arr[hi:],
        rest_out_arr,
        iscale_arr,
        oscale_arr,
        ibuf_arr[n:].copy(),
        obuf_arr[n:].copy(),
    )
