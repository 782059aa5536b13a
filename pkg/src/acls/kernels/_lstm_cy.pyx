# cython: boundscheck=False, wraparound=False, cdivision=True
# Compiled recurrent sequence kernels: same contract as _pure.py, with the
# per-step loops in C. Gate order in the stacked arrays is
# (input, forget, cell-candidate, output), h rows each.

from libc.math cimport exp, tanh

import numpy as np


cdef inline double _sig(double v) nogil:
    return 1.0 / (1.0 + exp(-v))


def lstm_seq_forward(double[:, ::1] x, double[:, ::1] wx,
                     double[:, ::1] wh, double[::1] b):
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t h4 = b.shape[0]
    cdef Py_ssize_t h = h4 // 4
    hs_arr = np.empty((T, h), dtype=np.float64)
    cs_arr = np.empty((T, h), dtype=np.float64)
    gates_arr = np.empty((T, h4), dtype=np.float64)
    a_arr = np.empty(h4, dtype=np.float64)
    cdef double[:, ::1] hs = hs_arr
    cdef double[:, ::1] cs = cs_arr
    cdef double[:, ::1] gates = gates_arr
    cdef double[::1] a = a_arr
    cdef Py_ssize_t t, j, k
    cdef double acc, iv, fv, gv, ov, cv, c_prev

    with nogil:
        for t in range(T):
            for j in range(h4):
                acc = b[j]
                for k in range(d):
                    acc += wx[j, k] * x[t, k]
                if t > 0:
                    for k in range(h):
                        acc += wh[j, k] * hs[t - 1, k]
                a[j] = acc
            for k in range(h):
                iv = _sig(a[k])
                fv = _sig(a[h + k])
                gv = tanh(a[2 * h + k])
                ov = _sig(a[3 * h + k])
                c_prev = cs[t - 1, k] if t > 0 else 0.0
                cv = fv * c_prev + iv * gv
                cs[t, k] = cv
                hs[t, k] = ov * tanh(cv)
                gates[t, k] = iv
                gates[t, h + k] = fv
                gates[t, 2 * h + k] = gv
                gates[t, 3 * h + k] = ov
    return hs_arr, cs_arr, gates_arr


def lstm_seq_backward(double[:, ::1] x, double[:, ::1] hs, double[:, ::1] cs,
                      double[:, ::1] gates, double[:, ::1] wx,
                      double[:, ::1] wh, double[::1] d_h_final):
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t h = hs.shape[1]
    cdef Py_ssize_t h4 = 4 * h
    dx_arr = np.zeros((T, d), dtype=np.float64)
    dwx_arr = np.zeros((h4, d), dtype=np.float64)
    dwh_arr = np.zeros((h4, h), dtype=np.float64)
    db_arr = np.zeros(h4, dtype=np.float64)
    dh_arr = np.empty(h, dtype=np.float64)
    dc_arr = np.zeros(h, dtype=np.float64)
    da_arr = np.empty(h4, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[:, ::1] dwx = dwx_arr
    cdef double[:, ::1] dwh = dwh_arr
    cdef double[::1] db = db_arr
    cdef double[::1] dh = dh_arr
    cdef double[::1] dc = dc_arr
    cdef double[::1] da = da_arr
    cdef Py_ssize_t t, j, k
    cdef double iv, fv, gv, ov, tc, dck, c_prev, dav, acc

    for k in range(h):
        dh[k] = d_h_final[k]
    with nogil:
        for t in range(T - 1, -1, -1):
            for k in range(h):
                iv = gates[t, k]
                fv = gates[t, h + k]
                gv = gates[t, 2 * h + k]
                ov = gates[t, 3 * h + k]
                tc = tanh(cs[t, k])
                dck = dc[k] + dh[k] * ov * (1.0 - tc * tc)
                c_prev = cs[t - 1, k] if t > 0 else 0.0
                da[k] = dck * gv * iv * (1.0 - iv)
                da[h + k] = dck * c_prev * fv * (1.0 - fv)
                da[2 * h + k] = dck * iv * (1.0 - gv * gv)
                da[3 * h + k] = dh[k] * tc * ov * (1.0 - ov)
                dc[k] = dck * fv
            for j in range(h4):
                dav = da[j]
                db[j] += dav
                for k in range(d):
                    dwx[j, k] += dav * x[t, k]
                if t > 0:
                    for k in range(h):
                        dwh[j, k] += dav * hs[t - 1, k]
            for k in range(d):
                acc = 0.0
                for j in range(h4):
                    acc += wx[j, k] * da[j]
                dx[t, k] = acc
            for k in range(h):
                acc = 0.0
                for j in range(h4):
                    acc += wh[j, k] * da[j]
                dh[k] = acc
    return dx_arr, dwx_arr, dwh_arr, db_arr
