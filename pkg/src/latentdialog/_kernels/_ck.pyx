# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled training kernels: fused LSTM gates, Adam, softmax cross-entropy.

Semantics match latentdialog._kernels.numpy_backend exactly; the win is
fusing the elementwise loops that dominate small-batch recurrent training.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt, tanh, fabs

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    cdef double z = exp(-fabs(x))
    if x >= 0.0:
        return 1.0 / (1.0 + z)
    return z / (1.0 + z)


def sigmoid(cnp.ndarray x):
    out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = _sigmoid(xv[i])
    return out


def lstm_gates_forward(cnp.ndarray pre, cnp.ndarray c_prev):
    cdef Py_ssize_t b = pre.shape[0]
    cdef Py_ssize_t hid = pre.shape[1] // 4
    i_g = np.empty((b, hid), dtype=np.float64)
    f_g = np.empty((b, hid), dtype=np.float64)
    g_g = np.empty((b, hid), dtype=np.float64)
    o_g = np.empty((b, hid), dtype=np.float64)
    c = np.empty((b, hid), dtype=np.float64)
    tc = np.empty((b, hid), dtype=np.float64)
    h = np.empty((b, hid), dtype=np.float64)

    cdef double[:, ::1] pv = np.ascontiguousarray(pre)
    cdef double[:, ::1] cp = np.ascontiguousarray(c_prev)
    cdef double[:, ::1] iv = i_g, fv = f_g, gv = g_g, ov = o_g
    cdef double[:, ::1] cv = c, tv = tc, hv = h
    cdef Py_ssize_t r, k
    cdef double ig, fg, gg, og, cc

    with nogil:
        for r in range(b):
            for k in range(hid):
                ig = _sigmoid(pv[r, k])
                fg = _sigmoid(pv[r, hid + k])
                gg = tanh(pv[r, 2 * hid + k])
                og = _sigmoid(pv[r, 3 * hid + k])
                cc = fg * cp[r, k] + ig * gg
                iv[r, k] = ig
                fv[r, k] = fg
                gv[r, k] = gg
                ov[r, k] = og
                cv[r, k] = cc
                tv[r, k] = tanh(cc)
                hv[r, k] = og * tv[r, k]
    return h, c, (i_g, f_g, g_g, o_g, np.asarray(c_prev), tc)


def lstm_gates_backward(cnp.ndarray dh, cnp.ndarray dc_out, cache):
    i_g, f_g, g_g, o_g, c_prev, tc = cache
    cdef Py_ssize_t b = dh.shape[0]
    cdef Py_ssize_t hid = dh.shape[1]
    d_pre = np.empty((b, 4 * hid), dtype=np.float64)
    d_cprev = np.empty((b, hid), dtype=np.float64)

    cdef double[:, ::1] dhv = np.ascontiguousarray(dh)
    cdef double[:, ::1] dcv = np.ascontiguousarray(dc_out)
    cdef double[:, ::1] iv = i_g, fv = f_g, gv = g_g, ov = o_g
    cdef double[:, ::1] cp = np.ascontiguousarray(c_prev)
    cdef double[:, ::1] tv = tc
    cdef double[:, ::1] dp = d_pre
    cdef double[:, ::1] dcp = d_cprev
    cdef Py_ssize_t r, k
    cdef double dc, ig, fg, gg, og

    with nogil:
        for r in range(b):
            for k in range(hid):
                ig = iv[r, k]
                fg = fv[r, k]
                gg = gv[r, k]
                og = ov[r, k]
                dc = dcv[r, k] + dhv[r, k] * og * (1.0 - tv[r, k] * tv[r, k])
                dp[r, k] = dc * gg * ig * (1.0 - ig)
                dp[r, hid + k] = dc * cp[r, k] * fg * (1.0 - fg)
                dp[r, 2 * hid + k] = dc * ig * (1.0 - gg * gg)
                dp[r, 3 * hid + k] = dhv[r, k] * tv[r, k] * og * (1.0 - og)
                dcp[r, k] = dc * fg
    return d_pre, d_cprev


def adam_update(cnp.ndarray param, cnp.ndarray grad, cnp.ndarray m,
                cnp.ndarray v, long t, double lr, double beta1,
                double beta2, double eps):
    cdef double[::1] pv = param.ravel()
    cdef double[::1] gv = np.ascontiguousarray(grad).ravel()
    cdef double[::1] mv = m.ravel()
    cdef double[::1] vv = v.ravel()
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef Py_ssize_t i, n = pv.shape[0]
    cdef double g
    with nogil:
        for i in range(n):
            g = gv[i]
            mv[i] = beta1 * mv[i] + (1.0 - beta1) * g
            vv[i] = beta2 * vv[i] + (1.0 - beta2) * g * g
            pv[i] -= lr * (mv[i] / bc1) / (sqrt(vv[i] / bc2) + eps)


def softmax_xent_forward(cnp.ndarray logits, cnp.ndarray targets):
    cdef Py_ssize_t n = logits.shape[0]
    cdef Py_ssize_t vsz = logits.shape[1]
    probs = np.empty((n, vsz), dtype=np.float64)
    loss = np.empty(n, dtype=np.float64)

    cdef double[:, ::1] lv = np.ascontiguousarray(logits)
    cdef double[:, ::1] pv = probs
    cdef double[::1] lo = loss
    cdef long[::1] tv = np.ascontiguousarray(targets, dtype=np.int64)
    cdef Py_ssize_t r, k
    cdef double mx, z

    with nogil:
        for r in range(n):
            mx = lv[r, 0]
            for k in range(1, vsz):
                if lv[r, k] > mx:
                    mx = lv[r, k]
            z = 0.0
            for k in range(vsz):
                pv[r, k] = exp(lv[r, k] - mx)
                z += pv[r, k]
            for k in range(vsz):
                pv[r, k] /= z
            lo[r] = (log(z) + mx) - lv[r, tv[r]]
    return loss, probs


def softmax_xent_backward(cnp.ndarray probs, cnp.ndarray targets,
                          cnp.ndarray dloss):
    cdef Py_ssize_t n = probs.shape[0]
    cdef Py_ssize_t vsz = probs.shape[1]
    dlogits = np.empty((n, vsz), dtype=np.float64)
    cdef double[:, ::1] pv = np.ascontiguousarray(probs)
    cdef double[:, ::1] dv = dlogits
    cdef double[::1] dl = np.ascontiguousarray(dloss)
    cdef long[::1] tv = np.ascontiguousarray(targets, dtype=np.int64)
    cdef Py_ssize_t r, k
    with nogil:
        for r in range(n):
            for k in range(vsz):
                dv[r, k] = pv[r, k] * dl[r]
            dv[r, tv[r]] -= dl[r]
    return dlogits
