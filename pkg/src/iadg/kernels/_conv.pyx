# Compiled convolution kernels. Same tap accumulation order (cin, kh, kw)
# as the numpy fallback so both backends agree bit for bit.

import numpy as np
cimport numpy as cnp

cnp.import_array()


def conv2d_fwd(double[:, :, :, ::1] xp, double[:, :, :, ::1] k, int stride):
    cdef Py_ssize_t n = xp.shape[0], cin = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t cout = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t oh = (hp - kh) // stride + 1
    cdef Py_ssize_t ow = (wp - kw) // stride + 1
    out_arr = np.zeros((n, cout, oh, ow))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, co, ci, i, j, y, x
    cdef double kv
    for b in range(n):
        for co in range(cout):
            for ci in range(cin):
                for i in range(kh):
                    for j in range(kw):
                        kv = k[co, ci, i, j]
                        for y in range(oh):
                            for x in range(ow):
                                out[b, co, y, x] += kv * xp[b, ci, y * stride + i, x * stride + j]
    return out_arr


def conv2d_bwd(double[:, :, :, ::1] go, double[:, :, :, ::1] xp,
               double[:, :, :, ::1] k, int stride):
    cdef Py_ssize_t n = xp.shape[0], cin = xp.shape[1]
    cdef Py_ssize_t cout = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t oh = go.shape[2], ow = go.shape[3]
    gxp_arr = np.zeros((xp.shape[0], xp.shape[1], xp.shape[2], xp.shape[3]))
    gk_arr = np.zeros((k.shape[0], k.shape[1], k.shape[2], k.shape[3]))
    gb_arr = np.zeros(cout)
    cdef double[:, :, :, ::1] gxp = gxp_arr
    cdef double[:, :, :, ::1] gk = gk_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t b, co, ci, i, j, y, x
    cdef double g, kv, acc
    for b in range(n):
        for co in range(cout):
            for y in range(oh):
                for x in range(ow):
                    gb[co] += go[b, co, y, x]
    for b in range(n):
        for co in range(cout):
            for ci in range(cin):
                for i in range(kh):
                    for j in range(kw):
                        kv = k[co, ci, i, j]
                        acc = 0.0
                        for y in range(oh):
                            for x in range(ow):
                                g = go[b, co, y, x]
                                acc += g * xp[b, ci, y * stride + i, x * stride + j]
                                gxp[b, ci, y * stride + i, x * stride + j] += g * kv
                        gk[co, ci, i, j] += acc
    return gxp_arr, gk_arr, gb_arr


def dwconv_fwd(double[:, :, :, ::1] xp, double[:, :, :, ::1] k):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t oh = hp - kh + 1, ow = wp - kw + 1
    out_arr = np.zeros((n, c, oh, ow))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, y, x
    cdef double kv
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    kv = k[b, ch, i, j]
                    for y in range(oh):
                        for x in range(ow):
                            out[b, ch, y, x] += kv * xp[b, ch, y + i, x + j]
    return out_arr


def dwconv_bwd(double[:, :, :, ::1] go, double[:, :, :, ::1] xp,
               double[:, :, :, ::1] k):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t oh = go.shape[2], ow = go.shape[3]
    gxp_arr = np.zeros((xp.shape[0], xp.shape[1], xp.shape[2], xp.shape[3]))
    gk_arr = np.zeros((k.shape[0], k.shape[1], k.shape[2], k.shape[3]))
    cdef double[:, :, :, ::1] gxp = gxp_arr
    cdef double[:, :, :, ::1] gk = gk_arr
    cdef Py_ssize_t b, ch, i, j, y, x
    cdef double g, kv, acc
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    kv = k[b, ch, i, j]
                    acc = 0.0
                    for y in range(oh):
                        for x in range(ow):
                            g = go[b, ch, y, x]
                            acc += g * xp[b, ch, y + i, x + j]
                            gxp[b, ch, y + i, x + j] += g * kv
                    gk[b, ch, i, j] += acc
    return gxp_arr, gk_arr
