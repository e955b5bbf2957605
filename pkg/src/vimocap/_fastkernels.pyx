# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, sin, cos

cnp.import_array()


def gram_schmidt(r6):
    flat = np.ascontiguousarray(r6, dtype=np.float64).reshape(-1, 6)
    cdef Py_ssize_t n = flat.shape[0]
    cdef cnp.ndarray[double, ndim=3] out = np.empty((n, 3, 3))
    cdef const double[:, :] a = flat
    cdef double[:, :, :] o = out
    cdef Py_ssize_t i
    cdef double x0, x1, x2, y0, y1, y2, nrm, d
    with nogil:
        for i in range(n):
            x0 = a[i, 0]; x1 = a[i, 1]; x2 = a[i, 2]
            nrm = sqrt(x0 * x0 + x1 * x1 + x2 * x2)
            x0 = x0 / nrm; x1 = x1 / nrm; x2 = x2 / nrm
            d = x0 * a[i, 3] + x1 * a[i, 4] + x2 * a[i, 5]
            y0 = a[i, 3] - d * x0; y1 = a[i, 4] - d * x1; y2 = a[i, 5] - d * x2
            nrm = sqrt(y0 * y0 + y1 * y1 + y2 * y2)
            y0 = y0 / nrm; y1 = y1 / nrm; y2 = y2 / nrm
            o[i, 0, 0] = x0; o[i, 1, 0] = x1; o[i, 2, 0] = x2
            o[i, 0, 1] = y0; o[i, 1, 1] = y1; o[i, 2, 1] = y2
            o[i, 0, 2] = x1 * y2 - x2 * y1
            o[i, 1, 2] = x2 * y0 - x0 * y2
            o[i, 2, 2] = x0 * y1 - x1 * y0
    shape = np.shape(r6)[:-1] + (3, 3)
    return out.reshape(shape)


def euler_xyz_to_matrix(angles):
    cdef const double[:, :] a = np.ascontiguousarray(angles, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0]
    cdef cnp.ndarray[double, ndim=3] out = np.empty((n, 3, 3))
    cdef double[:, :, :] o = out
    cdef Py_ssize_t i
    cdef double ca, cb, cc, sa, sb, sc
    with nogil:
        for i in range(n):
            ca = cos(a[i, 0]); cb = cos(a[i, 1]); cc = cos(a[i, 2])
            sa = sin(a[i, 0]); sb = sin(a[i, 1]); sc = sin(a[i, 2])
            o[i, 0, 0] = cb * cc
            o[i, 0, 1] = -cb * sc
            o[i, 0, 2] = sb
            o[i, 1, 0] = ca * sc + sa * sb * cc
            o[i, 1, 1] = ca * cc - sa * sb * sc
            o[i, 1, 2] = -sa * cb
            o[i, 2, 0] = sa * sc - ca * sb * cc
            o[i, 2, 1] = sa * cc + ca * sb * sc
            o[i, 2, 2] = ca * cb
    return out


def forward_kinematics(parents, offsets, local_rot, root_t):
    cdef const long[:] par = np.ascontiguousarray(parents, dtype=np.int64)
    cdef const double[:, :] off = np.ascontiguousarray(offsets, dtype=np.float64)
    cdef const double[:, :, :, :] loc = np.ascontiguousarray(local_rot, dtype=np.float64)
    cdef const double[:, :] rt = np.ascontiguousarray(root_t, dtype=np.float64)
    cdef Py_ssize_t T = loc.shape[0]
    cdef Py_ssize_t J = loc.shape[1]
    cdef cnp.ndarray[double, ndim=3] pos_arr = np.empty((T, J, 3))
    cdef cnp.ndarray[double, ndim=4] glob_arr = np.empty((T, J, 3, 3))
    cdef double[:, :, :] pos = pos_arr
    cdef double[:, :, :, :] glob = glob_arr
    cdef Py_ssize_t t, j, p, r, c, k
    cdef double acc
    with nogil:
        for t in range(T):
            for r in range(3):
                pos[t, 0, r] = rt[t, r]
                for c in range(3):
                    glob[t, 0, r, c] = loc[t, 0, r, c]
            for j in range(1, J):
                p = par[j]
                for r in range(3):
                    acc = 0.0
                    for k in range(3):
                        acc = acc + glob[t, p, r, k] * off[j, k]
                    pos[t, j, r] = pos[t, p, r] + acc
                    for c in range(3):
                        acc = 0.0
                        for k in range(3):
                            acc = acc + glob[t, p, r, k] * loc[t, j, k, c]
                        glob[t, j, r, c] = acc
    return pos_arr, glob_arr


def project_points(points, rot, trans, double fx, double fy, double cx, double cy):
    cdef const double[:, :] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, :] R = np.ascontiguousarray(rot, dtype=np.float64)
    cdef const double[:] tv = np.ascontiguousarray(trans, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0]
    cdef cnp.ndarray[double, ndim=2] uv_arr = np.empty((n, 2))
    cdef cnp.ndarray[double, ndim=1] depth_arr = np.empty(n)
    cdef double[:, :] uv = uv_arr
    cdef double[:] depth = depth_arr
    cdef Py_ssize_t i
    cdef double x, y, z
    with nogil:
        for i in range(n):
            x = R[0, 0] * pts[i, 0] + R[0, 1] * pts[i, 1] + R[0, 2] * pts[i, 2] + tv[0]
            y = R[1, 0] * pts[i, 0] + R[1, 1] * pts[i, 1] + R[1, 2] * pts[i, 2] + tv[1]
            z = R[2, 0] * pts[i, 0] + R[2, 1] * pts[i, 1] + R[2, 2] * pts[i, 2] + tv[2]
            depth[i] = z
            uv[i, 0] = fx * x / z + cx
            uv[i, 1] = fy * y / z + cy
    return uv_arr, depth_arr


def second_difference(positions, double st):
    arr = np.ascontiguousarray(positions, dtype=np.float64)
    cdef Py_ssize_t T = arr.shape[0]
    if T < 3:
        return np.empty((0,) + arr.shape[1:])
    cdef const double[:, :] P = arr.reshape(T, -1)
    cdef Py_ssize_t m = P.shape[1]
    cdef cnp.ndarray[double, ndim=2] out_arr = np.empty((T - 2, m))
    cdef double[:, :] out = out_arr
    cdef double st2 = st * st
    cdef Py_ssize_t t, k
    with nogil:
        for t in range(T - 2):
            for k in range(m):
                out[t, k] = (P[t + 2, k] - 2.0 * P[t + 1, k] + P[t, k]) / st2
    return out_arr.reshape((T - 2,) + arr.shape[1:])
