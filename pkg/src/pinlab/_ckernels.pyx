# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the sampling loops in ``_pykernels``."""

import numpy as np

ctypedef long long i64


def renewal_mass(double[::1] q, Py_ssize_t n):
    cdef Py_ssize_t L = q.shape[0] - 1
    cdef Py_ssize_t k, j, top
    cdef double s
    out = np.zeros(n + 1)
    cdef double[::1] u = out
    u[0] = 1.0
    for k in range(1, n + 1):
        s = 0.0
        top = k if k < L else L
        for j in range(1, top + 1):
            s += q[j] * u[k - j]
        u[k] = s
    return out


cdef inline Py_ssize_t _search(const double[::1] Q, double target, Py_ssize_t lo, Py_ssize_t hi) nogil:
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if Q[mid] >= target:
            hi = mid
        else:
            lo = mid + 1
    return lo


def conditioned_renewal(const double[::1] q, const double[::1] Q, const double[::1] u, i64 R,
                        const double[::1] unif, i64[::1] out):
    cdef Py_ssize_t L = q.shape[0] - 1
    cdef Py_ssize_t nu = unif.shape[0]
    cdef Py_ssize_t iu = 0, cnt = 0, rem, top, j, jj, last
    cdef i64 pos = 0
    cdef double target, acc, w
    cdef bint ok
    with nogil:
        while pos < R:
            rem = R - pos
            top = rem if rem < L else L
            j = 0
            if Q[top] < 64.0 * u[rem]:
                while True:
                    if iu + 2 > nu:
                        with gil:
                            return -1
                    j = _search(Q, unif[iu] * Q[top], 1, top)
                    ok = unif[iu + 1] * 1.0 <= u[rem - j]
                    iu += 2
                    if ok and q[j] > 0:
                        break
            else:
                if iu + 1 > nu:
                    with gil:
                        return -1
                target = unif[iu] * u[rem]
                iu += 1
                acc = 0.0
                last = 0
                for jj in range(1, top + 1):
                    w = q[jj] * u[rem - jj]
                    if w > 0:
                        last = jj
                    acc += w
                    if acc >= target and w > 0:
                        j = jj
                        break
                if j == 0:
                    j = last
            pos += j
            out[cnt] = pos
            cnt += 1
        out[cnt] = -1
    return iu


def fill_excursions(const i64[::1] taus, const double[::1] Js, double sigma,
                    const double[::1] normals, double[::1] phi):
    cdef Py_ssize_t nk = taus.shape[0], nn = normals.shape[0]
    cdef Py_ssize_t used = 0, k, i, base
    cdef i64 t0, l
    cdef double a, b, y, z, r1, r2, lf, C, V, D, a1, a2, fi, c1, c2
    with nogil:
        for k in range(1, nk):
            t0 = taus[k - 1]
            l = taus[k] - t0
            a = Js[k - 1]
            b = Js[k]
            if l == 1:
                continue
            if l == 2:
                phi[t0 + 2] = b
                continue
            if used + l > nn:
                with gil:
                    return -1
            y = -a
            z = 0.0
            base = t0 + 1
            for i in range(1, l):
                y += sigma * normals[used + i - 1]
                z += y
                phi[base + i] = z
            y += sigma * normals[used + l - 1]
            z += y
            used += l
            r1 = -b - y
            r2 = -z
            lf = <double>l
            C = lf * (lf + 1.0) / 2.0
            V = lf * (lf + 1.0) * (2.0 * lf + 1.0) / 6.0
            D = lf * lf * (lf * lf - 1.0) / 12.0
            a1 = (V * r1 - C * r2) / D
            a2 = (-C * r1 + lf * r2) / D
            for i in range(1, l - 1):
                fi = <double>i
                c1 = fi * (fi + 1.0) / 2.0
                c2 = fi * (fi + 1.0) * (2.0 * fi + 1.0) / 6.0 + (lf - fi) * c1
                phi[base + i] += c1 * a1 + c2 * a2
            phi[base + l - 1] = b
    return used


def sample_blocks(const i64[::1] pos0, const i64[::1] x0, const i64[::1] r0,
                  const double[:, ::1] g, const double[:, :, ::1] M, const double[::1] unif,
                  i64[::1] out_tau, i64[::1] out_state, i64[::1] offsets):
    cdef Py_ssize_t nb = pos0.shape[0], S = g.shape[1], nu = unif.shape[0]
    cdef Py_ssize_t iu = 0, cnt = 0, bi, l, y, last_l, last_y
    cdef i64 pos, x, r
    cdef double target, acc, w
    cdef bint found
    cdef bint failed = False
    with nogil:
        for bi in range(nb):
            offsets[bi] = cnt
            pos = pos0[bi]
            x = x0[bi]
            r = r0[bi]
            while r > 1:
                if iu >= nu:
                    with gil:
                        return -1
                target = unif[iu] * g[r, x]
                iu += 1
                acc = 0.0
                last_l = 0
                last_y = 0
                found = False
                for l in range(2, r):
                    for y in range(1, S):
                        w = M[l, x, y] * g[r - l, y]
                        if w > 0:
                            acc += w
                            last_l = l
                            last_y = y
                            if acc >= target:
                                found = True
                                break
                    if found:
                        break
                if last_l == 0:
                    failed = True
                    break
                pos += last_l
                r -= last_l
                x = last_y
                out_tau[cnt] = pos
                out_state[cnt] = last_y
                cnt += 1
            if failed:
                break
            out_tau[cnt] = pos + 1
            out_state[cnt] = 0
            cnt += 1
        offsets[nb] = cnt
    if failed:
        raise FloatingPointError("block table underflow")
    return iu


def sample_hit_chain(const double[:, :, ::1] K, const double[:, ::1] h, i64 R,
                     const double[::1] unif, i64[::1] out_tau, i64[::1] out_state, i64[::1] count):
    cdef Py_ssize_t S = h.shape[1], nu = unif.shape[0]
    cdef Py_ssize_t iu = 0, cnt = 0, l, y, cl, cy
    cdef i64 x = 0, pos = 0, r
    cdef double target, acc, w
    cdef bint done
    cdef bint failed = False
    with nogil:
        while pos < R:
            r = R - pos
            if iu >= nu:
                with gil:
                    return -1
            target = unif[iu] * h[r, x]
            iu += 1
            acc = 0.0
            cl = 0
            cy = 0
            done = False
            for l in range(1, r + 1):
                if l == 1:
                    w = K[1, x, 0] * h[r - 1, 0]
                    if w > 0:
                        acc += w
                        cl = 1
                        cy = 0
                        if acc >= target:
                            break
                    continue
                for y in range(1, S):
                    w = K[l, x, y] * h[r - l, y]
                    if w > 0:
                        acc += w
                        cl = l
                        cy = y
                        if acc >= target:
                            done = True
                            break
                if done:
                    break
            if cl == 0:
                failed = True
                break
            pos += cl
            x = cy
            out_tau[cnt] = pos
            out_state[cnt] = cy
            cnt += 1
        count[0] = cnt
    if failed:
        raise FloatingPointError("hit table underflow")
    return iu
