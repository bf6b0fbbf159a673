"""Pure-Python reference implementations of the hot sampling loops.

Every function mirrors ``_ckernels`` exactly: same arguments, same loop
order, same consumption of the uniform/normal buffers.  Functions that draw
from a buffer return the number of entries consumed, or -1 when the buffer
ran out (the caller then extends it and retries).
"""

import math

import numpy as np


def renewal_mass(q, n):
    q = np.asarray(q, dtype=float)
    L = q.shape[0] - 1
    u = np.zeros(n + 1)
    u[0] = 1.0
    for k in range(1, n + 1):
        s = 0.0
        for j in range(1, min(k, L) + 1):
            s += q[j] * u[k - j]
        u[k] = s
    return u


def _search(Q, target, lo, hi):
    # first j in [lo, hi] with Q[j] >= target
    while lo < hi:
        mid = (lo + hi) >> 1
        if Q[mid] >= target:
            hi = mid
        else:
            lo = mid + 1
    return lo


def conditioned_renewal(q, Q, u, R, unif, out):
    """Renewal points in (0, R] conditioned on R being a point."""
    L = q.shape[0] - 1
    nu = unif.shape[0]
    iu = 0
    pos = 0
    cnt = 0
    while pos < R:
        rem = R - pos
        top = rem if rem < L else L
        j = 0
        if Q[top] < 64.0 * u[rem]:
            while True:
                if iu + 2 > nu:
                    return -1
                j = _search(Q, unif[iu] * Q[top], 1, top)
                ok = unif[iu + 1] * 1.0 <= u[rem - j]
                iu += 2
                if ok and q[j] > 0:
                    break
        else:
            if iu + 1 > nu:
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


def fill_excursions(taus, Js, sigma, normals, phi):
    """Fill the interior of every excursion between consecutive contacts.

    ``phi`` is indexed with offset 1 (phi[i + 1] is site i).  Returns the
    number of normals consumed or -1.
    """
    nk = taus.shape[0]
    nn = normals.shape[0]
    used = 0
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
        lf = float(l)
        C = lf * (lf + 1.0) / 2.0
        V = lf * (lf + 1.0) * (2.0 * lf + 1.0) / 6.0
        D = lf * lf * (lf * lf - 1.0) / 12.0
        a1 = (V * r1 - C * r2) / D
        a2 = (-C * r1 + lf * r2) / D
        for i in range(1, l - 1):
            fi = float(i)
            c1 = fi * (fi + 1.0) / 2.0
            c2 = fi * (fi + 1.0) * (2.0 * fi + 1.0) / 6.0 + (lf - fi) * c1
            phi[base + i] += c1 * a1 + c2 * a2
        phi[base + l - 1] = b
    return used


def _block_step(g, M, x, r, S, target):
    # choose (l, y) with weight M[l, x, y] g[r - l, y], early exit
    acc = 0.0
    last_l = 0
    last_y = 0
    for l in range(2, r):
        for y in range(1, S):
            w = M[l, x, y] * g[r - l, y]
            if w > 0:
                acc += w
                last_l = l
                last_y = y
                if acc >= target:
                    return l, y
    return last_l, last_y


def sample_blocks(pos0, x0, r0, g, M, unif, out_tau, out_state, offsets):
    """Inner chains of chi-blocks; block i starts at (pos0[i], state x0[i], remaining r0[i])."""
    nb = pos0.shape[0]
    S = g.shape[1]
    nu = unif.shape[0]
    iu = 0
    cnt = 0
    for b in range(nb):
        offsets[b] = cnt
        pos = pos0[b]
        x = x0[b]
        r = r0[b]
        while r > 1:
            if iu >= nu:
                return -1
            target = unif[iu] * g[r, x]
            iu += 1
            l, y = _block_step(g, M, x, r, S, target)
            if l == 0:
                raise FloatingPointError("block table underflow")
            pos += l
            r -= l
            x = y
            out_tau[cnt] = pos
            out_state[cnt] = y
            cnt += 1
        out_tau[cnt] = pos + 1
        out_state[cnt] = 0
        cnt += 1
    offsets[nb] = cnt
    return iu


def sample_hit_chain(K, h, R, unif, out_tau, out_state, count):
    """(tau, J) chain from the atom conditioned to visit (R, atom)."""
    S = h.shape[1]
    nu = unif.shape[0]
    iu = 0
    cnt = 0
    x = 0
    pos = 0
    while pos < R:
        r = R - pos
        if iu >= nu:
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
            raise FloatingPointError("hit table underflow")
        pos += cl
        x = cy
        out_tau[cnt] = pos
        out_state[cnt] = cy
        cnt += 1
    count[0] = cnt
    return iu
