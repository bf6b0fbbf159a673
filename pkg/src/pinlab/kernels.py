"""Backend selection for the hot loops plus buffer-managing wrappers.

The compiled extension is used when it imports; setting the environment
variable ``PINLAB_PURE_PYTHON=1`` forces the pure-Python reference.  Both
backends consume random buffers identically, so results do not depend on
the backend.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

if os.environ.get("PINLAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"


def backend_module(name: str | None = None):
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def renewal_mass(q, n: int, impl=None) -> np.ndarray:
    """u(0..n) for step law q by the direct O(n^2) recursion."""
    impl = impl or _impl
    return impl.renewal_mass(np.ascontiguousarray(q, dtype=float), int(n))


def _run_buffered(fn, rng, guess: int):
    """Call ``fn(buffer)`` with a growing uniform buffer until it suffices.

    Extending keeps the prefix, so the outcome is the same as with an
    infinite stream.
    """
    buf = rng.random(max(int(guess), 16))
    while True:
        used = fn(buf)
        if used >= 0:
            return used
        buf = np.concatenate((buf, rng.random(buf.size)))


def conditioned_renewal(q, Q, u, R: int, rng, impl=None) -> np.ndarray:
    """Points of a renewal in (0, R] conditioned on R being a point."""
    impl = impl or _impl
    q = np.ascontiguousarray(q, dtype=float)
    Q = np.ascontiguousarray(Q, dtype=float)
    u = np.ascontiguousarray(u, dtype=float)
    if u.size <= R or not u[R] > 0:
        raise FloatingPointError(f"renewal mass u({R}) is zero or missing")
    out = np.empty(R + 2, dtype=np.int64)
    _run_buffered(lambda b: impl.conditioned_renewal(q, Q, u, int(R), b, out), rng, 64)
    k = int(np.argmax(out < 0))
    return out[:k].copy()


def fill_excursions(taus, Js, sigma: float, N: int, rng, impl=None) -> np.ndarray:
    """Field values (offset 1) with exact zeros at the contacts and bridges between."""
    impl = impl or _impl
    taus = np.ascontiguousarray(taus, dtype=np.int64)
    Js = np.ascontiguousarray(Js, dtype=float)
    phi = np.zeros(N + 3)
    need = int(np.sum(np.diff(taus)[np.diff(taus) > 2])) if taus.size > 1 else 0
    normals = rng.standard_normal(need)
    used = impl.fill_excursions(taus, Js, float(sigma), normals, phi)
    if used != need:
        raise RuntimeError("excursion normal count mismatch")
    return phi


def sample_blocks(pos0, x0, r0, g, M, rng, impl=None):
    """Inner (tau, state) chains for a batch of chi-blocks.

    Returns (taus, states, offsets) with block i occupying
    ``offsets[i]:offsets[i+1]``.
    """
    impl = impl or _impl
    pos0 = np.ascontiguousarray(pos0, dtype=np.int64)
    x0 = np.ascontiguousarray(x0, dtype=np.int64)
    r0 = np.ascontiguousarray(r0, dtype=np.int64)
    cap = int(np.sum(r0)) + 1
    out_tau = np.empty(cap, dtype=np.int64)
    out_state = np.empty(cap, dtype=np.int64)
    offsets = np.empty(pos0.size + 1, dtype=np.int64)
    _run_buffered(lambda b: impl.sample_blocks(pos0, x0, r0, g, M, b, out_tau, out_state, offsets),
                  rng, 2 * pos0.size + int(np.sum(r0) // 4))
    n = int(offsets[-1])
    return out_tau[:n].copy(), out_state[:n].copy(), offsets


def sample_hit_chain(K, h, R: int, rng, impl=None):
    impl = impl or _impl
    out_tau = np.empty(R + 1, dtype=np.int64)
    out_state = np.empty(R + 1, dtype=np.int64)
    count = np.zeros(1, dtype=np.int64)
    _run_buffered(lambda b: impl.sample_hit_chain(K, h, int(R), b, out_tau, out_state, count), rng, 64)
    n = int(count[0])
    return out_tau[:n].copy(), out_state[:n].copy()
