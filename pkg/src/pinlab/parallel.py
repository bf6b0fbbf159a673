"""Reproducible per-replica random streams and an ordered replica map."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np


def seed_stream(master_seed: int, replica_index) -> np.random.Generator:
    """Philox generator keyed by (master seed, replica index).

    The key is derived by ``SeedSequence(entropy=seed, spawn_key=(index,))``,
    so streams depend only on the pair and never on execution order.  A
    tuple index such as (cell, chunk) is used as the spawn key directly.
    """
    if master_seed is None:
        raise ValueError("a master seed is required")
    key = tuple(int(i) for i in replica_index) if isinstance(replica_index, tuple) else (int(replica_index),)
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def map_replicas(fn: Callable[[int, np.random.Generator], object], replicas: int, seed: int,
                 threads: int = 1, offset: int = 0, key: tuple = ()) -> list:
    """[fn(i, stream_i) for i in range(replicas)], results in replica order.

    Stream i is keyed by ``offset + i``, or by ``(*key, i)`` when a key
    prefix is given (used to separate experiment cells).
    """
    def job(i):
        return fn(i, seed_stream(seed, (*key, i) if key else offset + i))

    if threads <= 1:
        return [job(i) for i in range(replicas)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(job, range(replicas)))


def chunked(replicas: int, size: int) -> Sequence[range]:
    return [range(s, min(s + size, replicas)) for s in range(0, replicas, size)]
