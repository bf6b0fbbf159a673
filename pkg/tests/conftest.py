import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pinlab.model import PotentialSpec
from pinlab.transfer import GridSpec, KernelCache

settings.register_profile("pinlab", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pinlab")


@pytest.fixture(scope="session")
def cache(tmp_path_factory):
    """Kernel cache shared by the session; PINLAB_CACHE_DIR makes it persistent."""
    d = os.environ.get("PINLAB_CACHE_DIR") or str(tmp_path_factory.mktemp("kernel-cache"))
    return KernelCache(d)


@pytest.fixture(scope="session")
def pot():
    return PotentialSpec.gaussian()


@pytest.fixture(scope="session")
def grid():
    return GridSpec.default()


@pytest.fixture(scope="session")
def eps_c(cache, grid, pot):
    return cache.eps_c(grid, pot, 2 ** 14)


@pytest.fixture(scope="session")
def kernels3(cache, grid, pot, eps_c):
    """Kernels at 0.5, 1 and 2 times eps_c."""
    return {r: cache.kernel(r * eps_c, grid, pot, 2 ** 14) for r in (0.5, 1.0, 2.0)}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one status line per acceptance criterion."""
    def record(n, ok, detail):
        _ACCEPTANCE[n] = f"CRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}"
        print(_ACCEPTANCE[n])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
