import functools

import pytest

from poincare_stability.measure import build_measure
from poincare_stability.models import catalog

CATALOG_IDS = tuple(catalog())


@functools.lru_cache(maxsize=None)
def measure_for(name, n=4096):
    return build_measure(catalog()[name], n)


@functools.lru_cache(maxsize=None)
def ch_for(name):
    from poincare_stability.stein import compute_ch

    return compute_ch(measure_for(name))


@pytest.fixture(scope="session")
def gaussian():
    return measure_for("gaussian")


@pytest.fixture(params=CATALOG_IDS)
def any_measure(request):
    return measure_for(request.param)


@functools.lru_cache(maxsize=None)
def sweep_for(name):
    """(context, reports, seconds) of the default sweep for a catalog model."""
    import time

    from poincare_stability import harness

    t0 = time.perf_counter()
    cfg = harness.load_config(model=name)
    ctx = harness.prepare_base(cfg)
    reports = harness.run_sweep(cfg, ctx=ctx)
    return ctx, reports, time.perf_counter() - t0
