import math

import numpy as np
import pytest

from poincare_stability.errors import InvalidParameter, NotStrictlyConvex
from poincare_stability.models import (build_model, catalog, check_assumptions, make_gamma, make_gaussian,
                                       make_log_concave_poly, make_quartic, make_sphere)


def test_catalog_ids():
    assert set(catalog()) == {"gaussian", "gamma_1_1", "gamma_2_0.5", "gamma_0.5_2", "gamma_5_1",
                              "sphere_1", "sphere_2", "sphere_3", "sphere_10", "quartic"}


@pytest.mark.parametrize("s,theta", [(1, 1), (2, 0.5), (0.5, 2), (5, 1)])
def test_gamma_h_is_pushforward_of_laguerre(s, theta):
    spec = make_gamma(s, theta)
    rs = math.sqrt(s)
    x = np.array([-3.0, 0.0, 0.5 * rs])
    assert np.allclose(spec.h(x), (1 - x / rs) / theta)
    assert spec.b == pytest.approx(rs)
    assert spec.lambda_mu == pytest.approx(1 / theta)


def test_sphere_interval_and_h():
    spec = make_sphere(3)
    assert (spec.a, spec.b) == (-2.0, 2.0)
    assert spec.h(np.array([0.0, 1.0])) == pytest.approx([4.0, 3.0])
    assert spec.lambda_mu == 3.0


def test_gaussian_constant_h():
    spec = make_gaussian(2.0)
    assert np.all(spec.h(np.linspace(-3, 3, 7)) == 0.5)


@pytest.mark.parametrize("bad", [0, -1, 2.5, True])
def test_sphere_rejects_bad_dimension(bad):
    with pytest.raises(InvalidParameter):
        make_sphere(bad)


def test_gamma_rejects_nonpositive():
    with pytest.raises(InvalidParameter):
        make_gamma(0, 1)
    with pytest.raises(InvalidParameter):
        make_gamma(1, -2)


def test_log_concave_requires_strict_convexity():
    with pytest.raises(NotStrictlyConvex):
        make_log_concave_poly([0, 0, 0, 0, 0.25])


def test_build_model_from_mapping():
    assert build_model({"family": "sphere", "d": 2}).lambda_mu == 2.0
    assert build_model({"family": "gamma", "s": 2, "theta": 0.5}).b == pytest.approx(math.sqrt(2))
    with pytest.raises(InvalidParameter):
        build_model({"family": "cauchy"})


def test_assumptions_ellipticity():
    assert check_assumptions(make_gaussian(1.0)).ellipticity_kappa == pytest.approx(1.0)
    assert check_assumptions(make_gamma(1, 1)).ellipticity_kappa is None
    assert check_assumptions(make_sphere(2)).ellipticity_kappa is None
    q = check_assumptions(make_quartic())
    assert q.ellipticity_kappa is not None and q.ellipticity_kappa > 0
    for spec in catalog().values():
        rep = check_assumptions(spec)
        assert rep.positivity_ok and rep.growth_ok_at_a and rep.growth_ok_at_b
