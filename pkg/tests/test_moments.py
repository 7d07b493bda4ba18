import math

import numpy as np
import pytest
from scipy import stats

from conjmoments.errors import ContractError, DomainError, ResourceLimitError
from conjmoments.moments import (
    MomentSet,
    UncertaintySpec,
    distance_moments,
    distance_moments_by_powers,
    initial_monomial_moment,
    poly_expectation,
    quadrature_rule,
    univariate_moment,
)
from conjmoments.pipeline import encounter_maps, sample_block
from conjmoments.polyalg import TruncatedPoly, eval_many, get_basis


@pytest.mark.parametrize("k", range(0, 9))
def test_univariate_moments_match_scipy(k):
    assert univariate_moment("normal", 0.7, k) == pytest.approx(stats.norm(scale=0.7).moment(k), rel=1e-12, abs=1e-15)
    assert univariate_moment("uniform", 0.7, k) == pytest.approx(
        stats.uniform(loc=-0.7, scale=1.4).moment(k), rel=1e-12, abs=1e-15
    )


def test_scale_convention():
    base = UncertaintySpec.table2_normal()
    s01 = UncertaintySpec.table2_normal(0.1)
    var = UncertaintySpec.table2_normal(0.01, "var")
    # scaling the standard deviation by 0.1 scales variances by 0.01
    np.testing.assert_allclose(s01.axis_sizes_km() ** 2, 0.01 * base.axis_sizes_km() ** 2)
    np.testing.assert_allclose(var.axis_sizes_km(), s01.axis_sizes_km())
    assert base.axis_sizes_km()[1] == pytest.approx(math.sqrt(10.0) * 1e-3)
    box = UncertaintySpec.uniform_box(scale=10.0)
    np.testing.assert_allclose(box.axis_sizes_km(), 1e-2)


def test_spec_validation_and_round_trip():
    with pytest.raises(ContractError):
        UncertaintySpec("cauchy", (1, 1, 1), (1, 1, 1))
    with pytest.raises(DomainError):
        UncertaintySpec("normal", (-1, 1, 1), (1, 1, 1))
    with pytest.raises(DomainError):
        UncertaintySpec("normal", (1, 1, 1), (1, 1, 1), scale=0.0)
    spec = UncertaintySpec.uniform_box(2.0, 3.0)
    assert UncertaintySpec.from_dict(spec.to_dict()) == spec
    assert spec.swapped().params_a == spec.params_b


def test_initial_monomial_moment():
    spec = UncertaintySpec.table2_normal()
    sig = spec.axis_sizes_km()
    assert initial_monomial_moment(spec, (2, 0, 0, 0, 0, 0)) == pytest.approx(sig[0] ** 2)
    assert initial_monomial_moment(spec, (2, 2, 0, 0, 0, 4)) == pytest.approx(sig[0] ** 2 * sig[1] ** 2 * 3 * sig[5] ** 4)
    assert initial_monomial_moment(spec, (1, 0, 0, 0, 0, 0)) == 0.0
    with pytest.raises(ContractError):
        initial_monomial_moment(spec, (1, 2))


@pytest.mark.parametrize("kind", ["normal", "uniform"])
def test_quadrature_rules_are_exact(kind):
    x, w = quadrature_rule(kind, 6)
    assert w.sum() == pytest.approx(1.0, rel=1e-14)
    for k in range(12):
        assert np.sum(w * x**k) == pytest.approx(univariate_moment(kind, 1.0, k), rel=1e-12, abs=1e-14)


def test_poly_expectation_against_sampling():
    rng = np.random.default_rng(0)
    p = TruncatedPoly(6, 3, rng.standard_normal(get_basis(6, 3).size))
    spec = UncertaintySpec.table2_normal()
    exact = poly_expectation(p, spec, 1e-3)
    u = sample_block(spec, 1, 0, 400_000) / 1e-3
    vals = eval_many(p, u)
    se = vals.std() / math.sqrt(vals.size)
    assert abs(exact - vals.mean()) < 4 * se


def test_poly_expectation_of_quadratic_is_variance():
    spec = UncertaintySpec.uniform_box(scale=2.0)
    terms = {tuple(2 if i == j else 0 for i in range(6)): 1.0 for j in range(6)}
    p = TruncatedPoly.from_terms(terms, 6, 2)
    assert poly_expectation(p, spec) == pytest.approx(6 * (2e-3) ** 2 / 3, rel=1e-14)


@pytest.fixture(scope="module")
def row1_maps(rows):
    r = rows[1]
    return {o: encounter_maps(r.elements_a, r.elements_b, 3600.0, o) for o in (2, 4)}


def test_quadrature_moments_equal_polynomial_powers(row1_maps):
    spec = UncertaintySpec.table2_normal(10.0)
    maps = row1_maps[2]
    quad = distance_moments(maps, spec, M=4)
    powers = distance_moments_by_powers(maps, spec, M=4)
    np.testing.assert_allclose(quad.values, powers.values, rtol=1e-10)


@pytest.mark.parametrize("kind", ["normal", "uniform"])
def test_moments_against_map_sampling(row1_maps, kind):
    spec = UncertaintySpec.table2_normal() if kind == "normal" else UncertaintySpec.uniform_box(scale=10.0)
    maps = row1_maps[4]
    ms = distance_moments(maps, spec, M=4)
    d2 = eval_many(maps.d2, sample_block(spec, 7, 0, 300_000) / maps.length_scale)
    for k in range(1, 5):
        xk = d2**k
        se = xk.std() / math.sqrt(xk.size)
        assert abs(ms.values[k - 1] - xk.mean()) < 4 * se
    assert ms.mean == pytest.approx(ms.values[0], rel=1e-12)
    assert ms.variance == pytest.approx(ms.values[1] - ms.values[0] ** 2, rel=1e-8)
    assert ms.is_valid()


def test_degenerate_spec_gives_point_mass(row1_maps):
    spec = UncertaintySpec("normal", (0, 0, 0), (0, 0, 0))
    maps = row1_maps[4]
    ms = distance_moments(maps, spec, M=3)
    c = maps.d2.const
    np.testing.assert_allclose(ms.values, [c, c**2, c**3], rtol=1e-14)
    assert ms.variance == 0.0


def test_node_budget(row1_maps):
    with pytest.raises(ResourceLimitError):
        distance_moments(row1_maps[4], UncertaintySpec.table2_normal(), M=8, node_budget=1000)
    with pytest.raises(ContractError):
        distance_moments(row1_maps[4], UncertaintySpec.table2_normal(), M=1)


def test_moment_set_affine_and_json():
    # exponential(1): raw moments k!
    raw = tuple(float(math.factorial(k)) for k in range(1, 7))
    ms = MomentSet(raw)
    assert ms.mean == 1.0 and ms.variance == pytest.approx(1.0)
    central = ms.moments_about(1.0, 1.0)
    # central moments of Exp(1): 1, 0, 1, 2, 9, 44, 265
    np.testing.assert_allclose(central, [1, 0, 1, 2, 9, 44, 265], atol=1e-10)
    again = MomentSet.from_json(ms.to_json())
    assert again == ms
    assert ms.is_valid()
    bad = MomentSet((1.0, 0.5))  # variance < 0
    assert not bad.is_valid()
    with pytest.raises(DomainError):
        ms.moments_about(0.0, 0.0)
