import numpy as np
import pytest

from conjmoments.dynamics import (
    CartesianState,
    KeplerElements,
    elements_to_state,
    find_closest_approach,
    orbital_period,
)
from conjmoments.errors import ContractError, NonInvertibleMapError
from conjmoments.eventmap import (
    POSITION_VARS,
    EventSystem,
    MapScales,
    build_ca_maps,
    build_fixed_time_map,
    default_scales,
    event_inversion,
    initial_event_expansion,
)
from conjmoments.pipeline import nominal_encounter
from conjmoments.polyalg import PolyMap, poly_eval

BACK_PROP = 3600.0


def system(rows, rid):
    r = rows[rid]
    enc = nominal_encounter(r.elements_a, r.elements_b, BACK_PROP)
    return enc, EventSystem.two_body_pair(enc.state_a, enc.state_b, enc.t_ca)


def redetect(enc, dx):
    y = np.concatenate([enc.state_a.as_array(), enc.state_b.as_array()])
    y[list(POSITION_VARS)] += dx
    a, b = CartesianState.from_array(y[:6]), CartesianState.from_array(y[6:])
    period = min(orbital_period(a), orbital_period(b))
    return find_closest_approach(a, b, period, start=enc.t_ca - 0.5 * period, target=enc.t_ca)


@pytest.mark.parametrize("rid", [1, 6])
def test_fixed_time_map_constant_is_final_state(rows, rid):
    enc, sys = system(rows, rid)
    scales = default_scales(sys)
    fixed = build_fixed_time_map(sys, 2, POSITION_VARS, scales)
    const = fixed.constants()
    np.testing.assert_allclose(const[:12], sys.final_state(), rtol=0, atol=1e-7)
    # eps(t_f) is the nominal event function, which vanishes at closest approach
    assert abs(const[12]) < 1e-9 * np.linalg.norm(const[3:6] - const[9:12]) ** 2 * enc.t_ca


@pytest.mark.parametrize("rid", [1, 6])
def test_inversion_identity(rows, rid):
    _, sys = system(rows, rid)
    maps = build_ca_maps(sys, 4)
    inv = maps.inversion
    n = inv.forward.nvars
    ident = PolyMap.identity(n, 4).coeff_array()
    for comp in (inv.forward.compose(inv.inverse), inv.inverse.compose(inv.forward)):
        assert np.max(np.abs(comp.coeff_array() - ident)) < 1e-10
    np.testing.assert_allclose(maps.jacobian_diagonal, 1.0, atol=1e-12)


@pytest.mark.parametrize("rid", [1, 6])
def test_nominal_constant_terms(rows, rid):
    enc, sys = system(rows, rid)
    maps = build_ca_maps(sys, 3)
    assert maps.time.const == 0.0
    assert maps.d2.const == pytest.approx(enc.d_ca**2, rel=1e-9)
    assert maps.event_rate > 0.0


@pytest.mark.parametrize(
    "rid, sigma, t_tol, d2_rtol, x_tol",
    [(1, 0.005, 1e-9, 1e-7, 1e-7), (6, 0.001, 1e-3, 1e-5, 1e-3)],
)
def test_event_time_and_distance_match_redetection(rows, rid, sigma, t_tol, d2_rtol, x_tol):
    enc, sys = system(rows, rid)
    maps = build_ca_maps(sys, 4)
    rng = np.random.default_rng(rid)
    for _ in range(4):
        dx = rng.normal(0.0, sigma, 6)
        ca = redetect(enc, dx)
        xi = maps.to_map_vars(dx)
        assert poly_eval(maps.time, xi) == pytest.approx(ca.t_ca - enc.t_ca, abs=t_tol)
        assert poly_eval(maps.d2, xi) == pytest.approx(ca.d_ca**2, rel=d2_rtol)
        np.testing.assert_allclose(maps.state.eval(xi), ca.state, rtol=0, atol=x_tol)


def test_distance_error_shrinks_with_order(rows):
    enc, sys = system(rows, 6)
    rng = np.random.default_rng(3)
    dxs = [rng.normal(0.0, 0.01, 6) for _ in range(5)]
    truth = [redetect(enc, dx).d_ca ** 2 for dx in dxs]
    errs = []
    for order in (1, 2, 3):
        maps = build_ca_maps(sys, order)
        errs.append(max(abs(poly_eval(maps.d2, maps.to_map_vars(dx)) - t) / t for dx, t in zip(dxs, truth)))
    assert errs[0] > errs[1] > errs[2]


def test_initial_event_expansion_matches_direct(rows):
    enc, sys = system(rows, 1)
    e0 = initial_event_expansion(sys, POSITION_VARS, 2, 1.0)
    dx = np.array([0.01, -0.02, 0.005, 0.0, 0.01, -0.01])
    y = sys.x0.copy()
    y[list(POSITION_VARS)] += dx

    def ev(z):
        return (z[0:3] - z[6:9]) @ (z[3:6] - z[9:12])

    # the event function is bilinear in position and velocity, so degree 2 is exact
    assert poly_eval(e0, dx) == pytest.approx(ev(y) - ev(sys.x0), rel=1e-12)


def test_transversality_failure_is_reported():
    a = elements_to_state(KeplerElements(7000.0, 0.0, 0.5, 0.0, 0.0, 0.0))
    b = elements_to_state(KeplerElements(7000.0, 0.0, 0.5, 0.0, 0.0, 1e-4))
    sys = EventSystem.two_body_pair(a, b, 600.0)
    with pytest.raises(NonInvertibleMapError):
        build_ca_maps(sys, 3)
    fixed = build_fixed_time_map(sys, 2, POSITION_VARS, MapScales())
    with pytest.raises(NonInvertibleMapError):
        event_inversion(fixed, min_slope=1e-12)


def test_variable_selection_validated(rows):
    _, sys = system(rows, 1)
    with pytest.raises(ContractError):
        build_ca_maps(sys, 2, uncertain_vars=(0, 0, 1))
    with pytest.raises(ContractError):
        build_ca_maps(sys, 2, uncertain_vars=(0, 12))
    with pytest.raises(ContractError):
        MapScales(length=0.0)


def test_velocity_uncertainty_supported(rows):
    enc, sys = system(rows, 1)
    maps = build_ca_maps(sys, 3, uncertain_vars=(0, 1, 2, 3, 4, 5), scales=MapScales(1e-3, 1e-3))
    d = np.array([0.002, 0.0, -0.001, 1e-6, 0.0, 2e-6])
    y = np.concatenate([enc.state_a.as_array(), enc.state_b.as_array()])
    y[:6] += d
    a, b = CartesianState.from_array(y[:6]), CartesianState.from_array(y[6:])
    period = orbital_period(a)
    ca = find_closest_approach(a, b, period, start=enc.t_ca - 0.5 * period, target=enc.t_ca)
    assert poly_eval(maps.d2, d / 1e-3) == pytest.approx(ca.d_ca**2, rel=1e-6)
