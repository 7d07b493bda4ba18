"""Taylor maps of a two-spacecraft encounter onto the closest-approach manifold.

The closest approach is the zero of ``e = r_rel . v_rel``.  The dynamics is
augmented with ``eps`` (``d eps/dt = grad(e) . f``) and time is rescaled to
``tau = t / T`` with ``T = t_f + dT`` carried as a map variable.  Inverting
the map ``(dx0, d eps0, dT) -> (dx0, d eps0, d eps_f)`` gives the event time
``dT`` as a polynomial in the initial perturbation, which is substituted
back into the fixed-time map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dynamics import (
    MU_EARTH,
    CartesianState,
    JetOps,
    RealOps,
    integrate,
    kepler_rhs,
    JET_RTOL,
)
from .errors import ContractError, NonInvertibleMapError
from .polyalg import (
    PolyMap,
    TruncatedPoly,
    embed,
    get_basis,
    map_invert,
    poly_compose,
)

POSITION_VARS = (0, 1, 2, 6, 7, 8)
STATE_LABELS = (
    "dx_A", "dy_A", "dz_A", "dvx_A", "dvy_A", "dvz_A",
    "dx_B", "dy_B", "dz_B", "dvx_B", "dvy_B", "dvz_B",
)


def _pair_rhs(mu):
    def rhs(ops, x):
        return kepler_rhs(ops, x, mu)

    return rhs


def _pair_event(ops, x):
    dr = x[0:3] - x[6:9]
    dv = x[3:6] - x[9:12]
    return ops.mul(dr, dv).sum(axis=0)


def _pair_event_rate(ops, x, f):
    dr = x[0:3] - x[6:9]
    dv = x[3:6] - x[9:12]
    da = f[3:6] - f[9:12]
    return ops.mul(dv, dv).sum(axis=0) + ops.mul(dr, da).sum(axis=0)


@dataclass(frozen=True)
class EventSystem:
    """Autonomous dynamics with a scalar event function.

    Attributes:
        x0: Nominal initial state.
        t_f: Nominal event time measured from the epoch of ``x0``.
        rhs: ``rhs(ops, x) -> dx/dt`` over real or jet arithmetic.
        event: ``event(ops, x) -> e``.
        event_rate: ``event_rate(ops, x, f) -> grad(e) . f``.
    """

    x0: np.ndarray
    t_f: float
    rhs: Callable
    event: Callable
    event_rate: Callable
    labels: tuple[str, ...] = ()

    @classmethod
    def two_body_pair(
        cls, state_a: CartesianState, state_b: CartesianState, t_f: float, mu: float = MU_EARTH
    ) -> "EventSystem":
        x0 = np.concatenate([state_a.as_array(), state_b.as_array()])
        return cls(x0, float(t_f), _pair_rhs(mu), _pair_event, _pair_event_rate, STATE_LABELS)

    @property
    def dim(self) -> int:
        return int(np.asarray(self.x0).size)

    def _labels(self):
        return self.labels or tuple(f"d{i}" for i in range(self.dim))

    def final_state(self, rtol: float = 1e-13) -> np.ndarray:
        """Nominal state at ``t_f`` (float integration)."""
        ops = RealOps()
        return integrate(
            lambda t, y: self.rhs(ops, y), np.asarray(self.x0, dtype=float), 0.0, self.t_f,
            rtol=rtol, atol=rtol,
        )


@dataclass(frozen=True)
class MapScales:
    """Units of the map variables.

    A map variable ``xi`` stands for ``length * xi`` of state perturbation
    and ``time * eta`` of event-time shift.  Scaling keeps coefficients of
    high-order terms near unity so that inversion residuals are meaningful.
    """

    length: float = 1.0
    time: float = 1.0

    def __post_init__(self):
        if not (self.length > 0.0 and self.time > 0.0):
            raise ContractError("map scales must be positive")


def _initial_jet(
    sys: EventSystem, uncertain_vars: Sequence[int], nvars: int, order: int, length: float = 1.0
):
    basis = get_basis(nvars, order)
    y = np.zeros((sys.dim, basis.size))
    y[:, 0] = sys.x0
    if order >= 1:
        for j, k in enumerate(uncertain_vars):
            y[k, 1 + j] = length
    return basis, y


def _check_vars(sys: EventSystem, uncertain_vars) -> tuple[int, ...]:
    uv = tuple(int(k) for k in uncertain_vars)
    if len(set(uv)) != len(uv) or any(not 0 <= k < sys.dim for k in uv):
        raise ContractError(f"invalid uncertain variable selection {uv}")
    return uv


def build_fixed_time_map(
    sys: EventSystem,
    order: int,
    uncertain_vars: Sequence[int] = POSITION_VARS,
    scales: MapScales = MapScales(),
    rtol: float = JET_RTOL,
) -> PolyMap:
    """Map ``(dx0[uncertain_vars], dT) -> (x(T), eps(T))`` of the rescaled system.

    The last component is ``eps`` started at the nominal ``e(x0)``; the
    dependence on an initial ``d eps0`` is additive and is handled in
    :func:`solve_event_time`.  Variables are in the units of ``scales``.
    """
    uv = _check_vars(sys, uncertain_vars)
    nv = len(uv) + 1
    basis, y = _initial_jet(sys, uv, nv, order, scales.length)
    ops = JetOps(basis)
    eps0 = float(sys.event(RealOps(), np.asarray(sys.x0, dtype=float)))
    y = np.vstack([y, np.zeros(basis.size)])
    y[-1, 0] = eps0
    T = np.zeros(basis.size)
    T[0] = sys.t_f
    if order >= 1:
        T[nv] = scales.time
    n = sys.dim

    def rhs(tau, z):
        f = sys.rhs(ops, z[:n])
        edot = sys.event_rate(ops, z[:n], f)
        return ops.mul(T, np.vstack([f, edot[None, :]]))

    out = integrate(rhs, y, 0.0, 1.0, rtol=rtol, atol=rtol)
    labels = tuple(sys._labels()[k] for k in uv) + ("dT",)
    return PolyMap.from_array(out, nv, order, labels)


def initial_event_expansion(
    sys: EventSystem, uncertain_vars: Sequence[int], order: int, length: float = 1.0
) -> TruncatedPoly:
    """``e(x0 + dx0) - e(x0)`` as a polynomial in the uncertain variables."""
    uv = _check_vars(sys, uncertain_vars)
    basis, y = _initial_jet(sys, uv, len(uv), order, length)
    e = sys.event(JetOps(basis), y)
    e = np.array(e, dtype=float)
    e[0] = 0.0
    return TruncatedPoly(len(uv), order, e)


@dataclass(frozen=True)
class EventInversion:
    """Event map ``N`` and its inverse, kept for diagnostics.

    ``eps`` enters both maps divided by ``eps_scale``, the sensitivity of
    the final ``eps`` to the (scaled) event-time variable, or by
    ``eps_scale`` given explicitly.
    """

    forward: PolyMap
    inverse: PolyMap
    jacobian_diagonal: np.ndarray
    eps_scale: float = 1.0


def event_inversion(
    fixed_map: PolyMap, eps_scale: float | None = None, min_slope: float = 0.0
) -> EventInversion:
    """Invert ``(dx0, d eps0, dT) -> (dx0, d eps0, d eps_f)``.

    Raises:
        NonInvertibleMapError: ``|d eps / dT|`` does not exceed ``min_slope``.
    """
    k = fixed_map.nvars - 1
    order = fixed_map.order
    nv = k + 2
    p_eps = embed(fixed_map[-1], list(range(k)) + [k + 1], nv, order)
    slope = abs(fixed_map[-1].coeffs[k + 1]) if order >= 1 else 0.0
    if not slope > min_slope:
        raise NonInvertibleMapError(
            f"event is not transversal: d eps/dT = {slope:.3g} (threshold {min_slope:.3g})"
        )
    if eps_scale is None:
        eps_scale = slope
    p_eps = p_eps / eps_scale
    d_eps_f = p_eps - p_eps.const + TruncatedPoly.variable(k, nv, order)
    comps = [TruncatedPoly.variable(i, nv, order) for i in range(k + 1)] + [d_eps_f]
    labels = fixed_map.labels[:k] + ("deps0", "dT")
    forward = PolyMap(tuple(comps), labels)
    inverse = map_invert(forward)
    inverse = PolyMap(inverse.components, fixed_map.labels[:k] + ("deps0", "deps_f"))
    diag = np.diag(forward.linear_part()).copy()
    return EventInversion(forward, inverse, diag, float(eps_scale))


def solve_event_time(
    fixed_map: PolyMap,
    sys: EventSystem,
    uncertain_vars: Sequence[int] = POSITION_VARS,
    scales: MapScales = MapScales(),
    inversion: EventInversion | None = None,
) -> TruncatedPoly:
    """Event-time correction ``dT`` as a polynomial in the initial perturbation.

    ``fixed_map`` must have been built with the same ``scales``; the result
    is in units of ``scales.time``.

    Raises:
        NonInvertibleMapError: the event is not transversal at the nominal.
    """
    inv = inversion or event_inversion(fixed_map)
    k = fixed_map.nvars - 1
    order = fixed_map.order
    d_eps0 = initial_event_expansion(sys, uncertain_vars, order, scales.length) / inv.eps_scale
    args = [TruncatedPoly.variable(i, k, order) for i in range(k)]
    args += [d_eps0, TruncatedPoly.constant(0.0, k, order)]
    return poly_compose(inv.inverse[-1], PolyMap(tuple(args), fixed_map.labels[:k]))


@dataclass(frozen=True)
class CaTaylorMaps:
    """Closest-approach maps in the initial perturbation variables.

    The polynomial variables are ``xi = dx0 / length_scale`` for the
    selected state rows; use :meth:`to_map_vars` to convert physical
    perturbations [km, km/s].

    Attributes:
        state: Joint state at the perturbed closest approach.
        time: Event-time correction ``dT`` [s]; zero constant term.
        d2: Squared closest-approach distance [km^2].
        t_f: Nominal event time [s].
        length_scale: Physical size of one unit of a map variable.
        jacobian_diagonal: Diagonal of the (scaled) event map linear part.
        event_rate: ``d e / dt`` at the nominal closest approach
            [km^2/s^2]; the transversality margin.
    """

    state: PolyMap
    time: TruncatedPoly
    d2: TruncatedPoly
    t_f: float
    uncertain_vars: tuple[int, ...]
    length_scale: float = 1.0
    jacobian_diagonal: np.ndarray | None = None
    event_rate: float = float("nan")
    inversion: EventInversion | None = None

    @property
    def order(self) -> int:
        return self.d2.order

    @property
    def nvars(self) -> int:
        return self.d2.nvars

    def to_map_vars(self, dx):
        return np.asarray(dx, dtype=float) / self.length_scale


def squared_distance(state: PolyMap) -> TruncatedPoly:
    """Sum of squares of the relative position components ``r_A - r_B``."""
    d2 = TruncatedPoly.constant(0.0, state.nvars, state.order)
    for i in range(3):
        rel = state[i] - state[6 + i]
        d2 = d2 + rel * rel
    return d2


DEFAULT_LENGTH_SCALE = 1e-3  # km


TRANSVERSALITY_RTOL = 1e-9


def _rate_reference(sys: EventSystem) -> float:
    """Size of the terms of ``de/dt`` at the nominal event (pairs only)."""
    if sys.dim != 12:
        return 0.0
    xf = sys.final_state()
    f = sys.rhs(RealOps(), xf)
    dr, dv, da = xf[0:3] - xf[6:9], xf[3:6] - xf[9:12], f[3:6] - f[9:12]
    return float(dv @ dv + np.linalg.norm(dr) * np.linalg.norm(da))


def default_scales(sys: EventSystem, length: float = DEFAULT_LENGTH_SCALE) -> MapScales:
    """One metre of perturbation and the time the nominal relative motion needs to cover it."""
    if sys.dim != 12:
        return MapScales()
    xf = sys.final_state()
    v_rel = float(np.linalg.norm(xf[3:6] - xf[9:12]))
    return MapScales(length, length / v_rel if v_rel > 0.0 else 1.0)


def build_ca_maps(
    sys: EventSystem,
    order: int,
    uncertain_vars: Sequence[int] = POSITION_VARS,
    scales: MapScales | None = None,
    rtol: float = JET_RTOL,
) -> CaTaylorMaps:
    """Closest-approach state, event time and squared distance maps.

    Raises:
        NonInvertibleMapError: transversality failure at the nominal event.
    """
    uv = _check_vars(sys, uncertain_vars)
    scales = scales or default_scales(sys)
    fixed = build_fixed_time_map(sys, order, uv, scales, rtol)
    inv = event_inversion(fixed, min_slope=TRANSVERSALITY_RTOL * scales.time * _rate_reference(sys))
    p_t = solve_event_time(fixed, sys, uv, scales, inv)
    k = len(uv)
    args = PolyMap(
        tuple(TruncatedPoly.variable(i, k, order) for i in range(k)) + (p_t,),
        fixed.labels[:k],
    )
    state = PolyMap(fixed.compose(args).components[: sys.dim], fixed.labels[:k])
    return CaTaylorMaps(
        state=state,
        time=p_t * scales.time,
        d2=squared_distance(state),
        t_f=sys.t_f,
        uncertain_vars=uv,
        length_scale=scales.length,
        jacobian_diagonal=inv.jacobian_diagonal,
        event_rate=inv.eps_scale / scales.time,
        inversion=inv,
    )
