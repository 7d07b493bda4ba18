"""Keplerian two-body dynamics for points and polynomial jets.

Units are km, s and km^3/s^2 throughout.  The adaptive integrator is an
explicit Runge-Kutta 8 pair with embedded 5th/3rd order error estimators
(the DOP853 tableau); it advances plain float states or jets (arrays of
truncated-polynomial coefficient rows), controlling the step on the
constant (nominal) part only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop
from scipy.optimize import brentq

from .errors import ContractError, DomainError, NoEventError, ResourceLimitError
from .polyalg import Basis, PolyMap, TruncatedPoly, get_basis

MU_EARTH = 398600.4418  # km^3/s^2


@dataclass(frozen=True)
class KeplerElements:
    """Classical elements with the eccentric anomaly as the fast angle.

    Angles in radians, ``a`` in km.
    """

    a: float
    e: float
    i: float
    raan: float
    argp: float
    E: float

    def __post_init__(self):
        if not self.a > 0.0:
            raise DomainError(f"semi-major axis must be positive, got {self.a}")
        if not 0.0 <= self.e < 1.0:
            raise DomainError(f"only bound orbits are supported (e={self.e})")
        if not all(map(math.isfinite, (self.i, self.raan, self.argp, self.E))):
            raise DomainError("angles must be finite")


@dataclass(frozen=True)
class CartesianState:
    r: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=float).reshape(3)
        v = np.array(self.v, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v))):
            raise DomainError("state components must be finite")
        if not np.linalg.norm(r) > 0.0:
            raise DomainError("position must be non-zero")
        r.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_array(cls, y) -> "CartesianState":
        y = np.asarray(y, dtype=float)
        return cls(y[:3], y[3:6])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.r, self.v])


def _perifocal_rotation(i: float, raan: float, argp: float) -> np.ndarray:
    cO, sO = math.cos(raan), math.sin(raan)
    ci, si = math.cos(i), math.sin(i)
    cw, sw = math.cos(argp), math.sin(argp)
    return np.array(
        [
            [cO * cw - sO * sw * ci, -cO * sw - sO * cw * ci, sO * si],
            [sO * cw + cO * sw * ci, -sO * sw + cO * cw * ci, -cO * si],
            [sw * si, cw * si, ci],
        ]
    )


def elements_to_state(el: KeplerElements, mu: float = MU_EARTH) -> CartesianState:
    a, e, E = el.a, el.e, el.E
    cE, sE = math.cos(E), math.sin(E)
    b = math.sqrt(1.0 - e * e)
    n = math.sqrt(mu / a**3)
    rdot = n * a / (1.0 - e * cE)
    r_pf = np.array([a * (cE - e), a * b * sE, 0.0])
    v_pf = np.array([-sE * rdot, b * cE * rdot, 0.0])
    rot = _perifocal_rotation(el.i, el.raan, el.argp)
    return CartesianState(rot @ r_pf, rot @ v_pf)


def state_to_elements(state: CartesianState, mu: float = MU_EARTH) -> KeplerElements:
    r, v = state.r, state.v
    rn = np.linalg.norm(r)
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    if hn == 0.0:
        raise DomainError("rectilinear state has no orbital plane")
    energy = 0.5 * (v @ v) - mu / rn
    if energy >= 0.0:
        raise DomainError("state is not on a bound orbit")
    a = -mu / (2.0 * energy)
    e_vec = np.cross(v, h) / mu - r / rn
    e = float(np.linalg.norm(e_vec))
    i = math.acos(max(-1.0, min(1.0, h[2] / hn)))
    node = np.array([-h[1], h[0], 0.0])
    nn = np.linalg.norm(node)
    raan = math.atan2(node[1], node[0]) % (2 * math.pi) if nn > 1e-12 * hn else 0.0
    # periapsis direction; fall back to the node (or x axis) when circular
    if e > 1e-12:
        p_hat = e_vec / e
    elif nn > 1e-12 * hn:
        p_hat = node / nn
    else:
        p_hat = np.array([1.0, 0.0, 0.0])
    q_hat = np.cross(h / hn, p_hat)
    node_hat = node / nn if nn > 1e-12 * hn else np.array([1.0, 0.0, 0.0])
    argp = math.atan2(np.cross(node_hat, p_hat) @ (h / hn), node_hat @ p_hat)
    nu = math.atan2(r @ q_hat, r @ p_hat)
    E = 2.0 * math.atan2(math.sqrt(1.0 - e) * math.sin(nu / 2), math.sqrt(1.0 + e) * math.cos(nu / 2))
    return KeplerElements(a, e, i, raan, argp % (2 * math.pi), E)


def orbital_period(state: CartesianState, mu: float = MU_EARTH) -> float:
    energy = 0.5 * (state.v @ state.v) - mu / np.linalg.norm(state.r)
    if energy >= 0.0:
        raise DomainError("unbound orbit has no period")
    a = -mu / (2.0 * energy)
    return 2.0 * math.pi * math.sqrt(a**3 / mu)


def rtn_frame(state: CartesianState) -> np.ndarray:
    """Rotation whose columns are the radial, transverse and normal axes."""
    r, v = state.r, state.v
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    if hn <= 1e-14 * np.linalg.norm(r) * max(np.linalg.norm(v), 1e-300):
        raise DomainError("rectilinear state: RTN frame undefined")
    r_hat = r / np.linalg.norm(r)
    n_hat = h / hn
    t_hat = np.cross(n_hat, r_hat)
    return np.column_stack([r_hat, t_hat, n_hat])


# ---------------------------------------------------------------------------
# Arithmetic back-ends: the same right-hand side runs on floats or on jets.


class RealOps:
    @staticmethod
    def mul(a, b):
        return np.multiply(a, b)

    @staticmethod
    def rpow(a, p):
        return np.power(a, p)


class JetOps:
    """Row-batched truncated-polynomial arithmetic on coefficient arrays."""

    def __init__(self, basis: Basis):
        self.basis = basis

    def mul(self, a, b):
        return self.basis.mul(a, b)

    def rpow(self, a, p):
        return self.basis.rpow(np.array(a, dtype=float), p)


def kepler_accel(ops, r, mu: float):
    """Two-body acceleration for position rows ``r`` of shape (nobj, 3, ...)."""
    r2 = ops.mul(r, r).sum(axis=1)
    inv_r3 = ops.rpow(r2, -1.5)
    return -mu * ops.mul(r, inv_r3[:, None])


def kepler_rhs(ops, y, mu: float):
    """Time derivative of stacked 6-row object states."""
    nobj = y.shape[0] // 6
    ys = y.reshape((nobj, 6) + y.shape[1:])
    acc = kepler_accel(ops, ys[:, :3], mu)
    return np.concatenate([ys[:, 3:], acc], axis=1).reshape(y.shape)


# ---------------------------------------------------------------------------
# Adaptive Runge-Kutta driver.

_NSTAGES = _dop.N_STAGES
_A = _dop.A[:_NSTAGES, :_NSTAGES]
_B = _dop.B
_C = _dop.C[:_NSTAGES]
_E3 = _dop.E3
_E5 = _dop.E5
_SAFETY, _MIN_FACTOR, _MAX_FACTOR = 0.9, 0.2, 10.0
_ERR_EXP = -1.0 / 8.0


def _nominal_part(y):
    return y if y.ndim == 1 else y[..., 0]


@dataclass
class IntegrationStats:
    steps: int = 0
    rejected: int = 0
    nfev: int = 0


def integrate(
    rhs: Callable,
    y0: np.ndarray,
    t0: float,
    t1: float,
    rtol: float = 1e-12,
    atol: float = 1e-12,
    h0: float | None = None,
    max_steps: int = 1_000_000,
    stats: IntegrationStats | None = None,
) -> np.ndarray:
    """Advance ``y' = rhs(t, y)`` from ``t0`` to ``t1``.

    ``y0`` is a 1-D float state or a 2-D array of jet coefficient rows
    (constant term in column 0); step control uses only the constant terms.
    """
    y = np.array(y0, dtype=float)
    if t1 == t0:
        return y
    stats = stats if stats is not None else IntegrationStats()
    direction = 1.0 if t1 > t0 else -1.0
    t = t0
    f = rhs(t, y)
    stats.nfev += 1
    h = abs(h0) if h0 else _initial_step(rhs, t, y, f, direction, rtol, atol)
    K = np.empty((_NSTAGES + 1,) + y.shape)
    while direction * (t1 - t) > 0:
        if stats.steps + stats.rejected >= max_steps:
            raise ResourceLimitError(f"integrator exceeded {max_steps} steps")
        h = min(h, abs(t1 - t))
        if h < 1e-14 * max(1.0, abs(t)):
            raise ResourceLimitError("integrator step size underflow")
        hs = h * direction
        K[0] = f
        for s in range(1, _NSTAGES):
            dy = np.tensordot(_A[s, :s], K[:s], axes=1) * hs
            K[s] = rhs(t + _C[s] * hs, y + dy)
        y_new = y + hs * np.tensordot(_B, K[:_NSTAGES], axes=1)
        t_new = t + hs if abs(t1 - (t + hs)) > 1e-15 * max(1.0, abs(t1)) else t1
        f_new = rhs(t_new, y_new)
        K[-1] = f_new
        stats.nfev += _NSTAGES
        yn, ynn = _nominal_part(y), _nominal_part(y_new)
        scale = atol + np.maximum(np.abs(yn), np.abs(ynn)) * rtol
        kn = K if y.ndim == 1 else K[..., 0]
        err5 = np.tensordot(_E5, kn, axes=1) / scale
        err3 = np.tensordot(_E3, kn, axes=1) / scale
        e5, e3 = float(err5 @ err5), float(err3 @ err3)
        if e5 == 0.0 and e3 == 0.0:
            err = 0.0
        else:
            err = h * e5 / math.sqrt((e5 + 0.01 * e3) * scale.size)
        if err < 1.0:
            factor = _MAX_FACTOR if err == 0.0 else min(_MAX_FACTOR, _SAFETY * err**_ERR_EXP)
            t, y, f = t_new, y_new, f_new
            stats.steps += 1
            h *= factor
        else:
            stats.rejected += 1
            h *= max(_MIN_FACTOR, _SAFETY * err**_ERR_EXP)
    return y


def _initial_step(rhs, t, y, f, direction, rtol, atol):
    yn, fn = _nominal_part(y), _nominal_part(f)
    scale = atol + np.abs(yn) * rtol
    d0 = np.sqrt(np.mean((yn / scale) ** 2))
    d1 = np.sqrt(np.mean((fn / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y + h0 * direction * f
    f1 = rhs(t + h0 * direction, y1)
    d2 = np.sqrt(np.mean(((_nominal_part(f1) - fn) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    return min(100 * h0, h1)


# ---------------------------------------------------------------------------
# Point and jet propagation.

POINT_RTOL = 1e-13
JET_RTOL = 1e-12


def propagate_point(
    state: CartesianState, dt: float, mu: float = MU_EARTH, rtol: float = POINT_RTOL
) -> CartesianState:
    if dt == 0.0:
        return state
    ops = RealOps()
    y = integrate(
        lambda t, y: kepler_rhs(ops, y, mu), state.as_array(), 0.0, dt, rtol=rtol, atol=rtol
    )
    return CartesianState.from_array(y)


def propagate_pair(ya: np.ndarray, dt: float, mu: float = MU_EARTH, rtol: float = POINT_RTOL):
    """Propagate stacked 6k-vectors of several objects together."""
    if dt == 0.0:
        return np.array(ya, dtype=float)
    ops = RealOps()
    return integrate(lambda t, y: kepler_rhs(ops, y, mu), ya, 0.0, dt, rtol=rtol, atol=rtol)


@dataclass(frozen=True)
class JetState:
    """Jet of one or more stacked object states plus its epoch [s]."""

    jet: PolyMap
    epoch: float = 0.0

    @property
    def nominal(self) -> np.ndarray:
        return self.jet.constants()

    @classmethod
    def from_states(
        cls,
        nominal: np.ndarray,
        var_rows: dict[int, int],
        order: int,
        nvars: int | None = None,
        epoch: float = 0.0,
        labels=(),
    ) -> "JetState":
        """Jet whose row ``k`` is ``nominal[k] + x_j`` for ``{k: j}`` in ``var_rows``."""
        nominal = np.asarray(nominal, dtype=float)
        nvars = len(var_rows) if nvars is None else nvars
        comps = []
        for k, value in enumerate(nominal):
            if k in var_rows:
                comps.append(TruncatedPoly.variable(var_rows[k], nvars, order, value))
            else:
                comps.append(TruncatedPoly.constant(value, nvars, order))
        return cls(PolyMap(tuple(comps), labels), epoch)


def propagate_jet(
    jet: JetState,
    dt: float,
    mu: float = MU_EARTH,
    time_scale: TruncatedPoly | None = None,
    rtol: float = JET_RTOL,
) -> JetState:
    """Taylor expansion of the two-body flow carried by ``jet``.

    Without ``time_scale`` the jet is advanced by ``dt``.  With a
    ``time_scale`` polynomial ``T`` the time-rescaled system
    ``dx/dtau = T f(x)`` is integrated over ``tau`` in ``[0, 1]``; ``dt`` is
    then only used as the epoch increment (normally ``dt = T.const``).
    """
    basis = jet.jet.basis
    ops = JetOps(basis)
    y0 = jet.jet.coeff_array()
    if y0.shape[0] % 6:
        raise ContractError("jet rows must be a multiple of 6")
    if time_scale is None:
        y = integrate(lambda t, y: kepler_rhs(ops, y, mu), y0, 0.0, dt, rtol=rtol, atol=rtol)
    else:
        if time_scale.basis is not basis:
            raise ContractError("time scale must live in the jet algebra")
        T = time_scale.coeffs

        def rhs(tau, y):
            return ops.mul(T, kepler_rhs(ops, y, mu))

        y = integrate(rhs, y0, 0.0, 1.0, rtol=rtol, atol=rtol)
    out = PolyMap.from_array(y, basis.nvars, basis.order, jet.jet.labels)
    return JetState(out, jet.epoch + dt)


# ---------------------------------------------------------------------------
# Closest approach.


def relative_rate(y: np.ndarray, mu: float = MU_EARTH) -> float:
    """``e = r_rel . v_rel`` for a stacked pair state."""
    dr = y[0:3] - y[6:9]
    dv = y[3:6] - y[9:12]
    return float(dr @ dv)


@dataclass(frozen=True)
class CloseApproach:
    t_ca: float
    d_ca: float
    v_rel: float
    state: np.ndarray = field(repr=False)
    n_minima: int = 1


def find_closest_approach(
    state_a: CartesianState,
    state_b: CartesianState,
    horizon: float,
    mu: float = MU_EARTH,
    start: float = 0.0,
    target: float | None = None,
    samples_per_period: int = 50,
    rtol: float = POINT_RTOL,
) -> CloseApproach:
    """Locate a local minimum of the relative distance in ``[start, start + horizon]``.

    The relative-distance rate ``e = r_rel . v_rel`` is sampled every
    1/``samples_per_period`` of the shorter orbital period; every
    negative-to-positive sign change is a local minimum and is polished
    with Brent's method.  The first minimum is returned, or the one closest
    to ``target`` when given.  Times are measured from the epoch of the
    input states.
    """
    if not horizon > 0.0:
        raise ContractError("horizon must be positive")
    y0 = np.concatenate([state_a.as_array(), state_b.as_array()])
    if np.array_equal(y0[:6], y0[6:]):
        return CloseApproach(start, 0.0, 0.0, y0, 1)
    period = min(orbital_period(state_a, mu), orbital_period(state_b, mu))
    nseg = max(2, math.ceil(horizon * samples_per_period / period))
    grid = start + horizon * np.arange(nseg + 1) / nseg
    ys = [propagate_pair(y0, grid[0], mu, rtol)]
    for k in range(nseg):
        ys.append(propagate_pair(ys[-1], grid[k + 1] - grid[k], mu, rtol))
    es = np.array([relative_rate(y) for y in ys])
    cand = [k for k in range(nseg) if es[k] < 0.0 <= es[k + 1]]
    if not cand:
        raise NoEventError(
            f"no closest approach in [{grid[0]:.1f}, {grid[-1]:.1f}] s"
        )
    if target is None:
        k = cand[0]
    else:
        k = min(cand, key=lambda j: abs(0.5 * (grid[j] + grid[j + 1]) - target))

    def rate(t):
        return relative_rate(propagate_pair(ys[k], t - grid[k], mu, rtol))

    if es[k + 1] == 0.0:
        t_ca = grid[k + 1]
    else:
        t_ca = brentq(rate, grid[k], grid[k + 1], xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=200)
    y = propagate_pair(ys[k], t_ca - grid[k], mu, rtol)
    d = float(np.linalg.norm(y[0:3] - y[6:9]))
    v = float(np.linalg.norm(y[3:6] - y[9:12]))
    return CloseApproach(float(t_ca), d, v, y, len(cand))


# ---------------------------------------------------------------------------
# Vectorized analytic propagation (used by Monte Carlo sampling).


def kepler_propagate(r0: np.ndarray, v0: np.ndarray, dt, mu: float = MU_EARTH):
    """Exact two-body propagation of many states by ``dt`` (Lagrange f, g).

    ``r0``, ``v0`` have shape (..., 3); ``dt`` broadcasts against the
    leading shape.  Bound orbits only.
    """
    r0 = np.asarray(r0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    dt = np.asarray(dt, dtype=float)
    r0n = np.linalg.norm(r0, axis=-1)
    inv_a = 2.0 / r0n - np.einsum("...i,...i->...", v0, v0) / mu
    if np.any(inv_a <= 0.0):
        raise DomainError("kepler_propagate supports bound orbits only")
    a = 1.0 / inv_a
    sqrt_a = np.sqrt(a)
    n = np.sqrt(mu * inv_a**3)
    sig = np.einsum("...i,...i->...", r0, v0) / math.sqrt(mu)
    r0n, a, sqrt_a, n, sig, dt = np.broadcast_arrays(r0n, a, sqrt_a, n, sig, dt)
    revs = np.round(n * dt / (2 * math.pi))
    dtr = dt - revs * (2 * math.pi) / n
    c1 = 1.0 - r0n / a
    c2 = sig / sqrt_a
    x = n * dtr
    for _ in range(60):
        sx, cx = np.sin(x), np.cos(x)
        fval = x - c1 * sx + c2 * (1.0 - cx) - n * dtr
        fp = 1.0 - c1 * cx + c2 * sx
        step = fval / fp
        x = x - step
        if np.all(np.abs(step) < 1e-14 * np.maximum(1.0, np.abs(x))):
            break
    sx, cx = np.sin(x), np.cos(x)
    r = a + (r0n - a) * cx + sig * sqrt_a * sx
    F = 1.0 - a / r0n * (1.0 - cx)
    G = dtr - (x - sx) / n
    Fd = -np.sqrt(mu * a) / (r * r0n) * sx
    Gd = 1.0 - a / r * (1.0 - cx)
    r_new = F[..., None] * r0 + G[..., None] * v0
    v_new = Fd[..., None] * r0 + Gd[..., None] * v0
    return r_new, v_new


def closest_approach_batch(
    ra: np.ndarray,
    va: np.ndarray,
    rb: np.ndarray,
    vb: np.ndarray,
    t_center: float,
    half_window: float,
    n_grid: int = 64,
    mu: float = MU_EARTH,
):
    """Closest approach of many pairs near ``t_center`` (analytic propagation).

    Per sample, the local minimum of the relative distance nearest to
    ``t_center`` inside ``t_center +- half_window`` is located on a grid
    and polished by safeguarded Newton iterations on ``r_rel . v_rel``.
    Returns ``(t_ca, d_ca, found)``; ``found`` is False where no minimum
    lies inside the window.
    """
    ns = ra.shape[0]
    grid = t_center + np.linspace(-half_window, half_window, n_grid + 1)

    def rate_at(t, idx):
        pa, qa = kepler_propagate(ra[idx], va[idx], t, mu)
        pb, qb = kepler_propagate(rb[idx], vb[idx], t, mu)
        dr, dv = pa - pb, qa - qb
        e = np.einsum("ij,ij->i", dr, dv)
        acc_a = -mu * pa / np.linalg.norm(pa, axis=1, keepdims=True) ** 3
        acc_b = -mu * pb / np.linalg.norm(pb, axis=1, keepdims=True) ** 3
        de = np.einsum("ij,ij->i", dv, dv) + np.einsum("ij,ij->i", dr, acc_a - acc_b)
        return e, de, np.linalg.norm(dr, axis=1)

    all_idx = np.arange(ns)
    es = np.empty((ns, grid.size))
    for g, t in enumerate(grid):
        es[:, g] = rate_at(np.full(ns, t), all_idx)[0]
    up = (es[:, :-1] < 0.0) & (es[:, 1:] >= 0.0)
    found = up.any(axis=1)
    mid = 0.5 * (grid[:-1] + grid[1:])
    dist = np.where(up, np.abs(mid - t_center)[None, :], np.inf)
    k = np.argmin(dist, axis=1)
    lo = grid[k].copy()
    hi = grid[k + 1].copy()
    t = 0.5 * (lo + hi)
    idx = np.nonzero(found)[0]
    lo, hi, t = lo[idx], hi[idx], t[idx]
    for _ in range(100):
        e, de, _ = rate_at(t, idx)
        neg = e < 0.0
        lo = np.where(neg, t, lo)
        hi = np.where(neg, hi, t)
        with np.errstate(divide="ignore", invalid="ignore"):
            tn = t - e / de
        bad = ~np.isfinite(tn) | (tn <= lo) | (tn >= hi)
        tn = np.where(bad, 0.5 * (lo + hi), tn)
        done = np.abs(tn - t) <= 1e-9
        t = tn
        if np.all(done):
            break
    _, _, d = rate_at(t, idx)
    t_ca = np.full(ns, np.nan)
    d_ca = np.full(ns, np.nan)
    t_ca[idx] = t
    d_ca[idx] = d
    return t_ca, d_ca, found
