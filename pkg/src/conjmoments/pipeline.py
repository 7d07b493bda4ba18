"""Collision probability by propagated moments, plus sampling baselines.

Timeline convention: the tabulated elements describe both objects at their
nominal closest approach.  A scenario back-propagates that pair by
``back_prop`` seconds; the uncertainty is defined at the resulting initial
epoch (time 0) and the encounter is re-detected near ``t = back_prop``
inside a window of one (shorter) orbital period centred there.
"""

from __future__ import annotations

import dataclasses
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .dynamics import (
    MU_EARTH,
    CartesianState,
    KeplerElements,
    closest_approach_batch,
    elements_to_state,
    find_closest_approach,
    orbital_period,
    propagate_pair,
    rtn_frame,
)
from .errors import ContractError, DomainError, NonInvertibleMapError, StageError
from .eventmap import CaTaylorMaps, EventSystem, build_ca_maps
from .moments import MomentSet, UncertaintySpec, distance_moments, rtn_substitution
from .pdfest import build_basis, expansion_coeffs, fit_reference, integrate_pdf
from .polyalg import eval_many

DEFAULT_ORDER = 4
DEFAULT_MOMENTS = 8
DEFAULT_RADIUS_M = 5.0
BLOCK_SIZE = 65536
MC_GRID = 64


@dataclass(frozen=True)
class ConjunctionScenario:
    """One benchmark case.

    Attributes:
        elements_a, elements_b: Elements of both objects at the nominal
            closest approach.
        back_prop: Back-propagation span [s].
        uncertainty: Initial position uncertainty (RTN, per object).
        radius_m: Combined hard-body radius [m].
        order: Taylor map order.
        n_moments: Number of propagated moments.
        domain_hint: Reference-distribution domain for the PDF fit.
        row_id: Dataset row, if any (bookkeeping only).
    """

    elements_a: KeplerElements
    elements_b: KeplerElements
    back_prop: float
    uncertainty: UncertaintySpec
    radius_m: float = DEFAULT_RADIUS_M
    order: int = DEFAULT_ORDER
    n_moments: int = DEFAULT_MOMENTS
    mu: float = MU_EARTH
    domain_hint: str = "half-line"
    row_id: int | None = None

    def __post_init__(self):
        if not self.back_prop > 0.0:
            raise ContractError("back_prop must be positive")
        if not self.radius_m >= 0.0:
            raise ContractError("collision radius must be non-negative")
        if not 1 <= self.order <= 8:
            raise ContractError("map order must lie in 1..8")
        if not 2 <= self.n_moments <= 12:
            raise ContractError("moment count must lie in 2..12")

    @property
    def key(self) -> str:
        u = self.uncertainty
        rid = "x" if self.row_id is None else f"{self.row_id:02d}"
        return f"{rid}/{self.back_prop:g}s/{u.kind}/x{u.scale:g}"

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "row_id": self.row_id,
            "elements_a": dataclasses.asdict(self.elements_a),
            "elements_b": dataclasses.asdict(self.elements_b),
            "back_prop_s": self.back_prop,
            "uncertainty": self.uncertainty.to_dict(),
            "radius_m": self.radius_m,
            "order": self.order,
            "n_moments": self.n_moments,
            "mu": self.mu,
            "domain_hint": self.domain_hint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConjunctionScenario":
        return cls(
            KeplerElements(**d["elements_a"]),
            KeplerElements(**d["elements_b"]),
            d["back_prop_s"],
            UncertaintySpec.from_dict(d["uncertainty"]),
            d["radius_m"],
            d["order"],
            d["n_moments"],
            d["mu"],
            d["domain_hint"],
            d.get("row_id"),
        )


@dataclass(frozen=True)
class PcResult:
    method: str
    p_raw: float
    p_clamped: float
    se: float | None = None
    n_samples: int | None = None
    diagnostics: dict = field(default_factory=dict)
    wall_ms: float = 0.0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "p_raw": self.p_raw,
            "p_clamped": self.p_clamped,
            "se": self.se,
            "n_samples": self.n_samples,
            "diagnostics": self.diagnostics,
            "wall_ms": self.wall_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcResult":
        return cls(
            d["method"], d["p_raw"], d["p_clamped"], d.get("se"), d.get("n_samples"),
            d.get("diagnostics", {}), d.get("wall_ms", 0.0),
        )


# ---------------------------------------------------------------------------
# Shared, cached preparation.


@dataclass(frozen=True)
class Encounter:
    """Nominal initial states and re-detected closest approach."""

    state_a: CartesianState
    state_b: CartesianState
    t_ca: float
    d_ca: float
    v_rel: float
    window: tuple[float, float]
    n_minima: int
    frames: tuple[np.ndarray, np.ndarray]


@lru_cache(maxsize=256)
def nominal_encounter(
    elements_a: KeplerElements, elements_b: KeplerElements, back_prop: float, mu: float = MU_EARTH
) -> Encounter:
    a = elements_to_state(elements_a, mu)
    b = elements_to_state(elements_b, mu)
    y0 = propagate_pair(np.concatenate([a.as_array(), b.as_array()]), -back_prop, mu)
    a0 = CartesianState.from_array(y0[:6])
    b0 = CartesianState.from_array(y0[6:])
    period = min(orbital_period(a0, mu), orbital_period(b0, mu))
    start = back_prop - 0.5 * period
    ca = find_closest_approach(a0, b0, period, mu, start=start, target=back_prop)
    return Encounter(
        a0, b0, ca.t_ca, ca.d_ca, ca.v_rel, (start, start + period), ca.n_minima,
        (rtn_frame(a0), rtn_frame(b0)),
    )


@lru_cache(maxsize=64)
def encounter_maps(
    elements_a: KeplerElements, elements_b: KeplerElements, back_prop: float, order: int, mu: float = MU_EARTH
) -> CaTaylorMaps:
    """Closest-approach maps in RTN perturbation variables (cached)."""
    enc = nominal_encounter(elements_a, elements_b, back_prop, mu)
    sys = EventSystem.two_body_pair(enc.state_a, enc.state_b, enc.t_ca, mu)
    maps = build_ca_maps(sys, order)
    return rtn_substitution(maps, enc.frames)


def clear_caches() -> None:
    nominal_encounter.cache_clear()
    encounter_maps.cache_clear()


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
        raise StageError(name, exc) from exc


# ---------------------------------------------------------------------------
# Moments method.


def pc_moments(s: ConjunctionScenario) -> PcResult:
    """Probability of collision from the propagated moments of ``D_CA^2``.

    Raises:
        StageError: tagged with the failing stage; a transversality failure
            surfaces as stage ``"event_map"`` with a NonInvertibleMapError.
    """
    t0 = time.perf_counter()
    enc = _stage("detect", nominal_encounter, s.elements_a, s.elements_b, s.back_prop, s.mu)
    maps = _stage("event_map", encounter_maps, s.elements_a, s.elements_b, s.back_prop, s.order, s.mu)
    ms = _stage("moments", distance_moments, maps, s.uncertainty, s.n_moments)
    ref = _stage("fit", fit_reference, ms, s.domain_hint)
    basis = _stage("basis", build_basis, ref, s.n_moments)
    est = _stage("expansion", expansion_coeffs, basis, ms)
    r2 = (s.radius_m * 1e-3) ** 2
    p_raw = 0.0 if r2 == 0.0 else _stage("integrate", integrate_pdf, est, 0.0, r2)
    diag = {
        "t_ca_s": enc.t_ca,
        "d_ca_m": enc.d_ca * 1e3,
        "n_minima": enc.n_minima,
        "reference": ref.to_dict(),
        "moments": ms.to_dict(),
        "coefficients": [float(c) for c in est.coeffs],
        "hankel_min_eig": ms.hankel_min_eigenvalue(),
        "event_rate": maps.event_rate,
        "jacobian_diagonal": [float(x) for x in maps.jacobian_diagonal],
    }
    return PcResult(
        "moments", float(p_raw), float(min(max(p_raw, 0.0), 1.0)), None, None, diag,
        (time.perf_counter() - t0) * 1e3,
    )


# ---------------------------------------------------------------------------
# Sampling.


def sample_block(spec: UncertaintySpec, seed: int, block: int, n: int) -> np.ndarray:
    """RTN perturbations [km] of one block; independent of thread layout."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))
    sizes = spec.axis_sizes_km()
    if spec.kind == "normal":
        return rng.standard_normal((n, 6)) * sizes
    return rng.uniform(-1.0, 1.0, (n, 6)) * sizes


def _blocks(n: int):
    nb = math.ceil(n / BLOCK_SIZE)
    return [(b, min(BLOCK_SIZE, n - b * BLOCK_SIZE)) for b in range(nb)]


def _run_blocks(fn, n: int, threads: int):
    blocks = _blocks(n)
    if threads <= 1 or len(blocks) == 1:
        return [fn(b, m) for b, m in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda bm: fn(*bm), blocks))


def _binomial_result(method, hits, n, extra, t0):
    p = hits / n
    se = math.sqrt(p * (1.0 - p) / n)
    return PcResult(method, p, p, se, n, extra, (time.perf_counter() - t0) * 1e3)


def pc_monte_carlo(s: ConjunctionScenario, n: int, seed: int = 0, threads: int = 1) -> PcResult:
    """Ground truth by sampling, exact two-body propagation and event re-detection."""
    if n < 1000:
        raise ContractError("Monte Carlo needs at least 1000 samples")
    t0 = time.perf_counter()
    enc = _stage("detect", nominal_encounter, s.elements_a, s.elements_b, s.back_prop, s.mu)
    r_km = s.radius_m * 1e-3
    ra, va = enc.state_a.r, enc.state_a.v
    rb, vb = enc.state_b.r, enc.state_b.v
    fa, fb = enc.frames
    lo, hi = enc.window
    center = 0.5 * (lo + hi)

    def run(block, m):
        du = sample_block(s.uncertainty, seed, block, m)
        pa = ra + du[:, :3] @ fa.T
        pb = rb + du[:, 3:] @ fb.T
        _, d, found = closest_approach_batch(
            pa, np.broadcast_to(va, pa.shape), pb, np.broadcast_to(vb, pb.shape),
            center, 0.5 * (hi - lo), MC_GRID, s.mu,
        )
        hits = int(np.count_nonzero(found & (d < r_km)))
        return hits, int(np.count_nonzero(~found))

    parts = _stage("sampling", _run_blocks, run, n, threads)
    hits = sum(p[0] for p in parts)
    missing = sum(p[1] for p in parts)
    return _binomial_result("mc", hits, n, {"no_event_samples": missing, "seed": seed}, t0)


def pc_taylor_mc(s: ConjunctionScenario, n: int, seed: int = 0, threads: int = 1) -> PcResult:
    """Sampling of the squared-distance map (same draws as :func:`pc_monte_carlo`)."""
    if n < 1:
        raise ContractError("Taylor Monte Carlo needs samples")
    t0 = time.perf_counter()
    maps = _stage("event_map", encounter_maps, s.elements_a, s.elements_b, s.back_prop, s.order, s.mu)
    r2 = (s.radius_m * 1e-3) ** 2
    sizes = s.uncertainty.axis_sizes_km()
    nonzero = sizes > 0.0

    def run(block, m):
        du = sample_block(s.uncertainty, seed, block, m)
        d2 = eval_many(maps.d2, du / maps.length_scale)
        outside = 0
        if s.uncertainty.kind == "normal" and nonzero.any():
            outside = int(np.count_nonzero(np.any(np.abs(du[:, nonzero] / sizes[nonzero]) > 5.0, axis=1)))
        return int(np.count_nonzero(d2 < r2)), outside

    parts = _stage("sampling", _run_blocks, run, n, threads)
    hits = sum(p[0] for p in parts)
    outside = sum(p[1] for p in parts)
    return _binomial_result(
        "tmc", hits, n, {"beyond_5sigma_fraction": outside / n, "seed": seed}, t0
    )


def scenario_record(s: ConjunctionScenario, results: list[PcResult]) -> dict:
    """JSON-ready record: inputs echo and one entry per method."""
    return {"scenario": s.to_dict(), "results": [r.to_dict() for r in results]}
