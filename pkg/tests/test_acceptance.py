"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``CRITERION n [...]: PASS|FAIL`` line; the lines are
repeated in an "acceptance criteria" section at the end of the run.
"""

import math
import time

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate, stats

from conjmoments.benchmark import make_scenarios, run_benchmark, ScenarioGrid
from conjmoments.dataset import load_dataset
from conjmoments.dynamics import (
    CartesianState,
    elements_to_state,
    find_closest_approach,
    orbital_period,
)
from conjmoments.errors import NonInvertibleMapError
from conjmoments.moments import UncertaintySpec, distance_moments
from conjmoments.pdfest import (
    ReferenceDistribution,
    build_basis,
    estimate_pdf,
    expansion_coeffs,
    integrate_pdf,
    normal_partial_moment,
    pdf_eval,
)
from conjmoments.moments import MomentSet
from conjmoments.pipeline import (
    ConjunctionScenario,
    encounter_maps,
    nominal_encounter,
    pc_monte_carlo,
    pc_moments,
    pc_taylor_mc,
    sample_block,
)
from conjmoments.polyalg import PolyMap, eval_many

HOUR, DAY, WEEK = 3600.0, 86400.0, 604800.0


def test_criterion_1_dataset_fidelity(record_criterion):
    t0 = time.perf_counter()
    worst_d = worst_v = 0.0
    for row in load_dataset():
        a, b = elements_to_state(row.elements_a), elements_to_state(row.elements_b)
        ca = find_closest_approach(a, b, 600.0, start=-300.0, target=0.0)
        worst_d = max(worst_d, abs(ca.d_ca * 1e3 - row.miss_m))
        worst_v = max(worst_v, abs(ca.v_rel * 1e3 - row.speed_mps))
    elapsed = time.perf_counter() - t0
    ok = worst_d < 1.0 and worst_v < 0.1 and elapsed < 60.0
    record_criterion(
        1, "dataset fidelity", ok,
        f"22 rows, max |d err| {worst_d:.2e} m (<1), max |v err| {worst_v:.2e} m/s (<0.1), {elapsed:.1f} s (<60)",
    )
    assert ok


# Five slowest encounters: the strongest nonlinearity, and errors that stay
# above the double-precision floor so that convergence in the order is
# observable.  Fixed by this rule before looking at the results.
CRITERION_2_ROWS = (17, 6, 11, 18, 12)


def test_criterion_2_map_accuracy_and_order_convergence(record_criterion):
    t0 = time.perf_counter()
    rows = {r.id: r for r in load_dataset()}
    spec = UncertaintySpec.table2_normal()
    sig = spec.axis_sizes_km()
    details, ok = [], True
    for rid in CRITERION_2_ROWS:
        r = rows[rid]
        enc = nominal_encounter(r.elements_a, r.elements_b, HOUR)
        rng = np.random.default_rng(1000 + rid)
        z = rng.standard_normal((2000, 6))
        z = z[np.all(np.abs(z) <= 3.0, axis=1)][:200]
        du = z * sig
        fa, fb = enc.frames
        period = min(orbital_period(enc.state_a), orbital_period(enc.state_b))
        truth = np.empty(len(du))
        for k, u in enumerate(du):
            a = CartesianState(enc.state_a.r + fa @ u[:3], enc.state_a.v)
            b = CartesianState(enc.state_b.r + fb @ u[3:], enc.state_b.v)
            ca = find_closest_approach(a, b, period, start=enc.t_ca - 0.5 * period, target=enc.t_ca)
            truth[k] = ca.d_ca**2
        errs = []
        for order in (1, 2, 3, 4):
            maps = encounter_maps(r.elements_a, r.elements_b, HOUR, order)
            d2 = eval_many(maps.d2, du / maps.length_scale)
            errs.append(float(np.max(np.abs(d2 - truth) / truth)))
        monotone = all(e1 > e2 for e1, e2 in zip(errs, errs[1:]))
        row_ok = monotone and errs[-1] < 1e-3
        ok &= row_ok
        details.append(f"row {rid}: " + "/".join(f"{e:.1e}" for e in errs) + ("" if row_ok else " FAIL"))
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 600.0
    record_criterion(
        2, "map vs re-integration", ok,
        "max rel D^2 error, orders 1/2/3/4 (order 4 < 1e-3, decreasing): " + "; ".join(details)
        + f"; {elapsed:.0f} s (<600)",
    )
    assert ok


def test_criterion_3_inversion_identity(record_criterion):
    worst, checked, skipped = 0.0, 0, []
    for row in load_dataset():
        for bp in (HOUR, DAY, WEEK):
            try:
                maps = encounter_maps(row.elements_a, row.elements_b, bp, 4)
            except NonInvertibleMapError:
                skipped.append((row.id, bp))
                continue
            inv = maps.inversion
            n = inv.forward.nvars
            ident = PolyMap.identity(n, 4).coeff_array()
            for comp in (inv.forward.compose(inv.inverse), inv.inverse.compose(inv.forward)):
                worst = max(worst, float(np.max(np.abs(comp.coeff_array() - ident))))
            checked += 1
    ok = worst < 1e-10 and checked > 0
    record_criterion(
        3, "map inversion identity", ok,
        f"{checked} scenarios (22 rows x 1h/1d/1wk, order 4), {len(skipped)} non-transversal, "
        f"max |compose - I| coefficient {worst:.1e} (<1e-10)",
    )
    assert ok


CRITERION_4_CASES = (
    (1, HOUR, UncertaintySpec.table2_normal()),
    (5, HOUR, UncertaintySpec.uniform_box(scale=10.0)),
    (12, DAY, UncertaintySpec.table2_normal(10.0)),
)


def test_criterion_4_moment_propagation(record_criterion):
    rows = {r.id: r for r in load_dataset()}
    details, ok = [], True
    n = 1_000_000
    for rid, bp, spec in CRITERION_4_CASES:
        r = rows[rid]
        maps = encounter_maps(r.elements_a, r.elements_b, bp, 4)
        ms = distance_moments(maps, spec, M=4)
        sums = np.zeros(4)
        sq = np.zeros(4)
        for block in range(0, n // 100_000):
            d2 = eval_many(maps.d2, sample_block(spec, 77, block, 100_000) / maps.length_scale)
            for k in range(4):
                xk = d2 ** (k + 1)
                sums[k] += xk.sum()
                sq[k] += (xk * xk).sum()
        mean = sums / n
        se = np.sqrt((sq / n - mean**2) / n)
        zs = np.abs(np.array(ms.values) - mean) / se
        ok &= bool(np.all(zs < 4.0))
        details.append(f"row {rid} {spec.kind} x{spec.scale:g}: |z| " + "/".join(f"{z:.2f}" for z in zs))
    record_criterion(4, "moments vs 1e6-sample MC", ok, "; ".join(details) + " (all < 4)")
    assert ok


def test_criterion_5_pdf_machinery(record_criterion):
    # (a) reproduction
    refs = [
        ReferenceDistribution.normal(0.4, 0.09),
        ReferenceDistribution.gamma(1.7, 0.3),
        ReferenceDistribution.genbeta(12.7, 6.4, -1.0, 1.0),
        ReferenceDistribution.uniform(0.0, 2.0),
    ]
    worst_c = worst_cdf = 0.0
    for ref in refs:
        for degree in (4, 8, 12):
            est = expansion_coeffs(build_basis(ref, degree), ref.moments(degree))
            worst_c = max(worst_c, float(np.max(np.abs(est.coeffs[1:]))))
            lo, hi = ref.support
            lo = lo if math.isfinite(lo) else ref.params[0] - 8 * math.sqrt(ref.params[1])
            hi = hi if math.isfinite(hi) else (ref.params[0] + 8 * math.sqrt(ref.params[1]) if ref.kind == "normal" else 40.0)
            for a, b in ((lo, lo + 0.3 * (hi - lo)), (lo + 0.2 * (hi - lo), lo + 0.7 * (hi - lo))):
                worst_cdf = max(worst_cdf, abs(integrate_pdf(est, a, b) - ref.cdf_interval(a, b)))
    ok_a = worst_c < 1e-9 and worst_cdf < 1e-10
    # (b) normal partial moments against quadrature
    rng = np.random.default_rng(5)
    worst_b = 0.0
    for _ in range(100):
        n = int(rng.integers(0, 11))
        mu, sigma, b = rng.uniform(-2, 2), rng.uniform(0.1, 1.5), rng.uniform(-3, 3)
        with mp.workdps(30):
            ref = float(mp.quad(lambda x: x**n * mp.npdf(x, mu, sigma), [0.0, mu, b] if 0.0 < mu < b or b < mu < 0.0 else [0.0, b]))
        worst_b = max(worst_b, abs(normal_partial_moment(n, mu, sigma, b) - ref) / max(1.0, abs(ref)))
    ok_b = worst_b < 1e-10
    # (c) bimodal reconstruction
    comps = [stats.norm(0.15, 0.11), stats.norm(0.51, 0.11)]
    ms = MomentSet(tuple(0.5 * sum(c.moment(k) for c in comps) for k in range(1, 13)))
    est = estimate_pdf(ms, (-1.0, 1.0))
    truth = lambda x: 0.5 * (comps[0].pdf(x) + comps[1].pdf(x))
    l1 = integrate.quad(lambda x: abs(pdf_eval(est, x) - truth(x)), -1.0, 1.0, limit=400)[0]
    ok_c = l1 < 0.1
    ok = ok_a and ok_b and ok_c
    record_criterion(
        5, "PDF machinery", ok,
        f"(a) max |C_i>0| {worst_c:.1e} (<1e-9), CDF err {worst_cdf:.1e} (<1e-10); "
        f"(b) normal integral rel err {worst_b:.1e} (<1e-10, 100 draws, n<=10); "
        f"(c) bimodal L1 {l1:.3f} (<0.1)",
    )
    assert ok


# Desk-scale slice: rows 1-3 (the smallest miss distances) x {1 h, 1 d} x
# {Gaussian x1, uniform x10, Gaussian x10}, combined radius 20 m; kept
# where the Monte Carlo estimate is at least 1e-3.
SLICE_RADIUS_M = 20.0
SLICE_MC_SAMPLES = 200_000
SLICE_SEED = 2026


@pytest.fixture(scope="module")
def slice_results():
    rows = [r for r in load_dataset() if r.id in (1, 2, 3)]
    out = []
    for s in make_scenarios(rows, ScenarioGrid((HOUR, DAY), ("normal",), (1.0, 10.0)), SLICE_RADIUS_M):
        out.append(s)
    for s in make_scenarios(rows, ScenarioGrid((HOUR, DAY), ("uniform",), (10.0,)), SLICE_RADIUS_M):
        out.append(s)
    t0 = time.perf_counter()
    results = []
    for s in sorted(out, key=lambda s: s.key):
        mc = pc_monte_carlo(s, SLICE_MC_SAMPLES, SLICE_SEED)
        if mc.p_raw < 1e-3:
            continue
        results.append((s, mc, pc_moments(s), pc_taylor_mc(s, SLICE_MC_SAMPLES, SLICE_SEED)))
    return results, time.perf_counter() - t0


def test_criterion_6_end_to_end_order_of_magnitude(slice_results, record_criterion):
    results, elapsed = slice_results
    n = len(results)
    within_decade = sum(1 for _, mc, pm, _ in results if pm.p_clamped > 0 and abs(math.log10(pm.p_clamped / mc.p_raw)) <= 1.0)
    within_se = sum(1 for _, mc, _, tm in results if abs(tm.p_raw - mc.p_raw) <= 3.0 * mc.se)
    ratios = ", ".join(f"{s.key}:{pm.p_clamped / mc.p_raw:.2f}" for s, mc, pm, _ in results)
    ok = n >= 12 and within_decade >= 0.75 * n and within_se >= 0.9 * n and elapsed < 3600.0
    record_criterion(
        6, "end-to-end vs MC", ok,
        f"{n} scenarios with MC p >= 1e-3 (>=12); moments within 10x in {within_decade}/{n} (>=75%); "
        f"TMC within 3 SE in {within_se}/{n} (>=90%); {elapsed:.0f} s (<3600); moments/MC ratios {ratios}",
    )
    assert ok


def test_criterion_7_sampling_identity(slice_results, record_criterion):
    results, _ = slice_results
    zs = [abs(tm.p_raw - mc.p_raw) / mc.se for _, mc, _, tm in results]
    ok = len(results) >= 12 and max(zs) <= 3.0
    record_criterion(
        7, "MC count vs TMC integral", ok,
        f"{len(results)} scenarios, max |p_MC - p_TMC| / SE = {max(zs):.2f} (<=3)",
    )
    assert ok


def test_criterion_8_determinism(record_criterion, tmp_path):
    rows = [r for r in load_dataset() if r.id in (1, 4)]
    scen = make_scenarios(rows, ScenarioGrid((HOUR,), ("normal", "uniform"), (1.0,)), 20.0)
    runs = [
        run_benchmark(scen, n_mc=BLOCK, seed=123, parallelism=p).to_json(timing=False)
        for p in (1, 1, 4)
    ]
    mc_threads = [
        pc_monte_carlo(scen[0], 3 * BLOCK // 2, seed=8, threads=t).p_raw for t in (1, 2, 4)
    ]
    ok = runs[0] == runs[1] == runs[2] and len(set(mc_threads)) == 1
    record_criterion(
        8, "determinism", ok,
        f"3 benchmark runs (1, 1, 4 workers) byte-identical: {runs[0] == runs[1] == runs[2]}; "
        f"MC over 1/2/4 threads identical: {len(set(mc_threads)) == 1}",
    )
    assert ok


BLOCK = 65536
