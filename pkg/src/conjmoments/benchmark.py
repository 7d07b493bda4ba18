"""Scenario grid, benchmark runs and report export."""

from __future__ import annotations

import csv
import io
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DatasetRow
from .errors import ContractError, StageError
from .moments import UncertaintySpec
from .pipeline import (
    DEFAULT_MOMENTS,
    DEFAULT_ORDER,
    DEFAULT_RADIUS_M,
    ConjunctionScenario,
    PcResult,
    pc_monte_carlo,
    pc_moments,
    pc_taylor_mc,
)

HOUR = 3600.0
DAY = 86400.0
WEEK = 604800.0
DEFAULT_BACK_PROPS = (HOUR, DAY, WEEK)
DEFAULT_DISTRIBUTIONS = ("normal", "uniform")
DEFAULT_SCALES = (0.1, 1.0, 10.0)
METHODS = ("moments", "mc", "tmc")


@dataclass(frozen=True)
class ScenarioGrid:
    back_props: tuple[float, ...] = DEFAULT_BACK_PROPS
    distributions: tuple[str, ...] = DEFAULT_DISTRIBUTIONS
    scales: tuple[float, ...] = DEFAULT_SCALES
    scale_applies_to: str = "std"


def _spec(kind: str, scale: float, applies_to: str) -> UncertaintySpec:
    if kind == "normal":
        return UncertaintySpec.table2_normal(scale, applies_to)
    if kind == "uniform":
        return UncertaintySpec.uniform_box(scale=scale, scale_applies_to=applies_to)
    raise ContractError(f"unknown distribution {kind!r}")


def make_scenarios(
    rows: list[DatasetRow],
    grid: ScenarioGrid = ScenarioGrid(),
    radius_m: float = DEFAULT_RADIUS_M,
    order: int = DEFAULT_ORDER,
    n_moments: int = DEFAULT_MOMENTS,
) -> list[ConjunctionScenario]:
    """Full cross product rows x back-props x distributions x scales."""
    out = []
    for row, bp, kind, scale in itertools.product(rows, grid.back_props, grid.distributions, grid.scales):
        out.append(
            ConjunctionScenario(
                row.elements_a, row.elements_b, float(bp), _spec(kind, scale, grid.scale_applies_to),
                radius_m, order, n_moments, row_id=row.id,
            )
        )
    keys = [s.key for s in out]
    if len(set(keys)) != len(keys):
        raise ContractError("scenario grid contains duplicates")
    return out


@dataclass
class ScenarioOutcome:
    scenario: ConjunctionScenario
    results: list[PcResult] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)

    def result(self, method: str) -> PcResult | None:
        for r in self.results:
            if r.method == method:
                return r
        return None

    def to_dict(self, timing: bool = True) -> dict:
        res = []
        for r in self.results:
            d = r.to_dict()
            if not timing:
                d.pop("wall_ms")
            res.append(d)
        return {"scenario": self.scenario.to_dict(), "results": res, "errors": self.errors}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioOutcome":
        return cls(
            ConjunctionScenario.from_dict(d["scenario"]),
            [PcResult.from_dict(r) for r in d["results"]],
            list(d.get("errors", [])),
        )


def mse_table(outcomes: list[ScenarioOutcome]) -> list[dict]:
    """Mean squared error of each method against the MC probability.

    Grouped by method, back-propagation span and distribution kind, for the
    nonzero-truth subset and for all scenarios.  Clamped values are used.
    """
    groups: dict[tuple, list[tuple[float, float]]] = {}
    for o in outcomes:
        truth = o.result("mc")
        if truth is None:
            continue
        s = o.scenario
        for r in o.results:
            if r.method == "mc":
                continue
            groups.setdefault((r.method, s.back_prop, s.uncertainty.kind), []).append(
                (truth.p_clamped, r.p_clamped)
            )
    table = []
    for (method, bp, kind), pairs in sorted(groups.items()):
        for subset in ("nonzero", "all"):
            sel = [(t, p) for t, p in pairs if subset == "all" or t > 0.0]
            mse = float(np.mean([(p - t) ** 2 for t, p in sel])) if sel else None
            table.append(
                {"method": method, "back_prop_s": bp, "kind": kind, "subset": subset,
                 "n": len(sel), "mse": mse}
            )
    return table


@dataclass
class BenchmarkReport:
    outcomes: list[ScenarioOutcome]
    config: dict = field(default_factory=dict)

    @property
    def n_failed(self) -> int:
        return sum(1 for o in self.outcomes if o.errors)

    @property
    def mse(self) -> list[dict]:
        return mse_table(self.outcomes)

    def runtimes(self) -> dict[str, list[float]]:
        out: dict[str, list[float]] = {}
        for o in self.outcomes:
            for r in o.results:
                out.setdefault(r.method, []).append(r.wall_ms)
        return out

    def to_dict(self, timing: bool = True) -> dict:
        return {
            "config": self.config,
            "scenarios": [o.to_dict(timing) for o in self.outcomes],
            "mse": self.mse,
        }

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkReport":
        return cls([ScenarioOutcome.from_dict(o) for o in d["scenarios"]], dict(d.get("config", {})))


def run_scenario(
    s: ConjunctionScenario, methods: tuple[str, ...], n_mc: int, seed: int, threads: int = 1
) -> ScenarioOutcome:
    """All requested methods on one scenario; failures are recorded, not raised."""
    out = ScenarioOutcome(s)
    for m in methods:
        try:
            if m == "moments":
                out.results.append(pc_moments(s))
            elif m == "mc":
                out.results.append(pc_monte_carlo(s, n_mc, seed, threads))
            elif m == "tmc":
                out.results.append(pc_taylor_mc(s, n_mc, seed, threads))
            else:
                raise ContractError(f"unknown method {m!r}")
        except StageError as exc:
            out.errors.append({"method": m, "stage": exc.stage, "error": repr(exc.cause)})
        except Exception as exc:  # noqa: BLE001 - benchmark keeps going
            out.errors.append({"method": m, "stage": None, "error": repr(exc)})
    return out


def run_benchmark(
    scenarios: list[ConjunctionScenario],
    methods: tuple[str, ...] = METHODS,
    n_mc: int = 100_000,
    seed: int = 0,
    parallelism: int = 1,
) -> BenchmarkReport:
    """Run every scenario; output ordered by scenario key regardless of workers."""
    if not methods:
        raise ContractError("at least one method is required")
    bad = set(methods) - set(METHODS)
    if bad:
        raise ContractError(f"unknown methods {sorted(bad)}")
    ordered = sorted(scenarios, key=lambda s: s.key)

    def job(s):
        return run_scenario(s, tuple(methods), n_mc, seed)

    if parallelism <= 1:
        outcomes = [job(s) for s in ordered]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(job, ordered))
    config = {"methods": list(methods), "n_mc": n_mc, "seed": seed}
    return BenchmarkReport(outcomes, config)


# ---------------------------------------------------------------------------
# Export.

PAIRS_COLUMNS = (
    ("key", "scenario key row/back_prop/kind/scale"),
    ("row_id", "dataset row"),
    ("back_prop_s", "back-propagation span [s]"),
    ("kind", "initial distribution"),
    ("scale", "distribution scale factor"),
    ("method", "predicting method"),
    ("p_true", "Monte Carlo probability"),
    ("se_true", "Monte Carlo standard error"),
    ("p_pred", "predicted probability, clamped to [0, 1]"),
    ("p_raw", "predicted probability before clamping"),
)
MSE_COLUMNS = (
    ("method", "predicting method"),
    ("back_prop_s", "back-propagation span [s]"),
    ("kind", "initial distribution"),
    ("subset", "nonzero: scenarios with nonzero MC probability; all: every scenario"),
    ("n", "number of scenarios"),
    ("mse", "mean squared error of clamped probabilities"),
)
RUNTIME_COLUMNS = (
    ("key", "scenario key"),
    ("method", "method"),
    ("wall_ms", "wall-clock time [ms]"),
)


def _write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    for name, desc in columns:
        buf.write(f"# {name}: {desc}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([c for c, _ in columns])
    for r in rows:
        w.writerow(["" if r[c] is None else r[c] for c, _ in columns])
    path.write_text(buf.getvalue())


def read_csv(path: str | Path) -> list[dict]:
    """Read a CSV written by :func:`export_report`, skipping comment lines."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def export_report(report: BenchmarkReport, fmt: str, path: str | Path, timing: bool = True) -> list[Path]:
    """Write ``report.json`` or the CSV plot-data files into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        out = path / "report.json"
        out.write_text(report.to_json(timing))
        return [out]
    if fmt != "csv":
        raise ContractError(f"unknown report format {fmt!r}")
    pairs, runtimes = [], []
    for o in report.outcomes:
        s = o.scenario
        truth = o.result("mc")
        for r in o.results:
            runtimes.append({"key": s.key, "method": r.method, "wall_ms": r.wall_ms})
            if truth is None or r.method == "mc":
                continue
            pairs.append({
                "key": s.key, "row_id": s.row_id, "back_prop_s": s.back_prop,
                "kind": s.uncertainty.kind, "scale": s.uncertainty.scale, "method": r.method,
                "p_true": truth.p_clamped, "se_true": truth.se,
                "p_pred": r.p_clamped, "p_raw": r.p_raw,
            })
    files = [path / "true_vs_pred.csv", path / "mse.csv"]
    _write_csv(files[0], PAIRS_COLUMNS, pairs)
    _write_csv(files[1], MSE_COLUMNS, report.mse)
    if timing:
        files.append(path / "runtimes.csv")
        _write_csv(files[2], RUNTIME_COLUMNS, runtimes)
    return files


def load_report(path: str | Path) -> BenchmarkReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return BenchmarkReport.from_dict(json.loads(path.read_text()))
