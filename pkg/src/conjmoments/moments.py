"""Initial uncertainty models and moments of polynomial random variables.

Perturbations are independent per RTN axis: zero-mean normal or uniform
on a symmetric box.  Moments of a polynomial in those variables are exact
either by linearity over monomials (:func:`poly_expectation`) or, for
powers of the squared-distance map, by tensor-product Gauss quadrature
with enough nodes to integrate the powers exactly.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, DomainError, ResourceLimitError
from .eventmap import CaTaylorMaps
from .polyalg import PolyMap, TruncatedPoly, poly_compose, poly_pow

KINDS = ("normal", "uniform")

# Table of the benchmark's diagonal RTN covariance [m^2] and uniform box [m].
TABLE2_VARIANCES_A = (0.625, 10.0, 3.025)
TABLE2_VARIANCES_B = (5.625, 90.0, 27.225)
UNIFORM_HALF_WIDTH = 1.0

DEFAULT_NODE_BUDGET = 400_000_000


@dataclass(frozen=True)
class UncertaintySpec:
    """Independent per-axis position uncertainty in each object's RTN frame.

    Attributes:
        kind: ``"normal"`` (``params`` are variances [m^2]) or ``"uniform"``
            (``params`` are half-widths [m]).
        params_a: R, T, N parameters of object A.
        params_b: R, T, N parameters of object B.
        scale: Multiplier applied to the distribution.
        scale_applies_to: ``"std"`` scales the linear size (standard
            deviation or half-width); ``"var"`` scales the variance.
    """

    kind: str
    params_a: tuple[float, float, float]
    params_b: tuple[float, float, float]
    scale: float = 1.0
    scale_applies_to: str = "std"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unsupported uncertainty kind {self.kind!r}")
        pa = tuple(float(p) for p in self.params_a)
        pb = tuple(float(p) for p in self.params_b)
        if len(pa) != 3 or len(pb) != 3:
            raise ContractError("three RTN parameters per object are required")
        if any(not (p >= 0.0 and math.isfinite(p)) for p in pa + pb):
            raise DomainError("uncertainty parameters must be finite and non-negative")
        if not self.scale > 0.0:
            raise DomainError("scale must be positive")
        if self.scale_applies_to not in ("std", "var"):
            raise ContractError("scale_applies_to must be 'std' or 'var'")
        object.__setattr__(self, "params_a", pa)
        object.__setattr__(self, "params_b", pb)

    @classmethod
    def table2_normal(cls, scale: float = 1.0, scale_applies_to: str = "std") -> "UncertaintySpec":
        return cls("normal", TABLE2_VARIANCES_A, TABLE2_VARIANCES_B, scale, scale_applies_to)

    @classmethod
    def uniform_box(
        cls, half_width_m: float = UNIFORM_HALF_WIDTH, scale: float = 1.0, scale_applies_to: str = "std"
    ) -> "UncertaintySpec":
        h = (half_width_m,) * 3
        return cls("uniform", h, h, scale, scale_applies_to)

    def swapped(self) -> "UncertaintySpec":
        return dataclasses.replace(self, params_a=self.params_b, params_b=self.params_a)

    def axis_sizes_km(self) -> np.ndarray:
        """Standard deviation (normal) or half-width (uniform) per axis [km].

        Order: A radial, transverse, normal; then B.
        """
        p = np.array(self.params_a + self.params_b)
        size_m = np.sqrt(p) if self.kind == "normal" else p
        factor = self.scale if self.scale_applies_to == "std" else math.sqrt(self.scale)
        return size_m * factor * 1e-3

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UncertaintySpec":
        return cls(
            d["kind"], tuple(d["params_a"]), tuple(d["params_b"]),
            d.get("scale", 1.0), d.get("scale_applies_to", "std"),
        )


def univariate_moment(kind: str, size: float, k: int) -> float:
    """``E[u^k]`` for ``u ~ N(0, size^2)`` or ``u ~ U(-size, size)``."""
    if k < 0:
        raise ContractError("moment order must be non-negative")
    if k % 2:
        return 0.0
    if kind == "normal":
        return size**k * _double_factorial(k - 1)
    if kind == "uniform":
        return size**k / (k + 1)
    raise ContractError(f"unsupported uncertainty kind {kind!r}")


def _double_factorial(n: int) -> float:
    out = 1.0
    while n > 1:
        out *= n
        n -= 2
    return out


def initial_monomial_moment(spec: UncertaintySpec, alpha: Sequence[int]) -> float:
    """``E[du^alpha]`` over the six RTN axes, in km^|alpha|."""
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != 6:
        raise ContractError("alpha must have one exponent per RTN axis (6)")
    sizes = spec.axis_sizes_km()
    out = 1.0
    for a, s in zip(alpha, sizes):
        out *= univariate_moment(spec.kind, s, a)
        if out == 0.0:
            return 0.0
    return out


def _moment_table(spec: UncertaintySpec, max_deg: int, length_scale: float) -> np.ndarray:
    sizes = spec.axis_sizes_km() / length_scale
    return np.array(
        [[univariate_moment(spec.kind, s, k) for k in range(max_deg + 1)] for s in sizes]
    )


def poly_expectation(p: TruncatedPoly, spec: UncertaintySpec, length_scale: float = 1.0) -> float:
    """Exact ``E[p(du / length_scale)]`` for ``p`` in the six RTN variables."""
    if p.nvars != 6:
        raise ContractError("polynomial must be in the six RTN position variables")
    table = _moment_table(spec, p.order, length_scale)
    exps = p.basis.exps
    mono = np.ones(p.basis.size)
    for axis in range(6):
        mono *= table[axis, exps[:, axis]]
    return float(math.fsum(p.coeffs * mono))


def rtn_substitution(maps: CaTaylorMaps, frames: Sequence[np.ndarray]) -> CaTaylorMaps:
    """Re-express maps in per-object RTN perturbation coordinates.

    ``frames`` holds one rotation per block of three uncertain variables;
    each has the R, T, N unit vectors as columns, so ``dx = R du``.
    """
    k = maps.nvars
    if 3 * len(frames) != k:
        raise ContractError(f"need {k // 3} frames for {k} variables")
    q = np.zeros((k, k))
    for b, rot in enumerate(frames):
        rot = np.asarray(rot, dtype=float)
        if rot.shape != (3, 3) or not np.allclose(rot.T @ rot, np.eye(3), atol=1e-10):
            raise ContractError("frames must be orthonormal 3x3 matrices")
        q[3 * b : 3 * b + 3, 3 * b : 3 * b + 3] = rot
    order = maps.order
    labels = tuple(
        f"d{axis}_{obj}" for obj in "AB"[: len(frames)] for axis in "RTN"
    ) if len(frames) <= 2 else ()
    lin = np.zeros((k, maps.d2.basis.size))
    lin[:, 1 : k + 1] = q
    args = PolyMap.from_array(lin, k, order, labels)
    return dataclasses.replace(
        maps,
        state=maps.state.compose(args),
        time=poly_compose(maps.time, args),
        d2=poly_compose(maps.d2, args),
    )


@dataclass(frozen=True)
class MomentSet:
    """Raw moments ``m_k = E[x^k]``, ``k = 1..M``, of a scalar variable.

    ``standardized`` holds ``E[z^k]`` for ``z = (x - shift) / scale``,
    computed directly rather than from the raw values, which lose most of
    their significant digits to cancellation when the spread is small.
    """

    values: tuple[float, ...]
    shift: float = 0.0
    scale: float = 1.0
    standardized: tuple[float, ...] | None = None
    unit: str = "km^2"

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 1:
            raise ContractError("at least one moment is required")
        object.__setattr__(self, "values", vals)
        if not self.scale >= 0.0:
            raise ContractError("scale must be non-negative")
        if self.scale == 0.0 and self.standardized is None:
            raise ContractError("a zero scale needs explicit standardized moments")
        if self.standardized is not None:
            std = tuple(float(v) for v in self.standardized)
            if len(std) != len(vals):
                raise ContractError("standardized moments must match the raw count")
            object.__setattr__(self, "standardized", std)

    @property
    def M(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return self.shift + self.scale * self._std()[1]

    @property
    def variance(self) -> float:
        z = self._std()
        return self.scale**2 * (z[2] - z[1] ** 2) if self.M >= 2 else float("nan")

    def _std(self) -> np.ndarray:
        if self.standardized is not None:
            return np.concatenate([[1.0], self.standardized])
        if self.shift == 0.0 and self.scale == 1.0:
            return np.concatenate([[1.0], self.values])
        return _affine_moments(np.concatenate([[1.0], self.values]), 0.0, 1.0, self.shift, self.scale)

    def moments_about(self, center: float, scale: float) -> np.ndarray:
        """``E[((x - center) / scale)^k]`` for ``k = 0..M``."""
        if not scale > 0.0:
            raise DomainError("scale must be positive")
        return _affine_moments(self._std(), self.shift, self.scale, center, scale)

    def hankel_min_eigenvalue(self) -> float:
        """Smallest eigenvalue of the normalized Hankel matrix of the moments."""
        s = self.scale if self.scale > 0.0 else 1.0
        z = self.moments_about(self.shift, s)
        n = self.M // 2
        h = np.array([[z[i + j] for j in range(n + 1)] for i in range(n + 1)])
        d = np.sqrt(np.abs(np.diag(h)))
        d[d == 0.0] = 1.0
        return float(np.linalg.eigvalsh(h / np.outer(d, d)).min())

    def is_valid(self, tol: float = 1e-12) -> bool:
        """Positivity of the moments and of the Hankel matrix (to ``tol``)."""
        return all(v > 0.0 for v in self.values) and self.hankel_min_eigenvalue() >= -tol

    def to_dict(self) -> dict:
        return {
            "unit": self.unit,
            "values": list(self.values),
            "shift": self.shift,
            "scale": self.scale,
            "standardized": list(self.standardized) if self.standardized is not None else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "MomentSet":
        std = d.get("standardized")
        return cls(
            tuple(d["values"]), d.get("shift", 0.0), d.get("scale", 1.0),
            tuple(std) if std is not None else None, d.get("unit", "km^2"),
        )

    @classmethod
    def from_json(cls, text: str) -> "MomentSet":
        return cls.from_dict(json.loads(text))


def _affine_moments(z: np.ndarray, c0: float, s0: float, c: float, s: float) -> np.ndarray:
    """Moments of ``(x - c) / s`` from moments ``z`` of ``(x - c0) / s0``."""
    a = s0 / s
    b = (c0 - c) / s
    out = np.empty_like(z)
    for k in range(z.size):
        terms = [math.comb(k, j) * a**j * b ** (k - j) * z[j] for j in range(k + 1)]
        out[k] = math.fsum(terms)
    return out


# ---------------------------------------------------------------------------
# Moments of the squared-distance map.


def quadrature_rule(kind: str, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and probability weights for the unit-size distribution."""
    if kind == "normal":
        x, w = np.polynomial.hermite_e.hermegauss(n)
        return x, w / math.sqrt(2.0 * math.pi)
    if kind == "uniform":
        x, w = np.polynomial.legendre.leggauss(n)
        return x, w / 2.0
    raise ContractError(f"unsupported uncertainty kind {kind!r}")


def _coeff_tensor(p: TruncatedPoly) -> np.ndarray:
    shape = (p.order + 1,) * p.nvars
    t = np.zeros(shape)
    t[tuple(p.basis.exps.T)] = p.coeffs
    return t


def _grid_values(tensor: np.ndarray, vander: list[np.ndarray]) -> np.ndarray:
    """Evaluate a dense coefficient tensor on the tensor grid of ``vander``."""
    out = tensor
    for v in vander:
        # contract the leading coefficient axis; the node axis goes last
        out = np.tensordot(out, v, axes=([0], [1]))
    return out


def distance_moments(
    maps: CaTaylorMaps,
    spec: UncertaintySpec,
    M: int = 8,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> MomentSet:
    """Moments ``E[D2^k]``, ``k = 1..M``, of the squared-distance map.

    ``maps`` must be expressed in the six RTN variables (see
    :func:`rtn_substitution`).  Each axis uses a Gauss rule with
    ``floor(M N / 2) + 1`` nodes, which integrates the per-variable degree
    ``M N`` of ``D2^M`` exactly, so the result equals the expectation of the
    polynomial powers with no further truncation.

    Raises:
        ResourceLimitError: the tensor grid exceeds ``node_budget`` nodes.
    """
    if M < 2:
        raise ContractError("at least two moments are required")
    p = maps.d2
    if p.nvars != 6:
        raise ContractError("moment propagation needs the six RTN position variables")
    sizes = spec.axis_sizes_km() / maps.length_scale
    n = (M * p.order) // 2 + 1
    rules = []
    for s in sizes:
        if s == 0.0 or p.order == 0:
            rules.append((np.zeros(1), np.ones(1)))
        else:
            x, w = quadrature_rule(spec.kind, n)
            rules.append((s * x, w))
    total = math.prod(len(r[0]) for r in rules)
    if total > node_budget:
        raise ResourceLimitError(
            f"{total} quadrature nodes exceed the budget of {node_budget}; "
            "lower the moment count or the map order"
        )
    tensor = _coeff_tensor(p)
    powers = np.arange(p.order + 1)
    vander = [r[0][:, None] ** powers[None, :] for r in rules]
    w_rest = rules[1][1]
    for r in rules[2:]:
        w_rest = np.multiply.outer(w_rest, r[1])
    c0 = p.const

    def sweep(fn):
        acc = None
        x1, w1 = rules[0]
        for i in range(x1.size):
            t1 = np.tensordot(vander[0][i], tensor, axes=([0], [0]))
            vals = _grid_values(t1, vander[1:])
            part = fn(vals, w1[i] * w_rest)
            acc = part if acc is None else acc + part
        return acc

    def first_pass(vals, w):
        d = vals - c0
        return np.array([np.sum(w * d), np.sum(w * d * d)])

    s1, s2 = sweep(first_pass)
    mean = c0 + s1
    var = max(s2 - s1 * s1, 0.0)
    sd = math.sqrt(var)
    scale = sd if sd > 0.0 else 1.0

    def second_pass(vals, w):
        out = np.empty(2 * M)
        z = (vals - mean) / scale
        zk = w.copy()
        xk = w.copy()
        for k in range(M):
            zk = zk * z
            xk = xk * vals
            out[k] = np.sum(zk)
            out[M + k] = np.sum(xk)
        return out

    res = sweep(second_pass)
    std = tuple(res[:M])
    raw = tuple(res[M:])
    if sd == 0.0:
        return MomentSet(raw, mean, 0.0, (0.0,) * M)
    return MomentSet(raw, mean, sd, std)


def distance_moments_by_powers(
    maps: CaTaylorMaps, spec: UncertaintySpec, M: int = 8
) -> MomentSet:
    """Same moments via explicit ``poly_pow(D2, k, k N)`` and linearity.

    Practical only for few variables or low orders; used for cross-checks.
    """
    p = maps.d2
    raw = []
    for k in range(1, M + 1):
        pk = poly_pow(p, k, max(k * p.order, 1))
        raw.append(poly_expectation(pk, spec, maps.length_scale))
    return MomentSet(tuple(raw))
