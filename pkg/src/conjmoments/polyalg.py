"""Truncated multivariate polynomial algebra (differential algebra).

A :class:`TruncatedPoly` of ``nvars`` variables truncated at total order
``order`` stores its coefficients densely over the monomials of degree
``<= order`` in graded-lexicographic order.  All index bookkeeping lives in
a cached :class:`Basis`, so products of whole batches of polynomials (the
rows of a jet state) reduce to one gather, one multiply and one
``np.add.reduceat``.

Graded-lex order: monomials sorted by total degree, then lexicographically
with larger exponents of earlier variables first, e.g. for two variables
``1, x, y, x^2, xy, y^2, ...``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numba
import numpy as np

from .errors import ContractError, NonInvertibleMapError, ResourceLimitError

PRUNE_THRESHOLD = 1e-300
MAX_MUL_PAIRS = 20_000_000


@numba.njit(cache=True)
def _mul_kernel(a, b, ii, jj, kk, out):
    for r in range(a.shape[0]):
        for p in range(ii.shape[0]):
            out[r, kk[p]] += a[r, ii[p]] * b[r, jj[p]]


def _monomials(nvars: int, order: int) -> list[tuple[int, ...]]:
    out = []
    for deg in range(order + 1):
        block = [
            c for c in itertools.product(range(deg + 1), repeat=nvars) if sum(c) == deg
        ]
        block.sort(key=lambda e: tuple(-x for x in e))
        out.extend(block)
    if nvars == 0:
        out = [()]
    return out


class Basis:
    """Monomial layout and precomputed index tables for one algebra."""

    def __init__(self, nvars: int, order: int):
        if nvars < 0 or order < 0:
            raise ContractError("nvars and order must be non-negative")
        self.nvars = nvars
        self.order = order
        mons = _monomials(nvars, order)
        self.exps = np.array(mons, dtype=np.int64).reshape(len(mons), nvars)
        self.size = len(mons)
        self.degrees = self.exps.sum(axis=1)
        self.index = {m: k for k, m in enumerate(mons)}
        self._radix = (order + 1) ** np.arange(nvars, dtype=np.int64)
        self._codes = self.exps @ self._radix
        self._code_order = np.argsort(self._codes)
        self._mul = None
        self._parents = None
        self._partials = {}

    def lookup(self, exps: np.ndarray) -> np.ndarray:
        """Indices of exponent rows (all entries must belong to the basis)."""
        codes = np.asarray(exps, dtype=np.int64) @ self._radix
        pos = np.searchsorted(self._codes[self._code_order], codes)
        return self._code_order[pos]

    @property
    def mul_tables(self):
        if self._mul is None:
            n = self.size
            npairs = math.comb(2 * self.nvars + self.order, self.order)
            if npairs > MAX_MUL_PAIRS:
                raise ResourceLimitError(
                    f"product table for nvars={self.nvars}, order={self.order} "
                    f"needs {npairs} pairs (budget {MAX_MUL_PAIRS})"
                )
            ii, jj, kk = [], [], []
            deg = self.degrees
            for i in range(n):
                js = np.nonzero(deg <= self.order - deg[i])[0]
                ii.append(np.full(js.size, i))
                jj.append(js)
                kk.append(self.lookup(self.exps[i] + self.exps[js]))
            ii, jj, kk = (np.concatenate(x) for x in (ii, jj, kk))
            srt = np.argsort(kk, kind="stable")
            ii, jj, kk = ii[srt], jj[srt], kk[srt]
            self._mul = (ii, jj, kk)
        return self._mul

    @property
    def parents(self):
        """For each monomial of degree >= 1: (parent index, variable index)."""
        if self._parents is None:
            parent = np.zeros(self.size, dtype=np.int64)
            var = np.zeros(self.size, dtype=np.int64)
            for k in range(1, self.size):
                v = int(np.nonzero(self.exps[k])[0][0])
                e = self.exps[k].copy()
                e[v] -= 1
                parent[k] = self.index[tuple(e)]
                var[k] = v
            self._parents = (parent, var)
        return self._parents

    def partial_table(self, var: int):
        if var not in self._partials:
            src = np.nonzero(self.exps[:, var] > 0)[0]
            e = self.exps[src].copy()
            factor = e[:, var].astype(float)
            e[:, var] -= 1
            self._partials[var] = (src, self.lookup(e), factor)
        return self._partials[var]

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Truncated product of coefficient arrays broadcast over leading axes."""
        ii, jj, kk = self.mul_tables
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        shape = a.shape
        a2 = np.ascontiguousarray(a.reshape(-1, self.size))
        b2 = np.ascontiguousarray(b.reshape(-1, self.size))
        out = np.zeros_like(a2)
        _mul_kernel(a2, b2, ii, jj, kk, out)
        return out.reshape(shape)

    def rpow(self, a: np.ndarray, p: float) -> np.ndarray:
        """Real power ``a**p`` via the binomial series about the constant term."""
        c = a[..., :1]
        if np.any(c == 0.0):
            if p >= 0 and p == int(p):
                out = np.zeros_like(a)
                out[..., 0] = 1.0
                for _ in range(int(p)):
                    out = self.mul(out, a)
                return out
            raise ContractError("real power of a polynomial with zero constant term")
        t = a / c
        t[..., 0] = 0.0
        out = np.zeros_like(a)
        out[..., 0] = 1.0
        for k in range(self.order, 0, -1):
            out = self.mul(t, out) * ((p - k + 1) / k)
            out[..., 0] += 1.0
        return out * c**p

    def monomial_values(self, points: np.ndarray) -> np.ndarray:
        """Matrix of all monomials evaluated at ``points`` (shape (P, nvars))."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        vals = np.empty((points.shape[0], self.size))
        vals[:, 0] = 1.0
        parent, var = self.parents
        for k in range(1, self.size):
            vals[:, k] = vals[:, parent[k]] * points[:, var[k]]
        return vals


@lru_cache(maxsize=None)
def get_basis(nvars: int, order: int) -> Basis:
    return Basis(nvars, order)


class TruncatedPoly:
    """Immutable truncated polynomial over a cached :class:`Basis`."""

    __slots__ = ("basis", "_c")
    __array_priority__ = 1000

    def __init__(self, nvars: int, order: int, coeffs=None):
        self.basis = get_basis(nvars, order)
        if coeffs is None:
            c = np.zeros(self.basis.size)
        else:
            c = np.array(coeffs, dtype=float)
            if c.shape != (self.basis.size,):
                raise ContractError(
                    f"expected {self.basis.size} coefficients, got shape {c.shape}"
                )
            c[np.abs(c) < PRUNE_THRESHOLD] = 0.0
        c.flags.writeable = False
        self._c = c

    # -- construction -----------------------------------------------------
    @classmethod
    def _wrap(cls, basis: Basis, coeffs: np.ndarray) -> "TruncatedPoly":
        return cls(basis.nvars, basis.order, coeffs)

    @classmethod
    def constant(cls, value: float, nvars: int, order: int) -> "TruncatedPoly":
        c = np.zeros(get_basis(nvars, order).size)
        c[0] = value
        return cls(nvars, order, c)

    @classmethod
    def variable(
        cls, i: int, nvars: int, order: int, value: float = 0.0
    ) -> "TruncatedPoly":
        """The polynomial ``value + x_i``."""
        if not 0 <= i < nvars:
            raise ContractError(f"variable index {i} out of range for {nvars} vars")
        basis = get_basis(nvars, order)
        c = np.zeros(basis.size)
        c[0] = value
        if order >= 1:
            e = [0] * nvars
            e[i] = 1
            c[basis.index[tuple(e)]] = 1.0
        return cls(nvars, order, c)

    @classmethod
    def from_terms(
        cls, terms: Mapping[Sequence[int], float], nvars: int, order: int
    ) -> "TruncatedPoly":
        """Build from ``{exponents: coeff}``; terms above ``order`` are dropped."""
        basis = get_basis(nvars, order)
        c = np.zeros(basis.size)
        for exps, val in terms.items():
            exps = tuple(int(x) for x in exps)
            if len(exps) != nvars or min(exps, default=0) < 0:
                raise ContractError(f"bad multi-index {exps} for {nvars} variables")
            if sum(exps) <= order:
                c[basis.index[exps]] += val
        return cls(nvars, order, c)

    # -- views ------------------------------------------------------------
    @property
    def nvars(self) -> int:
        return self.basis.nvars

    @property
    def order(self) -> int:
        return self.basis.order

    @property
    def coeffs(self) -> np.ndarray:
        return self._c

    @property
    def const(self) -> float:
        return float(self._c[0])

    @property
    def terms(self) -> dict[tuple[int, ...], float]:
        nz = np.nonzero(self._c)[0]
        return {tuple(int(x) for x in self.basis.exps[k]): float(self._c[k]) for k in nz}

    def coeff(self, exps: Sequence[int]) -> float:
        k = self.basis.index.get(tuple(exps))
        return 0.0 if k is None else float(self._c[k])

    def degree(self) -> int:
        nz = np.nonzero(self._c)[0]
        return int(self.basis.degrees[nz].max()) if nz.size else 0

    def __repr__(self) -> str:
        return f"TruncatedPoly(nvars={self.nvars}, order={self.order}, nterms={len(self.terms)})"

    # -- arithmetic -------------------------------------------------------
    def _check(self, other: "TruncatedPoly") -> None:
        if self.basis is not other.basis:
            raise ContractError(
                f"algebra mismatch: ({self.nvars}, {self.order}) vs "
                f"({other.nvars}, {other.order})"
            )

    def __add__(self, other):
        if isinstance(other, TruncatedPoly):
            self._check(other)
            return self._wrap(self.basis, self._c + other._c)
        c = self._c.copy()
        c[0] += other
        return self._wrap(self.basis, c)

    __radd__ = __add__

    def __neg__(self):
        return self._wrap(self.basis, -self._c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, TruncatedPoly):
            self._check(other)
            return self._wrap(self.basis, self.basis.mul(self._c, other._c))
        return self._wrap(self.basis, self._c * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, TruncatedPoly):
            return self * poly_rpow(other, -1.0)
        return self._wrap(self.basis, self._c / other)

    def __pow__(self, k: int):
        return poly_pow(self, k, self.order)

    def __eq__(self, other):
        return (
            isinstance(other, TruncatedPoly)
            and self.basis is other.basis
            and np.array_equal(self._c, other._c)
        )

    __hash__ = None

    def __call__(self, point):
        return poly_eval(self, point)

    # -- conversions ------------------------------------------------------
    def truncate(self, order: int) -> "TruncatedPoly":
        """Re-express in the algebra of a different order (drops or pads terms)."""
        return embed(self, range(self.nvars), self.nvars, order)

    def to_text(self) -> str:
        """Debug serialization: one ``coeff e1 e2 ... ek`` line per term."""
        lines = []
        for k in np.nonzero(self._c)[0]:
            exps = " ".join(str(int(x)) for x in self.basis.exps[k])
            lines.append(f"{float(self._c[k])!r} {exps}".rstrip())
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str, nvars: int, order: int) -> "TruncatedPoly":
        terms: dict[tuple[int, ...], float] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != nvars + 1:
                raise ContractError(f"line {lineno}: expected {nvars + 1} fields")
            terms[tuple(int(x) for x in parts[1:])] = float(parts[0])
        return cls.from_terms(terms, nvars, order)


def _check_pair(a: TruncatedPoly, b: TruncatedPoly) -> None:
    if not isinstance(a, TruncatedPoly) or not isinstance(b, TruncatedPoly):
        raise ContractError("operands must be TruncatedPoly")
    a._check(b)


def poly_add(a: TruncatedPoly, b: TruncatedPoly) -> TruncatedPoly:
    _check_pair(a, b)
    return a + b


def poly_mul(a: TruncatedPoly, b: TruncatedPoly) -> TruncatedPoly:
    _check_pair(a, b)
    return a * b


def poly_pow(a: TruncatedPoly, k: int, out_order: int | None = None) -> TruncatedPoly:
    """``a**k`` computed in the algebra of order ``out_order``.

    With ``out_order = k * a.order`` the power is exact (no truncation
    beyond the one already present in ``a``).
    """
    if k < 0 or int(k) != k:
        raise ContractError("exponent must be a non-negative integer")
    out_order = a.order if out_order is None else out_order
    base = a if out_order == a.order else a.truncate(out_order)
    result = TruncatedPoly.constant(1.0, a.nvars, out_order)
    sq = base
    k = int(k)
    while k:
        if k & 1:
            result = result * sq
        k >>= 1
        if k:
            sq = sq * sq
    return result


def poly_rpow(a: TruncatedPoly, p: float) -> TruncatedPoly:
    """Real power ``a**p``; requires a non-zero constant term for non-integer p."""
    return TruncatedPoly._wrap(a.basis, a.basis.rpow(np.array(a.coeffs), p))


def poly_eval(a: TruncatedPoly, point) -> float:
    point = np.asarray(point, dtype=float).ravel()
    if point.size != a.nvars:
        raise ContractError(f"point has {point.size} entries, expected {a.nvars}")
    return float(a.basis.monomial_values(point[None, :])[0] @ a.coeffs)


def eval_many(a: TruncatedPoly, points: np.ndarray, chunk: int = 65536) -> np.ndarray:
    """Evaluate at each row of ``points``; memory bounded by ``chunk``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != a.nvars:
        raise ContractError("point dimension mismatch")
    nz = np.nonzero(a.coeffs)[0]
    out = np.empty(points.shape[0])
    for s in range(0, points.shape[0], chunk):
        vals = a.basis.monomial_values(points[s : s + chunk])
        out[s : s + chunk] = vals[:, nz] @ a.coeffs[nz]
    return out


def poly_partial(a: TruncatedPoly, var: int) -> TruncatedPoly:
    if not 0 <= var < a.nvars:
        raise ContractError(f"variable index {var} out of range")
    src, dst, factor = a.basis.partial_table(var)
    c = np.zeros(a.basis.size)
    c[dst] = a.coeffs[src] * factor
    return TruncatedPoly._wrap(a.basis, c)


def embed(
    a: TruncatedPoly, var_map: Iterable[int], nvars: int, order: int
) -> TruncatedPoly:
    """Relabel variable ``i`` of ``a`` as variable ``var_map[i]`` of a new algebra."""
    var_map = list(var_map)
    if len(var_map) != a.nvars:
        raise ContractError("var_map must list one target per variable")
    target = get_basis(nvars, order)
    keep = np.nonzero((a.basis.degrees <= order) & (a.coeffs != 0))[0]
    if a.basis.size == 1:
        keep = np.array([0])
    exps = np.zeros((keep.size, nvars), dtype=np.int64)
    if a.nvars:
        exps[:, var_map] = a.basis.exps[keep]
    c = np.zeros(target.size)
    np.add.at(c, target.lookup(exps), a.coeffs[keep])
    return TruncatedPoly(nvars, order, c)


@dataclass(frozen=True)
class PolyMap:
    """Vector of polynomials sharing one algebra, with variable labels."""

    components: tuple[TruncatedPoly, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ContractError("PolyMap needs at least one component")
        basis = comps[0].basis
        if any(c.basis is not basis for c in comps):
            raise ContractError("all components must share nvars and order")
        labels = tuple(self.labels) or tuple(f"x{i}" for i in range(basis.nvars))
        if len(labels) != basis.nvars:
            raise ContractError("labels length must equal nvars")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def identity(cls, nvars: int, order: int, labels=()) -> "PolyMap":
        return cls(
            tuple(TruncatedPoly.variable(i, nvars, order) for i in range(nvars)), labels
        )

    @classmethod
    def from_array(cls, coeffs: np.ndarray, nvars: int, order: int, labels=()) -> "PolyMap":
        return cls(tuple(TruncatedPoly(nvars, order, row) for row in coeffs), labels)

    @property
    def basis(self) -> Basis:
        return self.components[0].basis

    @property
    def nvars(self) -> int:
        return self.basis.nvars

    @property
    def order(self) -> int:
        return self.basis.order

    def __len__(self) -> int:
        return len(self.components)

    def __getitem__(self, i):
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    def coeff_array(self) -> np.ndarray:
        return np.stack([c.coeffs for c in self.components])

    def constants(self) -> np.ndarray:
        return self.coeff_array()[:, 0].copy()

    def linear_part(self) -> np.ndarray:
        """Jacobian at the origin, shape (ncomponents, nvars)."""
        if self.order < 1:
            return np.zeros((len(self), self.nvars))
        return self.coeff_array()[:, 1 : self.nvars + 1].copy()

    def eval(self, point) -> np.ndarray:
        point = np.asarray(point, dtype=float).ravel()
        if point.size != self.nvars:
            raise ContractError("point dimension mismatch")
        return self.coeff_array() @ self.basis.monomial_values(point[None, :])[0]

    def compose(self, args: "PolyMap", allow_constant: bool = False) -> "PolyMap":
        return PolyMap(
            tuple(_compose_many(self.coeff_array(), self.basis, args, allow_constant)),
            args.labels,
        )

    def to_text(self) -> str:
        out = []
        for label, comp in zip(self._out_labels(), self.components):
            out.append(f"# {label}\n{comp.to_text()}")
        return "".join(out)

    def _out_labels(self):
        return [f"component {i}" for i in range(len(self))]


def _monomials_of(basis: Basis, args: PolyMap) -> np.ndarray:
    """Coefficient rows of every monomial of ``basis`` evaluated at ``args``."""
    target = args.basis
    a = args.coeff_array()
    vals = np.zeros((basis.size, target.size))
    vals[0, 0] = 1.0
    parent, var = basis.parents
    for deg in range(1, basis.order + 1):
        ks = np.nonzero(basis.degrees == deg)[0]
        vals[ks] = target.mul(vals[parent[ks]], a[var[ks]])
    return vals


def _compose_many(coeffs, basis, args: PolyMap, allow_constant: bool):
    if len(args) != basis.nvars:
        raise ContractError(
            f"composition needs {basis.nvars} arguments, got {len(args)}"
        )
    if not allow_constant and np.any(args.constants() != 0.0):
        raise ContractError(
            "composition arguments have non-zero constant terms; "
            "pass allow_constant=True to re-expand explicitly"
        )
    vals = _monomials_of(basis, args)
    out = np.atleast_2d(coeffs) @ vals
    nv, order = args.nvars, args.order
    return [TruncatedPoly(nv, order, row) for row in out]


def poly_compose(
    f: TruncatedPoly, args: PolyMap | Sequence[TruncatedPoly], allow_constant: bool = False
) -> TruncatedPoly:
    """``f(args_1, ..., args_n)`` truncated at the order of ``args``."""
    if not isinstance(args, PolyMap):
        args = PolyMap(tuple(args))
    return _compose_many(f.coeffs, f.basis, args, allow_constant)[0]


def map_invert(m: PolyMap) -> PolyMap:
    """Inverse of an origin-preserving map with invertible linear part.

    Fixed-point iteration ``inv <- L^-1 (I - N(inv))`` with ``m = L + N``;
    each sweep fixes one more order, so ``order`` sweeps are exact.
    """
    n = m.nvars
    if len(m) != n:
        raise ContractError("map must be square to be inverted")
    if np.any(m.constants() != 0.0):
        raise ContractError("map must be origin-preserving (zero constant terms)")
    lin = m.linear_part()
    try:
        cond = np.linalg.cond(lin)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e15:
        raise NonInvertibleMapError(
            f"linear part is singular (condition number {cond:.3g}); "
            f"diagonal {np.diag(lin)}"
        )
    lin_inv = np.linalg.inv(lin)
    basis = m.basis
    coeffs = m.coeff_array()
    nonlin = coeffs.copy()
    nonlin[:, 1 : n + 1] = 0.0
    ident = PolyMap.identity(n, m.order).coeff_array()
    inv = lin_inv @ ident
    for _ in range(m.order):
        args = PolyMap.from_array(inv, n, m.order)
        composed = nonlin @ _monomials_of(basis, args)
        inv = lin_inv @ (ident - composed)
    return PolyMap.from_array(inv, n, m.order, m.labels)
