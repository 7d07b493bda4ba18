"""Orthogonal-polynomial PDF reconstruction from moments.

The unknown density is written ``f(x) = w(x) sum_i C_i P_i(x)`` where ``w``
is a reference distribution fitted by the method of moments and ``P_i``
are its orthonormal polynomials, so that ``C_i = E[P_i(x)]``.

Numerically every family works in its own standardized variable ``z``:
``(x - mu) / sigma`` for the normal, ``x / theta`` for the gamma and
``(2 x - u - v) / (v - u)`` (on ``[-1, 1]``) for the generalized beta and
uniform references.
The polynomial coefficient tables, the moments and the closed-form
interval integrals are all taken in ``z``; this keeps the alternating sums
well conditioned when the variable's spread is small compared to its mean.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, DegenerateDistributionError, DomainError
from .moments import MomentSet
from .specfun import (
    inc_gamma_lower,
    ln_beta,
    ln_gamma,
    reg_inc_beta,
    reg_inc_gamma_lower,
    rising_factorial,
)

GAMMA_TO_NORMAL_SHAPE = 50.0
MAX_DEGREE = 20
FAMILIES = ("uniform", "genbeta", "gamma", "normal")


@dataclass(frozen=True)
class ReferenceDistribution:
    """Weight function ``w(x)``.

    Parameters by kind:
        uniform: ``(u, v)``;
        genbeta: ``(alpha, beta, u, v)`` with density proportional to
        ``(x - u)^(alpha - 1) (v - x)^(beta - 1)`` on ``[u, v]``;
        gamma: ``(alpha, theta)`` (shape, scale);
        normal: ``(mu, var)``.
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.params)
        object.__setattr__(self, "params", p)
        k = self.kind
        ok = {
            "uniform": lambda: len(p) == 2 and p[0] < p[1],
            "genbeta": lambda: len(p) == 4 and p[0] > 0 and p[1] > 0 and p[2] < p[3],
            "gamma": lambda: len(p) == 2 and p[0] > 0 and p[1] > 0,
            "normal": lambda: len(p) == 2 and p[1] > 0,
        }
        if k not in ok:
            raise ContractError(f"unknown reference kind {k!r}")
        if not (all(map(math.isfinite, p)) and ok[k]()):
            raise DomainError(f"invalid {k} parameters {p}")

    @classmethod
    def uniform(cls, u: float, v: float):
        return cls("uniform", (u, v))

    @classmethod
    def genbeta(cls, alpha: float, beta: float, u: float = 0.0, v: float = 1.0):
        return cls("genbeta", (alpha, beta, u, v))

    @classmethod
    def gamma(cls, alpha: float, theta: float):
        return cls("gamma", (alpha, theta))

    @classmethod
    def normal(cls, mu: float, var: float):
        return cls("normal", (mu, var))

    @property
    def beta_shape(self) -> tuple[float, float]:
        """``(alpha, beta)`` for the bounded families."""
        return (1.0, 1.0) if self.kind == "uniform" else self.params[:2]

    @property
    def support(self) -> tuple[float, float]:
        if self.kind == "uniform":
            return self.params
        if self.kind == "genbeta":
            return self.params[2:]
        if self.kind == "gamma":
            return (0.0, math.inf)
        return (-math.inf, math.inf)

    @property
    def standardization(self) -> tuple[float, float]:
        """``(center, scale)`` of the working variable ``z = (x - center) / scale``."""
        if self.kind in ("uniform", "genbeta"):
            u, v = self.support
            return 0.5 * (u + v), 0.5 * (v - u)
        if self.kind == "gamma":
            return 0.0, self.params[1]
        return self.params[0], math.sqrt(self.params[1])

    def moments(self, M: int) -> MomentSet:
        """Exact raw moments ``E[x^k]``, ``k = 1..M``, of the reference itself."""
        c, s = self.standardization
        z = np.array([self._z_moment(k) for k in range(M + 1)])
        raw = []
        for n in range(1, M + 1):
            raw.append(math.fsum(math.comb(n, k) * s**k * c ** (n - k) * z[k] for k in range(n + 1)))
        return MomentSet(tuple(raw), c, s, tuple(z[1:]))

    def _z_moment(self, k: int) -> float:
        if self.kind in ("uniform", "genbeta"):
            # integrating d/ds[(1 - s^2) w(s) s^n] = 0 over [-1, 1] gives
            # m_{n+1} = ((alpha - beta) m_n + n m_{n-1}) / (n + alpha + beta)
            a, b = self.beta_shape
            prev, cur = 1.0, (a - b) / (a + b)
            if k == 0:
                return 1.0
            for n in range(1, k):
                prev, cur = cur, ((a - b) * cur + n * prev) / (n + a + b)
            return cur
        if self.kind == "gamma":
            return rising_factorial(self.params[0], k)
        return 0.0 if k % 2 else _double_factorial(k - 1)

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        c, s = self.standardization
        z = (x - c) / s
        out = np.zeros_like(z)
        if self.kind in ("uniform", "genbeta"):
            a, b = self.beta_shape
            t = 0.5 * (z + 1.0)
            inside = (t > 0.0) & (t < 1.0)
            if a == 1.0:
                inside |= t == 0.0
            if b == 1.0:
                inside |= t == 1.0
            ti = t[inside]
            with np.errstate(divide="ignore"):
                logw = (a - 1) * np.log(ti) + (b - 1) * np.log1p(-ti) - ln_beta(a, b)
            out[inside] = np.exp(logw) / (2.0 * s)
        elif self.kind == "gamma":
            a = self.params[0]
            inside = z > 0.0
            zi = z[inside]
            out[inside] = np.exp((a - 1) * np.log(zi) - zi - ln_gamma(a)) / s
            if a == 1.0:
                out[z == 0.0] = 1.0 / s
        else:
            out = np.exp(-0.5 * z * z) / (s * math.sqrt(2.0 * math.pi))
        return out

    def cdf_interval(self, a: float, b: float) -> float:
        """Reference probability of ``[a, b]`` (special functions, no quadrature)."""
        return float(_z_integrals(self, a, b, 0)[0])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}


def _t_to_s(t_moments) -> list[float]:
    """Map integrals against ``t^k`` (``t`` in [0, 1]) to ``s^n = (2t - 1)^n``."""
    out = []
    for n in range(len(t_moments)):
        terms = [math.comb(n, k) * 2.0**k * (-1.0) ** (n - k) * t_moments[k] for k in range(n + 1)]
        out.append(math.fsum(terms))
    return out


def _double_factorial(n: int) -> float:
    out = 1.0
    while n > 1:
        out *= n
        n -= 2
    return out


# ---------------------------------------------------------------------------
# Fitting.


def fit_reference(moments: MomentSet, domain_hint="half-line") -> ReferenceDistribution:
    """Method-of-moments reference matching ``m_1`` and ``m_2``.

    Args:
        moments: At least two moments.
        domain_hint: ``"half-line"`` (gamma, or normal when the fitted
            shape exceeds ``GAMMA_TO_NORMAL_SHAPE``), ``"real-line"``
            (normal), or a pair ``(u, v)`` for a bounded domain (generalized
            beta; uniform when both shapes come out as 1).

    Raises:
        DegenerateDistributionError: ``m_2 <= m_1^2``.
        DomainError: the bounded fit yields a non-positive shape.
    """
    if moments.M < 2:
        raise ContractError("fitting needs two moments")
    m1 = moments.mean
    var = moments.variance
    if not (var > 0.0 and math.isfinite(var)):
        raise DegenerateDistributionError(
            f"variance {var:.3g} is not positive: the variable is (near) deterministic"
        )
    if isinstance(domain_hint, str):
        hint = domain_hint.replace("_", "-")
        if hint == "real-line":
            return ReferenceDistribution.normal(m1, var)
        if hint == "half-line":
            if not m1 > 0.0:
                raise DomainError("half-line reference needs a positive mean")
            alpha = m1 * m1 / var
            if alpha > GAMMA_TO_NORMAL_SHAPE:
                return ReferenceDistribution.normal(m1, var)
            return ReferenceDistribution.gamma(alpha, var / m1)
        raise ContractError(f"unknown domain hint {domain_hint!r}")
    u, v = (float(x) for x in domain_hint)
    if not u < v:
        raise ContractError("bounded domain needs u < v")
    tau = (m1 - u) / (v - u)
    lam = ((m1 - u) * (v - m1) - var) / var
    alpha, beta = tau * lam, (1.0 - tau) * lam
    if not (alpha > 0.0 and beta > 0.0):
        raise DomainError(
            f"moments are incompatible with the domain [{u}, {v}] (alpha={alpha:.3g}, beta={beta:.3g})"
        )
    if abs(alpha - 1.0) < 1e-12 and abs(beta - 1.0) < 1e-12:
        return ReferenceDistribution.uniform(u, v)
    return ReferenceDistribution.genbeta(alpha, beta, u, v)


# ---------------------------------------------------------------------------
# Orthonormal polynomials.


def _recurrence(ref: ReferenceDistribution, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Monic recurrence ``q_{n+1} = (z - a_n) q_n - b_n q_{n-1}`` in ``z``."""
    n = np.arange(degree + 1, dtype=float)
    if ref.kind == "normal":
        return np.zeros(degree + 1), n.copy()
    if ref.kind == "gamma":
        alpha = ref.params[0]
        return 2 * n + alpha, n * (n + alpha - 1)
    # Jacobi on [-1, 1]; the weight t^(alpha-1) (1-t)^(beta-1) with
    # t = (1 + s) / 2 is (1 - s)^(beta-1) (1 + s)^(alpha-1)
    alpha, beta = ref.beta_shape
    pa, pb = beta - 1.0, alpha - 1.0  # Jacobi (a, b) on [-1, 1]
    a = np.empty(degree + 1)
    b = np.zeros(degree + 1)
    for k in range(degree + 1):
        s = 2 * k + pa + pb
        if k == 0:
            a_s = (pb - pa) / (pa + pb + 2)
        else:
            a_s = (pb * pb - pa * pa) / (s * (s + 2))
        a[k] = a_s
        if k == 1:
            b[k] = 4 * (1 + pa) * (1 + pb) / ((2 + pa + pb) ** 2 * (3 + pa + pb))
        elif k > 1:
            b[k] = 4 * k * (k + pa) * (k + pb) * (k + pa + pb) / (s * s * (s + 1) * (s - 1))
    return a, b


@dataclass(frozen=True)
class OrthonormalBasis:
    """Orthonormal polynomials ``P_0..P_M`` of a reference distribution.

    Attributes:
        reference: The weight function.
        coeffs: ``coeffs[i, n]`` is the coefficient of ``z^n`` in ``P_i``,
            with ``z`` the reference's standardized variable.
        norms: ``sqrt`` of the weighted norms of the monic polynomials.
        rec_a, rec_b: Monic three-term recurrence coefficients in ``z``.
    """

    reference: ReferenceDistribution
    coeffs: np.ndarray
    norms: np.ndarray
    rec_a: np.ndarray
    rec_b: np.ndarray

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    def z_of(self, x):
        c, s = self.reference.standardization
        return (np.asarray(x, dtype=float) - c) / s

    def eval(self, x) -> np.ndarray:
        """``P_i(x)`` for ``i = 0..M``; shape ``(M + 1,) + x.shape``."""
        z = self.z_of(x)
        out = np.empty((self.degree + 1,) + z.shape)
        q_prev = np.zeros_like(z)
        q = np.ones_like(z)
        for i in range(self.degree + 1):
            out[i] = q / self.norms[i]
            q, q_prev = (z - self.rec_a[i]) * q - self.rec_b[i] * q_prev, q
        return out

    def coeffs_in_x(self) -> np.ndarray:
        """Coefficient table in powers of ``x`` (as written in the literature)."""
        c, s = self.reference.standardization
        m = self.degree + 1
        # z^n = sum_k binom(n, k) x^k (-c)^(n-k) / s^n
        t = np.zeros((m, m))
        for n in range(m):
            for k in range(n + 1):
                t[n, k] = math.comb(n, k) * (-c) ** (n - k) / s**n
        return self.coeffs @ t

    def gram_matrix(self, nodes: int | None = None) -> np.ndarray:
        """``<P_i, P_j>_w`` by Gauss quadrature of the weight (independent check)."""
        x, w = _gauss_rule(self.reference, nodes or self.degree + 2)
        vals = self.eval(x)
        return (vals * w) @ vals.T


def _gauss_rule(ref: ReferenceDistribution, n: int):
    from scipy.special import roots_genlaguerre, roots_jacobi

    c, s = ref.standardization
    if ref.kind == "normal":
        z, w = np.polynomial.hermite_e.hermegauss(n)
        w = w / math.sqrt(2 * math.pi)
    elif ref.kind == "gamma":
        z, w = roots_genlaguerre(n, ref.params[0] - 1.0)
        w = w / math.exp(ln_gamma(ref.params[0]))
    else:
        a, b = ref.beta_shape
        z, w = roots_jacobi(n, b - 1.0, a - 1.0)
        w = w / w.sum()
    return c + s * z, w


def build_basis(ref: ReferenceDistribution, degree: int) -> OrthonormalBasis:
    """Orthonormal polynomials up to ``degree`` with positive leading coefficients."""
    if not 0 <= degree <= MAX_DEGREE:
        raise ContractError(f"degree must lie in [0, {MAX_DEGREE}]")
    a, b = _recurrence(ref, degree)
    m = degree + 1
    monic = np.zeros((m + 1, m + 1))
    monic[0, 0] = 1.0
    prev = np.zeros(m + 1)
    for n in range(degree):
        nxt = np.zeros(m + 1)
        nxt[1:] = monic[n, :-1]
        nxt -= a[n] * monic[n] + b[n] * prev
        prev = monic[n]
        monic[n + 1] = nxt
    norms = np.sqrt(np.cumprod(np.concatenate([[1.0], b[1:m]])))
    coeffs = monic[:m, :m] / norms[:, None]
    return OrthonormalBasis(ref, coeffs, norms, a, b)


# ---------------------------------------------------------------------------
# Estimates.


@dataclass(frozen=True)
class PdfEstimate:
    reference: ReferenceDistribution
    basis: OrthonormalBasis
    coeffs: np.ndarray

    @property
    def domain(self) -> tuple[float, float]:
        return self.reference.support


def expansion_coeffs(basis: OrthonormalBasis, moments: MomentSet) -> PdfEstimate:
    """``C_i = E[P_i(x)] = sum_n a_{i,n} E[z^n]``."""
    if moments.M < basis.degree:
        raise ContractError(
            f"degree {basis.degree} needs {basis.degree} moments, got {moments.M}"
        )
    c, s = basis.reference.standardization
    ez = moments.moments_about(c, s)[: basis.degree + 1]
    coeffs = basis.coeffs @ ez
    return PdfEstimate(basis.reference, basis, coeffs)


def estimate_pdf(moments: MomentSet, domain_hint="half-line", degree: int | None = None) -> PdfEstimate:
    """Fit a reference, build its basis and expand (convenience wrapper)."""
    ref = fit_reference(moments, domain_hint)
    basis = build_basis(ref, moments.M if degree is None else degree)
    return expansion_coeffs(basis, moments)


def pdf_eval(est: PdfEstimate, x) -> np.ndarray:
    """``w(x) sum_i C_i P_i(x)``; may dip below zero from truncation."""
    x = np.asarray(x, dtype=float)
    return est.reference.pdf(x) * np.tensordot(est.coeffs, est.basis.eval(x), axes=1)


def normal_partial_moment(n: int, mu: float, sigma: float, b: float) -> float:
    """``int_0^b x^n N(x; mu, sigma^2) dx`` via lower incomplete gamma functions.

    For ``b > 0`` this is the closed form with the sign constants
    ``alpha_k = (-1)^(k+1)`` if ``b < mu`` else 1 and ``beta_k = (-1)^(k+1)``
    if ``mu > 0`` else 1.  Negative ``b`` is reduced to the positive case by
    the reflection ``x -> -x``.
    """
    if not sigma > 0.0:
        raise DomainError("sigma must be positive")
    if b == 0.0:
        return 0.0
    if b < 0.0:
        return -((-1) ** n) * normal_partial_moment(n, -mu, sigma, -b)
    g_b = (b - mu) ** 2 / (2 * sigma * sigma)
    g_0 = mu * mu / (2 * sigma * sigma)
    terms = []
    for k in range(n + 1):
        s = 0.5 * (k + 1)
        alpha_k = (-1) ** (k + 1) if b < mu else 1
        beta_k = (-1) ** (k + 1) if mu > 0 else 1
        pref = math.comb(n, k) * mu ** (n - k) * sigma**k * math.sqrt(2.0 ** (k - 2) / math.pi)
        terms.append(pref * (alpha_k * inc_gamma_lower(s, g_b) - beta_k * inc_gamma_lower(s, g_0)))
    return math.fsum(terms)


def _z_integrals(ref: ReferenceDistribution, a: float, b: float, degree: int) -> np.ndarray:
    """``J_n = int_a^b w(x) z(x)^n dx`` for ``n = 0..degree`` in closed form."""
    lo, hi = ref.support
    a, b = max(a, lo), min(b, hi)
    out = np.zeros(degree + 1)
    if not b > a:
        return out
    c, s = ref.standardization
    za, zb = (a - c) / s, (b - c) / s
    if ref.kind == "uniform":
        for n in range(degree + 1):
            out[n] = (zb ** (n + 1) - za ** (n + 1)) / (2 * (n + 1))
    elif ref.kind == "genbeta":
        al, be = ref.beta_shape
        ta = min(max(0.5 * (za + 1.0), 0.0), 1.0)
        tb = min(max(0.5 * (zb + 1.0), 0.0), 1.0)
        jt = []
        for n in range(degree + 1):
            ratio = rising_factorial(al, n) / rising_factorial(al + be, n)
            jt.append(ratio * (reg_inc_beta(al + n, be, tb) - reg_inc_beta(al + n, be, ta)))
        out[:] = _t_to_s(jt)
    elif ref.kind == "gamma":
        al = ref.params[0]
        za, zb = max(za, 0.0), zb
        for n in range(degree + 1):
            pb = 1.0 if math.isinf(zb) else reg_inc_gamma_lower(al + n, zb)
            out[n] = rising_factorial(al, n) * (pb - reg_inc_gamma_lower(al + n, za))
    else:
        for n in range(degree + 1):
            out[n] = _std_normal_moment_between(n, za, zb)
    return out


_Z_INF = 60.0  # the standard normal tail beyond this is below double precision


def _std_normal_moment_between(n: int, za: float, zb: float) -> float:
    za = min(max(za, -_Z_INF), _Z_INF)
    zb = min(max(zb, -_Z_INF), _Z_INF)
    return normal_partial_moment(n, 0.0, 1.0, zb) - normal_partial_moment(n, 0.0, 1.0, za)


def integrate_pdf(est: PdfEstimate, a: float, b: float) -> float:
    """Closed-form ``int_a^b f(x) dx`` (incomplete gamma / beta functions)."""
    if not a < b:
        raise ContractError("integration bounds must satisfy a < b")
    j = _z_integrals(est.reference, a, b, est.basis.degree)
    return float(est.coeffs @ (est.basis.coeffs @ j))


def export_plot_data(
    est: PdfEstimate,
    path: str | Path,
    x: Sequence[float] | None = None,
    n: int = 401,
    clamp: bool = False,
) -> Path:
    """Write ``x,pdf`` samples of the estimate (optionally clamped at zero)."""
    if x is None:
        lo, hi = est.domain
        mu = est.reference.moments(2)
        sd = math.sqrt(max(mu.variance, 0.0))
        lo = lo if math.isfinite(lo) else mu.mean - 6 * sd
        hi = hi if math.isfinite(hi) else mu.mean + 6 * sd
        x = np.linspace(lo, hi, n)
    x = np.asarray(x, dtype=float)
    y = pdf_eval(est, x)
    if clamp:
        y = np.maximum(y, 0.0)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "pdf"])
        for xi, yi in zip(x, y):
            w.writerow([repr(float(xi)), repr(float(yi))])
    return path
