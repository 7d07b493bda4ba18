"""Special functions used by the PDF reconstruction.

Log-gamma, the beta function, the regularized incomplete gamma and beta
functions, rising factorials and binomial coefficients.  Scalar, pure
Python; the callers need at most a few dozen evaluations per estimate.
"""

from __future__ import annotations

import math

from .errors import DomainError

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000

# Lanczos approximation, g = 7, n = 9.
_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_EULER_GAMMA = 0.57721566490153286061


def _zeta_table(kmax: int, n: int = 1000) -> list[float]:
    # Euler-Maclaurin tail with two Bernoulli corrections
    out = [0.0, 0.0]
    for k in range(2, kmax + 1):
        head = math.fsum(j ** -k for j in range(1, n))
        tail = n ** (1 - k) / (k - 1) + 0.5 * n**-k + k * n ** (-k - 1) / 12.0
        tail -= k * (k + 1) * (k + 2) * n ** (-k - 3) / 720.0
        out.append(head + tail)
    return out


_ZETA = _zeta_table(40)


def _ln_gamma_1p(z: float) -> float:
    """``ln Gamma(1 + z)`` for ``|z| <= 0.25`` by its zeta series."""
    total = -_EULER_GAMMA * z
    zk = -z
    for k in range(2, 41):
        zk *= -z
        total += _ZETA[k] * zk / k
    return total


def ln_gamma(x: float) -> float:
    """Natural log of the gamma function for ``x > 0``."""
    if not x > 0.0:
        raise DomainError(f"ln_gamma requires x > 0, got {x}")
    if x < 0.5:
        # reflection keeps the Lanczos sum in its accurate range
        return math.log(math.pi / math.sin(math.pi * x)) - ln_gamma(1.0 - x)
    if x == 1.0 or x == 2.0:
        return 0.0
    if abs(x - 1.0) <= 0.25:
        return _ln_gamma_1p(x - 1.0)
    if abs(x - 2.0) <= 0.25:
        return math.log1p(x - 2.0) + _ln_gamma_1p(x - 2.0)
    if x >= 10.0:
        return _stirling(x)
    z = x - 1.0
    s = _LANCZOS[0]
    for k in range(1, 9):
        s += _LANCZOS[k] / (z + k)
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * math.log(t) - t + math.log(s)


def _stirling(x: float) -> float:
    # asymptotic series; for x >= 10 the truncation error is below 1e-17
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv * (
        1.0 / 12.0
        - inv2
        * (
            1.0 / 360.0
            - inv2
            * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 * (1.0 / 1188.0)))
        )
    )
    return (x - 0.5) * math.log(x) - x + _HALF_LOG_2PI + series


def ln_beta(a: float, b: float) -> float:
    return ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)


def beta_fn(a: float, b: float) -> float:
    return math.exp(ln_beta(a, b))


def rising_factorial(x: float, n: int) -> float:
    """``x (x+1) ... (x+n-1)``; the empty product for ``n = 0`` is 1."""
    out = 1.0
    for k in range(int(n)):
        out *= x + k
    return out


def binom(n: int, k: int) -> float:
    return float(math.comb(n, k))


def reg_inc_gamma_lower(s: float, x: float) -> float:
    """Regularized lower incomplete gamma ``P(s, x) = gamma(s, x) / Gamma(s)``."""
    if not s > 0.0:
        raise DomainError(f"shape must be positive, got {s}")
    if x < 0.0 or math.isnan(x):
        raise DomainError(f"x must be non-negative, got {x}")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < s + 1.0:
        return _gamma_series(s, x)
    return 1.0 - _gamma_cont_frac(s, x)


def _gamma_prefactor(s: float, x: float) -> float:
    return math.exp(-x + s * math.log(x) - ln_gamma(s))


def _gamma_series(s: float, x: float) -> float:
    ap = s
    term = 1.0 / s
    total = term
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return min(1.0, total * _gamma_prefactor(s, x))
    raise ArithmeticError("incomplete gamma series did not converge")


def _gamma_cont_frac(s: float, x: float) -> float:
    """Upper regularized ``Q(s, x)`` by modified Lentz."""
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return max(0.0, h * _gamma_prefactor(s, x))
    raise ArithmeticError("incomplete gamma continued fraction did not converge")


def inc_gamma_lower(s: float, x: float) -> float:
    """Unregularized lower incomplete gamma ``gamma(s, x)``."""
    return reg_inc_gamma_lower(s, x) * math.exp(ln_gamma(s))


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if not (a > 0.0 and b > 0.0):
        raise DomainError(f"a and b must be positive, got {a}, {b}")
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = a * math.log(x) + b * math.log1p(-x) - ln_beta(a, b)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(ln_front) * _beta_cont_frac(a, b, x) / a
    return 1.0 - math.exp(ln_front) * _beta_cont_frac(b, a, 1.0 - x) / b


def _beta_cont_frac(a: float, b: float, x: float) -> float:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")
