"""Normal and chi-square special functions plus multivariate-normal
rectangle probabilities.

The rectangle probability g(t; R) = P(|X_j| <= t for all j), X ~ N(0, R),
is computed by transforming the integral to the unit cube with sequential
conditioning (variables greedily reordered so the tightest conditional
width comes first) and integrating with a randomly shifted rank-1 lattice
rule.  The shift variance gives the reported standard error.

All root-finding callers of ``mvn_rect_prob`` must reuse one ``MvnConfig``
so repeated evaluations share the same random shifts (common random
numbers); this keeps the estimated g monotone in t during a search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import NumericsError

__all__ = [
    "MvnConfig",
    "RectProb",
    "normal_cdf",
    "normal_pdf",
    "normal_quantile",
    "chisq_cdf",
    "chisq_quantile",
    "mvn_rect_prob",
    "mvn_rect_quantile",
]

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)
_INV_SQRT_PI = 5.6418958354775628695e-1

# Rational Chebyshev coefficients for erf/erfc (Cody 1969, SPECFUN CALERF).
_ERF_A = (3.16112374387056560e00, 1.13864154151050156e02,
          3.77485237685302021e02, 3.20937758913846947e03,
          1.85777706184603153e-1)
_ERF_B = (2.36012909523441209e01, 2.44024637934444173e02,
          1.28261652607737228e03, 2.84423683343917062e03)
_ERFC_C = (5.64188496988670089e-1, 8.88314979438837594e00,
           6.61191906371416295e01, 2.98635138197400131e02,
           8.81952221241769090e02, 1.71204761263407058e03,
           2.05107837782607147e03, 1.23033935479799725e03,
           2.15311535474403846e-8)
_ERFC_D = (1.57449261107098347e01, 1.17693950891312499e02,
           5.37181101862009858e02, 1.62138957456669019e03,
           3.29079923573345963e03, 4.36261909014324716e03,
           3.43936767414372164e03, 1.23033935480374942e03)
_ERFC_P = (3.05326634961232344e-1, 3.60344899949804439e-1,
           1.25781726111229246e-1, 1.60837851487422766e-2,
           6.58749161529837803e-4, 1.63153871373020978e-2)
_ERFC_Q = (2.56852019228982242e00, 1.87295284992346047e00,
           5.27905102951428412e-1, 6.05183413124413191e-2,
           2.33520497626869185e-3)


def _erf_small(y2):
    num = _ERF_A[4] * y2
    den = y2
    for i in range(3):
        num = (num + _ERF_A[i]) * y2
        den = (den + _ERF_B[i]) * y2
    return (num + _ERF_A[3]) / (den + _ERF_B[3])


def _erfc_mid(y):
    num = _ERFC_C[8] * y
    den = y
    for i in range(7):
        num = (num + _ERFC_C[i]) * y
        den = (den + _ERFC_D[i]) * y
    frac = (num + _ERFC_C[7]) / (den + _ERFC_D[7])
    # exp(-y^2) split to limit rounding, per the reference algorithm
    ysq = np.trunc(y * 16.0) / 16.0
    return np.exp(-ysq * ysq) * np.exp(-(y - ysq) * (y + ysq)) * frac


def _erfc_large(y):
    with np.errstate(over="ignore"):
        ysq = 1.0 / (y * y)
    num = _ERFC_P[5] * ysq
    den = ysq
    for i in range(4):
        num = (num + _ERFC_P[i]) * ysq
        den = (den + _ERFC_Q[i]) * ysq
    frac = ysq * (num + _ERFC_P[4]) / (den + _ERFC_Q[4])
    frac = (_INV_SQRT_PI - frac) / y
    ysq = np.trunc(y * 16.0) / 16.0
    return np.exp(-ysq * ysq) * np.exp(-(y - ysq) * (y + ysq)) * frac


def _erfc(x):
    """Complementary error function, vectorized, ~1 ulp over the real line."""
    x = np.asarray(x, dtype=np.float64)
    y = np.abs(x)
    out = np.empty_like(y)

    small = y <= 0.46875
    mid = (y > 0.46875) & (y <= 4.0)
    large = y > 4.0
    if np.any(small):
        ys = y[small]
        out[small] = 1.0 - ys * _erf_small(ys * ys)
    if np.any(mid):
        out[mid] = _erfc_mid(y[mid])
    if np.any(large):
        yl = y[large]
        # erfc underflows to 0 around y ~ 26.6; suppress the spurious warning
        with np.errstate(under="ignore"):
            out[large] = _erfc_large(yl)
        out[large] = np.where(yl > 26.7, 0.0, out[large])

    return np.where(x < 0.0, 2.0 - out, out)


def normal_cdf(x):
    """Standard normal CDF. Accepts scalars or arrays."""
    res = 0.5 * _erfc(-np.asarray(x, dtype=np.float64) / _SQRT2)
    if np.ndim(x) == 0:
        return float(res)
    return res


def normal_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=np.float64)
    res = np.exp(-0.5 * x * x) / _SQRT_2PI
    if res.ndim == 0:
        return float(res)
    return res


# Rational approximation for the normal quantile (Acklam), refined below
# with one Halley step so the result inverts normal_cdf to ~1e-15.
_PPF_A = (-3.969683028665376e+01, 2.209460984245205e+02,
          -2.759285104469687e+02, 1.383577518672690e+02,
          -3.066479806614716e+01, 2.506628277459239e+00)
_PPF_B = (-5.447609879822406e+01, 1.615858368580409e+02,
          -1.556989798598866e+02, 6.680131188771972e+01,
          -1.328068155288572e+01)
_PPF_C = (-7.784894002430293e-03, -3.223964580411365e-01,
          -2.400758277161838e+00, -2.549732539343734e+00,
          4.374664141464968e+00, 2.938163982698783e+00)
_PPF_D = (7.784695709041462e-03, 3.224671290700398e-01,
          2.445134137142996e+00, 3.754408661907416e+00)


def _ndtri_raw(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.empty_like(p)
    plow = 0.02425

    lo = p < plow
    hi = p > 1.0 - plow
    mid = ~(lo | hi)

    if np.any(mid):
        q = p[mid] - 0.5
        r = q * q
        num = ((((_PPF_A[0] * r + _PPF_A[1]) * r + _PPF_A[2]) * r
                + _PPF_A[3]) * r + _PPF_A[4]) * r + _PPF_A[5]
        den = ((((_PPF_B[0] * r + _PPF_B[1]) * r + _PPF_B[2]) * r
                + _PPF_B[3]) * r + _PPF_B[4]) * r + 1.0
        out[mid] = q * num / den
    for mask, sign in ((lo, 1.0), (hi, -1.0)):
        if np.any(mask):
            pp = p[mask] if sign > 0 else 1.0 - p[mask]
            q = np.sqrt(-2.0 * np.log(pp))
            num = ((((_PPF_C[0] * q + _PPF_C[1]) * q + _PPF_C[2]) * q
                    + _PPF_C[3]) * q + _PPF_C[4]) * q + _PPF_C[5]
            den = (((_PPF_D[0] * q + _PPF_D[1]) * q + _PPF_D[2]) * q
                   + _PPF_D[3]) * q + 1.0
            out[mask] = sign * num / den
    return out


def _ndtri(p):
    """Vectorized normal quantile on (0, 1); inputs are assumed in range."""
    x = _ndtri_raw(p)
    # One Halley refinement step
    err = 0.5 * _erfc(-x / _SQRT2) - np.asarray(p, dtype=np.float64)
    with np.errstate(over="ignore", under="ignore"):
        u = err * _SQRT_2PI * np.exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    return x


def normal_quantile(p):
    """Inverse of ``normal_cdf`` for scalar p in the open interval (0, 1)."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise NumericsError(f"normal_quantile requires p in (0, 1), got {p}")
    return float(_ndtri(p))


def _gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x).

    Power series for x < a + 1, modified Lentz continued fraction for the
    upper tail otherwise; ~1e-14 relative accuracy.
    """
    if x < 0.0 or a <= 0.0:
        raise NumericsError(f"gammainc domain error: a={a}, x={x}")
    if x == 0.0:
        return 0.0
    lg = math.lgamma(a)
    log_pre = -x + a * math.log(x) - lg
    if x < a + 1.0:
        ap = a
        term = 1.0 / a
        total = term
        for _ in range(500):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * 1e-17:
                break
        return min(1.0, math.exp(log_pre) * total)
    # Lentz continued fraction for Q(a, x)
    fpmin = 1e-300
    b = x + 1.0 - a
    c = 1.0 / fpmin
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < fpmin:
            d = fpmin
        c = b + an / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    q = math.exp(log_pre) * h
    return max(0.0, 1.0 - q)


def chisq_cdf(x, k: int) -> float:
    """Chi-square CDF with k degrees of freedom."""
    if k < 1 or int(k) != k:
        raise NumericsError(f"chisq_cdf requires integer k >= 1, got {k}")
    x = float(x)
    if x < 0.0:
        raise NumericsError(f"chisq_cdf requires x >= 0, got {x}")
    if x == 0.0:
        return 0.0
    return _gammainc_lower(0.5 * k, 0.5 * x)


def _chisq_pdf(x: float, k: int) -> float:
    if x <= 0.0:
        return 0.0
    half = 0.5 * k
    return math.exp((half - 1.0) * math.log(x) - 0.5 * x
                    - half * math.log(2.0) - math.lgamma(half))


def chisq_quantile(p, k: int) -> float:
    """Inverse chi-square CDF by safeguarded Newton; residual <= 1e-10."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise NumericsError(f"chisq_quantile requires p in (0, 1), got {p}")
    if k < 1 or int(k) != k:
        raise NumericsError(f"chisq_quantile requires integer k >= 1, got {k}")
    # Wilson-Hilferty start
    z = normal_quantile(p)
    c = 2.0 / (9.0 * k)
    x = k * (1.0 - c + z * math.sqrt(c)) ** 3
    if x <= 0.0:
        x = 1e-8
    lo, hi = 0.0, math.inf
    for _ in range(200):
        f = chisq_cdf(x, k) - p
        if f > 0.0:
            hi = x
        else:
            lo = x
        if abs(f) <= 1e-10:
            return x
        dfdx = _chisq_pdf(x, k)
        if dfdx > 0.0:
            step = f / dfdx
            x_new = x - step
        else:
            x_new = math.nan
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * x
        x = x_new
    raise NumericsError(f"chisq_quantile failed to converge at p={p}, k={k}")


@dataclass(frozen=True)
class MvnConfig:
    """Budget and seeding for the lattice-rule rectangle integrator.

    ``n_points`` is rounded down to the nearest prime when the generating
    vector is built.  ``target_se`` is advisory: callers compare it to the
    returned standard error and attach precision warnings.
    """

    n_points: int = 2 ** 15
    n_shifts: int = 12
    target_se: float = 1e-4
    seed: int = 20250809
    jitter: tuple[float, ...] = (0.0, 1e-10, 1e-8, 1e-6)

    def __post_init__(self):
        if self.n_points < 8 or self.n_shifts < 2:
            raise NumericsError("MvnConfig budgets must be positive (>= 8 points, >= 2 shifts)")
        if self.target_se <= 0.0:
            raise NumericsError("MvnConfig target_se must be > 0")


class RectProb(NamedTuple):
    estimate: float
    std_error: float


@lru_cache(maxsize=None)
def _primes_up_to(n: int) -> tuple[int, ...]:
    sieve = np.ones(n + 1, dtype=bool)
    sieve[:2] = False
    for p in range(2, int(n ** 0.5) + 1):
        if sieve[p]:
            sieve[p * p:: p] = False
    return tuple(int(p) for p in np.nonzero(sieve)[0])


def _primitive_root(p: int) -> int:
    """Smallest primitive root modulo prime p."""
    pm = p - 1
    factors = []
    m = pm
    for q in _primes_up_to(int(math.isqrt(pm)) + 1):
        while m % q == 0:
            factors.append(q)
            m //= q
        if m == 1:
            break
    if m != 1:
        factors.append(m)
    factors = sorted(set(factors))
    r = 2
    while True:
        if all(pow(r, pm // q, p) != 1 for q in factors):
            return r
        r += 1


@lru_cache(maxsize=32)
def _lattice_generator(dim: int, n_points: int) -> tuple[np.ndarray, int]:
    """Rank-1 lattice generating vector via fast component-by-component search.

    Works in the shift-invariant kernel of the tent-transformed lattice
    (Bernoulli polynomial x^2 - x + 1/6) with product weights 0.8^j.
    Returns (integer generating vector of length dim, prime point count).
    """
    primes = _primes_up_to(max(n_points, 8))
    n = primes[-1] if primes[-1] <= n_points else primes[-2]
    if dim == 0:
        return np.zeros(0, dtype=np.int64), n

    m = (n - 1) // 2
    g = _primitive_root(n)
    perm = np.ones(m, dtype=np.int64)
    for j in range(m - 1):
        perm[j + 1] = (g * perm[j]) % n
    perm = np.minimum(n - perm, perm)
    pn = perm / n
    c = pn * pn - pn + 1.0 / 6.0
    fc = np.fft.fft(c)

    z = np.ones(dim, dtype=np.int64)
    q = np.ones(m)
    w = 0
    for s in range(1, dim):
        reordered = np.concatenate([c[: w + 1][::-1], c[w + 1: m][::-1]])
        q = q * (1.0 + 0.8 ** s * reordered)
        w = int(np.fft.ifft(fc * np.fft.fft(q)).real.argmin())
        z[s] = perm[w]
    return z, n


def _validate_correlation(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise NumericsError("correlation matrix must be square")
    if not np.allclose(r, r.T, atol=1e-10):
        raise NumericsError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(r), 1.0, atol=1e-8):
        raise NumericsError("correlation matrix must have unit diagonal")
    return 0.5 * (r + r.T)


def _ordered_cholesky(r: np.ndarray, t: float, jitter: tuple[float, ...]) -> np.ndarray:
    """Cholesky factor of (jittered) R with variables greedily reordered.

    At each pivot the remaining variable with the smallest conditional
    rectangle width Phi((t-s)/c) - Phi((-t-s)/c) is chosen, following the
    standard reordering heuristic for sequential-conditioning integrands.
    """
    k = r.shape[0]
    last_err: Exception | None = None
    for eps in jitter:
        a = r + eps * np.eye(k)
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            last_err = exc
            continue
        chol = a.copy()
        y = np.zeros(k)
        for col in range(k):
            # choose the remaining variable with the smallest conditional width
            best, best_width = col, np.inf
            for i in range(col, k):
                ci = math.sqrt(max(chol[i, i], 1e-300))
                s = float(chol[i, :col] @ y[:col])
                width = (normal_cdf((t - s) / ci) - normal_cdf((-t - s) / ci))
                if width < best_width:
                    best, best_width = i, width
            if best != col:
                _swap_variable(chol, best, col)
            piv = chol[col, col]
            if piv <= 0.0:
                break
            ck = math.sqrt(piv)
            chol[col, col] = ck
            l_col = chol[col + 1:, col] / ck
            chol[col + 1:, col] = l_col
            # full rank-1 downdate keeps the trailing block symmetric, so
            # later pivot swaps of whole rows/columns stay valid
            chol[col + 1:, col + 1:] -= np.outer(l_col, l_col)
            chol[col, col + 1:] = 0.0
            s = float(chol[col, :col] @ y[:col])
            lo = (-t - s) / ck
            hi = (t - s) / ck
            de = normal_cdf(hi) - normal_cdf(lo)
            if de > 1e-14:
                y[col] = (math.exp(-0.5 * lo * lo) - math.exp(-0.5 * hi * hi)) / (_SQRT_2PI * de)
            else:
                y[col] = 0.5 * (lo + hi)
        else:
            return np.tril(chol)
        continue
    raise NumericsError(f"Cholesky failed for correlation matrix after jitter schedule: {last_err}")


def _swap_variable(a: np.ndarray, i: int, j: int) -> None:
    a[[i, j], :] = a[[j, i], :]
    a[:, [i, j]] = a[:, [j, i]]


def mvn_rect_prob(t: float, r: np.ndarray, config: MvnConfig | None = None) -> RectProb:
    """Estimate g(t; R) = P(-t <= X_j <= t for all j), X ~ N(0, R).

    Returns the estimate (clipped to [0, 1]) and the standard error across
    the random lattice shifts.  k = 1 is evaluated analytically with zero
    error.
    """
    if config is None:
        config = MvnConfig()
    t = float(t)
    if t < 0.0:
        raise NumericsError(f"rectangle half-width must be >= 0, got {t}")
    r = _validate_correlation(r)
    k = r.shape[0]
    if t == 0.0:
        return RectProb(0.0, 0.0)
    if k == 1:
        return RectProb(2.0 * normal_cdf(t) - 1.0, 0.0)

    chol = _ordered_cholesky(r, t, config.jitter)
    z, n = _lattice_generator(k - 1, config.n_points)
    rng = np.random.default_rng(config.seed)
    shifts = rng.random((config.n_shifts, k - 1))

    idx = np.arange(1, n + 1, dtype=np.float64)
    # lattice coordinates before shifting, one row per integrand dimension
    base = np.outer(z, idx) / n
    base -= np.floor(base)

    c00 = chol[0, 0]
    d0 = normal_cdf(-t / c00)
    e0 = normal_cdf(t / c00)

    tiny = 1e-15
    estimates = np.empty(config.n_shifts)
    y = np.empty((k - 1, n))
    for j in range(config.n_shifts):
        d = np.full(n, d0)
        e = np.full(n, e0)
        w = e - d
        for i in range(1, k):
            u = base[i - 1] + shifts[j, i - 1]
            u -= np.floor(u)
            x = np.abs(2.0 * u - 1.0)  # tent periodization
            arg = np.clip(d + x * (e - d), tiny, 1.0 - 1e-16)
            y[i - 1] = _ndtri(arg)
            s = chol[i, :i] @ y[:i]
            ci = chol[i, i]
            d = normal_cdf((-t - s) / ci)
            e = normal_cdf((t - s) / ci)
            w = w * (e - d)
        estimates[j] = float(np.mean(w))

    est = float(np.clip(np.mean(estimates), 0.0, 1.0))
    se = float(np.std(estimates, ddof=1) / math.sqrt(config.n_shifts))
    return RectProb(est, se)


def mvn_rect_quantile(p: float, r: np.ndarray, config: MvnConfig | None = None) -> float:
    """Solve g(t; R) = p for t by bisection with common random numbers.

    The bracket [Phi^-1((1+p)/2), Phi^-1(1 - (1-p)/(2k))] is valid because
    the rectangle probability is sandwiched between the one-margin bound
    and the Bonferroni bound.
    """
    if config is None:
        config = MvnConfig()
    p = float(p)
    if not 0.0 < p < 1.0:
        raise NumericsError(f"mvn_rect_quantile requires p in (0, 1), got {p}")
    r = _validate_correlation(r)
    k = r.shape[0]
    if k == 1:
        return normal_quantile(0.5 * (1.0 + p))

    lo = normal_quantile(0.5 * (1.0 + p))
    hi = normal_quantile(1.0 - (1.0 - p) / (2.0 * k))
    g_lo = mvn_rect_prob(lo, r, config).estimate
    g_hi = mvn_rect_prob(hi, r, config).estimate
    if g_lo >= p:
        return lo
    if g_hi <= p:
        if g_hi < g_lo:
            raise NumericsError("mvn_rect_quantile bracket failure: g not increasing on bracket")
        return hi
    while hi - lo > 1e-4:
        mid = 0.5 * (lo + hi)
        if mvn_rect_prob(mid, r, config).estimate < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
