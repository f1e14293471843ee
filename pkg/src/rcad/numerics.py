"""Special functions and entropy helpers.

Everything here is a pure function.  The hot scalar kernels are compiled with
numba so they can be shared by the analytic rate engine and the Monte Carlo
decoder; the public wrappers accept scalars or arrays and broadcast.

The noncentral chi-square distribution is evaluated as a Poisson mixture of
regularized incomplete gamma functions.  The lower tail (CDF) and the upper
tail (survival / Marcum Q) are summed separately so that each keeps full
relative accuracy where it is small, which matters when a tiny per-codeword
probability gets raised to the power q - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "binary_entropy",
    "thermal_entropy_g",
    "gaussian_cdf",
    "gaussian_cdf_inv",
    "regularized_gamma_p",
    "regularized_gamma_q",
    "noncentral_chi2_cdf",
    "noncentral_chi2_sf",
    "marcum_q",
    "NoncentralChi2",
]

_EPS = 2.220446049250313e-16
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_MAX_ITER = 200_000
# relative size below which a mixture term no longer changes the sum
_MIX_TOL = 1e-17


# ---------------------------------------------------------------------------
# entropies


def binary_entropy(p):
    """Binary entropy h(p) in bits, with h(0) = h(1) = 0."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0.0) | (p > 1.0)) or np.any(np.isnan(p)):
        raise ValueError(f"binary_entropy: probability outside [0, 1]: {p}")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -p * np.log2(p) - (1.0 - p) * np.log2(1.0 - p)
    h = np.where((p == 0.0) | (p == 1.0), 0.0, h)
    return h.item() if h.ndim == 0 else h


def thermal_entropy_g(x):
    """g(x) = (x+1) log2(x+1) - x log2(x), the entropy of a thermal state
    with mean photon number x.  g(0) = 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or np.any(np.isnan(x)):
        raise ValueError(f"thermal_entropy_g: negative argument: {x}")
    # rearranged as log(1+x) + x log(1 + 1/x): the textbook form subtracts
    # two numbers of size x log x and is useless for x ~ 1e8
    with np.errstate(divide="ignore", invalid="ignore"):
        g = (np.log1p(x) + x * np.log1p(1.0 / x)) / math.log(2.0)
    g = np.where(x == 0.0, 0.0, g)
    return g.item() if g.ndim == 0 else g


# ---------------------------------------------------------------------------
# Gaussian


@njit(cache=True)
def _ndtr(z):
    return 0.5 * math.erfc(-z / _SQRT2)


# Acklam's rational approximation for the standard normal quantile.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


@njit(cache=True)
def _ndtri_guess(p):
    # rational approximation for p <= 0.5, relative error < 1.2e-9
    if p < _P_LOW:
        r = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5])
             / ((((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0))
    else:
        r = p - 0.5
        s = r * r
        x = ((((((_A[0] * s + _A[1]) * s + _A[2]) * s + _A[3]) * s + _A[4]) * s + _A[5]) * r
             / (((((_B[0] * s + _B[1]) * s + _B[2]) * s + _B[3]) * s + _B[4]) * s + 1.0))
    return x


@njit(cache=True)
def _ndtri_lower(p):
    # one Halley step on top of the rational guess
    x = _ndtri_guess(p)
    e = _ndtr(x) - p
    u = e * _SQRT2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@njit(cache=True)
def _ndtri(p):
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    if p > 0.5:
        return -_ndtri_lower(1.0 - p)
    return _ndtri_lower(p)


@njit(cache=True)
def _ndtri_fast(p):
    """Unrefined quantile; relative error < 1.2e-9, for screening only."""
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    if p > 0.5:
        return -_ndtri_guess(1.0 - p)
    return _ndtri_guess(p)


@njit(cache=True)
def _ndtr_array(z):
    out = np.empty_like(z)
    for i in range(z.size):
        out[i] = _ndtr(z[i])
    return out


@njit(cache=True)
def _ndtri_array(p):
    out = np.empty_like(p)
    for i in range(p.size):
        out[i] = _ndtri(p[i])
    return out


def _check_sigma(sigma):
    if np.any(np.asarray(sigma) <= 0):
        raise ValueError(f"sigma must be positive, got {sigma}")


def gaussian_cdf(y, sigma=1.0):
    """CDF of a zero-mean Gaussian with standard deviation ``sigma``."""
    _check_sigma(sigma)
    z = np.asarray(np.asarray(y, dtype=float) / sigma, dtype=float)
    out = _ndtr_array(np.ascontiguousarray(z).ravel()).reshape(z.shape)
    return out.item() if out.ndim == 0 else out


def gaussian_cdf_inv(p, sigma=1.0):
    """Quantile of a zero-mean Gaussian with standard deviation ``sigma``.

    Arguments of exactly 0 or 1 return -inf / +inf; callers that feed
    modular arithmetic results in here are expected to clamp first.
    """
    _check_sigma(sigma)
    p = np.asarray(p, dtype=float)
    if np.any((p < 0.0) | (p > 1.0)) or np.any(np.isnan(p)):
        raise ValueError("gaussian_cdf_inv: probability outside [0, 1]")
    out = _ndtri_array(np.ascontiguousarray(p).ravel()).reshape(p.shape) * sigma
    return out.item() if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# regularized incomplete gamma


@njit(cache=True)
def _log1pmx(t):
    # log(1 + t) - t without cancellation for small |t|
    if abs(t) > 0.5:
        return math.log1p(t) - t
    r = t / (2.0 + t)
    r2 = r * r
    s = 0.0
    rk = r * r2
    k = 3.0
    while True:
        term = rk / k
        s += term
        if abs(term) <= 1e-17 * abs(s) or k > 200:
            break
        rk *= r2
        k += 2.0
    return -2.0 * r2 / (1.0 - r) + 2.0 * s


@njit(cache=True)
def _stirlerr(a):
    # lgamma(a) - [(a - 1/2) log a - a + log(2 pi)/2]
    if a < 15.0:
        return math.lgamma(a) - ((a - 0.5) * math.log(a) - a + _HALF_LOG_2PI)
    ia = 1.0 / a
    ia2 = ia * ia
    return ia * (1.0 / 12.0 - ia2 * (1.0 / 360.0 - ia2 * (1.0 / 1260.0
                 - ia2 * (1.0 / 1680.0 - ia2 / 1188.0))))


@njit(cache=True)
def _log_dterm(a, x):
    """log of x^a e^{-x} / Gamma(a + 1), accurate for large a ~ x."""
    if x <= 0.0:
        return -math.inf
    if a < 15.0:
        return a * math.log(x) - x - math.lgamma(a + 1.0)
    tail = -0.5 * math.log(2.0 * math.pi * a) - _stirlerr(a)
    if abs(x - a) > 0.5 * a:
        # forming 1 + (x - a) / a would lose the digits of a small x / a
        return a * math.log(x / a) - (x - a) + tail
    return a * _log1pmx((x - a) / a) + tail


@njit(cache=True)
def _gamma_pq(a, x):
    """Return (P(a, x), Q(a, x)) with the smaller of the two accurate in
    relative terms."""
    if x <= 0.0:
        return 0.0, 1.0
    if math.isinf(x):
        return 1.0, 0.0
    logd = _log_dterm(a, x)
    if x < a + 1.0:
        # series: P = D(a, x) * sum_k x^k / ((a+1)...(a+k))
        s = 1.0
        term = 1.0
        ak = a
        for _ in range(_MAX_ITER):
            ak += 1.0
            term *= x / ak
            s += term
            if term < s * _EPS * 0.5:
                break
        p = math.exp(logd + math.log(s))
        return p, 1.0 - p
    # modified Lentz continued fraction for Q = a D(a, x) * CF
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    q = math.exp(logd + math.log(a) + math.log(h))
    return 1.0 - q, q


@njit(cache=True)
def _gamma_p_array(a, x):
    out = np.empty(a.size)
    for i in range(a.size):
        out[i] = _gamma_pq(a[i], x[i])[0]
    return out


@njit(cache=True)
def _gamma_q_array(a, x):
    out = np.empty(a.size)
    for i in range(a.size):
        out[i] = _gamma_pq(a[i], x[i])[1]
    return out


def _broadcast_flat(*args):
    arrs = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
    shape = arrs[0].shape
    return shape, [np.ascontiguousarray(a).ravel() for a in arrs]


def _finish(out, shape):
    out = out.reshape(shape)
    return out.item() if out.ndim == 0 else out


def regularized_gamma_p(a, x):
    """Regularized lower incomplete gamma P(a, x)."""
    shape, (a, x) = _broadcast_flat(a, x)
    return _finish(_gamma_p_array(a, x), shape)


def regularized_gamma_q(a, x):
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    shape, (a, x) = _broadcast_flat(a, x)
    return _finish(_gamma_q_array(a, x), shape)


# ---------------------------------------------------------------------------
# noncentral chi-square


@njit(cache=True)
def _window(mu):
    # Poisson(mu) mass outside [mode - w, mode + w] is far below 1e-20
    mode = math.floor(mu)
    w = math.ceil(10.0 * math.sqrt(mu)) + 30.0
    return mode, max(0.0, mode - w), mode + w


# below this, D(a, x) is carried as a logarithm to avoid underflow
_LOG_TINY = -690.0
_TINY = math.exp(_LOG_TINY)


@njit(cache=True)
def _ncx2_cdf(z, dof, nc):
    """Lower tail sum_k Pois(k; nc/2) P(dof/2 + k, z/2).

    Starts at the top of the Poisson window and runs P downward with
    P(a, x) = P(a + 1, x) + D(a, x), which only ever adds positive terms.
    Poisson weights and D are updated multiplicatively.
    """
    if z <= 0.0:
        return 0.0
    a0 = 0.5 * dof
    x = 0.5 * z
    if nc <= 0.0:
        return _gamma_pq(a0, x)[0]
    mu = 0.5 * nc
    mode, lo, hi = _window(mu)
    k = hi
    # for tiny mu the top weights underflow and a zero weight would stay zero
    logw = _log_dterm(k, mu)
    while logw < _LOG_TINY and k > mode:
        k -= 1.0
        logw = _log_dterm(k, mu)
    p = _gamma_pq(a0 + k, x)[0]
    w = math.exp(logw)
    logd = _log_dterm(a0 + k - 1.0, x)  # D at a0 + k - 1
    in_log = logd < _LOG_TINY
    d = 0.0 if in_log else math.exp(logd)
    logx = math.log(x)
    total = 0.0
    prev = math.inf
    while True:
        term = w * p
        total += term
        if k <= 0.0:
            break
        if k < mode and term < _MIX_TOL * total and term <= prev:
            break
        prev = term
        # step k -> k - 1
        p += d
        w *= k / mu
        k -= 1.0
        a = a0 + k
        # D(a - 1, x) = D(a, x) * a / x
        if in_log:
            logd += math.log(a) - logx
            if logd >= _LOG_TINY:
                in_log = False
                d = math.exp(logd)
        else:
            d *= a / x
            if d < _TINY:
                in_log = True
                logd = math.log(d) if d > 0.0 else -math.inf
                d = 0.0
    return min(total, 1.0)


@njit(cache=True)
def _ncx2_sf(z, dof, nc):
    """Upper tail sum_k Pois(k; nc/2) Q(dof/2 + k, z/2).

    Starts at the bottom of the Poisson window and runs Q upward with
    Q(a + 1, x) = Q(a, x) + D(a, x).
    """
    if z <= 0.0:
        return 1.0
    a0 = 0.5 * dof
    x = 0.5 * z
    if nc <= 0.0:
        return _gamma_pq(a0, x)[1]
    mu = 0.5 * nc
    mode, lo, hi = _window(mu)
    k = lo
    qv = _gamma_pq(a0 + k, x)[1]
    w = math.exp(_log_dterm(k, mu))
    logd = _log_dterm(a0 + k, x)
    in_log = logd < _LOG_TINY
    d = 0.0 if in_log else math.exp(logd)
    logx = math.log(x)
    total = 0.0
    prev = math.inf
    for _ in range(10 * _MAX_ITER):
        term = w * qv
        total += term
        if k > mode and term < _MIX_TOL * total and term <= prev:
            break
        prev = term
        qv += d
        k += 1.0
        w *= mu / k
        # D(a + 1, x) = D(a, x) * x / (a + 1)
        if in_log:
            logd += logx - math.log(a0 + k)
            if logd >= _LOG_TINY:
                in_log = False
                d = math.exp(logd)
        else:
            d *= x / (a0 + k)
            if d < _TINY:
                in_log = True
                logd = math.log(d) if d > 0.0 else -math.inf
                d = 0.0
    return min(total, 1.0)


@njit(cache=True)
def _ncx2_cdf_tail(z, dof, nc):
    # sum the tail below the mean and complement the other one, so the
    # result near 1 is as smooth as the rounding of 1 - sf allows
    if z <= dof + nc:
        return _ncx2_cdf(z, dof, nc)
    return 1.0 - _ncx2_sf(z, dof, nc)


@njit(cache=True)
def _ncx2_sf_tail(z, dof, nc):
    if z > dof + nc:
        return _ncx2_sf(z, dof, nc)
    return 1.0 - _ncx2_cdf(z, dof, nc)


@njit(cache=True)
def _ncx2_cdf_array(z, dof, nc):
    out = np.empty(z.size)
    for i in range(z.size):
        out[i] = _ncx2_cdf_tail(z[i], dof[i], nc[i])
    return out


@njit(cache=True)
def _ncx2_sf_array(z, dof, nc):
    out = np.empty(z.size)
    for i in range(z.size):
        out[i] = _ncx2_sf_tail(z[i], dof[i], nc[i])
    return out


def _check_ncx2(dof, nc):
    if np.any(np.asarray(dof) <= 0):
        raise ValueError("degrees of freedom must be positive")
    if np.any(np.asarray(nc) < 0):
        raise ValueError("noncentrality must be nonnegative")


def noncentral_chi2_cdf(z, dof, nc):
    """CDF of the noncentral chi-square distribution.

    Parameters
    ----------
    z : float or array_like
        Evaluation point(s); values <= 0 give 0.
    dof : float or array_like
        Degrees of freedom (any positive real, so half-integer Marcum
        orders are covered).
    nc : float or array_like
        Noncentrality parameter lambda >= 0.
    """
    _check_ncx2(dof, nc)
    shape, (z, dof, nc) = _broadcast_flat(z, dof, nc)
    return _finish(_ncx2_cdf_array(z, dof, nc), shape)


def noncentral_chi2_sf(z, dof, nc):
    """Survival function 1 - CDF, summed directly for tail accuracy."""
    _check_ncx2(dof, nc)
    shape, (z, dof, nc) = _broadcast_flat(z, dof, nc)
    return _finish(_ncx2_sf_array(z, dof, nc), shape)


def marcum_q(order, a, b):
    """Generalized Marcum Q function Q_order(a, b).

    Uses Q_nu(a, b) = P[chi'^2(2 nu, a^2) > b^2].
    """
    if np.any(np.asarray(order) <= 0):
        raise ValueError("Marcum Q order must be positive")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("Marcum Q arguments must be nonnegative")
    return noncentral_chi2_sf(b * b, 2.0 * np.asarray(order, dtype=float), a * a)


@dataclass(frozen=True)
class NoncentralChi2:
    """Noncentral chi-square law with ``dof`` degrees of freedom and
    noncentrality ``nc``."""

    dof: float
    nc: float

    def __post_init__(self):
        _check_ncx2(self.dof, self.nc)

    @property
    def mean(self) -> float:
        return self.dof + self.nc

    @property
    def var(self) -> float:
        return 2.0 * self.dof + 4.0 * self.nc

    def cdf(self, z):
        return noncentral_chi2_cdf(z, self.dof, self.nc)

    def sf(self, z):
        return noncentral_chi2_sf(z, self.dof, self.nc)
