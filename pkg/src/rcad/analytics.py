"""Closed-form performance of the random-codebook reconciliation scheme.

Given Alice's block energy m, the true-codeword score normalized by
sigma_{Y|X}^2 and each wrong-codeword score normalized by sigma_Y^2 are
noncentral chi-square with n degrees of freedom.  From the per-codeword
probabilities

    pi1 = P[true score >= theta],   pi0 = P[wrong score < theta]

follow the true/false accept probabilities of the unique-below-threshold
rule, and averaging over m ~ chi2(n) gives the quantities entering the
secret key ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Literal

import numpy as np
from numba import njit

from .channel import (LOG2E, ChannelParams, ModulationParams, derived_variances,
                      leakage_ey, mutual_info_xy)
from .numerics import _ncx2_cdf, _ncx2_cdf_tail, _ncx2_sf, _ncx2_sf_tail, binary_entropy
from .reconciliation import ThresholdRule, noncentralities, threshold

Rounding = Literal["ceil", "nearest"]
SerAverage = Literal["expectation", "ratio", "conservative"]

DEFAULT_NODES = 512
# half-width of the m integration window in units of the chi2(n) std
_M_WINDOW = 12.0
# P_acc below this is treated as a degenerate point for SER
_P_ACC_FLOOR = 1e-300


@dataclass(frozen=True)
class SchemeParams:
    """Reconciliation scheme parameters.

    Parameters
    ----------
    q : int
        Codebook size (number of rows).
    gamma : float
        Code rate relative to capacity; fixes n through
        log2(q) = gamma * n * I(X;Y).
    alpha : float
        Threshold offset per sample, in score units.
    n : int, optional
        Pinned blocklength.  ``None`` derives it from ``gamma``.
    N, L : int
        Number of accepted blocks and final key length; bookkeeping only.
    rounding : {"ceil", "nearest"}
        How log2(q) / (gamma I) is turned into an integer n.
    threshold_rule : {"mean", "literal"}
        See :func:`rcad.reconciliation.threshold`.
    ser_average : {"expectation", "ratio", "conservative"}
        Which m-averaged symbol error rate enters the key rate:
        E_m[SER(m)] (default), the accepted-block fraction
        E[P_FA] / E[P_acc], or the larger of the two.
    """

    q: int
    gamma: float
    alpha: float
    n: int | None = None
    N: int = 1
    L: int | None = None
    rounding: Rounding = "ceil"
    threshold_rule: ThresholdRule = "mean"
    ser_average: SerAverage = "expectation"

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 2:
            raise ValueError(f"q must be an integer >= 2, got {self.q}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not math.isfinite(self.alpha):
            raise ValueError(f"alpha must be finite, got {self.alpha}")
        if self.n is not None and (int(self.n) != self.n or self.n < 1):
            raise ValueError(f"n must be an integer >= 1, got {self.n}")
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.rounding not in ("ceil", "nearest"):
            raise ValueError(f"unknown rounding {self.rounding!r}")
        if self.threshold_rule not in ("mean", "literal"):
            raise ValueError(f"unknown threshold rule {self.threshold_rule!r}")
        if self.ser_average not in ("expectation", "ratio", "conservative"):
            raise ValueError(f"unknown ser_average {self.ser_average!r}")

    @property
    def log2q(self) -> float:
        return math.log2(self.q)

    def resolve_n(self, ch: ChannelParams, mod: ModulationParams) -> int:
        if self.n is not None:
            return int(self.n)
        return blocklength(self.q, self.gamma, ch, mod, self.rounding)

    def with_n(self, n: int) -> "SchemeParams":
        return replace(self, n=int(n))


@dataclass(frozen=True)
class ConditionalRates:
    """Rates conditional on a given block energy m."""

    pi1: float
    pi0: float
    p_ta: float
    p_fa: float
    p_acc: float
    ser: float
    degenerate: bool = False


@dataclass(frozen=True)
class RatePrediction:
    """m-averaged performance and the secret key ratio.

    ``skr`` uses the rate actually carried by the integer blocklength,
    gamma_eff = log2(q) / (n I), so it equals P_acc [(1 - h) log2(q) / n - L].
    ``skr_nominal`` uses the requested gamma instead, and ``skr_small_t`` is
    the leading-order small-T expansion with gamma_eff.
    ``ser_av`` is E_m[SER(m)], ``ser_ratio`` is E[P_FA] / E[P_acc] (the
    fraction of accepted blocks that are wrong) and ``ber`` is half of the
    one selected by ``SchemeParams.ser_average``.
    """

    n: int
    p_ta_av: float
    p_fa_av: float
    p_acc_av: float
    ser_av: float
    ser_ratio: float
    ber: float
    i_xy: float
    i_ey: float
    gamma: float
    gamma_eff: float
    skr: float
    skr_nominal: float
    skr_small_t: float
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# ---------------------------------------------------------------------------
# per-codeword probabilities


def _variances(ch, mod):
    v = derived_variances(ch, mod)
    return v.sigma_y_given_x2, v.sigma_y2


def pi1(m, n, alpha, ch: ChannelParams, mod: ModulationParams, rule: ThresholdRule = "mean") -> float:
    """P[true-codeword score >= theta | m], a Marcum Q of order n/2."""
    theta = threshold(m, n, alpha, ch, mod, rule)
    if theta <= 0.0:
        return 1.0
    lam1, _ = noncentralities(m, n, ch, mod)
    s_yx, _ = _variances(ch, mod)
    return float(_ncx2_sf_tail(theta / s_yx, float(n), lam1))


def pi0(m, n, alpha, ch: ChannelParams, mod: ModulationParams, rule: ThresholdRule = "mean") -> float:
    """P[wrong-codeword score < theta | m]."""
    theta = threshold(m, n, alpha, ch, mod, rule)
    if theta <= 0.0:
        return 0.0
    _, lam0 = noncentralities(m, n, ch, mod)
    _, s_y = _variances(ch, mod)
    return float(_ncx2_cdf_tail(theta / s_y, float(n), lam0))


@njit(cache=True)
def _accept_probs(p1, one_minus_p1, p0, q):
    """(P_TA, P_FA) from the per-codeword probabilities, powers in log space."""
    if p0 >= 1.0:
        pw1 = 0.0
        pw2 = 1.0 if q == 2 else 0.0
    else:
        l0 = math.log1p(-p0)
        pw1 = math.exp((q - 1.0) * l0)
        pw2 = math.exp((q - 2.0) * l0)
    return one_minus_p1 * pw1, (q - 1.0) * p1 * p0 * pw2


def rates_from_pis(p1: float, p0: float, q: int, one_minus_p1: float | None = None) -> ConditionalRates:
    """Accept probabilities and SER for given pi1, pi0 and codebook size."""
    if not (0.0 <= p1 <= 1.0 and 0.0 <= p0 <= 1.0):
        raise ValueError("pi1 and pi0 must lie in [0, 1]")
    if one_minus_p1 is None:
        one_minus_p1 = 1.0 - p1
    p_ta, p_fa = _accept_probs(p1, one_minus_p1, p0, float(q))
    p_acc = p_ta + p_fa
    if p_acc > _P_ACC_FLOOR:
        return ConditionalRates(p1, p0, p_ta, p_fa, p_acc, p_fa / p_acc)
    return ConditionalRates(p1, p0, p_ta, p_fa, p_acc, 0.0, degenerate=True)


@njit(cache=True)
def _rates_at(m, n, alpha, q, s_yx, s_y, snr, literal):
    """(pi1, 1 - pi1, pi0, P_TA, P_FA) at one m; all scalars."""
    lam1 = s_yx / snr * m
    lam0 = s_y / snr * m
    if literal:
        theta = s_yx * lam1 + n * alpha
    else:
        theta = s_yx * (n + lam1) + n * alpha
    if theta <= 0.0:
        return 1.0, 0.0, 0.0, 0.0, 0.0
    z1 = theta / s_yx
    # one tail summed, the other by complement: p1 + c1 = 1 exactly
    if z1 > n + lam1:
        p1 = _ncx2_sf(z1, n, lam1)
        c1 = 1.0 - p1
    else:
        c1 = _ncx2_cdf(z1, n, lam1)
        p1 = 1.0 - c1
    p0 = _ncx2_cdf_tail(theta / s_y, n, lam0)
    p_ta, p_fa = _accept_probs(p1, c1, p0, q)
    return p1, c1, p0, p_ta, p_fa


@njit(cache=True)
def _rates_on_nodes(ms, n, alpha, q, s_yx, s_y, snr, literal):
    out = np.empty((ms.size, 4))
    for j in range(ms.size):
        r = _rates_at(ms[j], n, alpha, q, s_yx, s_y, snr, literal)
        out[j, 0] = r[0]
        out[j, 1] = r[2]
        out[j, 2] = r[3]
        out[j, 3] = r[4]
    return out


def conditional_rates(m: float, params: SchemeParams, ch: ChannelParams, mod: ModulationParams) -> ConditionalRates:
    """P_TA, P_FA, SER given block energy m.

    1 - pi1 is taken from the lower-tail sum rather than by subtraction so
    that P_TA keeps its relative accuracy when pi1 is close to 1.
    """
    if m < 0:
        raise ValueError("m must be nonnegative")
    n = params.resolve_n(ch, mod)
    s_yx, s_y = _variances(ch, mod)
    p1, c1, p0, _, _ = _rates_at(float(m), float(n), float(params.alpha), float(params.q), s_yx, s_y,
                                 ch.transmission * mod.sigma_x2, params.threshold_rule == "literal")
    return rates_from_pis(p1, p0, params.q, one_minus_p1=c1)


# ---------------------------------------------------------------------------
# m averaging


@lru_cache(maxsize=16)
def _legendre(nodes: int):
    return np.polynomial.legendre.leggauss(nodes)


def m_quadrature(n: int, nodes: int = DEFAULT_NODES) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and normalized weights for E[f(m)], m ~ chi2(n).

    Gauss-Legendre on [max(0, n - 12 sqrt(2n)), n + 12 sqrt(2n)] against the
    chi2(n) density, renormalized by the captured mass.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    half = _M_WINDOW * math.sqrt(2.0 * n)
    lo, hi = max(0.0, n - half), n + half
    x, w = _legendre(int(nodes))
    ms = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    k = 0.5 * n
    logpdf = (k - 1.0) * np.log(ms) - 0.5 * ms - k * math.log(2.0) - math.lgamma(k)
    wt = w * np.exp(logpdf - logpdf.max())
    return ms, wt / wt.sum()


def average_over_m(f: Callable[[float], float], n: int, nodes: int = DEFAULT_NODES,
                   vectorized: bool = False) -> float:
    """E[f(m)] for m ~ chi2(n) by deterministic quadrature.

    ``f`` is called once per node unless ``vectorized`` is set, in which
    case it receives the whole node array.
    """
    ms, wt = m_quadrature(n, nodes)
    vals = np.asarray(f(ms), dtype=float) if vectorized else np.array([f(float(m)) for m in ms])
    return float(np.dot(wt, vals))


# ---------------------------------------------------------------------------
# blocklength and key rate


def blocklength(q: int, gamma: float, ch: ChannelParams, mod: ModulationParams,
                rounding: Rounding = "ceil") -> int:
    """Blocklength from log2(q) = gamma * n * I(X;Y).

    ``"ceil"`` (default) takes the smallest n whose code rate does not
    exceed gamma times capacity; ``"nearest"`` rounds to the closest integer.
    Both are floored at 1.
    """
    info = mutual_info_xy(ch, mod)
    if not gamma * info > 0:
        raise ValueError("gamma * I(X;Y) must be positive")
    x = math.log2(q) / (gamma * info)
    if rounding == "ceil":
        n = math.ceil(x - 1e-9 * x)
    elif rounding == "nearest":
        n = math.floor(x + 0.5)
    else:
        raise ValueError(f"unknown rounding {rounding!r}")
    return max(1, int(n))


def select_ser(ser_expect, ser_ratio, how: SerAverage = "expectation"):
    """Pick the SER entering the key rate; works elementwise on arrays."""
    if how == "expectation":
        return ser_expect
    if how == "ratio":
        return ser_ratio
    if how == "conservative":
        return np.maximum(ser_expect, ser_ratio)
    raise ValueError(f"unknown ser_average {how!r}")


def _rate_bracket(gamma, ber, i_xy, i_ey):
    return gamma * (1.0 - binary_entropy(ber)) * i_xy - i_ey


def small_t_rate_bracket(gamma: float, ber: float, T: float, sigma_x2: float) -> float:
    """Leading small-T form of gamma (1 - h(ber)) I(X;Y) - I(Y;E) at xi = 0."""
    return T * LOG2E * sigma_x2 * (gamma * (1.0 - binary_entropy(ber))
                                   - sigma_x2 * math.log1p(1.0 / sigma_x2))


def averaged_rates(params: SchemeParams, ch: ChannelParams, mod: ModulationParams,
                   nodes: int = DEFAULT_NODES):
    """(n, E[P_TA], E[P_FA], E[SER], per-node table) over m ~ chi2(n)."""
    n = params.resolve_n(ch, mod)
    ms, wt = m_quadrature(n, nodes)
    s_yx, s_y = _variances(ch, mod)
    tab = _rates_on_nodes(ms, float(n), float(params.alpha), float(params.q), s_yx, s_y,
                          ch.transmission * mod.sigma_x2, params.threshold_rule == "literal")
    p_ta, p_fa = tab[:, 2], tab[:, 3]
    acc = p_ta + p_fa
    # nodes with P_acc = 0 carry SER = 0
    ser = np.where(acc > _P_ACC_FLOOR, p_fa / np.where(acc > _P_ACC_FLOOR, acc, 1.0), 0.0)
    return n, float(wt @ p_ta), float(wt @ p_fa), float(wt @ ser), ms, tab


@njit(cache=True, nogil=True)
def _alpha_column(ms, wt, n, alphas, q, s_yx, s_y, snr, literal):
    """m-averaged (P_TA, P_FA, SER) for each threshold offset in ``alphas``."""
    out = np.zeros((alphas.size, 3))
    for a in range(alphas.size):
        for j in range(ms.size):
            r = _rates_at(ms[j], n, alphas[a], q, s_yx, s_y, snr, literal)
            acc = r[3] + r[4]
            out[a, 0] += wt[j] * r[3]
            out[a, 1] += wt[j] * r[4]
            if acc > _P_ACC_FLOOR:
                out[a, 2] += wt[j] * (r[4] / acc)
    return out


@dataclass(frozen=True)
class AlphaSweep:
    """Rates at one (q, n, channel, modulation) over many alpha values."""

    alphas: np.ndarray
    n: int
    p_ta_av: np.ndarray
    p_fa_av: np.ndarray
    ser_av: np.ndarray
    i_xy: float
    i_ey: float
    gamma_eff: float
    skr: np.ndarray


def alpha_sweep(q: int, n: int, alphas, ch: ChannelParams, mod: ModulationParams,
                nodes: int = DEFAULT_NODES, rule: ThresholdRule = "mean",
                ser_average: SerAverage = "expectation") -> AlphaSweep:
    """Vectorized :func:`secret_key_ratio` over alpha at fixed n.

    The key rate depends on gamma only through n, so a landscape column of
    constant n shares everything except the threshold offset.
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    ms, wt = m_quadrature(n, nodes)
    s_yx, s_y = _variances(ch, mod)
    tab = _alpha_column(ms, wt, float(n), alphas, float(q), s_yx, s_y,
                        ch.transmission * mod.sigma_x2, rule == "literal")
    i_xy = mutual_info_xy(ch, mod)
    i_ey = leakage_ey(ch, mod).leakage_bits
    gamma_eff = math.log2(q) / (n * i_xy)
    p_acc = tab[:, 0] + tab[:, 1]
    ratio = np.divide(tab[:, 1], p_acc, out=np.zeros_like(p_acc), where=p_acc > _P_ACC_FLOOR)
    ber = np.clip(select_ser(tab[:, 2], ratio, ser_average) / 2.0, 0.0, 1.0)
    skr = p_acc * (gamma_eff * (1.0 - binary_entropy(ber)) * i_xy - i_ey)
    return AlphaSweep(alphas, n, tab[:, 0], tab[:, 1], tab[:, 2], i_xy, i_ey, gamma_eff, skr)


def secret_key_ratio(params: SchemeParams, ch: ChannelParams, mod: ModulationParams,
                     nodes: int = DEFAULT_NODES) -> RatePrediction:
    """Secret key ratio P_acc [gamma (1 - h(SER / 2)) I(X;Y) - I(Y;E)].

    P_acc and SER are m-averaged; SER/2 is the bit error rate because a
    wrong symbol maps to a uniformly random index.
    """
    n, p_ta, p_fa, ser_av, _, _ = averaged_rates(params, ch, mod, nodes)
    p_acc = p_ta + p_fa
    degenerate = not p_acc > _P_ACC_FLOOR
    ser_ratio = p_fa / p_acc if not degenerate else 0.0
    ber = min(max(float(select_ser(ser_av, ser_ratio, params.ser_average)) / 2.0, 0.0), 1.0)
    i_xy = mutual_info_xy(ch, mod)
    i_ey = leakage_ey(ch, mod).leakage_bits
    gamma_eff = params.log2q / (n * i_xy)
    skr = p_acc * _rate_bracket(gamma_eff, ber, i_xy, i_ey)
    skr_nominal = p_acc * _rate_bracket(params.gamma, ber, i_xy, i_ey)
    skr_small_t = p_acc * small_t_rate_bracket(gamma_eff, ber, ch.transmission, mod.sigma_x2)
    return RatePrediction(n, p_ta, p_fa, p_acc, ser_av, ser_ratio, ber, i_xy, i_ey,
                          params.gamma, gamma_eff, skr, skr_nominal, skr_small_t, degenerate)


def rate_sign(params: SchemeParams, ch: ChannelParams, mod: ModulationParams) -> float:
    """Sign-carrying rate term gamma_eff (1 - h) I - L, independent of P_acc.

    Useful where P_acc underflows to 0 and the SKR itself would read as 0.
    """
    n, p_ta, p_fa, ser_av, _, _ = averaged_rates(params, ch, mod)
    acc = p_ta + p_fa
    ser = select_ser(ser_av, p_fa / acc if acc > _P_ACC_FLOOR else 0.0, params.ser_average)
    i_xy = mutual_info_xy(ch, mod)
    return _rate_bracket(params.log2q / (n * i_xy), float(ser) / 2.0, i_xy,
                         leakage_ey(ch, mod).leakage_bits)


def skr_decoupled_beta(beta: float, p_fail: float, ch: ChannelParams, mod: ModulationParams) -> float:
    """Decoupled lower bound (1 - P_fail)(beta I(X;Y) - I(Y;E))."""
    if not 0.0 <= p_fail <= 1.0:
        raise ValueError("p_fail must lie in [0, 1]")
    return (1.0 - p_fail) * (beta * mutual_info_xy(ch, mod) - leakage_ey(ch, mod).leakage_bits)
