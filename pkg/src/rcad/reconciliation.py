"""Protocol core: random codebook, Bob's masking, Alice's scores and decision.

Row indices are 0-based throughout (``u`` in ``0..q-1``), which is also the
symbol value that gets binarised into the raw key.

Codebook entries are a pure function of ``(seed, row, column)``: a keyed
64-bit hash (two rounds of the SplitMix64 finalizer) mapped to a double in
[0, 1).  Nothing is stored, so any row or column can be regenerated on the
fly and scores for different rows can be computed independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numba import njit

from .channel import ChannelParams, ModulationParams, derived_variances
from .numerics import gaussian_cdf, gaussian_cdf_inv

ThresholdRule = Literal["mean", "literal"]

# mod-1 arguments are kept this far from 0 and 1 before the Gaussian quantile
SATURATION_EPS = 1e-15

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# independent streams derived from one trial seed
STREAM_TABLE = 0
STREAM_X = 1
STREAM_NOISE = 2
STREAM_U = 3


@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def stream_key(seed, stream):
    """Key for one named stream."""
    # explicit casts: mixing int64 with uint64 would promote to float64
    return _mix64(_mix64(np.uint64(seed)) + (np.uint64(stream) + np.uint64(1)) * _GOLDEN)


@njit(cache=True)
def uniform_at(key, a, b):
    """Uniform double in [0, 1) at counter position (a, b) of a keyed stream."""
    counter = (np.uint64(a) << _S32) | np.uint64(b)
    h = _mix64(np.uint64(key) + _mix64(counter))
    return float(h >> _S11) * _INV53


@njit(cache=True)
def _table_block(key, rows, n):
    key = np.uint64(key)
    out = np.empty((rows.size, n))
    for r in range(rows.size):
        for i in range(n):
            out[r, i] = uniform_at(key, rows[r], np.uint64(i))
    return out


def _u64(seed: int) -> np.uint64:
    return np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class Codebook:
    """A q x n table of uniform [0, 1) entries defined by a 64-bit seed.

    Entries are generated on demand; ``materialize`` builds the whole table.
    """

    seed: int
    q: int
    n: int

    def __post_init__(self):
        if self.q < 2:
            raise ValueError(f"codebook needs q >= 2, got {self.q}")
        if self.n < 1:
            raise ValueError(f"codebook needs n >= 1, got {self.n}")

    @property
    def key(self) -> np.uint64:
        return np.uint64(stream_key(_u64(self.seed), np.uint64(STREAM_TABLE)))

    def entry(self, row: int, col: int) -> float:
        if not (0 <= row < self.q and 0 <= col < self.n):
            raise IndexError((row, col))
        return float(uniform_at(self.key, np.uint64(row), np.uint64(col)))

    def rows(self, rows) -> np.ndarray:
        rows = np.atleast_1d(np.asarray(rows, dtype=np.uint64))
        if rows.size and int(rows.max()) >= self.q:
            raise IndexError("row index out of range")
        return _table_block(self.key, rows, self.n)

    def row(self, row: int) -> np.ndarray:
        return self.rows([row])[0]

    def materialize(self) -> np.ndarray:
        return self.rows(np.arange(self.q))


def generate_codebook(seed: int, q: int, n: int) -> Codebook:
    return Codebook(int(seed), int(q), int(n))


@dataclass(frozen=True)
class EncodedMessage:
    c: np.ndarray
    u: int


@dataclass(frozen=True)
class ScoreSet:
    scores: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.scores) < 0):
            raise ValueError("scores must be nonnegative")


@dataclass(frozen=True)
class Decision:
    accepted: bool
    index: int | None = None
    case_id: int | None = None

    @classmethod
    def reject(cls, case_id=None):
        return cls(False, None, case_id)


def _row_values(cb, row, table):
    if table is not None:
        return np.asarray(table[row], dtype=float)
    return cb.row(row)


def encode(y, cb: Codebook, u: int, sigma_y: float, table=None) -> EncodedMessage:
    """Bob's public message: c_i = F_Y(y_i) + w[u, i] mod 1.

    ``table`` optionally supplies explicit codebook rows (used to force
    special tables in tests); otherwise rows come from ``cb``.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (cb.n,):
        raise ValueError(f"y must have length {cb.n}")
    if not 0 <= u < cb.q:
        raise IndexError(f"u={u} outside 0..{cb.q - 1}")
    c = np.mod(gaussian_cdf(y, sigma_y) + _row_values(cb, u, table), 1.0)
    return EncodedMessage(c, int(u))


def centering_factor(ch: ChannelParams, mod: ModulationParams) -> float:
    """Multiplier k in the score term (y' - k x); k = sigma_Y^2 / (sqrt(T) sigma_X^2)."""
    v = derived_variances(ch, mod)
    return v.sigma_y2 / (math.sqrt(ch.transmission) * mod.sigma_x2)


def unmask(c, w, sigma_y):
    """F_Y^inv(c - w mod 1) with the saturation guard applied."""
    t = np.clip(np.mod(np.asarray(c, dtype=float) - w, 1.0), SATURATION_EPS, 1.0 - SATURATION_EPS)
    return gaussian_cdf_inv(t, sigma_y)


def score(x, cb: Codebook, c, ell: int, ch: ChannelParams, mod: ModulationParams, table=None) -> float:
    """Alice's score for candidate row ``ell``; low means likely."""
    x = np.asarray(x, dtype=float)
    v = derived_variances(ch, mod)
    resid = unmask(c, _row_values(cb, ell, table), v.sigma_y) - centering_factor(ch, mod) * x
    return float(np.dot(resid, resid))


def score_all(x, cb: Codebook, c, ch: ChannelParams, mod: ModulationParams, table=None) -> ScoreSet:
    """Scores for every row of the codebook."""
    x = np.asarray(x, dtype=float)
    v = derived_variances(ch, mod)
    w = cb.materialize() if table is None else np.asarray(table, dtype=float)
    resid = unmask(np.asarray(c)[None, :], w, v.sigma_y) - centering_factor(ch, mod) * x[None, :]
    return ScoreSet(np.einsum("ij,ij->i", resid, resid))


def empirical_m(x, sigma_x2: float) -> float:
    """m = sum(x_i^2) / sigma_X^2; chi-square(n) distributed over random X."""
    x = np.asarray(x, dtype=float)
    return float(np.dot(x, x) / sigma_x2)


def noncentralities(m: float, n: int, ch: ChannelParams, mod: ModulationParams) -> tuple[float, float]:
    """(lambda1, lambda0): noncentralities of the true- and wrong-codeword
    normalized scores given the block energy m."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    snr = ch.transmission * mod.sigma_x2
    if snr == 0.0:
        raise ValueError("degenerate channel: T * sigma_x2 = 0")
    v = derived_variances(ch, mod)
    return v.sigma_y_given_x2 / snr * m, v.sigma_y2 / snr * m


def threshold(m: float, n: int, alpha: float, ch: ChannelParams, mod: ModulationParams,
              rule: ThresholdRule = "mean") -> float:
    """Alice's x-dependent threshold.

    ``rule="mean"`` (default) offsets from the mean of the true-codeword
    score, theta = sigma_{Y|X}^2 (n + lambda1) + n alpha; this is the
    convention that reproduces the published operating points.
    ``rule="literal"`` uses theta = sigma_{Y|X}^2 lambda1 + n alpha.
    A result <= 0 means every candidate is rejected.
    """
    lam1, _ = noncentralities(m, n, ch, mod)
    s2 = derived_variances(ch, mod).sigma_y_given_x2
    if rule == "mean":
        return s2 * (n + lam1) + n * alpha
    if rule == "literal":
        return s2 * lam1 + n * alpha
    raise ValueError(f"unknown threshold rule {rule!r}")


def decide(scores, theta: float) -> Decision:
    """Accept the unique index with score strictly below theta, else reject."""
    s = np.asarray(getattr(scores, "scores", scores), dtype=float)
    below = np.flatnonzero(s < theta)
    if below.size == 1:
        return Decision(True, int(below[0]))
    return Decision.reject()


def classify_outcome(decision: Decision, scores, theta: float, u_true: int) -> int:
    """Case number 1..5 of a decision against the ground-truth index.

    1 true accept, 2 false accept, 3 reject with the true score above theta
    and several others below, 4 everything above, 5 true score below theta
    but at least one competitor below too.
    """
    s = np.asarray(getattr(scores, "scores", scores), dtype=float)
    below = s < theta
    true_below = bool(below[u_true])
    others = int(below.sum()) - int(true_below)
    if true_below:
        case = 1 if others == 0 else 5
    elif others == 1:
        case = 2
    elif others == 0:
        case = 4
    else:
        case = 3
    if (case in (1, 2)) != decision.accepted:
        raise ValueError("decision inconsistent with scores")
    return case
