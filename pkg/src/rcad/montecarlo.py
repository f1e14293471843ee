"""Monte Carlo protocol trials.

Each trial is a pure function of a 64-bit trial seed: Alice's Gaussian block,
the channel noise, Bob's index u and the fresh codebook all come from
separate keyed counter streams of that seed.  Trial seeds are in turn a hash
of ``(master_seed, trial_index)``, so a batch gives the same tally however it
is split into chunks or threads.

Alice's decoder screens each row with an unrefined Gaussian quantile and
stops summing as soon as the partial score is clearly above the threshold.
Scores are sums of squares, so early exit never changes a decision; rows
whose screened score lands within the quantile error band of the threshold
are rescored exactly.  Scanning also stops once two competitors are below.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np
from numba import njit
from scipy import stats

from .analytics import SchemeParams
from .channel import ChannelParams, ModulationParams, derived_variances
from .numerics import _ndtr, _ndtri, _ndtri_fast
from .reconciliation import (SATURATION_EPS, STREAM_NOISE, STREAM_TABLE, STREAM_U, STREAM_X,
                             Decision, _mix64, stream_key, uniform_at)

Mode = Literal["free", "fixed-m", "fixed-x"]
_MODE_CODE = {"free": 0, "fixed-m": 1, "fixed-x": 2}
_TRIAL_SALT = np.uint64(0xD1B54A32D192ED03)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_INV53 = 1.0 / 9007199254740992.0
_S11 = np.uint64(11)


class InsufficientAccepts(ValueError):
    """Fewer accepted blocks than requested."""

    def __init__(self, requested: int, available: int):
        super().__init__(f"requested {requested} accepted blocks, only {available} available")
        self.requested = requested
        self.available = available


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def trial_seed(master, index):
    """Seed of trial ``index`` under ``master`` (both uint64)."""
    return _mix64(_mix64(master ^ _TRIAL_SALT) + (index + np.uint64(1)) * _GOLDEN)


@njit(cache=True)
def _open_uniform(key, a, b):
    # (0, 1) variant for Gaussian draws
    h = _mix64(key + _mix64((np.uint64(a) << np.uint64(32)) | np.uint64(b)))
    return (float(h >> _S11) + 0.5) * _INV53


@njit(cache=True)
def _draw_block(seed, n, sigma_x, sigma_yx, sqrt_t, mode, m_fix, x_fix):
    """Alice's x and Bob's y for one trial."""
    kx = stream_key(seed, np.uint64(STREAM_X))
    kn = stream_key(seed, np.uint64(STREAM_NOISE))
    x = np.empty(n)
    if mode == 2:
        for i in range(n):
            x[i] = x_fix[i]
    else:
        for i in range(n):
            x[i] = sigma_x * _ndtri(_open_uniform(kx, 0, i))
        if mode == 1:
            e = 0.0
            for i in range(n):
                e += x[i] * x[i]
            f = math.sqrt(m_fix * sigma_x * sigma_x / e) if e > 0.0 else 0.0
            for i in range(n):
                x[i] *= f
    y = np.empty(n)
    for i in range(n):
        y[i] = sqrt_t * x[i] + sigma_yx * _ndtri(_open_uniform(kn, 0, i))
    return x, y


@njit(cache=True)
def _encode(seed, y, u, sigma_y, zero_table):
    kt = stream_key(seed, np.uint64(STREAM_TABLE))
    n = y.size
    c = np.empty(n)
    for i in range(n):
        w = 0.0 if zero_table else uniform_at(kt, u, i)
        v = _ndtr(y[i] / sigma_y) + w
        c[i] = v - 1.0 if v >= 1.0 else v
    return c


@njit(cache=True)
def _row_score(kt, row, c, x, k, sigma_y, theta, zero_table):
    """Score of one row; stops early (returning a value >= theta) once the
    partial sum reaches ``theta``."""
    s = 0.0
    for i in range(c.size):
        w = 0.0 if zero_table else uniform_at(kt, row, i)
        t = c[i] - w
        if t < 0.0:
            t += 1.0
        if t < SATURATION_EPS:
            t = SATURATION_EPS
        elif t > 1.0 - SATURATION_EPS:
            t = 1.0 - SATURATION_EPS
        r = sigma_y * _ndtri(t) - k * x[i]
        s += r * r
        if s >= theta:
            return s
    return s


# bound on the relative error of the screening quantile, with margin
_SCREEN_TOL = 3e-8


@njit(cache=True)
def _row_below(kt, row, c, x, k, sigma_y, theta, zero_table, order):
    """Exact decision score(row) < theta, via a fast screening pass.

    Coordinates are visited in ``order`` (largest |x_i| first), which makes
    wrong-row partial sums cross the threshold sooner.
    """
    s = 0.0
    y2 = 0.0
    for j in range(c.size):
        i = order[j]
        w = 0.0 if zero_table else uniform_at(kt, row, i)
        t = c[i] - w
        if t < 0.0:
            t += 1.0
        if t < SATURATION_EPS:
            t = SATURATION_EPS
        elif t > 1.0 - SATURATION_EPS:
            t = 1.0 - SATURATION_EPS
        yp = sigma_y * _ndtri_fast(t)
        r = yp - k * x[i]
        s += r * r
        y2 += yp * yp
        if s >= theta:
            if s - _SCREEN_TOL * math.sqrt(s * y2) > theta:
                return False
            return _row_score(kt, row, c, x, k, sigma_y, np.inf, zero_table) < theta
    if s + _SCREEN_TOL * math.sqrt(s * y2) < theta:
        return True
    return _row_score(kt, row, c, x, k, sigma_y, np.inf, zero_table) < theta


@njit(cache=True, nogil=True)
def _run_trials(master, start, stop, q, n, alpha, T, sigma_x2, s_yx2, s_y2, literal,
                mode, m_fix, x_fix, zero_table):
    count = stop - start
    cases = np.zeros(count, dtype=np.int8)
    us = np.zeros(count, dtype=np.int64)
    uhats = np.full(count, -1, dtype=np.int64)
    sigma_x = math.sqrt(sigma_x2)
    sigma_y = math.sqrt(s_y2)
    sigma_yx = math.sqrt(s_yx2)
    sqrt_t = math.sqrt(T)
    k = s_y2 / (sqrt_t * sigma_x2)
    snr = T * sigma_x2
    for j in range(count):
        seed = trial_seed(master, np.uint64(start + j))
        x, y = _draw_block(seed, n, sigma_x, sigma_yx, sqrt_t, mode, m_fix, x_fix)
        ku = stream_key(seed, np.uint64(STREAM_U))
        u = min(int(uniform_at(ku, 0, 0) * q), q - 1)
        c = _encode(seed, y, u, sigma_y, zero_table)
        e = 0.0
        for i in range(n):
            e += x[i] * x[i]
        lam1 = s_yx2 / snr * (e / sigma_x2)
        theta = s_yx2 * lam1 + n * alpha if literal else s_yx2 * (n + lam1) + n * alpha
        us[j] = u
        if theta <= 0.0:
            cases[j] = 4
            continue
        kt = stream_key(seed, np.uint64(STREAM_TABLE))
        order = np.argsort(-np.abs(x))
        true_below = _row_below(kt, u, c, x, k, sigma_y, theta, zero_table, order)
        others = 0
        other_idx = -1
        for ell in range(q):
            if ell == u:
                continue
            if _row_below(kt, ell, c, x, k, sigma_y, theta, zero_table, order):
                others += 1
                other_idx = ell
                if others >= 2:
                    break
        if true_below:
            if others == 0:
                cases[j] = 1
                uhats[j] = u
            else:
                cases[j] = 5
        elif others == 1:
            cases[j] = 2
            uhats[j] = other_idx
        elif others == 0:
            cases[j] = 4
        else:
            cases[j] = 3
    return cases, us, uhats


@njit(cache=True, nogil=True)
def _score_samples(master, start, stop, q, n, T, sigma_x2, s_yx2, s_y2, mode, m_fix, x_fix, wrong):
    out = np.empty(stop - start)
    sigma_x = math.sqrt(sigma_x2)
    sigma_y = math.sqrt(s_y2)
    sigma_yx = math.sqrt(s_yx2)
    sqrt_t = math.sqrt(T)
    k = s_y2 / (sqrt_t * sigma_x2)
    for j in range(stop - start):
        seed = trial_seed(master, np.uint64(start + j))
        x, y = _draw_block(seed, n, sigma_x, sigma_yx, sqrt_t, mode, m_fix, x_fix)
        ku = stream_key(seed, np.uint64(STREAM_U))
        u = min(int(uniform_at(ku, 0, 0) * q), q - 1)
        c = _encode(seed, y, u, sigma_y, False)
        kt = stream_key(seed, np.uint64(STREAM_TABLE))
        if wrong:
            ell = (u + 1 + min(int(uniform_at(ku, 0, 1) * (q - 1)), q - 2)) % q
            out[j] = _row_score(kt, ell, c, x, k, sigma_y, np.inf, False) / s_y2
        else:
            out[j] = _row_score(kt, u, c, x, k, sigma_y, np.inf, False) / s_yx2
    return out


@njit(cache=True, nogil=True)
def _c_samples(master, start, stop, q, n, u, T, sigma_x2, s_yx2, s_y2, zero_table):
    out = np.empty((stop - start, n))
    sigma_x = math.sqrt(sigma_x2)
    sigma_y = math.sqrt(s_y2)
    sigma_yx = math.sqrt(s_yx2)
    sqrt_t = math.sqrt(T)
    dummy = np.zeros(1)
    for j in range(stop - start):
        seed = trial_seed(master, np.uint64(start + j))
        x, y = _draw_block(seed, n, sigma_x, sigma_yx, sqrt_t, 0, 0.0, dummy)
        out[j] = _encode(seed, y, u, sigma_y, zero_table)
    return out


# ---------------------------------------------------------------------------
# configuration and tallies


@dataclass(frozen=True)
class TrialConfig:
    """A batch of protocol trials.

    ``mode`` selects how Alice's block is drawn: ``"free"`` samples
    x ~ N(0, sigma_X^2)^n, ``"fixed-m"`` rescales that draw to the energy
    ``m_value``, and ``"fixed-x"`` uses ``x_vector`` in every trial.
    """

    trials: int
    master_seed: int
    scheme: SchemeParams
    channel: ChannelParams
    modulation: ModulationParams
    mode: Mode = "free"
    m_value: float | None = None
    x_vector: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.mode not in _MODE_CODE:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "fixed-m" and (self.m_value is None or self.m_value < 0):
            raise ValueError("fixed-m mode needs m_value >= 0")
        if self.mode == "fixed-x":
            if self.x_vector is None or len(self.x_vector) != self.n:
                raise ValueError(f"fixed-x mode needs x_vector of length n={self.n}")

    @property
    def n(self) -> int:
        return self.scheme.resolve_n(self.channel, self.modulation)

    def echo(self) -> dict:
        return {
            "trials": self.trials,
            "master_seed": int(self.master_seed),
            "scheme": asdict(self.scheme),
            "n": self.n,
            "channel": asdict(self.channel),
            "modulation": asdict(self.modulation),
            "mode": self.mode,
            "m_value": self.m_value,
            "x_vector": list(self.x_vector) if self.x_vector is not None else None,
        }


def _binom_se(k: int, total: int) -> float:
    if total == 0:
        return math.nan
    p = k / total
    return math.sqrt(p * (1.0 - p) / total)


@dataclass
class TrialTally:
    """Outcome counts per score configuration (cases 1..5) and the
    accepted (u_hat, u) pairs in trial order."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros(5, dtype=np.int64))
    u_hat: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    u: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def trials(self) -> int:
        return int(self.counts.sum())

    @property
    def accepts(self) -> int:
        return int(self.counts[0] + self.counts[1])

    @property
    def p_ta(self) -> float:
        return self.counts[0] / self.trials

    @property
    def p_fa(self) -> float:
        return self.counts[1] / self.trials

    @property
    def p_acc(self) -> float:
        return self.accepts / self.trials

    @property
    def ser(self) -> float:
        return self.counts[1] / self.accepts if self.accepts else 0.0

    @property
    def se_p_ta(self) -> float:
        return _binom_se(int(self.counts[0]), self.trials)

    @property
    def se_p_fa(self) -> float:
        return _binom_se(int(self.counts[1]), self.trials)

    @property
    def se_ser(self) -> float:
        return _binom_se(int(self.counts[1]), self.accepts)

    def merge(self, other: "TrialTally") -> "TrialTally":
        return TrialTally(self.counts + other.counts,
                          np.concatenate([self.u_hat, other.u_hat]),
                          np.concatenate([self.u, other.u]))

    def check(self) -> None:
        if self.accepts != self.u_hat.size or self.u_hat.size != self.u.size:
            raise AssertionError("accepted pairs do not match case counts")
        if self.accepts and self.ser != int(np.sum(self.u_hat != self.u)) / self.accepts:
            raise AssertionError("SER does not match the accepted pairs")

    def summary(self) -> dict:
        return {
            "trials": self.trials,
            "case_counts": {str(i + 1): int(c) for i, c in enumerate(self.counts)},
            "p_ta": self.p_ta, "se_p_ta": self.se_p_ta,
            "p_fa": self.p_fa, "se_p_fa": self.se_p_fa,
            "p_acc": self.p_acc,
            "ser": self.ser, "se_ser": self.se_ser,
        }

    def to_json(self, config: TrialConfig | None = None, **extra) -> str:
        doc = {"tally": self.summary()}
        if config is not None:
            doc["config"] = config.echo()
            doc["seed"] = int(config.master_seed)
        doc.update(extra)
        return json.dumps(doc, indent=2, sort_keys=True)


@dataclass(frozen=True)
class TrialOutcome:
    decision: Decision
    case_id: int
    u: int
    u_hat: int | None


# ---------------------------------------------------------------------------
# drivers


def _kernel_args(config: TrialConfig):
    ch, mod, sch = config.channel, config.modulation, config.scheme
    v = derived_variances(ch, mod)
    x_fix = (np.asarray(config.x_vector, dtype=float) if config.x_vector is not None
             else np.zeros(1))
    m_fix = float(config.m_value) if config.m_value is not None else 0.0
    return dict(q=int(sch.q), n=config.n, alpha=float(sch.alpha), T=float(ch.transmission),
                sigma_x2=float(mod.sigma_x2), s_yx2=v.sigma_y_given_x2, s_y2=v.sigma_y2,
                literal=sch.threshold_rule == "literal", mode=_MODE_CODE[config.mode],
                m_fix=m_fix, x_fix=x_fix)


def _chunks(total: int, workers: int, chunk: int | None):
    if chunk is None:
        chunk = max(1, math.ceil(total / max(1, 4 * workers)))
    return [(s, min(total, s + chunk)) for s in range(0, total, chunk)]


def _map(fn, spans, workers):
    if workers <= 1 or len(spans) <= 1:
        return [fn(a, b) for a, b in spans]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), spans))


def _workers(workers):
    if workers is None:
        return os.cpu_count() or 1
    return max(1, int(workers))


def run_batch(config: TrialConfig, workers: int | None = None, chunk: int | None = None,
              zero_table: bool = False) -> TrialTally:
    """Run ``config.trials`` trials and tally the outcomes.

    The tally depends only on ``config``: chunks are contiguous trial-index
    ranges and are merged in index order.
    """
    kw = _kernel_args(config)
    master = np.uint64(int(config.master_seed))
    nworkers = _workers(workers)

    def work(a, b):
        return _run_trials(master, a, b, kw["q"], kw["n"], kw["alpha"], kw["T"], kw["sigma_x2"],
                           kw["s_yx2"], kw["s_y2"], kw["literal"], kw["mode"], kw["m_fix"],
                           kw["x_fix"], zero_table)

    tally = TrialTally()
    for cases, us, uhats in _map(work, _chunks(config.trials, nworkers, chunk), nworkers):
        counts = np.bincount(cases, minlength=6)[1:6].astype(np.int64)
        acc = uhats >= 0
        tally = tally.merge(TrialTally(counts, uhats[acc], us[acc]))
    tally.check()
    return tally


def run_trial(seed: int, scheme: SchemeParams, ch: ChannelParams, mod: ModulationParams,
              index: int = 0) -> TrialOutcome:
    """One protocol round: trial ``index`` of master seed ``seed``."""
    cfg = TrialConfig(index + 1, seed, scheme, ch, mod)
    kw = _kernel_args(cfg)
    cases, us, uhats = _run_trials(np.uint64(int(seed)), index, index + 1, kw["q"], kw["n"],
                                   kw["alpha"], kw["T"], kw["sigma_x2"], kw["s_yx2"], kw["s_y2"],
                                   kw["literal"], kw["mode"], kw["m_fix"], kw["x_fix"], False)
    case = int(cases[0])
    u_hat = int(uhats[0]) if uhats[0] >= 0 else None
    decision = Decision(case in (1, 2), u_hat, case)
    return TrialOutcome(decision, case, int(us[0]), u_hat)


def score_samples(config: TrialConfig, which: Literal["true", "wrong"], samples: int,
                  workers: int | None = None) -> np.ndarray:
    """Normalized scores for distribution tests.

    ``"true"`` gives S_u / sigma_{Y|X}^2 and ``"wrong"`` gives S_l / sigma_Y^2
    for a uniformly chosen l != u, each from a fresh trial.
    """
    if config.mode == "free":
        raise ValueError("score_samples needs fixed-m or fixed-x mode")
    if which not in ("true", "wrong"):
        raise ValueError(f"which must be 'true' or 'wrong', got {which!r}")
    kw = _kernel_args(config)
    master = np.uint64(int(config.master_seed))
    nworkers = _workers(workers)

    def work(a, b):
        return _score_samples(master, a, b, kw["q"], kw["n"], kw["T"], kw["sigma_x2"], kw["s_yx2"],
                              kw["s_y2"], kw["mode"], kw["m_fix"], kw["x_fix"], which == "wrong")

    return np.concatenate(_map(work, _chunks(int(samples), nworkers, None), nworkers))


def c_samples(config: TrialConfig, u: int, samples: int, zero_table: bool = False) -> np.ndarray:
    """Bob's public messages c for a fixed index ``u``; shape (samples, n)."""
    kw = _kernel_args(config)
    if not 0 <= u < kw["q"]:
        raise IndexError(f"u={u} outside 0..{kw['q'] - 1}")
    return _c_samples(np.uint64(int(config.master_seed)), 0, int(samples), kw["q"], kw["n"], int(u),
                      kw["T"], kw["sigma_x2"], kw["s_yx2"], kw["s_y2"], zero_table)


@dataclass(frozen=True)
class DecouplingReport:
    u_pair: tuple[int, int]
    values: int
    uniformity_p: tuple[float, float]
    per_coordinate_p: tuple[float, float]
    ks_p: float


def decoupling_test(config: TrialConfig, samples: int, u_pair: tuple[int, int] | None = None,
                    bins: int = 100, zero_table: bool = False) -> DecouplingReport:
    """Check that c is uniform and carries no information about u.

    For each u in ``u_pair`` draws ``samples`` scalar values of c (in trial
    and coordinate order) and runs a chi-square uniformity test over
    ``bins`` equal bins, both pooled and per coordinate (Bonferroni-combined
    minimum).  A two-sample KS test compares the two u-conditioned samples.
    """
    q = config.scheme.q
    u_pair = (0, q - 1) if u_pair is None else u_pair
    n = config.n
    rows = math.ceil(samples / n)
    pooled_p, coord_p, flat = [], [], []
    for k, u in enumerate(u_pair):
        cfg = TrialConfig(rows, int(config.master_seed) ^ (k + 1), config.scheme, config.channel,
                          config.modulation)
        c = c_samples(cfg, u, rows, zero_table)
        v = c.reshape(-1)[:samples]
        flat.append(v)
        counts = np.bincount(np.minimum((v * bins).astype(np.int64), bins - 1), minlength=bins)
        pooled_p.append(float(stats.chisquare(counts).pvalue))
        per = [stats.chisquare(np.bincount(np.minimum((c[:, i] * bins).astype(np.int64), bins - 1),
                                           minlength=bins)).pvalue for i in range(n)]
        coord_p.append(float(min(1.0, n * min(per))))
    ks = float(stats.ks_2samp(flat[0], flat[1]).pvalue)
    return DecouplingReport(tuple(u_pair), int(samples), tuple(pooled_p), tuple(coord_p), ks)


@dataclass(frozen=True)
class AccumulatedKey:
    alice_bits: str
    bob_bits: str
    bit_errors: int

    @property
    def ber(self) -> float:
        return self.bit_errors / len(self.bob_bits) if self.bob_bits else 0.0


def _bits(values: np.ndarray, width: int) -> str:
    return "".join(format(int(v), f"0{width}b") for v in values)


def accumulate_accepted(tally: TrialTally, N: int, q: int) -> AccumulatedKey:
    """Concatenate the binary forms of the first ``N`` accepted indices.

    Each index is written with ceil(log2 q) bits, most significant first.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if tally.u_hat.size < N:
        raise InsufficientAccepts(N, int(tally.u_hat.size))
    width = max(1, math.ceil(math.log2(q)))
    a, b = tally.u_hat[:N], tally.u[:N]
    errors = int(sum(bin(int(x) ^ int(y)).count("1") for x, y in zip(a, b)))
    return AccumulatedKey(_bits(a, width), _bits(b, width), errors)
