"""Search over (alpha, gamma, sigma_X^2) for the largest analytic key rate.

The rate depends on gamma only through the integer blocklength n, so the
(alpha, gamma) plane at fixed modulation is evaluated column by column: one
vectorized alpha sweep per distinct n, shared by every gamma mapping to it.

``optimize`` runs a staged grid search followed by a Nelder-Mead polish:

1. coarse pass over every ``coarse_stride``-th point of the sigma_X^2
   lattice with the full (alpha, gamma) grid;
2. fine pass over the full lattice within ``coarse_stride`` points of the
   coarse winner;
3. Nelder-Mead in (alpha, gamma, log10 sigma_X^2) from the best cell,
   evaluated at full quadrature accuracy.

Grid passes use ``scan_nodes`` quadrature nodes; the winner is always
re-evaluated with the default node count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .analytics import (DEFAULT_NODES, RatePrediction, SchemeParams, alpha_sweep, blocklength,
                        secret_key_ratio)
from .channel import (ChannelParams, ModulationParams, UnphysicalParameters,
                      default_excess_noise, distance_to_transmission, max_dw, plob_cv)

CSV_COLUMNS = ("alpha", "gamma", "sigma_x2", "n", "p_ta", "p_fa", "ser", "skr")
SWEEP_COLUMNS = ("distance_km", "T", "skr_opt", "plob_cv", "max_dw", "alpha", "gamma",
                 "sigma_x2", "n", "p_ta", "p_fa", "ser", "negative")


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    k = int(math.floor((hi - lo) / step + 1e-9))
    return np.round(lo + step * np.arange(k + 1), 10)


@dataclass(frozen=True)
class SearchSpace:
    """Grid for the parameter search at fixed (T, q).

    ``sigma_x2_range`` is ``(lo, hi, points_per_decade)`` and log-spaced;
    ``None`` selects [1e-3 / T, 10 / T] at ``sigma_points_per_decade``.  ``xi=None`` couples the excess
    noise to the modulation as 0.01 sigma_X^2; a number fixes it.
    ``ser_average`` defaults to ``"conservative"``: at small n the
    expectation E_m[SER(m)] falls far below the true fraction of wrong
    accepted blocks, and a search using it drifts into that region.
    """

    alpha_range: tuple[float, float, float] = (-1.5, 0.5, 0.05)
    gamma_range: tuple[float, float, float] = (0.8, 2.2, 0.05)
    sigma_x2_range: tuple[float, float, float] | None = None
    xi: float | None = None
    coarse_stride: int = 4
    scan_nodes: int = 32
    refine: bool = True
    threshold_rule: str = "mean"
    ser_average: str = "conservative"
    sigma_points_per_decade: float = 20.0

    def __post_init__(self):
        for name in ("alpha_range", "gamma_range"):
            lo, hi, step = getattr(self, name)
            if not (hi >= lo and step > 0):
                raise ValueError(f"{name} must satisfy hi >= lo and step > 0")
        if self.gamma_range[0] <= 0:
            raise ValueError("gamma range must be positive")
        if self.sigma_x2_range is not None:
            lo, hi, ppd = self.sigma_x2_range
            if not (0 < lo <= hi and ppd > 0):
                raise ValueError("sigma_x2_range must satisfy 0 < lo <= hi, points > 0")
        if not self.sigma_points_per_decade > 0:
            raise ValueError("sigma_points_per_decade must be positive")
        if self.coarse_stride < 1 or self.scan_nodes < 8:
            raise ValueError("coarse_stride >= 1 and scan_nodes >= 8 required")

    @property
    def alphas(self) -> np.ndarray:
        return _grid(*self.alpha_range)

    @property
    def gammas(self) -> np.ndarray:
        return _grid(*self.gamma_range)

    def sigma_x2_grid(self, T: float) -> np.ndarray:
        lo, hi, ppd = self.sigma_x2_range or (1e-3 / T, 10.0 / T, self.sigma_points_per_decade)
        k = int(math.floor(ppd * math.log10(hi / lo) + 1e-9))
        return lo * 10.0 ** (np.arange(k + 1) / ppd)

    def refined(self) -> "SearchSpace":
        """Same space with every step halved."""
        a, g = self.alpha_range, self.gamma_range
        s = self.sigma_x2_range
        return SearchSpace((a[0], a[1], a[2] / 2), (g[0], g[1], g[2] / 2),
                           None if s is None else (s[0], s[1], 2 * s[2]), self.xi,
                           self.coarse_stride, self.scan_nodes, self.refine, self.threshold_rule,
                           self.ser_average, 2 * self.sigma_points_per_decade)

    def channel(self, T: float, sigma_x2: float):
        xi = default_excess_noise(sigma_x2) if self.xi is None else self.xi
        return ChannelParams(T, xi), ModulationParams(sigma_x2)


@dataclass
class Landscape:
    """Rates on an (alpha x gamma) grid at fixed (T, q, sigma_X^2).

    Matrices are indexed ``[gamma_index, alpha_index]``.
    """

    T: float
    q: int
    sigma_x2: float
    xi: float
    alphas: np.ndarray
    gammas: np.ndarray
    n: np.ndarray
    p_ta: np.ndarray
    p_fa: np.ndarray
    ser: np.ndarray
    skr: np.ndarray

    def argmax(self) -> tuple[float, float, float]:
        """(alpha, gamma, skr) of the best cell; ties go to the smallest
        (alpha, gamma)."""
        best = np.max(self.skr)
        cands = np.argwhere(self.skr == best)
        a, g = min((self.alphas[ai], self.gammas[gi]) for gi, ai in cands)
        return float(a), float(g), float(best)

    def rows(self):
        for gi, g in enumerate(self.gammas):
            for ai, a in enumerate(self.alphas):
                yield {"alpha": float(a), "gamma": float(g), "sigma_x2": self.sigma_x2,
                       "n": int(self.n[gi]), "p_ta": float(self.p_ta[gi, ai]),
                       "p_fa": float(self.p_fa[gi, ai]), "ser": float(self.ser[gi, ai]),
                       "skr": float(self.skr[gi, ai])}

    def to_csv(self) -> str:
        return rows_to_csv(self.rows(), CSV_COLUMNS)


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _workers(workers):
    if workers is None:
        return os.cpu_count() or 1
    return max(1, int(workers))


def _pmap(fn, items, workers):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _columns(T, q, sigma_x2, alphas, gammas, space, nodes, workers):
    """Per-gamma rows of the landscape at one sigma_X^2; None if unphysical."""
    ch, mod = space.channel(T, sigma_x2)
    ns = np.array([blocklength(q, g, ch, mod) for g in gammas])
    uniq = sorted(set(int(v) for v in ns))
    try:
        sweeps = dict(zip(uniq, _pmap(
            lambda n: alpha_sweep(q, n, alphas, ch, mod, nodes, space.threshold_rule,
                                  space.ser_average),
            uniq, workers)))
    except UnphysicalParameters:
        return None
    return ch, ns, sweeps


def landscape(T: float, q: int, sigma_x2: float, alphas=None, gammas=None,
              space: SearchSpace | None = None, nodes: int = DEFAULT_NODES,
              workers: int | None = None) -> Landscape:
    """Key rate over an (alpha, gamma) grid; negative values are kept."""
    space = space or SearchSpace()
    alphas = space.alphas if alphas is None else np.atleast_1d(np.asarray(alphas, dtype=float))
    gammas = space.gammas if gammas is None else np.atleast_1d(np.asarray(gammas, dtype=float))
    res = _columns(T, q, sigma_x2, alphas, gammas, space, nodes, _workers(workers))
    if res is None:
        raise UnphysicalParameters(f"no physical state at T={T}, sigma_x2={sigma_x2}")
    ch, ns, sweeps = res
    shape = (gammas.size, alphas.size)
    out = {k: np.empty(shape) for k in ("p_ta", "p_fa", "ser", "skr")}
    for gi, n in enumerate(ns):
        sw = sweeps[int(n)]
        out["p_ta"][gi], out["p_fa"][gi] = sw.p_ta_av, sw.p_fa_av
        out["ser"][gi], out["skr"][gi] = sw.ser_av, sw.skr
    return Landscape(T, q, sigma_x2, ch.excess_noise, alphas, gammas, ns, **out)


@dataclass
class Optimum:
    """Best parameters found and the full-accuracy prediction there."""

    T: float
    q: int
    alpha: float
    gamma: float
    sigma_x2: float
    xi: float
    n: int
    rate: RatePrediction
    grid_best_skr: float
    evaluated: int
    all_negative: bool
    history: list = field(default_factory=list, repr=False)

    @property
    def skr(self) -> float:
        return self.rate.skr

    def summary(self) -> dict:
        return {"T": self.T, "q": self.q, "alpha": self.alpha, "gamma": self.gamma,
                "sigma_x2": self.sigma_x2, "xi": self.xi, "n": self.n, "skr": self.skr,
                "grid_best_skr": self.grid_best_skr, "evaluated_cells": self.evaluated,
                "all_negative": self.all_negative, "rate": self.rate.as_dict()}

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _key(skr, alpha, gamma, sigma_x2):
    # total order: larger skr first, then lexicographically smaller params
    return (-skr, alpha, gamma, sigma_x2)


def _scan(T, q, sigmas, space, workers, history):
    alphas, gammas = space.alphas, space.gammas
    best = None
    count = 0
    for s2 in sigmas:
        res = _columns(T, q, float(s2), alphas, gammas, space, space.scan_nodes, workers)
        if res is None:
            continue
        _, ns, sweeps = res
        for gi, n in enumerate(ns):
            skr = sweeps[int(n)].skr
            count += skr.size
            ai = int(np.argmax(skr))
            history.append((float(s2), float(gammas[gi]), float(skr[ai])))
            k = _key(float(skr[ai]), float(alphas[ai]), float(gammas[gi]), float(s2))
            if best is None or k < best:
                best = k
    return best, count


def _predict(T, q, alpha, gamma, sigma_x2, space, nodes=DEFAULT_NODES):
    ch, mod = space.channel(T, sigma_x2)
    params = SchemeParams(q, gamma, alpha, threshold_rule=space.threshold_rule,
                          ser_average=space.ser_average)
    return secret_key_ratio(params, ch, mod, nodes), ch


def optimize(T: float, q: int, space: SearchSpace | None = None,
             workers: int | None = None) -> Optimum:
    """Maximize the analytic key rate over ``space`` at fixed (T, q).

    If every evaluated point is negative the best (least negative) point is
    returned with ``all_negative`` set.
    """
    space = space or SearchSpace()
    nworkers = _workers(workers)
    lattice = space.sigma_x2_grid(T)
    history: list = []
    stride = space.coarse_stride
    coarse = lattice[::stride]
    best, count = _scan(T, q, coarse, space, nworkers, history)
    if best is None:
        raise UnphysicalParameters("no physical point in the search space")
    i = int(np.argmin(np.abs(np.log(lattice / best[3]))))
    fine = [s for j, s in enumerate(lattice[max(0, i - stride):i + stride + 1])
            if (max(0, i - stride) + j) % stride != 0]
    if fine:
        b2, c2 = _scan(T, q, fine, space, nworkers, history)
        count += c2
        if b2 is not None and b2 < best:
            best = b2
    grid_best = -best[0]
    alpha, gamma, s2 = best[1], best[2], best[3]
    rate, ch = _predict(T, q, alpha, gamma, s2, space)

    if space.refine:
        a_step, g_step = space.alpha_range[2], space.gamma_range[2]
        l_step = 1.0 / (space.sigma_x2_range or (0, 0, space.sigma_points_per_decade))[2]

        box = np.array([space.alpha_range[:2], space.gamma_range[:2],
                        np.log10(lattice[[0, -1]])])

        def obj(v):
            # the polish stays inside the searched box
            if np.any(v < box[:, 0] - 1e-12) or np.any(v > box[:, 1] + 1e-12):
                return math.inf
            try:
                r, _ = _predict(T, q, float(v[0]), float(v[1]), 10.0 ** float(v[2]), space)
            except (ValueError, UnphysicalParameters):
                return math.inf
            return -r.skr

        x0 = np.array([alpha, gamma, math.log10(s2)])
        # step each vertex inwards so the initial simplex lies inside the box
        steps = np.array([a_step, g_step, l_step])
        steps = np.where(x0 + steps > box[:, 1], -steps, steps)
        simplex = np.vstack([x0, x0 + np.diag(steps)])
        res = minimize(obj, x0, method="Nelder-Mead",
                       options={"initial_simplex": simplex, "fatol": 1e-4 * abs(rate.skr) + 1e-15,
                                "xatol": 1e-4, "maxiter": 200})
        if np.isfinite(res.fun) and -res.fun > rate.skr:
            alpha, gamma, s2 = float(res.x[0]), float(res.x[1]), float(10.0 ** res.x[2])
            rate, ch = _predict(T, q, alpha, gamma, s2, space)

    return Optimum(T, q, alpha, gamma, s2, ch.excess_noise, rate.n, rate, grid_best, count,
                   rate.skr < 0 and grid_best < 0, history)


@dataclass(frozen=True)
class SweepRow:
    distance_km: float
    T: float
    skr_opt: float
    plob_cv: float
    max_dw: float
    alpha: float
    gamma: float
    sigma_x2: float
    n: int
    p_ta: float
    p_fa: float
    ser: float
    negative: bool


def distance_sweep(distances_km, q: int, space: SearchSpace | None = None,
                   workers: int | None = None) -> list[SweepRow]:
    """Optimized key rate and the two reference bounds at each distance."""
    rows = []
    for d in distances_km:
        T = distance_to_transmission(float(d))
        opt = optimize(T, q, space, workers)
        r = opt.rate
        rows.append(SweepRow(float(d), T, opt.skr, plob_cv(T), max_dw(T), opt.alpha, opt.gamma,
                             opt.sigma_x2, opt.n, r.p_ta_av, r.p_fa_av, r.ser_av, opt.all_negative))
    return rows


def sweep_to_csv(rows) -> str:
    return rows_to_csv((asdict(r) for r in rows), SWEEP_COLUMNS)
