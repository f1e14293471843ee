"""Gaussian channel model, information quantities and reference bounds.

Units: quadrature variances are in shot-noise units where the vacuum
variance is 1/2.  The excess noise ``xi`` contributes ``T * xi / 2`` to the
variance seen by Bob.  All information quantities are in bits per symbol
(per channel use).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .numerics import thermal_entropy_g

LOG2E = 1.0 / math.log(2.0)
FIBER_LOSS_DB_PER_KM = 0.22
DEFAULT_XI_FRACTION = 0.01
# symplectic eigenvalues^2 below 1 - this are a parameter error, not rounding
_NU_UNPHYSICAL = 1e-9


class UnphysicalParameters(ValueError):
    """Raised when the covariance data yield a symplectic eigenvalue < 1."""


@dataclass(frozen=True)
class ChannelParams:
    transmission: float
    excess_noise: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.transmission <= 1.0:
            raise ValueError(f"transmission must lie in (0, 1], got {self.transmission}")
        if self.excess_noise < 0.0:
            raise ValueError(f"excess_noise must be >= 0, got {self.excess_noise}")


@dataclass(frozen=True)
class ModulationParams:
    sigma_x2: float

    def __post_init__(self):
        if not self.sigma_x2 > 0.0:
            raise ValueError(f"sigma_x2 must be positive, got {self.sigma_x2}")


@dataclass(frozen=True)
class DerivedVariances:
    sigma_y2: float
    sigma_y_given_x2: float

    @property
    def sigma_y(self) -> float:
        return math.sqrt(self.sigma_y2)

    @property
    def sigma_y_given_x(self) -> float:
        return math.sqrt(self.sigma_y_given_x2)


@dataclass(frozen=True)
class LeakageDecomposition:
    V: float
    Delta: float
    D: float
    nu1: float
    nu2: float
    nu3: float
    leakage_bits: float


def default_excess_noise(sigma_x2: float) -> float:
    """Phase-noise model: excess noise proportional to the modulation."""
    return DEFAULT_XI_FRACTION * sigma_x2


def operating_point(T: float, sigma_x2: float, xi: float | None = None):
    """Build ``(ChannelParams, ModulationParams)``; ``xi=None`` applies the
    default ``0.01 * sigma_x2`` rule."""
    if xi is None:
        xi = default_excess_noise(sigma_x2)
    return ChannelParams(T, xi), ModulationParams(sigma_x2)


def derived_variances(ch: ChannelParams, mod: ModulationParams) -> DerivedVariances:
    noise = 0.5 + 0.5 * ch.transmission * ch.excess_noise
    return DerivedVariances(ch.transmission * mod.sigma_x2 + noise, noise)


def mutual_info_xy(ch: ChannelParams, mod: ModulationParams) -> float:
    """I(X;Y) = 1/2 log2(1 + T sigma_X^2 / sigma_{Y|X}^2)."""
    v = derived_variances(ch, mod)
    return 0.5 * math.log1p(ch.transmission * mod.sigma_x2 / v.sigma_y_given_x2) * LOG2E


def _nu(nu2: float, name: str) -> float:
    if nu2 < 1.0 - _NU_UNPHYSICAL:
        raise UnphysicalParameters(f"symplectic eigenvalue {name}^2 = {nu2!r} < 1")
    if nu2 < 1.0:
        # within [1 - 1e-9, 1): treat as vacuum
        return 1.0
    return math.sqrt(nu2)


def leakage_ey(ch: ChannelParams, mod: ModulationParams) -> LeakageDecomposition:
    """Holevo information I(Y;E) for reverse reconciliation with homodyne
    detection, from the symplectic spectrum of Eve's state.

    nu1, nu2 come from Eve's pre-measurement state and nu3 from the
    conditional state after Bob's homodyne outcome.  Delta, sqrt(D) and the
    discriminant Delta^2 - 4D are expanded into sums of nonnegative terms,
    and nu2^2 is taken as D / nu1^2, so no step cancels when both
    eigenvalues approach 1 or the modulation is large.
    """
    T = ch.transmission
    V = 1.0 + 2.0 * mod.sigma_x2
    sy2_2 = 2.0 * derived_variances(ch, mod).sigma_y2
    u = 1.0 - T + T * ch.excess_noise
    # sqrt(D) = V sy2_2 - T (V^2 - 1)
    det_root = V * u + T
    D = det_root * det_root
    # Delta - 2 sqrt(D) = (V - sy2_2)^2 and Delta + 2 sqrt(D) = (V + sy2_2)^2 - 4 T (V^2 - 1)
    gap = (1.0 - T) * (V - 1.0) - T * ch.excess_noise
    Delta = gap * gap + 2.0 * det_root
    disc = gap * gap * (V * V * (1.0 - T) ** 2 + 2.0 * V * (1.0 + T) * u + u * u + 4.0 * T)
    nu1_2 = 0.5 * (Delta + math.sqrt(disc))
    nu2_2 = D / nu1_2
    nu3_2 = V * det_root / sy2_2
    nu1, nu2, nu3 = _nu(nu1_2, "nu1"), _nu(nu2_2, "nu2"), _nu(nu3_2, "nu3")
    leak = (thermal_entropy_g((nu1 - 1.0) / 2.0) + thermal_entropy_g((nu2 - 1.0) / 2.0)
            - thermal_entropy_g((nu3 - 1.0) / 2.0))
    return LeakageDecomposition(V, Delta, D, nu1, nu2, nu3, max(float(leak), 0.0))


def devetak_winter(ch: ChannelParams, mod: ModulationParams) -> float:
    """One-way reverse-reconciliation rate I(X;Y) - I(Y;E); may be negative."""
    return mutual_info_xy(ch, mod) - leakage_ey(ch, mod).leakage_bits


def max_dw(T: float, log10_range=(-4.0, 8.0), xtol: float = 1e-6) -> float:
    """Largest Devetak-Winter value over the modulation variance at xi = 0.

    Bounded Brent search over log10(sigma_X^2) (the objective is unimodal),
    cross-checked against a coarse scan of the same interval.  At xi = 0 the
    objective keeps rising towards its supremum -log2(1 - T) / 2, so the
    result is the value at the top of ``log10_range`` to within ``xtol``.
    """
    if not 0.0 < T <= 1.0:
        raise ValueError(f"T must lie in (0, 1], got {T}")
    ch = ChannelParams(T, 0.0)
    lo, hi = log10_range

    def neg(lx):
        return -devetak_winter(ch, ModulationParams(10.0 ** lx))

    res = minimize_scalar(neg, bracket=None, bounds=(lo, hi), method="bounded",
                          options={"xatol": xtol})
    best = -res.fun
    # bounded Brent can stop on a shelf; compare against a coarse scan
    grid = np.linspace(lo, hi, 121)
    vals = np.array([-neg(g) for g in grid])
    i = int(np.argmax(vals))
    if vals[i] > best:
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        res = minimize_scalar(neg, bounds=(a, b), method="bounded", options={"xatol": xtol})
        best = max(-res.fun, vals[i])
    return float(best)


def plob_cv(T: float) -> float:
    """Repeaterless bound -log2(1 - T) in bits per channel use."""
    if not 0.0 < T <= 1.0:
        raise ValueError(f"T must lie in (0, 1], got {T}")
    if T == 1.0:
        return math.inf
    return -math.log1p(-T) * LOG2E


def f_beta(beta: float, x):
    """f_beta(x) = 2x [beta - x ln(1 + 1/x)].

    For small T, beta I(X;Y) - I(Y;E) ~ T log2(e) f_beta(sigma_X^2) / 2.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("f_beta needs x > 0")
    out = 2.0 * x * (beta - x * np.log1p(1.0 / x))
    return out.item() if out.ndim == 0 else out


def f_beta_max(beta: float, log10_range=(-4.0, 8.0)) -> tuple[float, float]:
    """Return ``(argmax_x f_beta(x), max_x f_beta(x))``.

    For beta >= 1 the supremum is approached as x -> infinity; the returned
    argmax is then the top of the search range.
    """
    lo, hi = log10_range
    res = minimize_scalar(lambda lx: -f_beta(beta, 10.0 ** lx), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-10})
    return float(10.0 ** res.x), float(-res.fun)


def distance_to_transmission(d_km: float, loss_db_per_km: float = FIBER_LOSS_DB_PER_KM) -> float:
    if d_km < 0:
        raise ValueError("distance must be nonnegative")
    return 10.0 ** (-loss_db_per_km * d_km / 10.0)
