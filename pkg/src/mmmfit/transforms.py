"""Carryover (adstock) and Weibull saturation transforms for media series.

The carryover transform turns a raw weekly activity series into an effective
series by adding geometrically decayed contributions from the previous
``ell - 1`` weeks; the Weibull CDF then maps effective levels into [0, 1) to
capture diminishing returns.  The first ``ell - 1`` weeks have incomplete
carryover windows and are dropped: all outputs cover weeks ``ell..w`` only.

Analytic partial derivatives of both transforms are provided so that
likelihood gradients never fall back to finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

__all__ = [
    "AdstockParams",
    "SaturationParams",
    "adstock",
    "adstock_dalpha",
    "weibull_cdf",
    "weibull_dx",
    "weibull_dk",
    "weibull_dlambda",
    "response",
]


@dataclass(frozen=True)
class AdstockParams:
    """Geometric carryover: decay rate ``alpha`` and window length ``ell``."""

    alpha: float
    ell: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha < 1.0):
            raise DomainError(f"decay rate must be in [0, 1), got {self.alpha}")
        if int(self.ell) != self.ell or self.ell < 1:
            raise DomainError(f"carryover window must be a positive integer, got {self.ell}")


@dataclass(frozen=True)
class SaturationParams:
    """Weibull CDF saturation: shape ``k`` and scale ``lam``."""

    k: float
    lam: float

    def __post_init__(self) -> None:
        if not self.k > 0.0:
            raise DomainError(f"shape parameter must be positive, got {self.k}")
        if not self.lam > 0.0:
            raise DomainError(f"scale parameter must be positive, got {self.lam}")


def _check_series(x: np.ndarray, ell: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError(f"expected a 1-D series, got shape {x.shape}")
    if x.size < ell:
        raise DimensionError(f"series has {x.size} entries, shorter than window {ell}")
    if not np.all(np.isfinite(x)):
        raise DomainError("series contains non-finite entries")
    return x


def _windows(x: np.ndarray, ell: int) -> np.ndarray:
    # rows t = ell..w; column u holds x[t - ell + 1 + u], so lag tau = ell-1-u
    return np.lib.stride_tricks.sliding_window_view(x, ell)


def adstock_weights(alpha: float, ell: int) -> np.ndarray:
    """Window weights ordered oldest-to-newest: alpha^(ell-1), ..., alpha, 1."""
    taus = np.arange(ell - 1, -1, -1, dtype=float)
    with np.errstate(over="raise"):
        return np.power(float(alpha), taus)


def adstock_dalpha_weights(alpha: float, ell: int) -> np.ndarray:
    """d/d(alpha) of :func:`adstock_weights`, same ordering."""
    taus = np.arange(ell - 1, -1, -1, dtype=float)
    out = np.zeros(ell)
    lagged = taus >= 1
    out[lagged] = taus[lagged] * np.power(float(alpha), taus[lagged] - 1.0)
    return out


def adstock(x: np.ndarray, p: AdstockParams) -> np.ndarray:
    """Effective activity c[t] = sum_{tau=0}^{ell-1} alpha^tau x[t-tau], t = ell..w.

    The output has length ``len(x) - ell + 1``; weeks with incomplete
    carryover windows are dropped rather than zero-padded.
    """
    x = _check_series(x, p.ell)
    return _windows(x, p.ell) @ adstock_weights(p.alpha, p.ell)


def adstock_dalpha(x: np.ndarray, p: AdstockParams) -> np.ndarray:
    """Partial derivative of :func:`adstock` with respect to the decay rate."""
    x = _check_series(x, p.ell)
    return _windows(x, p.ell) @ adstock_dalpha_weights(p.alpha, p.ell)


def weibull_cdf(x, p: SaturationParams):
    """Saturation value 1 - exp(-(x / lam)^k), in [0, 1) for finite x >= 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("saturation input must be nonnegative")
    return -np.expm1(-np.power(x / p.lam, p.k))


def weibull_dx(x, p: SaturationParams):
    """d/dx of the Weibull CDF; defined as 0 at x = 0 (see note).

    For k < 1 the mathematical limit at x = 0 is +inf; the 0 convention is
    safe because in every composite gradient the factor multiplying it also
    vanishes whenever the effective level is exactly 0.
    """
    x = np.asarray(x, dtype=float)
    pos = x > 0
    safe = np.where(pos, x, 1.0) / p.lam
    u = np.power(safe, p.k)
    return np.where(pos, np.exp(-u) * p.k / p.lam * np.power(safe, p.k - 1.0), 0.0)


def weibull_dk(x, p: SaturationParams):
    """d/dk of the Weibull CDF; the x = 0 value is the limit, 0."""
    x = np.asarray(x, dtype=float)
    pos = x > 0
    safe = np.where(pos, x, 1.0) / p.lam
    u = np.power(safe, p.k)
    return np.where(pos, np.exp(-u) * u * np.log(safe), 0.0)


def weibull_dlambda(x, p: SaturationParams):
    """d/dlam of the Weibull CDF: -k u exp(-u) / lam with u = (x/lam)^k."""
    x = np.asarray(x, dtype=float)
    u = np.power(x / p.lam, p.k)
    return -p.k / p.lam * u * np.exp(-u)


def response(x: np.ndarray, beta: float, a: AdstockParams, s: SaturationParams) -> np.ndarray:
    """Composite media response beta * s(c(x)) over weeks ell..w."""
    return beta * weibull_cdf(adstock(x, a), s)
