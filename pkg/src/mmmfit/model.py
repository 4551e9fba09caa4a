"""Model specification, panel data container, and the flat parameter layout.

The flat packing order is fixed and shared by the optimizer, the sampler and
every on-disk artifact so that draws are replayable:

    alpha_1..m | k_1..m | lambda_1..m | beta_1..m | gamma_1..n
    | eta2_1..m | xi2_1..n | beta_i_v (i-major) | gamma_j_v (j-major)   [hierarchical only]
    | sigma2

Random-coefficient blocks are flattened in C order over (variable, region),
e.g. ``beta_1_1, beta_1_2, beta_2_1, beta_2_2`` for m = 2, g = 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .errors import DimensionError, DomainError, StructuralError

if TYPE_CHECKING:  # pragma: no cover - typing only, avoids an import cycle
    from .posterior import PriorConfig

__all__ = [
    "ModelSpec",
    "PanelDataset",
    "ParameterVector",
    "ParamEntry",
    "layout",
    "param_names",
    "pack",
    "unpack",
    "predict",
]


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of the regression model.

    ``n`` counts all nuisance columns including an intercept column of ones,
    if present.  Sign-constraint sets hold 1-based variable indices.
    """

    m: int
    n: int
    g: int = 1
    ell: int = 5
    sign_constrained_beta: frozenset[int] = field(default_factory=frozenset)
    sign_constrained_gamma: frozenset[int] = field(default_factory=frozenset)
    hierarchical: bool = False
    prior_config: Optional["PriorConfig"] = None

    def __post_init__(self) -> None:
        if self.m < 1:
            raise DomainError(f"need at least one media variable, got m={self.m}")
        if self.n < 0:
            raise DomainError(f"nuisance count must be nonnegative, got n={self.n}")
        if self.g < 1:
            raise DomainError(f"region count must be positive, got g={self.g}")
        if self.ell < 1:
            raise DomainError(f"carryover window must be positive, got ell={self.ell}")
        object.__setattr__(self, "sign_constrained_beta", frozenset(self.sign_constrained_beta))
        object.__setattr__(self, "sign_constrained_gamma", frozenset(self.sign_constrained_gamma))
        if any(i < 1 or i > self.m for i in self.sign_constrained_beta):
            raise DomainError("sign_constrained_beta indices must lie in 1..m")
        if any(j < 1 or j > self.n for j in self.sign_constrained_gamma):
            raise DomainError("sign_constrained_gamma indices must lie in 1..n")
        if self.hierarchical and self.g < 2:
            raise DomainError("hierarchical model requires at least two regions")

    @property
    def fit_weeks(self) -> slice:
        """Row slice selecting the fit window t = ell..w (0-indexed)."""
        return slice(self.ell - 1, None)

    def beta_constrained_mask(self) -> np.ndarray:
        return np.array([i + 1 in self.sign_constrained_beta for i in range(self.m)])

    def gamma_constrained_mask(self) -> np.ndarray:
        return np.array([j + 1 in self.sign_constrained_gamma for j in range(self.n)])


@dataclass(frozen=True)
class PanelDataset:
    """Rectangular region-by-week panel of response, media and nuisance data.

    Arrays are week-major: ``y[t, v]``, ``x[t, i, v]``, ``z[t, j, v]`` with
    t = 0..w-1 (week index), i media, j nuisance, v region.  Arrays are
    frozen after construction.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    regions: tuple[str, ...]

    def __post_init__(self) -> None:
        y = np.ascontiguousarray(np.asarray(self.y, dtype=float))
        x = np.ascontiguousarray(np.asarray(self.x, dtype=float))
        z = np.ascontiguousarray(np.asarray(self.z, dtype=float))
        if y.ndim != 2 or x.ndim != 3 or z.ndim != 3:
            raise DimensionError(
                f"expected y (w,g), x (w,m,g), z (w,n,g); got {y.shape}, {x.shape}, {z.shape}"
            )
        w, g = y.shape
        if x.shape[0] != w or x.shape[2] != g or z.shape[0] != w or z.shape[2] != g:
            raise DimensionError(
                f"panel blocks disagree on weeks/regions: y {y.shape}, x {x.shape}, z {z.shape}"
            )
        if len(self.regions) != g:
            raise DimensionError(f"{len(self.regions)} region labels for {g} regions")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise DomainError("panel contains non-finite values")
        if np.any(x < 0):
            raise DomainError("media activity levels must be nonnegative")
        for arr in (y, x, z):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "regions", tuple(str(r) for r in self.regions))

    @property
    def w(self) -> int:
        return self.y.shape[0]

    @property
    def g(self) -> int:
        return self.y.shape[1]

    @property
    def m(self) -> int:
        return self.x.shape[1]

    @property
    def n(self) -> int:
        return self.z.shape[1]

    def check_spec(self, spec: ModelSpec) -> None:
        if (self.m, self.n, self.g) != (spec.m, spec.n, spec.g):
            raise StructuralError(
                f"dataset has (m,n,g)=({self.m},{self.n},{self.g}) "
                f"but spec declares ({spec.m},{spec.n},{spec.g})"
            )
        if self.w < spec.ell:
            raise DimensionError(f"panel has {self.w} weeks, shorter than window {spec.ell}")


@dataclass
class ParameterVector:
    """Structured view of all unknowns; see module docstring for flat order.

    Hierarchical blocks (``eta2``, ``xi2``, ``beta_r``, ``gamma_r``) are None
    for the base model.  ``beta_r`` has shape (m, g) and ``gamma_r`` (n, g).
    """

    alpha: np.ndarray
    k: np.ndarray
    lam: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    sigma2: float
    eta2: Optional[np.ndarray] = None
    xi2: Optional[np.ndarray] = None
    beta_r: Optional[np.ndarray] = None
    gamma_r: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        for name in ("alpha", "k", "lam", "beta", "gamma"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("eta2", "xi2"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.atleast_1d(np.asarray(v, dtype=float)))
        for name in ("beta_r", "gamma_r"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float))
        self.sigma2 = float(self.sigma2)

    @property
    def hierarchical(self) -> bool:
        return self.beta_r is not None

    def copy(self) -> "ParameterVector":
        return ParameterVector(
            alpha=self.alpha.copy(),
            k=self.k.copy(),
            lam=self.lam.copy(),
            beta=self.beta.copy(),
            gamma=self.gamma.copy(),
            sigma2=self.sigma2,
            eta2=None if self.eta2 is None else self.eta2.copy(),
            xi2=None if self.xi2 is None else self.xi2.copy(),
            beta_r=None if self.beta_r is None else self.beta_r.copy(),
            gamma_r=None if self.gamma_r is None else self.gamma_r.copy(),
        )

    def validate(self, spec: ModelSpec) -> None:
        """Raise unless every invariant of the parameter space holds."""
        self._check_shapes(spec)
        if np.any(self.alpha < 0) or np.any(self.alpha >= 1):
            raise DomainError("decay rates must lie in [0, 1)")
        if np.any(self.k <= 0) or np.any(self.lam <= 0):
            raise DomainError("shape and scale parameters must be positive")
        if self.sigma2 <= 0:
            raise DomainError("residual variance must be positive")
        bmask = spec.beta_constrained_mask()
        gmask = spec.gamma_constrained_mask()
        if np.any(self.beta[bmask] < 0) or np.any(self.gamma[gmask] < 0):
            raise DomainError("sign-constrained coefficients must be nonnegative")
        if spec.hierarchical:
            if np.any(self.eta2 <= 0) or np.any(self.xi2 <= 0):
                raise DomainError("random-effect variances must be positive")
            if np.any(self.beta_r[bmask, :] < 0) or np.any(self.gamma_r[gmask, :] < 0):
                raise DomainError("sign-constrained random coefficients must be nonnegative")

    def _check_shapes(self, spec: ModelSpec) -> None:
        ok = (
            self.alpha.shape == (spec.m,)
            and self.k.shape == (spec.m,)
            and self.lam.shape == (spec.m,)
            and self.beta.shape == (spec.m,)
            and self.gamma.shape == (spec.n,)
        )
        if spec.hierarchical:
            ok = ok and (
                self.eta2 is not None
                and self.xi2 is not None
                and self.beta_r is not None
                and self.gamma_r is not None
                and self.eta2.shape == (spec.m,)
                and self.xi2.shape == (spec.n,)
                and self.beta_r.shape == (spec.m, spec.g)
                and self.gamma_r.shape == (spec.n, spec.g)
            )
        else:
            ok = ok and self.eta2 is None and self.beta_r is None
        if not ok:
            raise StructuralError("parameter blocks do not match the model spec")

    def as_dict(self, spec: ModelSpec) -> dict[str, float]:
        """Name -> value mapping in flat packing order."""
        return dict(zip(param_names(spec), pack(self, spec)))


@dataclass(frozen=True)
class ParamEntry:
    """Per-coordinate metadata of the flat layout."""

    name: str
    lower: float
    upper: float
    reparam: str  # 'identity' | 'logit' | 'log'
    strict_lower: bool  # density undefined at the lower bound
    sign_constrained: bool  # nonnegativity from an H-set membership


@lru_cache(maxsize=None)
def layout(spec: ModelSpec) -> tuple[ParamEntry, ...]:
    """Ordered per-coordinate metadata; the single source of the flat order."""
    m, n, g = spec.m, spec.n, spec.g
    inf = float("inf")
    entries: list[ParamEntry] = []
    for i in range(m):
        entries.append(ParamEntry(f"alpha_{i + 1}", 0.0, 1.0, "logit", False, False))
    for i in range(m):
        entries.append(ParamEntry(f"k_{i + 1}", 0.0, inf, "identity", True, False))
    for i in range(m):
        entries.append(ParamEntry(f"lambda_{i + 1}", 0.0, inf, "identity", True, False))
    bmask = spec.beta_constrained_mask()
    gmask = spec.gamma_constrained_mask()
    for i in range(m):
        lo = 0.0 if bmask[i] else -inf
        entries.append(ParamEntry(f"beta_{i + 1}", lo, inf, "identity", False, bool(bmask[i])))
    for j in range(n):
        lo = 0.0 if gmask[j] else -inf
        entries.append(ParamEntry(f"gamma_{j + 1}", lo, inf, "identity", False, bool(gmask[j])))
    if spec.hierarchical:
        for i in range(m):
            entries.append(ParamEntry(f"eta2_{i + 1}", 0.0, inf, "identity", True, False))
        for j in range(n):
            entries.append(ParamEntry(f"xi2_{j + 1}", 0.0, inf, "identity", True, False))
        for i in range(m):
            for v in range(g):
                lo = 0.0 if bmask[i] else -inf
                entries.append(
                    ParamEntry(f"beta_{i + 1}_{v + 1}", lo, inf, "identity", False, bool(bmask[i]))
                )
        for j in range(n):
            for v in range(g):
                lo = 0.0 if gmask[j] else -inf
                entries.append(
                    ParamEntry(f"gamma_{j + 1}_{v + 1}", lo, inf, "identity", False, bool(gmask[j]))
                )
    entries.append(ParamEntry("sigma2", 0.0, inf, "identity", True, False))
    return tuple(entries)


def param_names(spec: ModelSpec) -> list[str]:
    return [e.name for e in layout(spec)]


def flat_length(spec: ModelSpec) -> int:
    return len(layout(spec))


def pack(theta: ParameterVector, spec: ModelSpec) -> np.ndarray:
    """Flatten structured parameters; inverse of :func:`unpack`."""
    theta._check_shapes(spec)
    parts = [theta.alpha, theta.k, theta.lam, theta.beta, theta.gamma]
    if spec.hierarchical:
        parts += [theta.eta2, theta.xi2, theta.beta_r.ravel(), theta.gamma_r.ravel()]
    parts.append(np.array([theta.sigma2]))
    return np.concatenate(parts)


def unpack(vec: np.ndarray, spec: ModelSpec) -> ParameterVector:
    """Rebuild structured parameters from a flat vector."""
    vec = np.asarray(vec, dtype=float)
    m, n, g = spec.m, spec.n, spec.g
    if vec.shape != (flat_length(spec),):
        raise StructuralError(f"flat vector has shape {vec.shape}, expected ({flat_length(spec)},)")
    pos = 0

    def take(count: int) -> np.ndarray:
        nonlocal pos
        out = vec[pos : pos + count].copy()
        pos += count
        return out

    alpha, k, lam, beta = take(m), take(m), take(m), take(m)
    gamma = take(n)
    eta2 = xi2 = beta_r = gamma_r = None
    if spec.hierarchical:
        eta2, xi2 = take(m), take(n)
        beta_r = take(m * g).reshape(m, g)
        gamma_r = take(n * g).reshape(n, g)
    sigma2 = float(take(1)[0])
    return ParameterVector(
        alpha=alpha, k=k, lam=lam, beta=beta, gamma=gamma,
        sigma2=sigma2, eta2=eta2, xi2=xi2, beta_r=beta_r, gamma_r=gamma_r,
    )


def media_windows(data: PanelDataset, ell: int) -> np.ndarray:
    """Sliding media windows, shape (T, m, g, ell) with T = w - ell + 1.

    Column u of the window axis holds the activity ``ell - 1 - u`` weeks ago,
    so the adstock value is the dot product with oldest-first decay weights.
    """
    if data.w < ell:
        raise DimensionError(f"panel has {data.w} weeks, shorter than window {ell}")
    return np.lib.stride_tricks.sliding_window_view(data.x, ell, axis=0)


def adstock_panel(data: PanelDataset, alpha: np.ndarray, ell: int) -> np.ndarray:
    """Adstocked media, shape (T, m, g), for per-media decay rates."""
    windows = media_windows(data, ell)
    taus = np.arange(ell - 1, -1, -1, dtype=float)
    powers = np.power(np.asarray(alpha, dtype=float)[:, None], taus[None, :])  # (m, ell)
    return np.einsum("tmgl,ml->tmg", windows, powers)


def predict(
    theta: ParameterVector,
    data: PanelDataset,
    spec: ModelSpec,
    fixed_effects_only: bool = False,
) -> np.ndarray:
    """Deterministic fitted values for weeks ell..w, shape (T, g).

    Hierarchical models use the per-region random coefficients; with
    ``fixed_effects_only`` the shared fixed means are used for every region
    instead (the numerator convention of the marginal R-squared).
    """
    data.check_spec(spec)
    theta.validate(spec)
    c = adstock_panel(data, theta.alpha, spec.ell)  # (T, m, g)
    u = np.power(c / theta.lam[None, :, None], theta.k[None, :, None])
    s = -np.expm1(-u)
    if spec.hierarchical and not fixed_effects_only:
        b = theta.beta_r
        gm = theta.gamma_r
    else:
        b = np.broadcast_to(theta.beta[:, None], (spec.m, spec.g))
        gm = np.broadcast_to(theta.gamma[:, None], (spec.n, spec.g))
    zf = data.z[spec.fit_weeks]
    return np.einsum("tmg,mg->tg", s, b) + np.einsum("tng,ng->tg", zf, gm)
