"""The two-stage industry baseline: grid-search decay rates, then OLS.

Stage one regresses the response on the non-adstock variables alone and
keeps the residuals.  Stage two, independently per media variable, picks the
candidate decay rate whose adstocked series correlates most with those
residuals (raw signed correlation; ties go to the smallest candidate).  Stage
three refits a single OLS of the response on the chosen adstocked media plus
the nuisance variables and reports the coefficients together with
sign-violation flags.  No sign-correction heuristics are applied: surfacing
the violations is the point.

Multi-region panels are pooled with per-region intercept dummies replacing
any constant nuisance columns; the result records that pooling happened.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CollinearityError, DomainError
from .model import ModelSpec, PanelDataset
from .transforms import AdstockParams, adstock

__all__ = ["AdhocConfig", "AdhocResult", "fit_adhoc", "ols"]

DEFAULT_ALPHA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass(frozen=True)
class AdhocConfig:
    """Candidate decay rates and, optionally, an override carryover window."""

    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    ell: Optional[int] = None  # None: take the window from the model spec

    def __post_init__(self) -> None:
        if not self.alpha_grid:
            raise DomainError("decay-rate grid must be nonempty")
        if any(not (0.0 <= a < 1.0) for a in self.alpha_grid):
            raise DomainError("decay-rate candidates must lie in [0, 1)")


@dataclass
class AdhocResult:
    """Chosen decay rates, final OLS fit, and sign-violation flags."""

    chosen_alpha: dict[str, float]
    coefficients: dict[str, float]
    correlations: dict[str, dict[float, float]]  # media -> candidate -> r
    sign_violations: list[str]
    pooled_regions: bool
    residual_variance: float
    fitted: np.ndarray  # stacked over regions, fit window only


def ols(design: np.ndarray, y: np.ndarray, names: list[str]) -> np.ndarray:
    """Least-squares coefficients; singular designs raise with column names."""
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        # pivoted QR exposes the dependent columns
        from scipy.linalg import qr

        _, r, piv = qr(design, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        cutoff = diag[0] * max(design.shape) * np.finfo(float).eps if diag.size else 0.0
        dependent = [names[piv[i]] for i in range(len(diag)) if diag[i] <= cutoff]
        dependent += [names[p] for p in piv[len(diag):]]
        raise CollinearityError(f"design matrix is singular; dependent columns: {dependent}")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if denom == 0.0:
        return 0.0
    return float(np.sum(a * b) / denom)


def fit_adhoc(
    data: PanelDataset, spec: ModelSpec, config: Optional[AdhocConfig] = None
) -> AdhocResult:
    """Run the three-stage baseline on the fit window t = ell..w."""
    data.check_spec(spec)
    config = config or AdhocConfig()
    ell = config.ell if config.ell is not None else spec.ell
    if data.w < ell:
        raise DomainError(f"panel has {data.w} weeks, shorter than window {ell}")
    T = data.w - ell + 1
    g = data.g
    bmask = spec.beta_constrained_mask()
    gmask = spec.gamma_constrained_mask()

    # nuisance block, pooling regions with intercept dummies when g > 1
    zf = data.z[ell - 1:]  # (T, n, g)
    y_stack = data.y[ell - 1:].T.reshape(-1)  # region-major stacking
    nuis_cols: list[np.ndarray] = []
    nuis_names: list[str] = []
    nuis_constrained: list[bool] = []
    pooled = g > 1
    constant = [bool(np.all(zf[:, j, :] == zf[0, j, 0])) for j in range(spec.n)]
    for j in range(spec.n):
        if pooled and constant[j]:
            continue  # replaced by the region dummies below
        nuis_cols.append(zf[:, j, :].T.reshape(-1))
        nuis_names.append(f"z{j + 1}")
        nuis_constrained.append(bool(gmask[j]))
    if pooled:
        dummies_constrained = any(constant[j] and gmask[j] for j in range(spec.n))
        for v in range(g):
            col = np.zeros(T * g)
            col[v * T:(v + 1) * T] = 1.0
            nuis_cols.append(col)
            nuis_names.append(f"intercept_{data.regions[v]}")
            nuis_constrained.append(dummies_constrained)

    stage1 = np.column_stack(nuis_cols) if nuis_cols else np.empty((T * g, 0))
    if stage1.shape[1]:
        coef1 = ols(stage1, y_stack, nuis_names)
        residuals = y_stack - stage1 @ coef1
    else:
        residuals = y_stack.copy()

    # per-media decay search against the stage-one residuals
    chosen: dict[str, float] = {}
    corr_table: dict[str, dict[float, float]] = {}
    media_cols: list[np.ndarray] = []
    for i in range(spec.m):
        table: dict[float, float] = {}
        best_alpha = None
        best_r = -np.inf
        for a in config.alpha_grid:
            p = AdstockParams(alpha=float(a), ell=ell)
            series = np.concatenate([adstock(data.x[:, i, v], p) for v in range(g)])
            r = _pearson(series, residuals)
            table[float(a)] = r
            if r > best_r or (r == best_r and (best_alpha is None or a < best_alpha)):
                best_r = r
                best_alpha = float(a)
        name = f"x{i + 1}"
        chosen[name] = best_alpha
        corr_table[name] = table
        p = AdstockParams(alpha=best_alpha, ell=ell)
        media_cols.append(np.concatenate([adstock(data.x[:, i, v], p) for v in range(g)]))

    names = [f"x{i + 1}" for i in range(spec.m)] + nuis_names
    design = np.column_stack(media_cols + nuis_cols)
    coef = ols(design, y_stack, names)
    fitted = design @ coef
    resid = y_stack - fitted
    dof = max(1, len(y_stack) - design.shape[1])
    constrained = list(bmask) + nuis_constrained
    violations = [nm for nm, c, sc in zip(names, coef, constrained) if sc and c < 0]
    return AdhocResult(
        chosen_alpha=chosen,
        coefficients=dict(zip(names, (float(c) for c in coef))),
        correlations=corr_table,
        sign_violations=violations,
        pooled_regions=pooled,
        residual_variance=float(np.sum(resid * resid) / dof),
        fitted=fitted,
    )
