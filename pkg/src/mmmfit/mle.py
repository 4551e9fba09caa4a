"""Constrained maximum likelihood via projected limited-memory quasi-Newton.

The constrained log-likelihood (truncation scaling factors included) is
maximized inside a box: decay rates in [eps, 1 - eps], positive parameters in
[eps, inf), sign-constrained coefficients in [0, inf).  Each restart runs a
projected L-BFGS iteration: the quasi-Newton direction is line-searched along
the projection arc with an Armijo condition, so the objective trace is
monotone nondecreasing and every iterate stays feasible.  Restarts draw
initial points uniformly from the box intersected with a prior-informed
range, and the best restart wins with ties broken by restart index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, OptimizationError
from .model import ModelSpec, PanelDataset, ParameterVector, layout, unpack
from .posterior import PosteriorEvaluator, PriorConfig

__all__ = ["MleConfig", "RestartResult", "MleResult", "fit_mle"]

BOUND_EPS = 1e-6  # interior offset for open constraints such as alpha < 1


@dataclass(frozen=True)
class MleConfig:
    """Multistart settings for the bounded quasi-Newton solver."""

    restarts: int = 20
    max_iterations: int = 500
    grad_tol: float = 1e-6
    seed: int = 0
    memory: int = 10
    fixed: Optional[tuple[tuple[str, float], ...]] = None  # name -> clamped value

    def __post_init__(self) -> None:
        if self.restarts < 1:
            raise DomainError("need at least one restart")
        if self.max_iterations < 1:
            raise DomainError("need at least one iteration")
        if self.grad_tol <= 0:
            raise DomainError("gradient tolerance must be positive")

    def fixed_map(self) -> dict[str, float]:
        return dict(self.fixed or ())


@dataclass
class RestartResult:
    """Trace of one restart of the solver."""

    status: str  # 'converged' | 'max_iterations' | 'line_search_failed'
    loglik_trace: np.ndarray  # objective at each accepted iterate
    final_loglik: float
    final_projected_grad_norm: float
    iterations: int


@dataclass
class MleResult:
    """Best point over all restarts plus per-restart diagnostics."""

    theta: ParameterVector
    flat: np.ndarray
    loglik: float
    best_restart: int
    restarts: list[RestartResult] = field(default_factory=list)


def _box_bounds(spec: ModelSpec, fixed: dict[str, float]) -> tuple[np.ndarray, np.ndarray]:
    lower, upper = [], []
    for e in layout(spec):
        if e.name in fixed:
            lower.append(fixed[e.name])
            upper.append(fixed[e.name])
        elif e.reparam == "logit":  # decay rate
            lower.append(BOUND_EPS)
            upper.append(1.0 - BOUND_EPS)
        elif e.strict_lower:
            lower.append(BOUND_EPS)
            upper.append(np.inf)
        elif e.sign_constrained:
            lower.append(0.0)
            upper.append(np.inf)
        else:
            lower.append(-np.inf)
            upper.append(np.inf)
    return np.array(lower), np.array(upper)


def _init_ranges(spec: ModelSpec, priors: PriorConfig,
                 lower: np.ndarray, upper: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate sampling interval: box cut to prior mean +/- 2 prior sd."""
    los, his = [], []
    gamma_sd_k = np.sqrt(priors.k_shape) / priors.k_rate
    gamma_sd_l = np.sqrt(priors.lambda_shape) / priors.lambda_rate
    for e in layout(spec):
        name = e.name.split("_")[0]
        if name == "alpha":
            lo, hi = 0.5 - 2 * 0.12, 0.5 + 2 * 0.12  # logistic-normal spread
        elif name == "k":
            c = priors.k_shape / priors.k_rate
            lo, hi = c - 2 * gamma_sd_k, c + 2 * gamma_sd_k
        elif name == "lambda":
            c = priors.lambda_shape / priors.lambda_rate
            lo, hi = c - 2 * gamma_sd_l, c + 2 * gamma_sd_l
        elif name in ("beta", "gamma"):
            lo, hi = priors.coef_mean - 2 * priors.coef_sd, priors.coef_mean + 2 * priors.coef_sd
        elif name in ("eta2", "xi2"):
            lo, hi = priors.variance_mean - 2 * priors.variance_sd, \
                priors.variance_mean + 2 * priors.variance_sd
        else:  # sigma2
            lo, hi = 0.05, 2.0
        los.append(lo)
        his.append(hi)
    lo = np.maximum(np.array(los), lower)
    hi = np.minimum(np.array(his), upper)
    bad = ~(lo < hi)
    lo[bad] = lower[bad]
    hi[bad] = lower[bad]
    return lo, hi


def _two_loop(grad: np.ndarray, s_list: list[np.ndarray], y_list: list[np.ndarray]) -> np.ndarray:
    """Standard L-BFGS two-loop recursion for -H * grad (a descent direction)."""
    q = grad.copy()
    alphas = []
    rhos = [1.0 / float(np.dot(y, s)) for s, y in zip(s_list, y_list)]
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rhos)):
        a = rho * float(np.dot(s, q))
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= float(np.dot(s, y)) / float(np.dot(y, y))
    for (s, y, rho), a in zip(zip(s_list, y_list, rhos), reversed(alphas)):
        b = rho * float(np.dot(y, q))
        q += (a - b) * s
    return -q


def _minimize_box(fun_grad, x0, lower, upper, max_iter, tol, memory):
    """Projected L-BFGS with Armijo search along the projection arc.

    ``fun_grad`` returns (f, grad) of the function to minimize.  Returns the
    final point, the trace of accepted objective values, a status string, and
    the final projected gradient norm.
    """
    x = np.clip(x0, lower, upper)
    f, g = fun_grad(x)
    if not np.isfinite(f):
        return x, [f], "line_search_failed", np.inf
    trace = [f]
    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    status = "max_iterations"
    pg_norm = np.inf

    def search(d):
        """Backtrack along the projection arc; never accepts an ascent."""
        t = 1.0
        for _ in range(60):
            x_new = np.clip(x + t * d, lower, upper)
            step_vec = x_new - x
            if not np.any(step_vec):
                return None
            f_new, g_new = fun_grad(x_new)
            if (np.isfinite(f_new) and f_new <= f
                    and f_new <= f + 1e-4 * float(np.dot(g, step_vec))):
                return x_new, f_new, g_new
            t *= 0.5
        return None

    for _ in range(max_iter):
        pg_norm = float(np.max(np.abs(x - np.clip(x - g, lower, upper))))
        if pg_norm <= tol:
            status = "converged"
            break
        d = _two_loop(g, s_list, y_list)
        if float(np.dot(d, g)) > -1e-12 * float(np.linalg.norm(d)) * float(np.linalg.norm(g)):
            d = -g  # quasi-Newton direction unusable; steepest descent
            s_list, y_list = [], []
        hit = search(d)
        if hit is None and s_list:
            s_list, y_list = [], []  # retry once from a clean descent state
            hit = search(-g)
        if hit is None:
            status = "line_search_failed"
            break
        x_new, f_new, g_new = hit
        s = x_new - x
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_list.append(s)
            y_list.append(y)
            if len(s_list) > memory:
                s_list.pop(0)
                y_list.pop(0)
        x, f, g = x_new, f_new, g_new
        trace.append(f)
    else:
        pg_norm = float(np.max(np.abs(x - np.clip(x - g, lower, upper))))
        if pg_norm <= tol:
            status = "converged"
    return x, trace, status, pg_norm


def fit_mle(
    data: PanelDataset,
    spec: ModelSpec,
    config: Optional[MleConfig] = None,
    priors: Optional[PriorConfig] = None,
) -> MleResult:
    """Maximize the constrained log-likelihood with multistart.

    ``priors`` only shapes the initial-point sampling ranges; the objective
    itself is the pure likelihood.
    """
    config = config or MleConfig()
    evaluator = PosteriorEvaluator(data, spec, priors)
    priors = evaluator.priors
    fixed = config.fixed_map()
    names = {e.name for e in layout(spec)}
    unknown = set(fixed) - names
    if unknown:
        raise DomainError(f"fixed parameters not in the layout: {sorted(unknown)}")
    lower, upper = _box_bounds(spec, fixed)
    lo0, hi0 = _init_ranges(spec, priors, lower, upper)
    rng = np.random.default_rng(config.seed)

    def neg_loglik_grad(x):
        value, grad = evaluator.loglik_constrained_grad(x)
        if grad is None:
            return np.inf, None
        return -value, -grad

    results: list[RestartResult] = []
    best_idx = -1
    best_f = np.inf
    best_x: Optional[np.ndarray] = None
    for r in range(config.restarts):
        x0 = rng.uniform(lo0, hi0)
        x, trace, status, pg = _minimize_box(
            neg_loglik_grad, x0, lower, upper,
            config.max_iterations, config.grad_tol, config.memory,
        )
        loglik_trace = -np.asarray(trace)
        results.append(
            RestartResult(
                status=status,
                loglik_trace=loglik_trace,
                final_loglik=float(loglik_trace[-1]),
                final_projected_grad_norm=pg,
                iterations=len(trace) - 1,
            )
        )
        f_final = trace[-1]
        if np.isfinite(f_final) and f_final < best_f:
            best_f = f_final
            best_x = x
            best_idx = r

    if best_x is None or all(
        res.status == "line_search_failed" and res.iterations == 0 for res in results
    ):
        raise OptimizationError(
            "every restart failed its first line search; "
            f"statuses={[res.status for res in results]}"
        )
    return MleResult(
        theta=unpack(best_x, spec),
        flat=best_x,
        loglik=-best_f,
        best_restart=best_idx,
        restarts=results,
    )
