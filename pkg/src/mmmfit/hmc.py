"""Hamiltonian Monte Carlo with reflective handling of nonnegativity bounds.

Proposals follow the leapfrog integrator; whenever a position update would
push a bounded coordinate below its guardrail the trajectory bounces: the
coordinate is mirrored about the bound and its velocity negated, which
preserves kinetic energy exactly.  During burn-in the step size adapts
multiplicatively toward the target acceptance rate and is then frozen (at the
geometric mean over the last fifth of burn-in) so the post-burn-in chain is a
valid Markov chain.

The module exposes a generic engine, :func:`sample`, driven by any
log-density-and-gradient callable, and :func:`run_chain`, which wires the
engine to the model posterior, initializes at the prior means, and reports
draws back on the original parameter scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from .errors import DomainError, SamplerError
from .model import ModelSpec, PanelDataset, param_names, unpack
from .posterior import PosteriorEvaluator, PriorConfig, carried_lower_bounds

__all__ = [
    "HmcConfig",
    "SampleChain",
    "reflect",
    "leapfrog_step",
    "acceptance_probability",
    "sample",
    "run_chain",
]

_ADAPT_UP = 1.02  # step-size factor on acceptance; the reject factor follows
# from the target rate so that the adaptation equilibrates at that rate


@dataclass(frozen=True)
class HmcConfig:
    """Run settings; defaults mirror the simulation-study protocol."""

    iterations: int = 20000
    burn_in: int = 10000
    thinning: int = 20
    leapfrog_steps: int = 20
    step_size: float = 0.02
    target_acceptance: float = 0.65
    seed: int = 0
    max_reflections: int = 100
    init_jitter_sd: float = 0.01

    def __post_init__(self) -> None:
        if not 0 <= self.burn_in < self.iterations:
            raise DomainError("burn_in must be smaller than iterations")
        if self.thinning < 1:
            raise DomainError("thinning must be at least 1")
        if self.leapfrog_steps < 1:
            raise DomainError("need at least one leapfrog step")
        if self.step_size <= 0:
            raise DomainError("step size must be positive")
        if not 0.0 < self.target_acceptance < 1.0:
            raise DomainError("target acceptance must lie in (0, 1)")

    @property
    def retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thinning


@dataclass
class SampleChain:
    """Post-burn-in, thinned draws plus acceptance bookkeeping."""

    draws: np.ndarray  # (retained, d), original parameter scale
    names: tuple[str, ...]
    acceptance_rate: float  # over post-burn-in iterations
    burnin_acceptance_rate: float
    log_posterior_trace: np.ndarray  # per iteration, current state
    seed: int
    config: HmcConfig
    final_step_size: float

    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: self.draws[:, j] for j, name in enumerate(self.names)}


def reflect(value, velocity, lower_bound=0.0, max_passes: int = 100):
    """Bounce a tentative position off a lower guardrail.

    Values at or above the bound pass through unchanged; below it, the value
    is mirrored about the bound and the velocity negated, repeatedly until
    feasible (a single pass suffices for a lower bound alone).
    """
    val = np.array(value, dtype=float)
    vel = np.array(velocity, dtype=float)
    for _ in range(max_passes):
        mask = val < lower_bound
        if not np.any(mask):
            break
        val = np.where(mask, 2.0 * lower_bound - val, val)
        vel = np.where(mask, -vel, vel)
    if np.isscalar(value) or np.ndim(value) == 0:
        return float(val), float(vel)
    return val, vel


def _reflect_coords(theta: np.ndarray, v: np.ndarray, lower: np.ndarray, cap: int) -> bool:
    """In-place coordinate-wise reflection; False when the pass cap is hit."""
    for _ in range(cap):
        mask = theta < lower
        if not mask.any():
            return True
        theta[mask] = 2.0 * lower[mask] - theta[mask]
        v[mask] = -v[mask]
    return not (theta < lower).any()


def leapfrog_step(
    theta: np.ndarray,
    v: np.ndarray,
    grad_fn: Callable[[np.ndarray], np.ndarray],
    step_size: float,
    lower_bounds: Optional[np.ndarray] = None,
    max_reflections: int = 100,
) -> tuple[np.ndarray, np.ndarray]:
    """One leapfrog update: half-step momentum, full-step position (with
    reflection), half-step momentum.  ``grad_fn`` returns the gradient of the
    log-density."""
    theta = np.array(theta, dtype=float)
    v = np.array(v, dtype=float)
    g = np.asarray(grad_fn(theta), dtype=float)
    if not np.all(np.isfinite(g)):
        raise SamplerError(f"non-finite gradient at leapfrog start, theta={theta}")
    v = v + 0.5 * step_size * g
    theta = theta + step_size * v
    if lower_bounds is not None:
        if not _reflect_coords(theta, v, np.asarray(lower_bounds, dtype=float), max_reflections):
            raise SamplerError("reflection pass cap exceeded within a single step")
    g = np.asarray(grad_fn(theta), dtype=float)
    if not np.all(np.isfinite(g)):
        raise SamplerError(f"non-finite gradient at leapfrog end, theta={theta}")
    v = v + 0.5 * step_size * g
    return theta, v


def acceptance_probability(
    logp_current: float, logp_proposal: float, v_initial: np.ndarray, v_final: np.ndarray
) -> float:
    """Metropolis probability min(1, exp(dH)); -inf proposals are never taken."""
    if logp_proposal == -np.inf:
        return 0.0
    delta = (logp_proposal - 0.5 * float(np.dot(v_final, v_final))) - (
        logp_current - 0.5 * float(np.dot(v_initial, v_initial))
    )
    return float(np.exp(min(0.0, delta)))


def _trajectory(
    logp_grad,
    theta0: np.ndarray,
    grad0: np.ndarray,
    v0: np.ndarray,
    step: float,
    n_steps: int,
    lower: Optional[np.ndarray],
    cap: int,
    iteration: int,
):
    """Run a full proposal trajectory; None signals certain rejection."""
    theta = theta0.copy()
    v = v0.copy()
    grad = grad0
    lp = None
    for _ in range(n_steps):
        v += 0.5 * step * grad
        theta += step * v
        if lower is not None and not _reflect_coords(theta, v, lower, cap):
            return None
        lp, grad = logp_grad(theta)
        if lp == -np.inf:
            return None
        if grad is None or not np.all(np.isfinite(grad)):
            raise SamplerError(f"non-finite gradient at iteration {iteration}, theta={theta}")
        v += 0.5 * step * grad
    return theta, v, lp, grad


def sample(
    logp_and_grad: Callable[[np.ndarray], tuple[float, Optional[np.ndarray]]],
    init: np.ndarray,
    config: HmcConfig,
    lower_bounds: Optional[Sequence[float]] = None,
) -> SampleChain:
    """Generic HMC engine over an arbitrary log density.

    ``logp_and_grad`` maps a position to (log-density, gradient); it must
    return (-inf, None) outside the support.  ``lower_bounds`` gives the
    reflection guardrail per coordinate (-inf where unbounded).
    """
    rng = np.random.default_rng(config.seed)
    theta = np.array(init, dtype=float)
    d = theta.size
    lower = None
    if lower_bounds is not None:
        lower = np.asarray(lower_bounds, dtype=float)
        finite = np.isfinite(lower)
        if np.any(theta[finite] < lower[finite]):
            raise SamplerError("initial point violates the lower bounds")

    lp, grad = logp_and_grad(theta)
    if lp == -np.inf or grad is None:
        raise SamplerError("initial point has zero posterior density")

    step = config.step_size
    target = config.target_acceptance
    log_up = np.log(_ADAPT_UP)
    log_down = -log_up * target / (1.0 - target)

    n_keep = config.retained
    draws = np.empty((n_keep, d))
    trace = np.empty(config.iterations)
    accepted_burn = 0
    accepted_post = 0
    kept = 0
    tail_start = config.burn_in - max(1, config.burn_in // 5)
    log_step_tail: list[float] = []

    for it in range(config.iterations):
        v0 = rng.standard_normal(d)
        result = _trajectory(
            logp_and_grad, theta, grad, v0, step, config.leapfrog_steps,
            lower, config.max_reflections, it,
        )
        accept = False
        if result is not None:
            theta_p, v_end, lp_p, grad_p = result
            delta = (lp_p - 0.5 * float(np.dot(v_end, v_end))) - (
                lp - 0.5 * float(np.dot(v0, v0))
            )
            if delta >= 0 or np.log(rng.uniform()) < delta:
                accept = True
                theta, lp, grad = theta_p, lp_p, grad_p

        in_burn = it < config.burn_in
        if in_burn:
            accepted_burn += accept
            step *= np.exp(log_up if accept else log_down)
            if it >= tail_start:
                log_step_tail.append(np.log(step))
            if it == config.burn_in - 1:
                if accepted_burn < 0.01 * config.burn_in:
                    raise SamplerError(
                        f"acceptance rate {accepted_burn / config.burn_in:.4f} over burn-in "
                        "is below 1%; decrease step_size or leapfrog_steps"
                    )
                step = float(np.exp(np.mean(log_step_tail)))
        else:
            accepted_post += accept
            if (it - config.burn_in + 1) % config.thinning == 0 and kept < n_keep:
                draws[kept] = theta
                kept += 1
        trace[it] = lp

    post_iters = config.iterations - config.burn_in
    return SampleChain(
        draws=draws[:kept],
        names=tuple(f"coord_{j}" for j in range(d)),
        acceptance_rate=accepted_post / post_iters,
        burnin_acceptance_rate=accepted_burn / max(1, config.burn_in),
        log_posterior_trace=trace,
        seed=config.seed,
        config=config,
        final_step_size=step,
    )


def _initial_carried(spec: ModelSpec, priors: PriorConfig) -> np.ndarray:
    """Prior-mean starting point in carried coordinates."""
    m, n, g = spec.m, spec.n, spec.g
    parts = [
        np.full(m, priors.alpha_star_mean),
        np.full(m, priors.k_shape / priors.k_rate),
        np.full(m, priors.lambda_shape / priors.lambda_rate),
        np.full(m, priors.coef_mean),
        np.full(n, priors.coef_mean),
    ]
    if spec.hierarchical:
        parts += [
            np.full(m, priors.variance_mean),
            np.full(n, priors.variance_mean),
            np.full(m * g, priors.coef_mean),
            np.full(n * g, priors.coef_mean),
        ]
    sigma2 = priors.sigma2_tn_mean if priors.sigma2_family == "truncated_normal" else 1.0
    parts.append(np.array([sigma2]))
    return np.concatenate(parts)


def run_chain(
    data: PanelDataset,
    spec: ModelSpec,
    priors: Optional[PriorConfig] = None,
    config: Optional[HmcConfig] = None,
) -> SampleChain:
    """Sample the model posterior and report draws on the original scale."""
    config = config or HmcConfig()
    evaluator = PosteriorEvaluator(data, spec, priors)
    priors = evaluator.priors
    rng = np.random.default_rng(config.seed)
    init = _initial_carried(spec, priors)
    init = init + rng.normal(0.0, config.init_jitter_sd, size=init.size)
    lower = carried_lower_bounds(spec)
    # jitter must not push a guardrailed coordinate out of its support
    finite = np.isfinite(lower)
    init[finite] = np.maximum(init[finite], lower[finite] + 1e-8)

    inner = sample(
        evaluator.log_posterior_grad,
        init,
        HmcConfig(
            iterations=config.iterations,
            burn_in=config.burn_in,
            thinning=config.thinning,
            leapfrog_steps=config.leapfrog_steps,
            step_size=config.step_size,
            target_acceptance=config.target_acceptance,
            seed=int(rng.integers(2**63)),
            max_reflections=config.max_reflections,
            init_jitter_sd=config.init_jitter_sd,
        ),
        lower_bounds=lower,
    )
    draws = inner.draws.copy()
    draws[:, : spec.m] = special.expit(draws[:, : spec.m])  # decay back to (0, 1)
    for row in draws:
        unpack(row, spec).validate(spec)
    return SampleChain(
        draws=draws,
        names=tuple(param_names(spec)),
        acceptance_rate=inner.acceptance_rate,
        burnin_acceptance_rate=inner.burnin_acceptance_rate,
        log_posterior_trace=inner.log_posterior_trace,
        seed=config.seed,
        config=config,
        final_step_size=inner.final_step_size,
    )
