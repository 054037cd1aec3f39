"""Scalarization of the random objective: risk-neutral sample mean, smoothed
CVaR with the auxiliary variable t, and the deterministic (zero-perturbation)
mode. Values and gradients live in the extended variable space (x) or (x, t).

Samples are drawn once and kept frozen, so each mode is an ordinary smooth
deterministic problem; per-sample terms are reduced in fixed sample order for
bitwise reproducibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .parallel import parallel_map
from .perturbation import PerturbationKernel, draw_samples

DEFAULT_EPSILON_SCHEDULE = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)

RISK_MODES = ("deterministic", "risk_neutral", "cvar")


def smoothed_plus(x, epsilon: float):
    """C^1 approximation of max(x, 0) and its derivative.

    Piecewise: x for x >= eps/2; (x+eps/2)^3/eps^2 - (x+eps/2)^4/(2 eps^3)
    on (-eps/2, eps/2); 0 below. |h(x) - max(x, 0)| <= eps/8 everywhere.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    value = np.where(arr >= 0.5 * epsilon, arr, 0.0)
    deriv = np.where(arr >= 0.5 * epsilon, 1.0, 0.0)
    mid = (arr > -0.5 * epsilon) & (arr < 0.5 * epsilon)
    u = arr[mid] + 0.5 * epsilon
    value[mid] = u**3 / epsilon**2 - u**4 / (2.0 * epsilon**3)
    deriv[mid] = 3.0 * u**2 / epsilon**2 - 2.0 * u**3 / epsilon**3
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(value[0]), float(deriv[0])
    return value, deriv


def empirical_quantile(values, alpha: float) -> float:
    """The ceil(alpha*N)-th order statistic (a minimizer of the discrete
    CVaR inf-formulation over t)."""
    values = np.sort(np.asarray(values, dtype=float))
    n = values.size
    idx = max(int(math.ceil(alpha * n)), 1) - 1
    return float(values[idx])


def discrete_cvar(values, alpha: float) -> tuple[float, float]:
    """Sort-based CVaR of a finite sample, and the quantile t used.

    Evaluates t + (1/((1-alpha) N)) * sum((g - t)^+) at t equal to the
    empirical alpha-quantile; when (1-alpha)*N is an integer this is exactly
    the mean of the worst (1-alpha)*N values.
    """
    values = np.asarray(values, dtype=float)
    t = empirical_quantile(values, alpha)
    n = values.size
    value = t + float(np.sum(np.maximum(values - t, 0.0))) / ((1.0 - alpha) * n)
    return value, t


@dataclass(frozen=True)
class RiskConfig:
    """Risk mode, CVaR parameters, sample count and the master seed."""

    mode: str = "risk_neutral"
    n_samples: int = 16
    master_seed: int = 0
    alpha: float = 0.95
    epsilon_schedule: tuple = DEFAULT_EPSILON_SCHEDULE

    def __post_init__(self):
        if self.mode not in RISK_MODES:
            raise ValueError(f"mode must be one of {RISK_MODES}, got {self.mode!r}")
        if self.mode == "cvar":
            if not 0.0 <= self.alpha < 1.0:
                raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")
            sched = tuple(float(e) for e in self.epsilon_schedule)
            if len(sched) == 0 or any(e <= 0 for e in sched):
                raise ValueError("epsilon schedule must be nonempty and positive")
            if any(b >= a for a, b in zip(sched, sched[1:])):
                raise ValueError("epsilon schedule must be strictly decreasing")
            object.__setattr__(self, "epsilon_schedule", sched)
        if self.mode != "deterministic" and self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


class SaaProblem:
    """Frozen-sample scalarization of a CoilProblem objective.

    In cvar mode the optimization variable is z = (x, t); otherwise z = x.
    The sample set is drawn once at construction and reused every iteration.
    """

    def __init__(self, coil_problem, kernel: PerturbationKernel, risk: RiskConfig,
                 workers: int = 1):
        self.coil_problem = coil_problem
        self.kernel = kernel
        self.risk = risk
        self.workers = workers
        self.epsilon = risk.epsilon_schedule[0] if risk.mode == "cvar" else None
        if risk.mode == "deterministic":
            self.samples = [coil_problem.zero_sample()]
        else:
            self.samples = draw_samples(
                kernel, coil_problem.grid, coil_problem.template.n_coils,
                risk.master_seed, risk.n_samples,
            )

    @property
    def n_vars(self) -> int:
        extra = 1 if self.risk.mode == "cvar" else 0
        return self.coil_problem.n_dofs + extra

    def split(self, z):
        """(x, t) from the packed optimization vector."""
        z = np.asarray(z, dtype=float)
        if self.risk.mode == "cvar":
            if z.size != self.coil_problem.n_dofs + 1:
                raise ValueError("cvar mode needs the auxiliary variable t")
            return z[:-1], float(z[-1])
        return z, None

    def join(self, x, t=None):
        if self.risk.mode == "cvar":
            if t is None:
                raise ValueError("cvar mode needs the auxiliary variable t")
            return np.concatenate([x, [t]])
        return np.asarray(x, dtype=float)

    def with_epsilon(self, epsilon: float) -> "SaaProblem":
        """Shallow copy sharing the frozen samples, with a new smoothing value."""
        clone = object.__new__(SaaProblem)
        clone.__dict__.update(self.__dict__)
        clone.epsilon = float(epsilon)
        return clone

    def sample_values(self, x):
        """g(x, zeta_k) for every frozen sample, in sample order."""
        vals = parallel_map(
            lambda s: self.coil_problem.objective_value(x, s),
            self.samples, self.workers,
        )
        return np.array(vals)

    def sample_values_grads(self, x):
        results = parallel_map(
            lambda s: self.coil_problem.objective(x, s),
            self.samples, self.workers,
        )
        values = np.array([v for v, _ in results])
        grads = np.stack([g for _, g in results])
        return values, grads

    def value_grad(self, z):
        """Scalarized value and gradient over z = x or (x, t)."""
        x, t = self.split(z)
        mode = self.risk.mode
        if mode == "deterministic":
            return self.coil_problem.objective(x, self.samples[0])
        values, grads = self.sample_values_grads(x)
        if mode == "risk_neutral":
            return float(np.mean(values)), np.mean(grads, axis=0)
        # smoothed CVaR: t + (1/((1-alpha) N)) sum h_eps(g_k - t)
        alpha = self.risk.alpha
        n = len(self.samples)
        h, hp = smoothed_plus(values - t, self.epsilon)
        denom = (1.0 - alpha) * n
        value = t + float(np.sum(h)) / denom
        grad_x = (hp[:, None] * grads).sum(axis=0) / denom
        grad_t = 1.0 - float(np.sum(hp)) / denom
        return value, np.concatenate([grad_x, [grad_t]])

    def value(self, z):
        x, t = self.split(z)
        mode = self.risk.mode
        if mode == "deterministic":
            return self.coil_problem.objective_value(x, self.samples[0])
        values = self.sample_values(x)
        if mode == "risk_neutral":
            return float(np.mean(values))
        alpha = self.risk.alpha
        h, _ = smoothed_plus(values - t, self.epsilon)
        return t + float(np.sum(h)) / ((1.0 - alpha) * len(self.samples))


def oos_evaluate(coil_problem, x, kernel: PerturbationKernel, seed: int,
                 count: int, workers: int = 1) -> np.ndarray:
    """Objective values on fresh out-of-sample perturbation draws.

    The seed must differ from the optimization master seed for the draws to
    be independent of the in-sample set.
    """
    samples = draw_samples(kernel, coil_problem.grid,
                           coil_problem.template.n_coils, seed, count)
    vals = parallel_map(
        lambda s: coil_problem.objective_value(x, s), samples, workers,
    )
    return np.array(vals)
