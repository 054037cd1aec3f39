"""Limited-memory quasi-Newton minimizer (two-loop recursion) with a
strong-Wolfe cubic-interpolation line search, plus multi-start orchestration
and the CVaR smoothing continuation.

The implementation is self-contained so the determinism and logging contracts
hold exactly: identical (config, seeds) replay the same iteration history.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .parallel import parallel_map
from .stochastic import empirical_quantile


@dataclass(frozen=True)
class OptimOptions:
    memory: int = 20
    gtol: float = 1e-10          # on the gradient inf-norm, relative to x0
    max_iters: int = 2000
    c1: float = 1e-4             # sufficient-decrease constant
    c2: float = 0.9              # curvature constant
    max_line_search_evals: int = 40
    multistart_count: int = 8
    multistart_std: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.memory < 1 or self.max_iters < 1:
            raise ValueError("memory and max_iters must be >= 1")


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad_inf_norm: float
    iterations: int
    termination: str             # gtol | max_iters | line_search_failure
    history: list                # rows (iter, objective, grad_inf_norm, step)
    info: dict = field(default_factory=dict)


def _check_finite(f, g, x, iteration):
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericalError(
            f"non-finite objective or gradient at iteration {iteration}",
            state={
                "iteration": iteration,
                "objective": float(f),
                "x": np.asarray(x).tolist(),
                "gradient": np.asarray(g).tolist(),
            },
        )


def _cubic_step(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolant through (a, fa, ga), (b, fb, gb)."""
    if a == b:
        return None
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.sqrt(disc) * np.sign(b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (gb + d2 - d1) / denom
    if not np.isfinite(t):
        return None
    return t


class _LineSearchFailure(Exception):
    pass


def _line_search(value_grad, x, f0, g0, direction, options):
    """Strong-Wolfe line search; returns (alpha, x_new, f_new, g_new, evals)."""
    c1, c2 = options.c1, options.c2
    dphi0 = float(g0 @ direction)
    if dphi0 >= 0:
        raise _LineSearchFailure("search direction is not a descent direction")

    evals = 0

    def phi(alpha):
        nonlocal evals
        x_new = x + alpha * direction
        f, g = value_grad(x_new)
        evals += 1
        return x_new, f, g, float(g @ direction)

    def zoom(lo, f_lo, g_lo, x_lo, gvec_lo, hi, f_hi, g_hi):
        nonlocal evals
        while evals < options.max_line_search_evals:
            trial = _cubic_step(lo, f_lo, g_lo, hi, f_hi, g_hi)
            width = abs(hi - lo)
            inner_lo, inner_hi = min(lo, hi), max(lo, hi)
            if (trial is None or trial <= inner_lo + 0.1 * width
                    or trial >= inner_hi - 0.1 * width):
                trial = 0.5 * (lo + hi)
            x_new, f, g, dphi = phi(trial)
            if f > f0 + c1 * trial * dphi0 or f >= f_lo:
                hi, f_hi, g_hi = trial, f, dphi
            else:
                if abs(dphi) <= -c2 * dphi0:
                    return trial, x_new, f, g
                if dphi * (hi - lo) >= 0:
                    hi, f_hi, g_hi = lo, f_lo, g_lo
                lo, f_lo, g_lo, x_lo, gvec_lo = trial, f, dphi, x_new, g
            if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
                break
        # Interval collapsed: accept the best sufficient-decrease point if any.
        if f_lo < f0:
            return lo, x_lo, f_lo, gvec_lo
        raise _LineSearchFailure("zoom interval collapsed without progress")

    alpha_prev, f_prev, dphi_prev = 0.0, f0, dphi0
    x_prev, gvec_prev = x, g0
    alpha = 1.0
    first = True
    while evals < options.max_line_search_evals:
        x_new, f, g, dphi = phi(alpha)
        if f > f0 + c1 * alpha * dphi0 or (not first and f >= f_prev):
            return zoom(alpha_prev, f_prev, dphi_prev, x_prev, gvec_prev,
                        alpha, f, dphi)
        if abs(dphi) <= -c2 * dphi0:
            return alpha, x_new, f, g
        if dphi >= 0:
            return zoom(alpha, f, dphi, x_new, g, alpha_prev, f_prev, dphi_prev)
        alpha_prev, f_prev, dphi_prev = alpha, f, dphi
        x_prev, gvec_prev = x_new, g
        alpha *= 2.0
        first = False
    raise _LineSearchFailure("line search exceeded its evaluation budget")


def minimize(value_grad, x0, options: OptimOptions | None = None) -> OptimResult:
    """L-BFGS minimization of a smooth function given by value_grad(x) -> (f, g).

    Terminates when the gradient inf-norm falls below gtol relative to its
    initial value, on max_iters, or on line-search failure; the objective is
    nonincreasing across accepted steps (strong Wolfe).
    """
    options = options or OptimOptions()
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite initial point", state={"x": x.tolist()})
    f, g = value_grad(x)
    _check_finite(f, g, x, 0)
    g_norm = float(np.max(np.abs(g)))
    g_target = options.gtol * g_norm
    history = [(0, f, g_norm, 0.0)]

    mem_s, mem_y, mem_rho = [], [], []
    termination = "max_iters"
    iteration = 0
    for iteration in range(1, options.max_iters + 1):
        if g_norm <= g_target:
            termination = "gtol"
            iteration -= 1
            break

        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(mem_s), reversed(mem_y), reversed(mem_rho)):
            a = rho * (s @ q)
            q -= a * y
            alphas.append(a)
        if mem_s:
            gamma = (mem_s[-1] @ mem_y[-1]) / (mem_y[-1] @ mem_y[-1])
        else:
            gamma = 1.0 / max(g_norm, 1.0)
        r = gamma * q
        for s, y, rho, a in zip(mem_s, mem_y, mem_rho, reversed(alphas)):
            b = rho * (y @ r)
            r += (a - b) * s
        direction = -r
        if direction @ g >= 0:
            # memory produced a non-descent direction, restart from steepest descent
            mem_s, mem_y, mem_rho = [], [], []
            direction = -g / max(g_norm, 1.0)

        try:
            alpha, x_new, f_new, g_new = _line_search(value_grad, x, f, g,
                                                      direction, options)
        except _LineSearchFailure:
            termination = "line_search_failure"
            iteration -= 1
            break
        _check_finite(f_new, g_new, x_new, iteration)

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            mem_s.append(s)
            mem_y.append(y)
            mem_rho.append(1.0 / sy)
            if len(mem_s) > options.memory:
                mem_s.pop(0)
                mem_y.pop(0)
                mem_rho.pop(0)

        x, f, g = x_new, f_new, g_new
        g_norm = float(np.max(np.abs(g)))
        history.append((iteration, f, g_norm, float(alpha)))
    else:
        iteration = options.max_iters

    if termination == "max_iters" and g_norm <= g_target:
        termination = "gtol"
    return OptimResult(x=x, fun=f, grad_inf_norm=g_norm, iterations=iteration,
                       termination=termination, history=history)


def multi_start(value_grad, x_base, options: OptimOptions, seed: int,
                n_perturb: int | None = None, workers: int = 1) -> list:
    """Independent optimizations from randomly perturbed initial guesses.

    Start m adds N(0, std^2) noise to the first n_perturb entries of x_base
    (the shape Fourier coefficients; currents and t are left alone), using
    the per-start stream [seed, m].
    """
    x_base = np.asarray(x_base, dtype=float)
    if n_perturb is None:
        n_perturb = x_base.size

    def run(m):
        rng = np.random.default_rng([seed, m])
        x0 = x_base.copy()
        x0[:n_perturb] += rng.normal(0.0, options.multistart_std, n_perturb)
        result = minimize(value_grad, x0, options)
        result.info["start_index"] = m
        result.info["start_seed"] = [seed, m]
        result.info["x0"] = x0
        return result

    return parallel_map(run, range(options.multistart_count), workers)


def cvar_continuation(saa_problem, x_start, options: OptimOptions,
                      t_start: float | None = None) -> OptimResult:
    """Solve the smoothed-CVaR problem over a decreasing epsilon schedule.

    Each stage warm-starts from the previous minimizer; t is initialized at
    the empirical alpha-quantile of the frozen sample values at x_start
    (typically the risk-neutral minimizer).
    """
    if saa_problem.risk.mode != "cvar":
        raise ValueError("continuation requires a cvar-mode problem")
    if t_start is None:
        values = saa_problem.sample_values(x_start)
        t_start = empirical_quantile(values, saa_problem.risk.alpha)
    z = saa_problem.join(np.asarray(x_start, dtype=float), t_start)

    stages = []
    result = None
    for epsilon in saa_problem.risk.epsilon_schedule:
        stage_problem = saa_problem.with_epsilon(epsilon)
        result = minimize(stage_problem.value_grad, z, options)
        stages.append({
            "epsilon": epsilon,
            "z0": z.copy(),
            "fun": result.fun,
            "iterations": result.iterations,
            "termination": result.termination,
        })
        z = result.x
    result.info["stages"] = stages
    result.info["t_start"] = t_start
    return result
