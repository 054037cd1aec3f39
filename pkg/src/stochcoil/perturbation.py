"""Gaussian-process model of coil manufacturing errors.

Each coordinate of each physical coil gets an independent, centered, periodic
Gaussian process built from a squared-exponential covariance periodized on
[0, 2*pi). Joint value/derivative draws at the quadrature nodes come from a
Cholesky factor of the 2n x 2n block covariance.

Reproducibility: the draw for (sample k, coil i, coordinate j) is a pure
function of (master_seed, k, i, j), so results do not depend on how samples
are distributed over workers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IllConditionedKernelError
from .geometry import TWO_PI, QuadratureGrid

JITTER_BASE = 1e-10
JITTER_MAX = 1e-6


@dataclass(frozen=True)
class PerturbationKernel:
    """Periodized squared-exponential covariance.

    sigma: overall magnitude (meters); length_scale: correlation length in
    radians of curve parameter; truncation: number of periodization terms J
    kept on each side (the summands decay like exp(-(2*pi*j)^2/(2*l^2))).
    """

    sigma: float
    length_scale: float
    truncation: int = 3

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.length_scale <= 0:
            raise ValueError(f"length_scale must be > 0, got {self.length_scale}")
        if self.truncation < 1:
            raise ValueError(f"truncation must be >= 1, got {self.truncation}")


def kernel_eval(kernel: PerturbationKernel, d):
    """Periodic covariance and its first two derivatives at lag d (radians).

    The lag is wrapped to [-pi, pi) before the periodized sum, which makes
    the 2*pi-periodicity exact rather than a truncation artifact. Returns
    (k, k', k'') broadcast over d.
    """
    d = np.asarray(d, dtype=float)
    wrapped = np.mod(d + np.pi, TWO_PI) - np.pi
    sig2 = kernel.sigma**2
    inv_l2 = 1.0 / kernel.length_scale**2

    def terms(x):
        e = sig2 * np.exp(-0.5 * x * x * inv_l2)
        return e, -x * inv_l2 * e, (x * x * inv_l2 - 1.0) * inv_l2 * e

    # summing the +j and -j images pairwise keeps k' exactly odd (k'(0) = 0)
    k, kp, kpp = terms(wrapped)
    for j in range(1, kernel.truncation + 1):
        ep, dp, sp = terms(wrapped + TWO_PI * j)
        em, dm, sm = terms(wrapped - TWO_PI * j)
        k += ep + em
        kp += dp + dm
        kpp += sp + sm
    return k, kp, kpp


def build_covariance(kernel: PerturbationKernel, grid: QuadratureGrid) -> np.ndarray:
    """Joint covariance of (values, derivatives) at the grid nodes.

    Block layout for lag d = theta_a - theta_b:

        [  k(d)   -k'(d) ]
        [  k'(d)  -k''(d)]

    k' is odd, so the matrix is symmetric.
    """
    theta = grid.nodes
    lags = theta[:, None] - theta[None, :]
    k, kp, kpp = kernel_eval(kernel, lags)
    n = grid.n
    cov = np.empty((2 * n, 2 * n))
    cov[:n, :n] = k
    cov[:n, n:] = -kp
    cov[n:, :n] = kp
    cov[n:, n:] = -kpp
    return cov


def factorize(cov: np.ndarray, sigma: float) -> np.ndarray:
    """Cholesky factor L with L @ L.T = cov + jitter*I.

    Jitter is relative (starting at 1e-10*sigma^2) so that samples scale
    exactly linearly in sigma; it escalates by 10x up to 1e-6*sigma^2 before
    giving up.
    """
    cov = np.asarray(cov, dtype=float)
    if sigma == 0.0:
        if not cov.any():
            return np.zeros_like(cov)
        jitters = [0.0]
    else:
        scale = sigma**2
        jitters = [JITTER_BASE * scale]
        while jitters[-1] < JITTER_MAX * scale * (1 - 1e-12):
            jitters.append(jitters[-1] * 10.0)
    eye = np.eye(cov.shape[0])
    for jitter in jitters:
        try:
            return np.linalg.cholesky(cov + jitter * eye)
        except np.linalg.LinAlgError:
            continue
    raise IllConditionedKernelError(
        f"covariance factorization failed up to jitter {jitters[-1]:.3e}"
    )


@dataclass(frozen=True)
class PerturbationSample:
    """One joint draw of displacements and parameter-derivatives.

    values[i, m, j] and derivs[i, m, j] are Xi_j and Xi_j' for physical coil
    i at node m, coordinate j (meters, meters/radian).
    """

    values: np.ndarray  # (n_coils, n, 3)
    derivs: np.ndarray  # (n_coils, n, 3)
    sample_id: int

    @classmethod
    def zero(cls, n_coils: int, n_nodes: int, sample_id: int = -1) -> "PerturbationSample":
        shape = (n_coils, n_nodes, 3)
        return cls(np.zeros(shape), np.zeros(shape), sample_id)


def _stream(master_seed: int, sample_id: int, coil: int, coord: int) -> np.random.Generator:
    # Counter-based: one independent stream per (seed, sample, coil, coord).
    return np.random.default_rng([master_seed, sample_id, coil, coord])


def draw_sample(cholesky: np.ndarray, n_coils: int, master_seed: int,
                sample_id: int) -> PerturbationSample:
    """Draw one perturbation sample for all coils and coordinates.

    Every physical coil, including symmetry images, is perturbed
    independently; the draw is deterministic in (master_seed, sample_id).
    """
    n = cholesky.shape[0] // 2
    values = np.empty((n_coils, n, 3))
    derivs = np.empty((n_coils, n, 3))
    for coil in range(n_coils):
        for coord in range(3):
            z = _stream(master_seed, sample_id, coil, coord).standard_normal(2 * n)
            x = cholesky @ z
            values[coil, :, coord] = x[:n]
            derivs[coil, :, coord] = x[n:]
    return PerturbationSample(values, derivs, sample_id)


def draw_samples(kernel: PerturbationKernel, grid: QuadratureGrid, n_coils: int,
                 master_seed: int, count: int, start_id: int = 0) -> list:
    """Draw ``count`` independent samples with ids start_id..start_id+count-1."""
    chol = factorize(build_covariance(kernel, grid), kernel.sigma)
    return [
        draw_sample(chol, n_coils, master_seed, start_id + k)
        for k in range(count)
    ]


def export_sample_csv(path, sample: PerturbationSample) -> None:
    """Write one sample as CSV for cross-implementation statistical audits."""
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["coil", "coordinate", "node", "value", "derivative"])
        n_coils, n, _ = sample.values.shape
        for i in range(n_coils):
            for j in range(3):
                for m in range(n):
                    writer.writerow([
                        i, j, m,
                        repr(float(sample.values[i, m, j])),
                        repr(float(sample.derivs[i, m, j])),
                    ])
