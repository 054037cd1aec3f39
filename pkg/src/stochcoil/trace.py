"""Field-line diagnostics: locate the magnetic axis as the fixed point of the
full-turn Poincare map at a fixed cylindrical angle and extract the on-axis
rotational transform from the linearized (tangent) map.

Field-line ODE in cylindrical coordinates, with phi the independent variable:

    dR/dphi = R * B_R / B_phi,    dZ/dphi = R * B_Z / B_phi.

Perturbed coils break the field-period symmetry, so the map is always
integrated over the full 2*pi turn. Sign convention for iota is right-handed:
phi counterclockwise seen from +z.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import AxisNotFoundError, FieldLineError, RotationalTransformError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TraceConfig:
    tolerance: float = 1e-10         # full-turn endpoint accuracy (relative)
    newton_tolerance: float = 1e-10  # meters, on |P(y) - y|
    max_newton_iters: int = 50
    fd_step_rel: float = 1e-7        # Newton-Jacobian FD step, relative to R0
    plane_phi: float = 0.0           # Poincare plane

    def __post_init__(self):
        if self.tolerance <= 0 or self.newton_tolerance <= 0:
            raise ValueError("tolerances must be > 0")

    @property
    def _step_tolerance(self) -> float:
        # the controller bounds per-step error; global endpoint error runs one
        # to two orders above it, so integrate tighter than the contract
        return max(self.tolerance / 100.0, 1e-13)


@dataclass
class AxisResult:
    R0: float
    Z0: float
    residual: float
    newton_iterations: int
    phis: np.ndarray        # traced axis curve samples
    rz: np.ndarray          # (n, 2)
    iota: float | None = None
    info: dict = field(default_factory=dict)


def _cyl_components(field_obj, phi, y, need_grad):
    """B and (optionally) its derivatives in the local (R, Z) chart."""
    r, z = y
    cphi, sphi = np.cos(phi), np.sin(phi)
    point = np.array([[r * cphi, r * sphi, z]])
    if need_grad:
        B, gradB = field_obj.B_and_gradB(point)
        gradB = gradB[0]
    else:
        B = field_obj.B(point)
        gradB = None
    B = B[0]
    e_r = np.array([cphi, sphi, 0.0])
    e_phi = np.array([-sphi, cphi, 0.0])
    b_r = B @ e_r
    b_phi = B @ e_phi
    b_z = B[2]
    bnorm = np.linalg.norm(B)
    if abs(b_phi) < 1e-6 * bnorm:
        raise FieldLineError(
            f"toroidal field component vanished at phi={phi:.6f}, R={r:.6f}, Z={z:.6f}",
            state={"phi": phi, "R": r, "Z": z, "B": B.tolist()},
        )
    return b_r, b_phi, b_z, gradB, e_r, e_phi


def _rhs(field_obj, phi, y):
    b_r, b_phi, b_z, _, _, _ = _cyl_components(field_obj, phi, y, need_grad=False)
    r = y[0]
    return np.array([r * b_r / b_phi, r * b_z / b_phi])


def _rhs_with_jacobian(field_obj, phi, y):
    """ODE velocity and its (R, Z) Jacobian for variational integration."""
    b_r, b_phi, b_z, gradB, e_r, e_phi = _cyl_components(field_obj, phi, y, need_grad=True)
    r = y[0]
    e_z = np.array([0.0, 0.0, 1.0])
    d_r = gradB @ e_r   # dB/dR as a vector
    d_z = gradB @ e_z   # dB/dZ
    db_r = np.array([e_r @ d_r, e_r @ d_z])
    db_phi = np.array([e_phi @ d_r, e_phi @ d_z])
    db_z = np.array([d_r[2], d_z[2]])

    v = np.array([r * b_r / b_phi, r * b_z / b_phi])
    jac = np.empty((2, 2))
    jac[0, 0] = b_r / b_phi + r * (db_r[0] / b_phi - b_r * db_phi[0] / b_phi**2)
    jac[0, 1] = r * (db_r[1] / b_phi - b_r * db_phi[1] / b_phi**2)
    jac[1, 0] = b_z / b_phi + r * (db_z[0] / b_phi - b_z * db_phi[0] / b_phi**2)
    jac[1, 1] = r * (db_z[1] / b_phi - b_z * db_phi[1] / b_phi**2)
    return v, jac


def _integrate(field_obj, y0, phi0, phi1, config, t_eval=None):
    sol = solve_ivp(
        lambda phi, y: _rhs(field_obj, phi, y),
        (phi0, phi1), np.asarray(y0, dtype=float),
        method="DOP853", rtol=config._step_tolerance, atol=config._step_tolerance,
        t_eval=t_eval, dense_output=False,
    )
    if not sol.success:
        raise FieldLineError(f"field-line integration failed: {sol.message}")
    return sol


def trace_fieldline(field_obj, start_rz, phi_span, config: TraceConfig,
                    n_samples: int = 128):
    """Integrate one field line over phi_span; returns (phis, rz samples)."""
    phi0, phi1 = phi_span
    phis = np.linspace(phi0, phi1, n_samples)
    sol = _integrate(field_obj, start_rz, phi0, phi1, config, t_eval=phis)
    return phis, sol.y.T


def poincare_map(field_obj, y0, config: TraceConfig):
    """Full-turn return map from the phi = plane_phi plane."""
    sol = _integrate(field_obj, y0, config.plane_phi, config.plane_phi + TWO_PI, config)
    return sol.y[:, -1]


def tangent_map_fd(field_obj, y0, config: TraceConfig, step: float | None = None):
    """Full-turn tangent map by central differences of two nearby field lines."""
    if step is None:
        step = config.fd_step_rel * max(abs(y0[0]), 1.0)
    m = np.empty((2, 2))
    for j in range(2):
        dy = np.zeros(2)
        dy[j] = step
        plus = poincare_map(field_obj, np.asarray(y0) + dy, config)
        minus = poincare_map(field_obj, np.asarray(y0) - dy, config)
        m[:, j] = (plus - minus) / (2.0 * step)
    return m


def tangent_map_variational(field_obj, y0, config: TraceConfig):
    """Full-turn tangent map from joint integration of the variational system.

    State is (R, Z, M11, M12, M21, M22, w) where w accumulates the continuous
    rotation angle of the tangent vector v = M @ (1, 0), removing the mod-1
    ambiguity of the eigenvalue rotation angle.
    """
    def rhs(phi, state):
        y = state[:2]
        m = state[2:6].reshape(2, 2)
        v, jac = _rhs_with_jacobian(field_obj, phi, y)
        dm = jac @ m
        vec = m[:, 0]
        vdot = dm[:, 0]
        norm2 = vec @ vec
        dwind = (vec[0] * vdot[1] - vec[1] * vdot[0]) / norm2
        return np.concatenate([v, dm.ravel(), [dwind]])

    state0 = np.concatenate([np.asarray(y0, dtype=float), [1.0, 0.0, 0.0, 1.0, 0.0]])
    sol = solve_ivp(
        rhs, (config.plane_phi, config.plane_phi + TWO_PI), state0,
        method="DOP853", rtol=config._step_tolerance, atol=config._step_tolerance,
    )
    if not sol.success:
        raise FieldLineError(f"variational integration failed: {sol.message}")
    final = sol.y[:, -1]
    m = final[2:6].reshape(2, 2)
    winding = float(final[6])
    return m, winding


def iota_from_tangent_map(m: np.ndarray, winding: float) -> float:
    """Rotation number of the full-turn map, branch-tracked by the winding.

    The fractional rotation angle comes from the eigenvalues of M; the
    accumulated winding selects the sign and the integer number of turns.
    """
    tr = float(np.trace(m))
    if abs(tr) > 2.0 + 1e-9:
        raise RotationalTransformError(
            f"tangent map is hyperbolic (|trace| = {abs(tr):.6f} > 2)",
            state={"tangent_map": m.tolist(), "trace": tr},
        )
    omega = float(np.arccos(np.clip(0.5 * tr, -1.0, 1.0)))  # in [0, pi]
    base = winding / TWO_PI
    k = np.arange(np.floor(base) - 1, np.ceil(base) + 2)
    candidates = np.concatenate([k + omega / TWO_PI, k - omega / TWO_PI])
    return float(candidates[np.argmin(np.abs(candidates - base))])


def find_axis(field_obj, guess_rz, config: TraceConfig, n_samples: int = 128) -> AxisResult:
    """Damped Newton iteration on P(y) - y with a finite-difference Jacobian.

    Steps are capped and backtracked on the residual norm, so a rough
    Jacobian far from the fixed point cannot throw the iterate out of the
    field-line basin.
    """
    y = np.asarray(guess_rz, dtype=float).copy()
    trail = [y.copy()]
    f = poincare_map(field_obj, y, config) - y
    residual = float(np.linalg.norm(f))
    for it in range(config.max_newton_iters + 1):
        if residual < config.newton_tolerance:
            phis, rz = trace_fieldline(field_obj, y, (config.plane_phi,
                                       config.plane_phi + TWO_PI), config, n_samples)
            return AxisResult(R0=float(y[0]), Z0=float(y[1]), residual=residual,
                              newton_iterations=it, phis=phis, rz=rz)
        if it == config.max_newton_iters:
            break
        jac = tangent_map_fd(field_obj, y, config) - np.eye(2)
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise AxisNotFoundError(
                "singular Newton system while searching for the axis",
                state={"trail": [t.tolist() for t in trail]},
            ) from exc
        cap = 0.1 * max(abs(y[0]), 1.0)
        step_norm = float(np.linalg.norm(step))
        if step_norm > cap:
            step *= cap / step_norm
        accepted = False
        damping = 1.0
        for _ in range(8):
            y_try = y + damping * step
            if np.all(np.isfinite(y_try)):
                f_try = poincare_map(field_obj, y_try, config) - y_try
                r_try = float(np.linalg.norm(f_try))
                if r_try < residual:
                    y, f, residual = y_try, f_try, r_try
                    accepted = True
                    break
            damping *= 0.5
        trail.append(y.copy())
        if not accepted:
            break
    raise AxisNotFoundError(
        f"axis Newton iteration did not converge (residual {residual:.3e})",
        state={"trail": [t.tolist() for t in trail], "residual": residual},
    )


def compute_iota(field_obj, axis_rz, config: TraceConfig) -> float:
    """Rotational transform on the axis from the variational tangent map."""
    m, winding = tangent_map_variational(field_obj, axis_rz, config)
    return iota_from_tangent_map(m, winding)
