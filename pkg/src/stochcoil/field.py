"""Biot-Savart evaluation of B and grad(B) from filamentary coils, with the
exact reverse-mode derivative of the discrete sums.

The discrete field of a coil with current I, nodes p_m and tangents t_m is

    B(x) = (mu0 I / 4 pi) * (2 pi / n) * sum_m t_m x (x - p_m) / |x - p_m|^3

and grad(B)[a, k] = dB_a/dx_k is its analytic spatial derivative. All
quantities SI; mu0 = 4 pi 1e-7 T m / A.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularEvaluationError

MU0 = 4.0e-7 * np.pi
MU0_OVER_4PI = 1.0e-7
MIN_EVAL_DISTANCE = 1e-6  # filament model is singular on the curve

# Levi-Civita tensor, used by the adjoint contractions.
_EPS = np.zeros((3, 3, 3))
_EPS[0, 1, 2] = _EPS[1, 2, 0] = _EPS[2, 0, 1] = 1.0
_EPS[0, 2, 1] = _EPS[2, 1, 0] = _EPS[1, 0, 2] = -1.0


@dataclass(frozen=True)
class FieldEvaluation:
    B: np.ndarray      # (n_eval, 3), tesla
    gradB: np.ndarray  # (n_eval, 3, 3), gradB[q, a, k] = dB_a/dx_k, tesla/m


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product over the last axis; faster than np.cross for these shapes."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def _skew(t: np.ndarray) -> np.ndarray:
    """Cross-product matrices: _skew(t)[..., a, k] = (t x e_k)_a."""
    out = np.zeros(t.shape[:-1] + (3, 3))
    tx, ty, tz = t[..., 0], t[..., 1], t[..., 2]
    out[..., 0, 1] = -tz
    out[..., 0, 2] = ty
    out[..., 1, 0] = tz
    out[..., 1, 2] = -tx
    out[..., 2, 0] = -ty
    out[..., 2, 1] = tx
    return out


def _geometry_kernels(points, eval_points):
    """Separations, inverse powers of the distance, and the min distance."""
    r = eval_points[None, None, :, :] - points[:, :, None, :]  # (C, M, Q, 3)
    dist = np.linalg.norm(r, axis=-1)
    min_dist = float(dist.min())
    if min_dist < MIN_EVAL_DISTANCE:
        raise SingularEvaluationError(
            f"evaluation point within {min_dist:.3e} m of a coil node "
            f"(limit {MIN_EVAL_DISTANCE:.0e} m)",
            state={"min_distance": min_dist},
        )
    dist2 = dist * dist
    inv3 = dist**-3
    inv5 = inv3 / dist2
    return r, dist2, inv3, inv5


def _per_coil_sums(points, tangents, eval_points):
    """Unit-strength per-coil sums of the field and field-gradient kernels."""
    r, _, inv3, inv5 = _geometry_kernels(points, eval_points)
    cross = _cross(tangents[:, :, None, :], r)           # (C, M, Q, 3)
    skew = _skew(tangents)                                 # (C, M, 3, 3)
    b_sum = np.einsum("cmqa,cmq->cqa", cross, inv3)
    g_sum = np.einsum("cmak,cmq->cqak", skew, inv3)
    g_sum -= 3.0 * np.einsum("cmqa,cmqk,cmq->cqak", cross, r, inv5)
    return b_sum, g_sum


def biot_savart_b(points, tangents, currents, weight, eval_points) -> np.ndarray:
    """Field only (no gradient); cheaper inner loop for field-line tracing."""
    points = np.asarray(points, dtype=float)
    tangents = np.asarray(tangents, dtype=float)
    currents = np.asarray(currents, dtype=float)
    eval_points = np.atleast_2d(np.asarray(eval_points, dtype=float))
    r, _, inv3, _ = _geometry_kernels(points, eval_points)
    cross = _cross(tangents[:, :, None, :], r)
    b_sum = np.einsum("cmqa,cmq->cqa", cross, inv3)
    return MU0_OVER_4PI * weight * np.einsum("c,cqa->qa", currents, b_sum)


def biot_savart(points, tangents, currents, weight, eval_points) -> FieldEvaluation:
    """Field and field gradient at ``eval_points`` from all coils.

    points/tangents: (n_coils, n, 3) perturbed physical coil data;
    currents: (n_coils,) signed amperes; weight: quadrature weight 2*pi/n;
    eval_points: (n_eval, 3). Linear in each current; raises
    SingularEvaluationError if any eval point is closer than 1e-6 m to a
    coil node.
    """
    points = np.asarray(points, dtype=float)
    tangents = np.asarray(tangents, dtype=float)
    currents = np.asarray(currents, dtype=float)
    eval_points = np.atleast_2d(np.asarray(eval_points, dtype=float))
    b_sum, g_sum = _per_coil_sums(points, tangents, eval_points)
    scale = MU0_OVER_4PI * weight
    B = scale * np.einsum("c,cqa->qa", currents, b_sum)
    gradB = scale * np.einsum("c,cqak->qak", currents, g_sum)
    return FieldEvaluation(B=B, gradB=gradB)


def biot_savart_dof_grad(points, tangents, currents, weight, eval_points,
                         grad_B, grad_gradB):
    """Adjoint of ``biot_savart``: pull dJ/dB, dJ/dgradB back to coil data.

    Returns (grad_points, grad_tangents, grad_currents) with shapes matching
    the inputs. Exact reverse-mode derivative of the discrete sums, so it
    composes with the geometry pullback; the perturbation enters the points
    additively and therefore shares this Jacobian.
    """
    points = np.asarray(points, dtype=float)
    tangents = np.asarray(tangents, dtype=float)
    currents = np.asarray(currents, dtype=float)
    eval_points = np.atleast_2d(np.asarray(eval_points, dtype=float))
    vb = np.asarray(grad_B, dtype=float)
    vg = np.asarray(grad_gradB, dtype=float)
    n_eval = eval_points.shape[0]
    if vb.shape != (n_eval, 3) or vg.shape != (n_eval, 3, 3):
        raise ValueError(
            f"upstream gradients must have shapes ({n_eval}, 3) and "
            f"({n_eval}, 3, 3), got {vb.shape} and {vg.shape}"
        )

    r, dist2, inv3, inv5 = _geometry_kernels(points, eval_points)
    inv7 = inv5 / dist2
    cross = _cross(tangents[:, :, None, :], r)
    skew = _skew(tangents)
    kappa = MU0_OVER_4PI * weight * currents  # (C,)

    # dJ/dI needs the unit-strength per-coil contributions.
    b_sum = np.einsum("cmqa,cmq->cqa", cross, inv3)
    g_sum = np.einsum("cmak,cmq->cqak", skew, inv3)
    g_sum -= 3.0 * np.einsum("cmqa,cmqk,cmq->cqak", cross, r, inv5)
    grad_currents = MU0_OVER_4PI * weight * (
        np.einsum("qa,cqa->c", vb, b_sum) + np.einsum("qak,cqak->c", vg, g_sum)
    )

    # Tangent gradient: u3*(r x vB) + u3*axial(vG) - 3*u5*(r x (vG r)).
    wv = np.einsum("qak,cmqk->cmqa", vg, r)              # vG @ r per point
    axial = np.einsum("abk,qak->qb", _EPS, vg)           # sum_ak eps_abk vG_ak
    r_x_vb = _cross(r, vb[None, None, :, :])
    r_x_wv = _cross(r, wv)
    grad_tangents = (
        np.einsum("cmq,cmqb->cmb", inv3, r_x_vb)
        + np.einsum("cmq,qb->cmb", inv3, axial)
        - 3.0 * np.einsum("cmq,cmqb->cmb", inv5, r_x_wv)
    )

    # Separation gradient (dJ/dr); dJ/dp = -sum_q dJ/dr.
    vb_x_t = _cross(vb[None, None, :, :], tangents[:, :, None, :])
    vb_dot_cross = np.einsum("qa,cmqa->cmq", vb, cross)
    vg_dot_skew = np.einsum("qak,cmak->cmq", vg, skew)
    skewT_wv = np.einsum("cmaj,cmqa->cmqj", skew, wv)
    vgT_cross = np.einsum("qaj,cmqa->cmqj", vg, cross)
    cross_dot_wv = np.einsum("cmqa,cmqa->cmq", cross, wv)
    grad_r = (
        inv3[..., None] * vb_x_t
        - 3.0 * (inv5 * (vb_dot_cross + vg_dot_skew))[..., None] * r
        - 3.0 * inv5[..., None] * (skewT_wv + vgT_cross)
        + 15.0 * (inv7 * cross_dot_wv)[..., None] * r
    )
    grad_points = -np.einsum("cmqj->cmj", grad_r)

    grad_points *= kappa[:, None, None]
    grad_tangents *= kappa[:, None, None]
    return grad_points, grad_tangents, grad_currents


class BiotSavartField:
    """Static field of a (possibly perturbed) physical coil array.

    Satisfies the small protocol the tracing module needs: ``B(x)`` and
    ``B_and_gradB(x)`` for x of shape (m, 3).
    """

    def __init__(self, points, tangents, currents, weight):
        self.points = np.asarray(points, dtype=float)
        self.tangents = np.asarray(tangents, dtype=float)
        self.currents = np.asarray(currents, dtype=float)
        self.weight = float(weight)

    def B_and_gradB(self, x):
        ev = biot_savart(self.points, self.tangents, self.currents, self.weight, x)
        return ev.B, ev.gradB

    def B(self, x):
        return biot_savart_b(self.points, self.tangents, self.currents, self.weight, x)


class PurelyToroidalField:
    """Analytic diagnostic field B = B0 * (R0 / R) * e_phi (zero iota)."""

    def __init__(self, b0: float = 1.0, r0: float = 1.0):
        self.b0 = b0
        self.r0 = r0

    def B_and_gradB(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xx, yy = x[:, 0], x[:, 1]
        r2 = xx**2 + yy**2
        c = self.b0 * self.r0
        B = np.zeros_like(x)
        B[:, 0] = -c * yy / r2
        B[:, 1] = c * xx / r2
        gradB = np.zeros((x.shape[0], 3, 3))
        # d/dx(-y/r2) = 2xy/r2^2 ; d/dy(-y/r2) = (y^2 - x^2)/r2^2
        gradB[:, 0, 0] = 2.0 * c * xx * yy / r2**2
        gradB[:, 0, 1] = c * (yy**2 - xx**2) / r2**2
        gradB[:, 1, 0] = c * (yy**2 - xx**2) / r2**2
        gradB[:, 1, 1] = -2.0 * c * xx * yy / r2**2
        return B, gradB

    def B(self, x):
        return self.B_and_gradB(x)[0]
