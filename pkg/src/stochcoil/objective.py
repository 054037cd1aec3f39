"""Per-sample objective: field/gradient mismatch against a fixed target along
the axis, plus coil regularizers, with the full analytic gradient in the
packed variable vector.

Packed layout: all base-coil shape DOFs (documented in geometry), followed by
one scaled current per base coil (current / current_scale, for conditioning).

The mismatch terms see the perturbed coils; the regularizers act on the
unperturbed base design, so perturbation samples enter the objective only
through the field terms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .field import biot_savart, biot_savart_dof_grad
from .geometry import (
    AxisCurve,
    CoilSet,
    FourierCurve,
    QuadratureGrid,
    _basis_matrices,
    curve_eval,
    dof_pullback,
    expand_symmetries,
)
from .perturbation import PerturbationSample


@dataclass(frozen=True)
class TargetField:
    """Fixed axis with target field vectors and gradient matrices at its nodes."""

    axis: AxisCurve
    B: np.ndarray       # (n_a, 3), tesla
    gradB: np.ndarray   # (n_a, 3, 3), tesla/m
    iota: float = 0.0   # target rotational transform, used by diagnostics only

    def __post_init__(self):
        n = self.axis.grid.n
        B = np.asarray(self.B, dtype=float)
        gradB = np.asarray(self.gradB, dtype=float)
        if B.shape != (n, 3) or gradB.shape != (n, 3, 3):
            raise ValueError(
                f"target arrays must have shapes ({n}, 3) and ({n}, 3, 3), "
                f"got {B.shape} and {gradB.shape}"
            )
        B = B.copy()
        gradB = gradB.copy()
        B.flags.writeable = False
        gradB.flags.writeable = False
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "gradB", gradB)


@dataclass(frozen=True)
class ObjectiveWeights:
    """Weights and thresholds for the objective terms; all weights >= 0.

    The default field weights of 1/2 reproduce the plain half-sum-of-squares
    mismatch. target_lengths=None disables the length penalty; the curvature
    and distance penalties are one-sided quadratics and inactive below /
    beyond their thresholds.
    """

    w_field: float = 0.5
    w_gradient: float = 0.5
    w_length: float = 1.0
    target_lengths: tuple | None = None
    w_curvature: float = 1.0
    curvature_limit: float = np.inf
    w_distance: float = 1.0
    distance_limit: float = 0.0
    w_arclength: float = 1.0

    def __post_init__(self):
        for name in ("w_field", "w_gradient", "w_length", "w_curvature",
                     "w_distance", "w_arclength"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.target_lengths is not None:
            object.__setattr__(self, "target_lengths", tuple(float(L) for L in self.target_lengths))


def _base_dof_grad(coilset: CoilSet, grid: QuadratureGrid, grad_points,
                   grad_tangents, grad_second):
    """Map per-base-curve evaluation gradients to the flat shape-DOF vector."""
    pieces = []
    for i, curve in enumerate(coilset.base_curves):
        b0, b1, b2 = _basis_matrices(curve.order, grid.n)
        g = b0.T @ grad_points[i] + b1.T @ grad_tangents[i] + b2.T @ grad_second[i]
        pieces.append(g.T.ravel())
    return np.concatenate(pieces)


class CoilProblem:
    """Assembles g(x, zeta) and its gradient for a coil design problem.

    The instance is immutable apart from caches; evaluation methods are pure
    functions of (x, sample) and safe to call from concurrent workers.
    """

    def __init__(self, coilset: CoilSet, grid: QuadratureGrid, target: TargetField,
                 weights: ObjectiveWeights | None = None, current_scale: float | None = None):
        self.template = coilset
        self.grid = grid
        self.target = target
        self.weights = weights if weights is not None else ObjectiveWeights()
        if current_scale is None:
            mean_abs = float(np.mean(np.abs(coilset.base_currents)))
            current_scale = mean_abs if mean_abs > 0 else 1.0
        self.current_scale = float(current_scale)
        self.n_shape_dofs = coilset.num_shape_dofs()
        self.n_dofs = self.n_shape_dofs + coilset.n_base
        if self.weights.target_lengths is not None and \
                len(self.weights.target_lengths) != coilset.n_base:
            raise ValueError("need one target length per base coil")

    # -- packing ---------------------------------------------------------

    def pack(self, coilset: CoilSet) -> np.ndarray:
        return np.concatenate([
            coilset.shape_dofs(),
            coilset.base_currents / self.current_scale,
        ])

    def unpack(self, x: np.ndarray) -> CoilSet:
        x = np.asarray(x, dtype=float)
        if x.size != self.n_dofs:
            raise ValueError(f"expected {self.n_dofs} dofs, got {x.size}")
        return self.template.with_dofs(
            x[:self.n_shape_dofs],
            x[self.n_shape_dofs:] * self.current_scale,
        )

    def initial_guess(self) -> np.ndarray:
        return self.pack(self.template)

    def zero_sample(self) -> PerturbationSample:
        return PerturbationSample.zero(self.template.n_coils, self.grid.n)

    # -- field mismatch ----------------------------------------------------

    def _perturbed_field(self, coilset, sample):
        phys = expand_symmetries(coilset, self.grid)
        if sample is None:
            pts, tans = phys.points, phys.tangents
        else:
            pts = phys.points + sample.values
            tans = phys.tangents + sample.derivs
        ev = biot_savart(pts, tans, phys.currents, self.grid.weight,
                         self.target.axis.points)
        return phys, pts, tans, ev

    def _mismatch_pieces(self, ev):
        wq = self.target.axis.arclength_weights
        dB = ev.B - self.target.B
        dG = ev.gradB - self.target.gradB
        v_field = float(np.sum(wq * np.sum(dB * dB, axis=1)))
        v_grad = float(np.sum(wq * np.sum(dG * dG, axis=(1, 2))))
        return dB, dG, v_field, v_grad

    def _mismatch_grad(self, coilset, phys, pts, tans, vB, vG):
        gp, gt, gI = biot_savart_dof_grad(pts, tans, phys.currents,
                                          self.grid.weight,
                                          self.target.axis.points, vB, vG)
        shape_grad, current_grad = dof_pullback(coilset, self.grid, gp, gt,
                                                grad_currents=gI)
        return np.concatenate([shape_grad, current_grad * self.current_scale])

    def mismatch(self, x, sample):
        """Weighted field + field-gradient mismatch, with gradient."""
        w = self.weights
        coilset = self.unpack(x)
        phys, pts, tans, ev = self._perturbed_field(coilset, sample)
        dB, dG, v_field, v_grad = self._mismatch_pieces(ev)
        wq = self.target.axis.arclength_weights
        vB = 2.0 * w.w_field * wq[:, None] * dB
        vG = 2.0 * w.w_gradient * wq[:, None, None] * dG
        grad = self._mismatch_grad(coilset, phys, pts, tans, vB, vG)
        return w.w_field * v_field + w.w_gradient * v_grad, grad

    def mismatch_terms(self, x, sample):
        """The two mismatch terms separately (for gradient audits)."""
        w = self.weights
        coilset = self.unpack(x)
        phys, pts, tans, ev = self._perturbed_field(coilset, sample)
        dB, dG, v_field, v_grad = self._mismatch_pieces(ev)
        wq = self.target.axis.arclength_weights
        zero_b = np.zeros_like(dB)
        zero_g = np.zeros_like(dG)
        g_field = self._mismatch_grad(coilset, phys, pts, tans,
                                      2.0 * w.w_field * wq[:, None] * dB, zero_g)
        g_grad = self._mismatch_grad(coilset, phys, pts, tans, zero_b,
                                     2.0 * w.w_gradient * wq[:, None, None] * dG)
        return {
            "field_mismatch": (w.w_field * v_field, g_field),
            "gradient_mismatch": (w.w_gradient * v_grad, g_grad),
        }

    # -- regularizers ------------------------------------------------------

    def regularizer_terms(self, x):
        """Each regularizer as (value, gradient); acts on unperturbed coils."""
        w = self.weights
        coilset = self.unpack(x)
        grid = self.grid
        n = grid.n
        wt = grid.weight
        n_base = coilset.n_base

        data = [curve_eval(c, grid) for c in coilset.base_curves]
        speed = [np.linalg.norm(d.tangents, axis=1) for d in data]
        unit_t = [d.tangents / speed[i][:, None] for i, d in enumerate(data)]
        lengths = [float(np.sum(s) * wt) for s in speed]

        terms = {}

        def finish(gp, gt, gs, value):
            shape = _base_dof_grad(coilset, grid, gp, gt, gs)
            return value, np.concatenate([shape, np.zeros(n_base)])

        zeros = lambda: np.zeros((n_base, n, 3))

        # length: w * sum_i (L_i - L0_i)^2
        gp, gt, gs = zeros(), zeros(), zeros()
        value = 0.0
        if w.target_lengths is not None:
            for i in range(n_base):
                diff = lengths[i] - w.target_lengths[i]
                value += w.w_length * diff * diff
                gt[i] = w.w_length * 2.0 * diff * wt * unit_t[i]
        terms["length"] = finish(gp, gt, gs, value)

        # curvature: w * sum_i int max(kappa - kappa0, 0)^2 dl
        gp, gt, gs = zeros(), zeros(), zeros()
        value = 0.0
        if np.isfinite(w.curvature_limit):
            for i in range(n_base):
                s = speed[i]
                cross = np.cross(data[i].tangents, data[i].second_derivs)
                cnorm = np.linalg.norm(cross, axis=1)
                kappa = cnorm / s**3
                excess = np.maximum(kappa - w.curvature_limit, 0.0)
                value += w.w_curvature * float(np.sum(excess**2 * s) * wt)
                active = excess > 0
                if not np.any(active):
                    continue
                chat = np.zeros_like(cross)
                chat[active] = cross[active] / cnorm[active, None]
                # d kappa / dT = (S x chat)/s^3 - 3 kappa T_hat / s ;
                # d kappa / dS = (chat x T)/s^3
                dk_dt = (np.cross(data[i].second_derivs, chat) / s[:, None]**3
                         - 3.0 * (kappa / s)[:, None] * unit_t[i])
                dk_ds = np.cross(chat, data[i].tangents) / s[:, None]**3
                coef = w.w_curvature * wt * (2.0 * excess * s)
                gt[i] += coef[:, None] * dk_dt * active[:, None]
                gs[i] += coef[:, None] * dk_ds * active[:, None]
                gt[i] += w.w_curvature * wt * (excess**2)[:, None] * unit_t[i]
        terms["curvature"] = finish(gp, gt, gs, value)

        # distance: w * sum over physical pairs int int max(dmin - |dx|, 0)^2
        phys = expand_symmetries(coilset, grid)
        value = 0.0
        gp_phys = np.zeros_like(phys.points)
        if w.distance_limit > 0:
            for i in range(phys.n_coils):
                for j in range(i + 1, phys.n_coils):
                    sep = phys.points[i][:, None, :] - phys.points[j][None, :, :]
                    dist = np.linalg.norm(sep, axis=-1)
                    short = np.maximum(w.distance_limit - dist, 0.0)
                    if not np.any(short > 0):
                        continue
                    value += w.w_distance * float(np.sum(short**2)) * wt * wt
                    coef = np.zeros_like(dist)
                    mask = short > 0
                    coef[mask] = -2.0 * short[mask] / dist[mask]
                    pull = w.w_distance * wt * wt * coef[:, :, None] * sep
                    gp_phys[i] += np.sum(pull, axis=1)
                    gp_phys[j] -= np.sum(pull, axis=0)
        shape_dist, _ = dof_pullback(coilset, grid, gp_phys,
                                     np.zeros_like(gp_phys))
        terms["distance"] = (value, np.concatenate([shape_dist, np.zeros(n_base)]))

        # arclength uniformity: w * sum_i int (|Gamma'| - L_i/(2 pi))^2 dtheta
        gp, gt, gs = zeros(), zeros(), zeros()
        value = 0.0
        if w.w_arclength > 0:
            for i in range(n_base):
                s = speed[i]
                t_i = lengths[i] / (2.0 * np.pi)
                dev = s - t_i
                value += w.w_arclength * float(np.sum(dev**2) * wt)
                # through s directly, and through t_i = L_i / (2 pi)
                through_t = np.sum(2.0 * dev) * wt / (2.0 * np.pi)
                gt[i] = w.w_arclength * wt * (2.0 * dev - through_t)[:, None] * unit_t[i]
        terms["arclength"] = finish(gp, gt, gs, value)

        return terms

    def regularizers(self, x):
        """Total regularizer value and gradient."""
        terms = self.regularizer_terms(x)
        value = sum(v for v, _ in terms.values())
        grad = np.sum([g for _, g in terms.values()], axis=0)
        return value, grad

    # -- total ---------------------------------------------------------------

    def objective(self, x, sample):
        """g(x, zeta) and its exact gradient."""
        v_mis, g_mis = self.mismatch(x, sample)
        v_reg, g_reg = self.regularizers(x)
        return v_mis + v_reg, g_mis + g_reg

    def objective_value(self, x, sample):
        """g(x, zeta) only (skips the adjoint pass; used for bulk evaluation)."""
        w = self.weights
        coilset = self.unpack(x)
        _, _, _, ev = self._perturbed_field(coilset, sample)
        _, _, v_field, v_grad = self._mismatch_pieces(ev)
        v_reg = sum(v for v, _ in self.regularizer_terms(x).values())
        return w.w_field * v_field + w.w_gradient * v_grad + v_reg


# -- target-field serialization -------------------------------------------
# JSON document: {axis: {order, coefficients}, n_axis_nodes, B_QS, gradB_QS
# (3x3 row-major per node), iota_target}.

def target_to_dict(target: TargetField) -> dict:
    return {
        "axis": {
            "order": target.axis.curve.order,
            "coefficients": target.axis.curve.dofs().tolist(),
        },
        "n_axis_nodes": target.axis.grid.n,
        "B_QS": target.B.tolist(),
        "gradB_QS": target.gradB.reshape(-1, 9).tolist(),
        "iota_target": float(target.iota),
    }


def target_from_dict(doc: dict) -> TargetField:
    curve = FourierCurve.from_dofs(int(doc["axis"]["order"]),
                                   np.asarray(doc["axis"]["coefficients"]))
    n = int(doc["n_axis_nodes"])
    axis = AxisCurve(curve, QuadratureGrid(n))
    B = np.asarray(doc["B_QS"], dtype=float)
    gradB = np.asarray(doc["gradB_QS"], dtype=float).reshape(n, 3, 3)
    return TargetField(axis=axis, B=B, gradB=gradB, iota=float(doc["iota_target"]))


def save_target(path, target: TargetField) -> None:
    Path(path).write_text(json.dumps(target_to_dict(target), indent=2) + "\n")


def load_target(path) -> TargetField:
    return target_from_dict(json.loads(Path(path).read_text()))
