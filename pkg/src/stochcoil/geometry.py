"""Closed-curve geometry: truncated Fourier curves, periodic quadrature grids,
and expansion of a base coil set to the full physical coil array via discrete
rotations and stellarator symmetry.

DOF layout (fixed; shared by the optimizer, serialization, and tests): per
curve, per coordinate j in (x, y, z), coefficients are ordered

    [c_{j,0}, c_{j,1}, s_{j,1}, ..., c_{j,order}, s_{j,order}]

and the three coordinate blocks are concatenated, giving 3*(2*order+1)
numbers per curve. Shape DOFs of base coil 0 come first, then coil 1, etc.;
the objective layer appends scaled currents after all shape DOFs.

Physical coil ordering: index p = s*(n_fp*n_base) + m*n_base + i, where i is
the base coil, m the field-period rotation and s in {0, 1} the stellarator
reflection, so entries 0..n_base-1 are the base coils unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DegenerateCurveError

TWO_PI = 2.0 * np.pi

# Reflection (x, y, z) -> (x, -y, -z); composed with parameter reversal and a
# negated current this maps a coil onto its stellarator-symmetric image.
FLIP_YZ = np.diag([1.0, -1.0, -1.0])

DEGENERATE_SPEED = 1e-12


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class QuadratureGrid:
    """Uniform periodic grid theta_i = 2*pi*i/n with trapezoid weight 2*pi/n."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"grid needs at least one node, got n={self.n}")

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n) * (TWO_PI / self.n)

    @property
    def weight(self) -> float:
        return TWO_PI / self.n


@lru_cache(maxsize=None)
def _basis_matrices(order: int, n: int):
    """Trig basis and its first two theta-derivatives on the uniform grid.

    Columns follow the per-coordinate DOF layout [1, cos(t), sin(t),
    cos(2t), sin(2t), ...]; rows are grid nodes.
    """
    theta = np.arange(n) * (TWO_PI / n)
    b0 = np.empty((n, 2 * order + 1))
    b1 = np.zeros((n, 2 * order + 1))
    b2 = np.zeros((n, 2 * order + 1))
    b0[:, 0] = 1.0
    for l in range(1, order + 1):
        ct, st = np.cos(l * theta), np.sin(l * theta)
        b0[:, 2 * l - 1] = ct
        b0[:, 2 * l] = st
        b1[:, 2 * l - 1] = -l * st
        b1[:, 2 * l] = l * ct
        b2[:, 2 * l - 1] = -l * l * ct
        b2[:, 2 * l] = -l * l * st
    b0.flags.writeable = False
    b1.flags.writeable = False
    b2.flags.writeable = False
    return b0, b1, b2


@dataclass(frozen=True)
class FourierCurve:
    """Closed space curve given by a truncated Fourier series per coordinate.

    ``coeffs`` has shape (3, 2*order+1) with rows x, y, z in the documented
    DOF layout. Instances are immutable; evaluation is exact trigonometric
    evaluation of the series and its analytic derivatives.
    """

    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.shape != (3, 2 * self.order + 1):
            raise ValueError(
                f"coeffs shape {coeffs.shape} does not match order {self.order}"
            )
        coeffs = coeffs.copy()
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def num_dofs(self) -> int:
        return 3 * (2 * self.order + 1)

    def dofs(self) -> np.ndarray:
        """Flat DOF vector (length 3*(2*order+1)) in the documented layout."""
        return self.coeffs.ravel().copy()

    @classmethod
    def from_dofs(cls, order: int, dofs: np.ndarray) -> "FourierCurve":
        dofs = np.asarray(dofs, dtype=float)
        if dofs.size != 3 * (2 * order + 1):
            raise ValueError(
                f"expected {3 * (2 * order + 1)} dofs for order {order}, got {dofs.size}"
            )
        return cls(order, dofs.reshape(3, 2 * order + 1))

    @classmethod
    def circle(cls, radius: float, order: int = 1, center=(0.0, 0.0, 0.0)) -> "FourierCurve":
        """Planar circle of given radius in the x-y plane, uniform speed."""
        coeffs = np.zeros((3, 2 * order + 1))
        coeffs[:, 0] = center
        coeffs[0, 1] = radius  # x: cos
        coeffs[1, 2] = radius  # y: sin
        return cls(order, coeffs)


@dataclass(frozen=True)
class CurveData:
    """Positions and exact parameter-derivatives at the grid nodes (meters)."""

    points: np.ndarray         # (n, 3)
    tangents: np.ndarray       # (n, 3), d/dtheta
    second_derivs: np.ndarray  # (n, 3), d^2/dtheta^2


def curve_eval(curve: FourierCurve, grid: QuadratureGrid) -> CurveData:
    """Evaluate the series and its first two derivatives at the grid nodes.

    Requires grid.n >= 2*order + 1 so every mode is resolved.
    """
    if grid.n < 2 * curve.order + 1:
        raise ValueError(
            f"grid with n={grid.n} cannot resolve a curve of order {curve.order}; "
            f"need n >= {2 * curve.order + 1}"
        )
    b0, b1, b2 = _basis_matrices(curve.order, grid.n)
    c = curve.coeffs.T  # (2*order+1, 3)
    return CurveData(points=b0 @ c, tangents=b1 @ c, second_derivs=b2 @ c)


@dataclass(frozen=True)
class CurveGeometry:
    length: float          # meters
    speed: np.ndarray      # |Gamma'(theta_i)|, (n,)
    curvature: np.ndarray  # (n,), 1/meters


def curve_geometry(curve: FourierCurve, grid: QuadratureGrid) -> CurveGeometry:
    """Length (trapezoid quadrature), arclength speed and curvature at nodes."""
    data = curve_eval(curve, grid)
    speed = np.linalg.norm(data.tangents, axis=1)
    if np.any(speed < DEGENERATE_SPEED):
        raise DegenerateCurveError(
            "curve tangent vanishes at a quadrature node; "
            "the parametrization is degenerate"
        )
    cross = np.cross(data.tangents, data.second_derivs)
    curvature = np.linalg.norm(cross, axis=1) / speed**3
    length = float(np.sum(speed) * grid.weight)
    return CurveGeometry(length=length, speed=speed, curvature=curvature)


@dataclass(frozen=True)
class CoilSet:
    """Base coils with currents plus field-period / stellarator symmetry metadata."""

    base_curves: tuple
    base_currents: np.ndarray
    n_fp: int = 1
    stellarator_symmetric: bool = False

    def __post_init__(self):
        curves = tuple(self.base_curves)
        currents = np.asarray(self.base_currents, dtype=float).copy()
        if len(curves) == 0:
            raise ValueError("coil set needs at least one base coil")
        if currents.shape != (len(curves),):
            raise ValueError(
                f"got {currents.size} currents for {len(curves)} base coils"
            )
        if self.n_fp < 1:
            raise ValueError(f"n_fp must be >= 1, got {self.n_fp}")
        currents.flags.writeable = False
        object.__setattr__(self, "base_curves", curves)
        object.__setattr__(self, "base_currents", currents)

    @property
    def n_base(self) -> int:
        return len(self.base_curves)

    @property
    def n_symmetries(self) -> int:
        return self.n_fp * (2 if self.stellarator_symmetric else 1)

    @property
    def n_coils(self) -> int:
        return self.n_base * self.n_symmetries

    def shape_dofs(self) -> np.ndarray:
        return np.concatenate([c.dofs() for c in self.base_curves])

    def num_shape_dofs(self) -> int:
        return sum(c.num_dofs for c in self.base_curves)

    def with_dofs(self, shape_dofs: np.ndarray, currents: np.ndarray) -> "CoilSet":
        """New coil set with the same symmetry metadata and replaced DOFs."""
        curves = []
        offset = 0
        for c in self.base_curves:
            nd = c.num_dofs
            curves.append(FourierCurve.from_dofs(c.order, shape_dofs[offset:offset + nd]))
            offset += nd
        if offset != len(shape_dofs):
            raise ValueError(f"expected {offset} shape dofs, got {len(shape_dofs)}")
        return CoilSet(tuple(curves), currents, self.n_fp, self.stellarator_symmetric)


@dataclass(frozen=True)
class PhysicalCoils:
    """Point/tangent arrays and signed currents for every physical coil.

    ``transforms[p]`` is the 3x3 linear map applied to base-curve evaluations
    (rotation, composed with the reflection when ``flipped[p]``); flipped
    coils also reverse the parameter, which on the uniform grid is the node
    permutation i -> (n - i) % n.
    """

    points: np.ndarray         # (n_coils, n, 3)
    tangents: np.ndarray       # (n_coils, n, 3)
    second_derivs: np.ndarray  # (n_coils, n, 3)
    currents: np.ndarray       # (n_coils,), signed amperes
    base_index: np.ndarray     # (n_coils,)
    transforms: np.ndarray     # (n_coils, 3, 3)
    flipped: np.ndarray        # (n_coils,) bool

    @property
    def n_coils(self) -> int:
        return self.points.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.points.shape[1]


def _flip_permutation(n: int) -> np.ndarray:
    return (n - np.arange(n)) % n


def expand_symmetries(coilset: CoilSet, grid: QuadratureGrid) -> PhysicalCoils:
    """Expand base coils to the full physical array.

    The reflected image of a base coil is Q @ Gamma(-theta) with
    Q = R_z(2*pi*m/n_fp) @ diag(1, -1, -1), carrying the same current value:
    the parameter reversal flips the circulation sense, which is what makes
    the image drive toroidal field in the same direction as its source coil
    (the physical stellarator symmetry B(Fx) = -F B(x)).
    """
    base = [curve_eval(c, grid) for c in coilset.base_curves]
    n = grid.n
    perm = _flip_permutation(n)
    n_c = coilset.n_coils

    points = np.empty((n_c, n, 3))
    tangents = np.empty((n_c, n, 3))
    second = np.empty((n_c, n, 3))
    currents = np.empty(n_c)
    base_index = np.empty(n_c, dtype=int)
    transforms = np.empty((n_c, 3, 3))
    flipped = np.zeros(n_c, dtype=bool)

    reflections = (False, True) if coilset.stellarator_symmetric else (False,)
    p = 0
    for flip in reflections:
        for m in range(coilset.n_fp):
            rot = rotation_z(TWO_PI * m / coilset.n_fp)
            q = rot @ FLIP_YZ if flip else rot
            for i, data in enumerate(base):
                if flip:
                    points[p] = data.points[perm] @ q.T
                    tangents[p] = -(data.tangents[perm] @ q.T)
                    second[p] = data.second_derivs[perm] @ q.T
                    currents[p] = coilset.base_currents[i]
                else:
                    points[p] = data.points @ q.T
                    tangents[p] = data.tangents @ q.T
                    second[p] = data.second_derivs @ q.T
                    currents[p] = coilset.base_currents[i]
                base_index[p] = i
                transforms[p] = q
                flipped[p] = flip
                p += 1
    return PhysicalCoils(points, tangents, second, currents, base_index, transforms, flipped)


def dof_pullback(coilset: CoilSet, grid: QuadratureGrid, grad_points,
                 grad_tangents, grad_second_derivs=None, grad_currents=None):
    """Pull gradients w.r.t. physical-coil evaluations back to base DOFs.

    Parameters are arrays shaped like the PhysicalCoils fields: (n_coils, n, 3)
    for point/tangent/second-derivative gradients, (n_coils,) for current
    gradients. Returns (shape_grad, current_grad) with shape_grad in the
    documented flat DOF layout. Linear in all gradient inputs; symmetry
    images accumulate into their base coil through the transposed transform.
    """
    n = grid.n
    n_c = coilset.n_coils
    grad_points = np.asarray(grad_points)
    grad_tangents = np.asarray(grad_tangents)
    if grad_points.shape != (n_c, n, 3) or grad_tangents.shape != (n_c, n, 3):
        raise ValueError(
            f"gradient arrays must have shape ({n_c}, {n}, 3), got "
            f"{grad_points.shape} and {grad_tangents.shape}"
        )
    perm = _flip_permutation(n)

    # Accumulate onto base-curve evaluations first.
    acc_p = np.zeros((coilset.n_base, n, 3))
    acc_t = np.zeros((coilset.n_base, n, 3))
    acc_s = np.zeros((coilset.n_base, n, 3))
    current_grad = np.zeros(coilset.n_base)

    reflections = (False, True) if coilset.stellarator_symmetric else (False,)
    p = 0
    for flip in reflections:
        for m in range(coilset.n_fp):
            rot = rotation_z(TWO_PI * m / coilset.n_fp)
            q = rot @ FLIP_YZ if flip else rot
            for i in range(coilset.n_base):
                gp = grad_points[p] @ q
                gt = grad_tangents[p] @ q
                gs = None if grad_second_derivs is None else grad_second_derivs[p] @ q
                if flip:
                    acc_p[i][perm] += gp
                    acc_t[i][perm] -= gt
                    if gs is not None:
                        acc_s[i][perm] += gs
                    if grad_currents is not None:
                        current_grad[i] += grad_currents[p]
                else:
                    acc_p[i] += gp
                    acc_t[i] += gt
                    if gs is not None:
                        acc_s[i] += gs
                    if grad_currents is not None:
                        current_grad[i] += grad_currents[p]
                p += 1

    pieces = []
    for i, curve in enumerate(coilset.base_curves):
        b0, b1, b2 = _basis_matrices(curve.order, n)
        g = b0.T @ acc_p[i] + b1.T @ acc_t[i]
        if grad_second_derivs is not None:
            g = g + b2.T @ acc_s[i]
        pieces.append(g.T.ravel())  # (3, 2*order+1) -> flat, coordinates blocked
    return np.concatenate(pieces), current_grad


@dataclass(frozen=True)
class AxisCurve:
    """Fixed closed curve with its own grid and arclength weights; no DOFs."""

    curve: FourierCurve
    grid: QuadratureGrid
    _data: CurveData = field(init=False, repr=False)
    _weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        data = curve_eval(self.curve, self.grid)
        speed = np.linalg.norm(data.tangents, axis=1)
        if np.any(speed < DEGENERATE_SPEED):
            raise DegenerateCurveError("axis curve has a vanishing tangent")
        weights = speed * self.grid.weight
        weights.flags.writeable = False
        object.__setattr__(self, "_data", data)
        object.__setattr__(self, "_weights", weights)

    @property
    def points(self) -> np.ndarray:
        return self._data.points

    @property
    def arclength_weights(self) -> np.ndarray:
        """Quadrature weights |Gamma_a'(theta_i)| * 2*pi/n for line integrals."""
        return self._weights


# -- serialization ------------------------------------------------------------
# Coil-set JSON document: {n_fp, stellarator_symmetric, coils: [{order,
# coefficients, current}]}. Python's repr-based float serialization is
# shortest-round-trip, so load(save(x)) is bit-exact.

def coilset_to_dict(coilset: CoilSet) -> dict:
    return {
        "n_fp": coilset.n_fp,
        "stellarator_symmetric": coilset.stellarator_symmetric,
        "coils": [
            {
                "order": c.order,
                "coefficients": c.dofs().tolist(),
                "current": float(I),
            }
            for c, I in zip(coilset.base_curves, coilset.base_currents)
        ],
    }


def coilset_from_dict(doc: dict) -> CoilSet:
    curves = []
    currents = []
    for entry in doc["coils"]:
        curves.append(FourierCurve.from_dofs(int(entry["order"]),
                                             np.asarray(entry["coefficients"])))
        currents.append(float(entry["current"]))
    return CoilSet(
        tuple(curves),
        np.array(currents),
        n_fp=int(doc["n_fp"]),
        stellarator_symmetric=bool(doc["stellarator_symmetric"]),
    )


def save_coilset(path, coilset: CoilSet) -> None:
    Path(path).write_text(json.dumps(coilset_to_dict(coilset), indent=2) + "\n")


def load_coilset(path) -> CoilSet:
    return coilset_from_dict(json.loads(Path(path).read_text()))
