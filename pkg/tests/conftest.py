"""Shared builders: small modular coil sets on a torus, axis curves, and
targets generated from reference coil fields."""

import numpy as np
import pytest

from stochcoil.field import biot_savart
from stochcoil.geometry import (
    AxisCurve,
    CoilSet,
    FourierCurve,
    QuadratureGrid,
    expand_symmetries,
)
from stochcoil.objective import TargetField


def modular_coil(phi_c, major_radius, minor_radius, order=1):
    """Planar circular coil at toroidal angle phi_c, plane containing the z-axis."""
    coeffs = np.zeros((3, 2 * order + 1))
    c, s = np.cos(phi_c), np.sin(phi_c)
    coeffs[0, 0] = major_radius * c
    coeffs[1, 0] = major_radius * s
    coeffs[0, 1] = minor_radius * c   # x cos term
    coeffs[1, 1] = minor_radius * s   # y cos term
    coeffs[2, 2] = minor_radius       # z sin term
    return FourierCurve(order, coeffs)


def make_coilset(n_base=2, n_fp=2, stellarator_symmetric=True, order=2,
                 major_radius=1.0, minor_radius=0.45, current=1e5, wobble=0.0,
                 seed=None):
    """Modular coils spread over half a field period, optionally perturbed.

    ``wobble`` adds seeded random Fourier content of that magnitude on top of
    the planar circles, giving a generic non-planar configuration.
    """
    span = 2 * np.pi / n_fp / (2 if stellarator_symmetric else 1)
    rng = np.random.default_rng(seed if seed is not None else 1234)
    curves = []
    for i in range(n_base):
        phi_c = span * (i + 0.5) / n_base
        base = modular_coil(phi_c, major_radius, minor_radius, order)
        coeffs = base.coeffs.copy()
        if wobble > 0:
            coeffs += rng.normal(0.0, wobble, coeffs.shape)
        curves.append(FourierCurve(order, coeffs))
    currents = np.full(n_base, current)
    return CoilSet(tuple(curves), currents, n_fp=n_fp,
                   stellarator_symmetric=stellarator_symmetric)


def rotating_ellipse_coilset(n_base=3, n_fp=2, major_radius=1.0, a=0.25, b=0.55,
                             current=1e5, gamma_rate=1.0):
    """Elliptical modular coils whose cross-section rotates gamma_rate half
    turns per field period; produces a vacuum field with nonzero rotational
    transform."""
    span = 2 * np.pi / n_fp / 2
    curves = []
    for i in range(n_base):
        phi = span * (i + 0.5) / n_base
        gamma = gamma_rate * n_fp * phi / 2
        cg, sg = np.cos(gamma), np.sin(gamma)
        cp, sp = np.cos(phi), np.sin(phi)
        coeffs = np.zeros((3, 3))
        coeffs[0, 0] = major_radius * cp
        coeffs[1, 0] = major_radius * sp
        coeffs[0, 1] = a * cg * cp
        coeffs[1, 1] = a * cg * sp
        coeffs[2, 1] = a * sg
        coeffs[0, 2] = -b * sg * cp
        coeffs[1, 2] = -b * sg * sp
        coeffs[2, 2] = b * cg
        curves.append(FourierCurve(1, coeffs))
    return CoilSet(tuple(curves), np.full(n_base, current), n_fp=n_fp,
                   stellarator_symmetric=True)


def circular_axis(radius=1.0, n_nodes=32, order=1):
    return AxisCurve(FourierCurve.circle(radius, order), QuadratureGrid(n_nodes))


def target_from_coils(coilset, axis, grid, iota=0.4):
    """Target field taken from the Biot-Savart field of a reference coil set."""
    phys = expand_symmetries(coilset, grid)
    ev = biot_savart(phys.points, phys.tangents, phys.currents, grid.weight,
                     axis.points)
    return TargetField(axis=axis, B=ev.B, gradB=ev.gradB, iota=iota)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
