import numpy as np
import pytest

from stochcoil.geometry import FourierCurve, QuadratureGrid, curve_geometry
from stochcoil.objective import (
    CoilProblem,
    ObjectiveWeights,
    TargetField,
    load_target,
    save_target,
    target_from_dict,
    target_to_dict,
)
from stochcoil.perturbation import PerturbationKernel, draw_samples

from conftest import circular_axis, make_coilset, target_from_coils

GRID = QuadratureGrid(16)


def make_problem(weights=None, coil_seed=8, target_seed=21, n_axis=12,
                 current_scale=None):
    coilset = make_coilset(n_base=2, n_fp=2, stellarator_symmetric=True,
                           order=2, wobble=0.02, seed=coil_seed)
    reference = make_coilset(n_base=2, n_fp=2, stellarator_symmetric=True,
                             order=2, wobble=0.03, seed=target_seed)
    axis = circular_axis(radius=1.0, n_nodes=n_axis)
    target = target_from_coils(reference, axis, GRID)
    return CoilProblem(coilset, GRID, target, weights, current_scale=current_scale)


def sample_for(problem, sigma=1e-2, seed=5):
    kernel = PerturbationKernel(sigma=sigma, length_scale=0.4 * np.pi)
    return draw_samples(kernel, problem.grid, problem.template.n_coils,
                        seed, 1)[0]


def fd_check(value_fn, grad, x, indices, rng, h=1e-6, tol=1e-6):
    scale = np.abs(grad).max()
    for idx in indices:
        step = h * max(1.0, abs(x[idx]))
        xp, xm = x.copy(), x.copy()
        xp[idx] += step
        xm[idx] -= step
        fd = (value_fn(xp) - value_fn(xm)) / (2 * step)
        denom = max(abs(fd), abs(grad[idx]), 1e-6 * scale)
        assert abs(fd - grad[idx]) / denom < tol, f"dof {idx}"


class TestMismatch:
    def test_self_target_is_zero(self):
        coilset = make_coilset(n_base=2, n_fp=2, stellarator_symmetric=True,
                               order=2, wobble=0.02, seed=8)
        axis = circular_axis(n_nodes=12)
        target = target_from_coils(coilset, axis, GRID)
        problem = CoilProblem(coilset, GRID, target)
        value, grad = problem.mismatch(problem.initial_guess(), None)
        assert value == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_zero_sample_matches_none_bitwise(self):
        problem = make_problem()
        x = problem.initial_guess()
        v0, g0 = problem.mismatch(x, None)
        v1, g1 = problem.mismatch(x, problem.zero_sample())
        assert v0 == v1
        np.testing.assert_array_equal(g0, g1)

    def test_gradient_matches_finite_differences(self, rng):
        problem = make_problem()
        x = problem.initial_guess()
        sample = sample_for(problem)
        _, grad = problem.mismatch(x, sample)
        n_shape = problem.n_shape_dofs
        picks = list(rng.choice(n_shape, size=20, replace=False))
        picks += list(range(n_shape, x.size))  # all currents
        fd_check(lambda z: problem.mismatch(z, sample)[0], grad, x, picks, rng)

    def test_permutation_invariance(self):
        problem = make_problem()
        x = problem.initial_guess()
        coilset = problem.template
        swapped = type(coilset)(
            (coilset.base_curves[1], coilset.base_curves[0]),
            coilset.base_currents[::-1],
            coilset.n_fp, coilset.stellarator_symmetric,
        )
        problem_swapped = CoilProblem(swapped, GRID, problem.target,
                                      problem.weights,
                                      current_scale=problem.current_scale)
        v1, _ = problem.mismatch(x, None)
        v2, _ = problem_swapped.mismatch(problem_swapped.initial_guess(), None)
        assert v1 == pytest.approx(v2, rel=1e-14)


class TestRegularizers:
    def test_uniform_circle_all_terms_zero(self):
        # circle at uniform speed, generous thresholds, well-separated coils
        coilset = make_coilset(n_base=2, n_fp=2, stellarator_symmetric=True,
                               minor_radius=0.3)
        axis = circular_axis(n_nodes=8)
        lengths = [curve_geometry(c, GRID).length for c in coilset.base_curves]
        weights = ObjectiveWeights(
            target_lengths=lengths, curvature_limit=1.0 / 0.3 + 0.1,
            distance_limit=0.05,
        )
        target = target_from_coils(coilset, axis, GRID)
        problem = CoilProblem(coilset, GRID, target, weights)
        terms = problem.regularizer_terms(problem.initial_guess())
        for name, (value, grad) in terms.items():
            assert value == pytest.approx(0.0, abs=1e-22), name
            np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_arclength_zero_for_constant_speed(self, rng):
        # any constant-speed curve has |Gamma'| identically L/(2 pi)
        radius = 0.7 + rng.uniform(0, 1)
        coilset = make_coilset(n_base=1, n_fp=1, stellarator_symmetric=False,
                               minor_radius=radius)
        axis = circular_axis(n_nodes=8)
        target = target_from_coils(coilset, axis, GRID)
        problem = CoilProblem(coilset, GRID, target)
        value, grad = problem.regularizer_terms(problem.initial_guess())["arclength"]
        assert value < 1e-24
        np.testing.assert_allclose(grad, 0.0, atol=1e-13)

    def test_nonnegativity_and_zero_iff_all_zero(self):
        problem = make_problem(weights=ObjectiveWeights(
            target_lengths=[5.0, 5.0], curvature_limit=0.5, distance_limit=0.4,
        ))
        terms = problem.regularizer_terms(problem.initial_guess())
        total = sum(v for v, _ in terms.values())
        assert all(v >= 0.0 for v, _ in terms.values())
        assert total > 0.0

    def test_gradients_match_finite_differences(self, rng):
        # thresholds placed so the one-sided penalties straddle activation
        coilset = make_coilset(n_base=2, n_fp=2, stellarator_symmetric=True,
                               order=2, wobble=0.04, seed=13)
        kappas = np.concatenate([
            curve_geometry(c, GRID).curvature for c in coilset.base_curves
        ])
        assert kappas.min() < np.median(kappas) < kappas.max()
        weights = ObjectiveWeights(
            w_length=0.7, target_lengths=[2.5, 2.7],
            w_curvature=1.3, curvature_limit=float(np.median(kappas)),
            w_distance=2.0, distance_limit=0.35,
            w_arclength=0.9,
        )
        axis = circular_axis(n_nodes=8)
        target = target_from_coils(coilset, axis, GRID)
        problem = CoilProblem(coilset, GRID, target, weights)
        x = problem.initial_guess()
        terms = problem.regularizer_terms(x)
        assert terms["curvature"][0] > 0 and terms["distance"][0] > 0
        n_shape = problem.n_shape_dofs
        for name, (_, grad) in terms.items():
            picks = rng.choice(n_shape, size=15, replace=False)
            fd_check(lambda z, n=name: problem.regularizer_terms(z)[n][0],
                     grad, x, picks, rng, h=1e-7)


class TestTotalObjective:
    def test_all_weights_zero_self_target(self):
        coilset = make_coilset(n_base=2, n_fp=2, stellarator_symmetric=True,
                               order=2, wobble=0.02, seed=8)
        axis = circular_axis(n_nodes=12)
        target = target_from_coils(coilset, axis, GRID)
        weights = ObjectiveWeights(w_field=1.0, w_gradient=0.0, w_length=0.0,
                                   w_curvature=0.0, w_distance=0.0,
                                   w_arclength=0.0)
        problem = CoilProblem(coilset, GRID, target, weights)
        value, _ = problem.objective(problem.initial_guess(), None)
        assert value == 0.0

    def test_nonnegative(self, rng):
        problem = make_problem()
        x = problem.initial_guess()
        x[: problem.n_shape_dofs] += rng.normal(0, 0.05, problem.n_shape_dofs)
        sample = sample_for(problem)
        assert problem.objective_value(x, sample) >= 0.0

    def test_value_only_matches_value_grad(self):
        problem = make_problem()
        x = problem.initial_guess()
        sample = sample_for(problem)
        v1, _ = problem.objective(x, sample)
        v2 = problem.objective_value(x, sample)
        assert v1 == v2

    def test_total_gradient_matches_finite_differences(self, rng):
        weights = ObjectiveWeights(target_lengths=[2.5, 2.7],
                                   curvature_limit=2.2, distance_limit=0.3)
        problem = make_problem(weights=weights)
        x = problem.initial_guess()
        sample = sample_for(problem)
        value, grad = problem.objective(x, sample)
        assert value > 0
        picks = list(rng.choice(problem.n_shape_dofs, size=20, replace=False))
        picks += list(range(problem.n_shape_dofs, x.size))
        fd_check(lambda z: problem.objective_value(z, sample), grad, x,
                 picks, rng)


class TestTargetSerialization:
    def test_round_trip(self, tmp_path):
        problem = make_problem()
        path = tmp_path / "target.json"
        save_target(path, problem.target)
        loaded = load_target(path)
        np.testing.assert_array_equal(loaded.B, problem.target.B)
        np.testing.assert_array_equal(loaded.gradB, problem.target.gradB)
        assert loaded.iota == problem.target.iota
        np.testing.assert_array_equal(loaded.axis.points, problem.target.axis.points)

    def test_document_keys(self):
        problem = make_problem()
        doc = target_to_dict(problem.target)
        assert set(doc) == {"axis", "n_axis_nodes", "B_QS", "gradB_QS",
                            "iota_target"}
        again = target_from_dict(doc)
        np.testing.assert_array_equal(again.gradB, problem.target.gradB)
