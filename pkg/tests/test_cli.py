import json
from pathlib import Path

import numpy as np
import pytest

from stochcoil.cli import (
    build_problem,
    cmd_gradcheck,
    cmd_iota,
    cmd_oos,
    cmd_optimize,
    gaussian_kde_grid,
    load_config,
    main,
)
from stochcoil.errors import ConfigError
from stochcoil.field import BiotSavartField
from stochcoil.geometry import QuadratureGrid, expand_symmetries, save_coilset
from stochcoil.objective import CoilProblem, save_target
from stochcoil.parallel import resolve_workers
from stochcoil.trace import TraceConfig, compute_iota, find_axis

from conftest import (
    circular_axis,
    make_coilset,
    rotating_ellipse_coilset,
    target_from_coils,
)


def write_inputs(tmp_path, coilset=None, n_axis=8, coil_nodes=16):
    coilset = coilset or make_coilset(n_base=2, n_fp=2, stellarator_symmetric=True,
                                      order=2, wobble=0.02, seed=8)
    reference = make_coilset(n_base=2, n_fp=2, stellarator_symmetric=True,
                             order=2, wobble=0.03, seed=21)
    axis = circular_axis(radius=1.0, n_nodes=n_axis)
    target = target_from_coils(reference, axis, QuadratureGrid(coil_nodes))
    coils_path = tmp_path / "coils.json"
    target_path = tmp_path / "target.json"
    save_coilset(coils_path, coilset)
    save_target(target_path, target)
    return coils_path, target_path


def write_config(tmp_path, name="config.json", **overrides):
    coils_path, target_path = write_inputs(tmp_path)
    cfg = {
        "coils": str(coils_path),
        "target": str(target_path),
        "output_dir": str(tmp_path / "run"),
        "coil_nodes": 16,
        "kernel": {"sigma": 1e-2, "length_scale": 0.4 * np.pi},
        "risk": {"mode": "risk_neutral", "n_samples": 3, "master_seed": 5},
        "weights": {"w_curvature": 0.0, "w_distance": 0.0},
        "optimizer": {"max_iters": 12, "multistart_count": 2,
                      "multistart_std": 0.01, "multistart_seed": 2},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=2))
    return path


def snapshot(run_dir, skip=("config.json",)):
    return {
        p.name: p.read_bytes()
        for p in sorted(Path(run_dir).iterdir())
        if p.name not in skip
    }


class TestConfig:
    def test_missing_required_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"coils": "x.json"}))
        with pytest.raises(ConfigError, match="validation failed"):
            load_config(path)

    def test_bad_type(self, tmp_path):
        cfg_path = write_config(tmp_path, risk={"mode": "bold"})
        with pytest.raises(ConfigError):
            load_config(cfg_path)

    def test_exit_code_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["optimize", str(path)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_defaults_filled(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        assert cfg["optimizer"]["memory"] == 20
        assert cfg["oos"]["n_samples"] == 2**14
        assert cfg["risk"]["alpha"] == 0.95

    def test_path_overrides(self, tmp_path):
        cfg_path = write_config(tmp_path)
        cfg = load_config(cfg_path, {"output_dir": str(tmp_path / "elsewhere")})
        assert cfg["output_dir"] == str(tmp_path / "elsewhere")

    def test_grid_too_coarse_is_config_error(self, tmp_path):
        cfg_path = write_config(tmp_path, coil_nodes=3)
        with pytest.raises(ConfigError, match="resolve"):
            build_problem(load_config(cfg_path))

    def test_workers_resolution(self, monkeypatch):
        monkeypatch.delenv("STOCHCOIL_WORKERS", raising=False)
        assert resolve_workers(None) == 1
        assert resolve_workers(3) == 3
        monkeypatch.setenv("STOCHCOIL_WORKERS", "4")
        assert resolve_workers(None) == 4
        assert resolve_workers(2) == 2


class TestOptimizeCommand:
    def test_run_directory_contents(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        out = cmd_optimize(cfg)
        names = {p.name for p in out.iterdir()}
        assert {"config.json", "manifest.json", "result.json",
                "samples_manifest.json", "convergence_00.csv",
                "convergence_01.csv"} <= names
        doc = json.loads((out / "result.json").read_text())
        assert len(doc["starts"]) == 2
        assert doc["starts"][0]["start_seed"] == [2, 0]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seeds"]["master_seed"] == 5
        assert (out / "config.json").read_bytes() == \
            Path(write_config(tmp_path)).read_bytes()

    def test_rerun_byte_identical(self, tmp_path):
        cfg_path = write_config(tmp_path)
        out = cmd_optimize(load_config(cfg_path))
        first = snapshot(out)
        out2 = cmd_optimize(load_config(cfg_path))
        assert snapshot(out2) == first

    def test_worker_invariance(self, tmp_path):
        cfg_path = write_config(tmp_path)
        first = snapshot(cmd_optimize(load_config(cfg_path), workers=1))
        second = snapshot(cmd_optimize(load_config(cfg_path), workers=4))
        assert first == second

    def test_deterministic_equals_risk_neutral_sigma_zero(self, tmp_path):
        base = write_config(tmp_path, name="det.json",
                            risk={"mode": "deterministic"},
                            output_dir=str(tmp_path / "run_det"))
        rn = write_config(tmp_path, name="rn.json",
                          kernel={"sigma": 0.0, "length_scale": 0.4 * np.pi},
                          risk={"mode": "risk_neutral", "n_samples": 1,
                                "master_seed": 5},
                          output_dir=str(tmp_path / "run_rn"))
        out_det = cmd_optimize(load_config(base))
        out_rn = cmd_optimize(load_config(rn))
        det = json.loads((out_det / "result.json").read_text())
        neu = json.loads((out_rn / "result.json").read_text())
        for a, b in zip(det["starts"], neu["starts"]):
            assert a["fun"] == b["fun"]
            assert a["x"] == b["x"]

    def test_cvar_pipeline_stages(self, tmp_path):
        cfg_path = write_config(
            tmp_path,
            risk={"mode": "cvar", "n_samples": 3, "alpha": 0.5,
                  "epsilon_schedule": [1e-1, 1e-2], "master_seed": 5},
            optimizer={"max_iters": 8, "multistart_count": 1,
                       "multistart_std": 0.0, "multistart_seed": 2},
        )
        out = cmd_optimize(load_config(cfg_path))
        doc = json.loads((out / "result.json").read_text())
        start = doc["starts"][0]
        assert [s["epsilon"] for s in start["stages"]] == [1e-1, 1e-2]
        assert start["t"] is not None
        # stage 2 warm-starts from stage 1: recorded z0 present
        assert len(start["stages"][1]["z0"]) == len(start["x"])


class TestOosCommand:
    def run_optimize(self, tmp_path, **overrides):
        cfg_path = write_config(tmp_path, **overrides)
        cfg = load_config(cfg_path)
        cmd_optimize(cfg)
        return cfg_path, cfg

    def test_values_and_kde(self, tmp_path):
        cfg_path, cfg = self.run_optimize(
            tmp_path, oos={"n_samples": 64, "seed": 9, "kde_points": 256})
        out = cmd_oos(load_config(cfg_path))
        values = (out / "oos_values.csv").read_text().strip().splitlines()
        assert values[0] == "sample_id,value"
        assert len(values) == 65
        kde = np.loadtxt(out / "oos_kde.csv", delimiter=",", skiprows=1)
        integral = np.trapezoid(kde[:, 1], kde[:, 0])
        assert 0.999 <= integral <= 1.001

    def test_seed_must_differ_from_master(self, tmp_path):
        cfg_path, _ = self.run_optimize(tmp_path, oos={"seed": 5})
        with pytest.raises(ConfigError, match="differ"):
            cmd_oos(load_config(cfg_path))

    def test_rerun_byte_identical_and_worker_invariant(self, tmp_path):
        cfg_path, _ = self.run_optimize(
            tmp_path, oos={"n_samples": 32, "seed": 9})
        first = snapshot(cmd_oos(load_config(cfg_path), workers=1))
        second = snapshot(cmd_oos(load_config(cfg_path), workers=4))
        assert first == second


class TestKde:
    def test_single_point_is_one_bump(self):
        grid, density = gaussian_kde_grid(np.array([2.5]), 128)
        assert density.max() > 0
        assert grid[np.argmax(density)] == pytest.approx(2.5, abs=np.ptp(grid) / 64)
        assert np.trapezoid(density, grid) == pytest.approx(1.0, abs=1e-3)

    def test_normalization(self, rng):
        values = rng.normal(3.0, 0.7, 4000)
        grid, density = gaussian_kde_grid(values, 512)
        assert np.trapezoid(density, grid) == pytest.approx(1.0, abs=1e-3)

    def test_grid_spans_padded_range(self, rng):
        values = rng.uniform(0, 1, 100)
        grid, _ = gaussian_kde_grid(values, 64)
        span = values.max() - values.min()
        assert grid[0] <= values.min() - 0.1 * span
        assert grid[-1] >= values.max() + 0.1 * span


@pytest.fixture(scope="module")
def iota_setup(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("iota")
    coilset = rotating_ellipse_coilset()
    coils_path = tmp_path / "coils.json"
    save_coilset(coils_path, coilset)
    axis = circular_axis(radius=1.1, n_nodes=8)
    target = target_from_coils(coilset, axis, QuadratureGrid(48), iota=0.05)
    target_path = tmp_path / "target.json"
    save_target(target_path, target)
    cfg = {
        "coils": str(coils_path),
        "target": str(target_path),
        "output_dir": str(tmp_path / "run"),
        "coil_nodes": 48,
        "kernel": {"sigma": 0.0, "length_scale": 0.4 * np.pi},
        "risk": {"mode": "deterministic"},
        "optimizer": {"max_iters": 1, "multistart_count": 1,
                      "multistart_std": 0.0},
        "weights": {"w_curvature": 0.0, "w_distance": 0.0},
        "iota": {"n_draws": 1, "seed": 3, "tolerance": 1e-9},
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    # skip the optimization: point iota at a hand-written result document
    result = {
        "risk": {"mode": "deterministic", "n_samples": 0, "master_seed": 0,
                 "alpha": 0.95, "epsilon_schedule": []},
        "best_start": 0,
        "starts": [{
            "start_index": 0, "start_seed": [0, 0], "fun": 0.0,
            "grad_inf_norm": 0.0, "iterations": 0, "termination": "gtol",
            "coils": json.loads(coils_path.read_text()), "x": [], "t": None,
        }],
    }
    result_path = tmp_path / "result.json"
    result_path.write_text(json.dumps(result))
    return tmp_path, cfg_path, result_path, coilset


class TestIotaCommand:
    def test_sigma_zero_single_draw_matches_direct_trace(self, iota_setup):
        tmp_path, cfg_path, result_path, coilset = iota_setup
        out = cmd_iota(load_config(cfg_path), result_path=str(result_path))
        rows = (out / "iota.csv").read_text().strip().splitlines()
        assert rows[0] == "draw_id,sigma,R0,Z0,iota,residual"
        assert len(rows) == 2
        draw_id, sigma, r0, z0, iota, residual = rows[1].split(",")
        assert float(sigma) == 0.0
        assert float(residual) < 1e-9

        grid = QuadratureGrid(48)
        phys = expand_symmetries(coilset, grid)
        fld = BiotSavartField(phys.points, phys.tangents, phys.currents,
                              grid.weight)
        cfg_trace = TraceConfig(tolerance=1e-9)
        axis = find_axis(fld, np.array([1.1, 0.0]), cfg_trace)
        direct = compute_iota(fld, np.array([axis.R0, axis.Z0]), cfg_trace)
        assert float(iota) == pytest.approx(direct, abs=1e-10)

    def test_seed_reproducible_csv(self, iota_setup):
        tmp_path, cfg_path, result_path, _ = iota_setup
        first = (cmd_iota(load_config(cfg_path), result_path=str(result_path))
                 / "iota.csv").read_bytes()
        second = (cmd_iota(load_config(cfg_path), result_path=str(result_path))
                  / "iota.csv").read_bytes()
        assert first == second


class TestGradcheckCommand:
    def test_passes_on_healthy_instance(self, tmp_path):
        cfg_path = write_config(
            tmp_path,
            risk={"mode": "risk_neutral", "n_samples": 2, "master_seed": 5},
            gradcheck={"n_dofs": 8, "seed": 1},
        )
        report, ok = cmd_gradcheck(load_config(cfg_path))
        assert ok
        assert set(report) == {"field_mismatch", "gradient_mismatch", "length",
                               "curvature", "distance", "arclength",
                               "total_risk_neutral", "total_cvar"}
        assert all(err <= 1e-5 for err in report.values())
        run_dir = Path(load_config(cfg_path)["output_dir"])
        doc = json.loads((run_dir / "gradcheck.json").read_text())
        assert doc["passed"] is True

    def test_zero_weights_trivially_pass(self, tmp_path):
        cfg_path = write_config(
            tmp_path,
            weights={"w_B": 0.0, "w_gradB": 0.0, "w_length": 0.0,
                     "w_curvature": 0.0, "w_distance": 0.0, "w_arclength": 0.0},
            gradcheck={"n_dofs": 5, "seed": 1},
        )
        report, ok = cmd_gradcheck(load_config(cfg_path))
        assert ok
        assert all(err == 0.0 for name, err in report.items()
                   if name not in ("total_cvar",))

    def test_corrupted_gradient_fails(self, tmp_path, monkeypatch):
        cfg_path = write_config(tmp_path, gradcheck={"n_dofs": 8, "seed": 1})
        original = CoilProblem.mismatch_terms

        def corrupted(self, x, sample):
            terms = original(self, x, sample)
            value, grad = terms["field_mismatch"]
            bad = grad.copy()
            bad[: self.n_shape_dofs] *= 1.01
            terms["field_mismatch"] = (value, bad)
            return terms

        monkeypatch.setattr(CoilProblem, "mismatch_terms", corrupted)
        assert main(["gradcheck", str(cfg_path)]) == 1

    def test_cli_exit_zero(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, gradcheck={"n_dofs": 6, "seed": 1})
        assert main(["gradcheck", str(cfg_path)]) == 0
        assert "passed" in capsys.readouterr().out
