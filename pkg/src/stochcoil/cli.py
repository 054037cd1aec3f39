"""Batch front-end: one JSON config drives the optimize / oos / iota /
gradcheck workflows; flags exist only for path overrides and worker count.

Every run directory gets the verbatim config echo, a seeds manifest and the
package version, and all data files are byte-reproducible from
(config, seeds) regardless of worker count. Exit codes: 0 ok, 1 gradient
check failed, 2 config error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import ConfigError, NumericalError, StochcoilError
from .field import BiotSavartField
from .geometry import (
    QuadratureGrid,
    coilset_from_dict,
    coilset_to_dict,
    expand_symmetries,
    load_coilset,
)
from .objective import CoilProblem, ObjectiveWeights, load_target
from .optimize import OptimOptions, cvar_continuation, multi_start
from .parallel import parallel_map, resolve_workers
from .perturbation import PerturbationKernel, draw_samples
from .stochastic import RiskConfig, SaaProblem, empirical_quantile, oos_evaluate
from .trace import TraceConfig, compute_iota, find_axis

# -- configuration -----------------------------------------------------------

SCHEMA = {
    "type": "object",
    "required": ["coils", "target", "output_dir", "kernel", "risk"],
    "additionalProperties": False,
    "properties": {
        "coils": {"type": "string"},
        "target": {"type": "string"},
        "output_dir": {"type": "string"},
        "coil_nodes": {"type": "integer", "minimum": 2},
        "current_scale": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "kernel": {
            "type": "object",
            "required": ["sigma", "length_scale"],
            "additionalProperties": False,
            "properties": {
                "sigma": {"type": "number", "minimum": 0},
                "length_scale": {"type": "number", "exclusiveMinimum": 0},
                "truncation": {"type": "integer", "minimum": 1},
            },
        },
        "risk": {
            "type": "object",
            "required": ["mode"],
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["deterministic", "risk_neutral", "cvar"]},
                "n_samples": {"type": "integer", "minimum": 1},
                "master_seed": {"type": "integer", "minimum": 0},
                "alpha": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "epsilon_schedule": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "w_B": {"type": "number", "minimum": 0},
                "w_gradB": {"type": "number", "minimum": 0},
                "w_length": {"type": "number", "minimum": 0},
                "target_lengths": {
                    "type": ["array", "null"], "items": {"type": "number"},
                },
                "w_curvature": {"type": "number", "minimum": 0},
                "curvature_limit": {"type": "number", "minimum": 0},
                "w_distance": {"type": "number", "minimum": 0},
                "distance_limit": {"type": "number", "minimum": 0},
                "w_arclength": {"type": "number", "minimum": 0},
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "memory": {"type": "integer", "minimum": 1},
                "gtol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "c1": {"type": "number", "exclusiveMinimum": 0},
                "c2": {"type": "number", "exclusiveMinimum": 0},
                "multistart_count": {"type": "integer", "minimum": 1},
                "multistart_std": {"type": "number", "minimum": 0},
                "multistart_seed": {"type": "integer", "minimum": 0},
            },
        },
        "oos": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "kde_points": {"type": "integer", "minimum": 8},
                "start_index": {"type": ["integer", "null"], "minimum": 0},
            },
        },
        "iota": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_draws": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "guess_R": {"type": ["number", "null"]},
                "guess_Z": {"type": ["number", "null"]},
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
                "newton_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "start_index": {"type": ["integer", "null"], "minimum": 0},
            },
        },
        "gradcheck": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_dofs": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "fd_step": {"type": "number", "exclusiveMinimum": 0},
                "threshold": {"type": "number", "exclusiveMinimum": 0},
                "cvar_alpha": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "cvar_epsilon": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}

# Desk-scale defaults; the study in the source material ran N_MC=1024,
# N_oos=2^18 and 8 starts ("full scale"), which are config choices here.
DEFAULTS = {
    "coil_nodes": 120,
    "current_scale": None,
    "kernel": {"truncation": 3},
    "risk": {
        "n_samples": 16,
        "master_seed": 0,
        "alpha": 0.95,
        "epsilon_schedule": [1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
    },
    "weights": {
        "w_B": 0.5,
        "w_gradB": 0.5,
        "w_length": 1.0,
        "target_lengths": None,
        "w_curvature": 1.0,
        "curvature_limit": math.inf,
        "w_distance": 1.0,
        "distance_limit": 0.0,
        "w_arclength": 1.0,
    },
    "optimizer": {
        "memory": 20,
        "gtol": 1e-10,
        "max_iters": 2000,
        "c1": 1e-4,
        "c2": 0.9,
        "multistart_count": 4,
        "multistart_std": 0.01,
        "multistart_seed": 0,
    },
    "oos": {"n_samples": 2**14, "seed": 1, "kde_points": 512, "start_index": None},
    "iota": {
        "n_draws": 32, "seed": 2, "guess_R": None, "guess_Z": None,
        "tolerance": 1e-10, "newton_tolerance": 1e-10, "start_index": None,
    },
    "gradcheck": {
        "n_dofs": 20, "seed": 3, "fd_step": 1e-6, "threshold": 1e-5,
        "cvar_alpha": 0.9, "cvar_epsilon": 1e-2,
    },
}


def _deep_merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path, overrides=None) -> dict:
    """Parse, schema-validate and default-fill a run configuration."""
    path = Path(path)
    try:
        raw_text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        user = json.loads(raw_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if "curvature_limit" in user.get("weights", {}) and \
            user["weights"]["curvature_limit"] is None:
        user["weights"]["curvature_limit"] = math.inf
    for key, value in (overrides or {}).items():
        if value is not None:
            user[key] = value
    cfg = _deep_merge(DEFAULTS, user)
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(
            f"config validation failed at {'/'.join(str(p) for p in exc.absolute_path) or '<root>'}: "
            f"{exc.message}"
        ) from exc
    cfg["_raw_text"] = raw_text
    return cfg


def build_problem(cfg):
    """Instantiate the problem objects a command needs from a merged config."""
    try:
        coilset = load_coilset(cfg["coils"])
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load coil file {cfg['coils']}: {exc}") from exc
    try:
        target = load_target(cfg["target"])
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load target file {cfg['target']}: {exc}") from exc

    max_order = max(c.order for c in coilset.base_curves)
    if cfg["coil_nodes"] < 2 * max_order + 1:
        raise ConfigError(
            f"coil_nodes={cfg['coil_nodes']} cannot resolve order {max_order}; "
            f"need at least {2 * max_order + 1}"
        )
    grid = QuadratureGrid(cfg["coil_nodes"])
    w = cfg["weights"]
    target_lengths = w["target_lengths"]
    if target_lengths is not None and len(target_lengths) != coilset.n_base:
        raise ConfigError(
            f"target_lengths has {len(target_lengths)} entries for "
            f"{coilset.n_base} base coils"
        )
    weights = ObjectiveWeights(
        w_field=w["w_B"], w_gradient=w["w_gradB"],
        w_length=w["w_length"], target_lengths=target_lengths,
        w_curvature=w["w_curvature"], curvature_limit=w["curvature_limit"],
        w_distance=w["w_distance"], distance_limit=w["distance_limit"],
        w_arclength=w["w_arclength"],
    )
    problem = CoilProblem(coilset, grid, target, weights,
                          current_scale=cfg["current_scale"])
    kernel = PerturbationKernel(
        sigma=cfg["kernel"]["sigma"],
        length_scale=cfg["kernel"]["length_scale"],
        truncation=cfg["kernel"]["truncation"],
    )
    r = cfg["risk"]
    try:
        risk = RiskConfig(
            mode=r["mode"], n_samples=r["n_samples"],
            master_seed=r["master_seed"], alpha=r["alpha"],
            epsilon_schedule=tuple(r["epsilon_schedule"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    o = cfg["optimizer"]
    options = OptimOptions(
        memory=o["memory"], gtol=o["gtol"], max_iters=o["max_iters"],
        c1=o["c1"], c2=o["c2"], multistart_count=o["multistart_count"],
        multistart_std=o["multistart_std"],
    )
    return problem, kernel, risk, options


# -- artifact helpers ---------------------------------------------------------

def _prepare_run_dir(cfg, command, seeds) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg["_raw_text"])
    manifest = {"version": __version__, "command": command, "seeds": seeds}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v
                             for v in row])


def _write_convergence(path, history):
    _write_csv(path, ["iter", "objective", "grad_inf_norm", "step"],
               [(it, float(f), float(g), float(s)) for it, f, g, s in history])


def gaussian_kde_grid(values, n_points=512):
    """Gaussian KDE with Silverman bandwidth on a padded uniform grid.

    The grid spans [min, max] padded by 10% of the range plus five
    bandwidths on each side, so the trapezoid integral of the density is 1
    to well within 1e-3.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        raise ValueError("KDE needs at least one value")
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    std = float(np.std(values, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(values, [75.0, 25.0])
    iqr = float(q75 - q25)
    scale_candidates = [s for s in (std, iqr / 1.34) if s > 0]
    if scale_candidates:
        bandwidth = 0.9 * min(scale_candidates) * n ** (-0.2)
    else:
        bandwidth = max(abs(lo), 1.0) * 1e-2
    grid = np.linspace(lo - 0.1 * span - 5.0 * bandwidth,
                       hi + 0.1 * span + 5.0 * bandwidth, n_points)
    density = np.zeros(n_points)
    norm = 1.0 / (n * bandwidth * np.sqrt(2.0 * np.pi))
    for chunk_start in range(0, n, 1024):
        chunk = values[chunk_start:chunk_start + 1024]
        u = (grid[:, None] - chunk[None, :]) / bandwidth
        density += norm * np.sum(np.exp(-0.5 * u * u), axis=1)
    return grid, density


# -- commands -----------------------------------------------------------------

def _optimize_starts(problem, kernel, risk, options, cfg, workers):
    """Multi-start solve; for cvar: risk-neutral presolve, then continuation."""
    seed = cfg["optimizer"]["multistart_seed"]
    x_base = problem.initial_guess()
    if risk.mode == "cvar":
        rn_risk = RiskConfig(mode="risk_neutral", n_samples=risk.n_samples,
                             master_seed=risk.master_seed)
        rn_saa = SaaProblem(problem, kernel, rn_risk, workers=1)
        rn_results = multi_start(rn_saa.value_grad, x_base, options, seed,
                                 n_perturb=problem.n_shape_dofs, workers=workers)
        cvar_saa = SaaProblem(problem, kernel, risk, workers=1)

        def continue_one(rn_result):
            res = cvar_continuation(cvar_saa, rn_result.x, options)
            res.info["start_index"] = rn_result.info["start_index"]
            res.info["start_seed"] = rn_result.info["start_seed"]
            res.info["x0"] = rn_result.info["x0"]
            res.info["risk_neutral_fun"] = rn_result.fun
            return res

        return parallel_map(continue_one, rn_results, workers), cvar_saa
    saa = SaaProblem(problem, kernel, risk, workers=1)
    results = multi_start(saa.value_grad, x_base, options, seed,
                          n_perturb=problem.n_shape_dofs, workers=workers)
    return results, saa


def _result_document(problem, risk, results):
    starts = []
    for res in results:
        if risk.mode == "cvar":
            x, t = res.x[:-1], float(res.x[-1])
        else:
            x, t = res.x, None
        entry = {
            "start_index": res.info["start_index"],
            "start_seed": res.info["start_seed"],
            "fun": res.fun,
            "grad_inf_norm": res.grad_inf_norm,
            "iterations": res.iterations,
            "termination": res.termination,
            "coils": coilset_to_dict(problem.unpack(x)),
            "x": np.asarray(res.x).tolist(),
            "t": t,
        }
        if "stages" in res.info:
            entry["stages"] = [
                {"epsilon": s["epsilon"], "fun": s["fun"],
                 "iterations": s["iterations"], "termination": s["termination"],
                 "z0": np.asarray(s["z0"]).tolist()}
                for s in res.info["stages"]
            ]
        starts.append(entry)
    best = min(range(len(starts)), key=lambda i: starts[i]["fun"])
    return {
        "risk": {
            "mode": risk.mode, "n_samples": risk.n_samples,
            "master_seed": risk.master_seed, "alpha": risk.alpha,
            "epsilon_schedule": list(risk.epsilon_schedule),
        },
        "best_start": best,
        "starts": starts,
    }


def cmd_optimize(cfg, workers: int = 1) -> Path:
    problem, kernel, risk, options = build_problem(cfg)
    seeds = {
        "master_seed": risk.master_seed,
        "multistart_seed": cfg["optimizer"]["multistart_seed"],
    }
    out = _prepare_run_dir(cfg, "optimize", seeds)
    results, saa = _optimize_starts(problem, kernel, risk, options, cfg, workers)
    doc = _result_document(problem, risk, results)
    (out / "result.json").write_text(json.dumps(doc, indent=2) + "\n")
    for res in results:
        idx = res.info["start_index"]
        _write_convergence(out / f"convergence_{idx:02d}.csv", res.history)
    samples_doc = {
        "kernel": {"sigma": kernel.sigma, "length_scale": kernel.length_scale,
                   "truncation": kernel.truncation},
        "master_seed": risk.master_seed,
        "n_samples": 0 if risk.mode == "deterministic" else risk.n_samples,
        "sample_ids": [] if risk.mode == "deterministic"
        else list(range(risk.n_samples)),
    }
    (out / "samples_manifest.json").write_text(json.dumps(samples_doc, indent=2) + "\n")
    return out


def _load_result_coils(cfg, result_path, start_index):
    path = Path(result_path) if result_path else Path(cfg["output_dir"]) / "result.json"
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load result file {path}: {exc}") from exc
    idx = doc["best_start"] if start_index is None else start_index
    if not 0 <= idx < len(doc["starts"]):
        raise ConfigError(f"start_index {idx} out of range")
    entry = doc["starts"][idx]
    return coilset_from_dict(entry["coils"]), entry, doc


def cmd_oos(cfg, workers: int = 1, result_path=None) -> Path:
    problem, kernel, risk, _ = build_problem(cfg)
    oos_cfg = cfg["oos"]
    if kernel.sigma > 0 and oos_cfg["seed"] == risk.master_seed:
        raise ConfigError("oos.seed must differ from risk.master_seed")
    coilset, _, _ = _load_result_coils(cfg, result_path, oos_cfg["start_index"])
    x = problem.pack(coilset)
    seeds = {"oos_seed": oos_cfg["seed"], "master_seed": risk.master_seed}
    out = _prepare_run_dir(cfg, "oos", seeds)
    values = oos_evaluate(problem, x, kernel, oos_cfg["seed"],
                          oos_cfg["n_samples"], workers=workers)
    _write_csv(out / "oos_values.csv", ["sample_id", "value"],
               [(k, float(v)) for k, v in enumerate(values)])
    grid, density = gaussian_kde_grid(values, oos_cfg["kde_points"])
    _write_csv(out / "oos_kde.csv", ["value", "density"],
               [(float(g), float(d)) for g, d in zip(grid, density)])
    return out


def _axis_guess(cfg, problem):
    iota_cfg = cfg["iota"]
    if iota_cfg["guess_R"] is not None and iota_cfg["guess_Z"] is not None:
        return np.array([iota_cfg["guess_R"], iota_cfg["guess_Z"]])
    # default: target-axis node nearest the Poincare plane phi = 0
    pts = problem.target.axis.points
    phis = np.arctan2(pts[:, 1], pts[:, 0])
    nearest = int(np.argmin(np.abs(phis)))
    p = pts[nearest]
    return np.array([float(np.hypot(p[0], p[1])), float(p[2])])


def cmd_iota(cfg, workers: int = 1, result_path=None) -> Path:
    problem, kernel, risk, _ = build_problem(cfg)
    iota_cfg = cfg["iota"]
    coilset, _, _ = _load_result_coils(cfg, result_path, iota_cfg["start_index"])
    grid = problem.grid
    phys = expand_symmetries(coilset, grid)
    trace_cfg = TraceConfig(tolerance=iota_cfg["tolerance"],
                            newton_tolerance=iota_cfg["newton_tolerance"])
    seeds = {"iota_seed": iota_cfg["seed"], "master_seed": risk.master_seed}
    out = _prepare_run_dir(cfg, "iota", seeds)

    # refine the guess on the unperturbed field once; reuse for every draw
    base_field = BiotSavartField(phys.points, phys.tangents, phys.currents, grid.weight)
    base_axis = find_axis(base_field, _axis_guess(cfg, problem), trace_cfg)
    guess = np.array([base_axis.R0, base_axis.Z0])

    samples = draw_samples(kernel, grid, coilset.n_coils, iota_cfg["seed"],
                           iota_cfg["n_draws"])

    def one_draw(sample):
        fld = BiotSavartField(phys.points + sample.values,
                              phys.tangents + sample.derivs,
                              phys.currents, grid.weight)
        axis = find_axis(fld, guess, trace_cfg)
        iota = compute_iota(fld, np.array([axis.R0, axis.Z0]), trace_cfg)
        return axis, iota

    rows = []
    for sample, (axis, iota) in zip(samples, parallel_map(one_draw, samples, workers)):
        rows.append((sample.sample_id, float(kernel.sigma), axis.R0, axis.Z0,
                     float(iota), axis.residual))
    _write_csv(out / "iota.csv", ["draw_id", "sigma", "R0", "Z0", "iota", "residual"],
               rows)
    return out


def _max_rel_error(an, fd):
    an = np.asarray(an, dtype=float)
    fd = np.asarray(fd, dtype=float)
    scale = max(float(np.max(np.abs(an))), float(np.max(np.abs(fd))))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(an), np.abs(fd)), 1e-6 * scale)
    return float(np.max(np.abs(an - fd) / denom))


def _central_difference(func, z, indices, step):
    fd = np.zeros(len(indices))
    for pos, i in enumerate(indices):
        h = step * max(1.0, abs(z[i]))
        zp = z.copy()
        zp[i] += h
        zm = z.copy()
        zm[i] -= h
        fd[pos] = (func(zp) - func(zm)) / (2.0 * h)
    return fd


def cmd_gradcheck(cfg, workers: int = 1):
    """FD audit of every objective term and both scalarized totals.

    Returns (report, ok). Checks central differences over a seeded random DOF
    subset; a term fails if its max relative error exceeds the threshold.
    """
    problem, kernel, risk, _ = build_problem(cfg)
    gc = cfg["gradcheck"]
    rng = np.random.default_rng(gc["seed"])
    x = problem.initial_guess()
    n_check = min(gc["n_dofs"], x.size)
    indices = np.sort(rng.choice(x.size, size=n_check, replace=False))
    step = gc["fd_step"]

    n_mc = 1 if risk.mode == "deterministic" else risk.n_samples
    sample_risk = RiskConfig(mode="risk_neutral", n_samples=n_mc,
                             master_seed=risk.master_seed)
    saa = SaaProblem(problem, kernel, sample_risk, workers=1)
    zeta = saa.samples[0]

    report = {}

    def check(name, value_grad_fn, value_fn, z, idx):
        _, grad = value_grad_fn(z)
        fd = _central_difference(value_fn, z, idx, step)
        report[name] = _max_rel_error(grad[idx], fd)

    for name in ("field_mismatch", "gradient_mismatch"):
        check(
            name,
            lambda z, n=name: problem.mismatch_terms(z, zeta)[n],
            lambda z, n=name: problem.mismatch_terms(z, zeta)[n][0],
            x, indices,
        )
    for name in ("length", "curvature", "distance", "arclength"):
        check(
            name,
            lambda z, n=name: problem.regularizer_terms(z)[n],
            lambda z, n=name: problem.regularizer_terms(z)[n][0],
            x, indices,
        )
    check("total_risk_neutral", saa.value_grad, saa.value, x, indices)

    cvar_risk = RiskConfig(mode="cvar", n_samples=n_mc,
                           master_seed=risk.master_seed, alpha=gc["cvar_alpha"],
                           epsilon_schedule=(gc["cvar_epsilon"],))
    cvar_saa = SaaProblem(problem, kernel, cvar_risk, workers=1)
    t0 = empirical_quantile(saa.sample_values(x), gc["cvar_alpha"])
    z = cvar_saa.join(x, t0)
    cvar_indices = np.append(indices, z.size - 1)  # include t
    check("total_cvar", cvar_saa.value_grad, cvar_saa.value, z, cvar_indices)

    ok = all(err <= gc["threshold"] for err in report.values())
    out = _prepare_run_dir(cfg, "gradcheck", {"gradcheck_seed": gc["seed"],
                                              "master_seed": risk.master_seed})
    doc = {"threshold": gc["threshold"], "passed": ok, "max_rel_errors": report}
    (out / "gradcheck.json").write_text(json.dumps(doc, indent=2) + "\n")
    return report, ok


# -- entry point ---------------------------------------------------------------

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="stochcoil",
        description="Stochastic coil design: optimize, evaluate, and trace.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("optimize", "run the multi-start optimization"),
        ("oos", "evaluate the objective on fresh out-of-sample draws"),
        ("iota", "rotational-transform distribution over perturbed draws"),
        ("gradcheck", "finite-difference audit of all analytic gradients"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to the run configuration JSON")
        p.add_argument("--coils", help="override the coils path")
        p.add_argument("--target", help="override the target path")
        p.add_argument("--output-dir", dest="output_dir", help="override the output directory")
        p.add_argument("--workers", type=int, default=None,
                       help="worker count (default: STOCHCOIL_WORKERS or 1)")
        if name in ("oos", "iota"):
            p.add_argument("--result", help="path to an optimize result.json")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {"coils": args.coils, "target": args.target,
                 "output_dir": args.output_dir}
    workers = resolve_workers(args.workers)
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "optimize":
            out = cmd_optimize(cfg, workers)
            print(f"optimize: wrote {out}")
        elif args.command == "oos":
            out = cmd_oos(cfg, workers, result_path=args.result)
            print(f"oos: wrote {out}")
        elif args.command == "iota":
            out = cmd_iota(cfg, workers, result_path=args.result)
            print(f"iota: wrote {out}")
        elif args.command == "gradcheck":
            report, ok = cmd_gradcheck(cfg, workers)
            for name, err in report.items():
                print(f"gradcheck {name}: max rel error {err:.3e}")
            if not ok:
                print("gradcheck: FAILED", file=sys.stderr)
                return 1
            print("gradcheck: passed")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        out_dir = Path(cfg["output_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        dump = out_dir / "abort_state.json"
        dump.write_text(json.dumps(
            {"error": str(exc), "type": type(exc).__name__, "state": exc.state},
            indent=2, default=str) + "\n")
        print(f"numerical abort: {exc} (state dumped to {dump})", file=sys.stderr)
        return 3
    except StochcoilError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
