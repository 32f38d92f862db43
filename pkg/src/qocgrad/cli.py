"""Experiment orchestration: config handling, subcommands, artifact emission.

One JSON config file with flat per-module sections drives every subcommand;
individual keys can be overridden on the command line with
``--set section.key=value``.  All artifacts are CSV files under the output
directory, formatted at full double precision so identical configurations
reproduce byte-identical outputs.

Exit codes: 0 ok, 1 check failure, 2 config error, 3 runtime divergence.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
import time

import numpy as np

from ._io import write_csv
from .control import (
    ControlGrid,
    choose_num_steps,
    interpolation_error_norm,
    export_control_csv,
    l1_norm,
    quadrature_penalty,
)
from .dynamics import (
    PropagatorConfig,
    SeriesUnderConvergedError,
    dyson_step,
    evolve,
    propagate_amplitudes,
    step,
    write_trajectory_csv,
)
from .objective import (
    ObjectiveSpec,
    derivative_bound,
    evaluate_terminal,
    gradient_adjoint,
    gradient_fd,
    hessian_fd,
    lipschitz_bound,
)
from .operators import (
    ExampleModelParams,
    QuantumState,
    build_example_model,
    expectation,
    gaussian_state,
)
from .optimizer import OptimizerConfig, ascend, write_trace_csv
from .qgrad import (
    GridRegisterSpec,
    QueryCostReport,
    central_difference_coefficients,
    default_phase_scale,
    hadamard_test_probability,
    jordan_estimate_gradient,
    restricted_objective,
)

__all__ = ["ConfigError", "load_config", "apply_overrides", "main",
           "cmd_optimize", "cmd_gradcheck", "cmd_scaling", "cmd_qgrad", "cmd_simulate"]

EXIT_OK = 0
EXIT_CHECK_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_DIVERGED = 3


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


DEFAULT_CONFIG = {
    "model": {
        "dimension": 64,
        "laplacian_scale": 1.0,
        "r0": 10.0,
        "gamma0": 0.5,
        "normalize": True,
        "initial_state_center": 2.0,
        "initial_state_width": 1.5,
        "initial_state_momentum": 0.0,
    },
    "grid": {
        "horizon": 4.0,         # with num_steps 200 this gives delta = 0.02
        "num_steps": 200,       # explicit N; None -> derive from eps
        "eps": None,            # accuracy-driven step count when num_steps is None
        "smooth": False,
        "control_csv": None,    # optional initial control nodes (t,u file)
    },
    "objective": {
        "alpha": 1.5,
    },
    "propagator": {
        "method": "midpoint_expm",
        "dyson_order": 2,
        "dyson_points": 4,
        "substeps_per_interval": 1,
        "expm_tolerance": 1e-12,
        "renormalize": True,
        "dyson_drift_tolerance": 1e-6,
    },
    "optimizer": {
        "eta": 0.04,
        "iterations": 2000,
        "noise_std": 0.0,
        "eps": 0.0,
        "seed": 7,
        "failure_probability": 1.0 / 3.0,
    },
    "gradient": {
        "provider": "adjoint",  # adjoint | fd
        "fd_step": 1e-4,
    },
    "gradcheck": {
        "dimension": 8,
        "num_steps": 10,
        "horizon": 2.0,
        "num_controls": 20,
        "num_bound_controls": 100,
        "seed": 11,
        "tolerance_floor": 1e-6,
    },
    "scaling": {
        "doublings": 4,
        "base_steps": 8,
        "horizon": 2.0,   # not a sine period: keeps the quadrature error generic
        "dyson_orders": [1, 2, 3],
        "dyson_points": 32,
        "dimension": 8,
    },
    "qgrad": {
        "dimension": 4,
        "num_steps": 8,
        "horizon": 2.0,
        "coords": [3, 6],
        "bits_per_var": 7,
        "probe_radius": 0.1,
        "difference_order": 1,
        "shots": 400,
        "phase_scale": None,    # None -> derived from the first-derivative bound
        "repeats": 100,
        "conversion_eps": 0.01,
        "success_threshold": 0.6666666666666666,
    },
    "output": {
        "directory": "out",
        "trajectory_dump": False,
    },
}


def _merge_section(name, defaults, overrides):
    merged = dict(defaults)
    for key, value in overrides.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {name}.{key}")
        merged[key] = value
    return merged


def load_config(path=None):
    """Load the JSON config file and merge it over the defaults."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            user = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    for section, content in user.items():
        if section not in cfg:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(content, dict):
            raise ConfigError(f"section {section!r} must be an object")
        cfg[section] = _merge_section(section, cfg[section], content)
    return cfg


def apply_overrides(cfg, assignments):
    """Apply --set section.key=value pairs (values parsed as JSON when possible)."""
    for item in assignments or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        target, raw = item.split("=", 1)
        if "." not in target:
            raise ConfigError(f"override target {target!r} must look like section.key")
        section, key = target.split(".", 1)
        if section not in cfg:
            raise ConfigError(f"unknown config section {section!r}")
        if key not in cfg[section]:
            raise ConfigError(f"unknown key {section}.{key}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        cfg[section][key] = value
    return cfg


def _propagator_from(cfg) -> PropagatorConfig:
    p = cfg["propagator"]
    try:
        return PropagatorConfig(
            method=p["method"],
            dyson_order=int(p["dyson_order"]),
            dyson_points=int(p["dyson_points"]),
            substeps_per_interval=int(p["substeps_per_interval"]),
            expm_tolerance=float(p["expm_tolerance"]),
            renormalize=bool(p["renormalize"]),
            dyson_drift_tolerance=float(p["dyson_drift_tolerance"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _grid_steps(cfg) -> int:
    g = cfg["grid"]
    if g["num_steps"] is not None:
        n = int(g["num_steps"])
        if n < 1:
            raise ConfigError("grid.num_steps must be at least 1")
        return n
    if g["eps"] is None:
        raise ConfigError("grid needs either num_steps or eps")
    return choose_num_steps(float(g["horizon"]), float(g["eps"]), bool(g["smooth"]))


def build_model(cfg):
    m = cfg["model"]
    try:
        params = ExampleModelParams(
            dimension=int(m["dimension"]),
            laplacian_scale=float(m["laplacian_scale"]),
            r0=float(m["r0"]),
            gamma0=float(m["gamma0"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    h0, mu, obs = build_example_model(params, normalize=bool(m["normalize"]))
    psi0 = gaussian_state(params.dimension, float(m["initial_state_center"]),
                          float(m["initial_state_width"]),
                          float(m["initial_state_momentum"]))
    return h0, mu, obs, psi0


def build_spec(cfg) -> ObjectiveSpec:
    h0, mu, obs, psi0 = build_model(cfg)
    try:
        return ObjectiveSpec(
            h0=h0, mu=mu, observable=obs,
            alpha=float(cfg["objective"]["alpha"]),
            horizon=float(cfg["grid"]["horizon"]),
            num_steps=_grid_steps(cfg),
            initial_state=psi0,
            propagator=_propagator_from(cfg),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _initial_control(cfg, spec: ObjectiveSpec) -> ControlGrid:
    path = cfg["grid"]["control_csv"]
    if path is None:
        return spec.grid_template()
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1)
    except OSError as exc:
        raise ConfigError(f"cannot read control file: {exc}") from exc
    values = np.atleast_2d(data)[:, 1]
    if values.size != spec.num_steps + 1:
        raise ConfigError(
            f"control file has {values.size} nodes, expected {spec.num_steps + 1}"
        )
    return spec.grid_template(values)


def _out_dir(cfg, out_flag):
    import os

    directory = out_flag or cfg["output"]["directory"]
    os.makedirs(directory, exist_ok=True)
    return directory


def cmd_optimize(cfg, out_dir=None) -> int:
    """Run the ascent and emit loss.csv + control.csv."""
    spec = build_spec(cfg)
    u0 = _initial_control(cfg, spec)
    o = cfg["optimizer"]
    opt = OptimizerConfig(
        eta=None if o["eta"] is None else float(o["eta"]),
        max_iterations=int(o["iterations"]),
        noise_std=float(o["noise_std"]),
        eps=float(o["eps"]),
        seed=int(o["seed"]),
        failure_probability=float(o["failure_probability"]),
    )
    provider = cfg["gradient"]["provider"]
    if provider == "fd":
        h = float(cfg["gradient"]["fd_step"])
        provider = lambda s, u: gradient_fd(s, u, h)
    elif provider != "adjoint":
        raise ConfigError(f"unknown gradient provider {provider!r} for optimize")
    directory = _out_dir(cfg, out_dir)
    started = time.perf_counter()
    trace = ascend(spec, u0, opt, gradient_provider=provider, record_iterates=False)
    elapsed = time.perf_counter() - started
    import os

    write_trace_csv(trace, os.path.join(directory, "loss.csv"))
    export_control_csv(trace.final_control, os.path.join(directory, "control.csv"))
    print(
        f"optimize: iterations={len(trace) - 1} final_J={trace.objective_values[-1]:.12g} "
        f"grad_norm={trace.gradient_norms[-1]:.6g} "
        f"termination={trace.termination_reason} wall_time_s={elapsed:.2f}"
    )
    print(f"control L1 integral: {l1_norm(trace.final_control):.12g} (horizon {spec.horizon})")
    if trace.termination_reason == "non-finite":
        return EXIT_DIVERGED
    return EXIT_OK


def _small_spec(cfg, section) -> ObjectiveSpec:
    sub = cfg[section]
    local = copy.deepcopy(cfg)
    local["model"]["dimension"] = int(sub["dimension"])
    local["model"]["initial_state_center"] = min(
        float(cfg["model"]["initial_state_center"]), int(sub["dimension"]) / 2.0
    )
    local["model"]["initial_state_width"] = min(
        float(cfg["model"]["initial_state_width"]), int(sub["dimension"]) / 4.0
    )
    local["grid"]["horizon"] = float(sub["horizon"])
    local["grid"]["num_steps"] = int(sub["num_steps"])
    local["objective"]["alpha"] = max(float(cfg["objective"]["alpha"]),
                                      2.0 / float(sub["horizon"]))
    return build_spec(local)


def cmd_gradcheck(cfg, out_dir=None, corrupt_adjoint_sign: bool = False) -> int:
    """Adjoint-vs-FD agreement and derivative-bound suites."""
    spec = _small_spec(cfg, "gradcheck")
    g = cfg["gradcheck"]
    rng = np.random.default_rng(int(g["seed"]))
    h = float(cfg["gradient"]["fd_step"])
    floor = float(g["tolerance_floor"])
    tol = max(floor, 10.0 * h * h)
    delta = spec.delta
    rows = []
    ok = True

    worst_gap = 0.0
    for _ in range(int(g["num_controls"])):
        u = spec.grid_template(rng.uniform(-1.0, 1.0, spec.num_steps + 1))
        ga = gradient_adjoint(spec, u).values
        if corrupt_adjoint_sign:
            ga = -ga
        gf = gradient_fd(spec, u, h).values
        worst_gap = max(worst_gap, float(np.max(np.abs(ga - gf))))
    rows.append(("adjoint_vs_fd", worst_gap, tol, worst_gap <= tol))

    b1 = 2.0 * delta * spec.mu_norm
    worst_first = 0.0
    alpha_saved = spec.alpha
    for _ in range(int(g["num_bound_controls"])):
        u = spec.grid_template(rng.uniform(-1.0, 1.0, spec.num_steps + 1))
        grad1 = gradient_adjoint(spec, u).values + \
            2.0 * alpha_saved * delta * np.r_[0.5, np.ones(spec.num_steps - 1), 0.5] * u.nodal_values
        worst_first = max(worst_first, float(np.max(np.abs(grad1))))
    rows.append(("first_derivative_bound", worst_first, b1, worst_first <= b1))

    u = spec.grid_template(rng.uniform(-1.0, 1.0, spec.num_steps + 1))
    hess = hessian_fd(spec, u, h)
    b2 = derivative_bound(2, delta, spec.mu_norm)
    w = np.r_[0.5, np.ones(spec.num_steps - 1), 0.5]
    limit = b2 + 2.0 * alpha_saved * delta * np.diag(w)
    worst_hess = float(np.max(np.abs(hess) - limit))
    rows.append(("hessian_entry_bound", worst_hess, 0.0, worst_hess <= 1e-9))

    directory = _out_dir(cfg, out_dir)
    import os

    write_csv(os.path.join(directory, "gradcheck.csv"),
              ["check", "observed", "threshold", "pass"],
              [(name, obs, thr, passed) for name, obs, thr, passed in rows])
    for name, obs, thr, passed in rows:
        ok = ok and passed
        print(f"gradcheck {name}: observed={obs:.3e} threshold={thr:.3e} "
              f"{'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILURE


def _loglog_slope(deltas, errors) -> float:
    x = np.log(np.asarray(deltas, dtype=float))
    y = np.log(np.maximum(np.asarray(errors, dtype=float), 1e-300))
    return float(np.polyfit(x, y, 1)[0])


def cmd_scaling(cfg, out_dir=None) -> int:
    """Halving studies for interpolation, quadrature, and propagator error."""
    s = cfg["scaling"]
    horizon = float(s["horizon"])
    doublings = int(s["doublings"])
    base = int(s["base_steps"])
    rows = []

    # interpolation and quadrature of a C^2 control
    deltas, interp_err, quad_err = [], [], []
    exact_integral = horizon / 2.0 - math.sin(2.0 * horizon) / 4.0
    for lvl in range(doublings + 1):
        n = base * (2**lvl)
        grid = ControlGrid.from_function(horizon, n, math.sin)
        deltas.append(horizon / n)
        interp_err.append(interpolation_error_norm(np.sin, grid))
        quad_err.append(abs(quadrature_penalty(grid, 1.0) - exact_integral))
    rows.append(("interpolation_sin", _loglog_slope(deltas, interp_err), 1.9, 2.1))
    rows.append(("quadrature_sin", _loglog_slope(deltas, quad_err), 1.9, 2.1))

    # midpoint propagator global error against a 64x resolved reference
    local = copy.deepcopy(cfg)
    local["model"]["dimension"] = int(s["dimension"])
    local["model"]["initial_state_center"] = int(s["dimension"]) / 2.0
    local["model"]["initial_state_width"] = int(s["dimension"]) / 6.0
    h0, mu, _obs, psi0 = build_model(local)
    prop = _propagator_from(cfg)
    t_prop = 2.0
    ref_grid = ControlGrid.from_function(t_prop, base * (2**doublings) * 8, math.sin)
    ref = propagate_amplitudes(h0, mu, ref_grid, psi0.amplitudes, prop)[-1]
    deltas, prop_err = [], []
    for lvl in range(doublings + 1):
        n = base * (2**lvl)
        grid = ControlGrid.from_function(t_prop, n, math.sin)
        final = propagate_amplitudes(h0, mu, grid, psi0.amplitudes, prop)[-1]
        deltas.append(t_prop / n)
        prop_err.append(float(np.linalg.norm(final - ref)))
    rows.append(("midpoint_propagator", _loglog_slope(deltas, prop_err), 1.9, None))

    # local error of the truncated time-ordered series per order
    for order in [int(k) for k in s["dyson_orders"]]:
        deltas, errs = [], []
        for lvl in range(doublings + 1):
            n = base * (2**lvl)
            grid = ControlGrid.from_function(t_prop, n, math.sin)
            fine = PropagatorConfig(substeps_per_interval=64,
                                    expm_tolerance=prop.expm_tolerance)
            ref_step = step(h0, mu, grid, 0, psi0.amplitudes, fine)
            got = dyson_step(h0, mu, grid, 0, psi0.amplitudes, order,
                             int(s["dyson_points"]), drift_tolerance=0.5)
            deltas.append(t_prop / n)
            errs.append(float(np.linalg.norm(got - ref_step)))
        rows.append((f"dyson_local_K{order}", _loglog_slope(deltas, errs),
                     order + 0.9, None))

    directory = _out_dir(cfg, out_dir)
    import os

    table = []
    ok = True
    for name, slope, low, high in rows:
        passed = slope >= low and (high is None or slope <= high)
        ok = ok and passed
        table.append((name, slope, low, high if high is not None else float("nan"), passed))
        print(f"scaling {name}: slope={slope:.3f} required>={low}"
              + (f" <= {high}" if high is not None else "")
              + f" {'PASS' if passed else 'FAIL'}")
    write_csv(os.path.join(directory, "scaling.csv"),
              ["study", "slope", "min_slope", "max_slope", "pass"], table)
    return EXIT_OK if ok else EXIT_CHECK_FAILURE


def cmd_qgrad(cfg, out_dir=None) -> int:
    """Grid gradient estimator versus the adjoint gradient on a reduced model."""
    q = cfg["qgrad"]
    spec = _small_spec(cfg, "qgrad")
    u0 = spec.grid_template()
    coords = [int(c) for c in q["coords"]]
    register = GridRegisterSpec(num_vars=len(coords), bits_per_var=int(q["bits_per_var"]),
                                probe_radius=float(q["probe_radius"]))
    scheme = central_difference_coefficients(int(q["difference_order"]))
    scale = q["phase_scale"]
    if scale is None:
        cell_target = derivative_bound(1, spec.delta, spec.mu_norm)
        scale = math.pi * register.points_per_var / (2.0 * 2.0 * register.probe_radius * cell_target)
    scale = float(scale)

    # interference-circuit identity on this model
    p1 = hadamard_test_probability(spec, u0)
    expected = 0.5 - 0.5 * evaluate_terminal(spec, u0)
    hadamard_gap = abs(p1 - expected)

    f = restricted_objective(spec, u0, coords)
    truth = gradient_adjoint(spec, u0).values + \
        2.0 * spec.alpha * spec.delta * np.r_[0.5, np.ones(spec.num_steps - 1), 0.5] * u0.nodal_values
    truth = truth[coords]
    cell = 2.0 * math.pi / (scale * 2.0 * register.probe_radius)
    hits = 0
    results = []
    repeats = int(q["repeats"])
    for rep in range(repeats):
        res = jordan_estimate_gradient(f, np.zeros(len(coords)), register, scheme,
                                       scale, int(q["shots"]), seed=rep)
        results.append(res)
        if np.all(np.abs(res.values - truth) <= cell):
            hits += 1
    rate = hits / repeats

    directory = _out_dir(cfg, out_dir)
    import os

    write_csv(os.path.join(directory, "qgrad_stats.csv"),
              ["metric", "value"],
              [("hadamard_identity_gap", hadamard_gap),
               ("success_rate", rate),
               ("grid_cell", cell),
               ("repeats", repeats)])
    report = QueryCostReport.from_runs("jordan_gradient", results,
                                       conversion_eps=float(q["conversion_eps"]))
    report.to_csv(os.path.join(directory, "query_cost.csv"))
    print(f"qgrad: hadamard_gap={hadamard_gap:.3e} success_rate={rate:.3f} "
          f"cell={cell:.4g} repeats={repeats}")
    ok = hadamard_gap < 1e-10 and rate >= float(q["success_threshold"])
    return EXIT_OK if ok else EXIT_CHECK_FAILURE


def cmd_simulate(cfg, out_dir=None) -> int:
    """Propagate a single trajectory and report the terminal expectation."""
    spec = build_spec(cfg)
    u = _initial_control(cfg, spec)
    final, record = evolve(spec.h0, spec.mu, u, spec.initial_state, spec.propagator)
    value = expectation(spec.observable, final)
    print(f"simulate: steps={spec.num_steps} terminal_expectation={value:.12g} "
          f"norm={float(np.linalg.norm(final.amplitudes)):.12f}")
    if cfg["output"]["trajectory_dump"]:
        directory = _out_dir(cfg, out_dir)
        import os

        write_trajectory_csv(record, os.path.join(directory, "trajectory.csv"))
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qocgrad",
        description="Gradient-based control optimization experiments and checks",
    )
    parser.add_argument("--config", help="path to a JSON config file")
    parser.add_argument("--out", help="output directory (overrides output.directory)")
    parser.add_argument("--seed", type=int, help="override optimizer.seed")
    parser.add_argument("--set", dest="overrides", action="append", metavar="SEC.KEY=VAL",
                        help="override one config key (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("optimize", cmd_optimize), ("gradcheck", cmd_gradcheck),
                     ("scaling", cmd_scaling), ("qgrad", cmd_qgrad),
                     ("simulate", cmd_simulate)):
        sp = sub.add_parser(name, help=fn.__doc__)
        sp.set_defaults(func=fn)

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        apply_overrides(cfg, args.overrides)
        if args.seed is not None:
            cfg["optimizer"]["seed"] = int(args.seed)
        return args.func(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except SeriesUnderConvergedError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
