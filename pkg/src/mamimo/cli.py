"""Experiment configuration, seeded sweeps, persistence, and the CLI.

Config files are YAML with two sections: a `scenario` mapping (physical
and algorithm parameters, with `*_dbm` / `*_db` convenience fields) and an
optional `sweep` section naming one axis, its values, the schemes, and the
seeds. Results land in a fixed-schema CSV plus a JSON sidecar holding the
resolved configuration and per-run traces. Rates and efficiencies are
reported in bits; everything internal stays in nats.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from .config import ConfigError, ScenarioConfig, scenario_from_dict, watt_to_dbm
from .channel import centered_grid, sample_scenario, tx_field_matrix
from .ao import SCHEMES, SchemeSpec, de_snapshot, initial_precoder, run_ao
from .de import minorizer_params, minorizer_value
from .precoder import (PowerModel, dinkelbach_unconstrained, optimal_precoder,
                       total_power, water_filling_full_power)
from .apv_transmit import grad_ee_transmit
from .apv_receive import build_receive_ctx, build_receive_objective, surrogate_system
from .montecarlo import fd_gradient, mc_sum_rate

LN2 = math.log(2.0)

CSV_HEADER = ["axis", "scheme", "seed", "EE_de", "EE_mc", "sum_rate",
              "tx_power", "iters", "wall_time", "status"]

AXES = ("p_max_dbm", "p_max", "n_users", "region_tx", "region_rx", "paths",
        "rician_k")


@dataclass
class ExperimentPlan:
    scenario: ScenarioConfig
    axis: str = "p_max_dbm"
    values: list = field(default_factory=list)
    schemes: list = field(default_factory=lambda: ["MA"])
    seeds: list = field(default_factory=lambda: [0])
    mc_samples: int = 2000
    output: str = "results"

    def validate(self) -> None:
        if self.axis not in AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}; "
                              f"pick from {AXES}")
        if len(self.values) == 0:
            raise ConfigError("sweep values must not be empty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigError("sweep values must be strictly increasing")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.mc_samples < 0:
            raise ConfigError("mc_samples must be nonnegative")
        for scheme in self.schemes:
            SchemeSpec.make(scheme, self.scenario)
        for value in self.values:
            apply_axis(self.scenario, self.axis, value)


def apply_axis(config: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    """Return a copy of the scenario with one swept field replaced."""
    if axis == "p_max_dbm":
        return config.with_updates(p_max=10.0 ** (float(value) / 10.0) / 1000.0)
    if axis == "p_max":
        return config.with_updates(p_max=float(value))
    if axis == "n_users":
        return config.with_updates(n_users=int(value))
    if axis == "paths":
        return config.with_updates(paths_tx=int(value), paths_rx=int(value))
    if axis == "region_tx":
        return config.with_updates(region_tx=float(value))
    if axis == "region_rx":
        return config.with_updates(region_rx=float(value))
    if axis == "rician_k":
        return config.with_updates(rician_k=float(value))
    raise ConfigError(f"unknown sweep axis {axis!r}")


def axis_base_value(plan: ExperimentPlan):
    """The base scenario's value of the sweep axis (for single runs)."""
    cfg = plan.scenario
    if plan.axis == "p_max_dbm":
        return watt_to_dbm(cfg.p_max)
    if plan.axis == "paths":
        return cfg.paths_tx
    return getattr(cfg, plan.axis if plan.axis != "p_max" else "p_max")


def load_config(path: str) -> ExperimentPlan:
    """Parse and validate a plan file; reject unknown keys loudly."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level of the config must be a mapping")
    known_top = {"scenario", "sweep", "mc_samples", "output"}
    unknown = set(raw) - known_top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "scenario" not in raw:
        raise ConfigError("missing required section: scenario")
    scenario = scenario_from_dict(raw["scenario"])
    plan = ExperimentPlan(scenario)
    sweep = raw.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, dict):
            raise ConfigError("sweep section must be a mapping")
        known_sweep = {"axis", "values", "schemes", "seeds"}
        unknown = set(sweep) - known_sweep
        if unknown:
            raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
        plan.axis = sweep.get("axis", plan.axis)
        plan.values = list(sweep.get("values", []))
        plan.schemes = [str(s) for s in sweep.get("schemes", plan.schemes)]
        plan.seeds = [int(s) for s in sweep.get("seeds", plan.seeds)]
    if "mc_samples" in raw:
        plan.mc_samples = int(raw["mc_samples"])
    if "output" in raw:
        plan.output = str(raw["output"])
    if not plan.values:
        plan.values = [axis_base_value(plan)]
    plan.validate()
    return plan


def _cell_seeds(seed: int, axis_idx: int):
    """Deterministic child streams: scenario and MC draws are paired
    across schemes because they depend only on (seed, axis)."""
    scen = np.random.SeedSequence(entropy=[int(seed), int(axis_idx)])
    mc = np.random.SeedSequence(entropy=[int(seed), int(axis_idx), 7])
    return scen, int(mc.generate_state(1, np.uint64)[0])


def _run_cell(task):
    """One (axis value, scheme, seed) execution; never raises."""
    base_dict, axis, value, scheme, seed, axis_idx, mc_samples = task
    started = time.perf_counter()
    try:
        base = ScenarioConfig(**base_dict)
        config = apply_axis(base, axis, value)
        scen_ss, mc_seed = _cell_seeds(seed, axis_idx)
        stats = sample_scenario(config, np.random.default_rng(scen_ss))
        trace = run_ao(config, stats, scheme, seed=seed,
                       mc_samples=mc_samples, mc_seed=mc_seed)
        wall = time.perf_counter() - started
        row = {
            "axis": value,
            "scheme": trace.scheme,
            "seed": seed,
            "EE_de": trace.final_ee_de / LN2,
            "EE_mc": (trace.final_ee_mc.mean / LN2
                      if trace.final_ee_mc else math.nan),
            "sum_rate": trace.final_sum_rate_de / LN2,
            "tx_power": trace.final_precoder.tx_power(),
            "iters": trace.iterations_run,
            "wall_time": wall,
            "status": "ok",
        }
        detail = {
            "axis": value, "scheme": trace.scheme, "seed": seed,
            "ee_trace_bits": [rec.ee / LN2 for rec in trace.records],
            "iterations_to_converge": trace.iterations_to_converge,
            "wall_time": wall,
        }
        return row, detail
    except Exception as exc:  # noqa: BLE001 - sweep must survive bad cells
        wall = time.perf_counter() - started
        row = {"axis": value, "scheme": scheme, "seed": seed,
               "EE_de": math.nan, "EE_mc": math.nan, "sum_rate": math.nan,
               "tx_power": math.nan, "iters": 0, "wall_time": wall,
               "status": f"error:{type(exc).__name__}"}
        return row, {"axis": value, "scheme": scheme, "seed": seed,
                     "error": str(exc), "wall_time": wall}


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17e}"
    return str(value)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([_fmt(row[col]) for col in CSV_HEADER])
    return buf.getvalue()


def run_plan(plan: ExperimentPlan, jobs: int = 1, single_point: bool = False):
    """Execute a plan and write `<output>.csv` and `<output>.json`.

    Rows are ordered by (axis, scheme, seed) regardless of worker
    completion order; every cell's randomness derives only from its seed
    and axis index, so results are identical for any `jobs`.
    """
    plan.validate()
    values = [axis_base_value(plan)] if single_point else list(plan.values)
    base_dict = asdict(plan.scenario)
    tasks = []
    for axis_idx, value in enumerate(values):
        for scheme in plan.schemes:
            for seed in plan.seeds:
                tasks.append((base_dict, plan.axis, value, scheme, seed,
                              axis_idx, plan.mc_samples))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell, tasks))
    else:
        outcomes = [_run_cell(task) for task in tasks]
    rows = [row for row, _ in outcomes]
    details = [detail for _, detail in outcomes]
    csv_text = rows_to_csv(rows)
    with open(plan.output + ".csv", "w") as fh:
        fh.write(csv_text)
    sidecar = {
        "scenario": base_dict,
        "axis": plan.axis,
        "values": values,
        "schemes": plan.schemes,
        "seeds": plan.seeds,
        "mc_samples": plan.mc_samples,
        "runs": details,
    }
    with open(plan.output + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, default=float)
    return rows


# ---------------------------------------------------------------------------
# validation suite


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tolerance)


def validate(config: ScenarioConfig, seed: int = 0,
             mc_samples: int = 10000) -> list[CheckResult]:
    """Cross-check the analysis chain on one sampled scenario.

    Bundles the oracle suite: deterministic rates against Monte-Carlo,
    analytic gradients against finite differences, minorizer tangency and
    domination, water-filling power residual, and a short alternating run
    for monotonicity and feasibility.
    """
    rng = np.random.default_rng(seed)
    stats = sample_scenario(config, rng)
    s2, wl = config.noise_power, config.wavelength
    pm = PowerModel.from_config(config)
    t = centered_grid(config.n_tx, config.min_spacing, config.region_tx)
    rs = [centered_grid(config.n_rx, config.min_spacing, config.region_rx)
          for _ in range(config.n_users)]
    precoder = initial_precoder(config)
    de_kw = dict(max_iters=150, tol=1e-11)
    checks: list[CheckResult] = []

    rates, _ = de_snapshot(t, rs, precoder, stats, s2, wl, **de_kw)
    mc = mc_sum_rate(t, rs, precoder, stats, s2, max(mc_samples, 100),
                     seed + 1, wl)
    checks.append(CheckResult(
        "de_vs_mc_relative_gap",
        abs(rates.sum() - mc.mean) / abs(mc.mean), 0.03))

    params = minorizer_params(t, rs, precoder, stats, s2, wl, **de_kw)
    minor = minorizer_value(t, precoder, params, stats, wl)
    tangency = float(np.max(np.abs(minor - rates)
                            / np.maximum(np.abs(rates), 1e-12)))
    checks.append(CheckResult("minorizer_tangency_rel", tangency, 1e-8))

    worst_dom = -math.inf
    for _ in range(100):
        t_pert = t.with_vector(np.clip(
            t.as_vector() + rng.uniform(-0.2 * wl, 0.2 * wl, 2 * config.n_tx),
            0.0, config.region_tx))
        scale = 1.0 + rng.uniform(-0.2, 0.2)
        p_pert = precoder.scaled(scale)
        minor_p = minorizer_value(t_pert, p_pert, params, stats, wl)
        rates_p, _ = de_snapshot(t_pert, rs, p_pert, stats, s2, wl, **de_kw)
        worst_dom = max(worst_dom, float(np.max(minor_p - rates_p)))
    checks.append(CheckResult("minorizer_domination_gap", worst_dom, 1e-6))

    for p_max, label in ((1e7, "dinkelbach"), (config.p_max * 1e-4,
                                               "waterfilling")):
        pm_b = PowerModel(pm.amp_inefficiency, p_max, pm.p_circuit,
                          pm.p_static, pm.n_tx)
        vec = np.clip(t.as_vector()
                      + rng.uniform(-0.01, 0.01, 2 * config.n_tx) * wl,
                      0.0, config.region_tx)
        t_b = t.with_vector(vec)
        g_list = [tx_field_matrix(t_b, st, wl) for st in stats]
        report = optimal_precoder(g_list, params, pm_b, tol=1e-13)

        def ee_at(v, pm_b=pm_b):
            tt = t.with_vector(v)
            gl = [tx_field_matrix(tt, st, wl) for st in stats]
            return optimal_precoder(gl, params, pm_b, tol=1e-13).ee

        grad = grad_ee_transmit(t_b, params, stats, pm_b, report, wl,
                                g_list=g_list)
        fd = fd_gradient(ee_at, vec, 1e-7 * wl)
        rel = float(np.linalg.norm(fd - grad)
                    / max(np.linalg.norm(fd), 1e-12))
        checks.append(CheckResult(f"grad_tx_{label}_rel", rel, 1e-4))

    objective = build_receive_objective(t, precoder, rs[0], stats[0], s2,
                                        wl, 0, **de_kw)
    ctx = build_receive_ctx(rs[0], objective)
    _, b = surrogate_system(ctx, config.delta_r)
    fd = fd_gradient(lambda v: objective.evaluate(rs[0].with_vector(v)),
                     rs[0].as_vector(), 1e-7 * wl)
    checks.append(CheckResult(
        "grad_rx_rel",
        float(np.linalg.norm(fd - b) / max(np.linalg.norm(fd), 1e-12)),
        1e-4))

    g_list = [tx_field_matrix(t, st, wl) for st in stats]
    wf = water_filling_full_power(g_list, params, config.p_max)
    checks.append(CheckResult(
        "waterfilling_power_residual",
        abs(wf.precoder.tx_power() - config.p_max) / config.p_max, 1e-8))
    dk = dinkelbach_unconstrained(g_list, params, pm, tol=1e-12)
    p_opt = dk.precoder
    s_mat = (dk.eigvecs * dk.eigvals) @ dk.eigvecs.conj().T
    resid = 0.0
    base = 0.0
    ptot = total_power(p_opt, pm)
    for g, par, blk in zip(g_list, params, p_opt.blocks):
        full = (g.conj().T @ par.a_bar - s_mat @ blk
                - dk.eta * pm.amp_inefficiency * blk) / ptot
        resid += float(np.linalg.norm(full) ** 2)
        base += float(np.linalg.norm(g.conj().T @ par.a_bar / ptot) ** 2)
    checks.append(CheckResult(
        "dinkelbach_first_order_residual",
        math.sqrt(resid) / (1.0 + math.sqrt(base)), 1e-6))

    short = config.with_updates(ao_iters=min(config.ao_iters, 5))
    trace = run_ao(short, stats, "MA", seed=seed)
    increments = np.diff(np.concatenate([[trace.records[0].ee],
                                         trace.ee_trace]))
    checks.append(CheckResult("ao_min_increment",
                              float(-(increments.min() if increments.size
                                      else 0.0)), 1e-9))
    feas = trace.final_t.is_feasible(config.min_spacing) and all(
        r.is_feasible(config.min_spacing) for r in trace.final_rs)
    checks.append(CheckResult("ao_feasibility_violations",
                              0.0 if feas else 1.0, 0.5))
    return checks


# ---------------------------------------------------------------------------
# command line


def _add_common(parser):
    parser.add_argument("--out", help="output path prefix (overrides plan)")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker processes for sweep cells")
    parser.add_argument("--seed", type=int, default=None,
                        help="replace the plan's seed list with one seed")
    parser.add_argument("--mc-samples", type=int, default=None,
                        help="override the Monte-Carlo sample count")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mamimo",
        description="Movable-antenna MIMO energy-efficiency simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run schemes x seeds at the base "
                                       "scenario (no axis sweep)")
    p_run.add_argument("plan")
    _add_common(p_run)
    p_sweep = sub.add_parser("sweep", help="run the full axis sweep")
    p_sweep.add_argument("plan")
    _add_common(p_sweep)
    p_val = sub.add_parser("validate", help="run the oracle cross-checks")
    p_val.add_argument("--config", help="plan or scenario file "
                                        "(defaults to built-in parameters)")
    p_val.add_argument("--seed", type=int, default=0)
    p_val.add_argument("--mc-samples", type=int, default=10000)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("run", "sweep"):
            plan = load_config(args.plan)
            if args.seed is not None:
                plan.seeds = [args.seed]
            if args.mc_samples is not None:
                plan.mc_samples = args.mc_samples
            if args.out:
                plan.output = args.out
            rows = run_plan(plan, jobs=max(args.jobs, 1),
                            single_point=args.command == "run")
            failures = [r for r in rows if r["status"] != "ok"]
            print(f"wrote {plan.output}.csv ({len(rows)} rows, "
                  f"{len(failures)} failed)")
            return 1 if failures else 0
        if args.command == "validate":
            if args.config:
                with open(args.config) as fh:
                    raw = yaml.safe_load(fh)
                section = raw.get("scenario", raw) if isinstance(raw, dict) \
                    else None
                if section is None:
                    raise ConfigError("validate needs a mapping config")
                config = scenario_from_dict(section)
            else:
                config = ScenarioConfig()
            checks = validate(config, seed=args.seed,
                              mc_samples=args.mc_samples)
            failed = 0
            for chk in checks:
                tag = "PASS" if chk.passed else "FAIL"
                print(f"[{tag}] {chk.name}: {chk.value:.3e} "
                      f"(tolerance {chk.tolerance:.1e})")
                failed += 0 if chk.passed else 1
            print(f"{len(checks) - failed}/{len(checks)} checks passed")
            return 0 if failed == 0 else 1
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
