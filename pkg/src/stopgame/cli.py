"""Command-line entry point.

    stopgame run      scenario.toml   # full study for the configured scenario
    stopgame verify   scenario.toml   # equilibrium check of [regions].target
    stopgame classify scenario.toml   # S/I/C/Ambiguous labels for the target
    stopgame iterate  scenario.toml   # fixed-point iteration from the target
    stopgame improve  scenario.toml   # pairwise improvement of two candidates
    stopgame search   scenario.toml   # fold improvement over all candidates
    stopgame value    scenario.toml   # value function f v J of the target

Exit codes: 0 success, 1 configuration error, 2 verification failure,
3 numerical error.  Outputs land in an atomically written bundle under
--out/<scenario>/<stamp>/ with a JSON manifest describing the run.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import os
import sys
from pathlib import Path


from . import equilibrium as eq
from .config import ConfigError, ScenarioConfig, load_config
from .discounting import QuadratureError
from .discrete_oracle import HorizonError
from .dynamics import SimulationBlowupError
from .regions import PolicyRegion
from .reports import (atomic_bundle, config_digest, git_describe, write_manifest,
                      write_mask_pgm, write_heatmap_pgm, write_value_field_csv,
                      write_table_csv)
from .scenarios import ButterflyScenario, RunBudget, run_butterfly
from .valuation import CellSimulationError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VERIFICATION = 2
EXIT_NUMERICAL = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stopgame",
                                description="time-inconsistent stopping engine")
    p.add_argument("command", choices=["run", "classify", "iterate", "verify",
                                       "improve", "search", "value"])
    p.add_argument("config", help="scenario TOML file")
    p.add_argument("--seed", type=int, default=None, help="override [budget].seed")
    p.add_argument("--threads", type=int, default=None, help="override [budget].threads")
    p.add_argument("--out", default=None, help="output root (default $STOPGAME_OUT or ./out)")
    p.add_argument("--stamp", default=None, help="bundle directory name (default UTC stamp)")
    p.add_argument("--quiet", action="store_true")
    return p


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def _manifest_payload(cfg: ScenarioConfig, args, results: dict) -> dict:
    budget = dict(cfg.resolved.get("budget", {}))
    if args.seed is not None:
        budget["seed"] = args.seed
    if args.threads is not None:
        budget["threads"] = args.threads
    return {
        "scenario": cfg.name,
        "command": args.command,
        "seed": budget.get("seed", 0),
        "budget": budget,
        "tolerances": {"quad_tol": 1e-9, "eps": budget.get("eps", 0.0) or "auto"},
        "config": cfg.resolved,
        "config_digest": config_digest(cfg.resolved),
        "git_describe": git_describe(str(cfg.base_dir)),
        "results": results,
    }


def _write_region_artifacts(stage: Path, tag: str, region: PolicyRegion, grid) -> list:
    written = []
    if grid.dim == 2 and region.mask is not None:
        path = stage / f"{tag}_mask.pgm"
        write_mask_pgm(path, region.mask_on(grid), grid)
        written.append(path.name)
    return written


def _cmd_run(cfg: ScenarioConfig, args, stage: Path) -> tuple[int, dict]:
    regions_cfg = cfg.resolved["regions"]
    if regions_cfg["family"] == "barrier" and regions_cfg["b_values"]:
        return _run_barrier_study(cfg, args, stage)
    # no family configured: a run degenerates to verifying the target
    return _cmd_verify(cfg, args, stage)


def _run_barrier_study(cfg: ScenarioConfig, args, stage: Path) -> tuple[int, dict]:
    d = cfg.resolved["discount"]
    p = cfg.resolved["payoff"]
    if d["kind"] != "hyperbolic" or p["kind"] != "butterfly":
        raise ConfigError("[regions].family",
                          "barrier study needs hyperbolic discount and butterfly payoff")
    scn = ButterflyScenario(beta=d["beta"], a=p["a"], grid=cfg.grid(),
                            b_values=tuple(cfg.resolved["regions"]["b_values"]))
    b = cfg.resolved["budget"]
    run = RunBudget(n_paths=b["n_paths"],
                    seed=b["seed"] if args.seed is None else args.seed,
                    dt=cfg.resolved["process"]["dt"],
                    t_tail=b["t_tail"] or cfg.resolved["process"]["horizon"],
                    eps=b["eps"] or None,
                    threads=b["threads"] if args.threads is None else args.threads,
                    max_iters=b["max_iters"])
    study = run_butterfly(scn, run)

    per_case = []
    for case in study.cases:
        tag = f"b{case.b:.6f}".replace(".", "p")
        write_value_field_csv(stage / f"j_mc_{tag}.csv", case.mc_field)
        write_value_field_csv(stage / f"j_quad_{tag}.csv", case.quad_field)
        write_heatmap_pgm(stage / f"j_mc_{tag}.pgm", case.mc_field.values, scn.grid)
        write_mask_pgm(stage / f"region_{tag}.pgm",
                       scn.region(case.b).mask_on(scn.grid), scn.grid)
        per_case.append({"b": case.b, "admissible": case.admissible,
                         "is_equilibrium": case.report.is_equilibrium,
                         "violations": len(case.report.violations),
                         "collar_excluded": case.report.collar_excluded,
                         "agreement_sigma": case.agreement_sigma})
    results = {"a_star": study.scenario.a_star,
               "admissible_b_max": study.scenario.admissible_b_max,
               "optimality_label": study.optimality_label,
               "cases": per_case,
               "dominance_violations": study.dominance_violations,
               "star_matches_top": study.star_matches_top}
    code = EXIT_OK
    for case in study.cases:
        if case.admissible and not case.report.is_equilibrium:
            code = EXIT_VERIFICATION
    if study.search is not None and study.search.R_star is not None:
        write_mask_pgm(stage / "r_star_mask.pgm",
                       study.search.R_star.mask_on(scn.grid), scn.grid)
        results["r_star"] = {"closure_contained": study.search.closure_contained,
                             "is_equilibrium": study.search.final_report.is_equilibrium}
    return code, results


def _cmd_verify(cfg: ScenarioConfig, args, stage: Path) -> tuple[int, dict]:
    budget = cfg.budget(threads=args.threads, seed=args.seed)
    region = cfg.target_region()
    report = eq.verify_equilibrium(region, budget)
    write_value_field_csv(stage / "j_field.csv", report.value_field)
    write_table_csv(stage / "violations.csv",
                    ["cell", "side", "margin", "std_err"],
                    [["/".join(map(str, v.cell)), v.side, v.margin, v.std_err]
                     for v in report.violations])
    _write_region_artifacts(stage, "target", region.with_grid(budget.grid)
                            if region.mask is None else region, budget.grid)
    results = {"is_equilibrium": report.is_equilibrium,
               "violations": len(report.violations),
               "collar_excluded": report.collar_excluded, "eps": report.eps}
    return (EXIT_OK if report.is_equilibrium else EXIT_VERIFICATION), results


def _cmd_classify(cfg: ScenarioConfig, args, stage: Path) -> tuple[int, dict]:
    budget = cfg.budget(threads=args.threads, seed=args.seed)
    region = cfg.target_region()
    field = budget.value_field(region)
    cls = eq.classify(field, budget.payoff, region, budget.eps)
    centers = budget.grid.centers()
    names = {0: "S", 1: "I", 2: "C", 3: "Ambiguous"}
    fvals = budget.payoff.eval(centers)
    rows = [list(centers[i]) + [names[int(cls.labels.ravel()[i])],
                                field.values.ravel()[i], fvals[i],
                                field.std_errs.ravel()[i]]
            for i in range(len(centers))]
    write_table_csv(stage / "classification.csv",
                    [f"x{k + 1}" for k in range(budget.grid.dim)]
                    + ["label", "value", "payoff", "std_err"], rows)
    results = {"eps": cls.eps,
               "counts": {names[k]: cls.count(k) for k in (0, 1, 2, 3)}}
    return EXIT_OK, results


def _cmd_iterate(cfg: ScenarioConfig, args, stage: Path) -> tuple[int, dict]:
    budget = cfg.budget(threads=args.threads, seed=args.seed)
    trace = eq.iterate_theta(cfg.target_region(), budget)
    for i, it in enumerate(trace.iterates):
        _write_region_artifacts(stage, f"iter{i:02d}",
                                it if it.mask is not None else it.with_grid(budget.grid),
                                budget.grid)
    write_table_csv(stage / "iteration.csv", ["round", "changed_cells"],
                    [[i + 1, c] for i, c in enumerate(trace.changed_cells)])
    results = {"converged": trace.converged, "direction": trace.direction.name,
               "rounds": len(trace.changed_cells), "oscillation": trace.oscillation,
               "warnings": trace.warnings}
    return EXIT_OK, results


def _cmd_improve(cfg: ScenarioConfig, args, stage: Path) -> tuple[int, dict]:
    budget = cfg.budget(threads=args.threads, seed=args.seed)
    cands = cfg.candidate_regions()
    if len(cands) < 2:
        raise ConfigError("[regions].candidates", "improve needs two candidates")
    try:
        res = eq.improve_pair(cands[0], cands[1], budget)
    except ValueError as exc:
        return EXIT_VERIFICATION, {"error": str(exc)}
    results = {"degenerate": res.degenerate, "dominance_ok": res.dominance_ok,
               "violations": [list(v) for v in res.violations]}
    if res.improved is not None:
        _write_region_artifacts(stage, "improved", res.improved, budget.grid)
        write_value_field_csv(stage / "j_improved.csv", res.improved_field)
    return EXIT_OK, results


def _cmd_search(cfg: ScenarioConfig, args, stage: Path) -> tuple[int, dict]:
    budget = cfg.budget(threads=args.threads, seed=args.seed)
    regions_cfg = cfg.resolved["regions"]
    if regions_cfg["candidates"]:
        cands = cfg.candidate_regions()
    elif regions_cfg["family"] == "barrier" and regions_cfg["b_values"]:
        from .regions import barrier_region

        cands = [PolicyRegion.from_analytic(barrier_region(b), budget.grid,
                                            provenance=f"barrier(b={b:g})")
                 for b in regions_cfg["b_values"]]
    else:
        raise ConfigError("[regions]", "search needs candidates or a barrier family")
    res = eq.search_optimal(cands, budget)
    results = {"rejected": [i for i, _ in res.rejected],
               "closure_contained": res.closure_contained}
    if res.R_star is None:
        return EXIT_VERIFICATION, results
    _write_region_artifacts(stage, "r_star", res.R_star, budget.grid)
    write_value_field_csv(stage / "j_star.csv", res.final_report.value_field)
    results["r_star"] = {"is_equilibrium": res.final_report.is_equilibrium,
                         "provenance": res.R_star.provenance}
    return EXIT_OK, results


def _cmd_value(cfg: ScenarioConfig, args, stage: Path) -> tuple[int, dict]:
    budget = cfg.budget(threads=args.threads, seed=args.seed)
    region = cfg.target_region()
    field = budget.value_field(region)
    report = eq.verify_equilibrium(region, budget, value_field=field)
    V = eq.value_function(region, budget, value_field=field,
                          verified=report.is_equilibrium)
    write_value_field_csv(stage / "value_function.csv", V)
    return EXIT_OK, {"is_equilibrium": report.is_equilibrium}


_COMMANDS = {"run": _cmd_run, "verify": _cmd_verify, "classify": _cmd_classify,
             "iterate": _cmd_iterate, "improve": _cmd_improve,
             "search": _cmd_search, "value": _cmd_value}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_root = Path(args.out or os.environ.get("STOPGAME_OUT", "out"))
    stamp = args.stamp or _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    bundle_dir = out_root / cfg.name / stamp

    try:
        with atomic_bundle(bundle_dir) as stage:
            code, results = _COMMANDS[args.command](cfg, args, stage)
            write_manifest(stage / "manifest.json",
                           _manifest_payload(cfg, args, results))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuadratureError, HorizonError, SimulationBlowupError,
            CellSimulationError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _say(args, f"wrote {bundle_dir} (exit {code})")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
