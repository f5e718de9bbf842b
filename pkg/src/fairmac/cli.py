"""Command-line front end.

fairmac run    -- simulate one scenario and report the metrics
fairmac oracle -- solve an allocation problem directly, no simulation
fairmac sweep  -- run a preset across seeds and configs, merged deterministically
"""

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .allocation import solve_max_min, solve_weighted_max_min, total_allocation
from .mac import NodeConfig
from .metrics import build_report, csv_header, report_to_csv_row, report_to_json
from .presets import (
    chain_scenario,
    convergence_scenario,
    demand_change_scenario,
    mobility_scenario,
    random_scenario,
    seven_node_problem,
    seven_node_scenario,
    table_configs,
)
from .scenario_io import SchemaError, load_problem, load_scenario
from .sim import SimError, run_scenario


# preset builders share a (seed, node_config, duration) calling shape so the
# sweep worker can be driven by plain strings and numbers
def _p_seven(seed, cfg, dur):
    return seven_node_scenario(seed=seed, node_config=cfg, duration=dur or 5.0)


def _p_seven_link(seed, cfg, dur):
    return seven_node_scenario(link_at=1.5, seed=seed, node_config=cfg,
                               duration=dur or 4.0)


def _p_random(seed, cfg, dur):
    return random_scenario(seed, node_config=cfg, duration=dur or 4.0)


def _p_convergence(seed, cfg, dur):
    return convergence_scenario(seed, node_config=cfg, duration=dur or 6.5)


def _p_demand_change(seed, cfg, dur):
    return demand_change_scenario(seed, node_config=cfg, duration=dur or 3.5)


def _p_chain5(seed, cfg, dur):
    return chain_scenario(5, seed=seed, node_config=cfg, duration=dur or 4.0)


def _p_chain24(seed, cfg, dur):
    return chain_scenario(24, seed=seed, node_config=cfg, duration=dur or 4.0)


def _p_mobility(seed, cfg, dur):
    return mobility_scenario(seed, node_config=cfg, duration=dur or 5.0)


_PRESETS = {
    "seven-node": _p_seven,
    "seven-node-link": _p_seven_link,
    "random": _p_random,
    "convergence": _p_convergence,
    "demand-change": _p_demand_change,
    "chain-5": _p_chain5,
    "chain-24": _p_chain24,
    "mobility": _p_mobility,
}

_ORACLE_PRESETS = {
    "seven-node": lambda: seven_node_problem(linked=False),
    "seven-node-linked": lambda: seven_node_problem(linked=True),
}


def _resolve_config(name):
    if name is None or name == "default":
        return None
    configs = table_configs()
    if name not in configs:
        raise SchemaError(f"unknown config {name!r}; choose from "
                          f"default, {', '.join(sorted(configs))}")
    return configs[name]


def _preset_scenario(name, seed, config, duration):
    if name not in _PRESETS:
        raise SchemaError(f"unknown preset {name!r}; choose from "
                          f"{', '.join(sorted(_PRESETS))}")
    return _PRESETS[name](seed, config, duration)


def _emit(text, path):
    if path is None or path == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def _write_csv(path, rows, header=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header or csv_header())
        writer.writerows(rows)


def _fmt_seconds(x):
    return "inf" if x == float("inf") else f"{x:.4f}"


def _summary(report):
    lines = [f"scenario {report.scenario_name} seed {report.seed} "
             f"({report.duration:g} s, {report.delivered} delivered)"]
    lines.append(f"init_convergence {_fmt_seconds(report.init_convergence)} s")
    for ev in report.event_convergences:
        lines.append(f"{ev['kind']} @{ev['at']:g} s: "
                     f"{_fmt_seconds(ev['seconds'])} s")
    lines.append(f"excess_error {report.excess_error:.4f}  "
                 f"deficit_error {report.deficit_error:.4f}")
    lines.append(f"throughput {report.throughput:.1f} pkt/s  "
                 f"delay_mean {report.delay_mean * 1e3:.2f} ms")
    lines.append(f"drops_retry {report.drops_retry}  "
                 f"drops_queue {report.drops_queue}  "
                 f"collisions {report.collisions}")
    if report.impact_mean is not None:
        lines.append(f"impact_mean {report.impact_mean:.2f} hops")
    if report.final_audit_ok is not None:
        lines.append(f"final_audit {'ok' if report.final_audit_ok else 'FAILED'}")
    return "\n".join(lines)


# ------------------------------------------------------------------ commands

def _cmd_run(args):
    config = _resolve_config(args.config)
    if args.scenario:
        scenario = load_scenario(args.scenario)
        if config is not None:
            scenario.node_config = config
        if args.seed is not None:
            scenario.seed = args.seed
        if args.duration is not None:
            scenario.duration = args.duration
        scenario.validate()
    else:
        scenario = _preset_scenario(args.preset, args.seed or 0,
                                    config, args.duration)
    try:
        record = run_scenario(scenario)
    except SimError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        print("last slots (slot, transmitters, decoded, ackers, collisions):",
              file=sys.stderr)
        for line in exc.trace:
            print(f"  {line}", file=sys.stderr)
        return 2
    report = build_report(record)
    if args.json:
        _emit(report_to_json(report), args.json)
    if args.csv:
        _write_csv(args.csv, [report_to_csv_row(report)])
    if not args.quiet:
        print(_summary(report))
    return 0


def _cmd_oracle(args):
    if args.problem:
        problem = load_problem(args.problem)
    elif args.preset:
        if args.preset not in _ORACLE_PRESETS:
            raise SchemaError(f"unknown problem preset {args.preset!r}; "
                              f"choose from {', '.join(sorted(_ORACLE_PRESETS))}")
        problem = _ORACLE_PRESETS[args.preset]()
    else:
        raise SchemaError("oracle needs --problem FILE or --preset NAME")
    weighted = args.weighted or any(d.weight > 1 for d in problem.demands.values())
    solve = solve_weighted_max_min if weighted else solve_max_min
    claims = solve(problem)
    totals = total_allocation(problem, claims)
    payload = {
        "version": __version__,
        "weighted": weighted,
        "claims": {str(i): claims[i] for i in sorted(claims, key=repr)},
        "totals": {str(i): totals[i] for i in sorted(totals, key=repr)},
    }
    _emit(json.dumps(payload, indent=2, sort_keys=True), args.json)
    return 0


def _sweep_worker(job):
    preset, seed, config_name, duration = job
    config = _resolve_config(config_name)
    scenario = _preset_scenario(preset, seed, config, duration)
    report = build_report(run_scenario(scenario))
    return (config_name, seed), report


def _cmd_sweep(args):
    if args.configs == "all":
        config_names = sorted(table_configs())
    else:
        config_names = [c.strip() for c in args.configs.split(",") if c.strip()]
    for name in config_names:
        _resolve_config(name)
    if args.preset not in _PRESETS:
        raise SchemaError(f"unknown preset {args.preset!r}; choose from "
                          f"{', '.join(sorted(_PRESETS))}")

    jobs = [(args.preset, args.seed + r, name, args.duration)
            for name in config_names
            for r in range(args.replicates)]
    results = {}
    try:
        if args.jobs <= 1:
            for job in jobs:
                key, report = _sweep_worker(job)
                results[key] = report
        else:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                for key, report in pool.map(_sweep_worker, jobs):
                    results[key] = report
    except SimError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2

    # completion order varies with the pool; output order must not
    ordered = sorted(results)
    _write_csv(args.csv,
               [[key[0]] + report_to_csv_row(results[key]) for key in ordered],
               header=["config"] + csv_header())
    if args.json:
        payload = [json.loads(report_to_json(results[key])) for key in ordered]
        _emit(json.dumps(payload, indent=2, sort_keys=True), args.json)
    return 0


# ------------------------------------------------------------------ parser

def build_parser():
    parser = argparse.ArgumentParser(
        prog="fairmac",
        description="Distributed max-min fair channel allocation: "
                    "simulate it, sweep it, or just solve the math.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate one scenario")
    source = run_p.add_mutually_exclusive_group(required=True)
    source.add_argument("--scenario", metavar="FILE",
                        help="scenario file (.toml or .json)")
    source.add_argument("--preset", metavar="NAME",
                        help=f"one of: {', '.join(sorted(_PRESETS))}")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--duration", type=float, default=None,
                       help="override the scenario duration (seconds)")
    run_p.add_argument("--config", default=None,
                       help="node config: default or a table_configs name")
    run_p.add_argument("--json", metavar="FILE", help="write the full report")
    run_p.add_argument("--csv", metavar="FILE", help="write a one-row summary")
    run_p.add_argument("--quiet", action="store_true",
                       help="suppress the stdout summary")
    run_p.set_defaults(func=_cmd_run)

    oracle_p = sub.add_parser("oracle",
                              help="solve an allocation problem exactly")
    oracle_p.add_argument("--problem", metavar="FILE",
                          help="problem file (.toml or .json)")
    oracle_p.add_argument("--preset", metavar="NAME",
                          help=f"one of: {', '.join(sorted(_ORACLE_PRESETS))}")
    oracle_p.add_argument("--weighted", action="store_true",
                          help="force the weighted solver")
    oracle_p.add_argument("--json", metavar="FILE",
                          help="write instead of printing")
    oracle_p.set_defaults(func=_cmd_oracle)

    sweep_p = sub.add_parser("sweep",
                             help="run a preset across seeds and configs")
    sweep_p.add_argument("--preset", required=True, metavar="NAME",
                         help=f"one of: {', '.join(sorted(_PRESETS))}")
    sweep_p.add_argument("--replicates", type=int, default=1,
                         help="seeds per config, numbered seed..seed+n-1")
    sweep_p.add_argument("--seed", type=int, default=0, help="base seed")
    sweep_p.add_argument("--configs", default="all",
                         help="comma list of config names, or 'all'")
    sweep_p.add_argument("--jobs", type=int, default=1,
                         help="parallel worker processes")
    sweep_p.add_argument("--duration", type=float, default=None)
    sweep_p.add_argument("--csv", required=True, metavar="FILE")
    sweep_p.add_argument("--json", metavar="FILE")
    sweep_p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
