"""Command-line entry point.

Exit codes: 0 success, 1 other failure, 2 configuration error, 3 simulation fault.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .errors import ConfigurationError, PcsMpcError, SimulationFault

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_FAULT = 0, 1, 2, 3


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "objective", None):
        cfg = cfg.with_objective(args.objective)
    if getattr(args, "horizon", None):
        cfg = cfg.with_horizon(args.horizon)
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "controller", None):
        from dataclasses import replace
        cfg = replace(cfg, controller_type=args.controller)
    return cfg


def _scenario(args, cfg: RunConfig):
    from .scenario import read_scenario_csv, spring_scenario
    if args.scenario:
        path = Path(args.scenario)
        if not path.exists():
            raise ConfigurationError(f"scenario file {path} not found")
        return read_scenario_csv(path, warmup_days=cfg.warmup_days)
    return spring_scenario(seed=cfg.seed, warmup_days=int(cfg.warmup_days))


def _print(obj) -> None:
    from .harness import _jsonable
    print(json.dumps(_jsonable(obj), indent=2, default=str))


def cmd_run(args) -> int:
    from .config import ConfigWatcher
    from .harness import run_closed_loop, write_outputs
    cfg = _config(args)
    scenario = _scenario(args, cfg)
    watcher = ConfigWatcher(args.config, cfg) if args.config and args.watch_config else None
    result = run_closed_loop(scenario, cfg, config_watcher=watcher)
    paths = write_outputs(result, args.out, extra={"scenario": scenario.name, "controller": cfg.controller_type,
                                                   "objective": cfg.objective, "horizon": cfg.controller.N})
    k = result.kpis
    print(f"PV self-consumption {k.pv_self_consumption:.2f} %, heat generated in PV hours "
          f"{k.heat_gen_share_pv:.1f} % vs load {k.heat_load_share_pv:.1f} %, grid import {k.grid_import_total:.2f} kWh")
    print(f"outputs written to {paths['results'].parent}")
    return EXIT_OK


def cmd_compare_pcs(args) -> int:
    from .harness import compare_pcs_vs_water
    cfg = _config(args)
    scenario = _scenario(args, cfg) if args.scenario else None
    w = tuple(args.w_values)
    rep = compare_pcs_vs_water(scenario, cfg, w_values=w, m_sh=args.m_sh)
    _print({"reactivation_h": rep.reactivation_h, "delay_vs_water_h": rep.delays_h})
    return EXIT_OK


def cmd_kpi(args) -> int:
    import pandas as pd

    from .harness import compute_kpis, read_telemetry_csv
    path = Path(args.telemetry)
    if not path.exists():
        raise ConfigurationError(f"telemetry file {path} not found")
    tel = read_telemetry_csv(path)
    steps = pd.read_csv(args.steps) if args.steps else None
    _print(compute_kpis(tel, steps).to_dict())
    return EXIT_OK


def cmd_scenario(args) -> int:
    from .scenario import spring_scenario, write_scenario_csv
    sc = spring_scenario(seed=args.seed or 0, days=args.days, warmup_days=args.warmup_days)
    write_scenario_csv(sc, args.out)
    print(f"wrote {len(sc)} rows ({args.warmup_days} warm-up days) to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcs-mpc", description="Supervisory MPC for a PV / battery / heat-pump "
                                "system with phase-change-slurry storage, and its closed-loop simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON or TOML run configuration")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--horizon", type=int, default=None, help="prediction horizon N in steps")
        sp.add_argument("--objective", choices=("self-consumption", "cost"), default=None)

    r = sub.add_parser("run", help="closed-loop run, writes results.json, telemetry.csv, steps.csv and plot data")
    common(r)
    r.add_argument("--scenario", help="scenario CSV; default is the synthetic spring scenario")
    r.add_argument("--controller", choices=("mpc", "rule"), default=None)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--watch-config", action="store_true", help="reload tuning and constraints when --config changes")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare-pcs", help="heat-pump reactivation delay of slurry versus water")
    common(c)
    c.add_argument("--scenario", help="discharge-window CSV; default is a constant 1.2 kW draw")
    c.add_argument("--w-values", type=float, nargs="+", default=[0.3, 0.15, 0.0])
    c.add_argument("--m-sh", type=float, default=563.0, help="SH-zone slurry mass, kg")
    c.set_defaults(func=cmd_compare_pcs)

    k = sub.add_parser("kpi", help="recompute KPIs from a telemetry CSV")
    k.add_argument("--telemetry", required=True)
    k.add_argument("--steps", help="optional steps.csv for solve-time and slack statistics")
    k.set_defaults(func=cmd_kpi)

    s = sub.add_parser("scenario", help="write the synthetic spring scenario as CSV")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--days", type=int, default=4)
    s.add_argument("--warmup-days", type=int, default=7)
    s.set_defaults(func=cmd_scenario)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationFault as exc:
        print(f"simulation fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except PcsMpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
