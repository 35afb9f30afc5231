"""Command-line entry point: ``cpnav run | bench | map | plot``."""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .artifacts import (REFERENCE_COLUMNS, read_trace_csv, reference_grid, svg_plot, write_json, write_plan_json,
                        write_svg, write_trace_csv)
from .config import ConfigError, parse_config, to_dict
from .harness import KINDS, SUITES, TrialError, TrialOutput, canonical_planner, run_batch
from .metrics import format_table, metrics_csv, timings_csv
from .planners.base import Plan, PlanningError
from .vehicle import SimulationFault
from .world import (Map, MapGenerationError, experimental_map, generate_random_map, load_map, min_clearance,
                    save_map)

log = logging.getLogger("cpnav")

ENV_OUT = "CPNAV_OUT"
DEFAULT_ROOT = "cpnav-out"
TABLE_METRICS = {
    "estimator_static": ("force_true", "force_est"),
    "estimator_dynamic": ("force_true", "f_hat_max"),
    "drop": ("height", "peak_accel"),
    "wall_collision": ("f_hat_max", "rebound_speed", "settle_time", "max_tilt"),
    "pole_collision": ("f_hat_max", "rebound_speed", "settle_time", "traj_time"),
    "plan_offline": ("plan_time", "traj_gen_time", "traj_time", "path_length", "clearance"),
    "plan_online": ("plan_time", "traj_gen_time", "traj_time", "path_length", "clearance", "n_replans"),
}


class CliError(Exception):
    """Bad usage or input; reported as one line with exit status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _seeds(text: str) -> list[int]:
    """``10`` means seeds 1..10; ``3,5,9`` and ``4-7`` list them explicitly."""
    text = text.strip()
    if re.fullmatch(r"\d+", text):
        n = int(text)
        if n < 1:
            raise CliError("--seeds count must be at least 1")
        return list(range(1, n + 1))
    out: list[int] = []
    for part in text.split(","):
        m = re.fullmatch(r"\s*(-?\d+)\s*(?:-\s*(-?\d+)\s*)?", part)
        if not m:
            raise CliError(f"--seeds: cannot parse {part!r}")
        lo = int(m.group(1))
        hi = int(m.group(2)) if m.group(2) else lo
        out.extend(range(lo, hi + 1))
    return out


def _set_pair(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise CliError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    return key.strip(), value


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.+-]+", "_", text).strip("_")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cpnav", description="Collision-inclusive quadrotor navigation benchmark.")
    p.add_argument("--version", action="version", version=f"cpnav {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="single seed")
        sp.add_argument("--seeds", help="N (1..N), a list 1,4,9 or a range 2-5")
        sp.add_argument("--out", help=f"output directory (default ${ENV_OUT}/<name> or {DEFAULT_ROOT}/<name>)")
        sp.add_argument("--plot", action="store_true", help="write an SVG per trial")
        sp.add_argument("--variant", choices=("compliant", "rigid"))
        sp.add_argument("--planner", action="append", help="planner (repeatable): cp, cp_rigid, astar, rrtstar")
        sp.add_argument("--height", type=float, help="drop height, m")
        sp.add_argument("--speed", type=float, help="wall/pole approach speed, m/s")
        sp.add_argument("--map", help="experimental, cluttered, empty, or a map JSON file")
        sp.add_argument("--jobs", type=int, help="worker processes")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config field, e.g. sim.dt=0.0005")

    run = sub.add_parser("run", help="run one scenario")
    common(run)
    run.add_argument("--scenario", choices=KINDS)

    bench = sub.add_parser("bench", help="run a preset suite and print the aggregate table")
    common(bench)
    bench.add_argument("--suite", required=True, choices=sorted(SUITES))

    mp = sub.add_parser("map", help="generate or inspect maps")
    mp.add_argument("--gen", action="store_true", help="generate a random cluttered map")
    mp.add_argument("--experimental", action="store_true", help="write the lab map")
    mp.add_argument("--show", metavar="FILE", help="summarize a map file")
    mp.add_argument("--n", type=int, default=30, help="number of poles")
    mp.add_argument("--seed", type=int, default=0)
    mp.add_argument("--size", type=float, nargs=2, default=(20.0, 20.0), metavar=("W", "H"))
    mp.add_argument("--radius", type=float, default=0.3)
    mp.add_argument("--out", help="output file or directory")
    mp.add_argument("--svg", action="store_true", help="also write an SVG view")

    pl = sub.add_parser("plot", help="render a trace CSV as SVG")
    pl.add_argument("trace", help="trace CSV written by run/bench")
    pl.add_argument("--map", help="map JSON (default: experimental map bounds)")
    pl.add_argument("--plan", help="plan JSON to overlay")
    pl.add_argument("--out", help="SVG path (default: next to the trace)")
    return p


def _overrides(args, command: str) -> dict:
    o: dict = {}
    if args.seed is not None and args.seeds is not None:
        raise CliError("use either --seed or --seeds")
    if args.seed is not None:
        o["seeds"] = [args.seed]
    elif args.seeds is not None:
        o["seeds"] = _seeds(args.seeds)
    if args.out:
        o["out"] = args.out
    if args.plot:
        o["plot"] = True
    if args.variant:
        o["scenario.variant"] = args.variant
        o["scenario.variants"] = [args.variant]
    if args.planner:
        names = [n for item in args.planner for n in item.split(",") if n.strip()]
        try:
            o["scenario.planners"] = [canonical_planner(n) for n in names]
        except ValueError as exc:
            raise CliError(str(exc)) from None
    if args.height is not None:
        o["scenario.heights"] = [args.height]
    if args.speed is not None:
        o["scenario.speed"] = args.speed
    if args.map:
        o["scenario.map"] = args.map
    if args.jobs is not None:
        o["jobs"] = args.jobs
    if command == "run" and args.scenario:
        o["scenario.kind"] = args.scenario
    for item in args.set:
        k, v = _set_pair(item)
        o[k] = v
    return o


def _default_out(name: str) -> str:
    return str(Path(os.environ.get(ENV_OUT) or DEFAULT_ROOT) / name)


def _write_outputs(out_dir: Path, cfg, outputs: Sequence[TrialOutput], summary: dict, name: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    records = [o.record for o in outputs]
    (out_dir / "metrics.csv").write_text(metrics_csv(records))
    (out_dir / "timings.csv").write_text(timings_csv(records))
    failures = [{"label": r.label, "seed": r.seed, "error": r.error} for r in records if r.error]
    write_json(out_dir / "summary.json", {
        "name": name,
        "scenario": cfg.scenario.kind,
        "seeds": list(cfg.seeds),
        "config": to_dict(cfg),
        "aggregates": summary,
        "failures": failures,
    })
    for o in outputs:
        stem = _slug(f"{cfg.scenario.kind}_{o.record.label}_s{o.record.seed}")
        tr = o.trace()
        if tr is not None:
            write_trace_csv(out_dir / "traces" / f"{stem}.csv", tr[1], tr[0])
        if o.result is not None and o.result.references:
            write_trace_csv(out_dir / "trajectories" / f"{stem}.csv", reference_grid(o.result.references),
                            REFERENCE_COLUMNS, rate=None)
        if o.plan is not None:
            write_plan_json(out_dir / "plans" / f"{stem}.json", o.plan)
        if cfg.plot and o.world is not None and o.result is not None:
            svg = svg_plot(o.world, [(f"{o.record.label} seed {o.record.seed}", o.result.positions[:, :2])],
                           o.plan, cfg.planner.l_max)
            write_svg(out_dir / "plots" / f"{stem}.svg", svg)


def _cmd_run(args, command: str) -> int:
    base: dict = {"seeds": [1]} if command == "run" else {"seeds": list(range(1, 11))}
    if command == "bench":
        base = {**base, **SUITES[args.suite]}
        name = args.suite
    else:
        name = args.scenario or "run"
    base["out"] = _default_out(name)
    cfg = parse_config(args.config, _overrides(args, command), base)
    if command == "run" and args.config is None and args.scenario is None:
        raise CliError("run needs --scenario or a --config that sets scenario.kind")
    keep = command == "run" or cfg.plot
    outputs, summary = run_batch(cfg, keep_traces=keep)
    out_dir = Path(cfg.out)
    _write_outputs(out_dir, cfg, outputs, summary, name)
    metrics = TABLE_METRICS[cfg.scenario.kind]
    print(format_table(summary, metrics))
    for r in (o.record for o in outputs):
        if r.error:
            print(f"# {r.label} seed {r.seed}: {r.error}")
    print(f"# wrote {out_dir}")
    return 0


def _cmd_map(args) -> int:
    chosen = sum(bool(x) for x in (args.gen, args.experimental, args.show))
    if chosen != 1:
        raise CliError("map needs exactly one of --gen, --experimental, --show")
    if args.show:
        world = load_map(args.show)
        print(f"name={world.name} bounds={list(world.bounds)} poles={len(world.obstacles)} "
              f"walls={len(world.walls)} start={list(world.start)} goal={list(world.goal)}")
        if world.obstacles:
            gaps = np.linalg.norm(world.centers[:, None] - world.centers[None], axis=2)
            np.fill_diagonal(gaps, np.inf)
            print(f"min_center_spacing={gaps.min():.3f} "
                  f"start_clearance={min_clearance(world.start, world, 0.0):.3f} "
                  f"goal_clearance={min_clearance(world.goal, world, 0.0):.3f}")
        return 0
    if args.gen:
        if args.n < 0:
            raise CliError("--n must be non-negative")
        world = generate_random_map(tuple(args.size), args.n, args.radius, seed=args.seed)
        default_name = f"map_n{args.n}_seed{args.seed}.json"
    else:
        world = experimental_map()
        default_name = "map_experimental.json"
    target = Path(args.out) if args.out else Path(_default_out("maps")) / default_name
    if target.suffix != ".json":
        target = target / default_name
    target.parent.mkdir(parents=True, exist_ok=True)
    save_map(world, target)
    if args.svg:
        write_svg(target.with_suffix(".svg"), svg_plot(world, inflation=0.28))
    print(target)
    return 0


def _cmd_plot(args) -> int:
    columns, data = read_trace_csv(args.trace)
    if "x" not in columns or "y" not in columns:
        raise CliError(f"{args.trace}: trace has no x/y columns")
    xy = data[:, [columns.index("x"), columns.index("y")]]
    if args.map:
        world = load_map(args.map)
    else:
        lo, hi = xy.min(axis=0) - 1.0, xy.max(axis=0) + 1.0
        world = Map((float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])), (), (),
                    tuple(map(float, xy[0])), tuple(map(float, xy[-1])))
    plan = None
    if args.plan:
        import json
        plan = Plan.from_dict(json.loads(Path(args.plan).read_text()))
    target = Path(args.out) if args.out else Path(args.trace).with_suffix(".svg")
    write_svg(target, svg_plot(world, [(Path(args.trace).stem, xy)], plan, 0.28))
    print(target)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if args.command in ("run", "bench"):
            return _cmd_run(args, args.command)
        if args.command == "map":
            return _cmd_map(args)
        return _cmd_plot(args)
    except (CliError, ConfigError) as exc:
        print(f"cpnav: error: {_one_line(exc)}", file=sys.stderr)
        return 2
    except (PlanningError, MapGenerationError, SimulationFault, TrialError, ValueError, KeyError, OSError) as exc:
        print(f"cpnav: error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
