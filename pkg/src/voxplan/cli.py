"""Command line entry points.

Exit codes: 0 success, 2 invalid input, 3 planner infeasibility flag.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxplan",
        description="Corridor planning from piloted demonstrations: map "
                    "generation, corridor construction, global trajectory "
                    "optimization, replanning simulation, and the live "
                    "teach service.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("map-gen", help="generate a seeded random map")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--dims", type=int, nargs=3, default=[32, 32, 16])
    p.add_argument("--res", type=float, default=0.2)
    p.add_argument("--origin", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    p.add_argument("--blocks", type=int, default=8)
    p.add_argument("--rings", type=int, default=1)
    p.add_argument("--walls", type=int, default=1)
    p.add_argument("--tunnels", type=int, default=0)
    p.add_argument("--density", type=float, default=None)

    p = sub.add_parser("corridor", help="build a corridor from a teach path")
    p.add_argument("--map", required=True)
    p.add_argument("--path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="cube_init_pruned",
                   choices=["raw", "cube_init", "cube_init_pruned", "parallel"])
    p.add_argument("--lanes", type=int, default=1)

    p = sub.add_parser("plan", help="optimize the global trajectory")
    p.add_argument("--corridor", required=True)
    p.add_argument("--vmax", type=float, default=3.0)
    p.add_argument("--amax", type=float, default=3.0)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--wt", type=float, default=1.0)
    p.add_argument("--rounds", type=int, default=8)
    p.add_argument("--out", required=True)
    p.add_argument("--timemap-out", default=None)

    p = sub.add_parser("replan-sim", help="run an injection scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="run a full teach/repeat/replan scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("serve", help="start the live teach service")
    p.add_argument("--map", required=True)
    p.add_argument("--port", type=int, default=8750)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--session-dump-dir", default=None)
    p.add_argument("--vmax", type=float, default=3.0)
    p.add_argument("--amax", type=float, default=3.0)
    return parser


def _cmd_map_gen(args) -> int:
    from .formats import serialize_map
    from .grid import MapRecipe, generate_map
    recipe = MapRecipe(seed=args.seed, dims=tuple(args.dims),
                       resolution=args.res, origin=tuple(args.origin),
                       n_blocks=args.blocks, n_rings=args.rings,
                       n_walls=args.walls, n_tunnels=args.tunnels,
                       density=args.density)
    grid = generate_map(recipe)
    Path(args.out).write_text(serialize_map(grid))
    print(f"wrote {args.out}: dims {grid.dims}, "
          f"occupied {grid.occupied_fraction():.3f}")
    return EXIT_OK


def _cmd_corridor(args) -> int:
    from .corridor import InflateOptions
    from .formats import parse_map, parse_path, serialize_corridor
    from .teach import replay_path
    grid = parse_map(Path(args.map).read_text())
    times, points = parse_path(Path(args.path).read_text())
    opts = InflateOptions(mode=args.mode, lanes=args.lanes)
    corridor = replay_path(grid, times, points, opts)
    Path(args.out).write_text(serialize_corridor(corridor))
    print(f"wrote {args.out}: {len(corridor)} polyhedra")
    return EXIT_OK


def _cmd_plan(args) -> int:
    from .formats import (dumps, parse_corridor, serialize_trajectory,
                          timemap_to_obj)
    from .planner import DescentConfig, plan_global
    from .spatial import BoundaryState
    from .temporal import KinodynamicLimits
    corridor = parse_corridor(Path(args.corridor).read_text())
    limits = KinodynamicLimits(v_max=args.vmax, a_max=args.amax)
    config = DescentConfig(w_time=args.wt, rho=args.rho, dt=args.dt,
                           max_rounds=args.rounds)
    boundary = BoundaryState(p0=corridor.start, pf=corridor.end)
    traj = plan_global(corridor, boundary, limits, config)
    Path(args.out).write_text(serialize_trajectory(traj.retimed))
    if args.timemap_out:
        Path(args.timemap_out).write_text(dumps(timemap_to_obj(traj.timemap)))
    print(f"wrote {args.out}: {len(traj.path.pieces)} pieces, "
          f"T={traj.total_time:.3f}s, {traj.rounds} rounds")
    return EXIT_OK


def _cmd_scenario(args) -> int:
    from .formats import parse_scenario, serialize_runlog
    from .sim import run_scenario
    scenario = parse_scenario(Path(args.scenario).read_text())
    log = run_scenario(scenario)
    Path(args.out).write_text(serialize_runlog(log))
    print(f"wrote {args.out}: {log.meta['ticks']} ticks, "
          f"{log.meta['replans']} replans, halted={log.meta['halted']}")
    return EXIT_INFEASIBLE if log.meta["halted"] else EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .formats import parse_map
    from .service import build_app
    grid = parse_map(Path(args.map).read_text())
    app = build_app(grid, v_max=args.vmax, a_max=args.amax,
                    dump_dir=args.session_dump_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INVALID if e.code not in (0, None) else EXIT_OK
    handlers = {
        "map-gen": _cmd_map_gen,
        "corridor": _cmd_corridor,
        "plan": _cmd_plan,
        "replan-sim": _cmd_scenario,
        "run": _cmd_scenario,
        "serve": _cmd_serve,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, FileNotFoundError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
