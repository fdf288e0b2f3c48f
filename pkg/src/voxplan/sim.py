"""Deterministic point-mass repeat/replan simulation.

The vehicle tracks the commanded trajectory with a first-order position
lag and faces its flying direction. Scripted obstacle injections mutate
the true world while the global plan keeps using the stale teach-time map;
a periodic checker over a local ESDF snapshot triggers window replans.
Clearance accounting always uses the post-injection ground-truth map.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import MapRecipe, OccupancyGrid, compute_esdf, generate_map
from .planner import DescentConfig, GlobalTrajectory, plan_global
from .replan import ReplanConfig, check_horizon, refine, replan_window
from .spatial import BoundaryState
from .teach import replay_path
from .temporal import KinodynamicLimits

log = logging.getLogger(__name__)


@dataclass
class VehicleState:
    p: np.ndarray
    v: np.ndarray
    yaw: float
    t: float


@dataclass
class Injection:
    time: float                 # simulation time the obstacle appears
    kind: str                   # box | ring
    center: tuple               # world coordinates
    size: tuple = (0.4, 0.4, 0.4)
    inner_diameter: float = 0.6


@dataclass
class Scenario:
    recipe: MapRecipe
    teach_times: list
    teach_points: list
    limits: KinodynamicLimits
    descent: DescentConfig = field(default_factory=DescentConfig)
    replan: ReplanConfig = field(default_factory=ReplanConfig)
    injections: list = field(default_factory=list)
    tick_rate: float = 100.0
    tracker_lag: float = 0.25   # first-order position lag constant, seconds
    sensing_range: float = 5.0  # local ESDF half-extent, meters
    drift: Optional[tuple] = None  # fixed command offset approximating pose drift


@dataclass
class RunLog:
    records: list               # per-tick dicts
    events: list                # {t, type, ...}
    meta: dict

    def min_clearance(self) -> float:
        return min(r["clearance"] for r in self.records)

    def max_cmd_speed(self) -> float:
        return max(float(np.linalg.norm(r["cmd_v"])) for r in self.records)

    def count_events(self, kind: str) -> int:
        return sum(1 for e in self.events if e["type"] == kind)


def _stamp_injection(occ: np.ndarray, grid: OccupancyGrid, inj: Injection):
    res = grid.resolution
    c = np.asarray(inj.center, dtype=float)
    cv = (c - grid.origin) / res
    if inj.kind == "box":
        half = np.maximum(np.asarray(inj.size) / (2 * res), 0.5)
        lo = np.maximum(np.floor(cv - half).astype(int), 0)
        hi = np.minimum(np.ceil(cv + half).astype(int), np.array(grid.dims) - 1)
        occ[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1] = True
    elif inj.kind == "ring":
        from .grid import _stamp_ring
        r_in = inj.inner_diameter / 2
        _stamp_ring(occ, res, grid.origin, c, 0, r_in, r_in + 0.2, res * 0.75)
    else:
        raise ValueError(f"unknown injection kind {inj.kind!r}")


class _StitchedSource:
    """Command source that follows the remaining local spline, then the
    global trajectory from the rejoin time onward (the detour clock slips
    by the stretch surplus). Exposes the sampling interface the replanner
    needs, so a detour can itself be replanned with C2 continuity."""

    def __init__(self, spline, gtraj, rejoin_tau: float):
        self.spline = spline
        self.gtraj = gtraj
        self.offset = spline.t_end - rejoin_tau
        self.total_time = gtraj.total_time + self.offset

    def state_at(self, t: float):
        if t < self.spline.t_end - 1e-9:
            tt = min(max(t, self.spline.t_start), self.spline.t_end - 1e-9)
            return (self.spline.eval(tt), self.spline.eval(tt, 1),
                    self.spline.eval(tt, 2))
        return self.gtraj.state_at(t - self.offset)

    def position(self, t: float):
        return self.state_at(t)[0]


def _local_esdf(true_grid: OccupancyGrid, center: np.ndarray,
                half_extent: float) -> object:
    """ESDF over a sensing box around the vehicle. Crop faces that lie on
    the world boundary get an occupied shell (out-of-bounds is obstacle);
    faces inside the world stay open (beyond sensing reads free)."""
    res = true_grid.resolution
    cv = ((center - true_grid.origin) / res).astype(int)
    r = int(math.ceil(half_extent / res))
    lo = np.maximum(cv - r, 0)
    hi = np.minimum(cv + r + 1, np.array(true_grid.dims))
    sub = np.ascontiguousarray(true_grid.occupancy[lo[0]:hi[0], lo[1]:hi[1],
                                                   lo[2]:hi[2]])
    pad_lo = [2 if lo[a] == 0 else 0 for a in range(3)]
    pad_hi = [2 if hi[a] == true_grid.dims[a] else 0 for a in range(3)]
    if any(pad_lo) or any(pad_hi):
        sub = np.pad(sub, tuple(zip(pad_lo, pad_hi)), constant_values=True)
    origin = true_grid.origin + (lo - np.array(pad_lo)) * res
    sub_grid = OccupancyGrid(sub.shape, res, origin, sub)
    return compute_esdf(sub_grid, cap=2.0)


def run_scenario(scenario: Scenario) -> RunLog:
    """Teach replay -> corridor -> global plan -> tracked repeat with
    sliding-window replanning against injected obstacles."""
    grid = generate_map(scenario.recipe)
    corridor = replay_path(grid, scenario.teach_times, scenario.teach_points)
    boundary = BoundaryState(p0=corridor.start, pf=corridor.end)
    gtraj = plan_global(corridor, boundary, scenario.limits, scenario.descent)

    true_occ = grid.occupancy.copy()
    true_grid = grid.with_occupancy(true_occ.copy())
    true_esdf = compute_esdf(true_grid, cap=5.0)

    dt = 1.0 / scenario.tick_rate
    check_dt = 1.0 / scenario.replan.check_rate
    drift = np.asarray(scenario.drift, float) if scenario.drift is not None \
        else np.zeros(3)

    pos0, _, _ = gtraj.state_at(0.0)
    state = VehicleState(p=pos0.copy(), v=np.zeros(3), yaw=0.0, t=0.0)
    records: list[dict] = []
    events: list[dict] = []

    pending = sorted(scenario.injections, key=lambda i: i.time)
    local = None          # (spline, rejoin_tau)
    local_clock = 0.0
    global_clock = 0.0
    next_check = 0.0
    tick = 0
    halted = False
    max_ticks = int((gtraj.total_time * 3 + 10.0) / dt)

    while tick < max_ticks:
        t = tick * dt
        # obstacle injections mutate the true world only
        while pending and pending[0].time <= t:
            inj = pending.pop(0)
            _stamp_injection(true_occ, grid, inj)
            true_grid = grid.with_occupancy(true_occ.copy())
            true_esdf = compute_esdf(true_grid, cap=5.0)
            events.append({"t": t, "type": "injection", "kind": inj.kind,
                           "center": list(inj.center)})

        # periodic horizon check over a fresh local ESDF snapshot
        if t >= next_check - 1e-12 and not halted:
            next_check += check_dt
            esdf_local = _local_esdf(true_grid, state.p,
                                     scenario.sensing_range)
            if local is None:
                report = check_horizon(gtraj, esdf_local, global_clock,
                                       scenario.replan)
                if report.colliding:
                    events.append({"t": t, "type": "replan_triggered",
                                   "t_first": report.t_first,
                                   "min_distance": report.min_distance})
                    spline = replan_window(gtraj, esdf_local, global_clock,
                                           scenario.replan, scenario.limits)
                    spline = refine(spline, esdf_local, scenario.limits,
                                    scenario.replan, traj=gtraj,
                                    t_now=global_clock)
                    if getattr(spline, "feasible", False):
                        rejoin = getattr(spline, "rejoin_time",
                                         min(global_clock
                                             + scenario.replan.horizon,
                                             gtraj.total_time))
                        local = (spline, rejoin)
                        local_clock = spline.t_start
                        events.append({"t": t, "type": "replan_done",
                                       "rejoin_tau": rejoin})
                    else:
                        events.append({"t": t, "type": "emergency_stop",
                                       "reason": "replan infeasible"})
                        halted = True
            else:
                # mid-detour: watch the remaining local spline; a fresh
                # threat triggers a re-replan from the current spline state
                spline, rejoin = local
                worst = np.inf
                for tt in np.linspace(local_clock, spline.t_end - 1e-9, 60):
                    p = spline.eval(tt)
                    try:
                        d, _ = esdf_local.sample_signed(p)
                    except ValueError:
                        continue
                    worst = min(worst, d)
                if worst <= 0.0:
                    events.append({"t": t, "type": "replan_triggered",
                                   "reason": "detour invalidated",
                                   "min_distance": float(worst)})
                    source = _StitchedSource(spline, gtraj, rejoin)
                    new_spline = replan_window(source, esdf_local, local_clock,
                                               scenario.replan, scenario.limits)
                    new_spline = refine(new_spline, esdf_local,
                                        scenario.limits, scenario.replan,
                                        traj=source, t_now=local_clock)
                    if getattr(new_spline, "feasible", False):
                        new_rejoin = getattr(new_spline, "rejoin_time",
                                             source.total_time)
                        # rejoin time lives on the stitched clock
                        local = (new_spline, new_rejoin - source.offset)
                        local_clock = new_spline.t_start
                        events.append({"t": t, "type": "replan_done",
                                       "rejoin_tau": new_rejoin - source.offset})
                    else:
                        events.append({"t": t, "type": "emergency_stop",
                                       "reason": "detour replan infeasible"})
                        halted = True

        # command from the active source
        if halted:
            cmd_p, cmd_v, cmd_a = state.p.copy(), np.zeros(3), np.zeros(3)
        elif local is not None:
            spline, rejoin = local
            cmd_p = spline.eval(local_clock)
            cmd_v = spline.eval(local_clock, 1)
            cmd_a = spline.eval(local_clock, 2)
            local_clock += dt
            if local_clock >= spline.t_end:
                local = None
                global_clock = rejoin
        else:
            cmd_p, cmd_v, cmd_a = gtraj.state_at(global_clock)
            global_clock += dt
        cmd_p = cmd_p + drift

        # first-order lag tracker
        state.v = (cmd_p - state.p) / scenario.tracker_lag
        state.p = state.p + state.v * dt
        speed = float(np.linalg.norm(cmd_v))
        if speed > 1e-3:
            state.yaw = math.atan2(cmd_v[1], cmd_v[0])
        state.t = t

        try:
            clearance, _ = true_esdf.sample_signed(state.p)
        except ValueError:
            clearance = 0.0
        records.append({
            "tick": tick, "t": t,
            "p": state.p.tolist(), "v": state.v.tolist(), "yaw": state.yaw,
            "cmd_p": cmd_p.tolist(), "cmd_v": cmd_v.tolist(),
            "cmd_a": cmd_a.tolist(),
            "clearance": float(clearance),
            "mode": "halt" if halted else ("local" if local is not None
                                           else "global"),
        })
        tick += 1
        if halted and len(records) > 10:
            break
        if local is None and not halted and global_clock >= gtraj.total_time:
            break

    meta = {
        "seed": scenario.recipe.seed,
        "total_time": gtraj.total_time,
        "rounds": gtraj.rounds,
        "ticks": tick,
        "halted": halted,
        "replans": sum(1 for e in events if e["type"] == "replan_done"),
    }
    return RunLog(records=records, events=events, meta=meta)
