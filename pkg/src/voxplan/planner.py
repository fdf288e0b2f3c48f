"""Coordinate descent over the spatial and temporal blocks.

Each round solves the jerk QP under the current durations, re-times the
result with the SOCP, and adopts the recovered durations for the next
round. A round is accepted only if the combined energy/time objective does
not increase; descent stops on relative stagnation or the round cap.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .curves import PiecewiseBezier, bezier_eval
from .spatial import (BoundaryState, SpatialProblem, optimize_spatial,
                      trajectory_energy)
from .temporal import (KinodynamicLimits, TimeMap, apply_timemap,
                       optimize_temporal)

log = logging.getLogger(__name__)


@dataclass
class DescentConfig:
    w_time: float = 1.0          # weight of total time in the combined cost
    rho: float = 0.0             # aggressiveness regularizer of the SOCP
    dt: float = 0.05             # transcription resolution, seconds
    max_rounds: int = 8
    tolerance: float = 1e-3      # relative combined-cost improvement
    degree: int = 5

    def __post_init__(self):
        if self.w_time < 0:
            raise ValueError("w_time must be >= 0")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")


def evaluate_cost(traj: PiecewiseBezier, config: DescentConfig) -> tuple:
    """(J_energy, T_total, J_total) with the closed-form jerk integral."""
    j_energy = trajectory_energy(traj)
    t_total = traj.total_duration
    return j_energy, t_total, j_energy + config.w_time * t_total


@dataclass
class GlobalTrajectory:
    """Final spatial path plus the re-timing that makes it flyable.

    ``path`` keeps the durations the time map was built from; ``retimed``
    is the same geometry under the recovered durations. Sampling composes
    the two, so reported velocities/accelerations are the limit-respecting
    profile.
    """
    path: PiecewiseBezier
    timemap: TimeMap
    history: list                # (J_energy, T_total, J_total) per accepted round
    rounds: int
    boundary: BoundaryState

    @property
    def retimed(self) -> PiecewiseBezier:
        return apply_timemap(self.path, self.timemap)

    @property
    def total_time(self) -> float:
        return float(self.timemap.durations_new.sum())

    def state_at(self, tau: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Position, velocity, acceleration at repeat clock tau."""
        tau = min(max(tau, 0.0), self.total_time)
        edges = np.cumsum(np.concatenate([[0.0], self.timemap.durations_new]))
        m = int(np.searchsorted(edges, tau, side="right")) - 1
        m = min(max(m, 0), len(self.path.pieces) - 1)
        t_local = self.timemap.t_of_tau(m, tau - edges[m])
        piece = self.path.pieces[m]
        t_local = min(max(t_local, 0.0), piece.duration)
        beta, alpha = self.timemap.rate_at(m, t_local)
        f1 = bezier_eval(piece, t_local, 1)
        f2 = bezier_eval(piece, t_local, 2)
        pos = bezier_eval(piece, t_local, 0)
        vel = f1 * np.sqrt(beta)
        acc = f1 * alpha + f2 * beta
        return pos, vel, acc

    def position(self, tau: float) -> np.ndarray:
        return self.state_at(tau)[0]


def _initial_durations(polyhedra, transition_points, boundary: BoundaryState,
                       v_max: float, dt: float) -> np.ndarray:
    """Chord length through the polyhedron sequence over v_max, floored."""
    anchors = [np.asarray(boundary.p0, float)]
    for m in range(1, len(polyhedra)):
        if transition_points is not None and m < len(transition_points):
            anchors.append(np.asarray(transition_points[m], float))
        else:
            anchors.append(polyhedra[m].vertices.mean(axis=0))
    anchors.append(np.asarray(boundary.pf, float))
    out = []
    for m in range(len(polyhedra)):
        chord = float(np.linalg.norm(anchors[m + 1] - anchors[m]))
        out.append(max(chord / v_max, 4.0 * dt))
    return np.array(out)


def plan_global(corridor, boundary: BoundaryState, limits: KinodynamicLimits,
                config: DescentConfig = DescentConfig(),
                initial_durations=None) -> GlobalTrajectory:
    """Alternate spatial and temporal optimization to a joint optimum.

    corridor is a FlightCorridor or a plain polyhedron list; the start/end
    of the boundary must lie in the first/last polyhedron. Initial
    durations default to chord length over v_max and only influence the
    round count, not the final safety or feasibility.
    """
    polyhedra = getattr(corridor, "polyhedra", corridor)
    transition_points = getattr(corridor, "transition_points", None)
    if len(polyhedra) < 1:
        raise ValueError("corridor must contain at least one polyhedron")

    if initial_durations is not None:
        durations = np.asarray(initial_durations, dtype=float)
    else:
        durations = _initial_durations(polyhedra, transition_points, boundary,
                                       limits.v_max, config.dt)
    tmap_boundary = ((boundary.v0, boundary.a0), (boundary.vf, boundary.af))
    history = []
    best = None
    rounds = 0
    for _ in range(config.max_rounds):
        rounds += 1
        traj = optimize_spatial(SpatialProblem(list(polyhedra), durations,
                                               boundary, config.degree))
        tmap = optimize_temporal(traj, limits, rho=config.rho, dt=config.dt,
                                 boundary=tmap_boundary)
        j_energy, t_total, j_total = evaluate_cost(apply_timemap(traj, tmap),
                                                   config)
        if best is not None and j_total > best[0] + 1e-9:
            rounds -= 1
            break  # rejected round: combined cost increased
        improved = best is None or (best[0] - j_total) > config.tolerance * max(
            1.0, abs(best[0]))
        history.append((j_energy, t_total, j_total))
        best = (j_total, traj, tmap)
        floored = np.maximum(tmap.durations_new, 4.0 * config.dt)
        dur_change = float(np.max(np.abs(floored - durations) / durations))
        durations = floored
        if dur_change < config.tolerance:
            break  # the temporal step is a fixed point: descent converged
        if not improved and len(history) > 1:
            break
    _, traj, tmap = best
    log.info("coordinate descent: %d rounds, J_total %.6g, T %.3f s",
             rounds, best[0], tmap.durations_new.sum())
    return GlobalTrajectory(path=traj, timemap=tmap, history=history,
                            rounds=rounds, boundary=boundary)
