"""Online flight-corridor construction from a streamed pose sequence.

A new polyhedron is inflated whenever the pose leaves the last one; if the
pose instead re-enters the second-to-last polyhedron, the last one is a
local loop and is popped. Poses may jump more than one voxel between
updates; they are interpolated at voxel resolution before processing.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corridor import (ConvexCluster, InflateOptions, Polyhedron,
                       cluster_to_polyhedron, convex_inflate)
from .grid import OccupancyGrid

log = logging.getLogger(__name__)

_INSIDE_TOL = 1e-9


@dataclass
class CorridorDelta:
    op: str                      # push | pop | none
    seq: int
    polyhedron: Optional[Polyhedron] = None
    warning: Optional[str] = None


@dataclass
class FlightCorridor:
    """Immutable ordered corridor with the states recorded at teach time."""
    polyhedra: list
    clusters: list
    start: np.ndarray
    end: np.ndarray
    transition_points: list      # pose that seeded each polyhedron

    def __len__(self) -> int:
        return len(self.polyhedra)

    def contains(self, p, tol: float = _INSIDE_TOL) -> bool:
        return any(poly.contains(p, tol) for poly in self.polyhedra)


class TeachSession:
    """One strictly ordered pose stream feeding corridor construction."""

    def __init__(self, grid: OccupancyGrid, pose: np.ndarray,
                 opts: Optional[InflateOptions] = None):
        self.grid = grid
        self.opts = opts or InflateOptions()
        self.polyhedra: list[Polyhedron] = []
        self.clusters: list[ConvexCluster] = []
        self.transition_points: list[np.ndarray] = []
        self.history: list[tuple[float, np.ndarray]] = []
        self.state = "active"
        self.seq = 0
        pose = np.asarray(pose, dtype=float).reshape(3)
        voxel = grid.world_to_voxel(pose)
        if grid.is_occupied(voxel):
            raise ValueError(f"start pose {pose} is in occupied or "
                             "out-of-bounds space")
        self._push(pose)
        self.last_pose = pose
        self.history.append((0.0, pose.copy()))

    def _push(self, pose: np.ndarray) -> CorridorDelta:
        cluster = convex_inflate(self.grid.world_to_voxel(pose), self.grid,
                                 self.opts)
        poly = cluster_to_polyhedron(cluster)
        self.polyhedra.append(poly)
        self.clusters.append(cluster)
        self.transition_points.append(pose.copy())
        self.seq += 1
        return CorridorDelta(op="push", seq=self.seq, polyhedron=poly)

    def _pop(self) -> CorridorDelta:
        self.polyhedra.pop()
        self.clusters.pop()
        self.transition_points.pop()
        self.seq += 1
        return CorridorDelta(op="pop", seq=self.seq)

    def _step(self, pose: np.ndarray) -> Optional[CorridorDelta]:
        if self.polyhedra[-1].contains(pose, _INSIDE_TOL):
            return None
        if len(self.polyhedra) >= 2 and self.polyhedra[-2].contains(pose, _INSIDE_TOL):
            return self._pop()
        return self._push(pose)

    def update(self, pose, t: Optional[float] = None) -> list[CorridorDelta]:
        """Process one pose; returns the (possibly empty) delta list."""
        if self.state != "active":
            raise ValueError("session already finished")
        pose = np.asarray(pose, dtype=float).reshape(3)
        deltas: list[CorridorDelta] = []
        step = self.grid.resolution
        start = self.last_pose.copy()
        delta_vec = pose - start
        dist = float(np.linalg.norm(delta_vec))
        n_sub = max(int(np.ceil(dist / step)), 1)
        accepted_any = False
        warned = False
        for i in range(1, n_sub + 1):
            p = start + delta_vec * (i / n_sub)
            voxel = self.grid.world_to_voxel(p)
            if self.grid.is_occupied(voxel):
                warned = True
                continue
            d = self._step(p)
            if d is not None:
                deltas.append(d)
            self.last_pose = p
            accepted_any = True
        if warned and not deltas:
            self.seq += 1
            deltas.append(CorridorDelta(op="none", seq=self.seq,
                                        warning="occupied pose ignored"))
        if accepted_any:
            tstamp = t if t is not None else (self.history[-1][0] + 1.0)
            self.history.append((float(tstamp), self.last_pose.copy()))
        return deltas

    def finish(self) -> FlightCorridor:
        """Freeze the corridor; every recorded pose lies inside its union."""
        self.state = "finished"
        return FlightCorridor(polyhedra=list(self.polyhedra),
                              clusters=list(self.clusters),
                              start=self.history[0][1].copy(),
                              end=self.last_pose.copy(),
                              transition_points=[p.copy() for p in
                                                 self.transition_points])


def session_start(grid: OccupancyGrid, pose,
                  opts: Optional[InflateOptions] = None) -> TeachSession:
    return TeachSession(grid, pose, opts)


def session_update(session: TeachSession, pose,
                   t: Optional[float] = None) -> list[CorridorDelta]:
    return session.update(pose, t)


def session_finish(session: TeachSession) -> FlightCorridor:
    return session.finish()


def replay_path(grid: OccupancyGrid, times, points,
                opts: Optional[InflateOptions] = None) -> FlightCorridor:
    """Headless teach replay of a timestamped point list."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    session = session_start(grid, points[0], opts)
    for t, p in zip(times[1:], points[1:]):
        session.update(p, t)
    return session.finish()
