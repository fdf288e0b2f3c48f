"""Convex free-space clusters grown from a seed voxel and their polyhedra.

A convex cluster is a set of free voxels such that the supercover ray
between any two members is obstacle-free. Growth proceeds in frontier
sweeps; within a sweep candidates are tested in lexicographic voxel order,
so earlier acceptances constrain later tests and the result is fully
deterministic. The pruned check casts rays only to boundary (outer)
members and terminates early at interior (inner) members; the parallel
variant checks a whole frontier concurrently and merges results by index,
reproducing the serial output voxel-for-voxel.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull

from . import _kernels
from .grid import OccupancyGrid

LABEL_NONE, LABEL_OUTER, LABEL_INNER = 0, 1, 2


@dataclass
class ConvexCluster:
    """Voxel membership of one convex free-space cluster.

    ``labels`` marks members as outer (some non-member 26-neighbor) or
    inner (fully surrounded by members); non-members are 0. Immutable
    once returned by the inflation routines.
    """
    seed: tuple[int, int, int]
    members: np.ndarray            # (n, 3) int64 voxel coords
    labels: np.ndarray             # (nx, ny, nz) int8
    resolution: float
    origin: np.ndarray
    truncated: bool = False

    def __len__(self) -> int:
        return self.members.shape[0]

    @property
    def volume(self) -> float:
        """Voxel-count volume in cubic meters."""
        return len(self) * self.resolution ** 3

    def contains_voxel(self, v) -> bool:
        x, y, z = int(v[0]), int(v[1]), int(v[2])
        nx, ny, nz = self.labels.shape
        if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
            return False
        return self.labels[x, y, z] != LABEL_NONE

    def outer_members(self) -> np.ndarray:
        m = self.members
        sel = self.labels[m[:, 0], m[:, 1], m[:, 2]] == LABEL_OUTER
        return np.ascontiguousarray(m[sel])

    def centers(self) -> np.ndarray:
        return self.origin + (self.members.astype(float) + 0.5) * self.resolution


@dataclass
class Polyhedron:
    """Convex hull of a cluster in both vertex and halfspace form.

    Halfspaces are a·x <= k with unit normals; the hull encloses the full
    voxel volumes (member centers carry at least half a voxel of slack).
    ``tighten`` holds the per-facet support of the half-voxel cube; eroding
    each offset by it recovers exactly the hull of member centers, which is
    the set trajectory constraints use (the outer hull may contain slivers
    of non-member voxels, the eroded one keeps the curve off them).
    """
    normals: np.ndarray   # (m, 3), unit rows
    offsets: np.ndarray   # (m,)
    vertices: np.ndarray  # (v, 3) world coords
    hull_volume: float = 0.0
    tighten: Optional[np.ndarray] = None

    def contains(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=float)
        return bool((self.normals @ p <= self.offsets + tol).all())

    def slack(self, p) -> float:
        """Smallest halfspace margin at p (negative outside)."""
        p = np.asarray(p, dtype=float)
        return float((self.offsets - self.normals @ p).min())

    def tight_offsets(self) -> np.ndarray:
        if self.tighten is None:
            return self.offsets
        return self.offsets - self.tighten


@dataclass
class InflateOptions:
    mode: str = "cube_init_pruned"   # raw | cube_init | cube_init_pruned | parallel
    lanes: int = 1
    max_members: Optional[int] = None

    def __post_init__(self):
        if self.mode not in ("raw", "cube_init", "cube_init_pruned", "parallel"):
            raise ValueError(f"unknown inflate mode {self.mode!r}")
        if self.lanes < 1:
            raise ValueError("lanes must be >= 1")


class _Cluster:
    """Mutable cluster state shared by the inflation variants."""

    def __init__(self, grid: OccupancyGrid):
        self.grid = grid
        nx, ny, nz = grid.dims
        self.labels = np.zeros((nx, ny, nz), dtype=np.int8)
        self.ncount = np.zeros((nx, ny, nz), dtype=np.int8)
        self.members = np.empty((nx * ny * nz, 3), dtype=np.int64)
        self.n = 0
        self._scratch = np.zeros((nx, ny, nz), dtype=np.uint8)

    def add(self, v):
        self.n = _kernels.add_voxel(int(v[0]), int(v[1]), int(v[2]),
                                    self.labels, self.ncount,
                                    self.members, self.n)

    def members_view(self) -> np.ndarray:
        return self.members[:self.n]

    def outer_array(self) -> np.ndarray:
        m = self.members_view()
        sel = self.labels[m[:, 0], m[:, 1], m[:, 2]] == LABEL_OUTER
        return np.ascontiguousarray(m[sel])

    def frontier(self, newly: np.ndarray) -> np.ndarray:
        """Lex-sorted free non-member neighbors of the newly added voxels."""
        if newly.shape[0] == 0:
            return newly
        buf = _kernels.collect_frontier(newly, newly.shape[0],
                                        self.grid.occupancy, self.labels,
                                        self._scratch)
        if buf.shape[0] == 0:
            return buf
        order = np.lexsort((buf[:, 2], buf[:, 1], buf[:, 0]))
        return np.ascontiguousarray(buf[order])

    def freeze(self, seed, truncated=False) -> ConvexCluster:
        return ConvexCluster(seed=(int(seed[0]), int(seed[1]), int(seed[2])),
                             members=self.members_view().copy(),
                             labels=self.labels.copy(),
                             resolution=self.grid.resolution,
                             origin=self.grid.origin.copy(),
                             truncated=truncated)


def check_convexity(candidate, cluster: ConvexCluster, grid: OccupancyGrid,
                    pruned: bool = False) -> bool:
    """Whether adding candidate preserves pairwise-ray convexity.

    Unpruned casts a ray to every member; pruned casts only to outer
    members with early exit at inner ones. The two verdicts agree.
    """
    if grid.is_occupied(candidate):
        raise ValueError(f"candidate voxel {candidate} is occupied")
    x, y, z = int(candidate[0]), int(candidate[1]), int(candidate[2])
    if pruned:
        m = cluster.outer_members()
        return bool(_kernels.rays_free_pruned(x, y, z, m, grid.occupancy,
                                              cluster.labels))
    return bool(_kernels.rays_free_all(x, y, z, cluster.members,
                                       grid.occupancy))


def inflate_cube(seed, grid: OccupancyGrid) -> ConvexCluster:
    """Maximal axis-aligned free box around the seed, grown by alternately
    extending the six faces until each is blocked."""
    if grid.is_occupied(seed):
        raise ValueError(f"seed voxel {seed} is occupied")
    state = _Cluster(grid)
    _grow_cube(state, seed)
    return state.freeze(seed)


def _grow_cube(state: _Cluster, seed) -> np.ndarray:
    grid = state.grid
    sx, sy, sz = int(seed[0]), int(seed[1]), int(seed[2])
    lo = np.array([sx, sy, sz])
    hi = np.array([sx, sy, sz])
    occ = grid.occupancy
    dims = np.array(grid.dims)
    blocked = [False] * 6
    while not all(blocked):
        for face in range(6):
            if blocked[face]:
                continue
            axis, direction = face % 3, 1 if face >= 3 else -1
            pos = (hi[axis] + 1) if direction > 0 else (lo[axis] - 1)
            if pos < 0 or pos >= dims[axis]:
                blocked[face] = True
                continue
            sl = [slice(lo[0], hi[0] + 1), slice(lo[1], hi[1] + 1),
                  slice(lo[2], hi[2] + 1)]
            sl[axis] = slice(pos, pos + 1)
            if occ[tuple(sl)].any():
                blocked[face] = True
                continue
            if direction > 0:
                hi[axis] = pos
            else:
                lo[axis] = pos
    for x in range(lo[0], hi[0] + 1):
        for y in range(lo[1], hi[1] + 1):
            for z in range(lo[2], hi[2] + 1):
                state.add((x, y, z))
    return state.members_view().copy()


def _seed_state(seed, grid: OccupancyGrid, cube_init: bool):
    state = _Cluster(grid)
    if cube_init:
        newly = _grow_cube(state, seed)
    else:
        state.add(seed)
        newly = state.members_view().copy()
    return state, newly


def convex_inflate(seed, grid: OccupancyGrid,
                   opts: Optional[InflateOptions] = None) -> ConvexCluster:
    """Grow the convex cluster around the seed to its frontier fixed point."""
    opts = opts or InflateOptions()
    if opts.mode == "parallel":
        return parallel_convex_inflate(seed, grid, opts.lanes,
                                       max_members=opts.max_members)
    if grid.is_occupied(seed):
        raise ValueError(f"seed voxel {seed} is occupied")
    pruned = opts.mode == "cube_init_pruned"
    state, newly = _seed_state(seed, grid, cube_init=opts.mode != "raw")
    cap = opts.max_members if opts.max_members is not None else np.iinfo(np.int64).max
    frontier = state.frontier(newly)
    truncated = False
    while frontier.shape[0]:
        state.n, n_added, added, truncated = _kernels.sweep_serial(
            frontier, grid.occupancy, state.labels, state.ncount,
            state.members, state.n, pruned, cap)
        if truncated:
            break
        frontier = state.frontier(added[:n_added])
    return state.freeze(seed, truncated=bool(truncated))


def resolve_sweep(results) -> list:
    """Deterministic merge of one parallel sweep.

    results holds (index, cluster_rays_ok, blocker_indices) per candidate,
    blocker indices all smaller than the candidate's own. A candidate is
    admitted iff its cluster rays passed and none of its blockers was
    itself admitted; the scan runs in index order, so the output matches
    the serial in-sweep semantics regardless of lane scheduling.
    """
    admitted: list[int] = []
    admitted_set: set[int] = set()
    for i, ok, blockers in sorted(results, key=lambda r: r[0]):
        if not ok:
            continue
        if any(j in admitted_set for j in blockers):
            continue  # deferred: an earlier admitted candidate blocks it
        admitted.append(i)
        admitted_set.add(i)
    return admitted


def parallel_convex_inflate(seed, grid: OccupancyGrid, lanes: int = 2,
                            max_members: Optional[int] = None) -> ConvexCluster:
    """Data-parallel inflation: each frontier is checked concurrently against
    a per-sweep snapshot, with candidate-vs-candidate rays recorded for
    earlier indices; the merge admits a blocked candidate only when none of
    its earlier blockers was admitted. Output equals the serial
    cube_init_pruned result for any lane count."""
    if lanes < 1:
        raise ValueError("lanes must be >= 1")
    if grid.is_occupied(seed):
        raise ValueError(f"seed voxel {seed} is occupied")
    occ = grid.occupancy
    state, newly = _seed_state(seed, grid, cube_init=True)
    frontier = state.frontier(newly)
    truncated = False

    def examine(i):
        x, y, z = frontier[i]
        if not _kernels.rays_free_pruned(x, y, z, outer_snapshot, occ,
                                         labels_snapshot):
            return i, False, ()
        blockers = tuple(
            j for j in range(i)
            if not _kernels.segment_free(x, y, z, frontier[j, 0],
                                         frontier[j, 1], frontier[j, 2], occ)
        )
        return i, True, blockers

    pool = ThreadPoolExecutor(max_workers=lanes) if lanes > 1 else None
    try:
        while frontier.shape[0]:
            outer_snapshot = state.outer_array()
            labels_snapshot = state.labels.copy()
            idx = range(frontier.shape[0])
            results = list(map(examine, idx)) if pool is None else \
                list(pool.map(examine, idx))
            added = []
            for i in resolve_sweep(results):
                if max_members is not None and state.n >= max_members:
                    truncated = True
                    break
                state.add(frontier[i])
                added.append(frontier[i])
            if truncated:
                break
            frontier = state.frontier(np.array(added, dtype=np.int64).reshape(-1, 3))
    finally:
        if pool is not None:
            pool.shutdown()
    return state.freeze(seed, truncated=truncated)


def cluster_to_polyhedron(cluster: ConvexCluster) -> Polyhedron:
    """Hull of the member voxel volumes (centers padded by half a voxel in
    every corner direction), in vertex and normalized halfspace form."""
    if len(cluster) == 0:
        raise ValueError("cannot convert an empty cluster")
    h = cluster.resolution / 2
    corners = np.array([(sx, sy, sz)
                        for sx in (-h, h) for sy in (-h, h) for sz in (-h, h)])
    pts = (cluster.centers()[:, None, :] + corners[None, :, :]).reshape(-1, 3)
    hull = ConvexHull(pts)
    eq = np.unique(np.round(hull.equations, 9), axis=0)
    normals = eq[:, :3]
    norms = np.linalg.norm(normals, axis=1)
    normals = normals / norms[:, None]
    offsets = -eq[:, 3] / norms
    vertices = hull.points[hull.vertices]
    tighten = h * np.abs(normals).sum(axis=1)  # support of the half-voxel cube
    return Polyhedron(normals=normals, offsets=offsets, vertices=vertices,
                      hull_volume=float(hull.volume), tighten=tighten)
