"""Occupancy grids, supercover ray casting, exact ESDF, and seeded map generation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt

from . import _kernels

log = logging.getLogger(__name__)

DEFAULT_ESDF_CAP = 10.0


@dataclass
class OccupancyGrid:
    """Axis-aligned 3-D boolean voxel field.

    ``occupancy[x, y, z]`` is True for obstacles. Queries outside the grid
    bounds are answered "occupied": the world boundary acts as an obstacle.
    Grids are immutable after construction.
    """
    dims: tuple[int, int, int]
    resolution: float
    origin: np.ndarray
    occupancy: np.ndarray

    def __post_init__(self):
        nx, ny, nz = self.dims
        if nx <= 0 or ny <= 0 or nz <= 0:
            raise ValueError(f"dims must be strictly positive, got {self.dims}")
        if self.resolution <= 0:
            raise ValueError(f"resolution must be > 0, got {self.resolution}")
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        occ = np.ascontiguousarray(self.occupancy, dtype=bool)
        if occ.shape != (nx, ny, nz):
            raise ValueError(f"occupancy shape {occ.shape} != dims {self.dims}")
        occ.setflags(write=False)
        self.occupancy = occ

    def in_bounds(self, v) -> bool:
        x, y, z = int(v[0]), int(v[1]), int(v[2])
        nx, ny, nz = self.dims
        return 0 <= x < nx and 0 <= y < ny and 0 <= z < nz

    def is_occupied(self, v) -> bool:
        """Occupancy query; out-of-bounds voxels count as occupied."""
        if not self.in_bounds(v):
            return True
        return bool(self.occupancy[int(v[0]), int(v[1]), int(v[2])])

    def is_free(self, v) -> bool:
        return not self.is_occupied(v)

    def voxel_center(self, v) -> np.ndarray:
        return self.origin + (np.asarray(v, dtype=float) + 0.5) * self.resolution

    def world_to_voxel(self, p) -> tuple[int, int, int]:
        u = np.floor((np.asarray(p, dtype=float) - self.origin) / self.resolution)
        return int(u[0]), int(u[1]), int(u[2])

    def occupied_fraction(self) -> float:
        return float(self.occupancy.sum()) / self.occupancy.size

    def with_occupancy(self, occupancy: np.ndarray) -> "OccupancyGrid":
        """New grid with the same geometry and replaced occupancy."""
        return OccupancyGrid(self.dims, self.resolution, self.origin.copy(),
                             occupancy)


def raycast_free(a, b, grid: OccupancyGrid) -> bool:
    """True iff the segment between voxel centers of a and b, traversed by a
    supercover line visiting every voxel the segment touches, meets no
    occupied voxel. Symmetric in (a, b)."""
    if not grid.in_bounds(a) or not grid.in_bounds(b):
        raise ValueError(f"raycast endpoints must be inside the grid: {a}, {b}")
    return bool(_kernels.ray_free(int(a[0]), int(a[1]), int(a[2]),
                                  int(b[0]), int(b[1]), int(b[2]),
                                  grid.occupancy))


@dataclass
class Esdf:
    """Euclidean distance field: per-voxel distance in meters to the nearest
    occupied voxel center, capped at a maximum range.

    ``distance`` is everywhere >= 0 with exact zeros on occupied voxels.
    ``interior`` extends the field into obstacles (depth to the nearest free
    voxel, >= 0, zero outside) so that gradient-based costs keep a descent
    direction inside obstacles; the signed view is distance - interior.
    """
    dims: tuple[int, int, int]
    resolution: float
    origin: np.ndarray
    distance: np.ndarray
    cap: float
    interior: Optional[np.ndarray] = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        d = np.ascontiguousarray(self.distance, dtype=float)
        d.setflags(write=False)
        self.distance = d
        if self.interior is not None:
            signed = np.ascontiguousarray(d - self.interior)
        else:
            signed = d
        signed.setflags(write=False)
        self._signed = signed

    def _trilinear(self, field: np.ndarray, p) -> tuple[float, np.ndarray]:
        p = np.asarray(p, dtype=float)
        u = (p - self.origin) / self.resolution - 0.5
        base = np.floor(u).astype(int)
        nx, ny, nz = self.dims
        if (base < 0).any() or base[0] + 1 >= nx or base[1] + 1 >= ny or base[2] + 1 >= nz:
            raise ValueError(f"sample point {p} outside interpolation margin")
        f = u - base
        i, j, k = base
        c = field[i:i + 2, j:j + 2, k:k + 2]
        wx = np.array([1.0 - f[0], f[0]])
        wy = np.array([1.0 - f[1], f[1]])
        wz = np.array([1.0 - f[2], f[2]])
        d = float(np.einsum("i,j,k,ijk->", wx, wy, wz, c))
        dw = np.array([-1.0, 1.0]) / self.resolution
        gx = float(np.einsum("i,j,k,ijk->", dw, wy, wz, c))
        gy = float(np.einsum("i,j,k,ijk->", wx, dw, wz, c))
        gz = float(np.einsum("i,j,k,ijk->", wx, wy, dw, c))
        return d, np.array([gx, gy, gz])

    def sample(self, p) -> tuple[float, np.ndarray]:
        """Trilinear distance and the analytic gradient of the interpolant.

        Requires p to lie at least half a voxel inside the grid on every
        axis (all eight surrounding voxel centers must exist).
        """
        return self._trilinear(self.distance, p)

    def sample_signed(self, p) -> tuple[float, np.ndarray]:
        """Like sample but negative inside obstacles (when interior data
        is available); equals sample on free space away from obstacles."""
        return self._trilinear(self._signed, p)


def compute_esdf(grid: OccupancyGrid, cap: float = DEFAULT_ESDF_CAP) -> Esdf:
    """Exact Euclidean distance transform (separable method), scaled by the
    grid resolution and clamped to cap. A grid with zero occupied voxels
    yields cap everywhere."""
    if cap <= 0:
        raise ValueError(f"cap must be > 0, got {cap}")
    if grid.occupancy.any():
        d = distance_transform_edt(~grid.occupancy) * grid.resolution
        np.minimum(d, cap, out=d)
        if grid.occupancy.all():
            interior = np.full(grid.dims, cap, dtype=float)
        else:
            interior = distance_transform_edt(grid.occupancy) * grid.resolution
            np.minimum(interior, cap, out=interior)
    else:
        d = np.full(grid.dims, cap, dtype=float)
        interior = np.zeros(grid.dims)
    return Esdf(grid.dims, grid.resolution, grid.origin.copy(), d, cap,
                interior=interior)


@dataclass
class MapRecipe:
    """Deterministic random-map specification. Identical recipes produce
    bit-for-bit identical grids."""
    seed: int = 0
    dims: tuple[int, int, int] = (32, 32, 16)
    resolution: float = 0.2
    origin: Sequence[float] = (0.0, 0.0, 0.0)
    n_blocks: int = 0
    block_size: tuple[float, float] = (0.3, 0.8)   # min/max edge, meters
    n_walls: int = 0
    arch_size: tuple[float, float] = (0.8, 0.8)    # opening width, height
    n_rings: int = 0
    ring_inner_diameter: float = 0.6
    ring_thickness: float = 0.2                    # radial wall thickness
    n_tunnels: int = 0
    tunnel_bore: float = 0.8                       # square bore edge
    tunnel_length: float = 1.2
    density: Optional[float] = None                # target occupied fraction
    ring_centers: Optional[list] = None            # explicit placements (world)
    clear_boxes: list = field(default_factory=list)  # (lo, hi) world AABBs kept free


def _stamp_box(occ: np.ndarray, lo, hi):
    """Occupy voxels whose index lies in [lo, hi] (inclusive, clipped)."""
    nx, ny, nz = occ.shape
    x0, y0, z0 = (max(0, int(lo[0])), max(0, int(lo[1])), max(0, int(lo[2])))
    x1, y1, z1 = (min(nx - 1, int(hi[0])), min(ny - 1, int(hi[1])), min(nz - 1, int(hi[2])))
    if x0 > x1 or y0 > y1 or z0 > z1:
        return
    occ[x0:x1 + 1, y0:y1 + 1, z0:z1 + 1] = True


def _stamp_ring(occ, res, origin, center, axis, r_in, r_out, half_thick):
    """Occupy an annulus (free hole of radius r_in) in the plane normal to axis."""
    nx, ny, nz = occ.shape
    idx = np.indices((nx, ny, nz), dtype=float)
    centers = [origin[i] + (idx[i] + 0.5) * res for i in range(3)]
    plane_axes = [i for i in range(3) if i != axis]
    rho = np.hypot(centers[plane_axes[0]] - center[plane_axes[0]],
                   centers[plane_axes[1]] - center[plane_axes[1]])
    along = np.abs(centers[axis] - center[axis])
    mask = (rho >= r_in) & (rho <= r_out) & (along <= half_thick)
    occ[mask] = True


def generate_map(recipe: MapRecipe) -> OccupancyGrid:
    """Build the obstacle course described by the recipe.

    Obstacles are placed in a fixed order from a seeded generator; if a
    density target is unreachable a warning is logged and the best-effort
    map is returned.
    """
    rng = np.random.default_rng(recipe.seed)
    nx, ny, nz = recipe.dims
    res = recipe.resolution
    origin = np.asarray(recipe.origin, dtype=float)
    occ = np.zeros((nx, ny, nz), dtype=bool)

    def rand_voxel():
        return (int(rng.integers(0, nx)), int(rng.integers(0, ny)), int(rng.integers(0, nz)))

    for _ in range(recipe.n_blocks):
        edge = rng.uniform(*recipe.block_size, size=3)
        half = np.maximum(np.rint(edge / (2 * res)), 1)
        c = np.array(rand_voxel(), dtype=float)
        _stamp_box(occ, c - half, c + half)

    for _ in range(recipe.n_walls):
        axis = int(rng.integers(0, 2))  # wall normal along x or y
        pos = int(rng.integers(2, occ.shape[axis] - 2))
        wall = [slice(None)] * 3
        wall[axis] = slice(pos, pos + 1)
        occ[tuple(wall)] = True
        # rectangular arch opening reaching down to the floor
        w = max(2, int(round(recipe.arch_size[0] / res)))
        h = max(2, int(round(recipe.arch_size[1] / res)))
        other = 1 - axis
        c_other = int(rng.integers(w // 2 + 1, occ.shape[other] - w // 2 - 1))
        opening = [slice(None)] * 3
        opening[axis] = slice(pos, pos + 1)
        opening[other] = slice(c_other - w // 2, c_other - w // 2 + w)
        opening[2] = slice(0, h)
        occ[tuple(opening)] = False

    ring_centers = list(recipe.ring_centers or [])
    for i in range(recipe.n_rings):
        if i < len(ring_centers):
            center = np.asarray(ring_centers[i], dtype=float)
            axis = 0
        else:
            axis = int(rng.integers(0, 2))
            center = origin + (np.array(rand_voxel(), dtype=float) + 0.5) * res
        r_in = recipe.ring_inner_diameter / 2
        _stamp_ring(occ, res, origin, center, axis, r_in,
                    r_in + recipe.ring_thickness, res * 0.75)

    for _ in range(recipe.n_tunnels):
        axis = int(rng.integers(0, 2))
        length = max(2, int(round(recipe.tunnel_length / res)))
        bore = max(2, int(round(recipe.tunnel_bore / res)))
        outer = bore + 2 * max(1, int(round(0.2 / res)))
        c = np.array(rand_voxel())
        lo = c.copy()
        hi = c.copy()
        lo[axis], hi[axis] = c[axis], c[axis] + length
        for a in range(3):
            if a != axis:
                lo[a], hi[a] = c[a] - outer // 2, c[a] + outer // 2
        _stamp_box(occ, lo, hi)
        free = [slice(max(0, lo[a]), hi[a] + 1) for a in range(3)]
        for a in range(3):
            if a != axis:
                free[a] = slice(max(0, c[a] - bore // 2), c[a] + bore // 2 + 1)
        occ[tuple(free)] = False

    if recipe.density is not None:
        target = int(recipe.density * occ.size)
        attempts = 0
        while occ.sum() < target and attempts < 10_000:
            edge = rng.uniform(*recipe.block_size, size=3)
            half = np.maximum(np.rint(edge / (2 * res)), 1)
            c = np.array(rand_voxel(), dtype=float)
            _stamp_box(occ, c - half, c + half)
            attempts += 1
        if occ.sum() < target:
            log.warning("density target %.3f unreachable, achieved %.3f",
                        recipe.density, occ.sum() / occ.size)

    for lo, hi in recipe.clear_boxes:
        lo_v = np.floor((np.asarray(lo) - origin) / res).astype(int)
        hi_v = np.floor((np.asarray(hi) - origin) / res).astype(int)
        sl = tuple(slice(max(0, lo_v[a]), max(0, hi_v[a] + 1)) for a in range(3))
        occ[sl] = False

    grid = OccupancyGrid(recipe.dims, res, origin, occ)
    log.info("generated map seed=%d occupied fraction %.4f",
             recipe.seed, grid.occupied_fraction())
    return grid
