import numpy as np
import pytest

from voxplan.corridor import Polyhedron
from voxplan.grid import MapRecipe, OccupancyGrid, generate_map


def box_polyhedron(lo, hi) -> Polyhedron:
    """Axis-aligned box as halfspaces + vertices."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    normals = np.vstack([np.eye(3), -np.eye(3)])
    offsets = np.concatenate([hi, -lo])
    vertices = np.array([[x, y, z]
                         for x in (lo[0], hi[0])
                         for y in (lo[1], hi[1])
                         for z in (lo[2], hi[2])])
    return Polyhedron(normals=normals, offsets=offsets, vertices=vertices,
                      hull_volume=float(np.prod(hi - lo)))


def empty_grid(dims=(32, 32, 16), res=0.2) -> OccupancyGrid:
    return OccupancyGrid(dims, res, np.zeros(3), np.zeros(dims, dtype=bool))


def cluttered_map(seed: int, dims=(24, 24, 12), res=0.2,
                  blocks=6, rings=0, walls=0, density=None) -> OccupancyGrid:
    return generate_map(MapRecipe(seed=seed, dims=dims, resolution=res,
                                  n_blocks=blocks, n_rings=rings,
                                  n_walls=walls, density=density))


def free_seeds(grid: OccupancyGrid, count: int, rng) -> list:
    free = np.argwhere(~grid.occupancy)
    idx = rng.integers(0, len(free), count)
    return [tuple(int(c) for c in free[i]) for i in idx]


@pytest.fixture(scope="session")
def small_maps():
    """Shared cluttered maps for cluster-level tests."""
    return [cluttered_map(seed, dims=(20, 20, 10), blocks=5) for seed in range(5)]
