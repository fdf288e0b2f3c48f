"""Numba kernels for supercover ray traversal over occupancy grids.

All arithmetic is exact (doubled integer coordinates), so simultaneous
plane crossings (edge/corner hits) are detected without tolerances and
the visited-voxel set is symmetric in the endpoints.
"""
from __future__ import annotations

import numpy as np
from numba import njit

# Sentinel comparison key for axes the ray never crosses. Live keys are
# bounded by 2*dim * dim^2 << 2^62 for any desk-scale grid.
_KEY_INF = np.int64(1) << 62


@njit(cache=True)
def _occupied(x, y, z, occ):
    nx, ny, nz = occ.shape
    if x < 0 or y < 0 or z < 0 or x >= nx or y >= ny or z >= nz:
        return True  # world boundary acts as obstacle
    return occ[x, y, z]


@njit(cache=True)
def _traverse(ax, ay, az, bx, by, bz, occ, labels, use_labels):
    """Supercover walk from voxel a to voxel b.

    Returns 1 if every touched voxel is free, 0 if blocked. With
    use_labels, returns 1 early when the walk steps into a voxel
    labeled 2 (cluster-inner), per the early-termination rule.
    """
    if _occupied(ax, ay, az, occ):
        return 0
    # doubled coords: center of voxel v is 2v+1, boundaries at even values
    px = 2 * ax + 1
    py = 2 * ay + 1
    pz = 2 * az + 1
    dx = 2 * (bx - ax)
    dy = 2 * (by - ay)
    dz = 2 * (bz - az)
    sx = 0 if dx == 0 else (1 if dx > 0 else -1)
    sy = 0 if dy == 0 else (1 if dy > 0 else -1)
    sz = 0 if dz == 0 else (1 if dz > 0 else -1)
    adx = dx if dx > 0 else -dx
    ady = dy if dy > 0 else -dy
    adz = dz if dz > 0 else -dz
    # crossing parameter along axis u is num_u / ad_u; num advances by 2
    # per crossed boundary, starting 1 unit from the center
    nux = np.int64(1)
    nuy = np.int64(1)
    nuz = np.int64(1)
    mx = np.int64(adx if adx > 0 else 1)
    my = np.int64(ady if ady > 0 else 1)
    mz = np.int64(adz if adz > 0 else 1)
    vx, vy, vz = ax, ay, az
    max_steps = adx + ady + adz + 3
    for _ in range(max_steps):
        if vx == bx and vy == by and vz == bz:
            return 1
        kx = nux * my * mz if sx != 0 else _KEY_INF
        ky = nuy * mx * mz if sy != 0 else _KEY_INF
        kz = nuz * mx * my if sz != 0 else _KEY_INF
        kmin = kx
        if ky < kmin:
            kmin = ky
        if kz < kmin:
            kmin = kz
        hx = kx == kmin
        hy = ky == kmin
        hz = kz == kmin
        nhits = (1 if hx else 0) + (1 if hy else 0) + (1 if hz else 0)
        if nhits > 1:
            # edge/corner hit: the crossing point touches every voxel
            # reachable by a proper subset of the simultaneous steps
            if hx and _occupied(vx + sx, vy, vz, occ):
                return 0
            if hy and _occupied(vx, vy + sy, vz, occ):
                return 0
            if hz and _occupied(vx, vy, vz + sz, occ):
                return 0
            if nhits == 3:
                if _occupied(vx + sx, vy + sy, vz, occ):
                    return 0
                if _occupied(vx + sx, vy, vz + sz, occ):
                    return 0
                if _occupied(vx, vy + sy, vz + sz, occ):
                    return 0
        if hx:
            vx += sx
            nux += 2
        if hy:
            vy += sy
            nuy += 2
        if hz:
            vz += sz
            nuz += 2
        if _occupied(vx, vy, vz, occ):
            return 0
        if use_labels and labels[vx, vy, vz] == 2:
            return 1
    return 1


@njit(cache=True)
def ray_free(ax, ay, az, bx, by, bz, occ):
    """True iff the supercover segment between voxel centers is obstacle-free.

    Endpoints are ordered canonically so the result is symmetric by
    construction (the exact traversal already is; this pins it down).
    """
    swap = False
    if bx < ax:
        swap = True
    elif bx == ax:
        if by < ay:
            swap = True
        elif by == ay and bz < az:
            swap = True
    if swap:
        ax, bx = bx, ax
        ay, by = by, ay
        az, bz = bz, az
    dummy = np.zeros((1, 1, 1), dtype=np.int8)
    return _traverse(ax, ay, az, bx, by, bz, occ, dummy, False) == 1


@njit(cache=True)
def rays_free_all(cx, cy, cz, targets, occ):
    """Unpruned convexity kernel: rays from (cx,cy,cz) to every target row."""
    for i in range(targets.shape[0]):
        if not ray_free(cx, cy, cz, targets[i, 0], targets[i, 1], targets[i, 2], occ):
            return False
    return True


@njit(cache=True)
def rays_free_pruned(cx, cy, cz, targets, occ, labels):
    """Pruned convexity kernel: candidate-to-outer rays with inner early exit.

    Traversal direction is candidate -> member; early termination is only
    sound in that direction.
    """
    for i in range(targets.shape[0]):
        ok = _traverse(cx, cy, cz, targets[i, 0], targets[i, 1], targets[i, 2],
                       occ, labels, True)
        if ok == 0:
            return False
    return True


@njit(cache=True)
def segment_free(cx, cy, cz, tx, ty, tz, occ):
    """Single unordered supercover ray (no canonical swap); used for
    candidate-vs-candidate checks where direction is fixed by index order."""
    dummy = np.zeros((1, 1, 1), dtype=np.int8)
    return _traverse(cx, cy, cz, tx, ty, tz, occ, dummy, False) == 1


@njit(cache=True)
def add_voxel(x, y, z, labels, ncount, members, n_members):
    """Append a member voxel, updating outer/inner labels and the member
    26-neighbor counts in place. Returns the new member count."""
    nx, ny, nz = labels.shape
    members[n_members, 0] = x
    members[n_members, 1] = y
    members[n_members, 2] = z
    cnt = 0
    for dx in range(-1, 2):
        for dy in range(-1, 2):
            for dz in range(-1, 2):
                if dx == 0 and dy == 0 and dz == 0:
                    continue
                ax, ay, az = x + dx, y + dy, z + dz
                if 0 <= ax < nx and 0 <= ay < ny and 0 <= az < nz:
                    if labels[ax, ay, az] != 0:
                        cnt += 1
                        ncount[ax, ay, az] += 1
                        if ncount[ax, ay, az] == 26:
                            labels[ax, ay, az] = 2
    ncount[x, y, z] = cnt
    labels[x, y, z] = 2 if cnt == 26 else 1
    return n_members + 1


@njit(cache=True)
def sweep_serial(cands, occ, labels, ncount, members, n_members, pruned,
                 max_members):
    """One frontier sweep in candidate order, admitting voxels in place.

    Candidates admitted earlier in the sweep immediately join the cluster
    and constrain later tests. Returns (new member count, number admitted,
    admitted buffer, truncated flag); admitted voxels are the last
    `admitted` rows written into the buffer.
    """
    added = np.empty((cands.shape[0], 3), dtype=np.int64)
    n_added = 0
    truncated = False
    for c in range(cands.shape[0]):
        if n_members >= max_members:
            truncated = True
            break
        x, y, z = cands[c, 0], cands[c, 1], cands[c, 2]
        ok = True
        for i in range(n_members):
            tx, ty, tz = members[i, 0], members[i, 1], members[i, 2]
            if pruned:
                if labels[tx, ty, tz] != 1:
                    continue  # outer members suffice (inner are covered)
                if _traverse(x, y, z, tx, ty, tz, occ, labels, True) == 0:
                    ok = False
                    break
            else:
                if not ray_free(x, y, z, tx, ty, tz, occ):
                    ok = False
                    break
        if ok:
            n_members = add_voxel(x, y, z, labels, ncount, members, n_members)
            added[n_added, 0] = x
            added[n_added, 1] = y
            added[n_added, 2] = z
            n_added += 1
    return n_members, n_added, added, truncated


@njit(cache=True)
def collect_frontier(newly, n_newly, occ, labels, scratch):
    """Free non-member neighbors of the newly added voxels (unsorted,
    deduplicated through the scratch marker array)."""
    nx, ny, nz = labels.shape
    out = np.empty((n_newly * 26, 3), dtype=np.int64)
    k = 0
    for i in range(n_newly):
        x, y, z = newly[i, 0], newly[i, 1], newly[i, 2]
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                for dz in range(-1, 2):
                    if dx == 0 and dy == 0 and dz == 0:
                        continue
                    ax, ay, az = x + dx, y + dy, z + dz
                    if 0 <= ax < nx and 0 <= ay < ny and 0 <= az < nz:
                        if (not occ[ax, ay, az] and labels[ax, ay, az] == 0
                                and scratch[ax, ay, az] == 0):
                            scratch[ax, ay, az] = 1
                            out[k, 0] = ax
                            out[k, 1] = ay
                            out[k, 2] = az
                            k += 1
    for i in range(k):  # reset scratch for the next sweep
        scratch[out[i, 0], out[i, 1], out[i, 2]] = 0
    return out[:k]
