"""Corridor-constrained minimum-jerk Bezier QP assembly and solve.

One curve piece per corridor polyhedron; squared jerk is minimized under
boundary, C2 continuity, and per-control-point halfspace constraints. The
jerk Gram matrices are closed-form Bernstein product integrals, giving the
exact 1/T^5 duration scaling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .curves import BezierPiece, PiecewiseBezier
from .solver import QpProblem, SolveReport, solve_qp


@dataclass
class BoundaryState:
    """Initial and final position/velocity/acceleration."""
    p0: np.ndarray
    v0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pf: np.ndarray = field(default_factory=lambda: np.zeros(3))
    vf: np.ndarray = field(default_factory=lambda: np.zeros(3))
    af: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("p0", "v0", "a0", "pf", "vf", "af"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.isfinite(v).all():
                raise ValueError(f"{name} must be finite")
            setattr(self, name, v)


@dataclass
class SpatialProblem:
    """Corridor polyhedra with one piece per polyhedron, fixed durations."""
    polyhedra: list
    durations: np.ndarray
    boundary: BoundaryState
    degree: int = 5

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=float).ravel()
        if len(self.polyhedra) != self.durations.size:
            raise ValueError("one duration per polyhedron required")
        if (self.durations <= 0).any():
            raise ValueError("durations must be positive")
        if self.degree < 3:
            raise ValueError("degree must be >= 3")


@lru_cache(maxsize=None)
def bernstein_product_integrals(m: int) -> np.ndarray:
    """H with H[i,j] = integral of b_m^i * b_m^j over [0,1]."""
    H = np.empty((m + 1, m + 1))
    for i in range(m + 1):
        for j in range(m + 1):
            H[i, j] = (math.comb(m, i) * math.comb(m, j)
                       / ((2 * m + 1) * math.comb(2 * m, i + j)))
    return H


@lru_cache(maxsize=None)
def jerk_gram(n: int) -> np.ndarray:
    """G with c'Gc = integral of (third derivative)^2 over the unit interval."""
    m = n - 3
    D = np.zeros((m + 1, n + 1))
    fac = n * (n - 1) * (n - 2)
    for i in range(m + 1):
        D[i, i] = -fac
        D[i, i + 1] = 3 * fac
        D[i, i + 2] = -3 * fac
        D[i, i + 3] = fac
    return D.T @ bernstein_product_integrals(m) @ D


def _var(m: int, i: int, axis: int, n: int) -> int:
    return (m * (n + 1) + i) * 3 + axis


def build_spatial_qp(problem: SpatialProblem) -> QpProblem:
    """Assemble the jerk QP: block-diagonal 1/T^5 Gram Hessian, boundary and
    duration-scaled continuity equalities, halfspace inequalities on every
    control point of the assigned piece."""
    bd = problem.boundary
    first, last = problem.polyhedra[0], problem.polyhedra[-1]
    if not first.contains(bd.p0, tol=1e-7):
        raise ValueError(f"start point {bd.p0} outside the first polyhedron "
                         f"(margin {first.slack(bd.p0):.4g} m)")
    if not last.contains(bd.pf, tol=1e-7):
        raise ValueError(f"end point {bd.pf} outside the last polyhedron "
                         f"(margin {last.slack(bd.pf):.4g} m)")

    n = problem.degree
    N = len(problem.polyhedra)
    nvar = N * (n + 1) * 3
    G1 = jerk_gram(n)

    P = sp.lil_matrix((nvar, nvar))
    for m in range(N):
        scale = 2.0 / problem.durations[m] ** 5  # 1/2 x'Px == c'Gc/T^5
        for axis in range(3):
            idx = [_var(m, i, axis, n) for i in range(n + 1)]
            P[np.ix_(idx, idx)] = scale * G1

    eq_rows, eq_vals, eq_cols, b_eq = [], [], [], []

    def add_eq(cols, vals, rhs):
        scale = 1.0 / max(abs(v) for v in vals)
        r = len(b_eq)
        for c, v in zip(cols, vals):
            eq_rows.append(r)
            eq_cols.append(c)
            eq_vals.append(v * scale)
        b_eq.append(rhs * scale)

    T = problem.durations
    for axis in range(3):
        # boundary state rows (position, velocity, acceleration at both ends)
        add_eq([_var(0, 0, axis, n)], [1.0], bd.p0[axis])
        add_eq([_var(0, 1, axis, n), _var(0, 0, axis, n)],
               [n / T[0], -n / T[0]], bd.v0[axis])
        k2 = n * (n - 1) / T[0] ** 2
        add_eq([_var(0, 2, axis, n), _var(0, 1, axis, n), _var(0, 0, axis, n)],
               [k2, -2 * k2, k2], bd.a0[axis])
        add_eq([_var(N - 1, n, axis, n)], [1.0], bd.pf[axis])
        add_eq([_var(N - 1, n, axis, n), _var(N - 1, n - 1, axis, n)],
               [n / T[N - 1], -n / T[N - 1]], bd.vf[axis])
        k2 = n * (n - 1) / T[N - 1] ** 2
        add_eq([_var(N - 1, n, axis, n), _var(N - 1, n - 1, axis, n),
                _var(N - 1, n - 2, axis, n)], [k2, -2 * k2, k2], bd.af[axis])
        # C0/C1/C2 continuity at the joints
        for j in range(N - 1):
            add_eq([_var(j, n, axis, n), _var(j + 1, 0, axis, n)],
                   [1.0, -1.0], 0.0)
            add_eq([_var(j, n, axis, n), _var(j, n - 1, axis, n),
                    _var(j + 1, 1, axis, n), _var(j + 1, 0, axis, n)],
                   [n / T[j], -n / T[j], -n / T[j + 1], n / T[j + 1]], 0.0)
            ka, kb = n * (n - 1) / T[j] ** 2, n * (n - 1) / T[j + 1] ** 2
            add_eq([_var(j, n, axis, n), _var(j, n - 1, axis, n),
                    _var(j, n - 2, axis, n), _var(j + 1, 2, axis, n),
                    _var(j + 1, 1, axis, n), _var(j + 1, 0, axis, n)],
                   [ka, -2 * ka, ka, -kb, 2 * kb, -kb], 0.0)

    A_eq = sp.csc_matrix((eq_vals, (eq_rows, eq_cols)), shape=(len(b_eq), nvar))

    # control points are constrained against the eroded (member-center) hull
    # so the curve keeps clear of non-member voxel slivers; boundary anchors
    # relax their own rows just enough to stay feasible
    ie_rows, ie_cols, ie_vals, b_ie = [], [], [], []
    for m, poly in enumerate(problem.polyhedra):
        offs = np.asarray(getattr(poly, "tight_offsets", lambda: poly.offsets)(),
                          dtype=float).copy()
        if m == 0:
            offs = np.maximum(offs, poly.normals @ bd.p0 + 1e-9)
        if m == N - 1:
            offs = np.maximum(offs, poly.normals @ bd.pf + 1e-9)
        for i in range(n + 1):
            for a, k in zip(poly.normals, offs):
                r = len(b_ie)
                for axis in range(3):
                    ie_rows.append(r)
                    ie_cols.append(_var(m, i, axis, n))
                    ie_vals.append(a[axis])
                b_ie.append(k)
    A_ie = sp.csc_matrix((ie_vals, (ie_rows, ie_cols)), shape=(len(b_ie), nvar))

    return QpProblem(hessian=P.tocsc(), linear=np.zeros(nvar),
                     a_eq=A_eq, b_eq=np.array(b_eq),
                     a_ie=A_ie, b_ie=np.array(b_ie))


def _unpack(x: np.ndarray, N: int, n: int, durations) -> PiecewiseBezier:
    pieces = []
    for m in range(N):
        ctrl = np.empty((n + 1, 3))
        for i in range(n + 1):
            for axis in range(3):
                ctrl[i, axis] = x[_var(m, i, axis, n)]
        pieces.append(BezierPiece(ctrl, float(durations[m])))
    return PiecewiseBezier(pieces, polyhedron_index=list(range(N)))


def optimize_spatial(problem: SpatialProblem,
                     return_report: bool = False):
    """Solve the spatial QP and repackage the optimal control points.

    Pieces with very unequal durations make the 1/T^5 Hessian blocks span
    many orders of magnitude, so the solve runs on per-piece rescaled
    variables (an exact substitution); the report is re-verified against
    the original problem. A rest-to-rest corridor problem is always
    feasible; a non-optimal status is an internal defect, not a user error.
    """
    from .solver import SolveReport, qp_residuals
    qp = build_spatial_qp(problem)
    n = problem.degree
    T_ref = float(np.exp(np.log(problem.durations).mean()))
    scale_piece = (problem.durations / T_ref) ** 2.5
    d = np.repeat(scale_piece, (n + 1) * 3)
    D = sp.diags(d, format="csc")
    scaled = QpProblem(hessian=D @ qp.hessian @ D, linear=qp.linear,
                       a_eq=qp.a_eq @ D, b_eq=qp.b_eq,
                       a_ie=qp.a_ie @ D, b_ie=qp.b_ie)
    inner = solve_qp(scaled)
    report = SolveReport(status=inner.status, x=d * inner.x,
                         objective=0.0, residuals={},
                         iterations=inner.iterations, y=inner.y, z=inner.z,
                         s=inner.s, certificate=inner.certificate)
    report.objective = 0.5 * float(report.x @ (qp.hessian @ report.x))
    report.residuals = qp_residuals(qp, report)
    if report.status != "infeasible":
        report.status = "optimal" if max(report.residuals.values()) <= 1e-6 \
            else "max_iter"
    if report.status != "optimal":
        raise RuntimeError(
            f"spatial QP returned {report.status}; corridor-constrained "
            f"rest-to-rest problems are always feasible (defect)")
    traj = _unpack(report.x, len(problem.polyhedra), problem.degree,
                   problem.durations)
    if return_report:
        return traj, report
    return traj


def trajectory_energy(traj: PiecewiseBezier) -> float:
    """Closed-form total squared-jerk integral of the piecewise curve."""
    total = 0.0
    for piece in traj.pieces:
        G1 = jerk_gram(piece.degree)
        for axis in range(3):
            c = piece.ctrl[:, axis]
            total += float(c @ G1 @ c) / piece.duration ** 5
    return total
