"""Time-optimal re-parametrization of a fixed spatial trajectory.

A monotone re-timing map t(tau) is sought per piece; its squared rate
beta = (dt/dtau)^2 (piecewise linear over the grid nodes) and curvature
alpha = d2t/dtau2 (piecewise constant, at interval midpoints) become the
variables of a second-order cone program. Minimum total time trades off
against an aggressiveness regularizer rho * sum(alpha^2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .curves import PiecewiseBezier, bezier_eval
from .solver import Cone, SocpProblem, SolveReport, solve_socp

_SQRT2 = math.sqrt(2.0)


@dataclass
class KinodynamicLimits:
    v_max: float
    a_max: float
    delta_alpha: Optional[float] = None  # accel changing-rate bound, per second of t

    def __post_init__(self):
        if self.v_max <= 0 or self.a_max <= 0:
            raise ValueError("limits must be positive")
        if self.delta_alpha is None:
            self.delta_alpha = 3.0 * self.a_max
        if self.delta_alpha <= 0:
            raise ValueError("delta_alpha must be positive")


@dataclass
class PieceGrid:
    nodes: np.ndarray       # (P+1,) grid times in [0, T_m]
    dt: np.ndarray          # (P,) interval lengths, last possibly short
    fd1: np.ndarray         # (P+1, 3) first derivative cache
    fd2: np.ndarray         # (P+1, 3) second derivative cache

    @property
    def intervals(self) -> int:
        return self.dt.size


@dataclass
class TranscriptionGrid:
    pieces: list
    dt_nominal: float
    traj: PiecewiseBezier


def transcribe(traj: PiecewiseBezier, dt: float) -> TranscriptionGrid:
    """Discretize each piece to ceil(T/dt)+1 grid points (the remainder
    interval keeps its exact, shorter length) and cache derivatives."""
    durations = traj.durations
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt > durations.min() + 1e-12:
        raise ValueError(f"dt={dt} exceeds the shortest piece duration "
                         f"{durations.min()}")
    out = []
    for piece in traj.pieces:
        T = piece.duration
        n_int = int(math.ceil(T / dt - 1e-9))
        nodes = np.minimum(np.arange(n_int + 1) * dt, T)
        nodes[-1] = T
        steps = np.diff(nodes)
        if steps[-1] <= 0:
            raise AssertionError("degenerate remainder interval")
        fd1 = np.array([bezier_eval(piece, t, 1) for t in nodes])
        fd2 = np.array([bezier_eval(piece, t, 2) for t in nodes])
        out.append(PieceGrid(nodes=nodes, dt=steps, fd1=fd1, fd2=fd2))
    return TranscriptionGrid(pieces=out, dt_nominal=dt, traj=traj)


@dataclass
class _Layout:
    """Variable offsets: per piece [alpha(P), beta(P+1), zeta(P+1), gamma(P)],
    then the single alpha-energy slack when rho > 0."""
    alpha: list
    beta: list
    zeta: list
    gamma: list
    s: Optional[int]
    n: int


def _layout(grid: TranscriptionGrid, rho: float) -> _Layout:
    alpha, beta, zeta, gamma = [], [], [], []
    ofs = 0
    for pg in grid.pieces:
        P = pg.intervals
        alpha.append(ofs); ofs += P
        beta.append(ofs); ofs += P + 1
        zeta.append(ofs); ofs += P + 1
        gamma.append(ofs); ofs += P
    s = None
    if rho > 0:
        s = ofs
        ofs += 1
    return _Layout(alpha, beta, zeta, gamma, s, ofs)


@dataclass
class TimeMap:
    """Discrete re-timing solution: per-piece beta at nodes, alpha on
    intervals, the grid steps, and the recovered durations."""
    beta: list                 # list of (P+1,) arrays
    alpha: list                # list of (P,) arrays
    dt: list                   # list of (P,) arrays (original t steps)
    durations_new: np.ndarray  # (N,)
    durations_old: np.ndarray  # (N,)
    rho: float

    def span_times(self, m: int) -> np.ndarray:
        """Recovered tau-duration of every grid interval of piece m."""
        b = self.beta[m]
        return 2.0 * self.dt[m] / (np.sqrt(b[1:]) + np.sqrt(b[:-1]))

    def t_of_tau(self, m: int, tau: float) -> float:
        """Original piece-local time t for a re-timed local clock tau.

        Within a grid interval beta is linear in t, so the inversion of
        tau(t) = integral dt/sqrt(beta) is closed form.
        """
        spans = self.span_times(m)
        cum = np.concatenate([[0.0], np.cumsum(spans)])
        tau = min(max(tau, 0.0), cum[-1])
        k = int(np.searchsorted(cum, tau, side="right")) - 1
        k = min(max(k, 0), spans.size - 1)
        local = tau - cum[k]
        b0, b1 = self.beta[m][k], self.beta[m][k + 1]
        dt = self.dt[m][k]
        if abs(b1 - b0) < 1e-12:
            t_off = local * math.sqrt(b0)
        else:
            rt = math.sqrt(b0) + local * (b1 - b0) / (2.0 * dt)
            t_off = dt * (rt * rt - b0) / (b1 - b0)
        t_edges = np.cumsum(np.concatenate([[0.0], self.dt[m]]))
        return float(t_edges[k] + min(max(t_off, 0.0), dt))

    def rate_at(self, m: int, t_local: float) -> tuple[float, float]:
        """(beta, alpha) of piece m at original-local time t_local."""
        edges = np.cumsum(np.concatenate([[0.0], self.dt[m]]))
        k = int(np.searchsorted(edges, t_local, side="right")) - 1
        k = min(max(k, 0), self.dt[m].size - 1)
        frac = (t_local - edges[k]) / self.dt[m][k]
        b = self.beta[m][k] * (1 - frac) + self.beta[m][k + 1] * frac
        return float(max(b, 0.0)), float(self.alpha[m][k])


_ZERO_TOL = 1e-9


def build_temporal_socp(grid: TranscriptionGrid, limits: KinodynamicLimits,
                        rho: float = 0.0, boundary=None) -> SocpProblem:
    """Assemble the minimum-time SOCP over (alpha, beta, zeta, gamma[, s]).

    boundary is ((v0, a0), (vf, af)) in world coordinates; None means
    rest-to-rest. Velocity rows are imposed in the squared, linear-in-beta
    form; acceleration rows pair each interval's alpha with both of its end
    nodes. Cone blocks follow the rotated/quadratic chain that linearizes
    1/sqrt(beta) and the alpha energy.
    """
    lay = _layout(grid, rho)
    n = lay.n
    v2 = limits.v_max ** 2

    obj = np.zeros(n)
    total_T = 0.0
    for m, pg in enumerate(grid.pieces):
        obj[lay.gamma[m]: lay.gamma[m] + pg.intervals] = 2.0 * pg.dt
        total_T += float(pg.dt.sum())
    if rho > 0:
        obj[lay.s] = rho * total_T

    eq_r, eq_c, eq_v, eq_b = [], [], [], []

    def add_eq(cols, vals, rhs):
        nz = [(c, v) for c, v in zip(cols, vals) if abs(v) > _ZERO_TOL]
        if not nz:
            if abs(rhs) > 1e-7:
                raise ValueError(
                    "inconsistent boundary: zero path derivative with a "
                    f"nonzero required state {rhs}")
            return
        scale = 1.0 / max(abs(v) for _, v in nz)
        row = len(eq_b)
        for c, v in nz:
            eq_r.append(row); eq_c.append(c); eq_v.append(v * scale)
        eq_b.append(rhs * scale)

    ie_r, ie_c, ie_v, ie_b = [], [], [], []

    def add_ie(cols, vals, rhs):
        nz = [(c, v) for c, v in zip(cols, vals) if abs(v) > _ZERO_TOL]
        if not nz:
            return
        row = len(ie_b)
        for c, v in nz:
            ie_r.append(row); ie_c.append(c); ie_v.append(v)
        ie_b.append(rhs)

    for m, pg in enumerate(grid.pieces):
        P = pg.intervals
        a0, b0 = lay.alpha[m], lay.beta[m]
        # discrete beta' = 2 alpha (forward difference per interval)
        for k in range(P):
            add_eq([b0 + k + 1, b0 + k, a0 + k],
                   [1.0, -1.0, -2.0 * pg.dt[k]], 0.0)
        # beta >= 0
        for k in range(P + 1):
            add_ie([b0 + k], [-1.0], 0.0)
        # velocity (squared form) at every node
        for k in range(P + 1):
            for axis in range(3):
                c2 = pg.fd1[k, axis] ** 2
                add_ie([b0 + k], [c2], v2)
        # acceleration rows: each interval's alpha with both end nodes
        for k in range(P):
            for node, beta_idx in ((k, b0 + k), (k + 1, b0 + k + 1)):
                for axis in range(3):
                    f1 = pg.fd1[node, axis]
                    f2 = pg.fd2[node, axis]
                    add_ie([a0 + k, beta_idx], [f1, f2], limits.a_max)
                    add_ie([a0 + k, beta_idx], [-f1, -f2], limits.a_max)
        # alpha changing-rate rows (midpoint-to-midpoint gap)
        for k in range(1, P):
            gap = 0.5 * (pg.dt[k - 1] + pg.dt[k])
            bound = limits.delta_alpha * gap
            add_ie([a0 + k, a0 + k - 1], [1.0, -1.0], bound)
            add_ie([a0 + k, a0 + k - 1], [-1.0, 1.0], bound)

    # piece-joint continuity: beta continuous; accel expression per axis
    for m in range(len(grid.pieces) - 1):
        pa, pb = grid.pieces[m], grid.pieces[m + 1]
        Pa = pa.intervals
        add_eq([lay.beta[m] + Pa, lay.beta[m + 1]], [1.0, -1.0], 0.0)
        for axis in range(3):
            add_eq([lay.alpha[m] + Pa - 1, lay.beta[m] + Pa,
                    lay.alpha[m + 1], lay.beta[m + 1]],
                   [pa.fd1[-1, axis], pa.fd2[-1, axis],
                    -pb.fd1[0, axis], -pb.fd2[0, axis]], 0.0)

    # boundary velocity/acceleration at the trajectory ends
    if boundary is None:
        v_start = a_start = v_end = a_end = np.zeros(3)
    else:
        (v_start, a_start), (v_end, a_end) = boundary
        v_start = np.asarray(v_start, float)
        a_start = np.asarray(a_start, float)
        v_end = np.asarray(v_end, float)
        a_end = np.asarray(a_end, float)

    def velocity_boundary(pg, node, beta_idx, v_req, where):
        f1 = pg.fd1[node]
        live = np.abs(f1) > 1e-9
        if not live.any():
            if np.abs(v_req).max() > 1e-7:
                raise ValueError(f"boundary velocity {v_req} required at "
                                 f"{where} where the path derivative is zero")
            return
        ratios = v_req[live] / f1[live]
        if (ratios < -1e-9).any() or (np.abs(v_req[~live]) > 1e-7).any():
            raise ValueError(f"boundary velocity {v_req} at {where} is not "
                             "collinear with the path direction")
        if ratios.size and np.ptp(ratios) > 1e-6 * max(1.0, np.abs(ratios).max()):
            raise ValueError(f"boundary velocity {v_req} at {where} is not "
                             "collinear with the path direction")
        add_eq([beta_idx], [1.0], float(ratios.max() ** 2))

    first, last = grid.pieces[0], grid.pieces[-1]
    velocity_boundary(first, 0, lay.beta[0], v_start, "start")
    velocity_boundary(last, last.intervals, lay.beta[-1] + last.intervals,
                      v_end, "end")
    for axis in range(3):
        add_eq([lay.alpha[0], lay.beta[0]],
               [first.fd1[0, axis], first.fd2[0, axis]], a_start[axis])
        add_eq([lay.alpha[-1] + last.intervals - 1,
                lay.beta[-1] + last.intervals],
               [last.fd1[-1, axis], last.fd2[-1, axis]], a_end[axis])

    cones = []
    for m, pg in enumerate(grid.pieces):
        P = pg.intervals
        for k in range(P):
            rows = sp.lil_matrix((3, n))
            rows[0, lay.gamma[m] + k] = 1.0
            rows[1, lay.zeta[m] + k] = 1.0
            rows[1, lay.zeta[m] + k + 1] = 1.0
            cones.append(Cone("rotated", rows.tocsc(),
                              np.array([0.0, 0.0, _SQRT2])))
        for k in range(P + 1):
            rows = sp.lil_matrix((3, n))
            rows[0, lay.beta[m] + k] = 1.0
            rows[1, lay.beta[m] + k] = 1.0
            rows[2, lay.zeta[m] + k] = 2.0
            cones.append(Cone("quadratic", rows.tocsc(),
                              np.array([1.0, -1.0, 0.0])))
    if rho > 0:
        total_alpha = sum(pg.intervals for pg in grid.pieces)
        rows = sp.lil_matrix((2 + total_alpha, n))
        rows[0, lay.s] = 1.0
        r = 2
        offs = np.zeros(2 + total_alpha)
        offs[1] = 1.0
        for m, pg in enumerate(grid.pieces):
            for k in range(pg.intervals):
                rows[r, lay.alpha[m] + k] = 1.0
                r += 1
        cones.append(Cone("rotated", rows.tocsc(), offs))

    A_eq = sp.csc_matrix((eq_v, (eq_r, eq_c)), shape=(len(eq_b), n))
    A_ie = sp.csc_matrix((ie_v, (ie_r, ie_c)), shape=(len(ie_b), n))
    return SocpProblem(objective=obj, cones=cones,
                       a_eq=A_eq, b_eq=np.array(eq_b),
                       a_ie=A_ie, b_ie=np.array(ie_b))


def optimize_temporal(traj: PiecewiseBezier, limits: KinodynamicLimits,
                      rho: float = 0.0, dt: Optional[float] = None,
                      boundary=None, return_report: bool = False):
    """Transcribe, solve the SOCP, and recover the re-timed durations."""
    if dt is None:
        dt = min(0.05, float(traj.durations.min()) / 20.0)
    grid = transcribe(traj, dt)
    problem = build_temporal_socp(grid, limits, rho, boundary)
    report = solve_socp(problem)
    if report.status != "optimal":
        raise RuntimeError(
            f"temporal SOCP returned {report.status}; rest-to-rest "
            "re-timing is always feasible (defect)")
    lay = _layout(grid, rho)
    beta, alpha, dts = [], [], []
    for m, pg in enumerate(grid.pieces):
        P = pg.intervals
        b = report.x[lay.beta[m]: lay.beta[m] + P + 1].copy()
        if b.min() < -1e-9:
            raise RuntimeError(f"negative beta {b.min()} in the solution")
        np.maximum(b, 0.0, out=b)
        beta.append(b)
        alpha.append(report.x[lay.alpha[m]: lay.alpha[m] + P].copy())
        dts.append(pg.dt.copy())
    tmap = TimeMap(beta=beta, alpha=alpha, dt=dts,
                   durations_new=np.zeros(len(grid.pieces)),
                   durations_old=traj.durations, rho=rho)
    tmap.durations_new = np.array([tmap.span_times(m).sum()
                                   for m in range(len(grid.pieces))])
    if (tmap.durations_new <= 0).any() or not np.isfinite(tmap.durations_new).all():
        raise RuntimeError("re-timing produced non-positive durations")
    if return_report:
        return tmap, report
    return tmap


def apply_timemap(traj: PiecewiseBezier, tmap: TimeMap) -> PiecewiseBezier:
    """Same control points with the recovered durations: the geometric path
    is unchanged, the per-piece clock is updated for the next round."""
    if len(traj.pieces) != tmap.durations_new.size:
        raise ValueError("time map piece count does not match the trajectory")
    return traj.with_durations(tmap.durations_new)
