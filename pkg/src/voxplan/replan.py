"""Sliding-window collision monitoring and gradient-based B-spline replanning.

The global trajectory inside the horizon is refit as a uniform cubic
B-spline whose first/last p control points pin the window boundary states;
interior points descend an elastic-band objective: third-difference
smoothness, ESDF clearance shaping, and soft velocity/acceleration
penalties. A post-process stretches infeasible knot spans and escalates
weights until the local spline is collision-free and limit-feasible.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .curves import BSplineTrajectory, fit_uniform_bspline
from .grid import Esdf
from .temporal import KinodynamicLimits

log = logging.getLogger(__name__)


@dataclass
class ReplanConfig:
    horizon: float = 3.5            # seconds
    check_rate: float = 15.0        # Hz
    clearance: float = 0.4          # expected path clearance d0, meters
    trigger: float = 0.2            # collision trigger threshold, meters
    lambda_smooth: float = 1.0
    lambda_collision: float = 10.0
    lambda_feasible: float = 1.0
    alpha_stretch: float = 1.1      # knot-span stretch cap, > 1
    span: Optional[float] = None    # knot span; default horizon / 12
    max_refine_iters: int = 12
    max_opt_iters: int = 200
    grad_tol: float = 1e-4

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be > 0")
        if self.alpha_stretch <= 1.0:
            raise ValueError("alpha_stretch must be > 1")

    @property
    def knot_span(self) -> float:
        return self.span if self.span is not None else self.horizon / 12.0


@dataclass
class CollisionReport:
    colliding: bool
    t_first: Optional[float]
    t_last: Optional[float]
    min_distance: float
    clipped: bool = False


def _sample_distance(esdf: Esdf, p) -> tuple[float, np.ndarray]:
    """Signed ESDF sample. Points beyond the sensed volume read as free
    (the local map carries no information there); points in the half-voxel
    interpolation margin clamp to the nearest valid sample."""
    p = np.asarray(p, dtype=float)
    lo = esdf.origin + 0.5 * esdf.resolution
    hi = esdf.origin + (np.array(esdf.dims) - 0.5) * esdf.resolution
    if (p < lo - esdf.resolution).any() or (p > hi + esdf.resolution).any():
        return esdf.cap, np.zeros(3)
    q = np.minimum(np.maximum(p, lo + 1e-9), hi - 1e-9)
    return esdf.sample_signed(q)


def check_horizon(traj, esdf: Esdf, t_now: float,
                  config: ReplanConfig) -> CollisionReport:
    """Sample the commanded trajectory over the horizon at no more than
    half-voxel spatial spacing and report the minimum clearance."""
    total = traj.total_time
    t_end = min(t_now + config.horizon, total)
    clipped = t_end < t_now + config.horizon - 1e-9
    step_len = esdf.resolution / 2.0
    min_d = np.inf
    t_first = t_last = None

    def probe(t):
        nonlocal min_d, t_first, t_last
        pos, vel, _ = traj.state_at(t)
        d, _ = _sample_distance(esdf, pos)
        if d < min_d:
            min_d = d
        if d < config.trigger:
            if t_first is None:
                t_first = t
            t_last = t
        return float(np.linalg.norm(vel))

    t = t_now
    while t < t_end:
        speed = probe(t)
        t += step_len / max(speed, 0.2)
    probe(t_end)
    return CollisionReport(colliding=bool(min_d < config.trigger),
                           t_first=t_first, t_last=t_last,
                           min_distance=float(min_d), clipped=clipped)


def velocity_points(spline: BSplineTrajectory) -> np.ndarray:
    """First-derivative control points (general, knot-aware form)."""
    p = spline.degree
    Q = spline.ctrl
    t = spline.knots
    gaps = t[1 + p: Q.shape[0] + p] - t[1: Q.shape[0]]
    return p * (Q[1:] - Q[:-1]) / gaps[:, None]


def accel_points(spline: BSplineTrajectory) -> np.ndarray:
    p = spline.degree
    V = velocity_points(spline)
    t = spline.knots
    gaps = t[1 + p: V.shape[0] + p] - t[2: V.shape[0] + 1]
    return (p - 1) * (V[1:] - V[:-1]) / gaps[:, None]


def clearance_cost(d: float, d0: float) -> float:
    """L2 clearance shaping: (d - d0)^2 inside the clearance band, else 0."""
    return (d - d0) ** 2 if d <= d0 else 0.0


def _third_diff_matrix(n: int) -> np.ndarray:
    rows = max(n - 3, 0)
    D = np.zeros((rows, n))
    for i in range(1, n - 2):
        D[i - 1, i - 1] = -1.0
        D[i - 1, i] = 3.0
        D[i - 1, i + 1] = -3.0
        D[i - 1, i + 2] = 1.0
    return D


class _ElasticCost:
    """Total cost and analytic gradient over the free control points."""

    def __init__(self, spline: BSplineTrajectory, esdf: Esdf,
                 limits: KinodynamicLimits, config: ReplanConfig,
                 lam2: float, lam3: float):
        self.base = spline
        self.esdf = esdf
        self.limits = limits
        self.cfg = config
        self.lam = (config.lambda_smooth, lam2, lam3)
        p = spline.degree
        self.n = spline.n_ctrl
        self.free = slice(p, self.n - p)
        self.D = _third_diff_matrix(self.n)
        t = spline.knots
        self.vgaps = (t[1 + p: self.n + p] - t[1: self.n]) / p
        V_n = self.n - 1
        self.agaps = (t[1 + p: V_n + p] - t[2: V_n + 1]) / max(p - 1, 1)

    def spline_with(self, x: np.ndarray) -> BSplineTrajectory:
        Q = self.base.ctrl.copy()
        Q[self.free] = x.reshape(-1, 3)
        return BSplineTrajectory(self.base.degree, Q, self.base.knots.copy())

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        l1, l2, l3 = self.lam
        Q = self.base.ctrl.copy()
        Q[self.free] = x.reshape(-1, 3)
        grad = np.zeros_like(Q)

        diffs = self.D @ Q
        j_s = float((diffs ** 2).sum())
        grad += 2.0 * self.D.T @ diffs

        j_c = 0.0
        g_c = np.zeros_like(Q)
        d0 = self.cfg.clearance
        for i in range(self.free.start, self.free.stop):
            d, g = _sample_distance(self.esdf, Q[i])
            if d <= d0:
                j_c += (d - d0) ** 2
                g_c[i] = 2.0 * (d - d0) * g

        V = (Q[1:] - Q[:-1]) / self.vgaps[:, None]
        A = (V[1:] - V[:-1]) / self.agaps[:, None]
        vex = np.maximum(np.abs(V) - self.limits.v_max, 0.0)
        aex = np.maximum(np.abs(A) - self.limits.a_max, 0.0)
        j_f = float((vex ** 2).sum() + (aex ** 2).sum())
        gV = 2.0 * np.sign(V) * vex
        gV_from_A = 2.0 * np.sign(A) * aex / self.agaps[:, None]
        gV[1:] += gV_from_A
        gV[:-1] -= gV_from_A
        gQ_f = np.zeros_like(Q)
        gv_scaled = gV / self.vgaps[:, None]
        gQ_f[1:] += gv_scaled
        gQ_f[:-1] -= gv_scaled

        total = l1 * j_s + l2 * j_c + l3 * j_f
        grad = l1 * grad + l2 * g_c + l3 * gQ_f
        return total, grad[self.free].ravel()

    def parts(self, x: np.ndarray) -> dict:
        l1, l2, l3 = self.lam
        Q = self.base.ctrl.copy()
        Q[self.free] = x.reshape(-1, 3)
        diffs = self.D @ Q
        j_s = float((diffs ** 2).sum())
        j_c = 0.0
        for i in range(self.free.start, self.free.stop):
            d, _ = _sample_distance(self.esdf, Q[i])
            j_c += clearance_cost(d, self.cfg.clearance)
        V = (Q[1:] - Q[:-1]) / self.vgaps[:, None]
        A = (V[1:] - V[:-1]) / self.agaps[:, None]
        j_f = float((np.maximum(np.abs(V) - self.limits.v_max, 0.0) ** 2).sum()
                    + (np.maximum(np.abs(A) - self.limits.a_max, 0.0) ** 2).sum())
        return {"smooth": j_s, "collision": j_c, "feasible": j_f,
                "total": l1 * j_s + l2 * j_c + l3 * j_f}


def _lbfgs(cost, x0: np.ndarray, max_iter: int, gtol: float):
    """Monotone L-BFGS with Armijo backtracking; accepted steps never
    increase the cost."""
    x = x0.copy()
    f, g = cost(x)
    mem_s, mem_y = [], []
    converged = False
    for _ in range(max_iter):
        if np.linalg.norm(g, np.inf) <= gtol * max(1.0, abs(f)):
            converged = True
            break
        d = -g
        if mem_s:
            d = -_two_loop(g, mem_s, mem_y)
        if d @ g >= 0:
            d = -g
        step = 1.0
        accepted = False
        for _ in range(40):
            xn = x + step * d
            fn, gn = cost(xn)
            if fn <= f + 1e-4 * step * (g @ d):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        s, yv = xn - x, gn - g
        if s @ yv > 1e-12:
            mem_s.append(s)
            mem_y.append(yv)
            if len(mem_s) > 8:
                mem_s.pop(0)
                mem_y.pop(0)
        x, f, g = xn, fn, gn
    return x, f, converged


def _two_loop(g, mem_s, mem_y):
    q = g.copy()
    alphas = []
    for s, yv in zip(reversed(mem_s), reversed(mem_y)):
        a = (s @ q) / (yv @ s)
        alphas.append(a)
        q = q - a * yv
    s, yv = mem_s[-1], mem_y[-1]
    q = q * (s @ yv) / (yv @ yv)
    for (s, yv), a in zip(zip(mem_s, mem_y), reversed(alphas)):
        b = (yv @ q) / (yv @ s)
        q = q + (a - b) * s
    return q


def _push_samples(points: np.ndarray, esdf: Esdf, d0: float,
                  keep: int) -> np.ndarray:
    """Displace in-collision path samples around the obstacle so the fit
    starts on one coherent side. Displacement is restricted to the plane
    perpendicular to the local path tangent (sliding along the path cannot
    clear anything); where the transverse gradient vanishes, a probe picks
    the freest normal direction and is reused for coherence. The first/last
    `keep` samples stay on the global trajectory (their states are clamped).
    """
    pts = points.copy()
    n = len(pts)
    # tangents from the original smooth path, fixed across sweeps so the
    # displacement direction cannot drift as points move
    tangents = np.empty((n, 3))
    for i in range(n):
        a, b = max(i - 1, 0), min(i + 1, n - 1)
        t = points[b] - points[a]
        tn = np.linalg.norm(t)
        tangents[i] = t / tn if tn > 1e-9 else np.array([1.0, 0.0, 0.0])

    # one escape direction per contiguous violation run, chosen by probing
    # which lateral direction actually reaches clearance soonest (interior
    # gradients of a pierced obstacle point along the path and cannot help)
    d_raw = np.array([_sample_distance(esdf, p)[0] for p in points])
    dirs = [None] * n
    i = keep
    while i < n - keep:
        if d_raw[i] >= d0:
            i += 1
            continue
        j = i
        while j < n - keep and d_raw[j] < d0:
            j += 1
        mid = (i + j - 1) // 2
        escape = _probe_escape(esdf, points[mid], tangents[mid], d0)
        for k in range(i, j):
            dirs[k] = escape
        i = j

    for _ in range(24):
        moved = False
        for i in range(keep, n - keep):
            d, g = _sample_distance(esdf, pts[i])
            if d >= d0:
                continue
            if dirs[i] is not None:
                dirv = dirs[i]
            else:
                g_perp = g - (g @ tangents[i]) * tangents[i]
                gp = np.linalg.norm(g_perp)
                if gp < 0.3:
                    continue
                dirv = g_perp / gp
            step = min(d0 - d, esdf.resolution)
            pts[i] = pts[i] + step * dirv
            moved = True
        if not moved:
            break
    return pts


def _probe_escape(esdf: Esdf, p: np.ndarray, tangent: np.ndarray,
                  d0: float) -> Optional[np.ndarray]:
    """Lateral direction reaching d >= d0 in the fewest steps from p."""
    up = np.array([0.0, 0.0, 1.0])
    if abs(tangent @ up) > 0.9:
        up = np.array([0.0, 1.0, 0.0])
    n1 = np.cross(tangent, up)
    n1 /= np.linalg.norm(n1)
    n2 = np.cross(tangent, n1)
    n2 /= np.linalg.norm(n2)
    best, best_k = None, np.inf
    for cand in (n1, -n1, n2, -n2):
        for k in range(1, 20):
            d, _ = _sample_distance(esdf, p + k * esdf.resolution * cand)
            if d >= d0:
                if k < best_k:
                    best, best_k = cand, k
                break
    return best


def _window_end(traj, esdf: Optional[Esdf], t_now: float,
                config: ReplanConfig) -> float:
    """Rejoin time: at least one horizon ahead, extended past any collision
    interval to a point with genuine clearance (the exit states are clamped,
    so rejoining inside an obstacle would be baked into the spline)."""
    total = traj.total_time
    t_end = min(t_now + config.horizon, total)
    if esdf is None:
        return t_end
    t_max = min(t_now + 2.0 * config.horizon, total)
    step = config.horizon / 60.0
    last_bad = None
    t = t_now
    while t <= t_max + 1e-9:
        d, _ = _sample_distance(esdf, traj.state_at(t)[0])
        if d < config.trigger:
            last_bad = t  # any sensed violation ahead moves the rejoin out
        t += step
    if last_bad is None:
        return t_end
    # the exit clamp pins the last p+1 spans and the re-entry turn needs
    # room of its own: leave half a horizon after the collision interval
    margin = max(0.5 * config.horizon, 6.0 * config.knot_span)
    t_end = max(t_end, min(last_bad + margin, t_max))
    t = t_end
    while t < t_max - 1e-9:
        d, _ = _sample_distance(esdf, traj.state_at(t)[0])
        if d >= 0.9 * config.clearance:
            return t
        t += step
    return t_max


def _fit_window(traj, t_now: float, config: ReplanConfig,
                esdf: Optional[Esdf] = None) -> BSplineTrajectory:
    t_end = _window_end(traj, esdf, t_now, config)
    window = t_end - t_now
    n_spans = max(int(math.ceil(window / config.knot_span - 1e-9)), 4)
    span = window / n_spans  # knots cover the window exactly
    times = np.linspace(t_now, t_end, 2 * n_spans + 1)
    points = np.array([traj.state_at(t)[0] for t in times])
    if esdf is not None:
        points = _push_samples(points, esdf, config.clearance, keep=2)
    s0 = traj.state_at(t_now)
    s1 = traj.state_at(t_end)
    return fit_uniform_bspline(times, points, span, degree=3,
                               clamp=(s0, s1))


def replan_window(traj, esdf: Esdf, t_now: float, config: ReplanConfig,
                  limits: Optional[KinodynamicLimits] = None,
                  lam2: Optional[float] = None,
                  lam3: Optional[float] = None) -> BSplineTrajectory:
    """Refit the horizon window and descend the elastic-band objective.

    The returned spline carries a dynamic ``converged`` attribute; a
    non-improving optimizer still returns its best iterate, flagged.
    """
    if limits is None:
        limits = KinodynamicLimits(v_max=1e6, a_max=1e6)
    collision_aware = (lam2 if lam2 is not None else config.lambda_collision) > 0
    spline = _fit_window(traj, t_now, config,
                         esdf=esdf if collision_aware else None)
    cost = _ElasticCost(spline, esdf, limits, config,
                        lam2 if lam2 is not None else config.lambda_collision,
                        lam3 if lam3 is not None else config.lambda_feasible)
    x0 = spline.ctrl[cost.free].ravel().copy()
    x, _, converged = _lbfgs(cost, x0, config.max_opt_iters, config.grad_tol)
    out = cost.spline_with(x)
    out.converged = converged
    out.rejoin_time = spline.t_end  # pre-stretch window end
    if not converged:
        log.warning("window optimizer hit the iteration cap; returning best iterate")
    return out


def stretch_factor(v_m: float, v_max: float, a_m: float, a_max: float,
                   cap: float) -> float:
    """min{cap, max{v_m/v_max, sqrt(a_m/a_max)}} span enlargement."""
    return min(cap, max(v_m / v_max, math.sqrt(max(a_m, 0.0) / a_max)))


def _span_violations(spline: BSplineTrajectory, limits: KinodynamicLimits):
    """Per domain span: worst |V| and |A| among control points whose
    support covers the span."""
    p = spline.degree
    V = np.abs(velocity_points(spline)).max(axis=1)
    A = np.abs(accel_points(spline)).max(axis=1)
    n_spans = spline.n_ctrl - p
    vm = np.zeros(n_spans)
    am = np.zeros(n_spans)
    for i, v in enumerate(V):
        # V_i is active over domain spans i-p+1 .. i (clipped)
        for s in range(max(i - p + 1, 0), min(i + 1, n_spans)):
            vm[s] = max(vm[s], v)
    for i, a in enumerate(A):
        for s in range(max(i - p + 2, 0), min(i + 1, n_spans)):
            am[s] = max(am[s], a)
    return vm, am


def _repin_boundary(spline: BSplineTrajectory, traj, t_now: float,
                    rejoin_time: float) -> BSplineTrajectory:
    """Recompute the clamped first/last p control points against the
    spline's current (possibly stretched) knots so the window entry state
    and the rejoin state at the original window end stay exact."""
    from .curves import clamp_control_points
    p = spline.degree
    n = spline.n_ctrl
    s0 = traj.state_at(t_now)
    s1 = traj.state_at(rejoin_time)
    knots = spline.knots
    ctrl = spline.ctrl.copy()
    ctrl[:p] = clamp_control_points(p, float(knots[p + 1] - knots[p]),
                                    *s0, True, knots, p)
    ctrl[n - p:] = clamp_control_points(p, float(knots[n] - knots[n - 1]),
                                        *s1, False, knots, n - 1)
    return BSplineTrajectory(p, ctrl, knots.copy())


def refine(spline: BSplineTrajectory, esdf: Esdf, limits: KinodynamicLimits,
           config: ReplanConfig, traj=None, t_now: Optional[float] = None
           ) -> BSplineTrajectory:
    """Iterative post-process: escalate the collision weight on hard
    collisions, stretch infeasible knot spans, escalate the feasibility
    weight if stretching stalls. The control polygon never changes during
    stretching, only the knot spans; after a stretch round the clamped
    boundary points are re-pinned to the window states."""
    lam2 = config.lambda_collision
    lam3 = config.lambda_feasible
    current = spline
    feasible = False
    rejoin = getattr(spline, "rejoin_time", None)
    if rejoin is None and traj is not None and t_now is not None:
        rejoin = min(t_now + config.horizon, traj.total_time)

    def curve_min_distance(s: BSplineTrajectory) -> float:
        worst = np.inf
        for t in np.linspace(s.t_start, s.t_end - 1e-9, 240):
            worst = min(worst, _sample_distance(esdf, s.eval(t))[0])
        return worst

    def reoptimize():
        if traj is None or t_now is None:
            raise ValueError("refine needs the source trajectory to "
                             "re-optimize")
        return replan_window(traj, esdf, t_now, config, limits,
                             lam2=lam2, lam3=lam3)

    def span_state(s):
        # feasibility inherits the global profile's grid margins (2% / 5%):
        # the clamped window boundary states may legitimately run there
        vm, am = _span_violations(s, limits)
        return vm, am, (vm > limits.v_max * 1.02) | (am > limits.a_max * 1.05)

    for _ in range(config.max_refine_iters):
        p = current.degree
        free = range(p, current.n_ctrl - p)
        hard = any(_sample_distance(esdf, current.ctrl[i])[0] <= 0.0
                   for i in free)
        if hard or curve_min_distance(current) <= 0.0:
            lam2 *= 2.0
            if traj is None or t_now is None:
                if hard:
                    raise ValueError("refine needs the source trajectory to "
                                     "re-optimize after a hard collision")
                break
            current = reoptimize()
            continue
        # complete stretch phase: enlarge infeasible interior spans until
        # feasible or no progress, re-pinning the clamped boundary states
        # each round. Boundary spans are excluded: their kinematics are
        # pinned by the window states, and stretching + re-pinning them
        # sharpens the junction instead of relaxing it.
        n_spans = current.n_ctrl - current.degree
        lo, hi = current.degree, n_spans - current.degree
        for _ in range(10):
            vm, am, bad = span_state(current)
            if not bad[lo:hi].any():
                break
            stretched = False
            for s in np.flatnonzero(bad):
                if not lo <= s < hi:
                    continue
                f = stretch_factor(vm[s], limits.v_max, am[s], limits.a_max,
                                   config.alpha_stretch)
                if f > 1.0 + 1e-9:
                    current = current.with_stretched_span(int(s), f)
                    stretched = True
            if not stretched:
                break
            if traj is not None and t_now is not None:
                current = _repin_boundary(current, traj, t_now, rejoin)
        _, _, bad = span_state(current)
        if bad.any():
            lam3 *= 2.0
            if traj is None or t_now is None:
                break
            current = reoptimize()
            continue
        # stretching morphs the curve inside its hull: re-verify collisions
        if curve_min_distance(current) <= 0.0:
            lam2 *= 2.0
            if traj is None or t_now is None:
                break
            current = reoptimize()
            continue
        feasible = True
        break
    current.feasible = feasible
    current.rejoin_time = rejoin
    if not feasible:
        log.warning("refine hit the iteration cap with remaining infeasibility")
    return current
