"""Bernstein/Bezier pieces and uniform B-splines: evaluation, derivatives,
and least-squares fitting with clamped boundary states."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)


def bernstein(n: int, i: int, t: float) -> float:
    """Bernstein basis value C(n,i) t^i (1-t)^(n-i) on the unit interval."""
    if not 0 <= i <= n:
        raise ValueError(f"index {i} outside [0, {n}]")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"parameter {t} outside [0, 1]")
    return math.comb(n, i) * t ** i * (1.0 - t) ** (n - i)


@dataclass
class BezierPiece:
    """One Bezier piece: control points (n+1, 3) in meters, duration in
    seconds. The curve is evaluated at t/T, so derivatives carry 1/T^k."""
    ctrl: np.ndarray
    duration: float

    def __post_init__(self):
        self.ctrl = np.asarray(self.ctrl, dtype=float)
        if self.ctrl.ndim != 2 or self.ctrl.shape[1] != 3:
            raise ValueError("ctrl must have shape (n+1, 3)")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.duration <= 0:
            raise ValueError("duration must be > 0")

    @property
    def degree(self) -> int:
        return self.ctrl.shape[0] - 1


def _diff_ctrl(ctrl: np.ndarray, n: int, order: int) -> np.ndarray:
    """k-fold forward differencing with the n(n-1)... factor (unit interval)."""
    d = ctrl
    for k in range(order):
        d = (n - k) * (d[1:] - d[:-1])
    return d


def bezier_eval(piece: BezierPiece, t: float, order: int = 0) -> np.ndarray:
    """Order-k derivative of the piece at local time t in [0, duration]."""
    if not 0.0 <= t <= piece.duration:
        raise ValueError(f"t={t} outside [0, {piece.duration}]")
    n = piece.degree
    if order > n:
        return np.zeros(3)
    u = t / piece.duration
    d = _diff_ctrl(piece.ctrl, n, order)
    m = n - order
    basis = np.array([bernstein(m, i, u) for i in range(m + 1)])
    return basis @ d / piece.duration ** order


@dataclass
class PiecewiseBezier:
    """Ordered Bezier pieces with an optional per-piece polyhedron index."""
    pieces: list
    polyhedron_index: Optional[list] = None

    @property
    def degree(self) -> int:
        return self.pieces[0].degree

    @property
    def durations(self) -> np.ndarray:
        return np.array([p.duration for p in self.pieces])

    @property
    def total_duration(self) -> float:
        return float(sum(p.duration for p in self.pieces))

    def locate(self, t: float) -> tuple[int, float]:
        """Piece index and local time for a global time t."""
        if t < 0 or t > self.total_duration + 1e-9:
            raise ValueError(f"t={t} outside [0, {self.total_duration}]")
        acc = 0.0
        for m, p in enumerate(self.pieces):
            if t <= acc + p.duration or m == len(self.pieces) - 1:
                return m, min(max(t - acc, 0.0), p.duration)
            acc += p.duration
        raise AssertionError

    def eval(self, t: float, order: int = 0) -> np.ndarray:
        m, tl = self.locate(t)
        return bezier_eval(self.pieces[m], tl, order)

    def with_durations(self, durations) -> "PiecewiseBezier":
        if len(durations) != len(self.pieces):
            raise ValueError("duration count must match piece count")
        pieces = [BezierPiece(p.ctrl.copy(), float(T))
                  for p, T in zip(self.pieces, durations)]
        return PiecewiseBezier(pieces, polyhedron_index=self.polyhedron_index)


def _span_basis_matrix(knots: np.ndarray, p: int, i: int) -> np.ndarray:
    """Matrix M with P(u) = [1, u, .., u^p] @ M @ [Q_{i-p} .. Q_i] on span
    [t_i, t_{i+1}), built from the De Boor-Cox recursion on polynomial
    coefficients of the local parameter u = (t - t_i) / (t_{i+1} - t_i)."""
    dt = knots[i + 1] - knots[i]
    if dt <= 0:
        raise ValueError(f"empty span {i}")
    # poly[j] = coefficients (ascending in u) of N_{j,r} restricted to the span
    n_basis = len(knots) - 1
    poly = {j: np.zeros(1) for j in range(n_basis)}
    poly[i] = np.array([1.0])
    for r in range(1, p + 1):
        new = {}
        for j in range(i - r, i + 1):
            c = np.zeros(r + 1)
            left = poly.get(j, None)
            if left is not None and left.any() and knots[j + r] > knots[j]:
                # (t - t_j) / (t_{j+r} - t_j) with t = t_i + u*dt
                a0 = (knots[i] - knots[j]) / (knots[j + r] - knots[j])
                a1 = dt / (knots[j + r] - knots[j])
                c[: len(left)] += a0 * left
                c[1: len(left) + 1] += a1 * left
            right = poly.get(j + 1, None)
            if right is not None and right.any() and knots[j + r + 1] > knots[j + 1]:
                b0 = (knots[j + r + 1] - knots[i]) / (knots[j + r + 1] - knots[j + 1])
                b1 = -dt / (knots[j + r + 1] - knots[j + 1])
                c[: len(right)] += b0 * right
                c[1: len(right) + 1] += b1 * right
            new[j] = c
        poly = new
    M = np.zeros((p + 1, p + 1))
    for c_idx in range(p + 1):
        coeffs = poly.get(i - p + c_idx, np.zeros(1))
        M[: len(coeffs), c_idx] = coeffs
    return M


@dataclass
class BSplineTrajectory:
    """Degree-p B-spline: control points Q_0..Q_N and knots t_0..t_{N+p+1}.

    Uniform on creation; individual spans may be stretched afterwards, in
    which case the local basis matrix is recomputed per span.
    """
    degree: int
    ctrl: np.ndarray     # (N+1, 3)
    knots: np.ndarray    # (N+p+2,)
    fit_rms: Optional[float] = None
    _basis_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.ctrl = np.asarray(self.ctrl, dtype=float)
        self.knots = np.asarray(self.knots, dtype=float)
        n_ctrl = self.ctrl.shape[0]
        if self.knots.shape[0] != n_ctrl + self.degree + 1:
            raise ValueError("knot count must be N + p + 2")
        if (np.diff(self.knots) < -1e-12).any():
            raise ValueError("knots must be non-decreasing")

    @property
    def n_ctrl(self) -> int:
        return self.ctrl.shape[0]

    @property
    def t_start(self) -> float:
        return float(self.knots[self.degree])

    @property
    def t_end(self) -> float:
        return float(self.knots[self.n_ctrl])

    def span_of(self, t: float) -> int:
        p = self.degree
        if not (self.t_start - 1e-9 <= t <= self.t_end + 1e-9):
            raise ValueError(f"t={t} outside [{self.t_start}, {self.t_end}]")
        i = int(np.searchsorted(self.knots, t, side="right")) - 1
        return min(max(i, p), self.n_ctrl - 1)

    def _basis(self, i: int) -> np.ndarray:
        M = self._basis_cache.get(i)
        if M is None:
            M = _span_basis_matrix(self.knots, self.degree, i)
            self._basis_cache[i] = M
        return M

    def eval(self, t: float, order: int = 0) -> np.ndarray:
        p = self.degree
        if order > p:
            return np.zeros(3)
        i = self.span_of(t)
        dt = self.knots[i + 1] - self.knots[i]
        u = (t - self.knots[i]) / dt
        M = self._basis(i)
        row = np.zeros(p + 1)
        for r in range(order, p + 1):
            fac = 1.0
            for k in range(order):
                fac *= r - k
            row[r] = fac * u ** (r - order)
        Q = self.ctrl[i - p: i + 1]
        return (row @ M @ Q) / dt ** order

    def span_durations(self) -> np.ndarray:
        """Knot spans of the evaluable domain [t_p, t_{N+1})."""
        return np.diff(self.knots[self.degree: self.n_ctrl + 1])

    def with_stretched_span(self, span_index: int, factor: float) -> "BSplineTrajectory":
        """New spline with the (domain) span scaled by factor; subsequent
        knots shift, the control polygon is untouched."""
        if factor <= 0:
            raise ValueError("stretch factor must be > 0")
        i = self.degree + span_index
        knots = self.knots.copy()
        dt = knots[i + 1] - knots[i]
        knots[i + 1:] += (factor - 1.0) * dt
        return BSplineTrajectory(self.degree, self.ctrl.copy(), knots,
                                 fit_rms=self.fit_rms)


def clamp_control_points(p: int, dt: float, pos, vel, acc, at_start: bool,
                         knots: np.ndarray, span: int) -> np.ndarray:
    """Control points pinning position/velocity/acceleration at a domain end.

    At the start the first p points are determined (the weight of Q_p in the
    value/velocity/acceleration rows at u=0 vanishes); mirrored at the end.
    """
    M = _span_basis_matrix(knots, p, span)
    rows = np.zeros((3, p + 1))
    u = 0.0 if at_start else 1.0
    for order in range(3):
        for r in range(order, p + 1):
            fac = 1.0
            for k in range(order):
                fac *= r - k
            rows[order, r] = fac * u ** (r - order)
    W = rows @ M  # (3, p+1) weights over the span's p+1 control points
    scale = np.array([1.0, dt, dt * dt])
    b = np.stack([np.asarray(pos, float), np.asarray(vel, float) * scale[1],
                  np.asarray(acc, float) * scale[2]])
    if at_start:
        A = W[:, :p]  # Q_span-p .. Q_span-1
    else:
        A = W[:, 1:]
    if A.shape[0] == A.shape[1]:
        return np.linalg.solve(A, b)
    return np.linalg.lstsq(A, b, rcond=None)[0]


def fit_uniform_bspline(times: np.ndarray, points: np.ndarray, span: float,
                        degree: int = 3, clamp=None) -> BSplineTrajectory:
    """Least-squares uniform B-spline through timestamped samples.

    clamp is ((pos, vel, acc) at window start, (pos, vel, acc) at window
    end); the first and last `degree` control points are set from it and
    excluded from the fit. Rank-deficient normal equations fall back to a
    ridge solve with a warning.
    """
    times = np.asarray(times, dtype=float)
    points = np.asarray(points, dtype=float).reshape(len(times), 3)
    p = degree
    if len(times) < 2 * p + 2:
        raise ValueError(f"need at least {2 * p + 2} samples, got {len(times)}")
    steps = np.diff(times)
    if len(steps) and not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-9):
        raise ValueError("samples must be uniformly spaced in time")
    t0, t1 = float(times[0]), float(times[-1])
    window = t1 - t0
    n_spans = max(int(math.ceil(window / span - 1e-9)), 1)
    n_ctrl = n_spans + p
    knots = t0 + (np.arange(n_ctrl + p + 1) - p) * span
    spline = BSplineTrajectory(degree=p, ctrl=np.zeros((n_ctrl, 3)), knots=knots)

    ctrl = np.zeros((n_ctrl, 3))
    fixed = np.zeros(n_ctrl, dtype=bool)
    if clamp is not None:
        (p0, v0, a0), (p1, v1, a1) = clamp
        ctrl[:p] = clamp_control_points(p, span, p0, v0, a0, True, knots, p)
        ctrl[n_ctrl - p:] = clamp_control_points(p, span, p1, v1, a1, False,
                                                 knots, n_ctrl - 1)
        fixed[:p] = True
        fixed[n_ctrl - p:] = True

    A = np.zeros((len(times), n_ctrl))
    for r, t in enumerate(times):
        tt = min(max(t, knots[p]), knots[n_ctrl] - 1e-12)
        i = spline.span_of(tt)
        dt = knots[i + 1] - knots[i]
        u = (tt - knots[i]) / dt
        row = np.array([u ** k for k in range(p + 1)])
        A[r, i - p: i + 1] = row @ spline._basis(i)

    free = ~fixed
    if free.any():
        rhs = points - A[:, fixed] @ ctrl[fixed]
        Af = A[:, free]
        AtA = Af.T @ Af
        try:
            sol = np.linalg.solve(AtA, Af.T @ rhs)
            if not np.isfinite(sol).all():
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            log.warning("rank-deficient B-spline fit, using ridge solve")
            sol = np.linalg.solve(AtA + 1e-8 * np.eye(AtA.shape[0]), Af.T @ rhs)
        ctrl[free] = sol
    result = BSplineTrajectory(degree=p, ctrl=ctrl, knots=knots)
    resid = np.array([result.eval(min(max(t, knots[p]), knots[n_ctrl] - 1e-12))
                      for t in times]) - points
    result.fit_rms = float(np.sqrt((resid ** 2).sum(axis=1).mean()))
    return result
