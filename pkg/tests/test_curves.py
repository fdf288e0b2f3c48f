import math

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from voxplan.curves import (BezierPiece, BSplineTrajectory, PiecewiseBezier,
                            bernstein, bezier_eval, fit_uniform_bspline)


def scalar_piece(vals, T=1.0) -> BezierPiece:
    ctrl = np.zeros((len(vals), 3))
    ctrl[:, 0] = vals
    return BezierPiece(ctrl, T)


# ---------------------------------------------------------------------------
# Bernstein basis

def test_bernstein_midpoint():
    assert bernstein(2, 1, 0.5) == pytest.approx(0.5)


def test_bernstein_endpoint():
    for n in range(1, 8):
        assert bernstein(n, 0, 0.0) == 1.0


def test_bernstein_partition_of_unity():
    assert sum(bernstein(3, i, 0.3) for i in range(4)) == pytest.approx(1.0)


def test_bernstein_domain_errors():
    with pytest.raises(ValueError):
        bernstein(3, 4, 0.5)
    with pytest.raises(ValueError):
        bernstein(3, 1, 1.5)


# ---------------------------------------------------------------------------
# Bezier evaluation

def test_bezier_constant_ctrl():
    p = BezierPiece(np.tile([1.0, -2.0, 0.5], (6, 1)), 2.0)
    assert np.allclose(bezier_eval(p, 1.3, 0), [1.0, -2.0, 0.5])
    for order in (1, 2, 3):
        assert np.allclose(bezier_eval(p, 1.3, order), 0.0)


def test_bezier_linear_scaled_parameter():
    p = scalar_piece([0.0, 1.0], T=2.0)
    assert bezier_eval(p, 1.0, 0)[0] == pytest.approx(0.5)


def test_bezier_order_beyond_degree_is_zero():
    p = scalar_piece([0.0, 1.0, 0.5, 2.0], T=1.0)
    assert np.allclose(bezier_eval(p, 0.5, 4), 0.0)


def min_jerk_quintic_monomials():
    """Oracle: minimum-jerk rest-to-rest 0->1 on [0,1] from the boundary
    value linear system in the monomial basis."""
    A = np.zeros((6, 6))
    A[0, 0] = 1.0                                    # f(0) = 0
    A[1, 1] = 1.0                                    # f'(0) = 0
    A[2, 2] = 2.0                                    # f''(0) = 0
    A[3] = np.ones(6)                                # f(1) = 1
    A[4] = np.arange(6, dtype=float)                 # f'(1) = 0
    A[5] = np.array([k * (k - 1) for k in range(6)], float)
    b = np.array([0, 0, 0, 1, 0, 0], float)
    return np.linalg.solve(A, b)


def test_bezier_quintic_rest_to_rest():
    coeffs = min_jerk_quintic_monomials()
    assert np.allclose(coeffs, [0, 0, 0, 10, -15, 6])
    p = scalar_piece([0, 0, 0, 1, 1, 1], T=1.0)
    for t in np.linspace(0, 1, 21):
        ref = sum(c * t ** k for k, c in enumerate(coeffs))
        assert bezier_eval(p, t, 0)[0] == pytest.approx(ref, abs=1e-12)
    assert bezier_eval(p, 0.5, 0)[0] == pytest.approx(0.5)
    assert bezier_eval(p, 0.0, 1)[0] == pytest.approx(0.0, abs=1e-12)
    assert bezier_eval(p, 0.0, 2)[0] == pytest.approx(0.0, abs=1e-12)


def test_bezier_endpoint_interpolation():
    rng = np.random.default_rng(0)
    ctrl = rng.normal(size=(6, 3))
    p = BezierPiece(ctrl, 1.7)
    assert np.allclose(bezier_eval(p, 0.0), ctrl[0])
    assert np.allclose(bezier_eval(p, 1.7), ctrl[-1])


def test_bezier_convex_hull_property():
    rng = np.random.default_rng(1)
    for _ in range(200):
        ctrl = rng.normal(size=(6, 3)) * rng.uniform(0.5, 3.0)
        piece = BezierPiece(ctrl, rng.uniform(0.5, 4.0))
        hull = ConvexHull(ctrl)
        eqs = hull.equations
        for t in np.linspace(0, piece.duration, 100):
            x = bezier_eval(piece, t)
            assert (eqs[:, :3] @ x + eqs[:, 3] <= 1e-9).all()


def test_bezier_derivative_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(10):
        piece = BezierPiece(rng.normal(size=(6, 3)), rng.uniform(0.5, 3.0))
        for t in np.linspace(0.1, piece.duration - 0.1, 7):
            for order in (1, 2, 3):
                lo = bezier_eval(piece, t - h, order - 1)
                hi = bezier_eval(piece, t + h, order - 1)
                fd = (hi - lo) / (2 * h)
                got = bezier_eval(piece, t, order)
                scale = max(1.0, np.abs(got).max())
                assert np.abs(got - fd).max() / scale < 1e-5


def test_piecewise_locate_and_domain():
    pieces = [scalar_piece([0, 0, 0, 1, 1, 1], T=1.0),
              scalar_piece([1, 1, 1, 2, 2, 2], T=2.0)]
    traj = PiecewiseBezier(pieces)
    assert traj.total_duration == pytest.approx(3.0)
    m, tl = traj.locate(1.5)
    assert m == 1 and tl == pytest.approx(0.5)
    with pytest.raises(ValueError):
        traj.locate(3.5)


# ---------------------------------------------------------------------------
# B-splines

def deboor_eval(knots, ctrl, p, t):
    """Direct De Boor recursion oracle (independent of the matrix path)."""
    n = len(ctrl) - 1
    k = None
    for i in range(p, n + 1):
        if knots[i] <= t < knots[i + 1] or (i == n and t <= knots[i + 1]):
            k = i
            break
    d = [np.array(ctrl[j], dtype=float) for j in range(k - p, k + 1)]
    for r in range(1, p + 1):
        for j in range(p, r - 1, -1):
            i = j + k - p
            denom = knots[i + p - r + 1] - knots[i]
            alpha = 0.0 if denom == 0 else (t - knots[i]) / denom
            d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j]
    return d[p]


def test_bspline_constant_ctrl():
    q = np.tile([0.3, -1.0, 2.0], (6, 1))
    knots = np.arange(10, dtype=float)
    s = BSplineTrajectory(3, q, knots)
    for t in np.linspace(s.t_start, s.t_end - 1e-9, 17):
        assert np.allclose(s.eval(t), [0.3, -1.0, 2.0])
        assert np.allclose(s.eval(t, 1), 0.0)


def test_bspline_uniform_cubic_span_start():
    q = np.zeros((4, 3))
    q[:, 0] = [0.0, 1.0, 2.0, 3.0]
    knots = np.arange(8, dtype=float)
    s = BSplineTrajectory(3, q, knots)
    assert s.eval(s.t_start)[0] == pytest.approx((0 + 4 * 1 + 2) / 6)


def test_bspline_matrix_matches_deboor():
    rng = np.random.default_rng(3)
    for _ in range(5):
        n_ctrl = rng.integers(5, 10)
        ctrl = rng.normal(size=(n_ctrl, 3))
        knots = np.arange(n_ctrl + 4, dtype=float) * rng.uniform(0.2, 1.5)
        s = BSplineTrajectory(3, ctrl, knots)
        for t in np.linspace(s.t_start, s.t_end - 1e-9, 100):
            ref = deboor_eval(knots, ctrl, 3, t)
            assert np.abs(s.eval(t) - ref).max() < 1e-9


def test_bspline_nonuniform_matches_deboor():
    rng = np.random.default_rng(4)
    ctrl = rng.normal(size=(8, 3))
    knots = np.arange(12, dtype=float)
    s = BSplineTrajectory(3, ctrl, knots).with_stretched_span(2, 1.7)
    for t in np.linspace(s.t_start, s.t_end - 1e-9, 100):
        ref = deboor_eval(s.knots, ctrl, 3, t)
        assert np.abs(s.eval(t) - ref).max() < 1e-9


def test_bspline_outside_domain_rejected():
    s = BSplineTrajectory(3, np.zeros((5, 3)), np.arange(9, dtype=float))
    with pytest.raises(ValueError):
        s.eval(0.5)


def test_bspline_continuity_across_knots():
    rng = np.random.default_rng(5)
    ctrl = rng.normal(size=(9, 3))
    knots = np.arange(13, dtype=float) * 0.4
    s = BSplineTrajectory(3, ctrl, knots)
    eps = 1e-7
    for i in range(4, 9):
        t = s.knots[i]
        for order in range(3):  # C^{p-1}
            left = s.eval(t - eps, order)
            right = s.eval(t + eps, order)
            assert np.abs(left - right).max() < 1e-4  # eps-limited
    # exact one-sided comparison at the knot itself
    for i in range(4, 9):
        t = s.knots[i]
        for order in range(3):
            left = s.eval(t - 1e-12, order)
            right = s.eval(t, order)
            assert np.abs(left - right).max() < 1e-9


def test_bspline_stretch_keeps_control_polygon():
    rng = np.random.default_rng(6)
    ctrl = rng.normal(size=(8, 3))
    s = BSplineTrajectory(3, ctrl, np.arange(12, dtype=float))
    s2 = s.with_stretched_span(1, 1.1)
    assert np.array_equal(s.ctrl, s2.ctrl)
    assert s2.knots[5] - s2.knots[4] == pytest.approx(1.1)


# ---------------------------------------------------------------------------
# fitting

def rest(p):
    return (np.asarray(p, float), np.zeros(3), np.zeros(3))


def test_fit_constant_samples():
    times = np.linspace(0, 2, 12)
    pts = np.tile([1.0, 2.0, 3.0], (12, 1))
    s = fit_uniform_bspline(times, pts, span=0.25, degree=3,
                            clamp=(rest([1, 2, 3]), rest([1, 2, 3])))
    assert np.allclose(s.ctrl, [1.0, 2.0, 3.0])
    assert s.fit_rms == pytest.approx(0.0, abs=1e-9)


def test_fit_straight_line():
    times = np.linspace(0, 2, 20)
    pts = np.outer(times, [0.5, 0.0, 0.0])
    v = np.array([0.5, 0, 0])
    s = fit_uniform_bspline(times, pts, span=0.25, degree=3,
                            clamp=((pts[0], v, np.zeros(3)),
                                   (pts[-1], v, np.zeros(3))))
    assert s.fit_rms <= 1e-6


def test_fit_sine_arc():
    times = np.linspace(0, 3, 40)
    pts = np.stack([times, 0.5 * np.sin(times * np.pi / 3), np.zeros_like(times)],
                   axis=1)
    v0 = np.array([1.0, 0.5 * np.pi / 3, 0.0])
    v1 = np.array([1.0, -0.5 * np.pi / 3, 0.0])
    s = fit_uniform_bspline(times, pts, span=0.25, degree=3,
                            clamp=((pts[0], v0, np.zeros(3)),
                                   (pts[-1], v1, np.zeros(3))))
    assert s.fit_rms <= 0.05


def test_fit_requires_enough_samples():
    with pytest.raises(ValueError):
        fit_uniform_bspline(np.linspace(0, 1, 5), np.zeros((5, 3)), span=0.2)


def test_fit_requires_uniform_spacing():
    times = np.array([0.0, 0.1, 0.25, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
    with pytest.raises(ValueError):
        fit_uniform_bspline(times, np.zeros((10, 3)), span=0.2)


def test_fit_clamp_reproduces_boundary_states():
    times = np.linspace(0, 2, 20)
    pts = np.stack([times ** 2 * 0.2, times * 0.3, np.zeros_like(times)], axis=1)
    s0 = (pts[0], np.array([0.0, 0.3, 0.0]), np.array([0.4, 0.0, 0.0]))
    s1 = (pts[-1], np.array([0.8, 0.3, 0.0]), np.array([0.4, 0.0, 0.0]))
    s = fit_uniform_bspline(times, pts, span=0.25, degree=3, clamp=(s0, s1))
    assert np.abs(s.eval(s.t_start) - s0[0]).max() < 1e-9
    assert np.abs(s.eval(s.t_start, 1) - s0[1]).max() < 1e-9
    assert np.abs(s.eval(s.t_start, 2) - s0[2]).max() < 1e-9
    te = s.t_end - 1e-12
    assert np.abs(s.eval(te) - s1[0]).max() < 1e-6
    assert np.abs(s.eval(te, 1) - s1[1]).max() < 1e-6
    assert np.abs(s.eval(te, 2) - s1[2]).max() < 1e-5
