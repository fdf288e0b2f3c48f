"""Embedded convex solvers: a cone QP interior-point core shared by the
quadratic-program and second-order-cone-program front ends.

Internal standard form:

    minimize   (1/2) x'Px + q'x
    subject to A x = b
               G x + s = h,  s in K = R+^l x Q^{d1} x ... x Q^{dk}

Rotated quadratic cones are rescaled to standard cones internally. Every
"optimal" answer self-certifies through KKT residuals that callers can
recompute from the returned point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

_SQRT2 = np.sqrt(2.0)


# ---------------------------------------------------------------------------
# problem containers

@dataclass
class QpProblem:
    """minimize (1/2) x'Hx + g'x  s.t.  A_eq x = b_eq, A_ie x <= b_ie."""
    hessian: sp.spmatrix
    linear: np.ndarray
    a_eq: Optional[sp.spmatrix] = None
    b_eq: Optional[np.ndarray] = None
    a_ie: Optional[sp.spmatrix] = None
    b_ie: Optional[np.ndarray] = None

    def __post_init__(self):
        self.hessian = sp.csc_matrix(self.hessian)
        self.linear = np.asarray(self.linear, dtype=float).ravel()
        n = self.linear.size
        if self.hessian.shape != (n, n):
            raise ValueError("hessian/linear dimension mismatch")
        sym_err = abs(self.hessian - self.hessian.T).max()
        if sym_err > 1e-12 * max(1.0, abs(self.hessian).max()):
            raise ValueError(f"hessian not symmetric (err {sym_err})")
        for name in ("a_eq", "a_ie"):
            m = getattr(self, name)
            if m is not None:
                m = sp.csc_matrix(m)
                if m.shape[1] != n:
                    raise ValueError(f"{name} column count != {n}")
                setattr(self, name, m)
        if (self.a_eq is None) != (self.b_eq is None):
            raise ValueError("a_eq and b_eq must come together")
        if (self.a_ie is None) != (self.b_ie is None):
            raise ValueError("a_ie and b_ie must come together")
        if self.b_eq is not None:
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
            if self.a_eq.shape[0] != self.b_eq.size:
                raise ValueError("a_eq/b_eq row mismatch")
        if self.b_ie is not None:
            self.b_ie = np.asarray(self.b_ie, dtype=float).ravel()
            if self.a_ie.shape[0] != self.b_ie.size:
                raise ValueError("a_ie/b_ie row mismatch")

    @property
    def n(self) -> int:
        return self.linear.size


@dataclass
class Cone:
    """Conic membership of an affine expression: rows @ x + offset in K.

    kind "quadratic": x1 >= ||x2..||_2.
    kind "rotated":   2 x1 x2 >= ||x3..||^2, x1 >= 0, x2 >= 0.
    """
    kind: str
    rows: sp.spmatrix
    offset: np.ndarray

    def __post_init__(self):
        if self.kind not in ("quadratic", "rotated"):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        self.rows = sp.csc_matrix(self.rows)
        self.offset = np.asarray(self.offset, dtype=float).ravel()
        if self.rows.shape[0] != self.offset.size:
            raise ValueError("cone rows/offset mismatch")
        if self.rows.shape[0] < (3 if self.kind == "rotated" else 2):
            raise ValueError("cone dimension too small")

    @staticmethod
    def from_indices(kind: str, indices, n: int) -> "Cone":
        """Cone over a plain variable slice."""
        indices = list(indices)
        rows = sp.csc_matrix(
            (np.ones(len(indices)), (range(len(indices)), indices)),
            shape=(len(indices), n))
        return Cone(kind, rows, np.zeros(len(indices)))

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.rows @ x + self.offset

    def violation(self, v: np.ndarray) -> float:
        """Distance-like infeasibility of a point for this cone (0 = member)."""
        if self.kind == "quadratic":
            return max(0.0, float(np.linalg.norm(v[1:]) - v[0]))
        t = 2.0 * v[0] * v[1] - float(v[2:] @ v[2:])
        return max(0.0, -min(v[0], v[1]), 0.0 if t >= 0 else np.sqrt(-t))


@dataclass
class SocpProblem:
    """minimize h'x  s.t.  A_eq x = b_eq, A_ie x <= b_ie, cone memberships."""
    objective: np.ndarray
    cones: list
    a_eq: Optional[sp.spmatrix] = None
    b_eq: Optional[np.ndarray] = None
    a_ie: Optional[sp.spmatrix] = None
    b_ie: Optional[np.ndarray] = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).ravel()
        n = self.objective.size
        for name in ("a_eq", "a_ie"):
            m = getattr(self, name)
            if m is not None:
                setattr(self, name, sp.csc_matrix(m))
                if getattr(self, name).shape[1] != n:
                    raise ValueError(f"{name} column count != {n}")
        if self.b_eq is not None:
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.b_ie is not None:
            self.b_ie = np.asarray(self.b_ie, dtype=float).ravel()
        for c in self.cones:
            if c.rows.shape[1] != n:
                raise ValueError("cone column count mismatch")

    @property
    def n(self) -> int:
        return self.objective.size


@dataclass
class SolveReport:
    status: str                  # optimal | infeasible | max_iter
    x: np.ndarray
    objective: float
    residuals: dict
    iterations: int
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))
    s: np.ndarray = field(default_factory=lambda: np.zeros(0))
    certificate: Optional[dict] = None


# ---------------------------------------------------------------------------
# Jordan-algebra helpers (nonnegative orthant + second-order cones)

def _cone_slices(l: int, socs: list[int]):
    out = []
    ofs = l
    for d in socs:
        out.append(slice(ofs, ofs + d))
        ofs += d
    return out


def _min_eig(v, l, soc_sl):
    ev = np.inf
    if l:
        ev = min(ev, v[:l].min())
    for slc in soc_sl:
        u = v[slc]
        ev = min(ev, u[0] - np.linalg.norm(u[1:]))
    return ev


def _jprod(a, b, l, soc_sl):
    out = np.empty_like(a)
    out[:l] = a[:l] * b[:l]
    for slc in soc_sl:
        u, v = a[slc], b[slc]
        out[slc.start] = u @ v
        out[slc.start + 1: slc.stop] = u[0] * v[1:] + v[0] * u[1:]
    return out


def _jdiv(lmbda, w, l, soc_sl):
    """Solve lmbda o x = w."""
    out = np.empty_like(w)
    out[:l] = w[:l] / lmbda[:l]
    for slc in soc_sl:
        lam, u = lmbda[slc], w[slc]
        det = lam[0] ** 2 - lam[1:] @ lam[1:]
        x0 = (lam[0] * u[0] - lam[1:] @ u[1:]) / det
        out[slc.start] = x0
        out[slc.start + 1: slc.stop] = (u[1:] - x0 * lam[1:]) / lam[0]
    return out


def _identity(m, l, soc_sl):
    e = np.zeros(m)
    e[:l] = 1.0
    for slc in soc_sl:
        e[slc.start] = 1.0
    return e


def _max_step(v, dv, l, soc_sl):
    """Largest alpha with v + alpha*dv staying in the cone (v interior)."""
    alpha = np.inf
    if l:
        neg = dv[:l] < 0
        if neg.any():
            alpha = min(alpha, float((-v[:l][neg] / dv[:l][neg]).min()))
    for slc in soc_sl:
        u, d = v[slc], dv[slc]
        a = d[0] ** 2 - d[1:] @ d[1:]
        b = 2.0 * (u[0] * d[0] - u[1:] @ d[1:])
        c = u[0] ** 2 - u[1:] @ u[1:]
        roots = []
        if abs(a) < 1e-14:
            if b < -1e-14:
                roots.append(-c / b)
        else:
            disc = b * b - 4 * a * c
            if disc >= 0:
                sq = np.sqrt(disc)
                roots.extend([(-b - sq) / (2 * a), (-b + sq) / (2 * a)])
        best = np.inf
        for r in roots:
            if r > 1e-14 and u[0] + r * d[0] >= -1e-12:
                best = min(best, r)
        alpha = min(alpha, best)
    return alpha


class _Scaling:
    """Nesterov-Todd scaling blocks W with lambda = W z = W^{-1} s."""

    def __init__(self, s, z, l, soc_sl):
        self.l = l
        self.soc_sl = soc_sl
        self.d = np.sqrt(s[:l] / z[:l]) if l else np.zeros(0)
        self.soc_W = []
        for slc in soc_sl:
            su, zu = s[slc], z[slc]
            snorm = np.sqrt(su[0] ** 2 - su[1:] @ su[1:])
            znorm = np.sqrt(zu[0] ** 2 - zu[1:] @ zu[1:])
            sb = su / snorm
            zb = zu / znorm
            gamma = np.sqrt((1.0 + sb @ zb) / 2.0)
            wbar = np.empty_like(sb)
            wbar[0] = (sb[0] + zb[0]) / (2 * gamma)
            wbar[1:] = (sb[1:] - zb[1:]) / (2 * gamma)
            eta = np.sqrt(snorm / znorm)
            d = len(su)
            W = np.empty((d, d))
            W[0, 0] = wbar[0]
            W[0, 1:] = wbar[1:]
            W[1:, 0] = wbar[1:]
            W[1:, 1:] = np.eye(d - 1) + np.outer(wbar[1:], wbar[1:]) / (1.0 + wbar[0])
            self.soc_W.append(eta * W)

    def lam(self, z):
        out = np.empty_like(z)
        out[:self.l] = self.d * z[:self.l]
        for W, slc in zip(self.soc_W, self.soc_sl):
            out[slc] = W @ z[slc]
        return out

    def apply(self, v):
        """W @ v"""
        out = np.empty_like(v)
        out[:self.l] = self.d * v[:self.l]
        for W, slc in zip(self.soc_W, self.soc_sl):
            out[slc] = W @ v[slc]
        return out

    def apply_inv(self, v):
        """W^{-1} @ v"""
        out = np.empty_like(v)
        out[:self.l] = v[:self.l] / self.d
        for W, slc in zip(self.soc_W, self.soc_sl):
            out[slc] = np.linalg.solve(W, v[slc])
        return out

    def w_squared(self) -> sp.spmatrix:
        blocks = []
        if self.l:
            blocks.append(sp.diags(self.d ** 2))
        for W in self.soc_W:
            blocks.append(sp.csc_matrix(W @ W))
        if not blocks:
            return sp.csc_matrix((0, 0))
        return sp.block_diag(blocks, format="csc")


# ---------------------------------------------------------------------------
# core interior-point solver

_REG = 1e-10


def _solve_cone(P, q, A, b, G, h, l, socs, max_iter=10_000,
                feastol=1e-8, gaptol=1e-8, reg=_REG):
    n = q.size
    neq = b.size
    m = h.size
    soc_sl = _cone_slices(l, socs)
    nu = l + 2 * len(socs)
    e = _identity(m, l, soc_sl)

    if m == 0:
        return _solve_equality_only(P, q, A, b)

    def factor(W2):
        if neq:
            K = sp.bmat([
                [P + reg * sp.eye(n), A.T, G.T],
                [A, -reg * sp.eye(neq), None],
                [G, None, -(W2 + reg * sp.eye(m))],
            ], format="csc")
            K0 = sp.bmat([
                [P, A.T, G.T],
                [A, None, None],
                [G, None, -W2],
            ], format="csc")
        else:
            K = sp.bmat([
                [P + reg * sp.eye(n), G.T],
                [G, -(W2 + reg * sp.eye(m))],
            ], format="csc")
            K0 = sp.bmat([[P, G.T], [G, -W2]], format="csc")
        lu = spla.splu(K)

        def solve(rx, ry, rz):
            rhs = np.concatenate([rx, ry, rz]) if neq else np.concatenate([rx, rz])
            sol = lu.solve(rhs)
            for _ in range(2):  # iterative refinement against unregularized KKT
                resid = rhs - K0 @ sol
                sol = sol + lu.solve(resid)
            return sol[:n], sol[n:n + neq], sol[n + neq:]

        return solve

    # initialization: one KKT solve at W = I, then shift into the cone interior
    solve0 = factor(sp.eye(m, format="csc"))
    x, y, zt = solve0(-q, b.copy(), h.copy())
    s = -zt.copy()
    z = zt.copy()
    ts = _min_eig(s, l, soc_sl)
    if ts < 0:
        s = s + (1.0 - ts) * e
    elif ts < 1e-8:
        s = s + e
    tz = _min_eig(z, l, soc_sl)
    if tz < 0:
        z = z + (1.0 - tz) * e
    elif tz < 1e-8:
        z = z + e

    bnorm = max(1.0, np.linalg.norm(b)) if neq else 1.0
    hnorm = max(1.0, np.linalg.norm(h))
    qnorm = max(1.0, np.linalg.norm(q))

    status = "max_iter"
    certificate = None
    it = 0
    best = None
    for it in range(1, max_iter + 1):
        rx = P @ x + q + (A.T @ y if neq else 0) + G.T @ z
        ry = A @ x - b if neq else np.zeros(0)
        rz = G @ x + s - h
        gap = float(s @ z)
        pcost = 0.5 * float(x @ (P @ x)) + float(q @ x)

        pres = max(np.linalg.norm(ry) / bnorm, np.linalg.norm(rz) / hnorm)
        dres = np.linalg.norm(rx) / qnorm
        # relative gap without a unit floor: scale-free, so it bounds the
        # user-scale complementarity residual regardless of objective size
        relgap = gap / abs(pcost) if abs(pcost) > 1e-300 else gap
        metric = max(pres, dres, min(relgap, gap))
        if best is None or metric < best[0]:
            best = (metric, x.copy(), y.copy(), z.copy(), s.copy(), it)

        if pres <= feastol and dres <= feastol and (gap <= gaptol
                                                    or relgap <= 1e-7):
            status = "optimal"
            break


        if it > 60 and metric > best[0] * 1e4:
            break  # diverging; report the best iterate as max_iter
        if it - best[5] > 100:
            break  # stagnation: no progress for 100 iterations
        if best[0] <= 1e-7 and it - best[5] > 15:
            break  # acceptable iterate reached and refinement has stalled

        try:
            W = _Scaling(s, z, l, soc_sl)
            lmbda = W.lam(z)
            solve = factor(W.w_squared())
        except (RuntimeError, np.linalg.LinAlgError, FloatingPointError):
            break  # scaling/factorization breakdown: return the best iterate

        # affine (predictor) direction
        dx_a, dy_a, dz_a = solve(-rx, -ry, -rz + s)
        ds_a = -rz - G @ dx_a
        a_s = _max_step(s, ds_a, l, soc_sl)
        a_z = _max_step(z, dz_a, l, soc_sl)
        alpha_a = min(1.0, 0.99 * min(a_s, a_z))
        gap_a = float((s + alpha_a * ds_a) @ (z + alpha_a * dz_a))
        sigma = min(1.0, max(0.0, gap_a / gap)) ** 3
        mu = gap / nu

        # combined (corrector) direction
        corr = _jprod(W.apply_inv(ds_a), W.apply(dz_a), l, soc_sl)
        rhs_c = -_jprod(lmbda, lmbda, l, soc_sl) - corr + sigma * mu * e
        u = _jdiv(lmbda, rhs_c, l, soc_sl)
        dx, dy, dz = solve(-rx, -ry, -rz - W.apply(u))
        ds = -rz - G @ dx
        a_s = _max_step(s, ds, l, soc_sl)
        a_z = _max_step(z, dz, l, soc_sl)
        alpha = min(1.0, 0.99 * min(a_s, a_z))

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds

    if status != "infeasible" and best is not None and status == "max_iter":
        _, x, y, z, s, _ = best
    return x, y, z, s, status, it, certificate


def _phase1_certificate(A, b, G, h, l, socs):
    """Feasibility program: minimize t with G x - t e + s = h, s in K.

    Always strictly feasible in t, so the interior-point method converges;
    a positive optimal t proves primal infeasibility and the corresponding
    duals form a Farkas certificate (A'y + G'z = 0, z in K*, b'y + h'z < 0).
    """
    n = G.shape[1]
    e = _identity(h.size, l, _cone_slices(l, socs))
    Gx = sp.hstack([G, -sp.csc_matrix(e.reshape(-1, 1))], format="csc")
    # keep t bounded below so the program cannot be unbounded
    floor_row = sp.csc_matrix(([-1.0], ([0], [n])), shape=(1, n + 1))
    G1 = sp.vstack([floor_row, Gx], format="csc")
    h1 = np.concatenate([[1.0], h])
    A1 = sp.hstack([A, sp.csc_matrix((A.shape[0], 1))], format="csc") \
        if b.size else _empty(n + 1)[0]
    q1 = np.zeros(n + 1)
    q1[n] = 1.0
    P1 = sp.csc_matrix((n + 1, n + 1))
    x, y, z, s, status, _, _ = _solve_cone(P1, q1, A1, b, G1, h1, l + 1, socs,
                                           max_iter=200)
    t_star = x[n]
    if status != "optimal" or t_star <= 1e-7:
        return None
    z_orig = z[1:]
    atv = (A.T @ y if b.size else 0) + G.T @ z_orig
    return {
        "y": y.copy(),
        "z": z_orig.copy(),
        "defect": float((b @ y if b.size else 0.0) + h @ z_orig),
        "residual": float(np.linalg.norm(atv)),
    }


def _polish_qp(P, q, A, b, G, h, x, y, z, s):
    """Active-set polish seeded by the interior-point iterate (rows whose
    dual dominates the slack). A short add/drop refinement fixes wrong
    guesses: violated rows enter, negative-dual rows leave. Only a fully
    verified point (feasible primal, nonnegative active duals) is returned.
    """
    n = q.size
    neq = b.size
    Gr = G.tocsr() if h.size else None
    active = set(np.flatnonzero(z > s).tolist())

    def solve_with(act):
        act = sorted(act)
        if not act:
            xa, ya, *_ = _solve_equality_only(P, q, A, b)
            return xa, ya, np.zeros(h.size)
        Ga = sp.csc_matrix(Gr[act])
        blocks = [[P, A.T if neq else None, Ga.T],
                  [A if neq else None, None, None],
                  [Ga, None, None]]
        if not neq:
            blocks = [[P, Ga.T], [Ga, None]]
        K = sp.bmat([[blk for blk in row if True] for row in blocks],
                    format="csc")
        reg = sp.block_diag([sp.eye(n) * _REG,
                             -sp.eye(neq + len(act)) * _REG], format="csc")
        rhs = np.concatenate([-q, b, h[act]])
        lu = spla.splu(K + reg)
        sol = lu.solve(rhs)
        for _ in range(2):
            sol = sol + lu.solve(rhs - K @ sol)
        za = np.zeros(h.size)
        za[act] = sol[n + neq:]
        return sol[:n], sol[n:n + neq], za

    try:
        for _ in range(20):
            xa, ya, za = solve_with(active)
            viol = (G @ xa - h) if h.size else np.zeros(0)
            worst = viol.max() if h.size else 0.0
            neg = [i for i in active if za[i] < -1e-9]
            if worst > 1e-9:
                for i in np.argsort(viol)[::-1][:8]:
                    if viol[i] > 1e-9:
                        active.add(int(i))
                continue
            if neg:
                for i in neg:
                    active.discard(i)
                continue
            return xa, ya, za
    except (RuntimeError, ValueError):
        return None
    return None


def _solve_equality_only(P, q, A, b):
    n = q.size
    neq = b.size
    if neq:
        K = sp.bmat([[P, A.T], [A, None]], format="csc")
        K = K + _REG * sp.block_diag(
            [sp.eye(n), -sp.eye(neq)], format="csc")
        sol = spla.splu(K).solve(np.concatenate([-q, b]))
        x, y = sol[:n], sol[n:]
    else:
        x = spla.splu(sp.csc_matrix(P + _REG * sp.eye(n))).solve(-q)
        y = np.zeros(0)
    return x, y, np.zeros(0), np.zeros(0), "optimal", 1, None


# ---------------------------------------------------------------------------
# front ends

def _empty(n):
    return sp.csc_matrix((0, n)), np.zeros(0)


def _qp_parts(p: QpProblem):
    A, b = (p.a_eq, p.b_eq) if p.a_eq is not None else _empty(p.n)
    G, h = (p.a_ie, p.b_ie) if p.a_ie is not None else _empty(p.n)
    return A, b, G, h


def qp_residuals(problem: QpProblem, report: SolveReport) -> dict:
    """KKT residuals of a reported QP point, recomputed from scratch.

    Stationarity is scaled by the largest KKT term so huge-Hessian
    problems are judged relative to their own magnitude.
    """
    A, b, G, h = _qp_parts(problem)
    x, y, z = report.x, report.y, report.z
    px = problem.hessian @ x
    rx = px + problem.linear
    terms = [np.linalg.norm(px), np.linalg.norm(problem.linear)]
    if b.size:
        aty = A.T @ y
        rx = rx + aty
        terms.append(np.linalg.norm(aty))
    if h.size:
        gtz = G.T @ z
        rx = rx + gtz
        terms.append(np.linalg.norm(gtz))
    stat = float(np.linalg.norm(rx)) / max(1.0, *terms)
    primal = 0.0
    if b.size:
        primal = max(primal, float(np.abs(A @ x - b).max()) / max(1.0, np.linalg.norm(b)))
    comp = 0.0
    dual = 0.0
    if h.size:
        slack = h - G @ x
        primal = max(primal, float(max(0.0, -slack.min())) / max(1.0, np.linalg.norm(h)))
        dual = float(max(0.0, -z.min())) / max(1.0, np.linalg.norm(z) or 1.0)
        comp = abs(float(slack @ z)) / max(1.0, abs(report.objective))
    return {"stationarity": stat, "primal": primal, "dual": dual,
            "complementarity": comp}


def solve_qp(problem: QpProblem, max_iter: int = 10_000,
             feastol: float = 1e-8, gaptol: float = 1e-8) -> SolveReport:
    """Solve a convex QP. Optimal status certifies KKT residuals <= 1e-6."""
    A, b, G, h = _qp_parts(problem)
    # unit-magnitude objective: keeps regularization and tolerances at their
    # design scale; the argmin is unchanged and duals rescale linearly
    scale = max(float(abs(problem.hessian).max()) if problem.hessian.nnz else 0.0,
                float(np.abs(problem.linear).max()) if problem.n else 0.0, 1.0)

    def make_report(xv, yv, zv, sv, st, it, cert):
        obj = 0.5 * float(xv @ (problem.hessian @ xv)) \
            + float(problem.linear @ xv)
        rep = SolveReport(status=st, x=xv, objective=obj, residuals={},
                          iterations=it, y=yv, z=zv, s=sv, certificate=cert)
        rep.residuals = qp_residuals(problem, rep)
        if rep.status != "infeasible":
            ok = max(rep.residuals.values()) <= 1e-6
            rep.status = "optimal" if ok else "max_iter"
        return rep

    report = None
    for reg in (_REG, 1e-9, 1e-8):  # stiffer retries on breakdown
        x, y, z, s, status, it, cert = _solve_cone(
            problem.hessian / scale, problem.linear / scale, A, b, G, h,
            h.size, [], max_iter=max_iter, feastol=feastol,
            gaptol=gaptol / scale, reg=reg)
        cand = make_report(x, y * scale, z * scale, s, status, it, cert)
        if cand.status != "max_iter":
            report = cand
            break
        polished = _polish_qp(problem.hessian / scale, problem.linear / scale,
                              A, b, G, h, x, y, z, s)
        if polished is not None:
            xp, yp, zp = polished
            pol = make_report(xp, yp * scale, zp * scale,
                              h - G @ xp if h.size else np.zeros(0),
                              "optimal", it, cert)
            if max(pol.residuals.values()) <= max(cand.residuals.values()):
                cand = pol
        if report is None or max(cand.residuals.values()) < \
                max(report.residuals.values()):
            report = cand
        if report.status == "optimal":
            break
    if report.status == "max_iter" and report.residuals["primal"] > 1e-6:
        cert = _phase1_certificate(A, b, G, h, h.size, [])
        if cert is not None:
            report.status = "infeasible"
            report.certificate = cert
    return report


def _socp_to_cone_form(p: SocpProblem):
    n = p.n
    A, b = (p.a_eq, p.b_eq) if p.a_eq is not None else _empty(n)
    G_rows = []
    h_rows = []
    l = 0
    if p.a_ie is not None:
        G_rows.append(p.a_ie)
        h_rows.append(p.b_ie)
        l = p.a_ie.shape[0]
    socs = []
    for c in p.cones:
        C, d = c.rows, c.offset.copy()
        if c.kind == "rotated":
            # (x1, x2, rest) in Qr  <=>  ((x1+x2)/sqrt2, (x1-x2)/sqrt2, rest) in Q
            C = sp.csc_matrix(C, copy=True).tolil()
            r0 = C[0, :].toarray().ravel()
            r1 = C[1, :].toarray().ravel()
            C[0, :] = (r0 + r1) / _SQRT2
            C[1, :] = (r0 - r1) / _SQRT2
            d0, d1 = d[0], d[1]
            d[0], d[1] = (d0 + d1) / _SQRT2, (d0 - d1) / _SQRT2
            C = C.tocsc()
        G_rows.append(-C)
        h_rows.append(d)
        socs.append(C.shape[0])
    G = sp.vstack(G_rows, format="csc") if G_rows else _empty(n)[0]
    h = np.concatenate(h_rows) if h_rows else np.zeros(0)
    return A, b, G, h, l, socs


def socp_residuals(problem: SocpProblem, report: SolveReport) -> dict:
    """KKT residuals of a reported SOCP point, recomputed from scratch."""
    A, b, G, h, l, socs = _socp_to_cone_form(problem)
    x, y, z = report.x, report.y, report.z
    rx = problem.objective.copy()
    terms = [np.linalg.norm(problem.objective)]
    if b.size:
        aty = A.T @ y
        rx = rx + aty
        terms.append(np.linalg.norm(aty))
    if h.size:
        gtz = G.T @ z
        rx = rx + gtz
        terms.append(np.linalg.norm(gtz))
    stat = float(np.linalg.norm(rx)) / max(1.0, *terms)
    primal = 0.0
    if b.size:
        primal = max(primal, float(np.abs(A @ x - b).max()) / max(1.0, np.linalg.norm(b)))
    if problem.a_ie is not None:
        viol = problem.a_ie @ x - problem.b_ie
        primal = max(primal, float(max(0.0, viol.max())) / max(1.0, np.linalg.norm(problem.b_ie)))
    for c in problem.cones:
        primal = max(primal, c.violation(c.value(x)))
    soc_sl = _cone_slices(l, socs)
    dual = float(max(0.0, -_min_eig(z, l, soc_sl))) if h.size else 0.0
    s = h - G @ x if h.size else np.zeros(0)
    comp = abs(float(s @ z)) / max(1.0, abs(report.objective))
    return {"stationarity": stat, "primal": primal, "dual": dual,
            "complementarity": comp}


def solve_socp(problem: SocpProblem, max_iter: int = 10_000,
               feastol: float = 1e-8, gaptol: float = 1e-8) -> SolveReport:
    """Solve an SOCP. Optimal status certifies KKT residuals <= 1e-6."""
    A, b, G, h, l, socs = _socp_to_cone_form(problem)
    P = sp.csc_matrix((problem.n, problem.n))
    report = None
    for reg in (_REG, 1e-9, 1e-8):  # stiffer retries on breakdown
        x, y, z, s, status, it, cert = _solve_cone(
            P, problem.objective, A, b, G, h, l, socs,
            max_iter=max_iter, feastol=feastol, gaptol=gaptol, reg=reg)
        obj = float(problem.objective @ x)
        cand = SolveReport(status=status, x=x, objective=obj, residuals={},
                           iterations=it, y=y, z=z, s=s, certificate=cert)
        cand.residuals = socp_residuals(problem, cand)
        if cand.status != "infeasible":
            ok = max(cand.residuals.values()) <= 1e-6
            cand.status = "optimal" if ok else "max_iter"
        if cand.status != "max_iter":
            report = cand
            break
        if report is None or max(cand.residuals.values()) < \
                max(report.residuals.values()):
            report = cand
    if report.status == "max_iter" and report.residuals["primal"] > 1e-6:
        cert = _phase1_certificate(A, b, G, h, l, socs)
        if cert is not None:
            report.status = "infeasible"
            report.certificate = cert
    return report
