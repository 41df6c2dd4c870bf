"""Quadratic programs over the capped simplex {pi >= 0, sum(pi) <= cap}.

Two exact solvers live here. :func:`solve_qp` is a primal active-set method
for a general PSD ``Q``. :class:`HamiltonianQP` handles the structured case
``Q = alpha * cov``, ``c = beta * excess`` that appears at every collocation
node and every simulated path; there the KKT point of each face of the
feasible set is affine in ``-beta / alpha``, so the faces are enumerated once
and many problems are solved with array operations.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import QPConvergenceError

MAX_ASSETS = 64
KKT_TOL = 1e-7
FEAS_TOL = 1e-9


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    CLAMPED_CURVATURE = "ClampedCurvature"


@dataclass(frozen=True, eq=False)
class QpProblem:
    """minimize 0.5 pi'Q pi + c'pi  subject to  pi >= 0, sum(pi) <= cap."""

    quadratic: np.ndarray
    linear: np.ndarray
    cap: float
    clamped: bool = False

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.quadratic, dtype=float))
        c = np.atleast_1d(np.asarray(self.linear, dtype=float))
        m = c.shape[0]
        if Q.shape != (m, m):
            raise ValueError(f"quadratic term must be {m}x{m}, got {Q.shape}")
        if m > MAX_ASSETS:
            raise ValueError(f"at most {MAX_ASSETS} assets supported")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(c)) and np.isfinite(self.cap)):
            raise ValueError("QP inputs must be finite")
        if self.cap < 0:
            raise ValueError("cap must be non-negative")
        scale = max(np.abs(Q).max(), 1e-300)
        if np.abs(Q - Q.T).max() > 1e-12 * scale:
            raise ValueError("quadratic term must be symmetric")
        object.__setattr__(self, "quadratic", 0.5 * (Q + Q.T))
        object.__setattr__(self, "linear", c)
        object.__setattr__(self, "cap", float(self.cap))

    @property
    def size(self) -> int:
        return self.linear.shape[0]

    def objective(self, pi) -> float:
        pi = np.asarray(pi, dtype=float)
        return float(0.5 * pi @ self.quadratic @ pi + self.linear @ pi)


@dataclass(frozen=True, eq=False)
class QpSolution:
    weights: np.ndarray
    objective: float
    status: Status = Status.OPTIMAL
    bound_multipliers: np.ndarray = field(default=None)
    sum_multiplier: float = 0.0
    iterations: int = 0


def kkt_residuals(problem: QpProblem, sol: QpSolution) -> dict:
    """Stationarity, primal feasibility and complementarity, each scaled by 1 + |c|_inf.

    Multipliers are re-derived from the weights when the solution does not carry them.
    """
    pi = sol.weights
    g = problem.quadratic @ pi + problem.linear
    mu = sol.bound_multipliers
    lam = sol.sum_multiplier
    if mu is None:
        mu, lam = _recover_multipliers(problem, pi)
    scale = 1.0 + np.abs(problem.linear).max(initial=0.0)
    stationarity = np.abs(g - mu + lam).max(initial=0.0)
    primal = max(0.0, -pi.min(initial=0.0), pi.sum() - problem.cap)
    slack = problem.cap - pi.sum()
    comp = max(np.abs(pi * mu).max(initial=0.0), abs(lam * slack))
    dual = max(0.0, -mu.min(initial=0.0), -lam)
    return {
        "stationarity": stationarity / scale,
        "primal": primal,
        "complementarity": comp / scale,
        "dual": dual / scale,
    }


def _recover_multipliers(problem: QpProblem, pi):
    g = problem.quadratic @ pi + problem.linear
    tol = 1e-9 * max(1.0, problem.cap)
    free = pi > tol
    sum_active = problem.cap - pi.sum() <= tol
    lam = 0.0
    if sum_active:
        lam = float(-g[free].mean()) if free.any() else max(0.0, float(-g.min()))
        lam = max(lam, 0.0)
    mu = g + lam
    mu[free] = 0.0
    return mu, lam


def solve_qp(problem: QpProblem, max_changes: int = None) -> QpSolution:
    """Primal active-set method started from the origin.

    Constraints are indexed 0..m-1 for the bounds pi_i >= 0 and m for the
    sum constraint.  The feasible set is compact, so directions of zero
    curvature are followed until a constraint blocks.  Ties resolve to the
    origin because the iteration starts there with every bound active.
    """
    Q, c, cap = problem.quadratic, problem.linear, problem.cap
    m = problem.size
    if cap == 0.0:
        return QpSolution(np.zeros(m), 0.0, _status(problem), np.array(c, dtype=float), 0.0)
    if max_changes is None:
        max_changes = 10 * 2 ** min(m, 20)

    # constraint normals a_k with a_k' x >= b_k
    A = np.vstack([np.eye(m), -np.ones((1, m))])
    b = np.concatenate([np.zeros(m), [-cap]])
    x = np.zeros(m)
    work = list(range(m))
    scale = 1.0 + np.abs(c).max() + np.abs(Q).max() * cap
    tol = 1e-13 * scale

    for it in range(max_changes):
        g = Q @ x + c
        Aw = A[work]
        Z = scipy.linalg.null_space(Aw) if work else np.eye(m)
        p = np.zeros(m)
        if Z.shape[1] > 0:
            H = Z.T @ Q @ Z
            z = Z.T @ g
            evals, evecs = np.linalg.eigh(H)
            pos = evals > 1e-12 * max(1.0, np.abs(evals).max())
            zc = evecs.T @ z
            if np.any(np.abs(zc[~pos]) > tol):
                # descent along a direction of zero curvature: unbounded until blocked
                p = -Z @ (evecs[:, ~pos] @ zc[~pos])
                p *= 10.0 * (cap + np.abs(x).sum()) / max(np.abs(p).sum(), 1e-300)
            else:
                p = -Z @ (evecs[:, pos] @ (zc[pos] / evals[pos]))

        if np.abs(p).max(initial=0.0) <= 1e-12 * max(1.0, cap):
            if work:
                lam_w, *_ = np.linalg.lstsq(Aw.T, g, rcond=None)
            else:
                lam_w = np.zeros(0)
            if lam_w.size == 0 or lam_w.min() >= -tol:
                mu = np.zeros(m)
                lam = 0.0
                for k, val in zip(work, lam_w):
                    if k == m:
                        lam = max(float(val), 0.0)
                    else:
                        mu[k] = max(float(val), 0.0)
                x = np.maximum(x, 0.0)
                return QpSolution(x, problem.objective(x), _status(problem), mu, lam, it)
            work.pop(int(np.argmin(lam_w)))
            continue

        step, block = 1.0, None
        for k in range(m + 1):
            if k in work:
                continue
            ap = A[k] @ p
            if ap < -1e-15 * np.abs(p).max():
                s = (b[k] - A[k] @ x) / ap
                if s < step:
                    step, block = max(s, 0.0), k
        x = x + step * p
        if block is not None:
            work.append(block)
            work.sort()
    raise QPConvergenceError(f"active-set iteration cap {max_changes} exceeded")


def _status(problem):
    return Status.CLAMPED_CURVATURE if problem.clamped else Status.OPTIMAL


def brute_force_qp(problem: QpProblem, grid_step: float) -> QpSolution:
    """Exhaustive minimization over the lattice {pi_i in {0, d, 2d, ...}, sum(pi) <= cap}.

    Test oracle; limited to three assets.
    """
    m = problem.size
    if m > 3:
        raise ValueError("brute force supports at most 3 assets")
    if grid_step <= 0:
        raise ValueError("grid step must be positive")
    n = int(np.floor(problem.cap / grid_step + 1e-9))
    levels = np.arange(n + 1) * grid_step
    Q, c = problem.quadratic, problem.linear
    best_val, best = np.inf, np.zeros(m)
    if m == 1:
        vals = 0.5 * Q[0, 0] * levels**2 + c[0] * levels
        i = int(np.argmin(vals))
        return QpSolution(np.array([levels[i]]), float(vals[i]), _status(problem))
    # loop over the first coordinate; vectorize the rest
    for a in levels:
        rest = problem.cap - a + 1e-12
        k = int(np.floor(rest / grid_step + 1e-9))
        lv = levels[: k + 1]
        if m == 2:
            pts = np.column_stack([np.full_like(lv, a), lv])
        else:
            p2, p3 = np.meshgrid(lv, lv, indexing="ij")
            mask = p2 + p3 <= rest
            pts = np.column_stack([np.full(mask.sum(), a), p2[mask], p3[mask]])
        vals = 0.5 * np.einsum("ij,jk,ik->i", pts, Q, pts) + pts @ c
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best = float(vals[i]), pts[i].copy()
    return QpSolution(best, best_val, _status(problem))


class HamiltonianQP:
    """Batched exact solver for min 0.5*alpha*pi'S pi + beta*e'pi over the capped simplex.

    ``alpha >= 0`` is the (clamped) wealth-scaled curvature and ``beta`` the
    wealth-scaled slope.  With ``alpha > 0`` and ``beta < 0`` the minimizer
    depends only on ``s = -beta / alpha``; each candidate face yields an
    affine KKT point in ``s`` and exactly one face passes the primal and
    dual sign checks (S positive definite).  Rows where no face passes fall
    back to :func:`solve_qp`.
    """

    def __init__(self, covariance, excess, cap):
        self.cov = np.asarray(covariance, dtype=float)
        self.excess = np.asarray(excess, dtype=float)
        self.cap = float(cap)
        m = self.excess.shape[0]
        self.m = m
        faces = []
        ones = np.ones(m)
        for size in range(1, m + 1):
            for free in itertools.combinations(range(m), size):
                F = list(free)
                S_ff = self.cov[np.ix_(F, F)]
                if np.linalg.cond(S_ff) > 1e12:
                    continue
                inv_e = np.linalg.solve(S_ff, self.excess[F])
                inv_1 = np.linalg.solve(S_ff, ones[: len(F)])
                # pi_F(s) = s*u + w ; lambda(s) = s*lu + lw ; mu(s) = s*mu_u + mu_w
                for with_sum in (False, True):
                    u = np.zeros(m)
                    w = np.zeros(m)
                    if with_sum:
                        denom = inv_1.sum()
                        lu = inv_e.sum() / denom
                        lw = -self.cap / denom
                        u[F] = inv_e - lu * inv_1
                        w[F] = -lw * inv_1
                    else:
                        lu = lw = 0.0
                        u[F] = inv_e
                    mu_u = self.cov @ u - self.excess + lu
                    mu_w = self.cov @ w + lw
                    mu_u[F] = 0.0
                    mu_w[F] = 0.0
                    faces.append((u, w, lu, lw, mu_u, mu_w, with_sum, F))
        self._U = np.array([f[0] for f in faces]).reshape(-1, m)
        self._W = np.array([f[1] for f in faces]).reshape(-1, m)
        self._LU = np.array([f[2] for f in faces])
        self._LW = np.array([f[3] for f in faces])
        self._MU = np.array([f[4] for f in faces]).reshape(-1, m)
        self._MW = np.array([f[5] for f in faces]).reshape(-1, m)
        self._sum = np.array([f[6] for f in faces], dtype=bool)
        self._free = np.zeros((len(faces), m), dtype=bool)
        for i, f in enumerate(faces):
            self._free[i, f[7]] = True
        self._best_asset = int(np.argmax(self.excess))
        self._build_intervals()

    def _build_intervals(self):
        """Range of s on which each face's KKT point is primal and dual feasible.

        Every sign condition is affine in s, so each face owns an interval
        and the intervals tile (0, inf).
        """
        spans = []
        for f in range(len(self._U)):
            conds = []  # pairs (a, b) meaning a*s + b >= 0
            free = self._free[f]
            conds += [(self._U[f, i], self._W[f, i]) for i in np.flatnonzero(free)]
            if self._sum[f]:
                conds.append((self._LU[f], self._LW[f]))
            else:
                conds.append((-self._U[f].sum(), self.cap - self._W[f].sum()))
            conds += [(self._MU[f, i], self._MW[f, i]) for i in np.flatnonzero(~free)]
            lo, hi = 0.0, np.inf
            for a, b in conds:
                if a > 0:
                    lo = max(lo, -b / a)
                elif a < 0:
                    hi = min(hi, -b / a)
                elif b < -1e-12:
                    hi = -np.inf
            if hi > lo:
                spans.append((lo, hi, f))
        spans.sort()
        self._span_lo = np.array([sp[0] for sp in spans])
        self._span_hi = np.array([sp[1] for sp in spans])
        self._span_face = np.array([sp[2] for sp in spans], dtype=int)

    def problem(self, alpha, beta, clamped=False) -> QpProblem:
        return QpProblem(alpha * self.cov, beta * self.excess, self.cap, clamped)

    def solve(self, alpha, beta):
        """Minimizers (n, m) and objective values (n,) for arrays alpha, beta."""
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        n, m = alpha.shape[0], self.m
        pi = np.zeros((n, m))
        if self.cap == 0.0:
            return pi, np.zeros(n)
        if np.any(alpha < 0):
            raise ValueError("curvature must be clamped to be non-negative")

        linear = (alpha == 0.0) & (beta < 0.0)
        pi[linear, self._best_asset] = self.cap

        quad = np.flatnonzero((alpha > 0.0) & (beta < 0.0))
        if quad.size:
            s = -beta[quad] / alpha[quad]
            missing = np.ones(quad.size, dtype=bool)
            if self._span_face.size:
                k = np.clip(np.searchsorted(self._span_lo, s, side="right") - 1, 0, None)
                inside = (s >= self._span_lo[k]) & (s <= self._span_hi[k] * (1 + 1e-12))
                face = self._span_face[k[inside]]
                pi[quad[inside]] = np.clip(s[inside, None] * self._U[face] + self._W[face], 0.0, None)
                missing = ~inside
            if missing.any():
                rows = quad[missing]
                pi[rows] = self._enumerate(s[missing], alpha[rows], beta[rows])

        obj = 0.5 * alpha * np.einsum("ni,ij,nj->n", pi, self.cov, pi) + beta * (pi @ self.excess)
        return pi, obj

    def _enumerate(self, s, alpha, beta):
        """Check every face's KKT point; rows with no passing face go to solve_qp."""
        out = np.zeros((s.size, self.m))
        found = np.zeros(s.size, dtype=bool)
        if len(self._U):
            cand = s[:, None, None] * self._U[None] + self._W[None]
            lam = s[:, None] * self._LU[None] + self._LW[None]
            mu = s[:, None, None] * self._MU[None] + self._MW[None]
            tol = 1e-9 * (1.0 + s[:, None] * np.abs(self.excess).max())
            ok = cand.min(axis=2) >= -1e-12 * (1.0 + self.cap)
            ok &= cand.sum(axis=2) <= self.cap * (1.0 + 1e-12) + 1e-12
            ok &= lam >= -tol
            ok &= mu.min(axis=2) >= -tol
            quad_obj = 0.5 * np.einsum("nfi,ij,nfj->nf", cand, self.cov, cand)
            obj = np.where(ok, quad_obj - s[:, None] * (cand @ self.excess), np.inf)
            pick = np.argmin(obj, axis=1)
            rows = np.arange(s.size)
            found = np.isfinite(obj[rows, pick])
            out[found] = np.clip(cand[rows, pick][found], 0.0, None)
        for i in np.flatnonzero(~found):
            out[i] = solve_qp(self.problem(alpha[i], beta[i])).weights
        return out
