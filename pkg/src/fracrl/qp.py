"""Dense convex QP solver: quadratic objective, linear equalities, box bounds.

    minimize    0.5 x' P x + q' x
    subject to  Aeq x = beq,   lower <= x <= upper

Solved by operator splitting (ADMM) on the stacked constraint l <= C x <= u
with C = [Aeq; I].  The problem is Ruiz-equilibrated first so badly mixed
variable scales do not stall convergence; termination is still decided on the
residuals of the original, unscaled problem.  The linear system
(P + sigma I + C' diag(rho) C) is factorized once and reused across
iterations; the factorization refreshes only when residual balancing moves
rho by a large factor.  Everything is deterministic: fixed settings and
inputs give bit-identical iterates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve


@dataclass(frozen=True)
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    Aeq: np.ndarray | None = None
    beq: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        q = np.asarray(self.q, dtype=float).ravel()
        n = q.shape[0]
        if P.shape != (n, n):
            raise ValueError(f"P must be ({n}, {n}), got {P.shape}")
        scale = max(1.0, float(np.max(np.abs(P))))
        if np.max(np.abs(P - P.T)) > 1e-10 * scale:
            raise ValueError("P must be symmetric")
        Aeq = self.Aeq
        beq = self.beq
        if (Aeq is None) != (beq is None):
            raise ValueError("Aeq and beq must be given together")
        if Aeq is not None:
            Aeq = np.asarray(Aeq, dtype=float)
            beq = np.asarray(beq, dtype=float).ravel()
            if Aeq.ndim != 2 or Aeq.shape[1] != n or Aeq.shape[0] != beq.shape[0]:
                raise ValueError("equality constraint dimensions are inconsistent")
        lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()
        if lower.shape != (n,) or upper.shape != (n,):
            raise ValueError("bounds must match the variable count")
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        for name, val in (("P", P), ("q", q), ("Aeq", Aeq), ("beq", beq),
                          ("lower", lower), ("upper", upper)):
            if val is not None:
                val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def n_eq(self) -> int:
        return 0 if self.Aeq is None else self.Aeq.shape[0]


@dataclass(frozen=True)
class QpSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 20000
    rho: float = 0.1
    sigma: float = 1e-8
    over_relaxation: float = 1.6
    check_every: int = 25
    adapt_every: int = 100
    eps_infeasible: float = 1e-9
    ruiz_iters: int = 10


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    status: str  # optimal | max-iterations | infeasible
    iterations: int
    primal_residual: float
    dual_residual: float
    eq_multipliers: np.ndarray | None = None
    bound_multipliers: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class _SplittingState:
    """Workspace owning the equilibration and the cached factorization.

    Reusable across solves that share P and Aeq (only q, beq and bounds may
    change).  Equality rows carry a 1000x stiffer penalty than box rows,
    which is what makes the splitting converge quickly on equality-heavy
    programs.
    """

    EQ_STIFFNESS = 1e3

    def __init__(self, problem: QpProblem, settings: QpSettings):
        self.settings = settings
        n = problem.n
        m_eq = problem.n_eq
        if m_eq:
            C = np.vstack([problem.Aeq, np.eye(n)])
        else:
            C = np.eye(n)
        m = C.shape[0]
        self.n, self.m, self.m_eq = n, m, m_eq

        # Ruiz equilibration of the stacked KKT block [P C'; C 0] plus cost
        # normalization; D scales variables, E scales constraint rows
        D = np.ones(n)
        E = np.ones(m)
        c = 1.0
        Ps = problem.P.copy()
        Cs = C.copy()
        qs = problem.q.copy()
        for _ in range(settings.ruiz_iters):
            col_norm = np.maximum(
                np.max(np.abs(Ps), axis=0, initial=0.0),
                np.max(np.abs(Cs), axis=0, initial=0.0),
            )
            row_norm = np.max(np.abs(Cs), axis=1, initial=0.0)
            d = 1.0 / np.sqrt(np.where(col_norm > 0, col_norm, 1.0))
            e = 1.0 / np.sqrt(np.where(row_norm > 0, row_norm, 1.0))
            Ps = Ps * d[:, None] * d[None, :]
            qs = qs * d
            Cs = Cs * e[:, None] * d[None, :]
            D *= d
            E *= e
            p_cols = np.max(np.abs(Ps), axis=0, initial=0.0)
            denom = max(np.mean(p_cols), float(np.max(np.abs(qs), initial=0.0)))
            gamma_c = 1.0 / denom if denom > 0 else 1.0
            Ps *= gamma_c
            qs *= gamma_c
            c *= gamma_c

        self.D, self.E, self.c = D, E, c
        self.Ps = Ps
        self.Cs = Cs
        self.CsT = np.ascontiguousarray(Cs.T)
        row_scale = np.ones(m)
        row_scale[:m_eq] = self.EQ_STIFFNESS
        self._row_scale = row_scale
        self.rho = settings.rho
        self._factor()

    @property
    def rho_vec(self) -> np.ndarray:
        return self.rho * self._row_scale

    def _factor(self):
        M = (
            self.Ps
            + self.settings.sigma * np.eye(self.n)
            + (self.CsT * self.rho_vec) @ self.Cs
        )
        self.chol = cho_factor(M, lower=True, check_finite=False)

    def solve_kkt(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self.chol, rhs, check_finite=False)

    def maybe_rebalance(self, r_prim: float, r_dual: float) -> None:
        ratio = np.sqrt(max(r_prim, 1e-16) / max(r_dual, 1e-16))
        new_rho = float(np.clip(self.rho * ratio, 1e-6, 1e6))
        if new_rho > 2.0 * self.rho or new_rho < self.rho / 2.0:
            self.rho = new_rho
            self._factor()

    def scale_problem(self, problem: QpProblem):
        """Scaled cost vector, bounds and the scaled-row views of beq."""
        qs = self.c * self.D * problem.q
        if problem.n_eq:
            lo = np.concatenate([problem.beq, problem.lower])
            hi = np.concatenate([problem.beq, problem.upper])
        else:
            lo, hi = problem.lower, problem.upper
        return qs, self.E * lo, self.E * hi


def _unscaled_bounds(problem: QpProblem) -> tuple[np.ndarray, np.ndarray]:
    if problem.n_eq:
        return (
            np.concatenate([problem.beq, problem.lower]),
            np.concatenate([problem.beq, problem.upper]),
        )
    return problem.lower, problem.upper


def _infeasibility_certificate(ws: _SplittingState, delta_y: np.ndarray,
                               lo: np.ndarray, hi: np.ndarray, eps: float) -> bool:
    """Primal-infeasibility test on an (unscaled) dual increment direction."""
    norm = float(np.max(np.abs(delta_y)))
    if norm <= 0.0:
        return False
    v = delta_y / norm
    ctv = (ws.CsT @ (v * ws.E)) / ws.D  # rows of unscaled C' applied to v
    if np.max(np.abs(ctv)) > eps * max(1.0, norm):
        return False
    pos, neg = np.maximum(v, 0.0), np.minimum(v, 0.0)
    if np.any(pos[np.isinf(hi)] > eps) or np.any(neg[np.isinf(lo)] < -eps):
        return False
    support = float(
        np.sum(hi[np.isfinite(hi)] * pos[np.isfinite(hi)])
        + np.sum(lo[np.isfinite(lo)] * neg[np.isfinite(lo)])
    )
    return support < -eps


def solve(
    problem: QpProblem,
    settings: QpSettings | None = None,
    x0: np.ndarray | None = None,
    y0: np.ndarray | None = None,
    workspace: _SplittingState | None = None,
) -> QpSolution:
    """Solve the QP; ``x0``/``y0`` inject a primal/dual starting point.

    Passing the ``workspace`` returned by :func:`make_workspace` reuses the
    equilibration and factorization across solves whose P/Aeq are unchanged.
    """
    settings = settings or QpSettings()
    ws = workspace if workspace is not None else _SplittingState(problem, settings)
    n, m = ws.n, ws.m
    qs, lo_s, hi_s = ws.scale_problem(problem)
    lo_u, hi_u = _unscaled_bounds(problem)

    xh = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float) / ws.D
    yh = (
        np.zeros(m)
        if y0 is None
        else ws.c * np.asarray(y0, dtype=float) / ws.E
    )
    zh = np.clip(ws.Cs @ xh, lo_s, hi_s)
    alpha = settings.over_relaxation

    r_prim = np.inf
    r_dual = np.inf
    it = 0
    y_prev_check = ws.E * yh / ws.c
    while it < settings.max_iter:
        it += 1
        rho_vec = ws.rho_vec
        rhs = settings.sigma * xh - qs + ws.CsT @ (rho_vec * zh - yh)
        x_hat = ws.solve_kkt(rhs)
        z_hat = ws.Cs @ x_hat
        xh = alpha * x_hat + (1.0 - alpha) * xh
        z_relaxed = alpha * z_hat + (1.0 - alpha) * zh
        zh = np.clip(z_relaxed + yh / rho_vec, lo_s, hi_s)
        yh = yh + rho_vec * (z_relaxed - zh)

        if it % settings.check_every == 0 or it == settings.max_iter:
            # unscaled residuals decide termination
            r_prim = float(np.max(np.abs((ws.Cs @ xh - zh) / ws.E)))
            r_dual = float(
                np.max(np.abs((ws.Ps @ xh + qs + ws.CsT @ yh) / (ws.c * ws.D)))
            )
            if r_prim <= settings.eps_abs and r_dual <= settings.eps_abs:
                return _finish(ws, problem, xh, yh, "optimal", it, r_prim, r_dual)
            y_unscaled = ws.E * yh / ws.c
            delta_y = y_unscaled - y_prev_check
            if _infeasibility_certificate(ws, delta_y, lo_u, hi_u, settings.eps_infeasible):
                return _finish(ws, problem, xh, yh, "infeasible", it, r_prim, r_dual)
            y_prev_check = y_unscaled
            if it % settings.adapt_every == 0:
                ws.maybe_rebalance(r_prim, r_dual)

    return _finish(ws, problem, xh, yh, "max-iterations", it, r_prim, r_dual)


def _finish(ws, problem, xh, yh, status, iterations, r_prim, r_dual) -> QpSolution:
    x = ws.D * xh
    y = ws.E * yh / ws.c
    m_eq = problem.n_eq
    return QpSolution(
        x=x,
        status=status,
        iterations=iterations,
        primal_residual=r_prim,
        dual_residual=r_dual,
        eq_multipliers=y[:m_eq] if m_eq else np.zeros(0),
        bound_multipliers=y[m_eq:],
    )


def make_workspace(problem: QpProblem, settings: QpSettings | None = None) -> _SplittingState:
    """Pre-equilibrated, pre-factorized workspace for repeated solves with
    fixed P and Aeq."""
    return _SplittingState(problem, settings or QpSettings())
