"""Receding-horizon control of the fractional model via quadratic programming.

At time k with observed states s[0..k], the planner chooses future states
s̄[k+1..k+H] and actions a[k..k+H-1] minimizing a discounted quadratic
tracking cost subject to the fractional dynamics

    s̄[l+1] + sum_{j=1..l+1} psi(alpha, j) ∘ s̄[l+1-j] - A s̄[l] - B a[l]
        = mu + e[l],

with a sampled noise realization e.  Lag-weight terms that touch observed
history move to the right-hand side; the lag-1 block on the unknown side is
D(alpha, 1) - A because A s̄[l] is brought over from the right.  State boxes
are enforced softly through penalized slack variables so that noise
realizations cannot make the program infeasible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import FracModel, StateTrajectory
from .fractional import build_weight_table, predict_mean
from .qp import QpProblem, QpSettings, QpSolution, make_workspace, solve


@dataclass(frozen=True)
class QuadraticCost:
    """Tracking cost sum_l gamma^(l-k) [(s-ref)' Q (s-ref) + a' R a]."""

    reference: np.ndarray
    state_weight: np.ndarray
    action_weight: np.ndarray

    def __post_init__(self):
        ref = np.atleast_1d(np.asarray(self.reference, dtype=float))
        Q = np.atleast_2d(np.asarray(self.state_weight, dtype=float))
        R = np.atleast_2d(np.asarray(self.action_weight, dtype=float))
        n = ref.shape[0]
        if Q.shape != (n, n):
            raise ValueError("state weight must be n x n")
        for name, W in (("state", Q), ("action", R)):
            if not np.allclose(W, W.T, atol=1e-10):
                raise ValueError(f"{name} weight must be symmetric")
            if np.linalg.eigvalsh(0.5 * (W + W.T)).min() < -1e-10:
                raise ValueError(f"{name} weight must be positive semidefinite")
        for name, val in (("reference", ref), ("state_weight", Q), ("action_weight", R)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)


@dataclass(frozen=True)
class MpcConfig:
    horizon: int
    gamma: float
    s_min: np.ndarray
    s_max: np.ndarray
    cost: QuadraticCost
    action_min: np.ndarray | None = None
    action_max: np.ndarray | None = None
    soft_state_bounds: bool = True
    state_bound_penalty: float = 1e4

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must lie in [0, 1]")
        s_min = np.atleast_1d(np.asarray(self.s_min, dtype=float))
        s_max = np.atleast_1d(np.asarray(self.s_max, dtype=float))
        if s_min.shape != s_max.shape or np.any(s_min > s_max):
            raise ValueError("state bounds must satisfy s_min <= s_max")
        object.__setattr__(self, "s_min", s_min)
        object.__setattr__(self, "s_max", s_max)
        for name in ("action_min", "action_max"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.atleast_1d(np.asarray(v, dtype=float)))

    @property
    def n(self) -> int:
        return self.s_min.shape[0]

    def action_bounds(self, p: int) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(p, -np.inf) if self.action_min is None else self.action_min
        hi = np.full(p, np.inf) if self.action_max is None else self.action_max
        return lo, hi


@dataclass(frozen=True)
class VariableLayout:
    """Index map for the stacked decision vector."""

    n: int
    p: int
    horizon: int
    k: int
    eliminated: bool
    n_vars: int

    def state_slice(self, step: int) -> slice:
        """Columns of planned state s̄[k+1+step] (step = 0..H-1)."""
        H, n = self.horizon, self.n
        if not 0 <= step < H:
            raise IndexError("step out of horizon")
        if self.eliminated:
            return slice(step * n, (step + 1) * n)
        # explicit layout: [s̄[k+H], ..., s̄[0], a[k+H-1], ..., a[k]]
        m = H - 1 - step
        return slice(m * n, (m + 1) * n)

    def past_state_slice(self, t: int) -> slice:
        if self.eliminated:
            raise ValueError("past states are eliminated in this layout")
        m = self.k + self.horizon - t
        return slice(m * self.n, (m + 1) * self.n)

    def action_slice(self, step: int) -> slice:
        H, n, p = self.horizon, self.n, self.p
        if not 0 <= step < H:
            raise IndexError("step out of horizon")
        if self.eliminated:
            return slice(H * n + step * p, H * n + (step + 1) * p)
        base = (self.k + H + 1) * n
        j = H - 1 - step
        return slice(base + j * p, base + (j + 1) * p)


@dataclass(frozen=True)
class ConstraintSystem:
    Aeq: np.ndarray
    beq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    layout: VariableLayout


def _lag_blocks(model: FracModel, table, r: int) -> dict[int, np.ndarray]:
    """Coefficient blocks on unknown future states for dynamics row r."""
    n = model.n
    blocks = {r: np.eye(n)}
    for c in range(r - 1, -1, -1):
        j = r - c
        D = np.diag(table.weights[:, j])
        blocks[c] = D - model.A if j == 1 else D
    return blocks


def _history_rhs(model: FracModel, table, states: np.ndarray, r: int) -> np.ndarray:
    """Sum of lag-weight terms hitting observed states, for dynamics row r."""
    k = states.shape[0] - 1
    out = np.empty(model.n)
    for i in range(model.n):
        w = table.weights[i, r + 1 : r + k + 2]
        out[i] = np.dot(w[::-1], states[:, i])
    return out


def assemble_constraints(
    model: FracModel,
    history,
    horizon: int,
    noise: np.ndarray,
    s_min: np.ndarray | None = None,
    s_max: np.ndarray | None = None,
    action_min: np.ndarray | None = None,
    action_max: np.ndarray | None = None,
    eliminate_history: bool = True,
) -> ConstraintSystem:
    """Equality system and variable boxes for the H-step planning problem.

    With ``eliminate_history`` (default) the decision vector is
    [s̄[k+1], ..., s̄[k+H], a[k], ..., a[k+H-1]] and observed states are
    substituted into the right-hand side.  Otherwise the full stacked vector
    [s̄[k+H], ..., s̄[0], a[k+H-1], ..., a[k]] is used and the history is
    pinned by explicit equality rows; this form exists for fidelity testing
    and uses hard state boxes.
    """
    states = history.states if isinstance(history, StateTrajectory) else np.atleast_2d(
        np.asarray(history, dtype=float)
    )
    n, p, H = model.n, model.p, int(horizon)
    if H < 1:
        raise ValueError("horizon must be at least 1")
    if states.shape[1] != n:
        raise ValueError("history dimension does not match the model")
    noise = np.asarray(noise, dtype=float).reshape(H, n)
    k = states.shape[0] - 1
    table = build_weight_table(model.alphas, k + H + 1)
    s_lo = np.full(n, -np.inf) if s_min is None else np.asarray(s_min, dtype=float)
    s_hi = np.full(n, np.inf) if s_max is None else np.asarray(s_max, dtype=float)
    a_lo = np.full(p, -np.inf) if action_min is None else np.asarray(action_min, dtype=float)
    a_hi = np.full(p, np.inf) if action_max is None else np.asarray(action_max, dtype=float)

    if eliminate_history:
        n_vars = H * (n + p)
        layout = VariableLayout(n=n, p=p, horizon=H, k=k, eliminated=True, n_vars=n_vars)
        Aeq = np.zeros((H * n, n_vars))
        beq = np.zeros(H * n)
        for r in range(H):
            rows = slice(r * n, (r + 1) * n)
            for c, block in _lag_blocks(model, table, r).items():
                Aeq[rows, layout.state_slice(c)] = block
            Aeq[rows, layout.action_slice(r)] = -model.B
            rhs = model.mu + noise[r] - _history_rhs(model, table, states, r)
            if r == 0:
                rhs = rhs + model.A @ states[k]
            beq[rows] = rhs
        lower = np.concatenate([np.tile(s_lo, H), np.tile(a_lo, H)])
        upper = np.concatenate([np.tile(s_hi, H), np.tile(a_hi, H)])
        return ConstraintSystem(Aeq=Aeq, beq=beq, lower=lower, upper=upper, layout=layout)

    # explicit form with history-pinning rows
    n_states = (k + H + 1) * n
    n_vars = n_states + H * p
    layout = VariableLayout(n=n, p=p, horizon=H, k=k, eliminated=False, n_vars=n_vars)
    Aeq = np.zeros(((H + k + 1) * n, n_vars))
    beq = np.zeros((H + k + 1) * n)
    for r in range(H):
        rows = slice(r * n, (r + 1) * n)
        Aeq[rows, layout.state_slice(r)] = np.eye(n)
        for j in range(1, k + r + 2):
            t = k + r + 1 - j  # absolute time of this lag
            D = np.diag(table.weights[:, j])
            block = D - model.A if j == 1 else D
            col = layout.state_slice(t - k - 1) if t > k else layout.past_state_slice(t)
            Aeq[rows, col] += block
        Aeq[rows, layout.action_slice(r)] = -model.B
        beq[rows] = model.mu + noise[r]
    for t in range(k + 1):
        rows = slice((H + t) * n, (H + t + 1) * n)
        Aeq[rows, layout.past_state_slice(t)] = np.eye(n)
        beq[rows] = states[t]
    lower = np.full(n_vars, -np.inf)
    upper = np.full(n_vars, np.inf)
    for r in range(H):
        lower[layout.state_slice(r)] = s_lo
        upper[layout.state_slice(r)] = s_hi
        lower[layout.action_slice(r)] = a_lo
        upper[layout.action_slice(r)] = a_hi
    return ConstraintSystem(Aeq=Aeq, beq=beq, lower=lower, upper=upper, layout=layout)


@dataclass(frozen=True)
class MpcStep:
    action: np.ndarray
    planned_states: np.ndarray
    planned_actions: np.ndarray
    objective: float
    noise: np.ndarray
    qp_status: str
    qp_iterations: int
    qp_failed: bool
    bound_violation: float


def _tracking_objective(config: MpcConfig, layout: VariableLayout, n_vars: int):
    """P and q of 0.5 x'Px + q'x matching the discounted tracking cost."""
    P = np.zeros((n_vars, n_vars))
    q = np.zeros(n_vars)
    Q, R, ref = config.cost.state_weight, config.cost.action_weight, config.cost.reference
    for r in range(layout.horizon):
        g = config.gamma**r
        ss, sa = layout.state_slice(r), layout.action_slice(r)
        P[ss, ss] = 2.0 * g * Q
        P[sa, sa] = 2.0 * g * R
        q[ss] = -2.0 * g * (Q @ ref)
    return P, q


def action_impulse_response(model: FracModel, horizon: int) -> np.ndarray:
    """State response over the horizon to a unit action at the first step.

    The within-horizon dynamics are time invariant, so the condensed map from
    actions to planned states is block Toeplitz in this response.  Returns an
    (H, n, p) array.
    """
    n, p, H = model.n, model.p, horizon
    table = build_weight_table(model.alphas, H + 1)
    resp = np.zeros((H, n, p))
    resp[0] = model.B
    for r in range(1, H):
        acc = model.A @ resp[r - 1]
        for j in range(1, r + 1):
            acc -= table.weights[:, j][:, None] * resp[r - j]
        resp[r] = acc
    return resp


class MpcController:
    """Planner bound to one (model, config) pair.

    Internally the program is condensed: planned states are an affine
    function s = G a + h of the actions, with G built once per model from the
    action impulse response and h refreshed each step from the observed
    history and the sampled noise.  The resulting QP has only box
    constraints (actions, plus tether boxes for soft state bounds), which
    the splitting solver handles robustly even when the fitted dynamics are
    wildly drifting; an equality-row formulation of the same program stalls
    it.  Hard state bounds fall back to the explicit equality formulation.
    """

    def __init__(
        self,
        model: FracModel,
        config: MpcConfig,
        solver_settings: QpSettings | None = None,
    ):
        if config.n != model.n:
            raise ValueError("config state bounds do not match model dimension")
        if not config.soft_state_bounds and np.any(
            np.isfinite(config.s_min) | np.isfinite(config.s_max)
        ):
            raise ValueError(
                "hard state bounds are not supported by the condensed planner; "
                "use mpc_action_hard_bounds or soft_state_bounds=True"
            )
        self.model = model
        self.config = config
        self.settings = solver_settings or QpSettings(eps_abs=1e-7, check_every=10)
        n, p, H = model.n, model.p, config.horizon
        self._noise_chol = _psd_factor(model.Sigma)

        imp = action_impulse_response(model, H)
        G = np.zeros((H * n, H * p))
        for r in range(H):
            for m in range(r + 1):
                G[r * n : (r + 1) * n, m * p : (m + 1) * p] = imp[r - m]
        self._G = G

        gammas = config.gamma ** np.arange(H)
        Wt = np.zeros((H * n, H * n))
        Rb = np.zeros((H * p, H * p))
        for r in range(H):
            Wt[r * n : (r + 1) * n, r * n : (r + 1) * n] = gammas[r] * config.cost.state_weight
            Rb[r * p : (r + 1) * p, r * p : (r + 1) * p] = gammas[r] * config.cost.action_weight
        self._ref_stack = np.tile(config.cost.reference, H)
        self._GtWt = G.T @ Wt

        self._soft_dims = [
            i
            for i in range(n)
            if np.isfinite(config.s_min[i]) or np.isfinite(config.s_max[i])
        ]
        d = len(self._soft_dims)
        nb = H * d
        na = H * p
        w = config.state_bound_penalty
        if d:
            sel = np.zeros((nb, H * n))
            for r in range(H):
                for j, i in enumerate(self._soft_dims):
                    sel[r * d + j, r * n + i] = 1.0
            M = sel @ G
            self._sel = sel
            P = np.zeros((na + nb, na + nb))
            P[:na, :na] = 2.0 * (G.T @ Wt @ G + Rb + w * (M.T @ M))
            P[:na, na:] = -2.0 * w * M.T
            P[na:, :na] = -2.0 * w * M
            P[na:, na:] = 2.0 * w * np.eye(nb)
            self._MT = M.T
        else:
            self._sel = None
            P = 2.0 * (G.T @ Wt @ G + Rb)
        a_lo, a_hi = config.action_bounds(p)
        lower = np.concatenate([np.tile(a_lo, H), np.empty(nb)])
        upper = np.concatenate([np.tile(a_hi, H), np.empty(nb)])
        for r in range(H):
            for j, i in enumerate(self._soft_dims):
                lower[na + r * d + j] = config.s_min[i]
                upper[na + r * d + j] = config.s_max[i]

        self._obj_scale = max(1.0, float(np.max(np.abs(P))))
        self._P = P / self._obj_scale
        self._lower, self._upper = lower, upper
        self._w = w
        self._na, self._nb, self._d = na, nb, d
        problem = QpProblem(
            P=self._P, q=np.zeros(na + nb), lower=lower, upper=upper
        )
        self._workspace = make_workspace(problem, self.settings)
        self._prev: QpSolution | None = None
        self._x_shift = self._shift_map(p, H, d)

    @staticmethod
    def _shift_map(p: int, H: int, d: int) -> np.ndarray:
        """Index map advancing a stored solution by one stage for warm
        starts: stage r takes the old stage r+1, the last stage repeats."""

        def block(offset: int, width: int) -> np.ndarray:
            idx = np.empty(H * width, dtype=int)
            for r in range(H):
                src = min(r + 1, H - 1)
                idx[r * width : (r + 1) * width] = offset + np.arange(
                    src * width, (src + 1) * width
                )
            return idx

        parts = [block(0, p)]
        if d:
            parts.append(block(H * p, d))
        return np.concatenate(parts)

    def _sample_noise(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((self.config.horizon, self.model.n))
        return z @ self._noise_chol.T

    def step(self, history, rng: np.random.Generator | None = None,
             noise: np.ndarray | None = None) -> MpcStep:
        model, config = self.model, self.config
        n, p, H = model.n, model.p, config.horizon
        states = history.states if isinstance(history, StateTrajectory) else np.atleast_2d(
            np.asarray(history, dtype=float)
        )
        if noise is None:
            noise = self._sample_noise(rng or np.random.default_rng())
        noise = np.asarray(noise, dtype=float).reshape(H, n)

        # zero-action rollout carries the history memory and the noise
        h = _rollout_mean(model, states, np.zeros((H, p)), noise).ravel()
        q = np.empty(self._na + self._nb)
        q[: self._na] = 2.0 * (self._GtWt @ (h - self._ref_stack))
        if self._d:
            m_free = self._sel @ h
            q[: self._na] += 2.0 * self._w * (self._MT @ m_free)
            q[self._na :] = -2.0 * self._w * m_free
        q /= self._obj_scale

        problem = QpProblem(
            P=self._P, q=q, lower=self._lower, upper=self._upper
        )
        x0 = y0 = None
        if self._prev is not None:
            x0 = self._prev.x[self._x_shift]
            y0 = self._prev.bound_multipliers[self._x_shift]
        sol = solve(problem, self.settings, x0=x0, y0=y0, workspace=self._workspace)

        usable = sol.status != "infeasible" and np.all(np.isfinite(sol.x))
        if usable:
            # an iteration-capped solve still carries a sensible plan; only a
            # certified-infeasible or non-finite solve falls back
            self._prev = sol
            actions = sol.x[: self._na].reshape(H, p)
            # box residual of the splitting solver can leak ~1e-8 past the
            # action bounds; the emitted actions must respect them exactly
            a_lo, a_hi = config.action_bounds(p)
            planned_actions = np.clip(actions, a_lo, a_hi)
            planned_states = (self._G @ planned_actions.ravel() + h).reshape(H, n)
            violation = _box_violation(planned_states, config.s_min, config.s_max)
            objective = _trajectory_cost(config, planned_states, planned_actions)
            return MpcStep(
                action=planned_actions[0].copy(),
                planned_states=planned_states,
                planned_actions=planned_actions,
                objective=objective,
                noise=noise,
                qp_status=sol.status,
                qp_iterations=sol.iterations,
                qp_failed=sol.status != "optimal",
                bound_violation=violation,
            )

        # fallback: safe zero action clipped into the action box, flagged
        a_lo, a_hi = config.action_bounds(p)
        action = np.clip(np.zeros(p), a_lo, a_hi)
        planned_actions = np.tile(action, (H, 1))
        planned_states = _rollout_mean(model, states, planned_actions, noise)
        return MpcStep(
            action=action,
            planned_states=planned_states,
            planned_actions=planned_actions,
            objective=_trajectory_cost(config, planned_states, planned_actions),
            noise=noise,
            qp_status=sol.status,
            qp_iterations=sol.iterations,
            qp_failed=True,
            bound_violation=_box_violation(planned_states, config.s_min, config.s_max),
        )


def _psd_factor(Sigma: np.ndarray) -> np.ndarray:
    """Lower-triangular-ish factor L with L L' = Sigma, tolerant of PSD rank
    deficiency (zero covariance gives the zero factor)."""
    S = np.asarray(Sigma, dtype=float)
    if np.allclose(S, 0.0):
        return np.zeros_like(S)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
        vals = np.clip(vals, 0.0, None)
        return vecs @ np.diag(np.sqrt(vals))


def _rollout_mean(model, states, actions, noise) -> np.ndarray:
    traj = np.array(states, dtype=float)
    out = []
    for r in range(actions.shape[0]):
        nxt = predict_mean(model, traj, actions[r]) + noise[r]
        out.append(nxt)
        traj = np.vstack([traj, nxt])
    return np.vstack(out)


def _box_violation(planned_states, s_min, s_max) -> float:
    above = np.max(planned_states - s_max[None, :], initial=0.0)
    below = np.max(s_min[None, :] - planned_states, initial=0.0)
    return float(max(above, below, 0.0))


def _trajectory_cost(config, planned_states, planned_actions) -> float:
    Q, R, ref = (
        config.cost.state_weight,
        config.cost.action_weight,
        config.cost.reference,
    )
    total = 0.0
    for r in range(config.horizon):
        ds = planned_states[r] - ref
        total += config.gamma**r * (ds @ Q @ ds + planned_actions[r] @ R @ planned_actions[r])
    return float(total)


def mpc_action(
    model: FracModel,
    history,
    config: MpcConfig,
    seed: int | None = None,
    solver_settings: QpSettings | None = None,
) -> MpcStep:
    """One-shot planning step: sample H noise vectors from N(0, Sigma) with
    the given seed, assemble and solve the program, return the first move."""
    if config.soft_state_bounds or not np.any(
        np.isfinite(config.s_min) | np.isfinite(config.s_max)
    ):
        controller = MpcController(model, config, solver_settings)
        return controller.step(history, np.random.default_rng(seed))
    return _hard_bound_action(model, history, config, seed, solver_settings)


def _hard_bound_action(model, history, config, seed, solver_settings) -> MpcStep:
    """Equality-form planning with hard state boxes; infeasible noise
    realizations fall back to the clipped zero action."""
    n, p, H = model.n, model.p, config.horizon
    states = history.states if isinstance(history, StateTrajectory) else np.atleast_2d(
        np.asarray(history, dtype=float)
    )
    rng = np.random.default_rng(seed)
    noise = (rng.standard_normal((H, n))) @ _psd_factor(model.Sigma).T
    a_lo, a_hi = config.action_bounds(p)
    system = assemble_constraints(
        model, states, H, noise,
        s_min=config.s_min, s_max=config.s_max,
        action_min=a_lo, action_max=a_hi,
    )
    P, q = _tracking_objective(config, system.layout, system.layout.n_vars)
    scale = max(1.0, float(np.max(np.abs(P))), float(np.max(np.abs(q))))
    settings = solver_settings or QpSettings(eps_abs=1e-7, check_every=10)
    sol = solve(
        QpProblem(P=P / scale, q=q / scale, Aeq=system.Aeq, beq=system.beq,
                  lower=system.lower, upper=system.upper),
        settings,
    )
    if sol.optimal:
        layout = system.layout
        planned_states = np.vstack([sol.x[layout.state_slice(r)] for r in range(H)])
        planned_actions = np.clip(
            np.vstack([sol.x[layout.action_slice(r)] for r in range(H)]), a_lo, a_hi
        )
        return MpcStep(
            action=planned_actions[0].copy(),
            planned_states=planned_states,
            planned_actions=planned_actions,
            objective=_trajectory_cost(config, planned_states, planned_actions),
            noise=noise,
            qp_status=sol.status,
            qp_iterations=sol.iterations,
            qp_failed=False,
            bound_violation=_box_violation(planned_states, config.s_min, config.s_max),
        )
    action = np.clip(np.zeros(p), a_lo, a_hi)
    planned_actions = np.tile(action, (H, 1))
    planned_states = _rollout_mean(model, states, planned_actions, noise)
    return MpcStep(
        action=action,
        planned_states=planned_states,
        planned_actions=planned_actions,
        objective=_trajectory_cost(config, planned_states, planned_actions),
        noise=noise,
        qp_status=sol.status,
        qp_iterations=sol.iterations,
        qp_failed=True,
        bound_violation=_box_violation(planned_states, config.s_min, config.s_max),
    )
