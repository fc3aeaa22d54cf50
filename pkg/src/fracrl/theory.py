"""Executable performance-bound checks on small history-dependent processes.

A finite HDP is enumerable: every history of states can be listed, so value
functions, optimal policies, and receding-horizon policies are computed
exactly.  The checks measure how far an approximate model/cost pair is from
the truth (an L1 envelope C * t^q over history lengths plus a sup-norm cost
gap) and verify that the realized value gaps stay below the analytic bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

History = tuple[int, ...]


class EnumerationCapError(ValueError):
    pass


@dataclass(frozen=True)
class FiniteHDP:
    """Explicit history-dependent process over states 0..S-1, actions 0..A-1.

    ``transitions[(h, a)]`` is the distribution of the next state given the
    full state history h (a tuple, last element = current state) and action.
    Costs depend on (state, action) and live inside [c_min, c_max].
    """

    n_states: int
    n_actions: int
    horizon: int
    transitions: dict
    costs: np.ndarray
    initial_state: int = 0
    enumeration_cap: int = 2_000_000

    def __post_init__(self):
        if self.n_states < 1 or self.n_actions < 1 or self.horizon < 1:
            raise ValueError("sizes must be positive")
        if self.tree_size() > self.enumeration_cap:
            raise EnumerationCapError(
                f"history tree of size {self.tree_size()} exceeds cap {self.enumeration_cap}"
            )
        costs = np.asarray(self.costs, dtype=float)
        if costs.shape != (self.n_states, self.n_actions):
            raise ValueError("costs must have shape (n_states, n_actions)")
        for (h, a), dist in self.transitions.items():
            d = np.asarray(dist, dtype=float)
            if abs(d.sum() - 1.0) > 1e-12 or np.any(d < -1e-15):
                raise ValueError(f"transition for {(h, a)} is not a distribution")
        object.__setattr__(self, "costs", costs)

    def tree_size(self) -> int:
        return sum(self.n_states ** (t + 1) for t in range(self.horizon + 1))

    @property
    def c_min(self) -> float:
        return float(self.costs.min())

    @property
    def c_max(self) -> float:
        return float(self.costs.max())

    def next_dist(self, h: History, a: int) -> np.ndarray:
        return np.asarray(self.transitions[(h, a)], dtype=float)

    def histories(self, length: int) -> list[History]:
        """All state histories with ``length`` transitions taken (so tuples
        of length+1 states)."""
        return [tuple(h) for h in product(range(self.n_states), repeat=length + 1)]


@dataclass(frozen=True)
class BoundParams:
    """Measured approximation envelope and the scalars entering the bounds."""

    C: float
    q: float
    epsilon: float
    gamma: float
    H: int
    T: int
    c_min: float
    c_max: float
    per_length_gaps: tuple[float, ...] = field(default=())

    def __post_init__(self):
        # the declared envelope must actually dominate the measured gaps
        for t, gap in enumerate(self.per_length_gaps):
            if gap > self.C * max(t, 1) ** self.q + 1e-12:
                raise ValueError(
                    f"declared envelope C t^q fails at history length {t}: "
                    f"gap {gap} > {self.C * max(t, 1) ** self.q}"
                )


def geometric_sum(gamma: float, m: int) -> float:
    """sum_{j=0..m-1} gamma^j, with the gamma = 1 limit handled exactly."""
    if m <= 0:
        return 0.0
    if gamma == 1.0:
        return float(m)
    return (1.0 - gamma**m) / (1.0 - gamma)


def _policy_dist(policy, h: History, n_actions: int) -> np.ndarray:
    choice = policy[h] if not callable(policy) else policy(h)
    arr = np.asarray(choice, dtype=float)
    if arr.ndim == 0:
        dist = np.zeros(n_actions)
        dist[int(arr)] = 1.0
        return dist
    return arr


def exact_value(hdp: FiniteHDP, policy, gamma: float, h0: History | None = None) -> float:
    """Expected discounted cost sum_{k=t..T-1} gamma^k c(s_k, a_k) by full
    history-tree enumeration under a (possibly stochastic) policy."""
    h0 = (hdp.initial_state,) if h0 is None else tuple(h0)
    memo: dict = {}

    def value(h: History) -> float:
        t = len(h) - 1
        if t >= hdp.horizon:
            return 0.0
        key = h
        if key in memo:
            return memo[key]
        dist = _policy_dist(policy, h, hdp.n_actions)
        total = 0.0
        for a, pa in enumerate(dist):
            if pa == 0.0:
                continue
            step = gamma**t * hdp.costs[h[-1], a]
            nxt = hdp.next_dist(h, a)
            cont = sum(
                ps * value(h + (s,)) for s, ps in enumerate(nxt) if ps > 0.0
            )
            total += pa * (step + cont)
        memo[key] = total
        return total

    return value(h0)


def optimal_value(hdp: FiniteHDP, gamma: float, h0: History | None = None):
    """Backward induction over the whole history tree; returns the optimal
    value at the initial history and the optimal deterministic policy."""
    h0 = (hdp.initial_state,) if h0 is None else tuple(h0)
    memo: dict = {}
    policy: dict = {}

    def value(h: History) -> float:
        t = len(h) - 1
        if t >= hdp.horizon:
            return 0.0
        if h in memo:
            return memo[h]
        best, best_a = np.inf, 0
        for a in range(hdp.n_actions):
            nxt = hdp.next_dist(h, a)
            total = gamma**t * hdp.costs[h[-1], a] + sum(
                ps * value(h + (s,)) for s, ps in enumerate(nxt) if ps > 0.0
            )
            if total < best - 1e-15:
                best, best_a = total, a
        memo[h] = best
        policy[h] = best_a
        return best

    v = value(h0)
    # fill the policy on every history so it can be evaluated anywhere
    for t in range(hdp.horizon):
        for h in hdp.histories(t):
            value(h)
    return v, policy


def _lookahead(hdp: FiniteHDP, costs: np.ndarray, h: History, steps: int,
               gamma: float, memo: dict) -> tuple[float, int]:
    """Min over actions of the expected discounted cost of the next ``steps``
    transitions (absolute discounting gamma^t); ties break to the smallest
    action index."""
    t = len(h) - 1
    steps = min(steps, hdp.horizon - t)
    if steps <= 0:
        return 0.0, 0
    key = (h, steps)
    if key in memo:
        return memo[key]
    best, best_a = np.inf, 0
    for a in range(hdp.n_actions):
        nxt = hdp.next_dist(h, a)
        total = gamma**t * costs[h[-1], a]
        if steps > 1:
            total += sum(
                ps * _lookahead(hdp, costs, h + (s,), steps - 1, gamma, memo)[0]
                for s, ps in enumerate(nxt)
                if ps > 0.0
            )
        if total < best - 1e-15:
            best, best_a = total, a
    memo[key] = (best, best_a)
    return best, best_a


def mpc_policy(approx_hdp: FiniteHDP, approx_costs, H: int, gamma: float) -> dict:
    """Receding-horizon greedy policy under the approximate model and cost."""
    costs = np.asarray(approx_costs, dtype=float)
    memo: dict = {}
    policy: dict = {}
    for t in range(approx_hdp.horizon):
        for h in approx_hdp.histories(t):
            policy[h] = _lookahead(approx_hdp, costs, h, H, gamma, memo)[1]
    return policy


def mpc_policy_value(
    hdp: FiniteHDP,
    approx_hdp: FiniteHDP,
    approx_costs,
    H: int,
    gamma: float,
) -> float:
    """Value (under the true model and cost) of the receding-horizon policy
    computed from the approximate model and cost."""
    policy = mpc_policy(approx_hdp, approx_costs, H, gamma)
    return exact_value(hdp, policy, gamma)


def measure_gaps(hdp: FiniteHDP, approx_hdp: FiniteHDP) -> list[float]:
    """Worst L1 distance between approximate and true next-state laws, per
    history length, over pairs of histories sharing length and endpoint."""
    gaps = []
    for t in range(hdp.horizon):
        worst = 0.0
        groups: dict[int, list[History]] = {}
        for h in hdp.histories(t):
            groups.setdefault(h[-1], []).append(h)
        for _, members in groups.items():
            for a in range(hdp.n_actions):
                true_d = np.vstack([hdp.next_dist(h, a) for h in members])
                appr_d = np.vstack([approx_hdp.next_dist(h, a) for h in members])
                diff = np.abs(appr_d[:, None, :] - true_d[None, :, :]).sum(axis=2)
                worst = max(worst, float(diff.max()))
        gaps.append(worst)
    return gaps


def measure_bound_params(
    hdp: FiniteHDP, approx_hdp: FiniteHDP, approx_costs, q: float,
    gamma: float, H: int,
) -> BoundParams:
    gaps = measure_gaps(hdp, approx_hdp)
    C = max(gap / max(t, 1) ** q for t, gap in enumerate(gaps))
    eps = float(np.max(np.abs(np.asarray(approx_costs, dtype=float) - hdp.costs)))
    return BoundParams(
        C=C, q=q, epsilon=eps, gamma=gamma, H=H, T=hdp.horizon,
        c_min=hdp.c_min, c_max=hdp.c_max, per_length_gaps=tuple(gaps),
    )


def theorem1_rhs(params: BoundParams) -> float:
    """Worst-case value gap of the receding-horizon policy: a model term
    growing with the horizon and envelope, plus a cost-approximation term."""
    gH = geometric_sum(params.gamma, params.H)
    gT = geometric_sum(params.gamma, params.T)
    half_range = (params.c_max - params.c_min) / 2.0
    model_term = 2.0 * gH * half_range * params.H * params.C * params.T**params.q
    cost_term = 2.0 * params.epsilon * gH * gT
    return model_term + cost_term


def lemma1_rhs(params: BoundParams, t: int) -> float:
    gH = geometric_sum(params.gamma, params.H)
    half_range = (params.c_max - params.c_min) / 2.0
    model_term = (
        params.gamma**t * params.H * half_range * gH * params.C * (t + params.H) ** params.q
    )
    cost_term = params.epsilon * params.gamma**t * gH
    return model_term + cost_term


def _h_step_cost(hdp: FiniteHDP, costs: np.ndarray, policy, h: History,
                 steps: int, gamma: float, memo: dict) -> float:
    t = len(h) - 1
    steps = min(steps, hdp.horizon - t)
    if steps <= 0:
        return 0.0
    key = (h, steps)
    if key in memo:
        return memo[key]
    dist = _policy_dist(policy, h, hdp.n_actions)
    total = 0.0
    for a, pa in enumerate(dist):
        if pa == 0.0:
            continue
        part = gamma**t * costs[h[-1], a]
        if steps > 1:
            nxt = hdp.next_dist(h, a)
            part += sum(
                ps * _h_step_cost(hdp, costs, policy, h + (s,), steps - 1, gamma, memo)
                for s, ps in enumerate(nxt)
                if ps > 0.0
            )
        total += pa * part
    memo[key] = total
    return total


def lemma1_check(
    hdp: FiniteHDP,
    approx_hdp: FiniteHDP,
    approx_costs,
    policy,
    t: int,
    H: int,
    gamma: float,
    q: float = 0.0,
) -> tuple[float, float, bool]:
    """Worst H-step expected-cost deviation over histories of length t vs the
    simulation-style bound; returns (lhs, rhs, holds)."""
    params = measure_bound_params(hdp, approx_hdp, approx_costs, q, gamma, H)
    appr_costs = np.asarray(approx_costs, dtype=float)
    memo_a: dict = {}
    memo_t: dict = {}
    lhs = 0.0
    for h in hdp.histories(t):
        va = _h_step_cost(approx_hdp, appr_costs, policy, h, H, gamma, memo_a)
        vt = _h_step_cost(hdp, hdp.costs, policy, h, H, gamma, memo_t)
        lhs = max(lhs, abs(va - vt))
    rhs = lemma1_rhs(params, t)
    return float(lhs), float(rhs), bool(lhs <= rhs + 1e-9 * max(1.0, abs(rhs)))


def random_hdp(rng: np.random.Generator, n_states: int, n_actions: int,
               horizon: int, concentration: float = 1.0) -> FiniteHDP:
    """Random enumerable HDP; history dependence comes from drawing an
    independent Dirichlet next-state law for every (history, action)."""
    transitions = {}
    for t in range(horizon):
        for h in product(range(n_states), repeat=t + 1):
            for a in range(n_actions):
                transitions[(tuple(h), a)] = rng.dirichlet(
                    np.full(n_states, concentration)
                )
    costs = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return FiniteHDP(
        n_states=n_states, n_actions=n_actions, horizon=horizon,
        transitions=transitions, costs=costs,
        initial_state=int(rng.integers(n_states)),
    )


def perturb_hdp(
    hdp: FiniteHDP,
    rng: np.random.Generator,
    model_noise: float,
    cost_noise: float,
) -> tuple[FiniteHDP, np.ndarray]:
    """Approximation of an HDP: each next-state law is mixed with a random
    distribution, costs are shifted uniformly (clipped to the cost range)."""
    transitions = {}
    for key, dist in hdp.transitions.items():
        mix = rng.dirichlet(np.ones(hdp.n_states))
        lam = rng.uniform(0.0, model_noise)
        transitions[key] = (1.0 - lam) * np.asarray(dist, dtype=float) + lam * mix
    costs = hdp.costs + rng.uniform(-cost_noise, cost_noise, size=hdp.costs.shape)
    costs = np.clip(costs, hdp.c_min, hdp.c_max)
    approx = FiniteHDP(
        n_states=hdp.n_states, n_actions=hdp.n_actions, horizon=hdp.horizon,
        transitions=transitions, costs=hdp.costs,
        initial_state=hdp.initial_state,
    )
    return approx, costs


@dataclass(frozen=True)
class BoundCheckRow:
    seed: int
    kind: str  # "theorem" | "lemma"
    lhs: float
    rhs: float
    margin: float
    holds: bool


def run_bound_suite(
    count: int,
    seed: int,
    max_states: int = 4,
    max_actions: int = 2,
    max_horizon: int = 4,
) -> list[BoundCheckRow]:
    """Randomized verification campaign.

    Each instance draws a random HDP, perturbs it, measures (C, q, epsilon)
    from the actual perturbation, and checks both the receding-horizon value
    bound (with a planning horizon covering the episode, where the aggregate
    form is valid) and the H-step simulation bound at a random (t, H).
    """
    if count < 1:
        raise ValueError("need at least one instance")
    rows: list[BoundCheckRow] = []
    for i in range(count):
        inst_seed = seed + i
        rng = np.random.default_rng(inst_seed)
        S = int(rng.integers(2, max_states + 1))
        A = int(rng.integers(2, max_actions + 1))
        T = int(rng.integers(2, max_horizon + 1))
        gamma = float(rng.choice([0.5, 0.9, 0.99, 1.0]))
        q = float(rng.choice([0.0, 0.5, 1.0]))
        hdp = random_hdp(rng, S, A, T)
        approx, approx_costs = perturb_hdp(
            hdp, rng, model_noise=float(rng.uniform(0.0, 0.5)),
            cost_noise=float(rng.uniform(0.0, 0.2)),
        )

        H_theorem = T + int(rng.integers(0, 3))
        params = measure_bound_params(hdp, approx, approx_costs, q, gamma, H_theorem)
        v_opt, _ = optimal_value(hdp, gamma)
        v_mpc = mpc_policy_value(hdp, approx, approx_costs, H_theorem, gamma)
        lhs = abs(v_mpc - v_opt)
        rhs = theorem1_rhs(params)
        rows.append(
            BoundCheckRow(
                seed=inst_seed, kind="theorem", lhs=float(lhs), rhs=float(rhs),
                margin=float(rhs - lhs),
                holds=bool(lhs <= rhs + 1e-9 * max(1.0, abs(rhs))),
            )
        )

        t_check = int(rng.integers(0, T))
        H_lemma = int(rng.integers(1, T + 2))
        policy = mpc_policy(approx, approx_costs, H_lemma, gamma)
        l_lhs, l_rhs, l_holds = lemma1_check(
            hdp, approx, approx_costs, policy, t_check, H_lemma, gamma, q
        )
        rows.append(
            BoundCheckRow(
                seed=inst_seed, kind="lemma", lhs=l_lhs, rhs=l_rhs,
                margin=float(l_rhs - l_lhs), holds=l_holds,
            )
        )
    return rows


def bound_rows_csv(rows: list[BoundCheckRow]) -> str:
    lines = ["seed,kind,lhs,rhs,margin,holds"]
    for r in rows:
        lines.append(
            f"{r.seed},{r.kind},{repr(r.lhs)},{repr(r.rhs)},{repr(r.margin)},{int(r.holds)}"
        )
    return "\n".join(lines) + "\n"
