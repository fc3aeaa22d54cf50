"""Blood-glucose control environments, the quadratic risk cost, and zone
metrics.

Two plants share the step/reset interface:

* :class:`FractionalPlant` -- a ground-truth linear fractional system with
  meal impulses, used for identifiability and closed-loop oracle tests.
* :class:`MinimalModelPlant` -- a Bergman-type nonlinear ODE with a gut
  absorption compartment, used for control realism.  Basal insulin delivery
  is folded into the model, so the action is the bolus above basal and zero
  action relaxes glucose to its basal level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from .data import FracModel
from .fractional import predict_mean

BG_FLOOR = 1.0  # mg/dL; observations are clamped here before risk evaluation


@dataclass(frozen=True)
class RiskParams:
    c1: float = 1.509
    c2: float = 1.084
    c3: float = 5.381
    scale: float = 10.0


DEFAULT_RISK = RiskParams()


def risk(bg, params: RiskParams = DEFAULT_RISK):
    """Symmetrized glycemic risk scale * (c1 (ln(b)^c2 - c3))^2.

    Natural logarithm; values below the 1 mg/dL floor are clamped so the
    fractional power of the log stays defined.  Raises for bg <= 0.
    """
    b = np.asarray(bg, dtype=float)
    if np.any(b <= 0.0):
        raise ValueError("blood glucose must be positive")
    b = np.maximum(b, BG_FLOOR)
    f = params.c1 * (np.log(b) ** params.c2 - params.c3)
    out = params.scale * f**2
    return float(out) if np.isscalar(bg) or out.ndim == 0 else out


def risk_minimizer(params: RiskParams = DEFAULT_RISK) -> float:
    """The unique zero of the risk: exp(c3 ** (1 / c2))."""
    return math.exp(params.c3 ** (1.0 / params.c2))


def transition_cost(bg_now: float, bg_next: float, params: RiskParams = DEFAULT_RISK) -> float:
    """Risk change across a transition; telescopes along a trajectory."""
    return risk(bg_next, params) - risk(bg_now, params)


def discounted_risk_return(bg_series, gamma: float, params: RiskParams = DEFAULT_RISK) -> float:
    """sum_k gamma^k (R(b[k+1]) - R(b[k])) over an observed BG series."""
    b = np.asarray(bg_series, dtype=float)
    costs = np.array([transition_cost(b[k], b[k + 1], params) for k in range(len(b) - 1)])
    return float(np.sum(costs * gamma ** np.arange(len(costs))))


def time_in_range(bg_series, low: float = 70.0, high: float = 180.0) -> tuple[float, float, float]:
    """Percentages of samples below, inside, and above [low, high]."""
    b = np.asarray(bg_series, dtype=float).ravel()
    if b.size == 0:
        raise ValueError("trajectory is empty")
    below = float(np.count_nonzero(b < low))
    above = float(np.count_nonzero(b > high))
    within = b.size - below - above
    return (100.0 * below / b.size, 100.0 * within / b.size, 100.0 * above / b.size)


@dataclass(frozen=True)
class MealSchedule:
    """(minutes from episode start, grams of carbohydrate) pairs."""

    meals: tuple[tuple[float, float], ...]
    episode_minutes: float = 2160.0

    def __post_init__(self):
        times = [t for t, _ in self.meals]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("meal times must be strictly increasing")
        if any(t < 0 or t > self.episode_minutes for t in times):
            raise ValueError("meal outside the episode window")

    def grams_in_window(self, t0_min: float, t1_min: float) -> float:
        """Grams landing in the half-open window [t0, t1)."""
        return sum(g for t, g in self.meals if t0_min <= t < t1_min)


def standard_two_day_meals() -> MealSchedule:
    """36 h episode starting 06:00: 50 g at 09:00, 70 g at 13:00, 90 g at
    17:30, 25 g at 20:00, then 50 g at 09:00 and 70 g at 13:00 on day two."""
    return MealSchedule(
        meals=(
            (180.0, 50.0),
            (420.0, 70.0),
            (690.0, 90.0),
            (840.0, 25.0),
            (1620.0, 50.0),
            (1860.0, 70.0),
        ),
        episode_minutes=2160.0,
    )


class FractionalPlant:
    """Ground-truth fractional linear plant (oracle plant).

    Advances through the same predictive mean as the model family, plus
    process noise and optional additive meal impulses on the first state
    dimension (``meal_gain`` units of state per gram).
    """

    def __init__(
        self,
        model: FracModel,
        x0,
        dt_seconds: float = 300.0,
        meal_schedule: MealSchedule | None = None,
        meal_gain: float = 1.6,
        noise_seed: int | None = 0,
        obs_sigma: float = 0.0,
        quantize_obs: bool = False,
    ):
        self.model = model
        self.x0 = np.asarray(x0, dtype=float).reshape(model.n)
        self.dt_seconds = float(dt_seconds)
        self.meal_schedule = meal_schedule
        self.meal_gain = float(meal_gain)
        self.noise_seed = noise_seed
        self.obs_sigma = float(obs_sigma)
        self.quantize_obs = quantize_obs
        self._noise_chol = _psd_chol(model.Sigma)
        self.reset()

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def p(self) -> int:
        return self.model.p

    def reset(self) -> np.ndarray:
        self._rng = np.random.default_rng(self.noise_seed)
        self._states = [self.x0.copy()]
        self._k = 0
        return self._observe(self.x0)

    def step(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=float).reshape(self.model.p)
        history = np.vstack(self._states)
        nxt = predict_mean(self.model, history, a)
        if self._noise_chol is not None:
            nxt = nxt + self._noise_chol @ self._rng.standard_normal(self.model.n)
        if self.meal_schedule is not None:
            t0 = self._k * self.dt_seconds / 60.0
            t1 = (self._k + 1) * self.dt_seconds / 60.0
            nxt = nxt.copy()
            nxt[0] += self.meal_gain * self.meal_schedule.grams_in_window(t0, t1)
        if not np.all(np.isfinite(nxt)):
            raise FloatingPointError("plant state became non-finite; episode aborted")
        self._states.append(nxt)
        self._k += 1
        return self._observe(nxt)

    def _observe(self, state: np.ndarray) -> np.ndarray:
        obs = state.copy()
        if self.obs_sigma > 0.0:
            obs = obs + self.obs_sigma * self._rng.standard_normal(obs.shape)
        if self.quantize_obs:
            obs = np.round(obs)
        return obs


@dataclass(frozen=True)
class MinimalModelParams:
    """Bergman-type minimal model constants (time unit: minutes)."""

    g_basal: float = 160.0
    x_zero: float = 0.0
    i_basal: float = 15.0
    p1: float = 0.025
    p2: float = 0.1
    p3: float = 1e-4
    insulin_clearance: float = 0.0926
    insulin_volume: float = 12.0
    carb_absorption: float = 0.025
    carb_to_glucose: float = 4.0
    substep_seconds: float = 1.0

    @classmethod
    def from_config(cls, doc: dict) -> "MinimalModelParams":
        if doc.get("version") != 1:
            raise ValueError(f"unsupported plant config version: {doc.get('version')!r}")
        return cls(
            g_basal=doc["g_basal_mgdl"],
            x_zero=doc["x_zero"],
            i_basal=doc["i_basal_mUL"],
            p1=doc["p1_glucose_effectiveness"],
            p2=doc["p2_insulin_action_decay"],
            p3=doc["p3_insulin_sensitivity"],
            insulin_clearance=doc["insulin_clearance"],
            insulin_volume=doc["insulin_volume_L"],
            carb_absorption=doc["carb_absorption_rate"],
            carb_to_glucose=doc["carb_to_glucose"],
            substep_seconds=doc.get("substep_seconds", 1.0),
        )

    @classmethod
    def default(cls) -> "MinimalModelParams":
        text = resources.files("fracrl.configs").joinpath("minimal_model_v1.json").read_text()
        return cls.from_config(json.loads(text))


class MinimalModelPlant:
    """Nonlinear glucose plant: three physiologic compartments plus gut.

        dG/dt = -p1 (G - Gb) - X G + carb_to_glucose * kabs * Q
        dX/dt = -p2 X + p3 (I - Ib)
        dI/dt = -clearance (I - Ib) + bolus_rate / V_I
        dQ/dt = -kabs Q                     (meals add grams to Q)

    The bolus action (units per control step) is delivered as a constant
    infusion across the step.  Integration is forward Euler at 1 s substeps;
    the time constants are all >= 10 min so the substep error is far below
    sensor resolution.
    """

    def __init__(
        self,
        params: MinimalModelParams | None = None,
        meal_schedule: MealSchedule | None = None,
        dt_seconds: float = 300.0,
        obs_sigma: float = 0.0,
        quantize_obs: bool = False,
        noise_seed: int | None = 0,
        g0: float | None = None,
    ):
        self.params = params or MinimalModelParams.default()
        self.meal_schedule = meal_schedule if meal_schedule is not None else standard_two_day_meals()
        self.dt_seconds = float(dt_seconds)
        self.obs_sigma = float(obs_sigma)
        self.quantize_obs = quantize_obs
        self.noise_seed = noise_seed
        self.g0 = self.params.g_basal if g0 is None else float(g0)
        self.n = 1
        self.p = 1
        self.reset()

    def reset(self) -> np.ndarray:
        pr = self.params
        self._rng = np.random.default_rng(self.noise_seed)
        self._G = self.g0
        self._X = pr.x_zero
        self._I = pr.i_basal
        self._Q = 0.0
        self._k = 0
        return self._observe()

    def internal_state(self) -> tuple[float, float, float, float]:
        return (self._G, self._X, self._I, self._Q)

    def step(self, insulin_units) -> np.ndarray:
        u = float(np.asarray(insulin_units, dtype=float).reshape(()))
        if u < 0.0:
            raise ValueError("insulin dose must be non-negative")
        pr = self.params
        t0_min = self._k * self.dt_seconds / 60.0
        dt_min = pr.substep_seconds / 60.0
        n_sub = int(round(self.dt_seconds / pr.substep_seconds))
        # bolus in mU spread uniformly across the control step
        rate = u * 1000.0 / (self.dt_seconds / 60.0)

        meals = [
            (t, g)
            for t, g in self.meal_schedule.meals
            if t0_min <= t < t0_min + self.dt_seconds / 60.0
        ]
        G, X, I, Q = self._G, self._X, self._I, self._Q
        for s in range(n_sub):
            t = t0_min + s * dt_min
            for tm, grams in meals:
                if t <= tm < t + dt_min:
                    Q += grams
            ra = pr.carb_to_glucose * pr.carb_absorption * Q
            dG = -pr.p1 * (G - pr.g_basal) - X * G + ra
            dX = -pr.p2 * X + pr.p3 * (I - pr.i_basal)
            dI = -pr.insulin_clearance * (I - pr.i_basal) + rate / pr.insulin_volume
            dQ = -pr.carb_absorption * Q
            G += dt_min * dG
            X += dt_min * dX
            I += dt_min * dI
            Q += dt_min * dQ
            if G < BG_FLOOR:
                G = BG_FLOOR
        if not all(map(math.isfinite, (G, X, I, Q))):
            raise FloatingPointError("plant state became non-finite; episode aborted")
        self._G, self._X, self._I, self._Q = G, X, I, Q
        self._k += 1
        return self._observe()

    def _observe(self) -> np.ndarray:
        bg = self._G
        if self.obs_sigma > 0.0:
            bg += self.obs_sigma * float(self._rng.standard_normal())
        if self.quantize_obs:
            bg = round(bg)
        return np.array([max(bg, BG_FLOOR)])


def _psd_chol(Sigma: np.ndarray) -> np.ndarray | None:
    S = np.asarray(Sigma, dtype=float)
    if np.allclose(S, 0.0):
        return None
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
        return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))


def episode_trace_csv(times_s, bg, insulin, meals_g) -> str:
    """CSV trace with columns t_seconds, bg_mgdl, insulin_units, meal_g."""
    lines = ["t_seconds,bg_mgdl,insulin_units,meal_g"]
    for t, b, u, g in zip(times_s, bg, insulin, meals_g):
        lines.append(f"{repr(float(t))},{repr(float(b))},{repr(float(u))},{repr(float(g))}")
    return "\n".join(lines) + "\n"
