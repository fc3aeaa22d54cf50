"""On-policy model improvement: alternate between fitting the fractional model
on all data gathered so far and collecting a fresh episode under the planner.

The loop is deliberately plain: one model refit per outer iteration, one
episode per iteration, every transition appended to the on-policy dataset.
Reproducibility is owned by a single seed; the planner noise stream and any
evaluation streams are derived sub-streams.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import EpisodeDataset, FracModel, StateTrajectory
from .glucose import discounted_risk_return, time_in_range
from .mpc import MpcConfig, MpcController, MpcStep
from .qp import QpSettings
from .sysid import estimate_model


@dataclass(frozen=True)
class RlConfig:
    iter_max: int
    episode_steps: int
    mpc: MpcConfig
    seed: int = 0
    snapshot_every: int = 5

    def __post_init__(self):
        if self.iter_max < 1:
            raise ValueError("iter_max must be at least 1")
        if self.episode_steps < 1:
            raise ValueError("episode_steps must be at least 1")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be at least 1")


@dataclass(frozen=True)
class RunRecord:
    iteration: int
    model_checksum: str
    episode_return: float
    tir_low: float
    tir_in_range: float
    tir_high: float
    qp_failures: int


@dataclass
class RunLog:
    records: list[RunRecord] = field(default_factory=list)

    def append(self, record: RunRecord) -> None:
        self.records.append(record)

    def to_csv(self) -> str:
        lines = ["iteration,model_checksum,episode_return,tir_low,tir_in_range,tir_high,qp_failures"]
        for r in self.records:
            lines.append(
                f"{r.iteration},{r.model_checksum},{repr(r.episode_return)},"
                f"{repr(r.tir_low)},{repr(r.tir_in_range)},{repr(r.tir_high)},{r.qp_failures}"
            )
        return "\n".join(lines) + "\n"


@dataclass
class RlResult:
    model: FracModel
    runlog: RunLog
    dataset: EpisodeDataset
    snapshots: dict[int, FracModel] = field(default_factory=dict)


def model_checksum(model: FracModel) -> str:
    return hashlib.sha256(model.to_json().encode()).hexdigest()


def generate_seed_episodes(
    env,
    count: int,
    steps: int,
    rng: np.random.Generator,
    action_low,
    action_high,
) -> EpisodeDataset:
    """Episodes driven by uniformly random actions within bounds."""
    lo = np.atleast_1d(np.asarray(action_low, dtype=float))
    hi = np.atleast_1d(np.asarray(action_high, dtype=float))
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("random seed episodes need finite action bounds")
    ds = EpisodeDataset()
    for _ in range(count):
        obs = env.reset()
        states = [np.asarray(obs, dtype=float)]
        actions = []
        for _ in range(steps):
            a = rng.uniform(lo, hi)
            actions.append(a)
            states.append(np.asarray(env.step(a), dtype=float))
        ds.add(
            StateTrajectory(
                states=np.vstack(states),
                actions=np.vstack(actions),
                dt_seconds=getattr(env, "dt_seconds", 300.0),
            ),
            "seed",
        )
    return ds


def _collect_episode(env, controller: MpcController, steps: int, rng) -> tuple[StateTrajectory, int]:
    obs = env.reset()
    states = [np.asarray(obs, dtype=float)]
    actions = []
    failures = 0
    for _ in range(steps):
        step: MpcStep = controller.step(np.vstack(states), rng)
        failures += int(step.qp_failed)
        actions.append(step.action)
        states.append(np.asarray(env.step(step.action), dtype=float))
    traj = StateTrajectory(
        states=np.vstack(states),
        actions=np.vstack(actions),
        dt_seconds=getattr(env, "dt_seconds", 300.0),
    )
    return traj, failures


def run(
    env,
    seed_data: EpisodeDataset,
    config: RlConfig,
    out_dir: str | Path | None = None,
    solver_settings: QpSettings | None = None,
) -> RlResult:
    """Alternating estimation / on-policy collection loop.

    Each iteration fits the model on seed plus on-policy data, rolls one
    episode of ``episode_steps`` planner actions from the environment's
    initial state, and appends every transition.  A model-fit failure aborts
    the run but persists the partial log when ``out_dir`` is given.
    """
    if len(seed_data) == 0:
        raise ValueError("seed dataset must be nonempty so the first fit is possible")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rng_mpc = np.random.default_rng([config.seed, 17])
    rl_data = EpisodeDataset()
    log = RunLog()
    snapshots: dict[int, FracModel] = {}
    model = None
    try:
        for iteration in range(1, config.iter_max + 1):
            model = estimate_model(seed_data.merged_with(rl_data))
            controller = MpcController(model, config.mpc, solver_settings)
            episode, failures = _collect_episode(
                env, controller, config.episode_steps, rng_mpc
            )
            rl_data.add(episode, "on-policy")
            bg = episode.states[:, 0]
            lo, mid, hi = time_in_range(bg)
            log.append(
                RunRecord(
                    iteration=iteration,
                    model_checksum=model_checksum(model),
                    episode_return=discounted_risk_return(bg, config.mpc.gamma),
                    tir_low=lo,
                    tir_in_range=mid,
                    tir_high=hi,
                    qp_failures=failures,
                )
            )
            if iteration % config.snapshot_every == 0 or iteration == config.iter_max:
                snapshots[iteration] = model
                if out is not None:
                    (out / f"model_iter_{iteration}.json").write_text(model.to_json())
                    (out / "dataset.csv").write_text(
                        seed_data.merged_with(rl_data).to_csv()
                    )
                    (out / "runlog.csv").write_text(log.to_csv())
    except Exception:
        if out is not None:
            (out / "runlog.csv").write_text(log.to_csv())
        raise
    if out is not None:
        (out / "runlog.csv").write_text(log.to_csv())
        (out / "dataset.csv").write_text(seed_data.merged_with(rl_data).to_csv())
    return RlResult(
        model=model,
        runlog=log,
        dataset=seed_data.merged_with(rl_data),
        snapshots=snapshots,
    )


def evaluate_policy(
    env,
    model: FracModel,
    config: RlConfig,
    episodes: int,
    solver_settings: QpSettings | None = None,
) -> dict:
    """Frozen-model rollouts; zone percentages and discounted risk return."""
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    controller = MpcController(model, config.mpc, solver_settings)
    zones = []
    returns = []
    for ep in range(episodes):
        rng = np.random.default_rng([config.seed, 23, ep])
        episode, _ = _collect_episode(env, controller, config.episode_steps, rng)
        bg = episode.states[:, 0]
        zones.append(time_in_range(bg))
        returns.append(discounted_risk_return(bg, config.mpc.gamma))
    zones = np.asarray(zones)
    return {
        "episodes": episodes,
        "tir_low_mean": float(zones[:, 0].mean()),
        "tir_low_std": float(zones[:, 0].std()),
        "tir_in_range_mean": float(zones[:, 1].mean()),
        "tir_in_range_std": float(zones[:, 1].std()),
        "tir_high_mean": float(zones[:, 2].mean()),
        "tir_high_std": float(zones[:, 2].std()),
        "return_mean": float(np.mean(returns)),
        "return_std": float(np.std(returns)),
    }
