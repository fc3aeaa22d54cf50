"""Request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class ModelPayload(BaseModel):
    """Wire form of the fractional model (matrices row-major)."""

    version: int = 1
    n: int
    p: int
    alphas: list[float]
    A: list[float]
    B: list[float]
    mu: list[float]
    Sigma: list[float]


class EpisodePayload(BaseModel):
    states: list[list[float]]
    actions: list[list[float]]
    dt_seconds: float = 300.0
    provenance: str = "seed"


class FitRequest(BaseModel):
    episodes: list[EpisodePayload]
    truncation: int | None = None


class FitReport(BaseModel):
    alphas: list[float]
    hursts: list[float]
    residual_std: list[float]
    transitions: int


class FitResponse(BaseModel):
    model: ModelPayload
    report: FitReport


class HurstRequest(BaseModel):
    series: list[float]


class HurstResponse(BaseModel):
    slope: float
    hurst: float
    alpha: float
    points: list[dict]


class QpRequest(BaseModel):
    P: list[list[float]]
    q: list[float]
    Aeq: list[list[float]] | None = None
    beq: list[float] | None = None
    lower: list[float] | None = None
    upper: list[float] | None = None
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 20000
    rho: float = 0.1
    sigma: float = 1e-8


class QpResponse(BaseModel):
    x: list[float]
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float


class CostSpec(BaseModel):
    reference: list[float]
    state_weight: list[list[float]]
    action_weight: list[list[float]]


class MpcSpec(BaseModel):
    horizon: int = 100
    gamma: float = 0.99
    s_min: list[float]
    s_max: list[float]
    cost: CostSpec
    action_min: list[float] | None = None
    action_max: list[float] | None = None
    soft_state_bounds: bool = True
    state_bound_penalty: float = 1e4


class MpcActionRequest(BaseModel):
    model: ModelPayload
    history: list[list[float]]
    config: MpcSpec
    seed: int | None = 0


class MpcActionResponse(BaseModel):
    action: list[float]
    planned_states: list[list[float]]
    planned_actions: list[list[float]]
    objective: float
    qp_status: str
    qp_iterations: int
    qp_failed: bool
    bound_violation: float


class RiskRequest(BaseModel):
    bg: list[float]


class RiskResponse(BaseModel):
    risk: list[float]
    minimizer: float


class TimeInRangeRequest(BaseModel):
    bg: list[float]
    low: float = 70.0
    high: float = 180.0


class TimeInRangeResponse(BaseModel):
    below: float
    in_range: float
    above: float


class PlantSpec(BaseModel):
    kind: str = "minimal-model"  # or "fractional"
    dt_seconds: float = 300.0
    obs_sigma: float = 0.0
    quantize_obs: bool = False
    meals: list[tuple[float, float]] | None = None
    episode_minutes: float = 2160.0
    # fractional plant extras
    model: ModelPayload | None = None
    x0: list[float] | None = None
    meal_gain: float = 1.6


class MbrlRunRequest(BaseModel):
    version: int = 1
    plant: PlantSpec = Field(default_factory=PlantSpec)
    mpc: MpcSpec
    iter_max: int = 30
    episode_steps: int = 432
    seed: int = 0
    snapshot_every: int = 5
    seed_episode_count: int = 3
    seed_episode_steps: int = 432
    seed_action_min: list[float] | None = None
    seed_action_max: list[float] | None = None
    qp_eps_abs: float = 1e-5


class RunRecordPayload(BaseModel):
    iteration: int
    model_checksum: str
    episode_return: float
    tir_low: float
    tir_in_range: float
    tir_high: float
    qp_failures: int


class MbrlRunResponse(BaseModel):
    runlog: list[RunRecordPayload]
    final_model: ModelPayload
    snapshots: dict[int, ModelPayload]
    dataset_csv: str
    runlog_csv: str


class TheoryRequest(BaseModel):
    count: int = 1000
    seed: int = 0
    max_states: int = 4
    max_actions: int = 2
    max_horizon: int = 4


class TheoryRow(BaseModel):
    seed: int
    kind: str
    lhs: float
    rhs: float
    margin: float
    holds: bool


class TheoryResponse(BaseModel):
    rows: list[TheoryRow]
    violations: list[int]
    csv: str


class UciFile(BaseModel):
    patient: str
    content: str


class UciAnalyzeRequest(BaseModel):
    files: list[UciFile]


class UciPatientResult(BaseModel):
    patient: str
    alpha: float
    hurst: float
    slope: float
    points: list[dict]
    skipped_lines: int
    unknown_codes: int


class UciFailure(BaseModel):
    patient: str
    error: str


class UciAnalyzeResponse(BaseModel):
    results: list[UciPatientResult]
    failures: list[UciFailure]
    summary_csv: str


class HealthResponse(BaseModel):
    status: str
    version: str
