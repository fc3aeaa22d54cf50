"""FastAPI service wrapping the library.

Every computation the CLI offers is an endpoint here; the CLI is a thin
client that ships file contents in and writes results out.  Endpoints are
stateless: requests carry everything needed to reproduce the answer.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..data import EpisodeDataset, FracModel, StateTrajectory
from ..glucose import (
    FractionalPlant,
    MealSchedule,
    MinimalModelPlant,
    risk,
    risk_minimizer,
    standard_two_day_meals,
    time_in_range,
)
from ..mbrl import RlConfig, generate_seed_episodes, model_checksum, run
from ..mpc import MpcConfig, QuadraticCost, mpc_action
from ..qp import QpProblem, QpSettings, solve
from ..sysid import estimate_hurst, estimate_model
from ..theory import bound_rows_csv, run_bound_suite
from ..uci import PatientSeries, analyze_memory, parse_uci
from . import schemas as sc


def _model_from_payload(payload: sc.ModelPayload) -> FracModel:
    n, p = payload.n, payload.p
    return FracModel(
        alphas=np.array(payload.alphas),
        A=np.array(payload.A).reshape(n, n),
        B=np.array(payload.B).reshape(n, p),
        mu=np.array(payload.mu),
        Sigma=np.array(payload.Sigma).reshape(n, n),
    )


def _model_to_payload(model: FracModel) -> sc.ModelPayload:
    return sc.ModelPayload(
        n=model.n,
        p=model.p,
        alphas=model.alphas.tolist(),
        A=model.A.ravel().tolist(),
        B=model.B.ravel().tolist(),
        mu=model.mu.tolist(),
        Sigma=model.Sigma.ravel().tolist(),
    )


def _dataset_from_payload(episodes: list[sc.EpisodePayload]) -> EpisodeDataset:
    ds = EpisodeDataset()
    for ep in episodes:
        ds.add(
            StateTrajectory(
                states=np.array(ep.states, dtype=float),
                actions=np.array(ep.actions, dtype=float),
                dt_seconds=ep.dt_seconds,
            ),
            ep.provenance,
        )
    return ds


def _mpc_config(spec: sc.MpcSpec) -> MpcConfig:
    return MpcConfig(
        horizon=spec.horizon,
        gamma=spec.gamma,
        s_min=np.array(spec.s_min, dtype=float),
        s_max=np.array(spec.s_max, dtype=float),
        cost=QuadraticCost(
            reference=np.array(spec.cost.reference, dtype=float),
            state_weight=np.array(spec.cost.state_weight, dtype=float),
            action_weight=np.array(spec.cost.action_weight, dtype=float),
        ),
        action_min=None if spec.action_min is None else np.array(spec.action_min),
        action_max=None if spec.action_max is None else np.array(spec.action_max),
        soft_state_bounds=spec.soft_state_bounds,
        state_bound_penalty=spec.state_bound_penalty,
    )


def build_plant(spec: sc.PlantSpec, seed: int):
    meals = (
        standard_two_day_meals()
        if spec.meals is None
        else MealSchedule(meals=tuple(spec.meals), episode_minutes=spec.episode_minutes)
    )
    if spec.kind == "minimal-model":
        return MinimalModelPlant(
            meal_schedule=meals,
            dt_seconds=spec.dt_seconds,
            obs_sigma=spec.obs_sigma,
            quantize_obs=spec.quantize_obs,
            noise_seed=seed,
        )
    if spec.kind == "fractional":
        if spec.model is None or spec.x0 is None:
            raise ValueError("fractional plant needs 'model' and 'x0'")
        return FractionalPlant(
            model=_model_from_payload(spec.model),
            x0=np.array(spec.x0, dtype=float),
            dt_seconds=spec.dt_seconds,
            meal_schedule=meals,
            meal_gain=spec.meal_gain,
            noise_seed=seed,
            obs_sigma=spec.obs_sigma,
            quantize_obs=spec.quantize_obs,
        )
    raise ValueError(f"unknown plant kind {spec.kind!r}")


def create_app() -> FastAPI:
    app = FastAPI(title="fracrl", version=__version__)

    def fail(exc: Exception, code: int = 422):
        raise HTTPException(status_code=code, detail=str(exc))

    @app.get("/v1/health", response_model=sc.HealthResponse)
    def health() -> sc.HealthResponse:
        return sc.HealthResponse(status="ok", version=__version__)

    @app.post("/v1/model/fit", response_model=sc.FitResponse)
    def fit(req: sc.FitRequest) -> sc.FitResponse:
        try:
            ds = _dataset_from_payload(req.episodes)
            model = estimate_model(ds, truncation=req.truncation)
        except ValueError as exc:
            fail(exc)
        return sc.FitResponse(
            model=_model_to_payload(model),
            report=sc.FitReport(
                alphas=model.alphas.tolist(),
                hursts=[a + 0.5 for a in model.alphas.tolist()],
                residual_std=np.sqrt(np.diag(model.Sigma)).tolist(),
                transitions=ds.total_transitions,
            ),
        )

    @app.post("/v1/memory/hurst", response_model=sc.HurstResponse)
    def hurst(req: sc.HurstRequest) -> sc.HurstResponse:
        try:
            fit = estimate_hurst(np.array(req.series, dtype=float))
        except ValueError as exc:
            fail(exc)
        return sc.HurstResponse(
            slope=fit.slope, hurst=fit.hurst, alpha=fit.alpha, points=fit.points()
        )

    @app.post("/v1/qp/solve", response_model=sc.QpResponse)
    def qp_solve(req: sc.QpRequest) -> sc.QpResponse:
        try:
            problem = QpProblem(
                P=np.array(req.P, dtype=float),
                q=np.array(req.q, dtype=float),
                Aeq=None if req.Aeq is None else np.array(req.Aeq, dtype=float),
                beq=None if req.beq is None else np.array(req.beq, dtype=float),
                lower=None if req.lower is None else np.array(req.lower, dtype=float),
                upper=None if req.upper is None else np.array(req.upper, dtype=float),
            )
        except ValueError as exc:
            fail(exc)
        settings = QpSettings(
            eps_abs=req.eps_abs, eps_rel=req.eps_rel, max_iter=req.max_iter,
            rho=req.rho, sigma=req.sigma,
        )
        sol = solve(problem, settings)
        return sc.QpResponse(
            x=sol.x.tolist(),
            status=sol.status,
            iterations=sol.iterations,
            primal_residual=sol.primal_residual,
            dual_residual=sol.dual_residual,
        )

    @app.post("/v1/mpc/action", response_model=sc.MpcActionResponse)
    def action(req: sc.MpcActionRequest) -> sc.MpcActionResponse:
        try:
            model = _model_from_payload(req.model)
            config = _mpc_config(req.config)
            step = mpc_action(
                model, np.array(req.history, dtype=float), config, seed=req.seed
            )
        except ValueError as exc:
            fail(exc)
        return sc.MpcActionResponse(
            action=step.action.tolist(),
            planned_states=step.planned_states.tolist(),
            planned_actions=step.planned_actions.tolist(),
            objective=step.objective,
            qp_status=step.qp_status,
            qp_iterations=step.qp_iterations,
            qp_failed=step.qp_failed,
            bound_violation=step.bound_violation,
        )

    @app.post("/v1/risk/evaluate", response_model=sc.RiskResponse)
    def risk_eval(req: sc.RiskRequest) -> sc.RiskResponse:
        try:
            values = [risk(b) for b in req.bg]
        except ValueError as exc:
            fail(exc)
        return sc.RiskResponse(risk=values, minimizer=risk_minimizer())

    @app.post("/v1/metrics/time-in-range", response_model=sc.TimeInRangeResponse)
    def tir(req: sc.TimeInRangeRequest) -> sc.TimeInRangeResponse:
        try:
            below, mid, above = time_in_range(req.bg, low=req.low, high=req.high)
        except ValueError as exc:
            fail(exc)
        return sc.TimeInRangeResponse(below=below, in_range=mid, above=above)

    @app.post("/v1/mbrl/run", response_model=sc.MbrlRunResponse)
    def mbrl_run(req: sc.MbrlRunRequest) -> sc.MbrlRunResponse:
        try:
            mpc = _mpc_config(req.mpc)
            plant = build_plant(req.plant, seed=req.seed)
            a_lo = req.seed_action_min
            a_hi = req.seed_action_max
            if a_lo is None or a_hi is None:
                lo, hi = mpc.action_bounds(plant.p)
                a_lo = lo if a_lo is None else np.array(a_lo)
                a_hi = hi if a_hi is None else np.array(a_hi)
            seed_data = generate_seed_episodes(
                plant,
                req.seed_episode_count,
                req.seed_episode_steps,
                np.random.default_rng([req.seed, 11]),
                a_lo,
                a_hi,
            )
            config = RlConfig(
                iter_max=req.iter_max,
                episode_steps=req.episode_steps,
                mpc=mpc,
                seed=req.seed,
                snapshot_every=req.snapshot_every,
            )
            result = run(
                plant, seed_data, config,
                solver_settings=QpSettings(eps_abs=req.qp_eps_abs, check_every=10),
            )
        except ValueError as exc:
            fail(exc)
        return sc.MbrlRunResponse(
            runlog=[sc.RunRecordPayload(**r.__dict__) for r in result.runlog.records],
            final_model=_model_to_payload(result.model),
            snapshots={m: _model_to_payload(mod) for m, mod in result.snapshots.items()},
            dataset_csv=result.dataset.to_csv(),
            runlog_csv=result.runlog.to_csv(),
        )

    @app.post("/v1/theory/run", response_model=sc.TheoryResponse)
    def theory_run(req: sc.TheoryRequest) -> sc.TheoryResponse:
        try:
            rows = run_bound_suite(
                count=req.count, seed=req.seed, max_states=req.max_states,
                max_actions=req.max_actions, max_horizon=req.max_horizon,
            )
        except ValueError as exc:
            fail(exc)
        return sc.TheoryResponse(
            rows=[sc.TheoryRow(**r.__dict__) for r in rows],
            violations=sorted({r.seed for r in rows if not r.holds}),
            csv=bound_rows_csv(rows),
        )

    @app.post("/v1/uci/analyze", response_model=sc.UciAnalyzeResponse)
    def uci_analyze(req: sc.UciAnalyzeRequest) -> sc.UciAnalyzeResponse:
        results = []
        failures = []
        for f in req.files:
            try:
                parsed = parse_uci(f.content)
                series = PatientSeries.from_records(f.patient, parsed.records)
                fit = analyze_memory(series)
                results.append(
                    sc.UciPatientResult(
                        patient=f.patient,
                        alpha=fit.alpha,
                        hurst=fit.hurst,
                        slope=fit.slope,
                        points=fit.points(),
                        skipped_lines=parsed.skipped,
                        unknown_codes=parsed.unknown_codes,
                    )
                )
            except ValueError as exc:
                failures.append(sc.UciFailure(patient=f.patient, error=str(exc)))
        lines = ["patient,alpha,hurst"]
        for r in results:
            lines.append(f"{r.patient},{repr(r.alpha)},{repr(r.hurst)}")
        return sc.UciAnalyzeResponse(
            results=results, failures=failures, summary_csv="\n".join(lines) + "\n"
        )

    return app
