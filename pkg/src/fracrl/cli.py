"""Command-line client for the service.

Subcommands call HTTP endpoints and handle all file I/O locally, so the same
client works against the bundled in-process service (default) or a remote
instance (``--server URL``).  Every run writes a manifest with the resolved
configuration and seeds before any computation starts.

Exit codes: 0 success, 1 domain failure, 2 I/O or validation error,
3 bound violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx

from . import __version__

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_IO = 2
EXIT_VIOLATION = 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _InProcessTransport(httpx.BaseTransport):
    """Synchronous bridge to the ASGI app, one event loop per request."""

    def __init__(self, app):
        self._asgi = httpx.ASGITransport(app=app)

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        import asyncio

        async def call():
            response = await self._asgi.handle_async_request(request)
            body = await response.aread()
            return response, body

        response, body = asyncio.run(call())
        return httpx.Response(
            status_code=response.status_code,
            headers=response.headers,
            content=body,
            request=request,
        )


def make_client(server: str | None) -> httpx.Client:
    """HTTP client against a remote server, or the in-process app."""
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from .service.app import create_app

    return httpx.Client(
        transport=_InProcessTransport(create_app()),
        base_url="http://fracrl.local",
        timeout=None,
    )


def _post(client: httpx.Client, path: str, payload: dict) -> dict:
    try:
        resp = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        raise CliError(f"request to {path} failed: {exc}", EXIT_IO)
    if resp.status_code == 422:
        raise CliError(f"validation error: {resp.json().get('detail')}", EXIT_IO)
    if resp.status_code >= 400:
        raise CliError(f"{path} returned {resp.status_code}: {resp.text}", EXIT_DOMAIN)
    return resp.json()


def _write_manifest(out_dir: Path, command: str, config: dict, seed) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": 1,
        "command": command,
        "package_version": __version__,
        "seed": seed,
        "config": config,
    }
    (out_dir / "run.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _episodes_from_csv(text: str) -> list[dict]:
    from .data import EpisodeDataset

    ds = EpisodeDataset.from_csv(text)
    return [
        {
            "states": ep.states.tolist(),
            "actions": ep.actions.tolist(),
            "dt_seconds": ep.dt_seconds,
            "provenance": tag,
        }
        for ep, tag in zip(ds.episodes, ds.provenance)
    ]


def cmd_fit(args, client: httpx.Client) -> int:
    data_path = Path(args.data)
    out_path = Path(args.out)
    if not data_path.exists():
        raise CliError(f"dataset not found: {data_path}", EXIT_IO)
    try:
        episodes = _episodes_from_csv(data_path.read_text())
    except ValueError as exc:
        raise CliError(f"cannot parse dataset: {exc}", EXIT_IO)
    doc = _post(client, "/v1/model/fit", {"episodes": episodes})
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(doc["model"]) + "\n")
    report_path = out_path.with_suffix(".report.json")
    report_path.write_text(json.dumps(doc["report"], indent=2) + "\n")
    print(f"model written to {out_path}")
    print(f"per-dimension exponents: {doc['report']['alphas']}")
    return EXIT_OK


DEFAULT_MBRL_CONFIG = {
    "version": 1,
    "plant": {"kind": "minimal-model"},
    "mpc": {
        "horizon": 100,
        "gamma": 0.99,
        "s_min": [70.0],
        "s_max": [180.0],
        "cost": {
            "reference": [112.52],
            "state_weight": [[1.0]],
            "action_weight": [[10.0]],
        },
        "action_min": [0.0],
        "action_max": [0.5],
    },
    "iter_max": 30,
    "episode_steps": 432,
    "snapshot_every": 5,
    "seed_episode_count": 3,
    "seed_episode_steps": 432,
    "seed_action_max": [0.25],
}


def _validated_mbrl_config(doc: dict) -> dict:
    if doc.get("version") != 1:
        raise CliError(f"unsupported config version: {doc.get('version')!r}", EXIT_IO)
    merged = json.loads(json.dumps(DEFAULT_MBRL_CONFIG))
    for key, value in doc.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key].update(value)
        else:
            merged[key] = value
    gamma = merged["mpc"]["gamma"]
    if not (0.0 <= gamma <= 1.0):
        raise CliError(f"config field mpc.gamma must lie in [0, 1], got {gamma}", EXIT_IO)
    if merged["mpc"]["horizon"] < 1:
        raise CliError("config field mpc.horizon must be at least 1", EXIT_IO)
    if merged["iter_max"] < 1:
        raise CliError("config field iter_max must be at least 1", EXIT_IO)
    return merged


def cmd_mbrl(args, client: httpx.Client) -> int:
    config_doc = dict(DEFAULT_MBRL_CONFIG)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config not found: {path}", EXIT_IO)
        try:
            config_doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"config is not valid JSON: {exc}", EXIT_IO)
    config = _validated_mbrl_config(config_doc)
    out_dir = Path(args.out)
    _write_manifest(out_dir, "mbrl", config, args.seed)
    request = dict(config)
    request.pop("version", None)
    request["seed"] = args.seed
    doc = _post(client, "/v1/mbrl/run", request)
    (out_dir / "runlog.csv").write_text(doc["runlog_csv"])
    (out_dir / "dataset.csv").write_text(doc["dataset_csv"])
    for iteration, model in doc["snapshots"].items():
        (out_dir / f"model_iter_{iteration}.json").write_text(json.dumps(model) + "\n")
    _write_final_trace(out_dir, doc["dataset_csv"], config)
    last = doc["runlog"][-1]
    print(f"completed {len(doc['runlog'])} iterations")
    print(
        f"final zones: {last['tir_low']:.2f}% low / {last['tir_in_range']:.2f}% in "
        f"range / {last['tir_high']:.2f}% high"
    )
    return EXIT_OK


def cmd_uci(args, client: httpx.Client) -> int:
    in_dir = Path(args.input)
    out_dir = Path(args.out)
    if not in_dir.is_dir():
        raise CliError(f"input directory not found: {in_dir}", EXIT_IO)
    files = sorted(p for p in in_dir.iterdir() if p.is_file())
    if not files:
        raise CliError(f"no patient files in {in_dir}", EXIT_DOMAIN)
    payload = {
        "files": [{"patient": p.name, "content": p.read_text()} for p in files]
    }
    _write_manifest(out_dir, "uci", {"input": str(in_dir), "files": len(files)}, None)
    doc = _post(client, "/v1/uci/analyze", payload)
    for result in doc["results"]:
        (out_dir / f"{result['patient']}.memory.json").write_text(
            json.dumps(
                {
                    "patient": result["patient"],
                    "alpha": result["alpha"],
                    "hurst": result["hurst"],
                    "slope": result["slope"],
                    "points": result["points"],
                },
            )
            + "\n"
        )
    (out_dir / "summary.csv").write_text(doc["summary_csv"])
    for failure in doc["failures"]:
        print(f"skipped {failure['patient']}: {failure['error']}", file=sys.stderr)
    print(f"analyzed {len(doc['results'])} of {len(files)} patients")
    if not doc["results"]:
        raise CliError("no patient could be analyzed", EXIT_DOMAIN)
    return EXIT_OK


def cmd_theory(args, client: httpx.Client) -> int:
    if args.n < 1:
        raise CliError("--n must be at least 1", EXIT_IO)
    out_dir = Path(args.out)
    config = {"count": args.n, "max_states": 4, "max_actions": 2, "max_horizon": 4}
    _write_manifest(out_dir, "theory", config, args.seed)
    doc = _post(client, "/v1/theory/run", {**config, "seed": args.seed})
    (out_dir / "bounds.csv").write_text(doc["csv"])
    if doc["violations"]:
        print(f"bound violated for instance seeds: {doc['violations']}", file=sys.stderr)
        return EXIT_VIOLATION
    print(f"{len(doc['rows'])} bound checks, no violations")
    return EXIT_OK


def cmd_serve(args, client: httpx.Client) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracrl",
        description="Long-memory model-based RL experiments and controller service",
    )
    parser.add_argument("--server", default=None, help="URL of a remote service; default runs in-process")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="estimate a fractional model from an episode CSV")
    p_fit.add_argument("--data", required=True, help="episode dataset CSV")
    p_fit.add_argument("--out", required=True, help="output model JSON path")
    p_fit.set_defaults(func=cmd_fit)

    p_mbrl = sub.add_parser("mbrl", help="run the on-policy model-improvement loop")
    p_mbrl.add_argument("--config", default=None, help="JSON config (defaults used if omitted)")
    p_mbrl.add_argument("--out", required=True, help="output artifacts directory")
    p_mbrl.add_argument("--seed", type=int, default=0)
    p_mbrl.set_defaults(func=cmd_mbrl)

    p_uci = sub.add_parser("uci", help="long-memory analysis of patient record files")
    p_uci.add_argument("--in", dest="input", required=True, help="directory of patient files")
    p_uci.add_argument("--out", required=True, help="output directory")
    p_uci.set_defaults(func=cmd_uci)

    p_theory = sub.add_parser("theory", help="randomized performance-bound verification")
    p_theory.add_argument("--n", type=int, default=1000, help="instance count")
    p_theory.add_argument("--seed", type=int, default=0)
    p_theory.add_argument("--out", required=True, help="output directory")
    p_theory.set_defaults(func=cmd_theory)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with make_client(args.server) as client:
            return args.func(args, client)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
