import numpy as np
import pytest
from fastapi.testclient import TestClient

from fracrl.service.app import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def model_payload(n=1, p=1, alphas=(0.5,), A=((0.0,),), B=((1.0,),), mu=(0.0,),
                  Sigma=((0.0,),)):
    return {
        "n": n, "p": p,
        "alphas": list(alphas),
        "A": list(np.asarray(A, dtype=float).ravel()),
        "B": list(np.asarray(B, dtype=float).ravel()),
        "mu": list(mu),
        "Sigma": list(np.asarray(Sigma, dtype=float).ravel()),
    }


def test_health(client):
    doc = client.get("/v1/health").json()
    assert doc["status"] == "ok"


def test_fit_roundtrip(client):
    rng = np.random.default_rng(0)
    states = [[0.0]]
    for _ in range(200):
        states.append([0.9 * states[-1][0] + rng.normal()])
    actions = [[0.0]] * 200
    resp = client.post(
        "/v1/model/fit",
        json={"episodes": [{"states": states, "actions": actions}]},
    )
    assert resp.status_code == 200
    doc = resp.json()
    assert doc["model"]["n"] == 1
    assert doc["report"]["transitions"] == 200
    assert len(doc["report"]["alphas"]) == 1


def test_fit_rejects_empty(client):
    resp = client.post("/v1/model/fit", json={"episodes": []})
    assert resp.status_code == 422


def test_hurst_endpoint(client):
    rng = np.random.default_rng(1)
    resp = client.post("/v1/memory/hurst", json={"series": rng.standard_normal(512).tolist()})
    assert resp.status_code == 200
    doc = resp.json()
    assert abs(doc["hurst"] - 0.5) < 0.25
    assert doc["points"]


def test_hurst_too_short(client):
    resp = client.post("/v1/memory/hurst", json={"series": [1.0, 2.0]})
    assert resp.status_code == 422


def test_qp_endpoint(client):
    resp = client.post(
        "/v1/qp/solve",
        json={
            "P": [[2.0, 0.0], [0.0, 2.0]],
            "q": [0.0, 0.0],
            "Aeq": [[1.0, 0.0]],
            "beq": [1.0],
        },
    )
    doc = resp.json()
    assert doc["status"] == "optimal"
    np.testing.assert_allclose(doc["x"], [1.0, 0.0], atol=1e-6)


def test_mpc_action_endpoint(client):
    payload = {
        "model": model_payload(alphas=[1.0]),
        "history": [[3.0]],
        "config": {
            "horizon": 3,
            "gamma": 0.9,
            "s_min": [-1e9],
            "s_max": [1e9],
            "cost": {
                "reference": [3.0],
                "state_weight": [[1.0]],
                "action_weight": [[0.0]],
            },
        },
        "seed": 0,
    }
    doc = client.post("/v1/mpc/action", json=payload).json()
    assert doc["qp_failed"] is False
    assert abs(doc["action"][0]) < 1e-4
    assert len(doc["planned_states"]) == 3


def test_risk_endpoint(client):
    doc = client.post("/v1/risk/evaluate", json={"bg": [112.52, 50.0]}).json()
    assert doc["risk"][0] < 1e-4
    assert doc["risk"][1] > 10
    assert 112.0 < doc["minimizer"] < 113.0
    assert client.post("/v1/risk/evaluate", json={"bg": [0.0]}).status_code == 422


def test_time_in_range_endpoint(client):
    doc = client.post("/v1/metrics/time-in-range", json={"bg": [60, 100, 200, 100]}).json()
    assert doc == {"below": 25.0, "in_range": 50.0, "above": 25.0}


def test_theory_endpoint(client):
    doc = client.post("/v1/theory/run", json={"count": 5, "seed": 3}).json()
    assert len(doc["rows"]) == 10
    assert doc["violations"] == []
    assert doc["csv"].startswith("seed,kind")


def test_uci_endpoint(client):
    lines = []
    rng = np.random.default_rng(0)
    bg = 120 + 20 * np.cumsum(rng.standard_normal(128)) * 0.3
    day, minutes = 1, 0
    for value in bg:
        hh, mm = divmod(minutes, 60)
        lines.append(f"01-{day:02d}-1991\t{hh}:{mm:02d}\t58\t{value:.0f}")
        minutes += 30
        if minutes >= 1440:
            minutes -= 1440
            day += 1
    content = "\n".join(lines)
    doc = client.post(
        "/v1/uci/analyze",
        json={"files": [
            {"patient": "p1", "content": content},
            {"patient": "bad", "content": "only\tthree\tcols"},
        ]},
    ).json()
    assert len(doc["results"]) == 1
    assert doc["results"][0]["patient"] == "p1"
    assert len(doc["failures"]) == 1
    assert doc["summary_csv"].startswith("patient,alpha,hurst")


def test_mbrl_endpoint_small(client):
    payload = {
        "plant": {"kind": "minimal-model"},
        "mpc": {
            "horizon": 5,
            "gamma": 0.9,
            "s_min": [70.0],
            "s_max": [180.0],
            "cost": {
                "reference": [112.5],
                "state_weight": [[1.0]],
                "action_weight": [[10.0]],
            },
            "action_min": [0.0],
            "action_max": [0.25],
        },
        "iter_max": 2,
        "episode_steps": 24,
        "seed": 0,
        "seed_episode_count": 2,
        "seed_episode_steps": 48,
        "qp_eps_abs": 1e-4,
    }
    doc = client.post("/v1/mbrl/run", json=payload).json()
    assert len(doc["runlog"]) == 2
    assert doc["runlog_csv"].count("\n") == 3  # header + 2 rows
    assert "2" in doc["snapshots"]
    assert doc["dataset_csv"].startswith("episode,provenance")


def test_mbrl_endpoint_validates_plant(client):
    payload = {
        "plant": {"kind": "no-such-plant"},
        "mpc": {
            "horizon": 2, "gamma": 0.9, "s_min": [70.0], "s_max": [180.0],
            "cost": {"reference": [112.5], "state_weight": [[1.0]],
                     "action_weight": [[1.0]]},
            "action_min": [0.0], "action_max": [0.1],
        },
        "iter_max": 1,
        "episode_steps": 4,
    }
    assert client.post("/v1/mbrl/run", json=payload).status_code == 422
