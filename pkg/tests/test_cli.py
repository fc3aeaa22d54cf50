import json

import numpy as np
import pytest

from fracrl.cli import main
from fracrl.data import EpisodeDataset, StateTrajectory
from fracrl.fgn import fgn


def make_dataset_csv(path, seed=0, steps=300):
    rng = np.random.default_rng(seed)
    states = [np.array([0.0])]
    actions = rng.uniform(-1, 1, size=(steps, 1))
    for k in range(steps):
        states.append(0.8 * states[-1] + 0.5 * actions[k] + 0.05 * rng.standard_normal(1))
    ds = EpisodeDataset()
    ds.add(StateTrajectory(states=np.vstack(states), actions=actions), "seed")
    path.write_text(ds.to_csv())


def test_fit_roundtrip(tmp_path):
    data = tmp_path / "data.csv"
    make_dataset_csv(data)
    out = tmp_path / "model.json"
    code = main(["fit", "--data", str(data), "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["n"] == 1
    report = json.loads((tmp_path / "model.report.json").read_text())
    assert report["transitions"] == 300


def test_fit_missing_file(tmp_path):
    out = tmp_path / "model.json"
    code = main(["fit", "--data", str(tmp_path / "nope.csv"), "--out", str(out)])
    assert code == 2
    assert not out.exists()


def test_fit_recovers_known_exponent(tmp_path):
    # synthetic plant with known fractional order: recovered within 0.1
    rng = np.random.default_rng(7)
    from fracrl.fgn import fractionally_differenced_noise

    x = fractionally_differenced_noise(4096, 0.3, rng)
    ds = EpisodeDataset()
    ds.add(
        StateTrajectory(states=x.reshape(-1, 1), actions=np.zeros((x.size - 1, 1))),
        "seed",
    )
    data = tmp_path / "data.csv"
    data.write_text(ds.to_csv())
    out = tmp_path / "model.json"
    assert main(["fit", "--data", str(data), "--out", str(out)]) == 0
    report = json.loads((tmp_path / "model.report.json").read_text())
    assert abs(report["alphas"][0] - 0.3) < 0.1


def test_mbrl_smoke_and_artifacts(tmp_path):
    config = {
        "version": 1,
        "mpc": {
            "horizon": 5,
            "cost": {
                "reference": [112.5],
                "state_weight": [[1.0]],
                "action_weight": [[10.0]],
            },
            "action_max": [0.25],
        },
        "iter_max": 2,
        "episode_steps": 24,
        "seed_episode_count": 2,
        "seed_episode_steps": 48,
        "qp_eps_abs": 1e-4,
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    out = tmp_path / "artifacts"
    code = main(["mbrl", "--config", str(cfg_path), "--out", str(out), "--seed", "3"])
    assert code == 0
    runlog = (out / "runlog.csv").read_text()
    assert len(runlog.strip().split("\n")) == 3  # header + 2 iterations
    manifest = json.loads((out / "run.json").read_text())
    assert manifest["seed"] == 3
    assert manifest["config"]["iter_max"] == 2
    assert (out / "dataset.csv").exists()
    assert (out / "model_iter_2.json").exists()


def test_mbrl_reproducible_bytes(tmp_path):
    config = {
        "version": 1,
        "mpc": {
            "horizon": 4,
            "cost": {
                "reference": [112.5],
                "state_weight": [[1.0]],
                "action_weight": [[10.0]],
            },
            "action_max": [0.25],
        },
        "iter_max": 2,
        "episode_steps": 12,
        "seed_episode_count": 2,
        "seed_episode_steps": 32,
        "qp_eps_abs": 1e-4,
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    logs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["mbrl", "--config", str(cfg_path), "--out", str(out), "--seed", "9"]) == 0
        logs.append((out / "runlog.csv").read_bytes())
    assert logs[0] == logs[1]


def test_mbrl_invalid_gamma(tmp_path):
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps({"version": 1, "mpc": {"gamma": 1.5}}))
    code = main(["mbrl", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert code == 2


def test_uci_directory_flow(tmp_path):
    in_dir = tmp_path / "patients"
    in_dir.mkdir()
    rng = np.random.default_rng(0)
    for name, hurst in (("p1.txt", 0.8), ("p2.txt", 0.7)):
        bg = 130 + 25 * fgn(512, hurst, rng)
        lines = []
        day, minutes = 1, 360
        for v in bg:
            hh, mm = divmod(minutes, 60)
            lines.append(f"01-{day:02d}-1991\t{hh}:{mm:02d}\t58\t{v:.0f}")
            minutes += 120
            if minutes >= 1440:
                minutes -= 1440
                day += 1
        (in_dir / name).write_text("\n".join(lines))
    out = tmp_path / "memory"
    code = main(["uci", "--in", str(in_dir), "--out", str(out)])
    assert code == 0
    summary = (out / "summary.csv").read_text().strip().split("\n")
    assert summary[0] == "patient,alpha,hurst"
    assert len(summary) == 3
    doc = json.loads((out / "p1.txt.memory.json").read_text())
    assert 0.0 <= doc["alpha"] <= 1.0
    assert len(doc["points"]) >= 3


def test_uci_synthetic_long_memory_band(tmp_path):
    in_dir = tmp_path / "patients"
    in_dir.mkdir()
    rng = np.random.default_rng(42)
    bg = 140 + 30 * fgn(2048, 0.8, rng)
    lines = []
    day, minutes = 1, 0
    for v in bg:
        hh, mm = divmod(minutes, 60)
        lines.append(f"01-{day:02d}-1991\t{hh}:{mm:02d}\t58\t{v:.2f}")
        minutes += 15
        if minutes >= 1440:
            minutes -= 1440
            day += 1
    (in_dir / "lm.txt").write_text("\n".join(lines))
    out = tmp_path / "memory"
    assert main(["uci", "--in", str(in_dir), "--out", str(out)]) == 0
    doc = json.loads((out / "lm.txt.memory.json").read_text())
    assert 0.15 <= doc["alpha"] <= 0.45


def test_uci_empty_dir(tmp_path):
    in_dir = tmp_path / "patients"
    in_dir.mkdir()
    code = main(["uci", "--in", str(in_dir), "--out", str(tmp_path / "o")])
    assert code == 1


def test_theory_deterministic_csv(tmp_path):
    outs = []
    for name in ("t1", "t2"):
        out = tmp_path / name
        code = main(["theory", "--n", "6", "--seed", "5", "--out", str(out)])
        assert code == 0
        outs.append((out / "bounds.csv").read_bytes())
    assert outs[0] == outs[1]


def test_theory_validates_count(tmp_path):
    assert main(["theory", "--n", "0", "--out", str(tmp_path / "o")]) == 2


def test_outputs_stay_in_declared_directories(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "only_here"
    assert main(["theory", "--n", "2", "--seed", "1", "--out", str(out)]) == 0
    produced = {p.relative_to(tmp_path).parts[0] for p in tmp_path.rglob("*")}
    assert produced == {"only_here"}
