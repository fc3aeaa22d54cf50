"""Shared data containers: trajectories, episode datasets, and model parameters."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

MODEL_SCHEMA_VERSION = 1


def _as_matrix(x, rows: int, cols: int, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape != (rows, cols):
        raise ValueError(f"{name} must have shape ({rows}, {cols}), got {a.shape}")
    return a


def validate_alphas(alphas, n: int | None = None) -> np.ndarray:
    """Validate a vector of per-dimension fractional exponents in [0, 1]."""
    a = np.atleast_1d(np.asarray(alphas, dtype=float))
    if a.ndim != 1:
        raise ValueError("fractional exponents must be a 1-d vector")
    if n is not None and a.shape[0] != n:
        raise ValueError(f"expected {n} fractional exponents, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ValueError("fractional exponents must be finite")
    if np.any(a < 0.0) or np.any(a > 1.0):
        raise ValueError(f"fractional exponents must lie in [0, 1], got {a}")
    return a


@dataclass(frozen=True)
class FracModel:
    """Parameter bundle of the linear fractional-difference model.

    The one-step update in each dimension i is

        s_i[k+1] = -sum_{j=1..k+1} psi(alpha_i, j) s_i[k+1-j]
                   + A[i] @ s[k] + B[i] @ a[k] + mu_i + e_i,   e ~ N(0, Sigma).
    """

    alphas: np.ndarray
    A: np.ndarray
    B: np.ndarray
    mu: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        alphas = validate_alphas(self.alphas)
        n = alphas.shape[0]
        A = _as_matrix(self.A, n, n, "A")
        mu = np.asarray(self.mu, dtype=float).reshape(n)
        B = np.asarray(self.B, dtype=float)
        if B.ndim != 2 or B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got shape {B.shape}")
        Sigma = _as_matrix(self.Sigma, n, n, "Sigma")
        if not np.allclose(Sigma, Sigma.T, atol=1e-10):
            raise ValueError("Sigma must be symmetric")
        eig = np.linalg.eigvalsh(0.5 * (Sigma + Sigma.T))
        if eig.min() < -1e-10 * max(1.0, eig.max()):
            raise ValueError("Sigma must be positive semidefinite")
        for name, val in (("alphas", alphas), ("A", A), ("B", B), ("mu", mu), ("Sigma", Sigma)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.alphas.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    def to_json(self) -> str:
        """Serialize to the versioned JSON document (row-major matrices)."""
        doc = {
            "version": MODEL_SCHEMA_VERSION,
            "n": self.n,
            "p": self.p,
            "alphas": self.alphas.tolist(),
            "A": self.A.ravel(order="C").tolist(),
            "B": self.B.ravel(order="C").tolist(),
            "mu": self.mu.tolist(),
            "Sigma": self.Sigma.ravel(order="C").tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "FracModel":
        doc = json.loads(text)
        if doc.get("version") != MODEL_SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema version: {doc.get('version')!r}")
        n, p = int(doc["n"]), int(doc["p"])
        return cls(
            alphas=np.array(doc["alphas"], dtype=float),
            A=np.array(doc["A"], dtype=float).reshape(n, n),
            B=np.array(doc["B"], dtype=float).reshape(n, p),
            mu=np.array(doc["mu"], dtype=float),
            Sigma=np.array(doc["Sigma"], dtype=float).reshape(n, n),
        )


@dataclass(frozen=True)
class StateTrajectory:
    """Time-ordered states (T+1, n) with the actions (T, p) that produced them."""

    states: np.ndarray
    actions: np.ndarray
    dt_seconds: float = 300.0

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        actions = np.asarray(self.actions, dtype=float)
        if actions.size == 0:
            actions = actions.reshape(0, actions.shape[1] if actions.ndim == 2 else 1)
        actions = np.atleast_2d(actions)
        if actions.shape[0] != states.shape[0] - 1:
            raise ValueError(
                f"need exactly len(states)-1 actions to pair transitions, "
                f"got {actions.shape[0]} actions for {states.shape[0]} states"
            )
        states.setflags(write=False)
        actions.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def p(self) -> int:
        return self.actions.shape[1]

    @property
    def transitions(self) -> int:
        return self.actions.shape[0]


@dataclass
class EpisodeDataset:
    """Append-only store of episodes with a provenance tag per episode."""

    episodes: list[StateTrajectory] = field(default_factory=list)
    provenance: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.episodes) != len(self.provenance):
            raise ValueError("one provenance tag per episode required")
        for ep in self.episodes:
            if ep.states.shape[0] < 2:
                raise ValueError("every episode needs at least 2 states")

    def add(self, episode: StateTrajectory, provenance: str) -> None:
        if episode.states.shape[0] < 2:
            raise ValueError("every episode needs at least 2 states")
        self.episodes.append(episode)
        self.provenance.append(provenance)

    def merged_with(self, other: "EpisodeDataset") -> "EpisodeDataset":
        return EpisodeDataset(
            episodes=list(self.episodes) + list(other.episodes),
            provenance=list(self.provenance) + list(other.provenance),
        )

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def total_transitions(self) -> int:
        return sum(ep.transitions for ep in self.episodes)

    def to_csv(self) -> str:
        """One row per timestep; action columns are empty on each final state row."""
        if not self.episodes:
            raise ValueError("cannot serialize an empty dataset")
        n, p = self.episodes[0].n, self.episodes[0].p
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = (
            ["episode", "provenance", "dt_seconds", "k"]
            + [f"s{i}" for i in range(n)]
            + [f"a{j}" for j in range(p)]
        )
        writer.writerow(header)
        for e, (ep, tag) in enumerate(zip(self.episodes, self.provenance)):
            for k in range(ep.states.shape[0]):
                act = (
                    [repr(float(v)) for v in ep.actions[k]]
                    if k < ep.transitions
                    else [""] * p
                )
                writer.writerow(
                    [e, tag, repr(float(ep.dt_seconds)), k]
                    + [repr(float(v)) for v in ep.states[k]]
                    + act
                )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EpisodeDataset":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None:
            raise ValueError("empty dataset file")
        n = sum(1 for h in header if h.startswith("s") and h[1:].isdigit())
        p = sum(1 for h in header if h.startswith("a") and h[1:].isdigit())
        if n == 0:
            raise ValueError("dataset header declares no state columns")
        groups: dict[int, dict] = {}
        for row in reader:
            if not row:
                continue
            e = int(row[0])
            g = groups.setdefault(e, {"tag": row[1], "dt": float(row[2]), "s": [], "a": []})
            g["s"].append([float(v) for v in row[4 : 4 + n]])
            act = row[4 + n : 4 + n + p]
            if act and act[0] != "":
                g["a"].append([float(v) for v in act])
        ds = cls()
        for e in sorted(groups):
            g = groups[e]
            ds.add(
                StateTrajectory(
                    states=np.array(g["s"]), actions=np.array(g["a"]), dt_seconds=g["dt"]
                ),
                g["tag"],
            )
        return ds
