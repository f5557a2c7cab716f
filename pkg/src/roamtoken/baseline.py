"""Consensus-plus-innovations baseline estimator.

Every agent keeps its own estimate and mixes a neighbor-disagreement term with
a local innovation correction under separately decaying gains:

    s_i(t+1) = s_i(t) - beta(t) * sum_{l in out(i, t)} (s_i(t) - s_l(t))
                      + alpha(t) * G_i (y_i(t) - H_i s_i(t))

with alpha(t) = a / (t+1)^tau1 and beta(t) = b / (t+1)^tau2.  The per-agent
gain ``G_i`` is the identity by default or a constant matrix per agent.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._streams import SeedLike
from .graphs import GraphSpec
from .observation import GlobalModel, MeasurementBatch


@dataclass(eq=False)
class CiConfig:
    """Gain schedule and mixing weights for one consensus+innovations run.

    The default admissible range 0 < tau2 < tau1 <= 1 keeps the innovation
    gain decaying strictly faster than the consensus gain.
    """

    a: float
    b: float
    tau1: float
    tau2: float
    gain_mode: str | Sequence[np.ndarray] = "identity"

    def __post_init__(self) -> None:
        if self.a <= 0:
            raise ValueError("a must be > 0")
        if self.b < 0:
            raise ValueError("b must be >= 0")
        if not 0.0 < self.tau2 < self.tau1 <= 1.0:
            raise ValueError(
                f"(tau1, tau2) = ({self.tau1}, {self.tau2}) outside 0 < tau2 < tau1 <= 1"
            )
        if isinstance(self.gain_mode, str):
            if self.gain_mode != "identity":
                raise ValueError(f"unknown gain mode {self.gain_mode!r}")
        else:
            self.gain_mode = [np.asarray(g, dtype=float) for g in self.gain_mode]

    def alpha(self, t: int) -> float:
        return self.a / (t + 1) ** self.tau1

    def beta(self, t: int) -> float:
        return self.b / (t + 1) ** self.tau2

    def gains(self, model: GlobalModel) -> list[np.ndarray]:
        if isinstance(self.gain_mode, str):
            return [np.eye(model.dim) for _ in model.agents]
        if len(self.gain_mode) != model.n_agents:
            raise ValueError("need one gain matrix per agent")
        return list(self.gain_mode)


@dataclass(eq=False)
class CiNetworkState:
    """All agents' current estimates, one row per agent."""

    estimates: np.ndarray

    def __post_init__(self) -> None:
        self.estimates = np.atleast_2d(np.asarray(self.estimates, dtype=float))

    @classmethod
    def zeros(cls, n_agents: int, dim: int) -> "CiNetworkState":
        return cls(np.zeros((n_agents, dim)))


def ci_step(
    state: CiNetworkState,
    model: GlobalModel,
    a: np.ndarray,
    batch: MeasurementBatch,
    cfg: CiConfig,
    t: int,
) -> CiNetworkState:
    """One synchronous update of every agent's estimate.

    Neighbors are the out-neighbors in the current adjacency (information
    flows along directed edges).
    """
    s = state.estimates
    adj = np.asarray(a, dtype=float)
    deg = adj.sum(axis=1)
    consensus = deg[:, None] * s - adj @ s
    innovation = np.zeros_like(s)
    gains = cfg.gains(model)
    for i, agent in enumerate(model.agents):
        resid = batch.ys[i] - agent.H @ s[i]
        innovation[i] = gains[i] @ (agent.W @ resid)
    new = s - cfg.beta(t) * consensus + cfg.alpha(t) * innovation
    return CiNetworkState(new)


@dataclass(eq=False)
class GridSearchResult:
    best: CiConfig
    curve: "np.ndarray"
    scores: list[tuple[CiConfig, float]]


def grid_search(
    model: GlobalModel,
    spec: GraphSpec,
    grid: dict[str, Sequence[float]],
    trials: int,
    horizon: int,
    seed: SeedLike | int = 0,
    gain_mode: str | Sequence[np.ndarray] = "identity",
) -> GridSearchResult:
    """Pick the gain parameters with the best network error at the horizon.

    Every candidate is evaluated on the same per-trial noise and graph draws,
    so the comparison is paired and the result is deterministic given the
    seed.  Diverged candidates score +inf and can never win.
    """
    from .engine import run_ci_trials

    keys = ("a", "b", "tau1", "tau2")
    missing = [k for k in keys if k not in grid or not len(grid[k])]
    if missing:
        raise ValueError(f"grid is missing values for: {missing}")
    theta_sq = float(model.theta @ model.theta)
    best_cfg, best_curve, best_score = None, None, math.inf
    scores: list[tuple[CiConfig, float]] = []
    for a, b, tau1, tau2 in itertools.product(*(grid[k] for k in keys)):
        cfg = CiConfig(a=a, b=b, tau1=tau1, tau2=tau2, gain_mode=gain_mode)
        result = run_ci_trials(
            model, spec, cfg, horizon=horizon, trials=trials, master_seed=seed,
            raise_on_nonfinite=False,
        )
        if result.diverged:
            score = math.inf
        else:
            curve = result.netavg_sq_err.mean(axis=0) / theta_sq
            score = float(curve[-1])
        scores.append((cfg, score))
        if score < best_score:
            best_cfg, best_score = cfg, score
            best_curve = result.netavg_sq_err.mean(axis=0) / theta_sq
    if best_cfg is None or best_curve is None:
        raise RuntimeError("every grid candidate diverged")
    return GridSearchResult(best=best_cfg, curve=best_curve, scores=scores)
