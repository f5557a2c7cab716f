"""Linear measurement model, information matrix, and the centralized oracle.

Each agent ``i`` observes ``y_i(t) = H_i theta + w_i(t)`` with zero-mean noise
of covariance ``C_i``, independent across agents and time.  The centralized
oracle fuses the per-agent running means through the information matrix
``sigma_c = sum_i H_i^T C_i^{-1} H_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._linalg import min_eigenvalue, solve_spd
from .errors import SingularModel

EIGENVALUE_FLOOR = 1e-10
SOLVE_RTOL = 1e-10

NoiseSampler = Callable[[np.random.Generator, tuple[int, ...]], np.ndarray]


@dataclass(eq=False)
class AgentModel:
    """One agent's observation channel.

    ``H`` is the (m_i x L) observation matrix and ``C`` the (m_i x m_i)
    symmetric positive definite noise covariance.  ``B = H^T C^{-1} H`` and
    ``W = H^T C^{-1}`` are cached at construction.
    """

    id: int
    H: np.ndarray
    C: np.ndarray
    B: np.ndarray = field(init=False)
    W: np.ndarray = field(init=False)
    chol_C: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        m = self.H.shape[0]
        if self.C.shape != (m, m):
            raise ValueError(f"agent {self.id}: C must be {m}x{m}, got {self.C.shape}")
        if not np.allclose(self.C, self.C.T, atol=1e-12):
            raise ValueError(f"agent {self.id}: C must be symmetric")
        try:
            self.chol_C = np.linalg.cholesky(self.C)
        except np.linalg.LinAlgError:
            raise ValueError(f"agent {self.id}: C must be positive definite") from None
        cinv_h = cho_solve((self.chol_C, True), self.H, check_finite=False)
        self.W = np.ascontiguousarray(cinv_h.T)
        b = self.H.T @ cinv_h
        self.B = (b + b.T) / 2.0

    @property
    def n_measurements(self) -> int:
        return self.H.shape[0]

    @property
    def dim(self) -> int:
        return self.H.shape[1]


@dataclass(eq=False)
class GlobalModel:
    """The network-wide observation model and true parameter.

    ``noise`` selects the measurement noise: ``"gaussian"`` (default),
    ``"zero"`` (exact deterministic measurements), or any callable drawing
    i.i.d. zero-mean unit-variance samples of a requested shape — samples are
    colored by each agent's covariance factor, so the declared ``C_i`` holds
    for every sampler.
    """

    agents: list[AgentModel]
    theta: np.ndarray
    noise: str | NoiseSampler = "gaussian"
    eig_floor: float = EIGENVALUE_FLOOR
    sigma_c: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if not self.agents:
            raise ValueError("model needs at least one agent")
        self.theta = np.asarray(self.theta, dtype=float).ravel()
        dim = self.theta.size
        for a in self.agents:
            if a.dim != dim:
                raise ValueError(f"agent {a.id}: H has {a.dim} columns, expected {dim}")
        if isinstance(self.noise, str) and self.noise not in ("gaussian", "zero"):
            raise ValueError(f"unknown noise kind {self.noise!r}")
        hth = sum(a.H.T @ a.H for a in self.agents)
        if min_eigenvalue(hth) <= self.eig_floor:
            raise SingularModel(
                "combined observation matrix is not invertible "
                f"(min eigenvalue of sum H_i^T H_i <= {self.eig_floor:g})"
            )
        self.sigma_c = fisher_information(self.agents, floor=self.eig_floor)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def dim(self) -> int:
        return self.theta.size

    @property
    def total_measurements(self) -> int:
        return sum(a.n_measurements for a in self.agents)

    def measurement_slices(self) -> list[slice]:
        """Per-agent slices into the stacked measurement vector."""
        out, start = [], 0
        for a in self.agents:
            out.append(slice(start, start + a.n_measurements))
            start += a.n_measurements
        return out

    def draw_raw_noise(self, rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray | None:
        if self.noise == "zero":
            return None
        if self.noise == "gaussian":
            return rng.standard_normal(shape)
        return np.asarray(self.noise(rng, shape), dtype=float)


@dataclass(eq=False)
class MeasurementBatch:
    """All agents' measurements for one tick."""

    t: int
    ys: list[np.ndarray]


def sample_measurements(model: GlobalModel, t: int, rng: np.random.Generator) -> MeasurementBatch:
    """Draw one measurement per agent: ``y_i = H_i theta + w_i``.

    Consumes exactly one block of ``total_measurements`` raw samples from
    ``rng`` (none in zero-noise mode).
    """
    means = [a.H @ model.theta for a in model.agents]
    raw = model.draw_raw_noise(rng, (model.total_measurements,))
    if raw is None:
        return MeasurementBatch(t, means)
    ys = []
    for a, mean, sl in zip(model.agents, means, model.measurement_slices()):
        ys.append(mean + a.chol_C @ raw[sl])
    return MeasurementBatch(t, ys)


def fisher_information(agents: Sequence[AgentModel], floor: float = EIGENVALUE_FLOOR) -> np.ndarray:
    """Sum of the per-agent information matrices ``B_i``.

    Raises SingularModel when the smallest eigenvalue is at or below ``floor``.
    """
    if not agents:
        raise ValueError("need at least one agent")
    total = np.zeros((agents[0].dim, agents[0].dim))
    for a in agents:
        total += a.B
    total = (total + total.T) / 2.0
    if min_eigenvalue(total) <= floor:
        raise SingularModel(f"information matrix min eigenvalue <= {floor:g}")
    return total


def central_estimate(agents: Sequence[AgentModel], running_means: Sequence[np.ndarray]) -> np.ndarray:
    """The oracle estimate from per-agent measurement running means.

    Solves ``sigma_c x = sum_i W_i ybar_i`` by SPD factorization.
    """
    sigma = fisher_information(agents)
    rhs = np.zeros(agents[0].dim)
    for a, ybar in zip(agents, running_means):
        rhs += a.W @ np.asarray(ybar, dtype=float).ravel()
    try:
        return solve_spd(sigma, rhs, rtol=SOLVE_RTOL)
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        raise SingularModel(f"oracle solve failed: {exc}") from None


def central_solver(agents: Sequence[AgentModel]) -> Callable[[np.ndarray], np.ndarray]:
    """A reusable factored solver mapping stacked right-hand sides to estimates.

    Accepts rhs of shape (L,) or (R, L); used by the batched experiment engine
    so the information matrix is factored once per run.
    """
    sigma = fisher_information(agents)
    factor = cho_factor(sigma, lower=True, check_finite=False)

    def solve(rhs: np.ndarray) -> np.ndarray:
        return cho_solve(factor, np.asarray(rhs, dtype=float).T, check_finite=False).T

    return solve
