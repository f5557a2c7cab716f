"""Token transition rules and the chain statistics behind the convergence rates.

A transition rule maps an adjacency matrix to a row-stochastic matrix whose
off-diagonal support is contained in the graph's edges.  Nodes with no
outgoing edge hold the token (probability one on the diagonal), which keeps
the token alive on arbitrary realizations and reduces to the plain rule
whenever the out-degree is positive.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import UnsupportedProcess
from .graphs import (
    DeterministicSequence,
    GraphSpec,
    IidFailureGraph,
    StaticGraph,
    as_adjacency,
    is_strongly_connected,
    next_adjacency,
)

ROW_SUM_TOL = 1e-12
DEFAULT_MEAN_SAMPLES = 100_000
MAX_EXACT_ROW_EDGES = 20


@dataclass(frozen=True)
class OutDegreeReciprocal:
    """Uniform over the currently available out-neighbors."""


@dataclass(frozen=True)
class Lazy:
    """Holds the token with probability ``delta_self``; rest spread uniformly.

    A positive floor on the diagonal is what the windowed-connectivity
    convergence results require.
    """

    delta_self: float

    def __post_init__(self) -> None:
        if not 0.0 < self.delta_self < 1.0:
            raise ValueError(f"delta_self must be in (0, 1), got {self.delta_self}")


TransitionRule = Union[OutDegreeReciprocal, Lazy]


@dataclass(frozen=True)
class TokenPosition:
    node: int
    t: int


def apply_rule(rule: TransitionRule, a: np.ndarray) -> np.ndarray:
    """The row-stochastic transition matrix induced by ``rule`` on adjacency ``a``."""
    a = as_adjacency(a)
    n = a.shape[0]
    out = a.sum(axis=1)
    q = np.zeros((n, n))
    has_out = out > 0
    if isinstance(rule, OutDegreeReciprocal):
        q[has_out] = a[has_out] / out[has_out, None]
    elif isinstance(rule, Lazy):
        factor = (1.0 - rule.delta_self) / np.where(has_out, out, 1)
        q[has_out] = a[has_out] * factor[has_out, None]
        q[has_out, np.arange(n)[has_out]] = rule.delta_self
    else:
        raise TypeError(f"unknown transition rule {type(rule).__name__}")
    q[~has_out, np.arange(n)[~has_out]] = 1.0
    dev = np.abs(q.sum(axis=1) - 1.0).max()
    if dev > ROW_SUM_TOL:
        raise RuntimeError(f"transition rows deviate from stochastic by {dev:.3e}")
    return q


def rule_floor(rule: TransitionRule, n: int) -> float:
    """Guaranteed lower bound on any positive entry the rule can produce."""
    if n <= 1:
        return 1.0
    if isinstance(rule, OutDegreeReciprocal):
        return 1.0 / (n - 1)
    if isinstance(rule, Lazy):
        return min(rule.delta_self, (1.0 - rule.delta_self) / (n - 1))
    raise TypeError(f"unknown transition rule {type(rule).__name__}")


def chain_floor(q: np.ndarray) -> float:
    """Minimum positive off-diagonal transition weight of a stochastic matrix.

    This is the per-step floor along any shortest path of the chain, the
    constant that drives the hitting-time envelopes.
    """
    q = np.asarray(q, dtype=float)
    off = q[~np.eye(q.shape[0], dtype=bool)]
    positive = off[off > 0]
    if positive.size == 0:
        return 1.0
    return float(positive.min())


def _sample_rows(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Categorical draw per row of cumulative weights; lands on positive entries only."""
    scaled = u * cum[..., -1]
    return (cum <= scaled[..., None]).sum(axis=-1)


def step_token(
    pos: TokenPosition, a: np.ndarray, rule: TransitionRule, rng: np.random.Generator
) -> TokenPosition:
    """Advance the token one tick along the realized adjacency.

    Consumes exactly one uniform from ``rng``.  The destination is verified to
    be an existing edge or a sanctioned self-hold.
    """
    q = apply_rule(rule, a)
    cum = np.cumsum(q[pos.node])
    u = rng.random()
    nxt = int(_sample_rows(cum, np.asarray(u)))
    if nxt != pos.node and not a[pos.node, nxt]:
        raise RuntimeError(f"token jumped a nonexistent edge {pos.node}->{nxt}")
    return TokenPosition(nxt, pos.t + 1)


def mean_transition_matrix(
    spec: GraphSpec,
    rule: TransitionRule,
    samples: int = DEFAULT_MEAN_SAMPLES,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Average transition matrix of the graph process under ``rule``.

    Static graphs give the exact matrix; i.i.d. failure processes are
    estimated by Monte Carlo over ``samples`` realizations.  Undefined for
    deterministic sequences.
    """
    if isinstance(spec, StaticGraph):
        return apply_rule(rule, spec.backbone)
    if isinstance(spec, DeterministicSequence):
        raise UnsupportedProcess("mean transition matrix is undefined for deterministic sequences")
    if not isinstance(spec, IidFailureGraph):
        raise TypeError(f"unknown graph spec {type(spec).__name__}")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    total = np.zeros((spec.n, spec.n))
    for _ in range(samples):
        total += apply_rule(rule, next_adjacency(spec, 0, rng))
    q = total / samples
    dev = np.abs(q.sum(axis=1) - 1.0).max()
    if dev > 1e-9:
        raise RuntimeError(f"mean transition rows deviate from stochastic by {dev:.3e}")
    return q


def exact_mean_transition_matrix(spec: GraphSpec, rule: TransitionRule) -> np.ndarray:
    """Exact average transition matrix by enumerating edge-failure outcomes.

    Rows are independent (each depends only on that node's outgoing edges), so
    the enumeration runs per row over its 2^out-degree outcomes; rows with more
    than MAX_EXACT_ROW_EDGES outgoing backbone edges are rejected.
    """
    if isinstance(spec, StaticGraph):
        return apply_rule(rule, spec.backbone)
    if isinstance(spec, DeterministicSequence):
        raise UnsupportedProcess("mean transition matrix is undefined for deterministic sequences")
    if not isinstance(spec, IidFailureGraph):
        raise TypeError(f"unknown graph spec {type(spec).__name__}")
    n = spec.n
    p = spec.p_fail
    q = np.zeros((n, n))
    for i in range(n):
        dests = np.flatnonzero(spec.backbone[i])
        k = len(dests)
        if k > MAX_EXACT_ROW_EDGES:
            raise UnsupportedProcess(
                f"node {i} has {k} outgoing edges; exact enumeration capped at {MAX_EXACT_ROW_EDGES}"
            )
        if k == 0:
            q[i, i] = 1.0
            continue
        for mask in range(1 << k):
            kept = [dests[b] for b in range(k) if mask >> b & 1]
            prob = (1.0 - p) ** len(kept) * p ** (k - len(kept))
            if prob == 0.0:
                continue
            if not kept:
                q[i, i] += prob
            elif isinstance(rule, OutDegreeReciprocal):
                for d in kept:
                    q[i, d] += prob / len(kept)
            elif isinstance(rule, Lazy):
                q[i, i] += prob * rule.delta_self
                for d in kept:
                    q[i, d] += prob * (1.0 - rule.delta_self) / len(kept)
            else:
                raise TypeError(f"unknown transition rule {type(rule).__name__}")
    return q


def is_irreducible(q: np.ndarray) -> bool:
    """True iff the support digraph of the stochastic matrix is strongly connected."""
    q = np.asarray(q, dtype=float)
    support = q > 0
    np.fill_diagonal(support, False)
    return is_strongly_connected(support)


def stationary_distribution(q: np.ndarray) -> np.ndarray:
    """The stationary row vector of an irreducible stochastic matrix."""
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    m = q.T - np.eye(n)
    m[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(m, b)
    if pi.min() < -1e-10:
        raise ValueError("chain is not irreducible: negative stationary mass")
    return np.clip(pi, 0.0, None) / pi.sum()


def bulk_step(
    pos: np.ndarray,
    rows: np.ndarray,
    rule: TransitionRule,
    u: np.ndarray,
) -> np.ndarray:
    """Vectorized token step for many walkers given their realized out-edge rows.

    ``rows[r]`` is the boolean out-edge row of walker ``r``'s current node;
    arithmetic mirrors ``apply_rule`` exactly so scalar and batched paths
    produce identical destinations from identical uniforms.
    """
    walkers, n = rows.shape
    out = rows.sum(axis=1)
    has_out = out > 0
    probs = np.zeros((walkers, n))
    if isinstance(rule, OutDegreeReciprocal):
        probs[has_out] = rows[has_out] / out[has_out, None]
    elif isinstance(rule, Lazy):
        factor = (1.0 - rule.delta_self) / np.where(has_out, out, 1)
        probs[has_out] = rows[has_out] * factor[has_out, None]
        probs[has_out, pos[has_out]] = rule.delta_self
    else:
        raise TypeError(f"unknown transition rule {type(rule).__name__}")
    probs[~has_out, pos[~has_out]] = 1.0
    nxt = _sample_rows(np.cumsum(probs, axis=1), u)
    moved = nxt != pos
    if moved.any() and not rows[moved, nxt[moved]].all():
        raise RuntimeError("token jumped a nonexistent edge in a batched step")
    return nxt


def realized_rows(
    spec: GraphSpec, t: int, pos: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Out-edge rows at the walkers' positions, one independent graph per walker."""
    if isinstance(spec, StaticGraph):
        return spec.backbone[pos]
    if isinstance(spec, DeterministicSequence):
        return next_adjacency(spec, t, rng)[pos]
    if isinstance(spec, IidFailureGraph):
        u = rng.random((len(pos), len(spec.edges)))
        present = u < (1.0 - spec.p_fail)
        src_match = spec.edges[:, 0][None, :] == pos[:, None]
        rows = np.zeros((len(pos), spec.n), dtype=bool)
        sel = present & src_match
        walker_idx, edge_idx = np.nonzero(sel)
        rows[walker_idx, spec.edges[edge_idx, 1]] = True
        return rows
    raise TypeError(f"unknown graph spec {type(spec).__name__}")


def hitting_time_samples(
    spec: GraphSpec,
    rule: TransitionRule,
    target_set: Iterable[int],
    t0: int,
    start: int,
    trials: int,
    horizon: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Empirical survival function of the first entry time into ``target_set``.

    Entry ``t`` of the result is the fraction of trajectories whose first
    visit to the target at or after ``t0`` happens later than ``t``.
    """
    targets = sorted(set(int(v) for v in target_set))
    if not targets:
        raise ValueError("target set must be nonempty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n = spec.n
    target_mask = np.zeros(n, dtype=bool)
    target_mask[targets] = True
    pos = np.full(trials, int(start))
    alive = np.ones(trials, dtype=bool)
    tail = np.zeros(horizon + 1)
    for t in range(horizon + 1):
        if t >= t0:
            alive &= ~target_mask[pos]
        tail[t] = alive.mean()
        if t == horizon:
            break
        rows = realized_rows(spec, t, pos, rng)
        pos = bulk_step(pos, rows, rule, rng.random(trials))
    return tail


@dataclass(frozen=True)
class TailConstants:
    """Exponential envelope ``c1 * exp(-c2 * t)`` for token hitting tails.

    ``epsilon`` is the probability floor for entering any target set within a
    block of ``m`` ticks.  ``c1_alt`` is an alternative (smaller) leading
    constant sometimes quoted for windowed processes; the dominance checks use
    ``c1``, which the blockwise argument actually yields.
    """

    epsilon: float
    m: int
    c1: float
    c2: float
    c1_alt: float


def tail_constants(delta: float, m: int) -> TailConstants:
    """Envelope constants from a per-step floor ``delta`` and block length ``m``."""
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    if m < 1:
        raise ValueError("block length must be >= 1")
    eps = delta**m
    if eps >= 1.0:
        return TailConstants(1.0, m, math.inf, math.inf, 0.0)
    c1 = 1.0 / (1.0 - eps)
    c2 = -math.log1p(-eps) / m
    return TailConstants(eps, m, c1, c2, 1.0 - eps)


def hitting_tail_bound(n: int, delta: float, t: int, t0: int) -> float:
    """Upper bound on P(first target entry after t), from the n-step entry floor.

    Evaluates ``(1 - delta^n) ** ((t - t0)/n - 1)`` clipped to 1 from above.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    if n < 1:
        raise ValueError("n must be >= 1")
    if t < t0:
        raise ValueError("t must be >= t0")
    eps = delta**n
    if eps >= 1.0:
        return 1.0 if t == t0 else 0.0
    expo = (t - t0) / n - 1.0
    return min(1.0, (1.0 - eps) ** expo)


def nonvisit_bound(consts: TailConstants, t: np.ndarray | float) -> np.ndarray:
    """Envelope for the probability a fixed node is still unvisited at ``t``."""
    t = np.asarray(t, dtype=float)
    if not math.isfinite(consts.c1):
        return np.where(t > 0, 0.0, 1.0)
    return np.minimum(1.0, consts.c1 * np.exp(-consts.c2 * t))


def cover_gap_bound(consts: TailConstants, n: int, t: np.ndarray | float) -> np.ndarray:
    """Envelope for the probability that some node is still unvisited at ``t``."""
    return np.minimum(1.0, n * nonvisit_bound(consts, t))


def write_tail_csv(path, ts: Sequence[int], empirical: Sequence[float], bound: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "empirical_tail", "analytic_bound"])
        for t, emp, bnd in zip(ts, empirical, bound):
            writer.writerow([int(t), f"{emp:.17g}", f"{bnd:.17g}"])
