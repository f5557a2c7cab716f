"""Time-varying directed graph processes.

Adjacency matrices are plain boolean ndarrays with a zero diagonal; row ``i``
holds the outward edges of node ``i``.  Three process kinds are supported:
a static graph, i.i.d. per-edge failures of a fixed backbone, and an explicit
deterministic frame sequence (optionally cycled).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import GenerationFailed, SequenceExhausted

DEFAULT_MAX_RETRIES = 1000


def as_adjacency(a: np.ndarray | Sequence) -> np.ndarray:
    """Validate and normalize an adjacency matrix to a boolean array."""
    arr = np.asarray(a)
    arr = arr.astype(bool)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("adjacency must have at least one node")
    if np.diagonal(arr).any():
        raise ValueError("adjacency diagonal must be zero (no self-edges)")
    return arr


@dataclass(eq=False)
class StaticGraph:
    """The same adjacency at every tick."""

    backbone: np.ndarray

    def __post_init__(self) -> None:
        self.backbone = as_adjacency(self.backbone)

    @property
    def n(self) -> int:
        return self.backbone.shape[0]


@dataclass(eq=False)
class IidFailureGraph:
    """Each backbone edge independently survives with probability 1 - p_fail.

    Failures are drawn fresh per tick and per direction, so realized graphs
    are generally asymmetric even for a symmetric backbone.
    """

    backbone: np.ndarray
    p_fail: float
    edges: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.backbone = as_adjacency(self.backbone)
        self.p_fail = float(self.p_fail)
        if not 0.0 <= self.p_fail <= 1.0:
            raise ValueError(f"p_fail must be in [0, 1], got {self.p_fail}")
        # row-major edge enumeration: canonical order for stream consumption
        self.edges = np.argwhere(self.backbone)

    @property
    def n(self) -> int:
        return self.backbone.shape[0]


@dataclass(eq=False)
class DeterministicSequence:
    """An explicit list of adjacency frames, optionally repeated forever."""

    frames: list[np.ndarray]
    cycle: bool = False

    def __post_init__(self) -> None:
        if not self.frames:
            raise ValueError("frame sequence must be nonempty")
        self.frames = [as_adjacency(f) for f in self.frames]
        n = self.frames[0].shape[0]
        for k, f in enumerate(self.frames):
            if f.shape[0] != n:
                raise ValueError(f"frame {k} has {f.shape[0]} nodes, expected {n}")

    @property
    def n(self) -> int:
        return self.frames[0].shape[0]


GraphSpec = Union[StaticGraph, IidFailureGraph, DeterministicSequence]


def next_adjacency(spec: GraphSpec, t: int, rng: np.random.Generator) -> np.ndarray:
    """The adjacency in force at tick ``t``.

    For IidFailureGraph this consumes exactly one uniform block of size
    ``len(spec.edges)`` from ``rng``; the other kinds consume nothing.
    """
    if isinstance(spec, StaticGraph):
        return spec.backbone.copy()
    if isinstance(spec, IidFailureGraph):
        u = rng.random(len(spec.edges))
        present = u < (1.0 - spec.p_fail)
        a = np.zeros_like(spec.backbone)
        kept = spec.edges[present]
        a[kept[:, 0], kept[:, 1]] = True
        return a
    if isinstance(spec, DeterministicSequence):
        if spec.cycle:
            return spec.frames[t % len(spec.frames)].copy()
        if t >= len(spec.frames):
            raise SequenceExhausted(f"no frame for t={t}; sequence has {len(spec.frames)}")
        return spec.frames[t].copy()
    raise TypeError(f"unknown graph spec {type(spec).__name__}")


def _reachable_from(a: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(a.shape[0], dtype=bool)
    seen[start] = True
    frontier = seen.copy()
    while frontier.any():
        nxt = a[frontier].any(axis=0) & ~seen
        seen |= nxt
        frontier = nxt
    return seen


def is_strongly_connected(a: np.ndarray) -> bool:
    """True iff every ordered node pair is joined by a directed path."""
    a = np.asarray(a, dtype=bool)
    if a.shape[0] == 1:
        return True
    return bool(_reachable_from(a, 0).all() and _reachable_from(a.T, 0).all())


def relative_degree(a: np.ndarray) -> float:
    """Directed edge count over n(n-1), the number of possible edges."""
    a = as_adjacency(a)
    n = a.shape[0]
    if n < 2:
        raise ValueError("relative degree needs at least two nodes")
    return float(a.sum()) / (n * (n - 1))


def generate_geometric_backbone(
    n: int,
    radius: float,
    rng: np.random.Generator,
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> np.ndarray:
    """A strongly connected geometric graph on uniform points in the unit square.

    Points are resampled wholesale until the bidirectional radius graph is
    strongly connected, keeping the geometric distribution clean.
    """
    if n < 2:
        raise ValueError("need at least two nodes")
    if radius <= 0:
        raise ValueError("radius must be positive")
    for _ in range(max_retries):
        pts = rng.random((n, 2))
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        a = dist < radius
        np.fill_diagonal(a, False)
        if is_strongly_connected(a):
            return a
    raise GenerationFailed(f"no strongly connected geometric graph in {max_retries} tries")


def generate_backbone_with_degree(
    n: int,
    target_degree: float,
    rng: np.random.Generator,
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> tuple[np.ndarray, float]:
    """Geometric backbone whose relative degree matches ``target_degree``.

    For each sampled point set the radius is placed between order statistics
    of the pairwise distances, so the realized relative degree differs from
    the target by at most one edge pair.  Returns ``(adjacency, radius)``.
    """
    if n < 2:
        raise ValueError("need at least two nodes")
    if not 0.0 < target_degree <= 1.0:
        raise ValueError("target relative degree must be in (0, 1]")
    pairs_wanted = int(round(target_degree * n * (n - 1) / 2.0))
    pairs_wanted = max(1, min(pairs_wanted, n * (n - 1) // 2))
    for _ in range(max_retries):
        pts = rng.random((n, 2))
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        upper = np.sort(dist[np.triu_indices(n, k=1)])
        if pairs_wanted >= len(upper):
            radius = upper[-1] * (1.0 + 1e-9)
        else:
            radius = (upper[pairs_wanted - 1] + upper[pairs_wanted]) / 2.0
        a = dist < radius
        np.fill_diagonal(a, False)
        if is_strongly_connected(a):
            return a, float(radius)
    raise GenerationFailed(
        f"no strongly connected backbone at relative degree {target_degree} in {max_retries} tries"
    )


def window_union_connected(frames: Sequence[np.ndarray], b: int) -> bool:
    """True iff every complete length-``b`` window has a strongly connected edge union."""
    if b < 1:
        raise ValueError("window size must be >= 1")
    frames = [np.asarray(f, dtype=bool) for f in frames]
    if len(frames) < b:
        raise ValueError(f"need at least {b} frames, got {len(frames)}")
    for start in range(len(frames) - b + 1):
        union = frames[start]
        for f in frames[start + 1 : start + b]:
            union = union | f
        if not is_strongly_connected(union):
            return False
    return True


def sequentially_connected_with_self_loops(frames: Sequence[np.ndarray], i: int, j: int) -> bool:
    """True iff some node path reaches ``j`` from ``i`` stepping through the frames in order.

    Step ``k`` either follows an edge of frame ``k`` or pauses at the current
    node, and the path may use at most ``len(frames)`` steps.
    """
    if not frames:
        raise ValueError("need at least one frame")
    n = np.asarray(frames[0]).shape[0]
    reach = np.zeros(n, dtype=bool)
    reach[i] = True
    if reach[j]:
        return True
    for f in frames:
        f = np.asarray(f, dtype=bool)
        reach = reach | f[reach].any(axis=0)
        if reach[j]:
            return True
    return False


def sequential_reachability(frames: Sequence[np.ndarray]) -> np.ndarray:
    """All-pairs matrix of sequential connectivity with self-loops over ``frames``."""
    n = np.asarray(frames[0]).shape[0]
    reach = np.eye(n, dtype=bool)
    for f in frames:
        f = np.asarray(f, dtype=bool)
        reach = reach | (reach.astype(np.uint8) @ f.astype(np.uint8) > 0)
    return reach


def write_adjacency(path, a: np.ndarray) -> None:
    np.savetxt(path, as_adjacency(a).astype(int), fmt="%d")


def read_adjacency(path) -> np.ndarray:
    return as_adjacency(np.atleast_2d(np.loadtxt(path)))


def write_frames_csv(path, frames: Sequence[np.ndarray]) -> None:
    """Edge-list export, one row per edge: t, from, to."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "from", "to"])
        for t, frame in enumerate(frames):
            for src, dst in np.argwhere(np.asarray(frame, dtype=bool)):
                writer.writerow([t, int(src), int(dst)])


def read_frames_csv(path, n: int, count: int | None = None) -> list[np.ndarray]:
    """Load an edge-list CSV into adjacency frames on ``n`` nodes.

    ``count`` forces the number of frames; otherwise it is one past the
    largest ``t`` present (trailing all-empty frames need an explicit count).
    """
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append((int(row["t"]), int(row["from"]), int(row["to"])))
    n_frames = count if count is not None else (max((t for t, _, _ in rows), default=-1) + 1)
    if n_frames < 1:
        raise ValueError(f"{path}: no frames")
    frames = [np.zeros((n, n), dtype=bool) for _ in range(n_frames)]
    for t, src, dst in rows:
        if t >= n_frames:
            raise ValueError(f"{path}: edge at t={t} beyond frame count {n_frames}")
        frames[t][src, dst] = True
    return [as_adjacency(f) for f in frames]
