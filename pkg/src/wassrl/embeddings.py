"""Trajectory embeddings into a metric space, and the gridworld target measure."""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass

import numpy as np

from wassrl.envs import MOVES, GridworldSpec
from wassrl.measures import CostKind, DiscreteMeasure, pairwise_cost
from wassrl.rl_core import Trajectory


class EmbeddingKind(str, enum.Enum):
    VISIT_DISTRIBUTION = "visit_distribution"
    MEAN_X = "mean_x"
    FINAL_X = "final_x"


@dataclass(frozen=True)
class EmbeddingSpec:
    kind: EmbeddingKind = EmbeddingKind.VISIT_DISTRIBUTION
    cost_kind: CostKind = CostKind.L1
    # Grid shape (rows, cols) for visit distributions; cells are indexed row-major.
    grid_shape: tuple[int, int] | None = None
    # Multiplies the ground cost; any positive multiple of a metric is a metric.
    cost_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", EmbeddingKind(self.kind))
        object.__setattr__(self, "cost_kind", CostKind(self.cost_kind))
        if not self.cost_scale > 0:
            raise ValueError("cost_scale must be positive")
        if self.kind is EmbeddingKind.VISIT_DISTRIBUTION and self.grid_shape is None:
            raise ValueError("visit-distribution embeddings need grid_shape")

    @property
    def dim(self) -> int:
        if self.kind is EmbeddingKind.VISIT_DISTRIBUTION:
            return int(self.grid_shape[0] * self.grid_shape[1])
        return 1

    def cost(self, xs, ys) -> np.ndarray:
        """Ground cost matrix between embedded points."""
        return self.cost_scale * pairwise_cost(xs, ys, self.cost_kind)


def embed(spec: EmbeddingSpec, tau: Trajectory) -> np.ndarray:
    """Map a trajectory (all visited states, final one included) to a point."""
    states = tau.states
    if states.shape[0] == 0:
        raise ValueError("cannot embed an empty trajectory")
    if spec.kind is EmbeddingKind.VISIT_DISTRIBUTION:
        rows, cols = spec.grid_shape
        if states.shape[1] != 2:
            raise ValueError("visit distributions need (row, col) grid states")
        cells = states.astype(int)
        if np.any(cells != states) or np.any(cells < 0) or np.any(cells[:, 0] >= rows) or np.any(cells[:, 1] >= cols):
            raise ValueError("trajectory states are not cells of the grid")
        counts = np.bincount(cells[:, 0] * cols + cells[:, 1], minlength=rows * cols)
        return counts / states.shape[0]
    if spec.kind is EmbeddingKind.MEAN_X:
        return np.array([states[:, 0].mean()])
    return np.array([states[-1, 0]])


def embed_batch(spec: EmbeddingSpec, taus) -> np.ndarray:
    return np.stack([embed(spec, tau) for tau in taus])


def _dijkstra(spec: GridworldSpec):
    rows, cols = spec.shape
    dist = np.full((rows, cols), np.inf)
    start = tuple(spec.start)
    dist[start] = 0.0
    heap = [(0.0, start)]
    while heap:
        d, (r, c) = heapq.heappop(heap)
        if d > dist[r, c]:
            continue
        if (r, c) == tuple(spec.goal):
            continue
        for dr, dc in MOVES.values():
            nr, nc = r + dr, c + dc
            if 0 <= nr < rows and 0 <= nc < cols:
                nd = d + 1.0 + spec.heights[nr, nc]
                if nd < dist[nr, nc]:
                    dist[nr, nc] = nd
                    heapq.heappush(heap, (nd, (nr, nc)))
    return dist


def shortest_paths(spec: GridworldSpec, limit: int = 10) -> tuple[float, int, list[list[tuple[int, int]]]]:
    """Cheapest start-to-goal cost, number of cheapest paths, and up to ``limit`` of them."""
    dist = _dijkstra(spec)
    rows, cols = spec.shape
    goal, start = tuple(spec.goal), tuple(spec.start)

    def preds(cell):
        r, c = cell
        out = []
        for dr, dc in MOVES.values():
            pr, pc = r - dr, c - dc
            if 0 <= pr < rows and 0 <= pc < cols and (pr, pc) != goal:
                if np.isclose(dist[pr, pc] + 1.0 + spec.heights[r, c], dist[r, c]):
                    out.append((pr, pc))
        return out

    order = sorted(((dist[r, c], (r, c)) for r in range(rows) for c in range(cols) if np.isfinite(dist[r, c])))
    count = {start: 1}
    for _, cell in order:
        if cell != start:
            count[cell] = sum(count.get(p, 0) for p in preds(cell))
    paths: list[list[tuple[int, int]]] = []

    def walk(cell, suffix):
        if len(paths) >= limit:
            return
        if cell == start:
            paths.append([start, *suffix])
            return
        for p in preds(cell):
            walk(p, [cell, *suffix])

    walk(goal, [])
    return float(dist[goal]), int(count.get(goal, 0)), paths


def path_trajectory(spec: GridworldSpec, path) -> Trajectory:
    """Replay a cell path as a trajectory (actions inferred from consecutive cells)."""
    inverse = {v: k for k, v in MOVES.items()}
    actions, rewards = [], []
    for (r0, c0), (r1, c1) in zip(path[:-1], path[1:]):
        actions.append(inverse[(r1 - r0, c1 - c0)])
        rewards.append(-1.0 - float(spec.heights[r1, c1]))
    return Trajectory(np.asarray(path, dtype=float), np.asarray(actions, dtype=int), np.asarray(rewards),
                      tuple(path[-1]) == tuple(spec.goal))


def target_measure_from_optimal_path(spec: GridworldSpec,
                                     cost_kind: CostKind | str = CostKind.L1) -> DiscreteMeasure:
    """Dirac measure on the visit distribution of the unique cheapest start-to-goal path."""
    cost, count, paths = shortest_paths(spec)
    if count != 1:
        listing = "\n".join(" -> ".join(map(str, p)) for p in paths)
        raise ValueError(f"{count} tied optimal paths of cost {cost:g}; target is ambiguous:\n{listing}")
    emb = EmbeddingSpec(EmbeddingKind.VISIT_DISTRIBUTION, cost_kind, spec.shape)
    return DiscreteMeasure.dirac(embed(emb, path_trajectory(spec, paths[0])))
