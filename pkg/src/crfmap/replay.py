"""Label-stratified two-chunk experience store shared by both trainers.

The buffer is a grid of bounded FIFO queues: two quality chunks times one
category per label. Chunk 1 holds experiences whose reward did not beat
the unary-argmin relabeling of the same node in the same state; chunk 2
holds the ones that did, which is where the pairwise and higher-order
terms show up. Batches draw a uniformly random non-empty cell per sample
and then a uniformly random element within it, so label classes stay
balanced regardless of how skewed the episodes were.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Any

import numpy as np


@dataclass
class Transition:
    """One Q-learning sample; states are compact assignment lists."""

    instance_id: int
    state: tuple[tuple[int, int], ...]
    node: int
    label: int
    reward: float
    next_state: tuple[tuple[int, int], ...]
    terminal: bool


@dataclass
class SearchExperience:
    """One tree-search sample: a state and its empirical action distribution."""

    instance_id: int
    state: tuple[tuple[int, int], ...]
    actions: list[tuple[int, int]]
    probs: np.ndarray


class ReplayBuffer:
    """Two chunks x num_labels FIFO cells with balanced sampling."""

    def __init__(self, capacity: int, num_labels: int):
        if capacity < 2 * num_labels:
            raise ValueError("capacity must allow at least one slot per cell")
        self.num_labels = num_labels
        self.per_cell = max(1, capacity // (2 * num_labels))
        self._cells: list[list[deque]] = [
            [deque(maxlen=self.per_cell) for _ in range(num_labels)]
            for _ in range(2)
        ]

    def add(self, item: Any, label: int, boosted: bool) -> None:
        """File ``item`` under (chunk, label); ``boosted`` selects chunk 2."""
        if label < 0 or label >= self.num_labels:
            raise ValueError("label out of range")
        self._cells[1 if boosted else 0][label].append(item)

    def __len__(self) -> int:
        return sum(len(c) for row in self._cells for c in row)

    def cell_sizes(self) -> np.ndarray:
        return np.asarray(
            [[len(c) for c in row] for row in self._cells], dtype=np.int64
        )

    def nonempty_cells(self) -> list[deque]:
        return [c for row in self._cells for c in row if len(c)]

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Any]:
        cells = self.nonempty_cells()
        if not cells:
            raise ValueError("cannot sample from an empty buffer")
        batch = []
        for _ in range(batch_size):
            cell = cells[int(rng.integers(len(cells)))]
            batch.append(cell[int(rng.integers(len(cell)))])
        return batch
