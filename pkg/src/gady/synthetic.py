"""Synthetic planted-community temporal graphs for smoke runs and acceptance checks."""

from __future__ import annotations

import numpy as np

from .numerics import Rng
from .tgraph import EventStore


def community_stream(num_nodes: int = 100, num_events: int = 6000, communities: int = 2,
                     seed: int = 0, time_step: float = 1.0) -> tuple[EventStore, np.ndarray]:
    """Events between uniformly drawn node pairs inside the same community.

    Nodes are split into equal contiguous blocks; timestamps are
    ``time_step * i`` plus sub-step jitter so they are distinct and sorted.
    Returns the store and the per-node community ids.
    """
    rng = Rng(seed)
    member = np.arange(num_nodes) * communities // num_nodes
    groups = [np.flatnonzero(member == c) for c in range(communities)]
    comm = rng.integers(0, communities, num_events)
    src = np.empty(num_events, dtype=np.int64)
    dst = np.empty(num_events, dtype=np.int64)
    for i, c in enumerate(comm):
        a, b = rng.gen.choice(groups[c], 2, replace=False)
        src[i], dst[i] = a, b
    t = (np.arange(num_events) + rng.uniform(0.0, 0.5, num_events)) * time_step
    return EventStore(src, dst, t, num_nodes), member
