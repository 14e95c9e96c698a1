"""Temporal-walk counts between node pairs, maintained incrementally.

``r[j -> u][l]`` is the number of walks of length ``l`` from ``j`` to ``u``
over undirected events with strictly increasing timestamps.  An event
``(u, v, t)`` extends every walk ending at ``v`` (built from events before
``t``) to ``u``, and vice versa.
"""

from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np


class PositionalTable:
    def __init__(self, depth: int = 2, cap: int | None = 64):
        if depth < 0:
            raise ValueError("walk depth must be >= 0")
        self.depth = depth
        self.cap = cap
        # rows[u][j] -> counts of walks j -> u
        self.rows: dict[int, dict[int, np.ndarray]] = {}
        self._group_time = -np.inf
        # row copies taken before the first update at the current timestamp,
        # so events sharing a timestamp never chain through each other
        self._pre: dict[int, dict[int, np.ndarray]] = {}

    def _base(self, u: int) -> dict[int, np.ndarray]:
        row = self.rows.get(u)
        if row is None:
            e = np.zeros(self.depth + 1)
            e[0] = 1.0
            row = self.rows[u] = {u: e}
        return row

    def _snapshot(self, u: int) -> dict[int, np.ndarray]:
        pre = self._pre.get(u)
        if pre is None:
            pre = self._pre[u] = {j: c.copy() for j, c in self._base(u).items()}
        return pre

    def update_on_event(self, u: int, v: int, t: float) -> None:
        if t < self._group_time:
            raise ValueError(f"event at t={t} precedes previous event at t={self._group_time}")
        if t > self._group_time:
            self._group_time = t
            self._pre = {}
        old_u, old_v = self._snapshot(u), self._snapshot(v)
        if self.depth:
            self._extend(u, old_v)
            if v != u:
                self._extend(v, old_u)
        self._truncate(u)
        self._truncate(v)

    def _extend(self, target: int, walks_to_peer: dict[int, np.ndarray]) -> None:
        row = self._base(target)
        for j, c in walks_to_peer.items():
            cur = row.get(j)
            if cur is None:
                cur = row[j] = np.zeros(self.depth + 1)
            cur[1:] += c[:-1]

    def _truncate(self, u: int) -> None:
        row = self.rows[u]
        if self.cap is None or len(row) <= self.cap:
            return
        # drop the lightest sources first, smaller id first on ties; never the self entry
        others = sorted((float(c.sum()), j) for j, c in row.items() if j != u)
        for _, j in others[: len(row) - self.cap]:
            del row[j]

    def query(self, j: int, u: int) -> np.ndarray:
        row = self.rows.get(u)
        if row is None or j not in row:
            out = np.zeros(self.depth + 1)
            out[0] = float(j == u)
            return out
        return row[j].copy()

    def query_many(self, sources, targets) -> np.ndarray:
        out = np.zeros((len(sources), self.depth + 1))
        # a node with no events still has its empty walk to itself
        out[:, 0] = np.asarray(sources) == np.asarray(targets)
        rows = self.rows
        for i, (j, u) in enumerate(zip(sources, targets)):
            row = rows.get(u)
            if row is not None:
                c = row.get(j)
                if c is not None:
                    out[i] = c
        return out

    def copy(self) -> PositionalTable:
        other = PositionalTable(self.depth, self.cap)
        other.rows = {u: {j: c.copy() for j, c in row.items()} for u, row in self.rows.items()}
        other._group_time = self._group_time
        other._pre = {u: {j: c.copy() for j, c in row.items()} for u, row in self._pre.items()}
        return other

    def to_state(self) -> dict:
        triples = [(u, j, c.tolist()) for u, row in sorted(self.rows.items()) for j, c in sorted(row.items())]
        pre = [(u, j, c.tolist()) for u, row in sorted(self._pre.items()) for j, c in sorted(row.items())]
        return {"depth": self.depth, "cap": self.cap, "group_time": self._group_time,
                "rows": triples, "pre": pre}

    @classmethod
    def from_state(cls, state: dict) -> PositionalTable:
        tab = cls(state["depth"], state["cap"])
        tab._group_time = float(state["group_time"])
        for key, target in (("rows", tab.rows), ("pre", tab._pre)):
            for u, j, c in state[key]:
                target.setdefault(int(u), {})[int(j)] = np.array(c, dtype=np.float64)
        return tab

    def dump_csv(self, path) -> None:
        lines = ["source,target," + ",".join(f"len{i}" for i in range(self.depth + 1))]
        for u, row in sorted(self.rows.items()):
            for j, c in sorted(row.items()):
                lines.append(f"{j},{u}," + ",".join(str(int(x)) for x in c))
        Path(path).write_text("\n".join(lines) + "\n")


def update_on_event(table: PositionalTable, u: int, v: int, t: float) -> None:
    table.update_on_event(u, v, t)


def query(table: PositionalTable, j: int, u: int) -> np.ndarray:
    return table.query(j, u)


def featurize(counts) -> np.ndarray:
    return np.log1p(np.asarray(counts, dtype=np.float64))


def brute_force_walks(events, j: int, u: int, d: int, t: float = np.inf) -> np.ndarray:
    """Count temporal walks from ``j`` to ``u`` by exhaustive enumeration.

    ``events`` is a sequence of ``(src, dst, time)`` (or objects with those
    attributes).  A walk of length ``l`` is a sequence of ``l`` events with
    strictly increasing times, all before ``t``, where consecutive events share
    the current endpoint.  Length 0 is the indicator ``j == u``.
    """
    evs = [(e.src, e.dst, e.time) if hasattr(e, "src") else tuple(e) for e in events]
    evs = [e for e in evs if e[2] < t]
    counts = np.zeros(d + 1)
    counts[0] = float(j == u)

    def walk(node, last_t, length):
        if length == d:
            return
        for a, b, te in evs:
            if te <= last_t:
                continue
            for x, y in ((a, b), (b, a)) if a != b else ((a, b),):
                if x == node:
                    if y == u:
                        counts[length + 1] += 1
                    walk(y, te, length + 1)

    walk(j, -np.inf, 0)
    return counts


def brute_force_table(events, nodes, d: int, t: float = np.inf) -> dict[tuple[int, int], np.ndarray]:
    return {(j, u): brute_force_walks(events, j, u, d, t) for j, u in itertools.product(nodes, nodes)}
