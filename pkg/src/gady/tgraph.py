"""Chronological event store, dataset ingestion, splits and neighbor queries."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

FORMATS = ("ucimsg", "bitcoin_otc", "email_dnc", "generic_csv")


class Label(IntEnum):
    REAL = 0
    INJECTED = 1
    GENERATED = 2


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class Interaction:
    src: int
    dst: int
    time: float
    edge_feat: tuple[float, ...] = ()
    label: Label = Label.REAL


class EventStore:
    """Time-sorted interactions with symmetric per-node temporal adjacency.

    Events are held column-wise (``src``, ``dst``, ``time``, ``feat``,
    ``label``).  Sorting is stable, so events sharing a timestamp keep their
    insertion order.
    """

    def __init__(self, src, dst, time, num_nodes: int, feat=None, label=None,
                 presorted: bool = False):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        time = np.asarray(time, dtype=np.float64)
        n = len(src)
        if feat is None:
            feat = np.zeros((n, 0))
        feat = np.asarray(feat, dtype=np.float64).reshape(n, -1)
        label = np.zeros(n, dtype=np.int64) if label is None else np.asarray(label, dtype=np.int64)
        if not presorted:
            order = np.argsort(time, kind="stable")
            src, dst, time, feat, label = src[order], dst[order], time[order], feat[order], label[order]
        if n and (src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= num_nodes):
            raise ValueError("node id outside [0, num_nodes)")
        self.src, self.dst, self.time, self.feat, self.label = src, dst, time, feat, label
        self.num_nodes = int(num_nodes)
        self._adj: list[tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None

    def __len__(self) -> int:
        return len(self.src)

    @property
    def feat_dim(self) -> int:
        return self.feat.shape[1]

    @property
    def time_range(self) -> tuple[float, float]:
        if not len(self):
            return (0.0, 0.0)
        return float(self.time[0]), float(self.time[-1])

    def event(self, i: int) -> Interaction:
        return Interaction(int(self.src[i]), int(self.dst[i]), float(self.time[i]),
                           tuple(self.feat[i]), Label(int(self.label[i])))

    def interactions(self) -> list[Interaction]:
        return [self.event(i) for i in range(len(self))]

    def slice(self, start: int, stop: int) -> EventStore:
        return EventStore(self.src[start:stop], self.dst[start:stop], self.time[start:stop],
                          self.num_nodes, self.feat[start:stop], self.label[start:stop],
                          presorted=True)

    def concat(self, other: EventStore) -> EventStore:
        """Merge two stores and re-sort stably (self's events first on ties)."""
        return EventStore(np.concatenate([self.src, other.src]),
                          np.concatenate([self.dst, other.dst]),
                          np.concatenate([self.time, other.time]),
                          max(self.num_nodes, other.num_nodes),
                          np.concatenate([self.feat, other.feat]),
                          np.concatenate([self.label, other.label]))

    @property
    def adjacency(self):
        """Per node: (peers, event indices, times), chronological."""
        if self._adj is None:
            n = len(self)
            nodes = np.concatenate([self.src, self.dst])
            peers = np.concatenate([self.dst, self.src])
            eidx = np.concatenate([np.arange(n), np.arange(n)])
            # self-loops appear once in the node's list
            keep = np.concatenate([np.ones(n, bool), self.src != self.dst])
            nodes, peers, eidx = nodes[keep], peers[keep], eidx[keep]
            order = np.lexsort((eidx, nodes))
            nodes, peers, eidx = nodes[order], peers[order], eidx[order]
            bounds = np.searchsorted(nodes, np.arange(self.num_nodes + 1))
            times = self.time[eidx]
            self._adj = [
                (peers[a:b], eidx[a:b], times[a:b]) for a, b in zip(bounds[:-1], bounds[1:])
            ]
        return self._adj

    def pairs(self) -> set[tuple[int, int]]:
        """Unordered node pairs present in the store."""
        lo = np.minimum(self.src, self.dst)
        hi = np.maximum(self.src, self.dst)
        return set(zip(lo.tolist(), hi.tolist()))

    def to_csv(self, path=None, with_label: bool = False) -> str:
        buf = io.StringIO()
        header = ["src", "dst", "time"] + [f"f{i}" for i in range(self.feat_dim)]
        if with_label:
            header.append("label")
        buf.write(",".join(header) + "\n")
        for i in range(len(self)):
            row = [str(int(self.src[i])), str(int(self.dst[i])), repr(float(self.time[i]))]
            row += [repr(float(x)) for x in self.feat[i]]
            if with_label:
                row.append(str(int(self.label[i])))
            buf.write(",".join(row) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def equals(self, other: EventStore) -> bool:
        return (self.num_nodes == other.num_nodes
                and np.array_equal(self.src, other.src)
                and np.array_equal(self.dst, other.dst)
                and np.array_equal(self.time, other.time)
                and np.array_equal(self.feat, other.feat)
                and np.array_equal(self.label, other.label))


def _rows(path: Path):
    text = path.read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "%#":
            continue
        yield lineno, s


def ingest(path, fmt: str = "generic_csv", use_edge_weight: bool = False,
           remap: bool = True, num_nodes: int | None = None) -> EventStore:
    """Read a raw dataset file into an :class:`EventStore`.

    Node ids are remapped densely in order of first appearance in the
    time-sorted stream and timestamps are shifted so the earliest event is at
    0; this makes re-ingesting the canonical CSV a no-op.  ``remap=False``
    keeps ids and times verbatim (for files already in canonical form, e.g. a
    labeled test stream), in which case ``num_nodes`` may widen the id space.
    ``use_edge_weight`` keeps the weight/rating column as an edge feature.
    """
    if fmt not in FORMATS:
        raise IngestError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    path = Path(path)
    raw_src, raw_dst, times, feats, labels = [], [], [], [], []
    header_seen = False
    ncols = None
    has_label = False
    for lineno, line in _rows(path):
        try:
            if fmt == "ucimsg":
                parts = line.split()
                if len(parts) < 4:
                    raise ValueError("expected 'src dst weight timestamp'")
                s, d, w, t = parts[0], parts[1], float(parts[2]), float(parts[3])
                f = [w] if use_edge_weight else []
            elif fmt == "bitcoin_otc":
                parts = next(csv.reader([line]))
                if len(parts) != 4:
                    raise ValueError("expected 'src,dst,rating,timestamp'")
                s, d, w, t = parts[0], parts[1], float(parts[2]), float(parts[3])
                f = [w] if use_edge_weight else []
            elif fmt == "email_dnc":
                parts = next(csv.reader([line]))
                if len(parts) != 3:
                    raise ValueError("expected 'src,dst,timestamp'")
                s, d, t = parts[0], parts[1], float(parts[2])
                f = []
            else:
                parts = [p.strip() for p in next(csv.reader([line]))]
                if not header_seen:
                    if parts[:3] != ["src", "dst", "time"]:
                        raise ValueError("generic_csv header must start with src,dst,time")
                    has_label = parts[-1] == "label"
                    ncols = len(parts)
                    header_seen = True
                    continue
                if len(parts) != ncols:
                    raise ValueError(f"expected {ncols} columns, got {len(parts)}")
                s, d, t = parts[0], parts[1], float(parts[2])
                body = parts[3:-1] if has_label else parts[3:]
                f = [float(x) for x in body]
                if has_label:
                    labels.append(int(parts[-1]))
        except (ValueError, StopIteration) as exc:
            raise IngestError(f"{path}:{lineno}: malformed row: {exc}") from None
        raw_src.append(s)
        raw_dst.append(d)
        times.append(t)
        feats.append(f)
    if not raw_src:
        raise IngestError(f"{path}: no events")

    time = np.array(times, dtype=np.float64)
    feat = np.array(feats, dtype=np.float64).reshape(len(raw_src), -1)
    label = labels if has_label else None
    if not remap:
        try:
            src = np.array([int(s) for s in raw_src])
            dst = np.array([int(d) for d in raw_dst])
        except ValueError:
            raise IngestError(f"{path}: node ids must be integers when remap=False") from None
        n = int(max(src.max(), dst.max())) + 1
        return EventStore(src, dst, time, max(n, num_nodes or 0), feat, label)

    order = np.argsort(time, kind="stable")
    ids: dict[str, int] = {}
    for i in order:
        for x in (raw_src[i], raw_dst[i]):
            if x not in ids:
                ids[x] = len(ids)
    src = np.array([ids[s] for s in raw_src])
    dst = np.array([ids[d] for d in raw_dst])
    store = EventStore(src, dst, time - time.min(), len(ids), feat, label)
    store.id_map = ids
    return store


def split(store: EventStore, train_ratio: float = 0.5) -> tuple[EventStore, EventStore]:
    if not 0 < train_ratio < 1:
        raise ValueError("train_ratio must be in (0, 1)")
    cut = int(np.floor(train_ratio * len(store)))
    if cut == 0 or cut == len(store):
        raise ValueError(f"train_ratio {train_ratio} leaves an empty split of {len(store)} events")
    return store.slice(0, cut), store.slice(cut, len(store))


def temporal_neighbors(store: EventStore, node: int, t: float, k: int = 10):
    """The ``k`` most recent (peer, event index, time) before ``t``, newest first."""
    if k < 1:
        raise ValueError("k must be >= 1")
    peers, eidx, times = store.adjacency[node]
    end = int(np.searchsorted(times, t, side="left"))
    start = max(0, end - k)
    return [(int(peers[i]), int(eidx[i]), float(times[i])) for i in range(end - 1, start - 1, -1)]


@dataclass(frozen=True)
class Batch:
    start: int
    stop: int
    t_min: float
    t_max: float


def batches(store: EventStore, batch_size: int = 200) -> list[Batch]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    out = []
    for a in range(0, len(store), batch_size):
        b = min(a + batch_size, len(store))
        out.append(Batch(a, b, float(store.time[a]), float(store.time[b - 1])))
    return out
