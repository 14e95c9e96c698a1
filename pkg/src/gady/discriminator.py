"""Memory-based temporal encoder and edge-score decoder.

The discriminator maps an interaction ``(u, v, t)`` to an anomaly score in
(0, 1): node memories are refreshed by a gated recurrent cell on every real
event, node embeddings sum a learnable function over the ``k`` most recent
temporal neighbors (recursively, ``layers`` deep), and a two-layer decoder
reads the concatenated endpoint embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Rng, Tensor
from .positional import PositionalTable, featurize
from .tgraph import EventStore


@dataclass
class EncoderConfig:
    mem_dim: int = 32
    emb_dim: int = 32
    time_dim: int = 16
    pos_dim: int = 8
    feat_dim: int = 0
    layers: int = 2
    neighbors: int = 10
    walk_depth: int = 2
    decoder_hidden: int = 32
    relative_pos: bool = True

    @property
    def pos_in(self) -> int:
        return (self.walk_depth + 1) * (2 if self.relative_pos else 1)

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.neighbors < 1:
            raise ValueError("neighbors must be >= 1")


def init_params(cfg: EncoderConfig, rng: Rng) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    # harmonic frequencies spread over nine decades of time scale
    p["time.w"] = nx.parameter((1.0 / 10 ** np.linspace(0, 9, cfg.time_dim)).reshape(1, -1), "time.w")
    p["time.b"] = nx.parameter(rng.uniform(0.0, 2 * np.pi, cfg.time_dim), "time.b")
    msg_dim = 2 * cfg.mem_dim + cfg.time_dim + cfg.feat_dim
    for gate in ("z", "r", "n"):
        p[f"gru.w{gate}"] = nx.glorot(rng, msg_dim, cfg.mem_dim, f"gru.w{gate}")
        p[f"gru.u{gate}"] = nx.glorot(rng, cfg.mem_dim, cfg.mem_dim, f"gru.u{gate}")
        p[f"gru.b{gate}"] = nx.parameter(np.zeros(cfg.mem_dim), f"gru.b{gate}")
    p["gru.bun"] = nx.parameter(np.zeros(cfg.mem_dim), "gru.bun")
    p.update(nx.mlp_params(rng, [cfg.pos_in, cfg.pos_dim], "pos"))
    for layer in range(1, cfg.layers + 1):
        below = cfg.mem_dim if layer == 1 else cfg.emb_dim
        width = 2 * below + cfg.feat_dim + cfg.time_dim + cfg.pos_dim
        p.update(nx.mlp_params(rng, [width, cfg.emb_dim, cfg.emb_dim], f"h{layer}"))
    p.update(nx.mlp_params(rng, [2 * cfg.emb_dim, cfg.decoder_hidden, 1], "dec"))
    return p


def time_encode(params, dt) -> Tensor:
    """cos(dt * w + b) for a column of time deltas."""
    dt = nx.as_tensor(dt)
    col = nx.reshape(dt, (dt.size, 1))
    return nx.cos(nx.bias_add(nx.matmul(col, params["time.w"]), params["time.b"]))


def compute_message(params, s_self, s_other, dt, edge_feat) -> Tensor:
    """Identity message: concat(own memory, peer memory, time code, edge features)."""
    parts = [nx.as_tensor(s_self), nx.as_tensor(s_other), time_encode(params, dt)]
    edge_feat = nx.as_tensor(edge_feat)
    if edge_feat.data.ndim == 2 and edge_feat.shape[1]:
        parts.append(edge_feat)
    return nx.concat(parts, axis=1)


def gru_cell(params, x, h) -> Tensor:
    z = nx.sigmoid(nx.bias_add(x @ params["gru.wz"] + h @ params["gru.uz"], params["gru.bz"]))
    r = nx.sigmoid(nx.bias_add(x @ params["gru.wr"] + h @ params["gru.ur"], params["gru.br"]))
    hn = nx.bias_add(h @ params["gru.un"], params["gru.bun"])
    n = nx.tanh(nx.bias_add(x @ params["gru.wn"], params["gru.bn"]) + r * hn)
    return (1.0 - z) * n + z * h


def _rounds(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Assign each event the earliest round after all earlier events on its endpoints."""
    nxt: dict[int, int] = {}
    out = np.empty(len(src), dtype=np.int64)
    for i, (u, v) in enumerate(zip(src.tolist(), dst.tolist())):
        r = max(nxt.get(u, 0), nxt.get(v, 0))
        out[i] = r
        nxt[u] = nxt[v] = r + 1
    return out


class MemoryBank:
    """Per-node recurrent state with last-update times (-inf before any event)."""

    def __init__(self, num_nodes: int, dim: int):
        self.num_nodes = num_nodes
        self.dim = dim
        self.reset()

    def reset(self) -> None:
        self.state = np.zeros((self.num_nodes, self.dim))
        self.last_update = np.full(self.num_nodes, -np.inf)

    def copy(self) -> MemoryBank:
        other = MemoryBank(self.num_nodes, self.dim)
        other.state = self.state.copy()
        other.last_update = self.last_update.copy()
        return other

    def advance(self, params, src, dst, time, feat, memory: Tensor | None = None):
        """Apply events in order and return (memory tensor, new last-update array).

        Nothing is written to the bank; call :meth:`commit` with the result.
        Under an active tape the returned memory is differentiable in the
        cell parameters.  Events touching disjoint nodes are batched into
        rounds, which preserves exact sequential semantics.
        """
        src, dst = np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)
        time = np.asarray(time, dtype=np.float64)
        feat = np.asarray(feat, dtype=np.float64).reshape(len(src), -1)
        last = self.last_update.copy()
        mem = Tensor(self.state) if memory is None else memory
        if len(src) == 0:
            return mem, last
        if np.any(time < last[src]) or np.any(time < last[dst]):
            bad = int(np.argmax((time < last[src]) | (time < last[dst])))
            raise ValueError(
                f"event ({src[bad]}, {dst[bad]}, t={time[bad]}) precedes a node's last update")
        rounds = _rounds(src, dst)
        for r in range(int(rounds.max()) + 1):
            sel = np.flatnonzero(rounds == r)
            loops = src[sel] == dst[sel]
            tgt = np.concatenate([src[sel], dst[sel][~loops]])
            oth = np.concatenate([dst[sel], src[sel][~loops]])
            ts = np.concatenate([time[sel], time[sel][~loops]])
            fs = np.concatenate([feat[sel], feat[sel][~loops]])
            prev = last[tgt]
            dt = np.where(np.isfinite(prev), ts - prev, 0.0)
            s_t = nx.gather_rows(mem, tgt)
            s_o = nx.gather_rows(mem, oth)
            msg = compute_message(params, s_t, s_o, dt, fs)
            mem = nx.set_rows(mem, tgt, gru_cell(params, msg, s_t))
            last[tgt] = ts
        return mem, last

    def commit(self, memory, last_update) -> None:
        self.state = np.array(memory.data if isinstance(memory, Tensor) else memory)
        self.last_update = np.array(last_update)

    def update(self, params, src, dst, time, feat) -> None:
        mem, last = self.advance(params, src, dst, time, feat)
        self.commit(mem, last)


def update_memory(bank: MemoryBank, params, u: int, v: int, t: float, edge_feat=()) -> None:
    bank.update(params, [u], [v], [t], np.asarray(edge_feat, dtype=np.float64).reshape(1, -1))


class Discriminator:
    """Encoder-decoder scoring interactions against a frozen state snapshot."""

    def __init__(self, cfg: EncoderConfig, rng: Rng, params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        self.params = init_params(cfg, rng) if params is None else params

    # -- encoder ------------------------------------------------------------------

    def _neighbors(self, store: EventStore, nodes, times):
        adj = store.adjacency
        k = self.cfg.neighbors
        q_idx, peers, eidx, etime = [], [], [], []
        for qi, (n, t) in enumerate(zip(nodes.tolist(), times.tolist())):
            p, e, tt = adj[n]
            end = int(np.searchsorted(tt, t, side="left"))
            if end == 0:
                continue
            start = max(0, end - k)
            cnt = end - start
            q_idx.append(np.full(cnt, qi))
            # most recent first
            peers.append(p[start:end][::-1])
            eidx.append(e[start:end][::-1])
            etime.append(tt[start:end][::-1])
        if not q_idx:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty, np.zeros(0)
        return (np.concatenate(q_idx), np.concatenate(peers), np.concatenate(eidx),
                np.concatenate(etime))

    def _embed(self, memory: Tensor, store: EventStore, table: PositionalTable,
               nodes: np.ndarray, tsrc: np.ndarray, root_t: np.ndarray,
               root_t_tensor: Tensor | None, layer: int, partner: np.ndarray | None = None) -> Tensor:
        if layer == 0:
            return nx.gather_rows(memory, nodes)
        times = root_t[tsrc]
        q, peer, eidx, etime = self._neighbors(store, nodes, times)
        if len(q) == 0:
            return Tensor(np.zeros((len(nodes), self.cfg.emb_dim)))
        child_nodes = np.concatenate([peer, nodes])
        child_src = np.concatenate([tsrc[q], tsrc])
        if layer - 1 > 0:
            keys = np.stack([child_nodes, child_src], axis=1)
            uniq, inv = np.unique(keys, axis=0, return_inverse=True)
            inv = inv.reshape(-1)
            below = self._embed(memory, store, table, uniq[:, 0], uniq[:, 1], root_t,
                                root_t_tensor, layer - 1, partner)
        else:
            inv = np.arange(len(child_nodes))
            below = nx.gather_rows(memory, child_nodes)
        m = len(q)
        e_peer = nx.gather_rows(below, inv[:m])
        e_self = nx.gather_rows(below, inv[m:][q])
        if root_t_tensor is None:
            dt = Tensor(times[q] - etime)
        else:
            dt = nx.gather_rows(root_t_tensor, tsrc[q]) - Tensor(etime)
        counts = table.query_many(peer, nodes[q])
        if self.cfg.relative_pos:
            # walks from the neighbor to the other endpoint of the scored edge
            if partner is None:
                rel = np.zeros_like(counts)
            else:
                rel = table.query_many(peer, partner[tsrc[q]])
            counts = np.concatenate([counts, rel], axis=1)
        pos = nx.mlp(Tensor(featurize(counts)), self.params, "pos", 1)
        parts = [e_peer, e_self]
        if self.cfg.feat_dim:
            parts.append(Tensor(store.feat[eidx]))
        parts += [time_encode(self.params, dt), pos]
        # h carries a 1/k factor so the neighbor sum stays O(1) at every depth
        h = nx.mlp(nx.concat(parts, axis=1), self.params, f"h{layer}", 2) * (1.0 / self.cfg.neighbors)
        return nx.segment_sum(h, q, len(nodes))

    def embed(self, memory, store, table, nodes, t, layer: int | None = None) -> Tensor:
        """Node embeddings at query times ``t`` (one time per node)."""
        layer = self.cfg.layers if layer is None else layer
        if layer > self.cfg.layers:
            raise ValueError(f"layer {layer} exceeds configured depth {self.cfg.layers}")
        nodes = np.atleast_1d(np.asarray(nodes, dtype=np.int64))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), nodes.shape).copy()
        return self._embed(nx.as_tensor(memory), store, table, nodes, np.arange(len(nodes)), t,
                           None, layer)

    def edge_embedding(self, memory, store, table, src, dst, t, t_tensor: Tensor | None = None) -> Tensor:
        """concat(emb(u, t), emb(v, t)) per interaction."""
        src = np.atleast_1d(np.asarray(src, dtype=np.int64))
        dst = np.atleast_1d(np.asarray(dst, dtype=np.int64))
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        n = len(src)
        nodes = np.concatenate([src, dst])
        # root i is the u side of edge i, root n + i its v side
        tsrc = np.arange(2 * n)
        t2 = np.concatenate([t, t])
        tt2 = None if t_tensor is None else nx.concat([t_tensor, t_tensor], axis=0)
        partner = np.concatenate([dst, src])
        emb = self._embed(nx.as_tensor(memory), store, table, nodes, tsrc, t2, tt2, self.cfg.layers,
                          partner)
        return nx.concat([nx.gather_rows(emb, np.arange(n)), nx.gather_rows(emb, np.arange(n, 2 * n))],
                         axis=1)

    # -- decoder ------------------------------------------------------------------

    def decode(self, edge_emb) -> Tensor:
        logits = nx.mlp(edge_emb, self.params, "dec", 2)
        return nx.sigmoid(nx.reshape(logits, (logits.shape[0],)))

    def score(self, memory, store, table, src, dst, t, t_tensor: Tensor | None = None) -> Tensor:
        return self.decode(self.edge_embedding(memory, store, table, src, dst, t, t_tensor))
