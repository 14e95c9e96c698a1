"""Labeled test streams: spectral clustering of the full graph, then
cross-cluster edges with random timestamps injected into the test window."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .numerics import Rng
from .tgraph import EventStore, Label


class EigenSolverError(RuntimeError):
    def __init__(self, residual: float, iters: int):
        self.residual = residual
        self.iters = iters
        super().__init__(f"power iteration did not converge after {iters} iterations "
                         f"(max residual {residual:.3e})")


class InjectionError(RuntimeError):
    pass


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    k: int
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def eigengap(self) -> float:
        ev = self.eigenvalues
        return float(ev[-1] - ev[-2]) if len(ev) >= 2 else 0.0

    def members(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(self.k)]

    def dump_csv(self, path) -> None:
        lines = ["node,cluster"] + [f"{i},{int(c)}" for i, c in enumerate(self.labels)]
        Path(path).write_text("\n".join(lines) + "\n")


def normalized_laplacian(store: EventStore) -> sp.csr_matrix:
    """I - D^-1/2 A D^-1/2 over the collapsed, unweighted, loop-free adjacency.

    Isolated nodes get degree 1, so their diagonal entry is 1.
    """
    n = store.num_nodes
    keep = store.src != store.dst
    a, b = store.src[keep], store.dst[keep]
    adj = sp.coo_matrix((np.ones(2 * len(a)), (np.concatenate([a, b]), np.concatenate([b, a]))),
                        shape=(n, n)).tocsr()
    adj.data[:] = 1.0
    adj.sum_duplicates()
    adj.data[:] = 1.0
    deg = np.asarray(adj.sum(axis=1)).reshape(-1)
    deg[deg == 0] = 1.0
    scale = sp.diags(1.0 / np.sqrt(deg))
    return (sp.identity(n, format="csr") - scale @ adj @ scale).tocsr()


def smallest_eigenpairs(lap, k: int, rng: Rng, tol: float = 1e-8, max_iter: int = 5000):
    """k smallest eigenpairs of a normalized Laplacian by power iteration.

    Iterates on ``2I - L`` (whose dominant eigenvectors are L's smallest) with
    a block of ``k`` plus guard vectors, re-orthogonalized every step
    (Gram-Schmidt via QR) and rotated by a Rayleigh-Ritz step so converged
    directions deflate out of the rest.  Stops once every wanted pair has
    residual ``||L x - lam x|| < tol``.
    """
    n = lap.shape[0]
    if k > n:
        raise ValueError(f"cannot extract {k} eigenpairs from a {n}-node graph")
    block = min(n, k + max(5, k))
    shifted = 2.0 * sp.identity(n, format="csr") - lap
    x, _ = np.linalg.qr(rng.normal((n, block)))
    resid = np.full(k, np.inf)
    lam = np.zeros(k)
    for it in range(1, max_iter + 1):
        x, _ = np.linalg.qr(shifted @ x)
        if it % 5 and it != max_iter:
            continue
        # Rayleigh-Ritz on the current block
        theta, rot = np.linalg.eigh(x.T @ (shifted @ x))
        x = x @ rot[:, ::-1]
        lam = 2.0 - theta[::-1][:k]
        vecs = x[:, :k]
        resid = np.linalg.norm(lap @ vecs - vecs * lam, axis=0)
        if resid.max() < tol:
            return lam, vecs, resid
    raise EigenSolverError(float(resid.max()), max_iter)


def kmeans(points: np.ndarray, k: int, rng: Rng, restarts: int = 10, max_restarts: int = 50,
           max_iter: int = 300) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; best of ``restarts`` runs.

    Runs leaving fewer than two non-empty clusters are discarded and retried,
    up to ``max_restarts`` attempts in total.
    """
    n = len(points)
    best, best_cost = None, np.inf
    attempts = 0
    good = 0
    while good < restarts and attempts < max_restarts:
        attempts += 1
        labels, cost = _lloyd(points, k, rng, max_iter)
        if len(np.unique(labels)) < min(2, n):
            continue
        good += 1
        if cost < best_cost - 1e-12:
            best, best_cost = labels, cost
    if best is None:
        raise InjectionError("k-means could not produce two non-empty clusters")
    return best


def _plusplus(points, k, rng):
    n = len(points)
    centers = [points[int(rng.integers(0, n))]]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(0, n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(points[idx])
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(points, k, rng, max_iter):
    centers = _plusplus(points, k, rng)
    labels = None
    for _ in range(max_iter):
        dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            mask = labels == c
            if mask.any():
                centers[c] = points[mask].mean(axis=0)
            else:
                # re-seed an empty cluster at the worst-served point
                far = int(dist[np.arange(len(points)), labels].argmax())
                centers[c] = points[far]
    cost = float(((points - centers[labels]) ** 2).sum())
    return labels, cost


def spectral_clusters(store: EventStore, k: int = 10, rng: Rng | None = None,
                      solver: str = "power") -> ClusterAssignment:
    if k < 2:
        raise ValueError("k must be >= 2")
    if store.num_nodes < k:
        raise ValueError(f"graph has {store.num_nodes} nodes, fewer than k={k}")
    rng = rng or Rng(0)
    lap = normalized_laplacian(store)
    if solver == "power":
        lam, vecs, resid = smallest_eigenpairs(lap, k, rng)
    elif solver == "dense":
        w, v = np.linalg.eigh(lap.toarray())
        lam, vecs = w[:k], v[:, :k]
        resid = np.linalg.norm(lap @ vecs - vecs * lam, axis=0)
    else:
        raise ValueError(f"unknown eigensolver {solver!r}")
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    emb = np.divide(vecs, norms, out=np.zeros_like(vecs), where=norms > 0)
    labels = kmeans(emb, k, rng)
    return ClusterAssignment(labels, k, lam, resid)


def injection_count(num_real: int, ratio: float) -> int:
    return int(round(ratio * num_real / (1.0 - ratio)))


def inject_anomalies(test: EventStore, clusters: ClusterAssignment, ratio: float,
                     existing_pairs: set[tuple[int, int]], rng: Rng,
                     max_tries: int = 1_000_000) -> EventStore:
    """Merge ``test`` with cross-cluster edges so they make up ``ratio`` of the result.

    Injected pairs avoid ``existing_pairs`` (unordered) and each other;
    their timestamps are uniform over the test window.  Returned labels are
    REAL (0) and INJECTED (1).
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    groups = [g for g in clusters.members() if len(g)]
    if len(groups) < 2:
        raise InjectionError("need at least two non-empty clusters")
    m = injection_count(len(test), ratio)
    t_min, t_max = test.time_range
    taken: set[tuple[int, int]] = set()
    src, dst = [], []
    tries = 0
    while len(src) < m:
        tries += 1
        if tries > max_tries:
            raise InjectionError(f"gave up after {max_tries} draws with {len(src)}/{m} pairs injected")
        a, b = rng.gen.choice(len(groups), 2, replace=False)
        u = int(groups[a][rng.integers(0, len(groups[a]))])
        v = int(groups[b][rng.integers(0, len(groups[b]))])
        key = (min(u, v), max(u, v))
        if key in existing_pairs or key in taken:
            continue
        taken.add(key)
        src.append(u)
        dst.append(v)
    times = rng.uniform(t_min, t_max, m) if m else np.zeros(0)
    injected = EventStore(src, dst, times, test.num_nodes, np.zeros((m, test.feat_dim)),
                          np.full(m, int(Label.INJECTED)))
    real = test.slice(0, len(test))
    real.label = np.zeros(len(real), dtype=np.int64)
    return real.concat(injected)
