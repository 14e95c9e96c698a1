"""Interaction generator and the two adversarial training objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Rng, Tensor
from .tgraph import EventStore, Label


@dataclass
class LossConfig:
    alpha: float = 0.1
    beta: float = 15.0
    gamma: float = 0.1
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")


def init_generator(rng: Rng, noise_dim: int = 16, hidden: int = 64) -> dict[str, Tensor]:
    return nx.mlp_params(rng, [noise_dim, hidden, hidden, 3], "gen")


@dataclass
class GeneratedBatch:
    unit: Tensor          # (n, 3) continuous triples in [0, 1], time-sorted
    time: Tensor          # (n,) continuous timestamps, differentiable
    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray
    window: tuple[float, float]

    def __len__(self) -> int:
        return len(self.src)

    def to_store(self, num_nodes: int) -> EventStore:
        return EventStore(self.src, self.dst, self.t, num_nodes,
                          label=np.full(len(self.src), int(Label.GENERATED)), presorted=True)


def generate(params, noise: Tensor, window: tuple[float, float], num_nodes: int) -> GeneratedBatch:
    """Map noise rows to fake interactions ``(u, v, t)`` inside ``window``.

    The squashed MLP output is rescaled to [0, 1]; node coordinates are
    rounded onto ``0..num_nodes-1`` with an identity backward pass and the
    time coordinate is mapped affinely onto the window.
    """
    t_min, t_max = window
    if t_min > t_max:
        raise ValueError("window must satisfy t_min <= t_max")
    if num_nodes < 2:
        raise ValueError("need at least two nodes")
    layers = sum(1 for k in params if k.startswith("gen.w"))
    raw = nx.tanh(nx.mlp(noise, params, "gen", layers))
    unit = (raw + 1.0) * 0.5
    order = np.argsort(t_min + unit.data[:, 2] * (t_max - t_min), kind="stable")
    unit = nx.gather_rows(unit, order)
    u = nx.round_st(nx.column(unit, 0) * float(num_nodes - 1))
    v = nx.round_st(nx.column(unit, 1) * float(num_nodes - 1))
    time = nx.column(unit, 2) * float(t_max - t_min) + t_min
    src = np.clip(u.data.astype(np.int64), 0, num_nodes - 1)
    dst = np.clip(v.data.astype(np.int64), 0, num_nodes - 1)
    # keep the discrete times inside the window despite rounding of the affine map
    t = np.clip(time.data.copy(), t_min, t_max)
    return GeneratedBatch(unit, time, src, dst, t, (float(t_min), float(t_max)))


def generator_loss(fake_scores, unit, cfg: LossConfig) -> Tensor:
    """Score-targeting term plus inverse mean coefficient of variation.

    ``fake_scores`` are the discriminator outputs for the batch and ``unit``
    the (n, 3) continuous triples before discretization.
    """
    fake_scores, unit = nx.as_tensor(fake_scores), nx.as_tensor(unit)
    n = fake_scores.size
    if n < 2 or unit.shape[0] < 2:
        raise ValueError("generator_loss needs a batch of at least two samples")
    quality = nx.mean(nx.log(nx.abs(cfg.alpha - fake_scores) + cfg.eps))
    mu = nx.mean(unit, axis=0)
    spread = nx.mean(nx.abs(nx.bias_add(unit, -mu)), axis=0)
    cv = spread / (nx.abs(mu) + cfg.eps)
    diversity = cfg.beta / (nx.mean(cv) + cfg.eps)
    return quality + diversity


def discriminator_loss(fake_scores, real_scores, cfg: LossConfig) -> Tensor:
    fake_scores, real_scores = nx.as_tensor(fake_scores), nx.as_tensor(real_scores)
    if real_scores.size == 0:
        raise ValueError("discriminator_loss needs at least one real score")
    # eps floors the log arguments rather than shifting them, so interior
    # scores give the exact cross-entropy
    real_term = nx.mean(nx.log(nx.clamp(1.0 - real_scores, lo=cfg.eps)))
    if fake_scores.size == 0:
        return -real_term
    return -cfg.gamma * nx.mean(nx.log(nx.clamp(fake_scores, lo=cfg.eps))) - real_term


def contextual_negatives(src, dst, t, rng: Rng, num_nodes: int):
    """Corrupt each edge by keeping one endpoint (fair coin) and redrawing the other.

    The replacement differs from both original endpoints, or only from the
    kept one when the graph has two nodes.  Returns (src, dst, t) arrays.
    """
    if num_nodes < 2:
        raise ValueError("need at least two nodes")
    src, dst = np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)
    keep_src = rng.random(len(src)) < 0.5
    new_src, new_dst = src.copy(), dst.copy()
    for i in range(len(src)):
        a, b = int(src[i]), int(dst[i])
        kept = a if keep_src[i] else b
        banned = {a, b} if num_nodes > 2 and len({a, b}) < num_nodes else {kept}
        while True:
            c = int(rng.integers(0, num_nodes))
            if c not in banned:
                break
        if keep_src[i]:
            new_dst[i] = c
        else:
            new_src[i] = c
    return new_src, new_dst, np.asarray(t, dtype=np.float64).copy()
