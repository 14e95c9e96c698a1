"""Finite-difference checks for every op and for both training losses.

Backs the ``fdcheck`` command; each check returns the worst relative error
between tape gradients and central differences.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .adversarial import (LossConfig, contextual_negatives, discriminator_loss, generate,
                          generator_loss, init_generator)
from .discriminator import Discriminator, EncoderConfig, MemoryBank
from .numerics import Rng, Tensor
from .positional import PositionalTable
from .tgraph import EventStore

TOLERANCE = 1e-4


def _away_from(x, kinks, gap=1e-3):
    for k in kinks:
        x = np.where(np.abs(x - k) < gap, k + 0.5, x)
    return x


def _op_cases(rng: Rng):
    """name -> (loss builder over params a, b, shape of a, shape of b)."""
    idx = rng.integers(0, 3, 5)
    seg = rng.integers(0, 4, 5)
    return {
        "add": (lambda a, b: nx.add(a, b), (3, 4), (3, 4)),
        "sub": (lambda a, b: nx.sub(a, b), (3, 4), (3, 4)),
        "mul": (lambda a, b: nx.mul(a, b), (3, 4), (3, 4)),
        "div": (lambda a, b: nx.div(a, nx.mul(b, b) + 0.5), (3, 4), (3, 4)),
        "neg": (lambda a, b: nx.neg(a) * b, (3, 4), (3, 4)),
        "matmul": (lambda a, b: nx.matmul(a, b), (3, 4), (4, 2)),
        "bias_add": (lambda a, b: nx.bias_add(a, b), (3, 4), (4,)),
        "concat": (lambda a, b: nx.concat([a, b], axis=1), (3, 4), (3, 2)),
        "reshape": (lambda a, b: nx.reshape(a, (2, 6)) * nx.reshape(b, (2, 6)), (3, 4), (4, 3)),
        "sum": (lambda a, b: nx.sum(a, axis=0) * nx.sum(b, axis=1), (3, 4), (4, 3)),
        "mean": (lambda a, b: nx.mean(a, axis=1) * nx.mean(b, axis=0), (3, 4), (2, 3)),
        "l2norm": (lambda a, b: nx.l2norm(a, axis=1) + nx.l2norm(b, axis=0), (3, 4), (2, 3)),
        "column": (lambda a, b: nx.column(a, 1) * b, (3, 4), (3,)),
        "gather_rows": (lambda a, b: nx.concat([nx.gather_rows(a, idx), b], axis=1), (3, 4), (5, 1)),
        "set_rows": (lambda a, b: nx.set_rows(a, np.array([0, 2]), b), (3, 4), (2, 4)),
        "segment_sum": (lambda a, b: nx.segment_sum(nx.concat([nx.gather_rows(a, idx), b], axis=1), seg, 4),
                        (3, 4), (5, 2)),
        "tanh": (lambda a, b: nx.tanh(a) * b, (3, 4), (3, 4)),
        "sigmoid": (lambda a, b: nx.sigmoid(a * 3.0) * b, (3, 4), (3, 4)),
        "cos": (lambda a, b: nx.cos(a * 2.0) * b, (3, 4), (3, 4)),
        "log": (lambda a, b: nx.log(a * a + 0.1) * b, (3, 4), (3, 4)),
        "relu": (lambda a, b: nx.relu(a) * b, (3, 4), (3, 4)),
        "abs": (lambda a, b: nx.abs(a) * b, (3, 4), (3, 4)),
        "clamp": (lambda a, b: nx.clamp(a, -0.5, 0.7) * b, (3, 4), (3, 4)),
        "round_st": (lambda a, b: nx.round_st(a) * 0.0 + a * b, (3, 4), (3, 4)),
    }


OP_NAMES = tuple(_op_cases(Rng(0)))


def check_op(name: str, instances: int = 100, seed: int = 0) -> float:
    """Worst error of one op over random instances, each reduced by a random linear functional."""
    rng = Rng(seed)
    worst = 0.0
    for _ in range(instances):
        op, sa, sb = _op_cases(rng)[name]
        a0 = rng.normal(sa)
        if name in ("relu", "abs"):
            a0 = _away_from(a0, [0.0])
        elif name == "clamp":
            a0 = _away_from(a0, [-0.5, 0.7])
        a = nx.parameter(a0, "a")
        b = nx.parameter(rng.normal(sb), "b")
        coef = rng.normal(op(a, b).shape)
        worst = max(worst, nx.fd_check(lambda: nx.sum(op(a, b) * coef), {"a": a, "b": b}))
    return worst


def _generic_point(params, rng: Rng) -> None:
    """Jitter zero-initialized vectors: with exact zero biases a dead rectifier
    row feeds an exact 0 into the next rectifier, i.e. the kink itself."""
    for p in params.values():
        if p.data.ndim == 1 and not np.any(p.data):
            p.data = rng.normal(p.shape) * 0.1


def toy_setup(seed: int = 3):
    """A 5-node, 20-event stream with a small discriminator: first half in state, second half scored."""
    rng = Rng(seed)
    src = rng.integers(0, 5, 20)
    dst = (src + 1 + rng.integers(0, 4, 20)) % 5
    t = np.sort(rng.uniform(0.0, 10.0, 20))
    store = EventStore(src, dst, t, 5, presorted=True)
    cfg = EncoderConfig(mem_dim=4, emb_dim=4, time_dim=3, pos_dim=2, layers=2, neighbors=3,
                        decoder_hidden=4)
    disc = Discriminator(cfg, rng.spawn(1))
    _generic_point(disc.params, rng.spawn(5))
    table = PositionalTable(cfg.walk_depth)
    for i in range(10):
        table.update_on_event(int(src[i]), int(dst[i]), float(t[i]))
    return rng, store, disc, table


def check_discriminator(seed: int = 3) -> float:
    """Full discriminator loss, memory replay included, against every encoder/decoder parameter."""
    rng, store, disc, table = toy_setup(seed)
    s, d, t = store.src, store.dst, store.time
    bank = MemoryBank(5, disc.cfg.mem_dim)
    pending = (s[:10], d[:10], t[:10], np.zeros((10, 0)))
    fs, fd, ft = contextual_negatives(s[10:], d[10:], t[10:], rng.spawn(2), 5)
    cfg = LossConfig()

    def loss():
        mem, _ = bank.advance(disc.params, *pending)
        real = disc.score(mem, store, table, s[10:], d[10:], t[10:])
        fake = disc.score(mem, store, table, fs, fd, ft)
        return discriminator_loss(fake, real, cfg)

    return nx.fd_check(loss, disc.params)


def check_generator(seed: int = 3) -> float:
    """Full generator loss (MLP, straight-through rounding, frozen discriminator) against generator parameters."""
    rng, store, disc, table = toy_setup(seed)
    gen = init_generator(rng.spawn(3), noise_dim=3, hidden=5)
    _generic_point(gen, rng.spawn(6))
    bank = MemoryBank(5, disc.cfg.mem_dim)
    bank.update(disc.params, store.src[:10], store.dst[:10], store.time[:10], np.zeros((10, 0)))
    z = nx.squashed_noise(rng.spawn(4), (8, 3))
    window = (float(store.time[10]), float(store.time[-1]))
    cfg = LossConfig()
    frozen = Tensor(bank.state)

    def loss():
        fake = generate(gen, z, window, 5)
        sc = disc.score(frozen, store, table, fake.src, fake.dst, fake.t, fake.time)
        return generator_loss(sc, fake.unit, cfg)

    return nx.fd_check(loss, gen)


def run_all(instances: int = 20) -> dict[str, float]:
    """Worst error per module: ``numerics`` over all ops, then the two losses."""
    out = {"numerics": max(check_op(n, instances) for n in OP_NAMES)}
    out["discriminator"] = check_discriminator()
    out["generator"] = check_generator()
    return out
