import math

import numpy as np
import pytest

from gady import gradcheck
from gady import numerics as nx
from gady.adversarial import (LossConfig, contextual_negatives, discriminator_loss, generate,
                              generator_loss, init_generator)
from gady.discriminator import MemoryBank
from gady.numerics import Rng, Tensor
from gady.tgraph import Label

EPS = 1e-8


def _zero_generator(noise_dim=4):
    g = init_generator(Rng(0), noise_dim, 8)
    for p in g.values():
        p.data = np.zeros_like(p.data)
    return g


def test_zero_network_hits_center():
    g = _zero_generator()
    out = generate(g, nx.squashed_noise(Rng(1), (5, 4)), (10.0, 20.0), 11)
    np.testing.assert_array_equal(out.unit.data, 0.5)
    assert out.src.tolist() == [5] * 5 and out.dst.tolist() == [5] * 5
    assert out.t.tolist() == [15.0] * 5


def test_range_law_over_many_draws():
    for seed in range(100):
        rng = Rng(seed)
        g = init_generator(rng, 4, 16)
        for p in g.values():
            p.data = p.data * 5  # push into saturation as well
        lo = float(rng.uniform(0, 100, ()))
        hi = lo + float(rng.uniform(0, 50, ()))
        n = int(rng.integers(2, 50))
        out = generate(g, nx.squashed_noise(rng, (100, 4)), (lo, hi), n)
        assert out.src.min() >= 0 and out.src.max() <= n - 1
        assert out.dst.min() >= 0 and out.dst.max() <= n - 1
        assert np.all((out.t >= lo) & (out.t <= hi))
        assert np.all(np.diff(out.t) >= 0)


def test_degenerate_window():
    g = init_generator(Rng(0), 4, 8)
    out = generate(g, nx.squashed_noise(Rng(1), (6, 4)), (3.0, 3.0), 5)
    assert set(out.t.tolist()) == {3.0}


def test_generate_preconditions():
    g = init_generator(Rng(0), 4, 8)
    z = nx.squashed_noise(Rng(1), (3, 4))
    with pytest.raises(ValueError):
        generate(g, z, (2.0, 1.0), 5)
    with pytest.raises(ValueError):
        generate(g, z, (0.0, 1.0), 1)


def test_generated_store_labels():
    g = init_generator(Rng(0), 4, 8)
    out = generate(g, nx.squashed_noise(Rng(1), (6, 4)), (0.0, 1.0), 5)
    s = out.to_store(5)
    assert len(s) == len(out) == 6
    assert set(s.label.tolist()) == {int(Label.GENERATED)}


def _term2(unit, beta):
    u = np.asarray(unit, dtype=float)
    mu = u.mean(axis=0)
    cl = np.abs(u - mu).mean(axis=0) / (np.abs(mu) + EPS)
    return beta / (cl.mean() + EPS)


def test_generator_loss_example():
    cfg = LossConfig()
    unit = [[0.2, 0.4, 0.6], [0.6, 0.8, 0.3]]
    got = generator_loss([0.1, 0.3], unit, cfg).item()
    term1 = (math.log(EPS) + math.log(0.2 + EPS)) / 2
    assert got == pytest.approx(term1 + _term2(unit, 15.0), rel=1e-12)


def test_generator_loss_on_target_and_collapse():
    cfg = LossConfig()
    spread = [[0.1, 0.9, 0.5], [0.9, 0.1, 0.2]]
    got = generator_loss([0.1, 0.1], spread, cfg).item()
    assert got == pytest.approx(math.log(EPS) + _term2(spread, 15.0), rel=1e-12)
    collapsed = [[0.3, 0.3, 0.3]] * 4
    assert generator_loss([0.5] * 4, collapsed, cfg).item() > 15.0 / (2 * EPS) * 0.1


def test_generator_loss_needs_two_samples():
    with pytest.raises(ValueError):
        generator_loss([0.5], [[0.1, 0.2, 0.3]], LossConfig())


def test_diversity_falls_as_dispersion_grows():
    rng = np.random.default_rng(0)
    base = rng.uniform(-1, 1, (16, 3))
    base -= base.mean(axis=0)
    cfg = LossConfig(alpha=0.5)
    scores = [0.5] * 16
    vals = [generator_loss(scores, 0.5 + s * 0.4 * base, cfg).item() for s in (0.1, 0.3, 0.6, 1.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_discriminator_loss_examples():
    cfg = LossConfig(gamma=0.1)
    got = discriminator_loss([0.5], [0.5], cfg).item()
    assert abs(got - (0.1 * math.log(2) + math.log(2))) < 1e-9
    assert discriminator_loss([1 - 1e-12], [1e-12], cfg).item() == pytest.approx(0.0, abs=1e-9)
    sym = LossConfig(gamma=1.0)
    f, r = [0.7, 0.2], [0.4, 0.1]
    bce = -np.mean(np.log(f)) - np.mean(np.log(1 - np.array(r)))
    assert discriminator_loss(f, r, sym).item() == pytest.approx(bce, rel=1e-12)


def test_discriminator_loss_needs_reals():
    with pytest.raises(ValueError):
        discriminator_loss([0.5], [], LossConfig())


def test_losses_finite_at_range_edges():
    cfg = LossConfig()
    assert np.isfinite(discriminator_loss([0.0, 1.0], [0.0, 1.0], cfg).item())
    assert np.isfinite(generator_loss([0.1, 0.1], [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]], cfg).item())


@pytest.mark.parametrize("bad", [dict(alpha=1.5), dict(beta=-1), dict(gamma=0), dict(eps=0)])
def test_loss_config_validation(bad):
    with pytest.raises(ValueError):
        LossConfig(**bad)


def test_contextual_negatives():
    rng = np.random.default_rng(0)
    src, dst = rng.integers(0, 20, 500), rng.integers(0, 20, 500)
    t = np.arange(500.0)
    ns, nd, nt = contextual_negatives(src, dst, t, Rng(3), 20)
    assert len(ns) == 500 and np.array_equal(nt, t)
    kept_src = ns == src
    kept_dst = nd == dst
    # exactly one endpoint survives; the replacement differs from both originals
    assert np.all(kept_src ^ kept_dst)
    new = np.where(kept_src, nd, ns)
    assert np.all((new != src) & (new != dst))
    again = contextual_negatives(src, dst, t, Rng(3), 20)
    assert np.array_equal(again[0], ns) and np.array_equal(again[1], nd)
    assert 0.4 < kept_src.mean() < 0.6


def test_contextual_negatives_two_nodes():
    ns, nd, _ = contextual_negatives([0, 1], [1, 0], [0.0, 1.0], Rng(0), 2)
    for a, b in zip(ns, nd):
        assert a != b


def test_score_target_pull():
    """With the diversity weight off, a small descent step moves fake scores toward alpha."""
    rng, store, disc, table = gradcheck.toy_setup(3)
    bank = MemoryBank(5, disc.cfg.mem_dim)
    bank.update(disc.params, store.src[:10], store.dst[:10], store.time[:10], np.zeros((10, 0)))
    frozen = Tensor(bank.state)
    window = (float(store.time[10]), float(store.time[-1]))
    cfg = LossConfig(alpha=0.1, beta=0.0)
    gen = init_generator(rng.spawn(3), 3, 8)
    z = nx.squashed_noise(rng.spawn(4), (16, 3))

    def gap():
        fake = generate(gen, z, window, 5)
        sc = disc.score(frozen, store, table, fake.src, fake.dst, fake.t, fake.time)
        return fake, sc

    fake, sc = gap()
    assert np.all(sc.data > cfg.alpha)
    before = np.mean(np.abs(cfg.alpha - sc.data))
    with nx.Tape() as tape:
        fake, sc = gap()
        loss = generator_loss(sc, fake.unit, cfg)
    grads = tape.backward(loss, gen)
    for k in gen:
        gen[k].data = gen[k].data - 1e-3 * grads[k]
    after = np.mean(np.abs(cfg.alpha - gap()[1].data))
    assert after < before


@pytest.mark.parametrize("seed", range(3))
def test_generator_gradients_through_straight_through(seed):
    assert gradcheck.check_generator(seed) < 1e-4
