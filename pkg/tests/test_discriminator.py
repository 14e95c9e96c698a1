import math

import numpy as np
import pytest

from gady import gradcheck
from gady import numerics as nx
from gady.discriminator import (Discriminator, EncoderConfig, MemoryBank, compute_message,
                                time_encode, update_memory)
from gady.numerics import Rng, Tensor
from gady.positional import PositionalTable
from gady.tgraph import EventStore

SMALL = dict(mem_dim=3, emb_dim=4, time_dim=2, pos_dim=2, decoder_hidden=4, neighbors=3)


def _model(seed=0, **kw):
    cfg = EncoderConfig(**{**SMALL, **kw})
    return Discriminator(cfg, Rng(seed))


def _stream(seed=0, n=6, m=40):
    rng = np.random.default_rng(seed)
    src = rng.integers(0, n, m)
    dst = (src + 1 + rng.integers(0, n - 1, m)) % n
    return EventStore(src, dst, np.sort(rng.uniform(0, 20, m)), n, presorted=True)


def _state_after(disc, store, k):
    bank = MemoryBank(store.num_nodes, disc.cfg.mem_dim)
    table = PositionalTable(disc.cfg.walk_depth)
    bank.update(disc.params, store.src[:k], store.dst[:k], store.time[:k], store.feat[:k])
    for i in range(k):
        table.update_on_event(int(store.src[i]), int(store.dst[i]), float(store.time[i]))
    return bank, table


# -- message and memory -------------------------------------------------------------


def test_message_layout():
    d = _model()
    p = d.params
    zero = np.zeros((1, 3))
    msg = compute_message(p, zero, zero, np.zeros(1), np.zeros((1, 0))).data
    assert msg.shape == (1, 2 * 3 + 2)
    np.testing.assert_allclose(msg[0, 6:], np.cos(p["time.b"].data))
    assert not np.any(msg[0, :6])
    a, b = np.ones((1, 3)), 2 * np.ones((1, 3))
    m1 = compute_message(p, a, b, np.ones(1), np.zeros((1, 0))).data
    m2 = compute_message(p, b, a, np.ones(1), np.zeros((1, 0))).data
    assert not np.array_equal(m1, m2)


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def _scalar_gru(p, x, h):
    """Gated cell written out coordinate by coordinate."""
    def lin(w, v, j):
        return sum(v[i] * w[i][j] for i in range(len(v)))

    g = {k: v.data.tolist() for k, v in p.items() if k.startswith("gru.")}
    out = []
    for j in range(len(h)):
        z = _sig(lin(g["gru.wz"], x, j) + lin(g["gru.uz"], h, j) + g["gru.bz"][j])
        r = _sig(lin(g["gru.wr"], x, j) + lin(g["gru.ur"], h, j) + g["gru.br"][j])
        n = math.tanh(lin(g["gru.wn"], x, j) + g["gru.bn"][j] + r * (lin(g["gru.un"], h, j) + g["gru.bun"][j]))
        out.append((1 - z) * n + z * h[j])
    return out


def test_gru_matches_scalar_arithmetic():
    d = _model(mem_dim=2)
    p = d.params
    for k in ("gru.bz", "gru.br", "gru.bn", "gru.bun"):
        p[k].data = Rng(7).normal(2)
    w, b = p["time.w"].data[0].tolist(), p["time.b"].data.tolist()

    def te(dt):
        return [math.cos(dt * w[i] + b[i]) for i in range(2)]

    bank = MemoryBank(3, 2)
    update_memory(bank, p, 0, 1, 5.0)
    want0 = _scalar_gru(p, [0, 0, 0, 0] + te(0.0), [0, 0])
    want1 = _scalar_gru(p, [0, 0, 0, 0] + te(0.0), [0, 0])
    np.testing.assert_allclose(bank.state[0], want0, atol=1e-14)
    np.testing.assert_allclose(bank.state[1], want1, atol=1e-14)
    # second event reads the pre-update memories of both endpoints
    s1 = bank.state[1].tolist()
    update_memory(bank, p, 1, 2, 7.0)
    np.testing.assert_allclose(bank.state[1], _scalar_gru(p, s1 + [0, 0] + te(2.0), s1), atol=1e-14)
    np.testing.assert_allclose(bank.state[2], _scalar_gru(p, [0, 0] + s1 + te(0.0), [0, 0]), atol=1e-14)
    assert bank.last_update.tolist() == [5.0, 7.0, 7.0]


def test_untouched_node_stays_zero_and_order_is_enforced():
    d = _model()
    bank = MemoryBank(4, 3)
    update_memory(bank, d.params, 0, 1, 1.0)
    assert not np.any(bank.state[3]) and bank.last_update[3] == -np.inf
    with pytest.raises(ValueError):
        update_memory(bank, d.params, 1, 2, 0.5)


def test_batched_update_equals_sequential():
    d = _model()
    s = _stream()
    a = MemoryBank(6, 3)
    a.update(d.params, s.src, s.dst, s.time, s.feat)
    b = MemoryBank(6, 3)
    for i in range(len(s)):
        update_memory(b, d.params, int(s.src[i]), int(s.dst[i]), float(s.time[i]))
    np.testing.assert_allclose(a.state, b.state, atol=1e-14)


def test_self_loop_updates_once():
    d = _model()
    a = MemoryBank(2, 3)
    update_memory(a, d.params, 1, 1, 1.0)
    x = compute_message(d.params, np.zeros((1, 3)), np.zeros((1, 3)), np.zeros(1), np.zeros((1, 0)))
    from gady.discriminator import gru_cell
    np.testing.assert_allclose(a.state[1], gru_cell(d.params, x, Tensor(np.zeros((1, 3)))).data[0])


# -- embeddings ---------------------------------------------------------------------


def test_isolated_nodes_embed_to_zero():
    d = _model()
    s = EventStore([0], [1], [1.0], 4)
    bank, table = _state_after(d, s, 1)
    assert not np.any(d.embed(Tensor(bank.state), s, table, [2, 3], 5.0).data)
    e = d.edge_embedding(Tensor(bank.state), s, table, [2], [3], [5.0]).data
    assert e.shape == (1, 8) and not np.any(e)


def test_edge_embedding_is_ordered_concat():
    d = _model(relative_pos=False)
    s = _stream()
    bank, table = _state_after(d, s, 20)
    mem = Tensor(bank.state)
    t = float(s.time[20])
    e = d.edge_embedding(mem, s, table, [1], [4], [t]).data[0]
    np.testing.assert_allclose(e[:4], d.embed(mem, s, table, [1], t).data[0])
    np.testing.assert_allclose(e[4:], d.embed(mem, s, table, [4], t).data[0])
    assert not np.allclose(e, d.edge_embedding(mem, s, table, [4], [1], [t]).data[0])


def test_single_neighbor_one_layer_is_one_term():
    d = _model(layers=1, relative_pos=False)
    s = EventStore([0], [1], [1.0], 2)
    bank, table = _state_after(d, s, 1)
    mem = Tensor(bank.state)
    got = d.embed(mem, s, table, [0], 3.0).data[0]
    p = d.params
    pos = nx.mlp(Tensor(np.log1p(table.query_many([1], [0]))), p, "pos", 1)
    x = nx.concat([Tensor(bank.state[[1]]), Tensor(bank.state[[0]]), time_encode(p, np.array([2.0])), pos],
                  axis=1)
    want = nx.mlp(x, p, "h1", 2).data[0] / d.cfg.neighbors
    np.testing.assert_allclose(got, want, atol=1e-14)


def test_neighbor_order_does_not_matter():
    d = _model()
    s1 = EventStore([0, 0, 0], [1, 2, 3], [1.0, 1.0, 2.0], 4)
    s2 = EventStore([0, 0, 0], [2, 1, 3], [1.0, 1.0, 2.0], 4)
    b1, t1 = _state_after(d, s1, 3)
    b2, t2 = _state_after(d, s2, 3)
    e1 = d.embed(Tensor(b1.state), s1, t1, [0], 5.0).data
    e2 = d.embed(Tensor(b2.state), s2, t2, [0], 5.0).data
    np.testing.assert_allclose(e1, e2, atol=1e-13)


# -- decoder ------------------------------------------------------------------------


def test_zero_decoder_gives_half():
    d = _model()
    for k in d.params:
        if k.startswith("dec."):
            d.params[k].data = np.zeros_like(d.params[k].data)
    assert d.decode(Tensor(Rng(0).normal((3, 8)))).data.tolist() == [0.5] * 3


def test_scores_strictly_inside_unit_interval():
    d = _model()
    sc = d.decode(Tensor(Rng(1).normal((200, 8)) * 50)).data
    assert np.all((sc > 0) & (sc < 1))


def test_decoder_gradient_check():
    d = _model()
    x = Tensor(Rng(2).normal((6, 8)))
    dec = {k: v for k, v in d.params.items() if k.startswith("dec.")}
    gradcheck._generic_point(dec, Rng(3))
    assert nx.fd_check(lambda: nx.mean(d.decode(x)), dec) < 1e-5


# -- whole-model properties ---------------------------------------------------------


def test_scores_ignore_future_events():
    d = _model()
    s = _stream(1, m=60)
    bank, table = _state_after(d, s, 30)
    mem = Tensor(bank.state)
    q = slice(30, 45)
    full = d.score(mem, s, table, s.src[q], s.dst[q], s.time[q]).data
    for cut in (31, 38, 45):
        part = d.score(mem, s.slice(0, cut), table, s.src[q], s.dst[q], s.time[q]).data
        np.testing.assert_array_equal(full[: cut - 30], part[: cut - 30])


def test_replay_is_bit_identical():
    d = _model()
    s = _stream(2)
    a_bank, a_tab = _state_after(d, s, 25)
    b_bank, b_tab = _state_after(d, s, 25)
    q = slice(25, 40)
    a = d.score(Tensor(a_bank.state), s, a_tab, s.src[q], s.dst[q], s.time[q]).data
    b = d.score(Tensor(b_bank.state), s, b_tab, s.src[q], s.dst[q], s.time[q]).data
    assert np.array_equal(a, b)


@pytest.mark.parametrize("seed", range(3))
def test_end_to_end_gradients(seed):
    assert gradcheck.check_discriminator(seed) < 1e-4


def test_mean_score_gradient_spec_variant():
    d = _model(relative_pos=False)
    gradcheck._generic_point(d.params, Rng(4))
    s = _stream(3, n=5, m=20)
    bank = MemoryBank(5, 3)
    _, table = _state_after(d, s, 10)

    def f():
        mem, _ = bank.advance(d.params, s.src[:10], s.dst[:10], s.time[:10], s.feat[:10])
        return nx.mean(d.score(mem, s, table, s.src[10:], s.dst[10:], s.time[10:]))

    assert nx.fd_check(f, d.params) < 1e-4
