import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gady.tgraph import (EventStore, IngestError, Label, batches, ingest, split,
                         temporal_neighbors)


def _store(events, n=None):
    src, dst, t = zip(*events)
    return EventStore(src, dst, t, n or max(max(src), max(dst)) + 1)


def test_shuffled_times_come_back_sorted(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("src,dst,time\na,b,30\nb,c,10\nc,a,20\n")
    s = ingest(p)
    assert s.time.tolist() == [0.0, 10.0, 20.0]
    # dense ids follow first appearance in time order: b, c, a
    assert s.src.tolist() == [0, 1, 2]
    assert s.dst.tolist() == [1, 2, 0]


def test_ucimsg_format_and_comments(tmp_path):
    p = tmp_path / "uci.txt"
    p.write_text("% header\n# more\n10 20 1 1082040961\n20 10 3 1082155839\n10 10 1 1082155840\n")
    s = ingest(p, "ucimsg")
    assert (s.num_nodes, len(s)) == (2, 3)
    assert s.time[0] == 0.0 and s.time[1] == 1082155839 - 1082040961
    assert s.feat_dim == 0
    # self-loops are retained
    assert s.src[2] == s.dst[2]


def test_bitcoin_rating_is_optional_feature(tmp_path):
    p = tmp_path / "btc.csv"
    p.write_text("6,2,4,1289241911.72836\n6,5,2,1289241941.53378\n")
    assert ingest(p, "bitcoin_otc").feat_dim == 0
    s = ingest(p, "bitcoin_otc", use_edge_weight=True)
    assert s.feat[:, 0].tolist() == [4.0, 2.0]


def test_email_format(tmp_path):
    p = tmp_path / "email.csv"
    p.write_text("1,2,5\n2,3,7\n")
    s = ingest(p, "email_dnc")
    assert (s.num_nodes, len(s)) == (3, 2)


@pytest.mark.parametrize("body, fmt, line", [
    ("1 2 3\n", "ucimsg", 1),
    ("1,2,x,4\n", "bitcoin_otc", 1),
    ("1,2,3\n1,2\n", "email_dnc", 2),
    ("src,dst,time\n0,1,2\n0,1\n", "generic_csv", 3),
])
def test_malformed_row_reports_line(tmp_path, body, fmt, line):
    p = tmp_path / "bad"
    p.write_text(body)
    with pytest.raises(IngestError, match=f":{line}:"):
        ingest(p, fmt)


def test_empty_file_raises(tmp_path):
    p = tmp_path / "empty"
    p.write_text("% nothing\n")
    with pytest.raises(IngestError):
        ingest(p, "ucimsg")


def test_unknown_format(tmp_path):
    p = tmp_path / "x"
    p.write_text("1,2,3\n")
    with pytest.raises(IngestError):
        ingest(p, "parquet")


def test_ingest_roundtrip_is_identity(tmp_path):
    rng = np.random.default_rng(0)
    raw = tmp_path / "raw.csv"
    lines = ["src,dst,time,f0"] + [f"n{rng.integers(9)},n{rng.integers(9)},{rng.integers(100) + 50},{rng.normal():.6f}"
                                   for _ in range(40)]
    raw.write_text("\n".join(lines) + "\n")
    first = ingest(raw)
    again = tmp_path / "canon.csv"
    first.to_csv(again)
    assert ingest(again).equals(first)


def test_remap_is_bijection(tmp_path):
    p = tmp_path / "ids.csv"
    p.write_text("src,dst,time\n100,7,1\n7,55,2\n55,100,3\n999,7,4\n")
    s = ingest(p)
    assert sorted(s.id_map.values()) == list(range(s.num_nodes))
    assert len(set(s.id_map)) == s.num_nodes


def test_labeled_csv_keeps_ids(tmp_path):
    p = tmp_path / "lab.csv"
    p.write_text("src,dst,time,label\n3,4,10.5,0\n4,1,11.0,1\n")
    s = ingest(p, remap=False, num_nodes=10)
    assert s.num_nodes == 10
    assert s.label.tolist() == [Label.REAL, Label.INJECTED]
    assert s.time.tolist() == [10.5, 11.0]


def test_adjacency_is_symmetric():
    s = _store([(0, 1, 1.0), (1, 2, 2.0), (2, 2, 3.0)])
    peers, eidx, _ = s.adjacency[1]
    assert peers.tolist() == [0, 2] and eidx.tolist() == [0, 1]
    assert s.adjacency[0][0].tolist() == [1]
    assert s.adjacency[2][1].tolist() == [1, 2]


def test_ties_keep_insertion_order():
    s = EventStore([5, 1, 2], [0, 0, 0], [1.0, 1.0, 0.0], 6)
    assert s.src.tolist() == [2, 5, 1]


def test_split_prefix():
    s = _store([(0, 1, float(i)) for i in range(10)])
    a, b = split(s, 0.5)
    assert a.time.tolist() == [0, 1, 2, 3, 4] and b.time.tolist() == [5, 6, 7, 8, 9]
    a, b = split(s, 0.55)
    assert len(a) == 5


def test_split_of_uci_size():
    s = _store([(0, 1, float(i)) for i in range(13838)])
    assert len(split(s, 0.5)[0]) == 6919


@pytest.mark.parametrize("ratio", [0.0, 1.0, 0.05])
def test_split_rejects_empty_side(ratio):
    s = _store([(0, 1, float(i)) for i in range(10)])
    with pytest.raises(ValueError):
        split(s, ratio)


def test_neighbors_strictly_before():
    s = _store([(0, 1, 1.0), (0, 2, 2.0), (3, 0, 3.0)])
    assert temporal_neighbors(s, 0, 3.0, k=2) == [(2, 1, 2.0), (1, 0, 1.0)]
    assert temporal_neighbors(s, 0, 10.0, k=50) == [(3, 2, 3.0), (2, 1, 2.0), (1, 0, 1.0)]
    assert temporal_neighbors(s, 4 - 1, 1.0) == []
    with pytest.raises(ValueError):
        temporal_neighbors(s, 0, 1.0, k=0)


def test_batches():
    s = _store([(0, 1, float(i // 2)) for i in range(10)])
    bs = batches(s, 4)
    assert [b.stop - b.start for b in bs] == [4, 4, 2]
    for x, y in zip(bs, bs[1:]):
        assert x.t_max <= y.t_min
    one = batches(_store([(0, 1, 7.0)]), 200)
    assert len(one) == 1 and (one[0].t_min, one[0].t_max) == (7.0, 7.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6), st.integers(0, 20)), min_size=1, max_size=40),
       st.integers(0, 6), st.integers(0, 22), st.integers(1, 5))
def test_neighbor_causality(events, node, t, k):
    s = _store([(a, b, float(c)) for a, b, c in events], 7)
    got = temporal_neighbors(s, node, float(t), k)
    assert len(got) <= k
    assert all(tt < t for _, _, tt in got)
    assert [tt for _, _, tt in got] == sorted((tt for _, _, tt in got), reverse=True)
    # exactly the newest incident events
    inc = [i for i in range(len(s)) if node in (s.src[i], s.dst[i]) and s.time[i] < t]
    assert sorted(e for _, e, _ in got) == inc[-k:] if inc else got == []
