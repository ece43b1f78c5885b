import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quitlab.dataset import GeoRecord
from quitlab.evaluation import (
    EvalReport,
    emit_report,
    load_report,
    recall_at_n,
    retrieve_top_n,
    write_results_csv,
)

from conftest import brute_dist


def rec(i, x, y):
    return GeoRecord(f"r{i:03d}", np.zeros(1), (x, y), "p")


def brute_top(query, database, n, metric="squared_l2"):
    scored = sorted((brute_dist(query, e, metric), i) for i, e in database)
    return [i for _, i in scored[:n]]


def brute_recall(qrecs, qemb, drecs, demb, ns, thr):
    out = {}
    db = [(r.id, e) for r, e in zip(drecs, demb)]
    pos = {r.id: r.position for r in drecs}
    for n in ns:
        hits = 0
        for r, e in zip(qrecs, qemb):
            top = brute_top(e, db, n)
            hits += any(math.dist(pos[i], r.position) <= thr for i in top)
        out[n] = hits / len(qrecs)
    return out


def test_retrieve_examples(rng):
    db = [(f"d{i}", rng.standard_normal(3)) for i in range(5)]
    assert retrieve_top_n(db[3][1], db, 1) == ["d3"]
    assert sorted(retrieve_top_n(db[0][1], db, 50)) == [i for i, _ in db]
    with pytest.raises(ValueError):
        retrieve_top_n(db[0][1], [], 1)
    with pytest.raises(ValueError):
        retrieve_top_n(db[0][1], db, 0)


def test_retrieve_ties_by_id():
    db = [("b", [1.0]), ("a", [-1.0]), ("c", [1.0])]
    assert retrieve_top_n([0.0], db, 3) == ["a", "b", "c"]


@pytest.mark.parametrize("metric", ["squared_l2", "l2"])
def test_retrieve_matches_full_sort(rng, metric):
    for trial in range(50):
        size = 50 if trial < 25 else int(rng.integers(1, 257))
        E = np.round(rng.standard_normal((size, 4)), 1)
        db = [(f"x{j:03d}", E[j]) for j in rng.permutation(size)]
        q = rng.standard_normal(4)
        n = int(rng.integers(1, size + 3))
        assert retrieve_top_n(q, db, n, metric) == brute_top(q, db, n, metric)


def test_recall_constructed_cases():
    qs = [rec(i, 100.0 * i, 0.0) for i in range(4)]
    db = [rec(10 + i, 100.0 * i + 3.0, 0.0) for i in range(4)]
    qe = np.eye(4)
    de = np.eye(4) + 0.01
    r = recall_at_n(qs, qe, db, de, (1, 5, 10))
    assert r.recall_at == {1: 1.0, 5: 1.0, 10: 1.0}
    far = [rec(20 + i, 5000.0, 5000.0 + i) for i in range(4)]
    assert recall_at_n(qs, qe, far, de).recall_at == {1: 0.0, 5: 0.0, 10: 0.0}
    with pytest.raises(ValueError):
        recall_at_n([], np.zeros((0, 4)), db, de)


def test_recall_threshold_inclusive():
    q = [rec(0, 0.0, 0.0)]
    d = [rec(1, 25.0, 0.0)]
    assert recall_at_n(q, np.zeros((1, 2)), d, np.zeros((1, 2)), (1,)).recall_at[1] == 1.0
    d = [rec(1, 25.0 + 1e-9, 0.0)]
    assert recall_at_n(q, np.zeros((1, 2)), d, np.zeros((1, 2)), (1,)).recall_at[1] == 0.0


def test_recall_matches_double_loop(rng):
    for _ in range(5):
        qrecs = [rec(i, *rng.uniform(0, 300, 2)) for i in range(20)]
        drecs = [rec(100 + i, *rng.uniform(0, 300, 2)) for i in range(100)]
        qe, de = rng.standard_normal((20, 5)), rng.standard_normal((100, 5))
        got = recall_at_n(qrecs, qe, drecs, de, (1, 5, 10))
        assert got.recall_at == brute_recall(qrecs, qe, drecs, de, (1, 5, 10), 25.0)
        assert got.num_queries == len(got.per_query) == 20


@given(st.integers(0, 2**31 - 1), st.integers(1, 30), st.integers(1, 40))
@settings(max_examples=60, deadline=None)
def test_recall_monotone_and_self_retrieval(seed, nq, nd):
    rng = np.random.default_rng(seed)
    qrecs = [rec(i, *rng.uniform(0, 200, 2)) for i in range(nq)]
    drecs = [rec(100 + i, *rng.uniform(0, 200, 2)) for i in range(nd)]
    qe, de = rng.standard_normal((nq, 3)), rng.standard_normal((nd, 3))
    r = recall_at_n(qrecs, qe, drecs, de, (1, 2, 5, 10, 50))
    vals = [r.recall_at[n] for n in sorted(r.recall_at)]
    assert vals == sorted(vals) and all(0 <= v <= 1 for v in vals)
    selfr = recall_at_n(qrecs, qe, qrecs + drecs, np.vstack([qe, de]), (1, 5, 10))
    assert all(v == 1.0 for v in selfr.recall_at.values())


def test_csv_row_format(tmp_path):
    path = tmp_path / "r.csv"
    write_results_csv([EvalReport({1: 0.8066, 5: 0.9088, 10: 0.9306}, 10, method="netvlad-analog", k=1)], path)
    assert path.read_text().splitlines() == ["method,k,recall@1,recall@5,recall@10",
                                             "netvlad-analog,1,0.8066,0.9088,0.9306"]


def test_csv_header_only_for_empty_ns(tmp_path):
    path = tmp_path / "r.csv"
    emit_report(EvalReport({}, 3, method="m"), path, "csv")
    assert path.read_text().splitlines() == ["method,k"]


def test_json_round_trip(tmp_path):
    qs = [rec(i, 10.0 * i, 0.0) for i in range(3)]
    rep = recall_at_n(qs, np.eye(3), qs, np.eye(3), (1, 2), method="x", k=2, config_hash="abc")
    path = tmp_path / "r.json"
    emit_report(rep, path)
    assert load_report(path) == rep
    with pytest.raises(ValueError):
        emit_report(rep, path, "xml")
