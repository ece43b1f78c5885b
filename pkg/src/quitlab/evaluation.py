"""Exhaustive retrieval and Recall@N with a geographic correctness radius."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .embedding import Metric, as_embedding, as_embeddings, pairwise_distances

DEFAULT_NS = (1, 5, 10)


@dataclass
class QueryResult:
    query_id: str
    top_ids: list
    correct: dict


@dataclass
class EvalReport:
    recall_at: dict
    num_queries: int
    per_query: list = field(default_factory=list)
    config_hash: str = ""
    distance_threshold_m: float = 25.0
    method: str = ""
    k: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recall_at"] = {str(n): v for n, v in self.recall_at.items()}
        for q in d["per_query"]:
            q["correct"] = {str(n): v for n, v in q["correct"].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        per_query = [
            QueryResult(q["query_id"], list(q["top_ids"]), {int(n): v for n, v in q["correct"].items()})
            for q in d["per_query"]
        ]
        return cls(
            recall_at={int(n): v for n, v in d["recall_at"].items()},
            num_queries=d["num_queries"],
            per_query=per_query,
            config_hash=d["config_hash"],
            distance_threshold_m=d["distance_threshold_m"],
            method=d["method"],
            k=d["k"],
        )


def rank_database(queries, database, db_ids, n: int, metric: Metric = "squared_l2") -> np.ndarray:
    """Positions of the ``n`` nearest database rows for every query row.

    Ties in distance are ordered by database id.
    """
    dist = pairwise_distances(queries, database, metric)
    ids = np.asarray(db_ids)
    n = min(n, dist.shape[1])
    return np.stack([np.lexsort((ids, row))[:n] for row in dist])


def retrieve_top_n(query, database, n: int, metric: Metric = "squared_l2") -> list:
    """Ids of the ``n`` database entries nearest to ``query``.

    ``database`` is a sequence of ``(id, embedding)`` pairs.
    """
    if not database:
        raise ValueError("database is empty")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    q = as_embedding(query, "query")
    ids = [i for i, _ in database]
    E = as_embeddings([e for _, e in database], "database")
    order = rank_database(q[None, :], E, ids, n, metric)[0]
    return [ids[i] for i in order]


def recall_at_n(query_records, query_emb, db_records, db_emb, ns=DEFAULT_NS, threshold_m: float = 25.0,
                metric: Metric = "squared_l2", method: str = "", k: int | None = None,
                config_hash: str = "") -> EvalReport:
    """A query is correct at N when any of its top-N results lies within ``threshold_m`` of it."""
    if len(query_records) == 0:
        raise ValueError("no queries to evaluate")
    if len(db_records) == 0:
        raise ValueError("database is empty")
    ns = sorted(set(int(n) for n in ns))
    if any(n < 1 for n in ns):
        raise ValueError(f"recall cut-offs must be >= 1, got {ns}")
    q_pos = np.array([r.position for r in query_records], dtype=np.float64)
    d_pos = np.array([r.position for r in db_records], dtype=np.float64)
    db_ids = [r.id for r in db_records]
    n_max = max(ns, default=0)
    top = rank_database(query_emb, db_emb, db_ids, n_max, metric) if n_max else np.zeros((len(query_records), 0), int)
    per_query, hits = [], {n: 0 for n in ns}
    for qi, rec in enumerate(query_records):
        geo = np.hypot(*(d_pos[top[qi]] - q_pos[qi]).T) if top.shape[1] else np.zeros(0)
        near = geo <= threshold_m
        correct = {n: bool(near[:n].any()) for n in ns}
        for n, ok in correct.items():
            hits[n] += ok
        per_query.append(QueryResult(rec.id, [db_ids[j] for j in top[qi]], correct))
    total = len(query_records)
    return EvalReport({n: hits[n] / total for n in ns}, total, per_query, config_hash,
                      float(threshold_m), method, k)


def _csv_rows(reports):
    ns = sorted({n for r in reports for n in r.recall_at})
    header = ["method", "k", *(f"recall@{n}" for n in ns)]
    rows = [[r.method, "" if r.k is None else str(r.k), *(repr(float(r.recall_at[n])) for n in ns)]
            for r in reports if r.recall_at]
    return header, rows


def write_results_csv(reports, path) -> None:
    """One row per report: method, k, recall@N for every N present."""
    header, rows = _csv_rows(reports)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_report(report: EvalReport, path, fmt: str = "json") -> None:
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=1)
            fh.write("\n")
    elif fmt == "csv":
        write_results_csv([report], path)
    else:
        raise ValueError(f"unknown report format {fmt!r}; expected 'json' or 'csv'")


def load_report(path) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        return EvalReport.from_dict(json.load(fh))
