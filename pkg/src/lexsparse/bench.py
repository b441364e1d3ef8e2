"""Single-threaded latency and work counters for query processing."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from lexsparse.encoder import EncoderParams, embed_nonparametric, embed_query
from lexsparse.evaluation import Qrels, ndcg_at_k
from lexsparse.index import InvertedIndex, SearchCounters, search
from lexsparse.vocab import Vocabulary

MODES = ("parametric", "nonparametric")


@dataclass
class QueryRecord:
    qid: str
    latency_us: float
    postings_scanned: int
    accumulator_updates: int


@dataclass
class BenchReport:
    mode: str
    k: int | None
    corpus_size: int
    query_count: int
    encoder_forwards: int = 0
    postings_scanned: int = 0
    accumulator_updates: int = 0
    records: list[QueryRecord] = field(default_factory=list)
    run: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    @property
    def latencies(self) -> np.ndarray:
        return np.array([r.latency_us for r in self.records])

    def summary(self) -> dict[str, float]:
        lat = self.latencies
        return {
            "mean_us": float(lat.mean()),
            "median_us": float(np.median(lat)),
            "p95_us": float(np.percentile(lat, 95)),
        }

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                rec = {"mode": self.mode, "k": self.k, **asdict(r)}
                fh.write(json.dumps(rec) + "\n")


def measure(
    ix: InvertedIndex,
    queries: Sequence[tuple[str, str]],
    mode: str,
    vocab: Vocabulary,
    k: int | None = None,
    params: EncoderParams | None = None,
    top_n: int = 10,
    activation: str = "elu1p",
) -> BenchReport:
    """Embed and search each (qid, text) in turn, timing both steps together."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "parametric" and params is None:
        raise ValueError("parametric mode requires encoder parameters")
    if not queries:
        raise ValueError("no queries")
    if mode == "parametric" and k is None:
        k = params.d
    rep = BenchReport(mode, k if mode == "parametric" else None, ix.num_docs, len(queries))
    for qid, text in queries:
        c = SearchCounters()
        t0 = time.perf_counter_ns()
        if mode == "parametric":
            q = embed_query(params, vocab, text, k=k, activation=activation)
            rep.encoder_forwards += 1
        else:
            q = embed_nonparametric(vocab, text)
        ranked = search(ix, q, top_n, counters=c)
        elapsed = (time.perf_counter_ns() - t0) / 1000.0
        rep.records.append(QueryRecord(qid, elapsed, c.postings_scanned, c.accumulator_updates))
        rep.postings_scanned += c.postings_scanned
        rep.accumulator_updates += c.accumulator_updates
        rep.run[qid] = ranked
    return rep


@dataclass
class SweepRow:
    k: int
    report: BenchReport
    ndcg10: float | None


def sweep_k(
    ix: InvertedIndex,
    queries: Sequence[tuple[str, str]],
    params: EncoderParams,
    vocab: Vocabulary,
    k_values: Sequence[int],
    qrels: Qrels | None = None,
    top_n: int = 10,
    activation: str = "elu1p",
) -> list[SweepRow]:
    if not k_values:
        raise ValueError("k_values must be non-empty")
    rows = []
    for k in k_values:
        rep = measure(ix, queries, "parametric", vocab, k=k, params=params, top_n=top_n, activation=activation)
        ndcg = ndcg_at_k(qrels, rep.run, 10).mean if qrels is not None else None
        rows.append(SweepRow(k, rep, ndcg))
    return rows


TABLE_HEADER = [
    "mode",
    "k",
    "queries",
    "mean_us",
    "median_us",
    "p95_us",
    "encoder_forwards",
    "postings_scanned",
    "accumulator_updates",
    "ndcg@10",
]


def table_row(rep: BenchReport, ndcg10: float | None = None) -> list[str]:
    s = rep.summary()
    return [
        rep.mode,
        "-" if rep.k is None else str(rep.k),
        str(rep.query_count),
        f"{s['mean_us']:.1f}",
        f"{s['median_us']:.1f}",
        f"{s['p95_us']:.1f}",
        str(rep.encoder_forwards),
        str(rep.postings_scanned),
        str(rep.accumulator_updates),
        "-" if ndcg10 is None else f"{ndcg10:.4f}",
    ]


def format_table(rows: list[list[str]]) -> str:
    return "\n".join("\t".join(r) for r in [TABLE_HEADER, *rows])
