"""TREC run/qrels I/O, ranking metrics, paired t-test, token-level reports."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import betainc

from lexsparse.sparsevec import SparseVector
from lexsparse.vocab import Vocabulary

Qrels = dict[str, dict[str, int]]
Run = dict[str, list[tuple[str, float]]]


class ParseError(ValueError):
    pass


# -- I/O ---------------------------------------------------------------------


def read_qrels(path: str | Path) -> Qrels:
    qrels: Qrels = defaultdict(dict)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 'qid 0 docid grade'")
            qid, _, docid, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: grade {grade!r} is not an integer") from None
            if g < 0:
                raise ParseError(f"{path}:{lineno}: negative grade {g}")
            if docid in qrels[qid]:
                raise ParseError(f"{path}:{lineno}: duplicate judgment for ({qid}, {docid})")
            qrels[qid][docid] = g
    return dict(qrels)


def write_qrels(path: str | Path, qrels: Qrels) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, docs in qrels.items():
            for docid, g in docs.items():
                fh.write(f"{qid} 0 {docid} {g}\n")


def read_run(path: str | Path) -> Run:
    run: Run = defaultdict(list)
    seen: dict[str, set[str]] = defaultdict(set)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ParseError(f"{path}:{lineno}: expected 'qid Q0 docid rank score tag'")
            qid, _, docid, _rank, score, _tag = parts
            try:
                s = float(score)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: score {score!r} is not a number") from None
            if docid in seen[qid]:
                raise ParseError(f"{path}:{lineno}: duplicate doc {docid} for query {qid}")
            seen[qid].add(docid)
            run[qid].append((docid, s))
    # stable: equal scores keep file order
    return {qid: sorted(docs, key=lambda x: -x[1]) for qid, docs in run.items()}


def format_run_lines(qid: str, ranked: Sequence[tuple[str, float]], tag: str) -> list[str]:
    return [f"{qid} Q0 {docid} {rank} {score:.9g} {tag}" for rank, (docid, score) in enumerate(ranked, start=1)]


def write_run(path: str | Path, run: Run, tag: str = "lexsparse") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, ranked in run.items():
            for line in format_run_lines(qid, ranked, tag):
                fh.write(line + "\n")


# -- metrics -----------------------------------------------------------------


@dataclass
class MetricReport:
    name: str
    k: int
    per_query: dict[str, float] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        if not self.per_query:
            return 0.0
        return float(np.mean(list(self.per_query.values())))

    @property
    def count(self) -> int:
        return len(self.per_query)


def _check_k(k: int) -> None:
    if k < 1:
        raise ValueError("k must be >= 1")


def ndcg_at_k(qrels: Qrels, run: Run, k: int) -> MetricReport:
    """Linear-gain NDCG with a log2(rank + 1) discount; unjudged docs are 0."""
    _check_k(k)
    rep = MetricReport("ndcg", k)
    for qid, judged in qrels.items():
        ranked = run.get(qid, [])[:k]
        dcg = sum(judged.get(doc, 0) / math.log2(i + 2) for i, (doc, _) in enumerate(ranked))
        ideal = sorted(judged.values(), reverse=True)[:k]
        idcg = sum(g / math.log2(i + 2) for i, g in enumerate(ideal))
        rep.per_query[qid] = dcg / idcg if idcg > 0 else 0.0
    return rep


def recall_at_k(qrels: Qrels, run: Run, k: int) -> MetricReport:
    _check_k(k)
    rep = MetricReport("recall", k)
    for qid, judged in qrels.items():
        relevant = {d for d, g in judged.items() if g >= 1}
        if not relevant:
            continue
        top = {doc for doc, _ in run.get(qid, [])[:k]}
        rep.per_query[qid] = len(relevant & top) / len(relevant)
    return rep


def mrr_at_k(qrels: Qrels, run: Run, k: int) -> MetricReport:
    _check_k(k)
    rep = MetricReport("mrr", k)
    for qid, judged in qrels.items():
        rr = 0.0
        for rank, (doc, _) in enumerate(run.get(qid, [])[:k], start=1):
            if judged.get(doc, 0) >= 1:
                rr = 1.0 / rank
                break
        rep.per_query[qid] = rr
    return rep


def success_at_k(qrels: Qrels, run: Run, k: int) -> MetricReport:
    """1 if any relevant doc is in the top k, else 0 (hit rate).

    Coincides with recall@k when each query has one relevant document.
    """
    _check_k(k)
    rep = MetricReport("success", k)
    for qid, judged in qrels.items():
        relevant = {d for d, g in judged.items() if g >= 1}
        if not relevant:
            continue
        rep.per_query[qid] = float(any(doc in relevant for doc, _ in run.get(qid, [])[:k]))
    return rep


METRICS: dict[str, Callable[[Qrels, Run, int], MetricReport]] = {
    "ndcg": ndcg_at_k,
    "recall": recall_at_k,
    "mrr": mrr_at_k,
    "success": success_at_k,
}


def parse_metric(spec: str) -> tuple[str, int]:
    """'ndcg@10' -> ('ndcg', 10)."""
    name, sep, k = spec.strip().lower().partition("@")
    if not sep or name not in METRICS:
        raise ValueError(f"unknown metric {spec!r}; expected one of {sorted(METRICS)} with @k")
    try:
        kk = int(k)
    except ValueError:
        raise ValueError(f"bad cutoff in metric {spec!r}") from None
    _check_k(kk)
    return name, kk


def evaluate(qrels: Qrels, run: Run, metric: str) -> MetricReport:
    name, k = parse_metric(metric)
    return METRICS[name](qrels, run, k)


# -- significance ------------------------------------------------------------


@dataclass
class TTest:
    t: float
    p: float
    df: int

    @property
    def significant(self) -> bool:
        return self.p < 0.01


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTest:
    """Two-sided paired Student t-test on aligned per-query values."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTest(0.0, 1.0, df)
        return TTest(math.copysign(math.inf, mean), 0.0, df)
    t = mean / (sd / math.sqrt(n))
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return TTest(t, p, df)


def compare_reports(a: MetricReport, b: MetricReport) -> TTest:
    """Paired test over the queries both reports evaluated."""
    qids = sorted(set(a.per_query) & set(b.per_query))
    return paired_t_test([a.per_query[q] for q in qids], [b.per_query[q] for q in qids])


# -- token-level reports -----------------------------------------------------


def _ranked_entries(dims: np.ndarray, weights: np.ndarray, m: int) -> list[int]:
    if m < 1:
        raise ValueError("m must be >= 1")
    order = np.lexsort((dims, -weights))
    return order[:m].tolist()


def top_tokens(vec: SparseVector, vocab: Vocabulary, m: int) -> list[tuple[str, float]]:
    idx = _ranked_entries(vec.dims, vec.weights, m)
    return [(vocab.token(int(vec.dims[i])), float(vec.weights[i])) for i in idx]


@dataclass
class Contributions:
    top: list[tuple[str, float]]
    total: float  # sum over all shared dims


def token_contributions(q: SparseVector, p: SparseVector, vocab: Vocabulary, m: int) -> Contributions:
    """Per-token products q[i] * p[i] over shared dims; ``total`` equals dot(q, p)."""
    shared, qi, pi = np.intersect1d(q.dims, p.dims, assume_unique=True, return_indices=True)
    prods = q.weights[qi] * p.weights[pi]
    total = 0.0
    for x in prods.tolist():
        total += x
    idx = _ranked_entries(shared, prods, m)
    return Contributions([(vocab.token(int(shared[i])), float(prods[i])) for i in idx], total)


@dataclass
class TokenStats:
    top: list[tuple[str, float]]
    min: float
    median: float
    max: float
    num_embeddings: int


def corpus_token_stats(embeddings: Iterable[SparseVector], vocab: Vocabulary, m: int) -> TokenStats:
    """Mean value of every token over the embeddings (absent counts as 0)."""
    sums = np.zeros(len(vocab))
    count = 0
    for vec in embeddings:
        np.add.at(sums, vec.dims, vec.weights)
        count += 1
    if count == 0:
        raise ValueError("need at least one embedding")
    means = sums / count
    dims = np.arange(len(vocab))
    idx = _ranked_entries(dims, means, m)
    return TokenStats(
        top=[(vocab.token(i), float(means[i])) for i in idx],
        min=float(means.min()),
        median=float(np.median(means)),
        max=float(means.max()),
        num_embeddings=count,
    )
