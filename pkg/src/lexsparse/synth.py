"""Seeded synthetic topic corpus for desk-scale end-to-end runs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class SynthConfig:
    topics: int = 8
    vocab_size: int = 256
    docs: int = 400
    queries: int = 80
    train_queries: int | None = None  # defaults to the number of docs
    doc_len: int = 24
    query_len: int = 4
    noise: float = 0.2
    noise_pool: int = 32
    seed: int = 13

    def validate(self) -> None:
        if self.topics < 2:
            raise ValueError("need at least 2 topics")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must be a probability")
        if self.noise_pool < 0:
            raise ValueError("noise pool must be >= 0")
        if self.noise > 0 and self.noise_pool == 0:
            raise ValueError("noise > 0 needs a non-empty noise pool")
        if self.vocab_size < 2 * self.topics + self.noise_pool:
            raise ValueError(
                f"vocab size {self.vocab_size} < 2 * topics + noise pool = {2 * self.topics + self.noise_pool}"
            )
        if self.docs < self.topics:
            raise ValueError("need at least one doc per topic")
        if self.queries < 1 or self.doc_len < 1 or self.query_len < 1:
            raise ValueError("queries, doc length and query length must be >= 1")


@dataclass
class SynthData:
    vocab: list[str]
    topic_tokens: list[list[str]]
    noise_tokens: list[str]
    corpus: list[dict]  # {"id", "text", "topic"}
    queries: list[dict]
    train_pairs: list[dict]
    qrels: dict[str, dict[str, int]]


def generate(cfg: SynthConfig) -> SynthData:
    """Partition the vocabulary into topic sets plus a noise set and sample texts.

    Docs and held-out queries cycle through topics; training pairs use fresh
    queries, a same-topic positive and a different-topic negative.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    per_topic = (cfg.vocab_size - cfg.noise_pool) // cfg.topics
    topic_tokens = [[f"t{t}w{j}" for j in range(per_topic)] for t in range(cfg.topics)]
    n_noise = cfg.vocab_size - per_topic * cfg.topics
    noise_tokens = [f"n{j}" for j in range(n_noise)]
    vocab = [tok for toks in topic_tokens for tok in toks] + noise_tokens

    def sample(topic: int, length: int) -> str:
        words = []
        for _ in range(length):
            if noise_tokens and rng.random() < cfg.noise:
                words.append(noise_tokens[rng.integers(len(noise_tokens))])
            else:
                words.append(topic_tokens[topic][rng.integers(per_topic)])
        return " ".join(words)

    corpus = [{"id": f"d{i}", "text": sample(i % cfg.topics, cfg.doc_len), "topic": i % cfg.topics} for i in range(cfg.docs)]
    queries = [
        {"id": f"q{i}", "text": sample(i % cfg.topics, cfg.query_len), "topic": i % cfg.topics} for i in range(cfg.queries)
    ]
    by_topic = [[d for d in corpus if d["topic"] == t] for t in range(cfg.topics)]
    qrels = {q["id"]: {d["id"]: 1 for d in by_topic[q["topic"]]} for q in queries}

    n_train = cfg.docs if cfg.train_queries is None else cfg.train_queries
    pairs = []
    for i in range(n_train):
        t = i % cfg.topics
        other = (t + 1 + int(rng.integers(cfg.topics - 1))) % cfg.topics
        pos = by_topic[t][rng.integers(len(by_topic[t]))]
        neg = by_topic[other][rng.integers(len(by_topic[other]))]
        pairs.append({"query": sample(t, cfg.query_len), "positive": pos["text"], "negative": neg["text"]})
    return SynthData(vocab, topic_tokens, noise_tokens, corpus, queries, pairs, qrels)


def write(data: SynthData, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "vocab": out / "vocab.txt",
        "corpus": out / "corpus.jsonl",
        "queries": out / "queries.jsonl",
        "qrels": out / "qrels.txt",
        "pairs": out / "pairs.jsonl",
    }
    paths["vocab"].write_text("".join(t + "\n" for t in data.vocab), encoding="utf-8")

    def jsonl(path: Path, records) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    jsonl(paths["corpus"], ({"id": d["id"], "text": d["text"]} for d in data.corpus))
    jsonl(paths["queries"], ({"id": q["id"], "text": q["text"]} for q in data.queries))
    jsonl(paths["pairs"], data.train_pairs)
    with open(paths["qrels"], "w", encoding="utf-8") as fh:
        for qid, docs in data.qrels.items():
            for docid, g in docs.items():
                fh.write(f"{qid} 0 {docid} {g}\n")
    return paths
