"""Exact inverted index over sparse vocabulary-space vectors.

Posting weights are rounded to float32 when the index is built, which is also
the on-disk precision; scores accumulate in float64. An index therefore scores
identically before and after a save/load round trip.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from lexsparse.sparsevec import SparseVector, dot

_MAGIC = b"VDRI"
_VERSION = 1


class IndexFormatError(ValueError):
    """Raised for malformed index input or files."""


@dataclass
class SearchCounters:
    postings_scanned: int = 0  # posting lists visited
    accumulator_updates: int = 0  # (doc, weight) entries accumulated

    def add(self, other: SearchCounters) -> None:
        self.postings_scanned += other.postings_scanned
        self.accumulator_updates += other.accumulator_updates


@dataclass(frozen=True)
class PostingList:
    docs: np.ndarray  # int64, strictly increasing
    weights: np.ndarray  # float32, > 0


class InvertedIndex:
    def __init__(self, vocab_size: int, doc_table: Sequence[str], postings: dict[int, PostingList]):
        self.vocab_size = int(vocab_size)
        self.doc_table = list(doc_table)
        self.postings = dict(sorted(postings.items()))
        self.nonzero_count = sum(p.docs.size for p in self.postings.values())

    @property
    def num_docs(self) -> int:
        return len(self.doc_table)

    def doc_vector(self, internal_id: int) -> SparseVector:
        """Reassemble one document's stored vector (linear in index size)."""
        dims, weights = [], []
        for dim, pl in self.postings.items():
            pos = np.searchsorted(pl.docs, internal_id)
            if pos < pl.docs.size and pl.docs[pos] == internal_id:
                dims.append(dim)
                weights.append(float(pl.weights[pos]))
        return SparseVector(np.array(dims, dtype=np.int64), np.array(weights))

    def structurally_equal(self, other: InvertedIndex) -> bool:
        if (self.vocab_size, self.doc_table) != (other.vocab_size, other.doc_table):
            return False
        if self.postings.keys() != other.postings.keys():
            return False
        return all(
            np.array_equal(pl.docs, other.postings[d].docs) and np.array_equal(pl.weights, other.postings[d].weights)
            for d, pl in self.postings.items()
        )


def quantize(vec: SparseVector) -> SparseVector:
    """Round weights to float32 as the index stores them; drops underflows."""
    w = vec.weights.astype(np.float32).astype(np.float64)
    keep = w > 0
    return SparseVector(vec.dims[keep], w[keep])


def build(docs: Iterable[tuple[str, SparseVector]], vocab_size: int | None = None) -> InvertedIndex:
    doc_table: list[str] = []
    seen: set[str] = set()
    per_dim: dict[int, tuple[list[int], list[float]]] = {}
    max_dim = -1
    for internal, (ext_id, vec) in enumerate(docs):
        if ext_id in seen:
            raise IndexFormatError(f"duplicate document id {ext_id!r}")
        seen.add(ext_id)
        doc_table.append(ext_id)
        for dim, w in zip(vec.dims.tolist(), vec.weights.tolist()):
            if w < 0:
                raise IndexFormatError(f"negative weight in document {ext_id!r} dimension {dim}")
            if w == 0:
                continue
            entry = per_dim.setdefault(dim, ([], []))
            entry[0].append(internal)
            entry[1].append(w)
            max_dim = max(max_dim, dim)
    if vocab_size is None:
        vocab_size = max_dim + 1
    elif max_dim >= vocab_size:
        raise IndexFormatError(f"dimension {max_dim} outside vocabulary of size {vocab_size}")
    postings = {}
    for dim, (ds, ws) in per_dim.items():
        w32 = np.asarray(ws, dtype=np.float32)
        keep = w32 > 0
        if keep.any():
            postings[dim] = PostingList(np.asarray(ds, dtype=np.int64)[keep], w32[keep])
    return InvertedIndex(vocab_size, doc_table, postings)


def _rank(scores: np.ndarray, touched: np.ndarray, top_n: int) -> list[int]:
    cand = np.flatnonzero(touched)
    order = cand[np.lexsort((cand, -scores[cand]))]
    if order.size >= top_n:
        return order[:top_n].tolist()
    pad = np.flatnonzero(~touched)[: top_n - order.size]
    return order.tolist() + pad.tolist()


def search(
    ix: InvertedIndex,
    q: SparseVector,
    top_n: int,
    counters: SearchCounters | None = None,
) -> list[tuple[str, float]]:
    """Top documents by accumulated score, ties to the lower internal id.

    Untouched documents (score 0) only pad the list up to ``top_n``.
    """
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    acc = np.zeros(ix.num_docs)
    touched = np.zeros(ix.num_docs, dtype=bool)
    lists = updates = 0
    # ascending dim order, the same summation order as sparsevec.dot
    for dim, w in zip(q.dims.tolist(), q.weights.tolist()):
        pl = ix.postings.get(dim)
        if pl is None:
            continue
        lists += 1
        updates += pl.docs.size
        acc[pl.docs] += w * pl.weights.astype(np.float64)
        touched[pl.docs] = True
    if counters is not None:
        counters.postings_scanned += lists
        counters.accumulator_updates += updates
    return [(ix.doc_table[i], float(acc[i])) for i in _rank(acc, touched, top_n)]


def brute_force_search(docs: Sequence[tuple[str, SparseVector]], q: SparseVector, top_n: int) -> list[tuple[str, float]]:
    """Reference scorer: a dot product against every document."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    scores = np.array([dot(q, vec) for _, vec in docs], dtype=np.float64)
    ids = np.arange(len(docs))
    order = np.lexsort((ids, -scores))[:top_n]
    return [(docs[i][0], float(scores[i])) for i in order.tolist()]


@dataclass
class IndexStats:
    num_docs: int
    nonzero_count: int
    num_nonempty_dims: int
    posting_min: int
    posting_median: float
    posting_max: int
    posting_mean: float


def stats(ix: InvertedIndex) -> IndexStats:
    lengths = np.array([pl.docs.size for pl in ix.postings.values()], dtype=np.int64)
    if lengths.size == 0:
        return IndexStats(ix.num_docs, 0, 0, 0, 0.0, 0, 0.0)
    return IndexStats(
        num_docs=ix.num_docs,
        nonzero_count=ix.nonzero_count,
        num_nonempty_dims=int(lengths.size),
        posting_min=int(lengths.min()),
        posting_median=float(np.median(lengths)),
        posting_max=int(lengths.max()),
        posting_mean=float(lengths.mean()),
    )


# -- persistence -------------------------------------------------------------

_POSTING = np.dtype([("doc", "<u8"), ("weight", "<f4")])


def to_bytes(ix: InvertedIndex) -> bytes:
    parts = [_MAGIC, struct.pack("<IIQQ", _VERSION, ix.vocab_size, ix.num_docs, len(ix.postings))]
    for dim, pl in ix.postings.items():
        parts.append(struct.pack("<IQ", dim, pl.docs.size))
        rec = np.empty(pl.docs.size, dtype=_POSTING)
        rec["doc"] = pl.docs
        rec["weight"] = pl.weights
        parts.append(rec.tobytes())
    parts.append(struct.pack("<Q", ix.num_docs))
    for ext in ix.doc_table:
        raw = ext.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    return b"".join(parts)


def save(ix: InvertedIndex, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(ix))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise IndexFormatError(f"truncated index reading {what} at byte offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def from_bytes(data: bytes) -> InvertedIndex:
    r = _Reader(data)
    if r.take(4, "magic") != _MAGIC:
        raise IndexFormatError("bad magic at byte offset 0")
    (version,) = r.unpack("<I", "version")
    if version != _VERSION:
        raise IndexFormatError(f"unsupported index version {version} at byte offset 4")
    vocab_size, num_docs, num_dims = r.unpack("<IQQ", "header")
    postings = {}
    prev_dim = -1
    for _ in range(num_dims):
        at = r.pos
        dim, count = r.unpack("<IQ", "posting header")
        if dim <= prev_dim or dim >= vocab_size:
            raise IndexFormatError(f"bad dimension {dim} at byte offset {at}")
        prev_dim = dim
        rec = np.frombuffer(r.take(count * _POSTING.itemsize, f"postings of dimension {dim}"), dtype=_POSTING)
        docs = rec["doc"].astype(np.int64)
        if count and (docs[-1] >= num_docs or np.any(np.diff(docs) <= 0)):
            raise IndexFormatError(f"bad posting list for dimension {dim} at byte offset {at}")
        postings[dim] = PostingList(docs, rec["weight"].astype(np.float32))
    at = r.pos
    (count,) = r.unpack("<Q", "doc table size")
    if count != num_docs:
        raise IndexFormatError(f"doc table size {count} != header doc count {num_docs} at byte offset {at}")
    table = []
    for _ in range(count):
        (n,) = r.unpack("<I", "doc id length")
        at = r.pos
        try:
            table.append(r.take(n, "doc id").decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise IndexFormatError(f"invalid UTF-8 doc id at byte offset {at}") from exc
    if r.pos != len(data):
        raise IndexFormatError(f"trailing bytes at byte offset {r.pos}")
    return InvertedIndex(vocab_size, table, postings)


def load(path: str | Path) -> InvertedIndex:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IndexFormatError(f"cannot read index {path}: {exc}") from exc
    return from_bytes(data)


# -- text dump ---------------------------------------------------------------


def format_dump_line(ext_id: str, vec: SparseVector) -> str:
    return "\t".join([ext_id] + [f"{d}:{w!r}" for d, w in vec.pairs()])


def write_dump(path: str | Path, items: Iterable[tuple[str, SparseVector]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ext_id, vec in items:
            fh.write(format_dump_line(ext_id, vec) + "\n")


def read_dump(path: str | Path) -> list[tuple[str, SparseVector]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            ext_id, *fields = line.split("\t")
            try:
                pairs = [(int(d), float(w)) for d, w in (f.split(":", 1) for f in fields)]
            except ValueError as exc:
                raise IndexFormatError(f"{path}:{lineno}: bad dim:weight field") from exc
            out.append((ext_id, SparseVector.from_pairs(pairs)))
    return out
