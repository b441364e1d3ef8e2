"""Vocabulary loading, tokenization and bag-of-words vectors."""

from __future__ import annotations

import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from lexsparse.sparsevec import SparseVector

_SPLIT = re.compile(r"[^0-9a-z]+")

TokenSeq = list[int]


class VocabError(ValueError):
    pass


class Vocabulary:
    """Ordered set of distinct tokens; a token's id is its position."""

    __slots__ = ("tokens", "_ids")

    def __init__(self, tokens: Iterable[str]):
        tokens = tuple(tokens)
        ids: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if not tok:
                raise VocabError(f"empty token at position {i}")
            if tok in ids:
                raise VocabError(f"duplicate token {tok}")
            ids[tok] = i
        if len(tokens) < 2:
            raise VocabError("vocabulary too small")
        self.tokens = tokens
        self._ids = ids

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids[token]

    def get(self, token: str) -> int | None:
        return self._ids.get(token)

    def token(self, i: int) -> str:
        return self.tokens[i]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")


def load_vocab(path: str | Path) -> Vocabulary:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise VocabError(f"cannot read vocabulary {path}: {exc}") from exc
    tokens: list[str] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        tok = line.strip()
        if not tok:
            continue
        if tok in seen:
            raise VocabError(f"duplicate token {tok} at line {lineno} (first seen at line {seen[tok]})")
        seen[tok] = lineno
        tokens.append(tok)
    return Vocabulary(tokens)


def tokenize(vocab: Vocabulary, text: str) -> TokenSeq:
    """Lowercase, split on non-alphanumerics, keep in-vocabulary pieces.

    Unicode letters and digits count as word characters, so accented words
    stay whole.
    """
    ids = []
    for piece in _split_words(text.lower()):
        i = vocab.get(piece)
        if i is not None:
            ids.append(i)
    return ids


def _split_words(text: str) -> list[str]:
    if text.isascii():
        return [p for p in _SPLIT.split(text) if p]
    pieces, cur = [], []
    for ch in text:
        if ch.isalnum():
            cur.append(ch)
        elif cur:
            pieces.append("".join(cur))
            cur = []
    if cur:
        pieces.append("".join(cur))
    return pieces


def bow_vector(vocab: Vocabulary, ids: Sequence[int], normalize: bool = False) -> SparseVector:
    dims = np.unique(np.asarray(ids, dtype=np.int64))
    if dims.size and dims[-1] >= len(vocab):
        raise VocabError(f"token id {int(dims[-1])} out of range for vocabulary of size {len(vocab)}")
    weights = np.ones(dims.size)
    if normalize and dims.size:
        weights /= np.sqrt(dims.size)
    return SparseVector(dims, weights)
