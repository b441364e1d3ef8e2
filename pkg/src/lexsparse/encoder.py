"""Weighting function: embedding lookup followed by the vocabulary head.

The head is layer norm -> projection to vocabulary space -> elu1p -> max
pooling over token positions. Gating (top-k plus bag-of-words) turns the
dense weights into the sparse embeddings used for indexing and search.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lexsparse.sparsevec import (
    ACTIVATIONS,
    SparseVector,
    apply_gate,
    gate_union,
    l2_normalize,
    top_k_dims,
)
from lexsparse.vocab import TokenSeq, Vocabulary, bow_vector, tokenize

LN_EPS = 1e-5
FULL = -1  # sentinel for "activate every dimension"

_MAGIC = b"VDRC"
_VERSION = 1


class EncodeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class EncoderParams:
    embedding: np.ndarray  # (|V|, d)
    ln_gamma: np.ndarray  # (d,)
    ln_beta: np.ndarray  # (d,)
    bias: np.ndarray  # (|V|,)
    projection: np.ndarray | None = None  # (d, |V|); None when tied

    def __post_init__(self):
        v, d = self.embedding.shape
        if d < 2:
            raise ValueError("hidden width d must be >= 2")
        if self.ln_gamma.shape != (d,) or self.ln_beta.shape != (d,):
            raise ValueError("layer-norm parameters must have shape (d,)")
        if self.bias.shape != (v,):
            raise ValueError("bias must have shape (|V|,)")
        if self.projection is not None and self.projection.shape != (d, v):
            raise ValueError("projection must have shape (d, |V|)")

    @property
    def tied(self) -> bool:
        return self.projection is None

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def d(self) -> int:
        return self.embedding.shape[1]

    @property
    def proj(self) -> np.ndarray:
        """The projection actually applied: embedding transpose when tied."""
        return self.embedding.T if self.projection is None else self.projection

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"embedding": self.embedding, "ln_gamma": self.ln_gamma, "ln_beta": self.ln_beta}
        if self.projection is not None:
            out["projection"] = self.projection
        out["bias"] = self.bias
        return out

    def copy(self) -> EncoderParams:
        return EncoderParams(
            embedding=self.embedding.copy(),
            ln_gamma=self.ln_gamma.copy(),
            ln_beta=self.ln_beta.copy(),
            bias=self.bias.copy(),
            projection=None if self.projection is None else self.projection.copy(),
        )


def init_params(vocab_size: int, d: int, tied: bool = True, seed: int = 0) -> EncoderParams:
    rng = np.random.default_rng(seed)
    emb = rng.uniform(-0.5 / d, 0.5 / d, size=(vocab_size, d))
    proj = None if tied else rng.uniform(-0.5 / np.sqrt(d), 0.5 / np.sqrt(d), size=(d, vocab_size))
    return EncoderParams(
        embedding=emb,
        ln_gamma=np.ones(d),
        ln_beta=np.zeros(d),
        bias=np.zeros(vocab_size),
        projection=proj,
    )


@dataclass
class LexicalWeights:
    values: np.ndarray  # (|V|,)
    argmax_source: np.ndarray  # (|V|,) winning token position per dimension


@dataclass
class ForwardCache:
    """Intermediates of one or more texts pushed through the head together.

    Rows of the per-position arrays are concatenated over texts; ``offsets``
    delimits them.
    """

    ids: np.ndarray
    offsets: np.ndarray
    xhat: np.ndarray
    inv_std: np.ndarray
    z: np.ndarray
    y: np.ndarray
    values: np.ndarray  # (n_texts, |V|)
    src: np.ndarray  # (n_texts, |V|) position within each text
    activation: str = "elu1p"
    lengths: np.ndarray = field(init=False)

    def __post_init__(self):
        self.lengths = np.diff(self.offsets)


def forward_hidden(params: EncoderParams, ids: TokenSeq) -> np.ndarray:
    """Hidden states as a (d, L) matrix: one embedding column per token."""
    if len(ids) == 0:
        raise EncodeError("cannot encode empty input")
    return params.embedding[np.asarray(ids, dtype=np.int64)].T


def _layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv_std
    return xhat, inv_std, xhat * gamma + beta


def _head_rows(params: EncoderParams, x: np.ndarray, activation: str):
    act, _ = ACTIVATIONS[activation]
    xhat, inv_std, z = _layer_norm(x, params.ln_gamma, params.ln_beta)
    y = z @ params.proj + params.bias
    return xhat, inv_std, z, y, act(y)


def dst_head(params: EncoderParams, hidden: np.ndarray, activation: str = "elu1p") -> LexicalWeights:
    """Map (d, L) hidden states to dense vocabulary weights by max pooling."""
    if hidden.ndim != 2 or hidden.shape[1] == 0:
        raise EncodeError("cannot encode empty input")
    *_, a = _head_rows(params, hidden.T, activation)
    src = np.argmax(a, axis=0)  # first occurrence wins ties
    return LexicalWeights(values=a[src, np.arange(a.shape[1])], argmax_source=src)


def forward_batch(params: EncoderParams, seqs: list[TokenSeq], activation: str = "elu1p") -> ForwardCache:
    lengths = [len(s) for s in seqs]
    for i, n in enumerate(lengths):
        if n == 0:
            raise EncodeError(f"cannot encode empty input (text {i})")
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    ids = np.concatenate([np.asarray(s, dtype=np.int64) for s in seqs])
    xhat, inv_std, z, y, a = _head_rows(params, params.embedding[ids], activation)
    v = params.vocab_size
    values = np.empty((len(seqs), v))
    src = np.empty((len(seqs), v), dtype=np.int64)
    cols = np.arange(v)
    for t in range(len(seqs)):
        block = a[offsets[t] : offsets[t + 1]]
        s = np.argmax(block, axis=0)
        src[t] = s
        values[t] = block[s, cols]
    return ForwardCache(ids, offsets, xhat, inv_std, z, y, values, src, activation)


def lexical_weights(params: EncoderParams, ids: TokenSeq, activation: str = "elu1p") -> LexicalWeights:
    return dst_head(params, forward_hidden(params, ids), activation)


def _gated(values: np.ndarray, ids: TokenSeq, k: int, normalize: bool) -> SparseVector:
    gate = gate_union(top_k_dims(values, k), np.unique(np.asarray(ids, dtype=np.int64)))
    vec = apply_gate(values, gate)
    if normalize and len(vec):
        vec = l2_normalize(vec)
    return vec


def embed_query(
    params: EncoderParams,
    vocab: Vocabulary,
    text: str,
    k: int | None = None,
    normalize: bool = False,
    activation: str = "elu1p",
) -> SparseVector:
    """Parametric query embedding. ``k`` defaults to the hidden width d."""
    ids = tokenize(vocab, text)
    if not ids:
        raise EncodeError(f"text has no in-vocabulary tokens: {text[:60]!r}")
    k = params.d if k is None else k
    return _gated(lexical_weights(params, ids, activation).values, ids, k, normalize)


def embed_target(
    params: EncoderParams,
    vocab: Vocabulary,
    text: str,
    k: int | None = None,
    normalize: bool = False,
    activation: str = "elu1p",
) -> SparseVector:
    """Target embedding. ``k=FULL`` activates all dimensions."""
    ids = tokenize(vocab, text)
    if not ids:
        raise EncodeError(f"text has no in-vocabulary tokens: {text[:60]!r}")
    if k is None:
        k = params.d
    elif k == FULL:
        k = params.vocab_size
    return _gated(lexical_weights(params, ids, activation).values, ids, k, normalize)


def embed_nonparametric(vocab: Vocabulary, text: str) -> SparseVector:
    return bow_vector(vocab, tokenize(vocab, text), normalize=True)


# -- checkpoint -------------------------------------------------------------


def checkpoint_bytes(params: EncoderParams) -> bytes:
    v, d = params.embedding.shape
    parts = [_MAGIC, struct.pack("<IIIB", _VERSION, v, d, 1 if params.tied else 0)]
    for arr in params.arrays().values():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(params: EncoderParams, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def load_checkpoint(path: str | Path) -> EncoderParams:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return parse_checkpoint(data)


def parse_checkpoint(data: bytes) -> EncoderParams:
    if len(data) < 17:
        raise CheckpointError(f"truncated checkpoint header at byte offset {len(data)}")
    if data[:4] != _MAGIC:
        raise CheckpointError("bad magic at byte offset 0")
    version, v, d, tied = struct.unpack_from("<IIIB", data, 4)
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at byte offset 4")
    if tied not in (0, 1):
        raise CheckpointError(f"bad tied flag {tied} at byte offset 16")
    pos = 17
    shapes = [("embedding", (v, d)), ("ln_gamma", (d,)), ("ln_beta", (d,))]
    if not tied:
        shapes.append(("projection", (d, v)))
    shapes.append(("bias", (v,)))
    arrays = {}
    for name, shape in shapes:
        n = int(np.prod(shape))
        end = pos + 4 * n
        if end > len(data):
            raise CheckpointError(f"truncated checkpoint reading {name} at byte offset {len(data)}")
        arrays[name] = np.frombuffer(data, dtype="<f4", count=n, offset=pos).astype(np.float64).reshape(shape)
        pos = end
    if pos != len(data):
        raise CheckpointError(f"trailing bytes after checkpoint at byte offset {pos}")
    return EncoderParams(**arrays)
