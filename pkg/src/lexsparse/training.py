"""Contrastive training of the encoder.

The batch objective is a symmetric cross-entropy over two score matrices:
gated queries against fully activated targets, and (optionally) the query
bag-of-words against the same targets. Gradients are derived by hand and
checked against central finite differences by :func:`finite_diff_check`.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from lexsparse.encoder import (
    LN_EPS,
    EncoderParams,
    ForwardCache,
    forward_batch,
    init_params,
    save_checkpoint,
)
from lexsparse.sparsevec import ACTIVATIONS, top_k_dims
from lexsparse.vocab import TokenSeq, Vocabulary, tokenize

log = logging.getLogger(__name__)


class TrainingError(ValueError):
    pass


@dataclass
class TrainConfig:
    tau: float = 1.0
    lr: float = 2e-5
    epochs: int = 20
    batch_size: int = 256
    k_query: int = 768
    warmup_epochs: int = 1
    decay: str = "linear"
    use_bow_entry: bool = True
    use_cts: bool = False
    activation: str = "elu1p"
    tied: bool = True
    normalize: bool = False
    hard_negatives: int = 1
    weight_decay: float = 0.0
    seed: int = 0
    d: int = 768
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.k_query < 0:
            raise ValueError("k_query must be >= 0")
        if self.decay not in ("linear", "cosine"):
            raise ValueError(f"unknown decay {self.decay!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.hard_negatives not in (0, 1):
            raise ValueError("hard_negatives must be 0 or 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class Batch:
    queries: list[TokenSeq]
    positives: list[TokenSeq]
    negatives: list[TokenSeq] = field(default_factory=list)

    def __post_init__(self):
        if len(self.queries) != len(self.positives):
            raise ValueError("queries and positives must align")
        if self.negatives and len(self.negatives) != len(self.queries):
            raise ValueError("negatives must be absent or align with queries")
        if not self.queries:
            raise ValueError("empty batch")

    @property
    def n(self) -> int:
        return len(self.queries)


@dataclass
class Pair:
    query: str
    positive: str
    negative: str | None = None


def load_pairs(path: str | Path) -> list[Pair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pairs.append(Pair(str(rec["query"]), str(rec["positive"]), rec.get("negative")))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise TrainingError(f"{path}:{lineno}: malformed pair record ({exc})") from exc
    return pairs


# -- contrastive mask --------------------------------------------------------


def build_cts(query_gates: Sequence[np.ndarray], vocab_size: int) -> list[np.ndarray]:
    """Split the dims no query gates into equal contiguous chunks, one per query.

    The remainder (fewer than N dims) goes to nobody.
    """
    n = len(query_gates)
    if n < 1:
        raise ValueError("need at least one query gate")
    covered = np.zeros(vocab_size, dtype=bool)
    for g in query_gates:
        covered[np.asarray(g, dtype=np.int64)] = True
    leftover = np.flatnonzero(~covered)
    c = leftover.size // n
    return [leftover[j * c : (j + 1) * c].copy() for j in range(n)]


# -- forward -----------------------------------------------------------------


@dataclass
class BatchForward:
    """Everything the loss and its gradient need for one batch."""

    n: int
    m: int  # number of target columns (N or 2N)
    q: ForwardCache
    t: ForwardCache
    gate: np.ndarray  # (N, |V|) bool, pre-CTS query gates
    cts: np.ndarray  # (N, |V|) bool
    cts_sets: list[np.ndarray]
    q_scale: np.ndarray  # (N,) 1/norm of gated query, or 1
    t_scale: np.ndarray  # (M,)
    qn: np.ndarray  # (N, |V|) scaled gated query values
    qcn: np.ndarray  # (N, |V|) scaled CTS values
    tn: np.ndarray  # (M, |V|) scaled target values
    bow: np.ndarray  # (N, |V|) query bag-of-words (scaled when normalizing)
    cross: np.ndarray  # (N, M) 1 where CTS terms count, 0 on each own positive
    P: np.ndarray
    NP: np.ndarray

    def signature(self) -> tuple:
        """Piecewise-constant structure; differentiable only while it is fixed."""
        sig = [self.gate.tobytes(), self.cts.tobytes(), self.q.src.tobytes(), self.t.src.tobytes()]
        if self.q.activation == "relu":
            sig += [(self.q.y > 0).tobytes(), (self.t.y > 0).tobytes()]
        return tuple(sig)


def _inv_norms(x: np.ndarray) -> np.ndarray:
    norms = np.sqrt((x * x).sum(axis=1))
    # zero rows stay zero
    return np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)


def batch_forward(params: EncoderParams, batch: Batch, cfg: TrainConfig) -> BatchForward:
    n, v = batch.n, params.vocab_size
    try:
        qc = forward_batch(params, batch.queries, cfg.activation)
    except ValueError as exc:
        raise TrainingError(f"query: {exc}") from exc
    try:
        tc = forward_batch(params, batch.positives + batch.negatives, cfg.activation)
    except ValueError as exc:
        raise TrainingError(f"target (positives then negatives): {exc}") from exc
    m = tc.values.shape[0]

    bow = np.zeros((n, v))
    gate = np.zeros((n, v), dtype=bool)
    gate_lists = []
    for i, ids in enumerate(batch.queries):
        toks = np.unique(np.asarray(ids, dtype=np.int64))
        bow[i, toks] = 1.0
        g = np.union1d(top_k_dims(qc.values[i], cfg.k_query), toks)
        gate[i, g] = True
        gate_lists.append(g)

    cts = np.zeros((n, v), dtype=bool)
    cts_sets: list[np.ndarray] = [np.empty(0, np.int64)] * n
    if cfg.use_cts:
        cts_sets = build_cts(gate_lists, v)
        for i, s in enumerate(cts_sets):
            cts[i, s] = True

    q_raw = qc.values * gate
    qcts_raw = qc.values * cts
    t_raw = tc.values
    if cfg.normalize:
        q_scale = _inv_norms(q_raw)
        t_scale = _inv_norms(t_raw)
        bow = bow * _inv_norms(bow)[:, None]
    else:
        q_scale = np.ones(n)
        t_scale = np.ones(m)
    qn = q_raw * q_scale[:, None]
    qcn = qcts_raw * q_scale[:, None]
    tn = t_raw * t_scale[:, None]

    cross = np.ones((n, m))
    cross[np.arange(n), np.arange(n)] = 0.0
    P = qn @ tn.T
    if cfg.use_cts:
        # own positive gains exactly 0.0, so its score is unchanged bit for bit
        P = P + (qcn @ tn.T) * cross
    NP = bow @ tn.T
    return BatchForward(n, m, qc, tc, gate, cts, cts_sets, q_scale, t_scale, qn, qcn, tn, bow, cross, P, NP)


def batch_scores(params: EncoderParams, batch: Batch, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Parametric and nonparametric score matrices, shape (N, N) or (N, 2N).

    Columns are the positives in batch order followed by the negatives.
    """
    fw = batch_forward(params, batch, cfg)
    return fw.P, fw.NP


# -- loss --------------------------------------------------------------------


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    mx = a.max(axis=axis, keepdims=True)
    return (mx + np.log(np.exp(a - mx).sum(axis=axis, keepdims=True))).squeeze(axis)


def _sce(S: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    """Loss and dLoss/dS for the symmetric cross-entropy."""
    if not np.all(np.isfinite(S)):
        raise TrainingError("non-finite scores")
    n = S.shape[0]
    with np.errstate(over="ignore"):
        A = S / tau
    if not np.all(np.isfinite(A)):
        raise TrainingError("non-finite scores")
    diag = A[np.arange(n), np.arange(n)]
    row_lse = _logsumexp(A, axis=1)
    col_lse = _logsumexp(A[:, :n], axis=0)
    loss = float(np.mean(row_lse - diag) + np.mean(col_lse - diag))

    R = np.exp(A - row_lse[:, None])
    C = np.exp(A[:, :n] - col_lse[None, :])
    dA = R
    dA[:, :n] += C
    dA[np.arange(n), np.arange(n)] -= 2.0
    return loss, dA / (tau * n)


def sce_loss(S: np.ndarray, tau: float) -> float:
    """Symmetric cross-entropy, averaged over the N instances.

    Query-to-target normalizes over every column (positives and negatives);
    target-to-query normalizes each positive over the N queries only.
    """
    if not tau > 0:
        raise ValueError("tau must be > 0")
    return _sce(np.asarray(S, dtype=np.float64), tau)[0]


def total_loss(params: EncoderParams, batch: Batch, cfg: TrainConfig) -> float:
    fw = batch_forward(params, batch, cfg)
    return _loss_from(fw, cfg)


def _loss_from(fw: BatchForward, cfg: TrainConfig) -> float:
    loss = _sce(fw.P, cfg.tau)[0]
    if cfg.use_bow_entry:
        loss += _sce(fw.NP, cfg.tau)[0]
    return loss


# -- backward ----------------------------------------------------------------


@dataclass
class Gradients:
    embedding: np.ndarray
    ln_gamma: np.ndarray
    ln_beta: np.ndarray
    bias: np.ndarray
    projection: np.ndarray | None = None

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"embedding": self.embedding, "ln_gamma": self.ln_gamma, "ln_beta": self.ln_beta}
        if self.projection is not None:
            out["projection"] = self.projection
        out["bias"] = self.bias
        return out


def _renorm_grad(xn: np.ndarray, dxn: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Pull a gradient back through x -> x/||x|| (rows)."""
    radial = (xn * dxn).sum(axis=1, keepdims=True)
    return (dxn - xn * radial) * scale[:, None]


def _head_backward(params: EncoderParams, fc: ForwardCache, dvalues: np.ndarray, grads: dict, dproj: np.ndarray):
    _, act_grad = ACTIVATIONS[fc.activation]
    v = params.vocab_size
    cols = np.arange(v)
    rows = fc.offsets[:-1, None] + fc.src  # (texts, |V|) absolute row of each winner
    dy = np.zeros_like(fc.y)
    dy[rows.ravel(), np.tile(cols, rows.shape[0])] = (dvalues * act_grad(fc.y[rows, cols])).ravel()

    dproj += fc.z.T @ dy
    grads["bias"] += dy.sum(axis=0)
    dz = dy @ params.proj.T
    grads["ln_gamma"] += (dz * fc.xhat).sum(axis=0)
    grads["ln_beta"] += dz.sum(axis=0)
    dxhat = dz * params.ln_gamma
    dx = fc.inv_std * (
        dxhat - dxhat.mean(axis=1, keepdims=True) - fc.xhat * (dxhat * fc.xhat).mean(axis=1, keepdims=True)
    )
    np.add.at(grads["embedding"], fc.ids, dx)


def backward_from(params: EncoderParams, fw: BatchForward, cfg: TrainConfig) -> tuple[float, Gradients]:
    loss, dP = _sce(fw.P, cfg.tau)
    dNP = None
    if cfg.use_bow_entry:
        l2, dNP = _sce(fw.NP, cfg.tau)
        loss += l2

    dtn = dP.T @ fw.qn
    dqn = dP @ fw.tn
    if cfg.use_cts:
        dPc = dP * fw.cross
        dtn += dPc.T @ fw.qcn
        dqcn = dPc @ fw.tn
    else:
        dqcn = np.zeros_like(fw.qn)
    if dNP is not None:
        dtn += dNP.T @ fw.bow

    if cfg.normalize:
        radial = (fw.qn * dqn).sum(axis=1, keepdims=True) + (fw.qcn * dqcn).sum(axis=1, keepdims=True)
        dq = (dqn - fw.qn * radial) * fw.q_scale[:, None]
        dqc = dqcn * fw.q_scale[:, None]
        dt = _renorm_grad(fw.tn, dtn, fw.t_scale)
    else:
        dq, dqc, dt = dqn, dqcn, dtn
    dvq = dq * fw.gate + dqc * fw.cts

    grads = {
        "embedding": np.zeros_like(params.embedding),
        "ln_gamma": np.zeros_like(params.ln_gamma),
        "ln_beta": np.zeros_like(params.ln_beta),
        "bias": np.zeros_like(params.bias),
    }
    dproj = np.zeros((params.d, params.vocab_size))
    _head_backward(params, fw.q, dvq, grads, dproj)
    _head_backward(params, fw.t, dt, grads, dproj)
    if params.tied:
        grads["embedding"] += dproj.T
        return loss, Gradients(**grads)
    return loss, Gradients(projection=dproj, **grads)


def backward(params: EncoderParams, batch: Batch, cfg: TrainConfig) -> tuple[float, Gradients]:
    """Loss and its exact gradient with gates and max-pool winners held fixed."""
    return backward_from(params, batch_forward(params, batch, cfg), cfg)


# -- optimizer and schedule --------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: EncoderParams) -> AdamState:
        arrs = params.arrays()
        return cls({k: np.zeros_like(a) for k, a in arrs.items()}, {k: np.zeros_like(a) for k, a in arrs.items()})


def adamw_step(params: EncoderParams, grads: Gradients, state: AdamState, cfg: TrainConfig, t: int, lr_t: float) -> None:
    """In-place AdamW update with decoupled weight decay."""
    if t < 1:
        raise ValueError("step index t must be >= 1")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    g_arrays = grads.arrays()
    for name, p in params.arrays().items():
        g = g_arrays[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps) + cfg.weight_decay * p
        p -= lr_t * update


def lr_schedule(cfg: TrainConfig, step: int, steps_per_epoch: int) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    warmup = cfg.warmup_epochs * steps_per_epoch
    total = cfg.epochs * steps_per_epoch
    if step < warmup:
        return cfg.lr * (step + 1) / warmup
    if total <= warmup:
        return cfg.lr
    progress = min(1.0, (step - warmup) / (total - warmup))
    if cfg.decay == "linear":
        return cfg.lr * (1.0 - progress)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# -- training loop -----------------------------------------------------------


def _tokenize_pairs(pairs: Sequence[Pair], vocab: Vocabulary):
    out = []
    for i, p in enumerate(pairs):
        q = tokenize(vocab, p.query)
        pos = tokenize(vocab, p.positive)
        neg = tokenize(vocab, p.negative) if p.negative is not None else None
        for what, ids in (("query", q), ("positive", pos), ("negative", neg)):
            if ids is not None and not ids:
                raise TrainingError(f"pair {i}: {what} has no in-vocabulary tokens")
        out.append((q, pos, neg))
    return out


def train(
    pairs: Sequence[Pair],
    cfg: TrainConfig,
    vocab: Vocabulary,
    checkpoint: str | Path | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
    init: EncoderParams | None = None,
) -> EncoderParams:
    """Train from scratch (or from ``init``) and optionally write a checkpoint.

    Negatives enter a batch only when ``cfg.hard_negatives`` is 1 and every
    pair in that batch carries one.
    """
    if not pairs:
        raise TrainingError("no training pairs")
    data = _tokenize_pairs(pairs, vocab)
    params = init.copy() if init is not None else init_params(len(vocab), cfg.d, tied=cfg.tied, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros_like(params)
    steps_per_epoch = math.ceil(len(data) / cfg.batch_size)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        losses = []
        for b, start in enumerate(range(0, len(data), cfg.batch_size)):
            chunk = [data[i] for i in order[start : start + cfg.batch_size]]
            negs = [c[2] for c in chunk]
            batch = Batch(
                queries=[c[0] for c in chunk],
                positives=[c[1] for c in chunk],
                negatives=negs if cfg.hard_negatives and all(x is not None for x in negs) else [],
            )
            try:
                loss, grads = backward(params, batch, cfg)
            except TrainingError as exc:
                raise TrainingError(f"{exc} at epoch {epoch} batch {b}") from exc
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.arrays().values()):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {b}")
            step += 1
            adamw_step(params, grads, state, cfg, step, lr_schedule(cfg, step - 1, steps_per_epoch))
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        log.info("epoch %d mean loss %.6f", epoch + 1, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch + 1, mean_loss)
    if checkpoint is not None:
        save_checkpoint(params, checkpoint)
    return params


# -- gradient check ----------------------------------------------------------


def finite_diff_check(
    params: EncoderParams,
    batch: Batch,
    cfg: TrainConfig,
    eps: float = 1e-4,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Coordinates whose perturbation changes a gate, a CTS set, a max-pool
    winner or a relu sign are skipped: the loss is not differentiable there.
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    fw0 = batch_forward(params, batch, cfg)
    sig0 = fw0.signature()
    _, grads = backward_from(params, fw0, cfg)
    g_arrays = grads.arrays()
    worst = 0.0
    work = params.copy()
    for name, arr in work.arrays().items():
        flat = arr.reshape(-1)
        ga = g_arrays[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            sigs = []

            def f(value):
                flat[idx] = value
                fw = batch_forward(work, batch, cfg)
                sigs.append(fw.signature())
                return _loss_from(fw, cfg)

            num = central_difference(f, orig, eps)
            flat[idx] = orig
            if any(s != sig0 for s in sigs):
                continue
            worst = max(worst, relative_error(ga[idx], num))
    return worst


def central_difference(f: Callable[[float], float], x: float, eps: float) -> float:
    return (f(x + eps) - f(x - eps)) / (2 * eps)


def relative_error(a: float, f: float) -> float:
    return abs(a - f) / max(1e-8, abs(a), abs(f))


def random_gradcheck_case(rng: np.random.Generator, toggles: dict | None = None):
    """A small random (params, batch, cfg) for gradient checking."""
    toggles = toggles or {}
    v = int(rng.integers(8, 33))
    d = int(rng.integers(2, 9))
    n = int(rng.integers(2, 5))  # N=1 without negatives has a constant loss
    tied = toggles.get("tied", bool(rng.integers(2)))
    params = EncoderParams(
        # scale keeps scores O(1) so the softmax is not saturated and central
        # differences stay above float64 roundoff
        embedding=rng.normal(0, 0.3, (v, d)),
        ln_gamma=rng.normal(1.0, 0.2, d),
        ln_beta=rng.normal(0, 0.2, d),
        bias=rng.normal(0, 0.2, v),
        projection=None if tied else rng.normal(0, 0.3, (d, v)),
    )

    def text():
        return rng.integers(0, v, size=int(rng.integers(1, 7))).tolist()

    has_neg = bool(rng.integers(2))
    batch = Batch(
        queries=[text() for _ in range(n)],
        positives=[text() for _ in range(n)],
        negatives=[text() for _ in range(n)] if has_neg else [],
    )
    cfg = TrainConfig(
        tau=1.0,
        k_query=int(rng.integers(0, v // 2 + 1)),
        use_bow_entry=toggles.get("use_bow_entry", bool(rng.integers(2))),
        use_cts=toggles.get("use_cts", bool(rng.integers(2))),
        activation=toggles.get("activation", "elu1p" if rng.integers(2) else "relu"),
        tied=tied,
        normalize=toggles.get("normalize", bool(rng.integers(2))),
        d=d,
    )
    # temperature follows the score spread so the loss stays O(log N); a
    # large loss would bury zero gradients under differencing roundoff
    fw = batch_forward(params, batch, cfg)
    spread = max(np.ptp(fw.P), np.ptp(fw.NP) if cfg.use_bow_entry else 0.0, 1.0)
    cfg = replace(cfg, tau=float(rng.uniform(0.5, 2.0) * spread))
    return params, batch, cfg


TOGGLE_GRID = [
    {"activation": act, "use_bow_entry": bow, "use_cts": cts, "tied": tied, "normalize": norm}
    for act in ("elu1p", "relu")
    for bow in (True, False)
    for cts in (True, False)
    for tied in (True, False)
    for norm in (True, False)
]


def run_gradcheck(trials: int, seed: int, eps: float = 1e-4) -> list[tuple[dict, float]]:
    """Run ``trials`` random cases cycling through every toggle combination."""
    if trials < 1:
        raise ValueError("no trials")
    rng = np.random.default_rng(seed)
    results = []
    for t in range(trials):
        toggles = TOGGLE_GRID[t % len(TOGGLE_GRID)]
        params, batch, cfg = random_gradcheck_case(rng, toggles)
        results.append((toggles, finite_diff_check(params, batch, cfg, eps)))
    return results


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
