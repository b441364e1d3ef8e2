"""Independent reference computations, written as plain loops.

Nothing here imports the code paths under test except parameter containers.
"""

from __future__ import annotations

import math


def dense_dot(a: dict[int, float], b: dict[int, float], size: int) -> float:
    return sum(a.get(i, 0.0) * b.get(i, 0.0) for i in range(size))


def elu1p(x: float) -> float:
    return x + 1.0 if x >= 0 else math.exp(x)


def relu(x: float) -> float:
    return x if x > 0 else 0.0


def dst_head(embedding, gamma, beta, proj, bias, ids, activation="elu1p", eps=1e-5):
    """Dense per-token evaluation: returns (values, argmax positions)."""
    act = elu1p if activation == "elu1p" else relu
    v = len(bias)
    d = len(gamma)
    cols = []
    for t in ids:
        x = [float(embedding[t][c]) for c in range(d)]
        mu = sum(x) / d
        var = sum((xi - mu) ** 2 for xi in x) / d
        z = [(x[c] - mu) / math.sqrt(var + eps) * gamma[c] + beta[c] for c in range(d)]
        y = [sum(z[c] * proj[c][i] for c in range(d)) + bias[i] for i in range(v)]
        cols.append([act(yi) for yi in y])
    values, src = [], []
    for i in range(v):
        best, arg = cols[0][i], 0
        for j in range(1, len(cols)):
            if cols[j][i] > best:
                best, arg = cols[j][i], j
        values.append(best)
        src.append(arg)
    return values, src


def top_k(values, k):
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    return set(order[:k])


def softmax_xent(logits: list[float], target: int) -> float:
    mx = max(logits)
    z = sum(math.exp(x - mx) for x in logits)
    return -(logits[target] - mx - math.log(z))


def sce(S: list[list[float]], tau: float) -> float:
    n = len(S)
    total = 0.0
    for i in range(n):
        total += softmax_xent([s / tau for s in S[i]], i)
        total += softmax_xent([S[j][i] / tau for j in range(n)], i)
    return total / n


def _params_lists(params):
    proj = params.embedding.T if params.projection is None else params.projection
    return (
        params.embedding.tolist(),
        params.ln_gamma.tolist(),
        params.ln_beta.tolist(),
        proj.tolist(),
        params.bias.tolist(),
    )


def batch_scores(params, queries, positives, negatives, k_query, use_cts, normalize, activation="elu1p"):
    """Score matrices from the co-activation sum, evaluated pair by pair."""
    emb, gamma, beta, proj, bias = _params_lists(params)
    v = len(bias)
    n = len(queries)
    qv = [dst_head(emb, gamma, beta, proj, bias, q, activation)[0] for q in queries]
    targets = positives + negatives
    tv = [dst_head(emb, gamma, beta, proj, bias, t, activation)[0] for t in targets]
    qgate = [top_k(qv[i], k_query) | set(queries[i]) for i in range(n)]

    cts = [set() for _ in range(n)]
    if use_cts:
        covered = set().union(*qgate)
        left = [m for m in range(v) if m not in covered]
        c = len(left) // n
        cts = [set(left[j * c : (j + 1) * c]) for j in range(n)]

    def norm(xs):
        s = math.sqrt(sum(x * x for x in xs))
        return s if s > 0 else 1.0

    qscale = [1.0 / norm([qv[i][m] for m in qgate[i]]) if normalize else 1.0 for i in range(n)]
    tscale = [1.0 / norm(tv[j]) if normalize else 1.0 for j in range(len(targets))]

    P = [[0.0] * len(targets) for _ in range(n)]
    NP = [[0.0] * len(targets) for _ in range(n)]
    for i in range(n):
        gq = qgate[i] | cts[i]
        bow = set(queries[i])
        bscale = 1.0 / math.sqrt(len(bow)) if normalize else 1.0
        for j in range(len(targets)):
            gp = set(range(v)) - (cts[j] if j < n else set())
            for m in range(v):
                if m in gq and m in gp:
                    P[i][j] += qv[i][m] * qscale[i] * tv[j][m] * tscale[j]
                if m in bow:
                    NP[i][j] += bscale * tv[j][m] * tscale[j]
    return P, NP


def total_loss(params, queries, positives, negatives, cfg) -> float:
    P, NP = batch_scores(
        params, queries, positives, negatives, cfg.k_query, cfg.use_cts, cfg.normalize, cfg.activation
    )
    loss = sce(P, cfg.tau)
    if cfg.use_bow_entry:
        loss += sce(NP, cfg.tau)
    return loss


def student_t_two_sided_p(t: float, df: int, steps: int = 200_000) -> float:
    """Two-sided p by Simpson integration of the Student-t density from 0 to |t|."""
    c = math.gamma((df + 1) / 2) / (math.sqrt(df * math.pi) * math.gamma(df / 2))

    def pdf(x):
        return c * (1 + x * x / df) ** (-(df + 1) / 2)

    a, b = 0.0, abs(t)
    h = (b - a) / steps
    s = pdf(a) + pdf(b)
    for i in range(1, steps):
        s += (4 if i % 2 else 2) * pdf(a + i * h)
    return 1.0 - 2.0 * s * h / 3.0
