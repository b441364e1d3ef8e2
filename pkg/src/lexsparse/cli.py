"""Command-line interface: ``lexsparse <command> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from lexsparse import bench, evaluation, index, synth
from lexsparse.encoder import (
    FULL,
    EncodeError,
    embed_nonparametric,
    embed_query,
    embed_target,
    load_checkpoint,
)
from lexsparse.sparsevec import SparseVector, dot
from lexsparse.training import TrainConfig, load_pairs, run_gradcheck, train
from lexsparse.vocab import load_vocab

log = logging.getLogger("lexsparse")

GRADCHECK_TOL = 1e-3


class CliError(Exception):
    pass


def _read_jsonl_texts(path: str) -> list[tuple[str, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append((str(rec["id"]), str(rec["text"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CliError(f"{path}:{lineno}: expected {{'id': ..., 'text': ...}} ({exc})") from exc
    return out


def _parse_k(value: str) -> int:
    if value.lower() == "full":
        return FULL
    k = int(value)
    if k < 0:
        raise argparse.ArgumentTypeError("k must be >= 0 or 'full'")
    return k


def _int_list(value: str) -> list[int]:
    return [int(x) for x in value.split(",") if x.strip()]


# -- commands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = synth.SynthConfig(
        topics=args.topics,
        vocab_size=args.vocab_size,
        docs=args.docs,
        queries=args.queries,
        train_queries=args.train_queries,
        doc_len=args.doc_len,
        query_len=args.query_len,
        noise=args.noise,
        noise_pool=args.noise_pool,
        seed=args.seed,
    )
    paths = synth.write(synth.generate(cfg), args.out_dir)
    for name, p in paths.items():
        print(f"{name}\t{p}")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        tau=args.tau,
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        k_query=args.d if args.k_query is None else args.k_query,
        warmup_epochs=args.warmup_epochs,
        decay=args.decay,
        use_bow_entry=args.bow_entry,
        use_cts=args.cts,
        activation=args.activation,
        tied=args.tied,
        normalize=args.normalize,
        hard_negatives=args.hard_negatives,
        weight_decay=args.weight_decay,
        seed=args.seed,
        d=args.d,
    )


def cmd_train(args) -> int:
    vocab = load_vocab(args.vocab)
    pairs = load_pairs(args.pairs)
    cfg = _train_config(args)

    def report(epoch: int, loss: float) -> None:
        print(f"epoch {epoch}\tloss {loss:.6f}")

    train(pairs, cfg, vocab, checkpoint=args.out, on_epoch=report)
    print(f"checkpoint\t{args.out}")
    return 0


def _embed_docs(args, docs, params, vocab):
    for doc_id, text in docs:
        try:
            vec = embed_target(params, vocab, text, k=args.k, normalize=args.normalize, activation=args.activation)
        except EncodeError:
            log.warning("document %s has no in-vocabulary tokens; indexed as empty", doc_id)
            vec = SparseVector.empty()
        yield doc_id, vec


def cmd_index(args) -> int:
    vocab = load_vocab(args.vocab)
    params = load_checkpoint(args.checkpoint)
    if params.vocab_size != len(vocab):
        raise CliError(f"checkpoint vocabulary size {params.vocab_size} != vocabulary file size {len(vocab)}")
    docs = list(_embed_docs(args, _read_jsonl_texts(args.corpus), params, vocab))
    ix = index.build(docs, len(vocab))
    index.save(ix, args.out)
    if args.dump:
        index.write_dump(args.dump, docs)
    st = index.stats(ix)
    print(f"docs\t{st.num_docs}\tnonzeros\t{st.nonzero_count}\tdims\t{st.num_nonempty_dims}")
    return 0


def cmd_embed(args) -> int:
    vocab = load_vocab(args.vocab)
    params = load_checkpoint(args.checkpoint) if args.checkpoint else None
    if args.side != "nonparametric" and params is None:
        raise CliError(f"--side {args.side} requires --checkpoint")
    out = []
    for ext_id, text in _read_jsonl_texts(args.input):
        if args.side == "nonparametric":
            vec = embed_nonparametric(vocab, text)
        elif args.side == "query":
            vec = embed_query(params, vocab, text, k=args.k, normalize=args.normalize, activation=args.activation)
        else:
            vec = embed_target(params, vocab, text, k=args.k, normalize=args.normalize, activation=args.activation)
        out.append((ext_id, vec))
    if args.out:
        index.write_dump(args.out, out)
    else:
        for ext_id, vec in out:
            print(index.format_dump_line(ext_id, vec))
    return 0


def _query_embedder(args, vocab):
    if args.mode == "nonparametric":
        return lambda text: embed_nonparametric(vocab, text)
    if not args.checkpoint:
        raise CliError("--mode parametric requires --checkpoint")
    params = load_checkpoint(args.checkpoint)
    return lambda text: embed_query(params, vocab, text, k=args.k, normalize=args.normalize, activation=args.activation)


def cmd_search(args) -> int:
    vocab = load_vocab(args.vocab)
    embedder = _query_embedder(args, vocab)
    ix = index.load(args.index)
    queries = _read_jsonl_texts(args.queries)

    def one(item):
        qid, text = item
        return qid, index.search(ix, embedder(text), args.top_n)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(one, queries))
    else:
        results = [one(q) for q in queries]
    lines = [line for qid, ranked in results for line in evaluation.format_run_lines(qid, ranked, args.tag)]
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    metrics = [m for m in args.metrics.split(",") if m.strip()]
    for m in metrics:
        evaluation.parse_metric(m)
    qrels = evaluation.read_qrels(args.qrels)
    run = evaluation.read_run(args.run)
    other = evaluation.read_run(args.compare) if args.compare else None
    header = ["metric", "mean", "queries"] + (["compare_mean", "t", "p", "significant"] if other else [])
    print("\t".join(header))
    for m in metrics:
        rep = evaluation.evaluate(qrels, run, m)
        row = [m, f"{rep.mean:.5f}", str(rep.count)]
        if other is not None:
            rep2 = evaluation.evaluate(qrels, other, m)
            tt = evaluation.compare_reports(rep, rep2)
            row += [f"{rep2.mean:.5f}", f"{tt.t:.5f}", f"{tt.p:.5f}", "yes" if tt.significant else "no"]
        print("\t".join(row))
    return 0


def cmd_bench(args) -> int:
    vocab = load_vocab(args.vocab)
    ix = index.load(args.index)
    queries = _read_jsonl_texts(args.queries)
    qrels = evaluation.read_qrels(args.qrels) if args.qrels else None
    params = load_checkpoint(args.checkpoint) if args.checkpoint else None
    if args.mode in ("parametric", "both") and params is None:
        raise CliError(f"--mode {args.mode} requires --checkpoint")

    def ndcg(rep):
        return evaluation.ndcg_at_k(qrels, rep.run, 10).mean if qrels else None

    rows, reports = [], []
    if args.sweep:
        for row in bench.sweep_k(ix, queries, params, vocab, args.sweep, qrels, args.top_n, args.activation):
            rows.append(bench.table_row(row.report, row.ndcg10))
            reports.append(row.report)
    else:
        modes = ["parametric", "nonparametric"] if args.mode == "both" else [args.mode]
        for mode in modes:
            rep = bench.measure(ix, queries, mode, vocab, k=args.k, params=params, top_n=args.top_n, activation=args.activation)
            rows.append(bench.table_row(rep, ndcg(rep)))
            reports.append(rep)
    print(bench.format_table(rows))
    if args.mode == "both" and not args.sweep:
        par, nonpar = reports
        ratio = par.summary()["mean_us"] / nonpar.summary()["mean_us"]
        print(f"latency_ratio_parametric_over_nonparametric\t{ratio:.2f}")
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            for rep in reports:
                for r in rep.records:
                    fh.write(json.dumps({"mode": rep.mode, "k": rep.k, **r.__dict__}) + "\n")
    return 0


def cmd_explain(args) -> int:
    vocab = load_vocab(args.vocab)
    params = load_checkpoint(args.checkpoint) if args.checkpoint else None
    if args.text is not None:
        if params is None:
            target = embed_nonparametric(vocab, args.text)
        else:
            target = embed_target(params, vocab, args.text, k=args.k, normalize=args.normalize, activation=args.activation)
        label = "text"
    elif args.doc_id is not None:
        if not args.index:
            raise CliError("--doc-id requires --index")
        ix = index.load(args.index)
        try:
            internal = ix.doc_table.index(args.doc_id)
        except ValueError:
            raise CliError(f"document {args.doc_id!r} not in index") from None
        target = ix.doc_vector(internal)
        label = f"doc {args.doc_id}"
    else:
        raise CliError("give --text or --doc-id")

    print(f"# top tokens of {label} ({len(target)} active dims)")
    for tok, w in evaluation.top_tokens(target, vocab, args.m):
        print(f"{tok}\t{w:.6f}")
    if args.query is not None:
        if args.mode == "parametric":
            if params is None:
                raise CliError("parametric --query requires --checkpoint")
            q = embed_query(params, vocab, args.query, k=args.query_k, normalize=args.normalize, activation=args.activation)
        else:
            q = embed_nonparametric(vocab, args.query)
        contrib = evaluation.token_contributions(q, target, vocab, args.m)
        print(f"# token contributions ({args.mode} query)")
        for tok, w in contrib.top:
            print(f"{tok}\t{w:.6f}")
        print(f"sum\t{contrib.total:.9g}")
        print(f"score\t{dot(q, target):.9g}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise CliError("no trials")
    results = run_gradcheck(args.trials, args.seed, args.eps)
    worst = 0.0
    for i, (toggles, err) in enumerate(results):
        flags = " ".join(f"{k}={v}" for k, v in toggles.items())
        print(f"trial {i}\t{err:.3e}\t{flags}")
        worst = max(worst, err)
    ok = worst <= GRADCHECK_TOL
    print(f"max_relative_error\t{worst:.3e}\t{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


# -- parser ------------------------------------------------------------------


def _add_encoder_flags(p, k_help="gate size k (default: hidden width d); 'full' activates every dimension"):
    p.add_argument("--k", type=_parse_k, default=None, help=k_help)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=False, help="L2-normalize embeddings")
    p.add_argument("--activation", choices=("elu1p", "relu"), default="elu1p")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lexsparse", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        p = sub.add_parser(name, help=help, description=help)
        p.add_argument("--config", help="file of 'key = value' lines; command-line flags override it")
        p.set_defaults(func=func)
        return p

    p = command("synth", cmd_synth, "generate a seeded synthetic topic corpus")
    p.add_argument("--topics", type=int, default=8)
    p.add_argument("--vocab-size", type=int, default=256)
    p.add_argument("--docs", type=int, default=400)
    p.add_argument("--queries", type=int, default=80, help="held-out evaluation queries")
    p.add_argument("--train-queries", type=int, default=None, help="training pairs (default: --docs)")
    p.add_argument("--doc-len", type=int, default=24)
    p.add_argument("--query-len", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.2, help="probability a token comes from the noise set")
    p.add_argument("--noise-pool", type=int, default=32, help="size of the shared noise token set")
    p.add_argument("--seed", type=int, default=13)
    p.add_argument("--out-dir", required=True)

    p = command(
        "train",
        cmd_train,
        "train an encoder on query/positive[/negative] pairs. Defaults follow the full-scale "
        "recipe (1 warmup epoch, linear decay, tau 1, no normalization, 1 hard negative) with "
        "desk-scale overrides: lr 3e-3, batch 16, d 32.",
    )
    p.add_argument("--pairs", required=True, help="JSON Lines with query, positive, optional negative")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--d", type=int, default=32, help="hidden width")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=3e-3, help="peak learning rate (desk scale; 2e-5 at full scale)")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=16, help="desk scale; 256 at full scale")
    p.add_argument("--k-query", type=int, default=None, help="query gate size while training (default: d)")
    p.add_argument("--warmup-epochs", type=int, default=1)
    p.add_argument("--decay", choices=("linear", "cosine"), default="linear")
    p.add_argument("--bow-entry", action=argparse.BooleanOptionalAction, default=True, help="nonparametric loss term")
    p.add_argument("--cts", action=argparse.BooleanOptionalAction, default=False, help="contrastive mask")
    p.add_argument("--activation", choices=("elu1p", "relu"), default="elu1p")
    p.add_argument("--tied", action=argparse.BooleanOptionalAction, default=True, help="tie projection to embeddings")
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--hard-negatives", type=int, choices=(0, 1), default=1)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)

    p = command("embed", cmd_embed, "write a text dump of embeddings (id, then dim:weight fields)")
    p.add_argument("--input", required=True, help="JSON Lines with id and text")
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--side", choices=("query", "target", "nonparametric"), default="target")
    p.add_argument("--out")
    _add_encoder_flags(p)

    p = command("index", cmd_index, "embed a corpus and build an inverted index")
    p.add_argument("--corpus", required=True, help="JSON Lines with id and text")
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump", help="also write a text dump of the document embeddings")
    _add_encoder_flags(p)

    p = command("search", cmd_search, "search an index and write a TREC run file")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True, help="JSON Lines with id and text")
    p.add_argument("--vocab", required=True)
    p.add_argument("--mode", choices=bench.MODES, default="parametric")
    p.add_argument("--checkpoint")
    p.add_argument("--top-n", type=int, default=100)
    p.add_argument("--tag", default="lexsparse")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")
    _add_encoder_flags(p, "query gate size k (default: hidden width d)")

    p = command("eval", cmd_eval, "score a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--metrics", default="ndcg@10,recall@1,recall@5,recall@10,mrr@10")
    p.add_argument("--compare", help="second run file; adds a paired two-sided t-test per metric")

    p = command("bench", cmd_bench, "single-threaded per-query latency and work counters")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--mode", choices=(*bench.MODES, "both"), default="both")
    p.add_argument("--checkpoint")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--sweep", type=_int_list, default=None, help="comma-separated k values (parametric)")
    p.add_argument("--qrels")
    p.add_argument("--top-n", type=int, default=10)
    p.add_argument("--activation", choices=("elu1p", "relu"), default="elu1p")
    p.add_argument("--report", help="JSON Lines file, one record per query")

    p = command("explain", cmd_explain, "show top tokens of an embedding and per-token score contributions")
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--text")
    p.add_argument("--doc-id")
    p.add_argument("--index")
    p.add_argument("--query")
    p.add_argument("--mode", choices=bench.MODES, default="parametric", help="how --query is embedded")
    p.add_argument("--query-k", type=int, default=None)
    p.add_argument("-m", type=int, default=20, help="number of tokens to list")
    _add_encoder_flags(p)

    p = command("gradcheck", cmd_gradcheck, "compare analytic gradients with central differences")
    p.add_argument("--trials", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-4)
    return parser


# -- config files ------------------------------------------------------------

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def read_config_file(path: str) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CliError(f"{path}:{lineno}: expected 'key = value'")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _config_defaults(sub: argparse.ArgumentParser, values: dict[str, str], path: str) -> dict:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config", "func")}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            raise CliError(f"{path}: unknown config key {key!r}")
        if isinstance(action, argparse.BooleanOptionalAction) or action.nargs == 0:
            low = raw.lower()
            if low not in _TRUE | _FALSE:
                raise CliError(f"{path}: {key} expects a boolean, got {raw!r}")
            defaults[key] = low in _TRUE
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise CliError(f"{path}: bad value for {key}: {exc}") from exc
        else:
            defaults[key] = raw
        if action.choices is not None and defaults[key] not in action.choices:
            raise CliError(f"{path}: {key} must be one of {list(action.choices)}")
        action.required = False
    return defaults


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    command, config = _peek(argv)
    if config and command:
        sub = parser._subparsers._group_actions[0].choices.get(command)
        if sub is not None:
            sub.set_defaults(**_config_defaults(sub, read_config_file(config), config))
    return parser.parse_args(argv)


def _peek(argv: list[str]) -> tuple[str | None, str | None]:
    """Subcommand and --config value, found before full parsing."""
    command = config = None
    for i, tok in enumerate(argv):
        if command is None and not tok.startswith("-"):
            command = tok
        elif tok == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif tok.startswith("--config="):
            config = tok.split("=", 1)[1]
    return command, config


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    print("config " + json.dumps(resolved, sort_keys=True, default=str), file=sys.stderr)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
