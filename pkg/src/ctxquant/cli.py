"""Command-line front end: offline compression and online re-ranking.

Subcommands map 1:1 onto library operations.  Exit codes: 0 success,
1 usage error, 2 data error.  Reports are line-oriented key=value text.
"""

import argparse
import sys

import numpy as np

from . import evalkit, scoring, storage, synth
from .baseline import KMeansConfig, train_pq, train_rq
from .errors import CtxQuantError
from .network import GumbelConfig, quantize_document, reconstruct_document
from .rng import derive_seed
from .scoring import RerankRequest, maxsim_score
from .train import (
    LossKind,
    RankTriple,
    TrainConfig,
    gradcheck,
    train_cq,
)
from .types import DocumentTokens, DocIndepTable, make_quantizer_spec


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _emit(lines, out_path=None):
    text = "".join(f"{k}={v}\n" for k, v in lines)
    sys.stdout.write(text)
    if out_path:
        with open(out_path, "w") as f:
            f.write(text)


def _read_base_table(path):
    _, docs = storage.read_embeddings(path)
    if len(docs) != 1:
        raise CtxQuantError(f"base table file must hold exactly one block, got {len(docs)}")
    return DocIndepTable(rows=docs[0].embeddings)


def _read_queries(path):
    _, docs = storage.read_embeddings(path)
    return {f"q{d.doc_id}": d.embeddings for d in docs}


def _read_candidates(path):
    out = {}
    with open(path) as f:
        for line in f:
            fields = line.split()
            if not fields:
                continue
            out[fields[0]] = [int(x) for x in fields[1:]]
    return out


def _magic(path):
    with open(path, "rb") as f:
        return f.read(4)


# ---------------------------------------------------------------------------
# subcommand implementations


def cmd_synth(args):
    cfg = synth.SynthConfig(
        seed=args.seed, V=args.vocab, Z=args.docs, n=args.doc_tokens,
        D=args.D, delta_scale=args.delta_scale, cluster_count=args.clusters,
        query_count=args.queries, l=args.query_tokens,
        n_candidates=args.candidates, query_noise=args.query_noise,
    )
    table, docs = synth.gen_corpus(cfg)
    queries = synth.gen_queries(cfg, table, docs)
    storage.write_embeddings(f"{args.out_dir}/corpus.cqem", docs, cfg.D)
    base_doc = DocumentTokens(doc_id=0,
                              token_ids=np.arange(cfg.V, dtype=np.uint16),
                              embeddings=table.rows)
    storage.write_embeddings(f"{args.out_dir}/base.cqem", [base_doc], cfg.D)
    qdocs = [DocumentTokens(doc_id=i, token_ids=np.zeros(cfg.l, dtype=np.uint16),
                            embeddings=q.query) for i, q in enumerate(queries)]
    storage.write_embeddings(f"{args.out_dir}/queries.cqem", qdocs, cfg.D)
    with open(f"{args.out_dir}/candidates.txt", "w") as f:
        for i, q in enumerate(queries):
            f.write(f"q{i} " + " ".join(str(c) for c in q.candidate_ids) + "\n")
    with open(f"{args.out_dir}/qrels.txt", "w") as f:
        for i, q in enumerate(queries):
            f.write(f"q{i} 0 {q.target_id} 1\n")
    _emit([("docs", cfg.Z), ("vocab", cfg.V), ("queries", cfg.query_count),
           ("out_dir", args.out_dir)])
    return 0


def _train_baseline(args, mode):
    dim, docs = storage.read_embeddings(args.embeddings)
    X = np.concatenate([d.embeddings for d in docs if d.n_tokens], axis=0)
    spec = make_quantizer_spec(mode, args.M, args.K, dim)
    cfg = KMeansConfig(iterations=args.iters, seed=args.seed)
    cb = train_pq(X, spec, cfg) if mode == "product" else train_rq(X, spec, cfg)
    storage.write_codebooks(args.out, cb)
    _emit([("samples", X.shape[0]), ("M", args.M), ("K", args.K), ("out", args.out)])
    return 0


def cmd_train_pq(args):
    return _train_baseline(args, "product")


def cmd_train_rq(args):
    return _train_baseline(args, "additive")


def _build_triples(queries, candidates, docs_by_id):
    triples = []
    for qid, query in queries.items():
        cands = candidates.get(qid, [])
        if len(cands) < 2:
            continue
        scores = {c: maxsim_score(query, docs_by_id[c].embeddings) for c in cands}
        ranked = sorted(cands, key=lambda c: (-scores[c], c))
        pos = docs_by_id[ranked[0]]
        for neg_id in ranked[1:]:
            triples.append(RankTriple(query_embeddings=query, pos_doc=pos,
                                      neg_doc=docs_by_id[neg_id]))
    return triples


def cmd_train_cq(args):
    dim, docs = storage.read_embeddings(args.embeddings)
    table = _read_base_table(args.base)
    spec = make_quantizer_spec(args.mode, args.M, args.K, dim)
    E_t = np.concatenate([d.embeddings for d in docs if d.n_tokens], axis=0)
    E_bar = np.concatenate([table.lookup(d.token_ids) for d in docs if d.n_tokens], axis=0)

    loss = LossKind(args.loss)
    triples = []
    if loss is not LossKind.MSE and args.finetune_steps > 0:
        if not (args.queries and args.candidates):
            raise CtxQuantError("ranking fine-tune needs --queries and --candidates")
        queries = _read_queries(args.queries)
        candidates = _read_candidates(args.candidates)
        docs_by_id = {d.doc_id: d for d in docs}
        triples = _build_triples(queries, candidates, docs_by_id)

    init_books = None
    if args.kmeans_init:
        resid = E_t - E_bar
        kcfg = KMeansConfig(iterations=10, seed=derive_seed(args.seed, 0xB0))
        init_books = (train_pq(resid, spec, kcfg) if spec.mode.value == "product"
                      else train_rq(resid, spec, kcfg)).books

    cfg = TrainConfig(
        warmup_lr=args.lr, warmup_batch=args.batch, warmup_steps=args.steps,
        finetune_lr=args.finetune_lr, pairs_per_batch=args.pairs_per_batch,
        finetune_steps=args.finetune_steps if loss is not LossKind.MSE else 0,
        loss=loss, seed=args.seed, sample_size=args.sample_size,
        tau_start=args.tau_start, tau_end=args.tau_end,
    )
    teacher = lambda q, d: maxsim_score(q, d.embeddings)
    model = train_cq(E_t, E_bar, table, triples, teacher,
                     cfg, spec, init_codebooks=init_books)
    storage.write_model(args.out, model)
    _emit([("tokens", E_t.shape[0]), ("warmup_steps", cfg.warmup_steps),
           ("finetune_steps", cfg.finetune_steps), ("loss", loss.value),
           ("out", args.out)])
    return 0


def cmd_encode(args):
    dim, docs = storage.read_embeddings(args.embeddings)
    magic = _magic(args.model)
    if magic == b"CQNN":
        model = storage.read_model(args.model)
        if not args.base:
            raise CtxQuantError("encoding with a CQ model needs --base")
        table = _read_base_table(args.base)
        g = GumbelConfig(hard=True, seed=args.seed)
        coded = [quantize_document(model, d, table, g) for d in docs]
        spec = model.spec
    elif magic == b"CQBK":
        from .baseline import encode_baseline_matrix
        from .types import DocumentCodes

        cb = storage.read_codebooks(args.model)
        spec = cb.spec
        coded = [DocumentCodes(doc_id=d.doc_id, token_ids=d.token_ids,
                               codes=encode_baseline_matrix(cb, d.embeddings))
                 for d in docs]
    else:
        raise CtxQuantError(f"unrecognized model magic {magic!r}")
    storage.write_store(args.out, spec, coded)
    _emit([("docs", len(coded)), ("out", args.out)])
    return 0


def cmd_decode(args):
    store = storage.read_store(args.codes)
    magic = _magic(args.model)
    docs = []
    if magic == b"CQNN":
        model = storage.read_model(args.model)
        table = _read_base_table(args.base)
        for dc in store.scan():
            rec = reconstruct_document(model, dc, table)
            docs.append(DocumentTokens(doc_id=dc.doc_id, token_ids=dc.token_ids,
                                       embeddings=rec))
        dim = model.spec.D
    elif magic == b"CQBK":
        from .baseline import decode_baseline_matrix

        cb = storage.read_codebooks(args.model)
        for dc in store.scan():
            rec = decode_baseline_matrix(cb, dc.codes)
            docs.append(DocumentTokens(doc_id=dc.doc_id, token_ids=dc.token_ids,
                                       embeddings=rec))
        dim = cb.spec.D
    else:
        raise CtxQuantError(f"unrecognized model magic {magic!r}")
    storage.write_embeddings(args.out, docs, dim)
    _emit([("docs", len(docs)), ("out", args.out)])
    return 0


def cmd_rerank(args):
    queries = _read_queries(args.queries)
    candidates = _read_candidates(args.candidates)
    missing = sorted(set(queries) - set(candidates))
    if missing:
        raise CtxQuantError(f"no candidate list for queries: {', '.join(missing)}")
    run = {}
    if args.raw_embeddings:
        _, docs = storage.read_embeddings(args.raw_embeddings)
        by_id = {d.doc_id: d for d in docs}
        for qid, query in queries.items():
            cands = candidates[qid]
            scored = sorted(
                ((maxsim_score(query, by_id[c].embeddings), c) for c in cands),
                key=lambda t: (-t[0], t[1]),
            )[: args.k]
            run[qid] = [(str(c), s) for s, c in scored]
    else:
        store = storage.read_store(args.codes)
        model = storage.read_model(args.model)
        table = _read_base_table(args.base)
        for qid, query in queries.items():
            req = RerankRequest(query=query, candidates=candidates[qid], k=args.k)
            ranked = scoring.rerank(req, store, model, table, threads=args.threads)
            run[qid] = [(str(sd.doc_id), sd.score) for sd in ranked]
    evalkit.write_run(args.out, run)
    _emit([("queries", len(run)), ("k", args.k), ("out", args.out)])
    return 0


def cmd_eval(args):
    run = evalkit.parse_run(args.run)
    qrels = evalkit.parse_qrels(args.qrels)
    metric = args.metric.lower()
    if metric.startswith("mrr@"):
        value = evalkit.mrr_at_k(run, qrels, k=int(metric.split("@")[1]))
    elif metric == "ndcg@10":
        value = evalkit.ndcg_at_10(run, qrels)
    else:
        raise CtxQuantError(f"unknown metric {args.metric!r}")
    _emit([(metric, f"{value:.4f}")], args.out)
    return 0


def cmd_space_report(args):
    spec = make_quantizer_spec(args.mode, args.M, args.K, args.D)
    m = storage.SpaceModel(Z=args.Z, n=args.n, V=args.V, D=args.D, M=args.M,
                           K=args.K, h=spec.h, bytes_per_float=args.float_bytes,
                           token_id_bytes=args.id_bytes)
    rep = storage.space_report(m)
    _emit([
        ("codebook_bytes", f"{rep.codebook_bytes:.0f}"),
        ("doc_indep_bytes", f"{rep.doc_indep_bytes:.0f}"),
        ("codes_bytes", f"{rep.codes_bytes:.6g}"),
        ("colbert_bytes", f"{rep.colbert_baseline_bytes:.6g}"),
        ("ratio_colbert_to_cq", f"{rep.ratio_colbert_to_cq:.4f}"),
        ("becr_ratio", f"{storage.becr_ratio(args.M, args.K, args.id_bytes):.4f}"),
    ], args.out)
    return 0


def cmd_gradcheck(args):
    err = gradcheck(seed=args.seed, M=args.M, K=args.K, D=args.D,
                    n_samples=args.samples)
    ok = err < 1e-4
    _emit([("max_rel_err", f"{err:.3e}"), ("pass", str(ok).lower())])
    return 0 if ok else 2


def cmd_fidelity(args):
    teacher = evalkit.parse_run(args.teacher_run)
    student = evalkit.parse_run(args.student_run)
    rep = evalkit.fidelity_report(teacher, student)
    lines = [(f"tau.{qid}", f"{tau:.4f}") for qid, tau in sorted(rep.per_query_tau.items())]
    lines.append(("median_tau", f"{rep.median_tau:.4f}"))
    _emit(lines, args.out)
    if args.pairs_out:
        with open(args.pairs_out, "w") as f:
            f.write("qid\tdoc_id\tteacher\tstudent\n")
            for qid, doc_id, f_t, f_s in rep.pairs:
                f.write(f"{qid}\t{doc_id}\t{f_t:.6g}\t{f_s:.6g}\n")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser():
    p = _Parser(prog="ctxquant",
                description="Contextual quantization toolkit for late-interaction re-ranking")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", parents=[], help="generate a synthetic corpus",
                        description="Write corpus/base/query embedding files plus "
                                    "candidate lists and qrels for a synthetic corpus.")
    sp.add_argument("--seed", type=int, default=0, help="generator seed")
    sp.add_argument("--vocab", type=int, default=128, help="vocabulary size V")
    sp.add_argument("--docs", type=int, default=32, help="document count Z")
    sp.add_argument("--doc-tokens", type=int, default=16, help="tokens per document n")
    sp.add_argument("--D", type=int, default=16, help="embedding dimension")
    sp.add_argument("--delta-scale", type=float, default=0.2,
                    help="document-specific component norm relative to the base")
    sp.add_argument("--clusters", type=int, default=8, help="base embedding clusters")
    sp.add_argument("--queries", type=int, default=8, help="query count")
    sp.add_argument("--query-tokens", type=int, default=4, help="tokens per query l")
    sp.add_argument("--candidates", type=int, default=8, help="candidates per query")
    sp.add_argument("--query-noise", type=float, default=0.05, help="query perturbation scale")
    sp.add_argument("--out-dir", required=True, help="output directory (must exist)")
    sp.set_defaults(func=cmd_synth)

    for name, fn in (("train-pq", cmd_train_pq), ("train-rq", cmd_train_rq)):
        sp = sub.add_parser(name, help=f"train a {name[6:].upper()} baseline quantizer",
                            description="K-means codebook training on a CQEM embedding file.")
        sp.add_argument("--embeddings", required=True, help="CQEM training embeddings")
        sp.add_argument("--M", type=int, required=True, help="number of codebooks")
        sp.add_argument("--K", type=int, required=True, help="codewords per codebook")
        sp.add_argument("--iters", type=int, default=25, help="Lloyd iterations")
        sp.add_argument("--seed", type=int, default=0, help="k-means seed")
        sp.add_argument("--out", required=True, help="output CQBK path")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("train-cq", help="train the contextual quantizer",
                        description="Two-phase training: MSE warm-up then optional "
                                    "ranking-loss fine-tune with a frozen encoder.")
    sp.add_argument("--embeddings", required=True, help="CQEM training embeddings")
    sp.add_argument("--base", required=True, help="CQEM document-independent table")
    sp.add_argument("--mode", choices=["product", "additive"], default="product",
                    help="decoder combination: concatenation or sum")
    sp.add_argument("--M", type=int, required=True, help="number of codebooks")
    sp.add_argument("--K", type=int, required=True, help="codewords per codebook")
    sp.add_argument("--seed", type=int, default=0, help="training seed")
    sp.add_argument("--steps", type=int, default=2000, help="MSE warm-up steps")
    sp.add_argument("--lr", type=float, default=1e-3, help="warm-up learning rate")
    sp.add_argument("--batch", type=int, default=128, help="warm-up batch size")
    sp.add_argument("--sample-size", type=int, default=500_000,
                    help="training-token subsample cap")
    sp.add_argument("--tau-start", type=float, default=1.0,
                    help="relaxation temperature at the start of warm-up")
    sp.add_argument("--tau-end", type=float, default=0.05,
                    help="relaxation temperature at the end of warm-up "
                         "(annealed geometrically)")
    sp.add_argument("--loss", choices=[k.value for k in LossKind], default="mse",
                    help="fine-tune loss (mse skips the fine-tune phase)")
    sp.add_argument("--finetune-steps", type=int, default=800, help="fine-tune steps")
    sp.add_argument("--finetune-lr", type=float, default=3e-6, help="fine-tune learning rate")
    sp.add_argument("--pairs-per-batch", type=int, default=32,
                    help="training pairs per fine-tune step")
    sp.add_argument("--queries", help="CQEM query embeddings for ranking fine-tune")
    sp.add_argument("--candidates", help="candidate list file for ranking fine-tune")
    sp.add_argument("--kmeans-init", action=argparse.BooleanOptionalAction, default=True,
                    help="initialize codebooks from k-means on base residuals")
    sp.add_argument("--out", required=True, help="output CQNN path")
    sp.set_defaults(func=cmd_train_cq)

    sp = sub.add_parser("encode", help="compress documents to a code store",
                        description="Encode every document of a CQEM file with a "
                                    "CQNN or CQBK model into a CQCS store.")
    sp.add_argument("--model", required=True, help="CQNN or CQBK model path")
    sp.add_argument("--embeddings", required=True, help="CQEM documents to encode")
    sp.add_argument("--base", help="CQEM base table (required for CQNN models)")
    sp.add_argument("--seed", type=int, default=0, help="unused in hard mode; reserved")
    sp.add_argument("--out", required=True, help="output CQCS path")
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help="reconstruct embeddings from a code store",
                        description="Decode a CQCS store back to a CQEM embedding file.")
    sp.add_argument("--model", required=True, help="CQNN or CQBK model path")
    sp.add_argument("--codes", required=True, help="CQCS code store")
    sp.add_argument("--base", help="CQEM base table (required for CQNN models)")
    sp.add_argument("--out", required=True, help="output CQEM path")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("rerank", help="late-interaction top-k re-ranking",
                        description="Score candidates per query with MaxSim over "
                                    "reconstructed (or raw) embeddings; writes a TREC run.")
    sp.add_argument("--queries", required=True, help="CQEM query embeddings")
    sp.add_argument("--candidates", required=True, help="candidate list file")
    sp.add_argument("--model", help="CQNN model path")
    sp.add_argument("--codes", help="CQCS code store")
    sp.add_argument("--base", help="CQEM base table")
    sp.add_argument("--raw-embeddings",
                    help="score raw CQEM embeddings instead (teacher mode)")
    sp.add_argument("--k", type=int, default=10, help="re-rank depth")
    sp.add_argument("--threads", type=int, default=1,
                    help="parallel candidate scoring (results are order-fixed)")
    sp.add_argument("--out", required=True, help="output run file")
    sp.set_defaults(func=cmd_rerank)

    sp = sub.add_parser("eval", help="score a run against qrels",
                        description="Compute MRR@k or NDCG@10 for a TREC run file.")
    sp.add_argument("--run", required=True, help="TREC run file")
    sp.add_argument("--qrels", required=True, help="TREC qrels file")
    sp.add_argument("--metric", default="mrr@10", help="mrr@K or ndcg@10")
    sp.add_argument("--out", help="also write the report to this file")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("space-report", help="storage cost calculator",
                        description="Byte counts for codebooks, base table, packed "
                                    "codes, and the uncompressed baseline.")
    sp.add_argument("--Z", type=float, required=True, help="document count")
    sp.add_argument("--n", type=float, required=True, help="mean tokens per document")
    sp.add_argument("--V", type=int, default=32000, help="vocabulary size")
    sp.add_argument("--D", type=int, required=True, help="embedding dimension")
    sp.add_argument("--M", type=int, required=True, help="number of codebooks")
    sp.add_argument("--K", type=int, required=True, help="codewords per codebook")
    sp.add_argument("--mode", choices=["product", "additive"], default="product",
                    help="quantizer mode (sets the codeword dimension)")
    sp.add_argument("--float-bytes", type=int, default=2,
                    help="bytes per float in the uncompressed baseline")
    sp.add_argument("--id-bytes", type=int, default=2, help="bytes per token id")
    sp.add_argument("--out", help="also write the report to this file")
    sp.set_defaults(func=cmd_space_report)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient check",
                        description="Compare analytic gradients with central "
                                    "differences on a random model.")
    sp.add_argument("--seed", type=int, default=0, help="model/data seed")
    sp.add_argument("--M", type=int, default=2, help="number of codebooks")
    sp.add_argument("--K", type=int, default=4, help="codewords per codebook")
    sp.add_argument("--D", type=int, default=8, help="embedding dimension")
    sp.add_argument("--samples", type=int, default=4, help="batch size")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("fidelity", help="teacher-vs-student ranking fidelity",
                        description="Per-query rank correlation and score pairs "
                                    "between two runs over the same candidates.")
    sp.add_argument("--teacher-run", required=True, help="teacher TREC run")
    sp.add_argument("--student-run", required=True, help="student TREC run")
    sp.add_argument("--pairs-out", help="write (teacher, student) score pairs TSV")
    sp.add_argument("--out", help="also write the report to this file")
    sp.set_defaults(func=cmd_fidelity)

    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    try:
        return args.func(args)
    except (CtxQuantError, OSError) as e:
        print(f"ctxquant: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
