"""Deterministic synthetic corpus generation and brute-force oracles.

Every token embedding is built as base[token_id] + delta, where the
base table is drawn from Gaussian clusters and delta is a small
document-specific perturbation, so the base/delta decomposition holds
exactly by construction.  All randomness comes from the documented
SplitMix64 generator, so corpora are bit-identical across platforms.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import BadParam, TooLarge
from .rng import SplitMix64, derive_seed
from .scoring import maxsim_score
from .types import DocIndepTable, DocumentTokens


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    V: int = 128
    Z: int = 32
    n: int = 16
    D: int = 16
    delta_scale: float = 0.2
    cluster_count: int = 8
    query_count: int = 8
    l: int = 4
    n_candidates: int = 8
    query_noise: float = 0.05

    def __post_init__(self):
        positives = ("V", "Z", "n", "D", "cluster_count", "query_count", "l", "n_candidates")
        for name in positives:
            if getattr(self, name) <= 0:
                raise BadParam(f"{name} must be positive")
        if not (0.0 <= self.delta_scale <= 1.0):
            raise BadParam("delta_scale must lie in [0, 1]")


def gen_corpus(cfg):
    """Generate (DocIndepTable, documents); deterministic per seed.

    Base rows sit inside the tanh-representable range; each document
    token draws a vocabulary id and perturbs its base row by a delta
    whose norm is about delta_scale times the base norm.
    """
    rng = SplitMix64(derive_seed(cfg.seed, 0xBA5E))
    centers = rng.gaussian((cfg.cluster_count, cfg.D)) * 0.35
    assign = rng.randint(cfg.cluster_count, cfg.V)
    base = centers[assign] + rng.gaussian((cfg.V, cfg.D)) * 0.15
    base = np.clip(base, -0.95, 0.95)
    table = DocIndepTable(rows=base)

    doc_rng = SplitMix64(derive_seed(cfg.seed, 0xD0C5))
    docs = []
    for doc_id in range(cfg.Z):
        ids = doc_rng.randint(cfg.V, cfg.n)
        rows = base[ids]
        if cfg.delta_scale > 0:
            delta = doc_rng.gaussian((cfg.n, cfg.D))
            norms = np.linalg.norm(delta, axis=1, keepdims=True)
            norms = np.maximum(norms, 1e-12)
            jitter = 0.75 + 0.5 * doc_rng.uniform(cfg.n)[:, None]
            target = cfg.delta_scale * np.linalg.norm(rows, axis=1, keepdims=True)
            delta = delta / norms * target * jitter
        else:
            delta = np.zeros((cfg.n, cfg.D))
        emb = rows + delta
        # the stored decomposition is defined as emb - rows, which makes
        # the identity exact even under floating-point rounding
        delta = emb - rows
        assert np.array_equal(emb - rows, delta)
        docs.append(DocumentTokens(doc_id=doc_id, token_ids=ids.astype(np.uint16),
                                   embeddings=emb))
    return table, docs


@dataclass(frozen=True)
class QuerySample:
    query: np.ndarray  # (l, D)
    candidate_ids: tuple
    teacher_order: tuple  # candidate ids sorted by clean MaxSim, best first
    target_id: int  # the document the query tokens were sampled from


def gen_queries(cfg, table, docs):
    """Perturbed copies of document tokens plus distractor candidates."""
    if cfg.n_candidates > len(docs):
        raise BadParam("n_candidates exceeds the corpus size")
    rng = SplitMix64(derive_seed(cfg.seed, 0x9E7))
    by_id = {d.doc_id: d for d in docs}
    queries = []
    for _ in range(cfg.query_count):
        target = int(rng.randint(len(docs)))
        doc = docs[target]
        rows = doc.embeddings[rng.randint(doc.n_tokens, cfg.l)]
        query = rows + rng.gaussian((cfg.l, cfg.D)) * cfg.query_noise
        others = [d.doc_id for d in docs if d.doc_id != doc.doc_id]
        perm = rng.shuffle(len(others))
        cands = [doc.doc_id] + [others[i] for i in perm[: cfg.n_candidates - 1]]
        cands = sorted(cands)
        scores = [maxsim_score(query, by_id[c].embeddings) for c in cands]
        order = sorted(range(len(cands)), key=lambda i: (-scores[i], cands[i]))
        queries.append(QuerySample(
            query=query,
            candidate_ids=tuple(cands),
            teacher_order=tuple(cands[i] for i in order),
            target_id=doc.doc_id,
        ))
    return queries


# ---------------------------------------------------------------------------
# brute-force oracles (test-only reference implementations)


def kmeans_exhaustive(points, K):
    """Globally optimal k-means by enumerating all assignments.

    Limited to tiny instances; returns (centroids, assignment, mse).
    """
    points = np.asarray(points, dtype=np.float64)
    N = points.shape[0]
    if N > 12 or K > 3:
        raise TooLarge("kmeans_exhaustive is limited to N <= 12, K <= 3")
    best = None
    for assign in itertools.product(range(K), repeat=N):
        assign = np.array(assign)
        if len(set(assign.tolist())) < K:
            continue
        cents = np.stack([points[assign == k].mean(axis=0) for k in range(K)])
        mse = float(np.mean(np.sum((points - cents[assign]) ** 2, axis=1)))
        if best is None or mse < best[2] - 1e-15:
            best = (cents, assign, mse)
    return best


def maxsim_bruteforce(Q, Dm):
    """Double-loop MaxSim, no vectorization."""
    total = 0.0
    for qi in np.asarray(Q, dtype=np.float64):
        best = -np.inf
        for dj in np.asarray(Dm, dtype=np.float64):
            best = max(best, float(np.dot(qi, dj)))
        total += best
    return total


def code_search_bruteforce(cb, x):
    """Globally optimal code by enumerating all K**M combinations."""
    spec = cb.spec
    if spec.K**spec.M > 4096:
        raise TooLarge("code_search_bruteforce is limited to K**M <= 4096")
    from .baseline import decode_baseline

    x = np.asarray(x, dtype=np.float64)
    best_code, best_err = None, np.inf
    for code in itertools.product(range(spec.K), repeat=spec.M):
        rec = decode_baseline(cb, np.array(code))
        err = float(np.sum((x - rec) ** 2))
        if err < best_err - 1e-15:
            best_code, best_err = np.array(code), err
    return best_code, best_err
