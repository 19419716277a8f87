"""Late-interaction MaxSim scoring and top-k re-ranking."""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import BadParam, DimMismatch, EmptyDoc
from .types import check_embedding_matrix


@dataclass(frozen=True)
class RerankRequest:
    query: np.ndarray  # (l, D)
    candidates: tuple
    k: int

    def __post_init__(self):
        object.__setattr__(self, "query", check_embedding_matrix(self.query, name="query"))
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if self.k < 1:
            raise BadParam("k must be >= 1")
        if not self.candidates:
            raise BadParam("candidates must be nonempty")


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: int
    score: float


def maxsim_score(query, doc):
    """Sum over query tokens of the max dot product over doc tokens."""
    query = check_embedding_matrix(query, name="query")
    doc = check_embedding_matrix(doc, name="doc")
    if query.shape[0] == 0:
        warnings.warn("empty query scores 0 by convention", stacklevel=2)
        return 0.0
    if doc.shape[0] == 0:
        raise EmptyDoc("document has no token rows")
    if query.shape[1] != doc.shape[1]:
        raise DimMismatch(f"query dim {query.shape[1]} != doc dim {doc.shape[1]}")
    sims = query @ doc.T
    return float(sims.max(axis=1).sum())


def maxsim_score_with_grad(query, doc):
    """MaxSim score plus its gradient w.r.t. the doc token rows.

    The per-query-token argmax (lowest index on ties) routes each query
    vector to exactly one doc row.
    """
    query = check_embedding_matrix(query, name="query")
    doc = check_embedding_matrix(doc, name="doc")
    if doc.shape[0] == 0:
        raise EmptyDoc("document has no token rows")
    grad = np.zeros_like(doc)
    if query.shape[0] == 0:
        return 0.0, grad
    sims = query @ doc.T
    best = np.argmax(sims, axis=1)
    np.add.at(grad, best, query)
    return float(sims[np.arange(query.shape[0]), best].sum()), grad


def teacher_scores(query, raw_docs):
    """MaxSim on the original (uncompressed) embeddings, in input order."""
    return [maxsim_score(query, d.embeddings) for d in raw_docs]


def rerank(req, store, model, table, threads=1):
    """Decompress candidates on demand, score, return the top k.

    Sorted descending by score; ties break by ascending doc_id.
    """
    from .network import reconstruct_document

    def score_one(doc_id):
        codes = store.get(doc_id)
        rec = reconstruct_document(model, codes, table)
        return maxsim_score(req.query, rec)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(score_one, req.candidates))
    else:
        scores = [score_one(d) for d in req.candidates]
    ranked = sorted(
        (ScoredDoc(doc_id=d, score=s) for d, s in zip(req.candidates, scores)),
        key=lambda sd: (-sd.score, sd.doc_id),
    )
    return ranked[: req.k]
