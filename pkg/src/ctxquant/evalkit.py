"""Ranking metrics, TREC run/qrels text formats, fidelity reports.

A run is a dict mapping query id to an ordered list of (doc_id, score)
pairs, sorted descending by score with file order breaking ties.
Qrels are a dict mapping query id to {doc_id: grade}.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import EmptyRun, MismatchedSets, NotPermutation, ParseError

logger = logging.getLogger(__name__)


def _check_run(run):
    if not run:
        raise EmptyRun("run has no queries")
    for qid, entries in run.items():
        docs = [d for d, _ in entries]
        if len(docs) != len(set(docs)):
            raise EmptyRun(f"query {qid} has duplicate doc ids")


def mrr_at_k(run, qrels, k=10):
    """Mean reciprocal rank of the first relevant doc within the top k.

    Queries missing from qrels are skipped (and logged), matching the
    usual evaluator behavior.
    """
    _check_run(run)
    if k < 1:
        raise EmptyRun("k must be >= 1")
    total, counted = 0.0, 0
    for qid, entries in run.items():
        if qid not in qrels:
            logger.warning("query %s missing from qrels; skipped", qid)
            continue
        counted += 1
        for rank, (doc_id, _) in enumerate(entries[:k], start=1):
            if qrels[qid].get(doc_id, 0) >= 1:
                total += 1.0 / rank
                break
    if counted == 0:
        raise EmptyRun("no scored queries overlap the qrels")
    value = total / counted
    assert 0.0 <= value <= 1.0
    return value


def ndcg_at_10(run, qrels):
    """Mean NDCG@10 with exponential gain (2**grade - 1)."""
    _check_run(run)
    total, counted = 0.0, 0
    for qid, entries in run.items():
        if qid not in qrels:
            logger.warning("query %s missing from qrels; skipped", qid)
            continue
        counted += 1
        grades = qrels[qid]
        dcg = sum(
            (2.0 ** grades.get(doc_id, 0) - 1.0) / np.log2(rank + 1)
            for rank, (doc_id, _) in enumerate(entries[:10], start=1)
        )
        ideal = sorted(grades.values(), reverse=True)[:10]
        idcg = sum(
            (2.0**g - 1.0) / np.log2(rank + 1)
            for rank, g in enumerate(ideal, start=1)
        )
        if idcg > 0:
            total += dcg / idcg
    if counted == 0:
        raise EmptyRun("no scored queries overlap the qrels")
    value = total / counted
    assert 0.0 <= value <= 1.0 + 1e-12
    return min(value, 1.0)


def kendall_tau(ranking_a, ranking_b):
    """Kendall tau-a between two permutations of the same id set."""
    a, b = list(ranking_a), list(ranking_b)
    if len(a) < 2:
        raise NotPermutation("rankings must have length >= 2")
    if len(a) != len(b) or set(a) != set(b) or len(set(a)) != len(a):
        raise NotPermutation("inputs must be permutations of the same id set")
    pos_b = {doc: i for i, doc in enumerate(b)}
    ra = np.arange(len(a))
    rb = np.array([pos_b[doc] for doc in a])
    tau = stats.kendalltau(ra, rb).statistic
    value = float(tau)
    assert -1.0 - 1e-12 <= value <= 1.0 + 1e-12
    return float(np.clip(value, -1.0, 1.0))


# ---------------------------------------------------------------------------
# TREC text formats


def write_run(path, run, tag="ctxquant"):
    """Write run lines: qid Q0 docid rank score tag."""
    with open(path, "w") as f:
        for qid, entries in run.items():
            for rank, (doc_id, score) in enumerate(entries, start=1):
                f.write(f"{qid} Q0 {doc_id} {rank} {score:.6g} {tag}\n")


def parse_run(path):
    """Parse a TREC run file; order comes from scores, ties by file order."""
    per_query = {}
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 6:
                raise ParseError(line_no, f"expected 6 fields, got {len(fields)}")
            qid, _, doc_id, _rank, score, _tag = fields
            try:
                score = float(score)
            except ValueError:
                raise ParseError(line_no, f"bad score {score!r}") from None
            per_query.setdefault(qid, []).append((doc_id, score))
    run = {}
    for qid, entries in per_query.items():
        order = sorted(range(len(entries)), key=lambda i: (-entries[i][1], i))
        run[qid] = [entries[i] for i in order]
    return run


def parse_qrels(path):
    """Parse qrels lines: qid 0 docid grade."""
    qrels = {}
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 4:
                raise ParseError(line_no, f"expected 4 fields, got {len(fields)}")
            qid, _, doc_id, grade = fields
            try:
                grade = int(grade)
            except ValueError:
                raise ParseError(line_no, f"bad grade {grade!r}") from None
            if grade < 0:
                raise ParseError(line_no, "grades must be >= 0")
            qrels.setdefault(qid, {})[doc_id] = grade
    return qrels


# ---------------------------------------------------------------------------
# teacher-vs-student fidelity


@dataclass(frozen=True)
class FidelityReport:
    per_query_tau: dict  # qid -> tau
    pairs: list  # (qid, doc_id, teacher score, student score)

    @property
    def median_tau(self):
        return float(np.median(list(self.per_query_tau.values())))


def fidelity_report(teacher_run, student_run):
    """Per-query rank correlation plus aligned (f, f-hat) score pairs."""
    if set(teacher_run) != set(student_run):
        raise MismatchedSets("teacher and student runs cover different queries")
    taus, pairs = {}, []
    for qid in teacher_run:
        t_entries = teacher_run[qid]
        s_entries = student_run[qid]
        t_docs = [d for d, _ in t_entries]
        s_docs = [d for d, _ in s_entries]
        if set(t_docs) != set(s_docs):
            raise MismatchedSets(f"query {qid} has different candidate sets")
        taus[qid] = kendall_tau(t_docs, s_docs)
        s_scores = dict(s_entries)
        for doc_id, f in t_entries:
            pairs.append((qid, doc_id, f, s_scores[doc_id]))
    return FidelityReport(per_query_tau=taus, pairs=pairs)
