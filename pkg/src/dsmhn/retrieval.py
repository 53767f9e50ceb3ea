"""Hamming ranking and retrieval metrics (mAP, P@K, 11-point PR).

A database item is relevant to a query when the two share at least one
label. Rankings sort by Hamming distance with ties broken by ascending
database index, so every metric is deterministic.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field

import numpy as np

from .codes import BinaryCodes, hamming_matrix, pack
from .errors import ShapeError

PR_STEPS = 10
PR_LEVELS = np.arange(PR_STEPS + 1) / PR_STEPS


class RetrievalTask(enum.Enum):
    IMAGE_QUERY_TEXT = "ixt"
    TEXT_QUERY_IMAGE = "txi"
    IMAGE_QUERY_IMAGE = "ixi"

    @property
    def query_modality(self) -> str:
        return "y" if self is RetrievalTask.TEXT_QUERY_IMAGE else "x"

    @property
    def database_modality(self) -> str:
        return "y" if self is RetrievalTask.IMAGE_QUERY_TEXT else "x"


@dataclass
class RankedList:
    query_index: int
    order: np.ndarray
    distances: np.ndarray


def rank(query: BinaryCodes, database: BinaryCodes, index: int = 0) -> RankedList:
    """Rank ``database`` by distance to code ``index`` of ``query``."""
    dist = hamming_matrix(query.subset([index]), database)[0]
    order = np.argsort(dist, kind="stable")
    return RankedList(index, order, dist[order])


def average_precision(relevance) -> float:
    """Mean of precision@k over the ranks k holding a relevant item;
    0.0 when nothing is relevant."""
    rel = np.asarray(relevance, dtype=np.float64)
    if rel.size == 0:
        raise ValueError("relevance list is empty")
    total = rel.sum()
    if total == 0:
        return 0.0
    precision = np.cumsum(rel) / np.arange(1, rel.size + 1)
    return float((precision * rel).sum() / total)


def precision_at_k(relevance, k: int) -> float:
    """Relevant fraction of the top ``k``; ``k`` is capped at the list length."""
    rel = np.asarray(relevance, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, rel.size)
    return float(rel[:k].sum() / k)


def interpolated_pr(relevance) -> np.ndarray:
    """Precision at the 11 recall levels 0.0, 0.1, ..., 1.0, each taken as
    the max precision over ranks whose recall reaches the level."""
    rel = np.asarray(relevance, dtype=np.float64)
    total = int(rel.sum())
    if total == 0:
        return np.zeros(PR_STEPS + 1)
    cum = np.cumsum(rel)
    precision = cum / np.arange(1, rel.size + 1)
    # suffix max gives the best precision at or beyond each rank
    best_after = np.maximum.accumulate(precision[::-1])[::-1]
    # recall >= t/10  <=>  10 * hits >= t * total, compared in integers
    hits10 = (cum * PR_STEPS).astype(np.int64)
    out = np.empty(PR_STEPS + 1)
    for t in range(PR_STEPS + 1):
        pos = np.searchsorted(hits10, t * total, side="left")
        out[t] = best_after[pos]
    return out


@dataclass
class EvalReport:
    map: float
    p_at_k: list[tuple[int, float]]
    pr_curve: list[tuple[float, float]]
    n_queries: int
    n_no_relevant: int
    task: str | None = None
    rankings: np.ndarray | None = field(default=None, repr=False)

    def to_text(self) -> str:
        lines = []
        if self.task is not None:
            lines.append(f"task={self.task}")
        lines.append(f"map={self.map!r}")
        lines.append(f"n_queries={self.n_queries}")
        lines.append(f"n_no_relevant={self.n_no_relevant}")
        for k, p in self.p_at_k:
            lines.append(f"p_at_{k}={p!r}")
        return "\n".join(lines) + "\n"

    def p_at_k_csv(self) -> str:
        return "k,precision\n" + "".join(f"{k},{p!r}\n" for k, p in self.p_at_k)

    def pr_csv(self) -> str:
        return "recall,precision\n" + "".join(f"{r!r},{p!r}\n" for r, p in self.pr_curve)

    def rankings_csv(self) -> str:
        if self.rankings is None:
            return ""
        return "query,ranking\n" + "".join(
            f"{q}," + " ".join(map(str, row)) + "\n" for q, row in enumerate(self.rankings)
        )

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        files = {
            "report.txt": self.to_text(),
            "p_at_k.csv": self.p_at_k_csv(),
            "pr_curve.csv": self.pr_csv(),
        }
        if self.rankings is not None:
            files["rankings.csv"] = self.rankings_csv()
        for name, text in files.items():
            with open(os.path.join(out_dir, name), "w", newline="\n") as fh:
                fh.write(text)


def evaluate(queries: BinaryCodes, query_labels, database: BinaryCodes, db_labels,
             ks=(100,), task: RetrievalTask | str | None = None,
             keep_rankings: bool = False, chunk: int = 512) -> EvalReport:
    """mAP over the full ranking, P@K for each K, and the 11-point PR curve.

    Queries with no relevant database item are left out of mAP and the PR
    curve and counted in ``n_no_relevant``; P@K averages over all queries.
    """
    query_labels = np.asarray(query_labels)
    db_labels = np.asarray(db_labels)
    if query_labels.ndim != 2 or db_labels.ndim != 2 or query_labels.shape[1] != db_labels.shape[1]:
        raise ShapeError(f"label blocks do not match: {query_labels.shape} vs {db_labels.shape}")
    if query_labels.shape[0] != queries.n or db_labels.shape[0] != database.n:
        raise ShapeError("label rows must match the number of codes")
    if queries.code_length != database.code_length:
        raise ShapeError(f"code lengths differ: {queries.code_length} vs {database.code_length}")
    if database.n == 0:
        raise ShapeError("database is empty")
    ks = [int(k) for k in ks]
    if any(k < 1 for k in ks):
        raise ValueError("every K must be >= 1")

    n_db = database.n
    positions = np.arange(1, n_db + 1, dtype=np.float64)
    ap_sum = 0.0
    n_with_rel = 0
    pk_sums = np.zeros(len(ks))
    pr_sum = np.zeros(len(PR_LEVELS))
    rankings = [] if keep_rankings else None
    qg = query_labels.astype(np.float64)
    dg = db_labels.astype(np.float64)

    for start in range(0, queries.n, chunk):
        block = queries.subset(np.arange(start, min(start + chunk, queries.n)))
        dist = hamming_matrix(block, database)
        order = np.argsort(dist, axis=1, kind="stable")
        relevant = (qg[start:start + block.n] @ dg.T) > 0
        rel = np.take_along_axis(relevant, order, axis=1).astype(np.float64)
        cum = np.cumsum(rel, axis=1)
        totals = cum[:, -1]
        for t, k in enumerate(ks):
            k_eff = min(k, n_db)
            pk_sums[t] += (cum[:, k_eff - 1] / k_eff).sum()
        has = totals > 0
        if np.any(has):
            precision = cum[has] / positions
            ap = (precision * rel[has]).sum(axis=1) / totals[has]
            ap_sum += ap.sum()
            n_with_rel += int(has.sum())
            for row in rel[has]:
                pr_sum += interpolated_pr(row)
        if keep_rankings:
            rankings.append(order)

    n_q = queries.n
    mean_ap = ap_sum / n_with_rel if n_with_rel else 0.0
    p_at_k = [(k, pk_sums[t] / n_q if n_q else 0.0) for t, k in enumerate(ks)]
    pr = pr_sum / n_with_rel if n_with_rel else np.zeros(len(PR_LEVELS))
    task_name = task.value if isinstance(task, RetrievalTask) else task
    return EvalReport(
        map=float(mean_ap),
        p_at_k=[(k, float(p)) for k, p in p_at_k],
        pr_curve=[(float(r), float(p)) for r, p in zip(PR_LEVELS, pr)],
        n_queries=n_q,
        n_no_relevant=n_q - n_with_rel,
        task=task_name,
        rankings=np.concatenate(rankings) if keep_rankings and rankings else None,
    )


def random_codes(n: int, code_length: int, rng) -> BinaryCodes:
    """Uniform random codes, used as the chance-level baseline."""
    return pack(np.where(rng.random((n, code_length)) < 0.5, 1, -1))
