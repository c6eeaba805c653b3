"""Offline ranking evaluation: each held-out item is ranked against
sampled unobserved items of its domain; HR@10 and NDCG@10 per domain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import SplitResult
from .graph import Direction, HeteroGraph, RelationId

logger = logging.getLogger(__name__)

EVAL_STREAM = 2


@dataclass
class EvalTask:
    user_id: int
    domain_id: int
    pos_item_id: int
    negatives: np.ndarray


@dataclass
class MetricReport:
    domain_id: int
    num_users: int
    hr_at_10: float
    ndcg_at_10: float


def build_eval_tasks(split: SplitResult, graph: HeteroGraph, seed: int,
                     num_negatives: int = 99) -> list:
    """One task per test record: the positive plus num_negatives items
    the user never interacted with (train or test), drawn without
    replacement. Draws depend only on (seed, domain, user), so task
    order never matters. Users with too few eligible items are skipped.
    """
    if num_negatives < 1:
        raise ValueError("need at least one negative")
    tasks = []
    skipped = 0
    for rec in split.test:
        d, u, pos = rec.domain_id, rec.user_id, rec.item_id
        train_items = graph.neighbors(RelationId(d, Direction.ITEM_TO_USER), u)
        blocked = np.union1d(train_items, [pos])
        eligible = np.setdiff1d(np.arange(graph.num_items_per_domain[d]), blocked)
        if len(eligible) < num_negatives:
            skipped += 1
            continue
        rng = np.random.default_rng([seed, EVAL_STREAM, d, u])
        negatives = rng.choice(eligible, size=num_negatives, replace=False)
        tasks.append(EvalTask(u, d, pos, negatives.astype(np.int64)))
    if skipped:
        logger.warning("skipped %d/%d eval users with fewer than %d eligible negatives",
                       skipped, len(split.test), num_negatives)
    return tasks


def rank_of_positive(scores, pos_index: int) -> int:
    """1-based rank of scores[pos_index]; ties rank the positive last."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(scores).all():
        raise ValueError("scores contain non-finite entries")
    if not 0 <= pos_index < len(scores):
        raise ValueError("pos_index out of range")
    pos = scores[pos_index]
    greater = int(np.sum(scores > pos))
    equal_others = int(np.sum(scores == pos)) - 1
    return 1 + greater + equal_others


def hr_ndcg_at_10(ranks) -> tuple:
    """HR@10 = share of ranks <= 10; NDCG@10 adds the 1/log2(rank+1)
    position discount inside the cutoff."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("no ranks to aggregate")
    if ranks.min() < 1:
        raise ValueError("ranks are 1-based")
    hits = ranks <= 10
    hr = float(np.mean(hits))
    gains = np.where(hits, 1.0 / np.log2(ranks + 1.0), 0.0)
    return hr, float(np.mean(gains))


def evaluate(model, tasks) -> list:
    """Score every task with one frozen forward pass; aggregate per
    domain in ascending id order. Domains without tasks are omitted."""
    o_u, o_i = model.outputs()
    by_domain = {}
    for task in tasks:
        by_domain.setdefault(task.domain_id, []).append(task)
    reports = []
    for d in sorted(by_domain):
        group = by_domain[d]
        users = np.array([t.user_id for t in group])
        # candidate column 0 is the positive, the rest are negatives
        cands = np.stack([np.concatenate(([t.pos_item_id], t.negatives)) for t in group])
        scores = np.einsum("nk,nck->nc", o_u[d][users], o_i[d][cands])
        if not np.isfinite(scores).all():
            raise ValueError(f"non-finite scores in domain {d}")
        pos = scores[:, :1]
        ranks = 1 + np.sum(scores[:, 1:] > pos, axis=1) + np.sum(scores[:, 1:] == pos, axis=1)
        hr, ndcg = hr_ndcg_at_10(ranks)
        reports.append(MetricReport(d, len(group), hr, ndcg))
    missing = set(range(len(o_u))) - set(by_domain)
    if missing:
        logger.warning("no eval tasks for domains %s; omitted from report", sorted(missing))
    return reports


def format_metric_table(reports, domain_names=None) -> str:
    """Tab-separated report; metrics are fractions in [0, 1]."""
    lines = ["domain\tusers\thr_at_10\tndcg_at_10"]
    for r in reports:
        name = domain_names[r.domain_id] if domain_names else str(r.domain_id)
        lines.append(f"{name}\t{r.num_users}\t{r.hr_at_10:.6f}\t{r.ndcg_at_10:.6f}")
    return "\n".join(lines)


def write_metrics_kv(path: str, reports, domain_names=None) -> None:
    """Flat key=value metrics file for harness consumption."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            name = domain_names[r.domain_id] if domain_names else f"d{r.domain_id}"
            fh.write(f"{name}.users={r.num_users}\n")
            fh.write(f"{name}.hr_at_10={r.hr_at_10:.10f}\n")
            fh.write(f"{name}.ndcg_at_10={r.ndcg_at_10:.10f}\n")
