"""Offline ranking metrics over the holdout window, per user segment, plus the
popularity-tier breakdown.

Recommenders produce a ranked id list per user; the harness removes items the
user already streamed in the training window, truncates to the top 100, and
scores hit rate, reciprocal rank, and catalog coverage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DatasetSplit, UserSegments

MAX_RANK = 100


@dataclass
class MetricsReport:
    segment: str
    hr_at_k: float
    mrr: float
    coverage: float
    n_users: int
    k: int

    def to_dict(self) -> dict:
        return {
            "segment": self.segment,
            "hr_at_k": float(self.hr_at_k),
            "mrr": float(self.mrr),
            "coverage": float(self.coverage),
            "n_users": int(self.n_users),
            "k": int(self.k),
        }


def hit_rate_at_k(
    recommendations: dict[str, list[str]],
    relevant: dict[str, set[str]],
    k: int = 10,
) -> float:
    """Share of users with at least one relevant item in their top k."""
    users = sorted(recommendations)
    if not users:
        raise ValueError("no users to evaluate")
    hits = np.array(
        [1.0 if set(recommendations[u][:k]) & relevant[u] else 0.0 for u in users]
    )
    return float(hits.mean())


def mrr(
    recommendations: dict[str, list[str]],
    relevant: dict[str, set[str]],
    max_rank: int = MAX_RANK,
) -> float:
    """Mean reciprocal rank of each user's first relevant item within the top
    `max_rank`; users with no relevant item there contribute zero."""
    users = sorted(recommendations)
    if not users:
        raise ValueError("no users to evaluate")
    values = []
    for u in users:
        rr = 0.0
        for rank, item in enumerate(recommendations[u][:max_rank], start=1):
            if item in relevant[u]:
                rr = 1.0 / rank
                break
        values.append(rr)
    return float(np.mean(values))


def coverage(
    recommendations: dict[str, list[str]],
    catalog: set[str],
    max_rank: int = MAX_RANK,
) -> float:
    """Fraction of the catalog appearing in at least one truncated list."""
    if not catalog:
        raise ValueError("empty catalog")
    recommended: set[str] = set()
    for items in recommendations.values():
        recommended.update(items[:max_rank])
    return len(recommended & catalog) / len(catalog)


def holdout_relevant_items(
    split: DatasetSplit, target_type: str
) -> dict[str, set[str]]:
    relevant: dict[str, set[str]] = {}
    for r in split.holdout:
        if r.signal == "stream" and r.item_type == target_type:
            relevant.setdefault(r.user_id, set()).add(r.item_id)
    return relevant


def train_consumed_items(split: DatasetSplit, target_type: str) -> dict[str, set[str]]:
    consumed: dict[str, set[str]] = {}
    for r in split.train:
        if r.signal == "stream" and r.item_type == target_type:
            consumed.setdefault(r.user_id, set()).add(r.item_id)
    return consumed


def filtered_recommendations(
    recommender,
    users: list[str],
    consumed: dict[str, set[str]],
    max_rank: int = MAX_RANK,
) -> dict[str, list[str]]:
    """Ask the recommender for each user's ranking, drop train-consumed items,
    truncate to `max_rank`."""
    out: dict[str, list[str]] = {}
    for u in users:
        ranked = recommender.recommend(u)
        drop = consumed.get(u, set())
        out[u] = [i for i in ranked if i not in drop][:max_rank]
    return out


def evaluate(
    recommender,
    split: DatasetSplit,
    segments: UserSegments,
    target_type: str,
    catalog_ids: set[str],
    k: int = 10,
    max_rank: int = MAX_RANK,
) -> dict[str, MetricsReport]:
    """Score a recommender on holdout streams of the target type.

    Returns one report per non-empty segment among warm / cold / all. Raises
    when no user is evaluable at all.
    """
    relevant = holdout_relevant_items(split, target_type)
    users = sorted(relevant)
    if not users:
        raise ValueError("no evaluable users: holdout has no target-type streams")
    consumed = train_consumed_items(split, target_type)
    recs = filtered_recommendations(recommender, users, consumed, max_rank)

    groups = {
        "warm": [u for u in users if u in segments.warm],
        "cold": [u for u in users if u in segments.cold],
        "all": users,
    }
    reports: dict[str, MetricsReport] = {}
    for name, group in groups.items():
        if not group:
            continue
        group_recs = {u: recs[u] for u in group}
        group_rel = {u: relevant[u] for u in group}
        reports[name] = MetricsReport(
            segment=name,
            hr_at_k=hit_rate_at_k(group_recs, group_rel, k),
            mrr=mrr(group_recs, group_rel, max_rank),
            coverage=coverage(group_recs, catalog_ids, max_rank),
            n_users=len(group),
            k=k,
        )
    return reports


def popularity_tiers(
    split: DatasetSplit,
    catalog_ids: set[str],
    target_type: str,
    n_tiers: int = 5,
) -> list[list[str]]:
    """Bucket target items into equal-count tiers by train stream count
    (descending, id ascending); tier 1 holds the most-streamed items."""
    counts = {i: 0 for i in catalog_ids}
    for r in split.train:
        if r.signal == "stream" and r.item_type == target_type and r.item_id in counts:
            counts[r.item_id] += 1
    ranked = sorted(counts, key=lambda i: (-counts[i], i))
    return [list(chunk) for chunk in np.array_split(np.array(ranked), n_tiers)]


def tiered_metrics(
    recommender,
    split: DatasetSplit,
    segments: UserSegments,
    target_type: str,
    catalog_ids: set[str],
    k: int = 10,
    max_rank: int = MAX_RANK,
    n_tiers: int = 5,
) -> dict[str, MetricsReport]:
    """Per-popularity-tier metrics; users contribute to every tier containing
    at least one of their relevant items. Tiers 3-5 combine into the reported
    long tail."""
    relevant = holdout_relevant_items(split, target_type)
    active_items = set().union(*relevant.values()) if relevant else set()
    if len(active_items) < n_tiers:
        raise ValueError(
            f"need at least {n_tiers} distinct items with holdout activity, "
            f"got {len(active_items)}"
        )
    tiers = popularity_tiers(split, catalog_ids, target_type, n_tiers)
    users = sorted(relevant)
    consumed = train_consumed_items(split, target_type)
    recs = filtered_recommendations(recommender, users, consumed, max_rank)

    reports: dict[str, MetricsReport] = {}
    tier_sets = [set(t) for t in tiers]
    long_tail = set().union(*tier_sets[2:])
    for label, members in [
        (f"tier_{i + 1}", tier_sets[i]) for i in range(n_tiers)
    ] + [("long_tail", long_tail)]:
        group = [u for u in users if relevant[u] & members]
        if not group:
            continue
        group_recs = {u: recs[u] for u in group}
        group_rel = {u: relevant[u] & members for u in group}
        reports[label] = MetricsReport(
            segment=label,
            hr_at_k=hit_rate_at_k(group_recs, group_rel, k),
            mrr=mrr(group_recs, group_rel, max_rank),
            coverage=coverage(group_recs, members, max_rank),
            n_users=len(group),
            k=k,
        )
    return reports
