"""Leave-one-out metrics, baselines and aggregation."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .candidates import CandidateSet
from .dataset import Split

DEFAULT_K = 10


def rank_of(ranking: Sequence[int], gt: int) -> int | None:
    """1-based position of ``gt`` in ``ranking``."""
    try:
        return list(ranking).index(gt) + 1
    except ValueError:
        return None


def hit_at_k(ranking: Sequence[int], gt: int, k: int = DEFAULT_K) -> int:
    r = rank_of(ranking, gt)
    return int(r is not None and r <= k)


def ndcg_at_k(ranking: Sequence[int], gt: int, k: int = DEFAULT_K) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    r = rank_of(ranking, gt)
    if r is None or r > k:
        return 0.0
    return 1.0 / math.log2(r + 1)


class PopularityRecommender(BaseEstimator):
    """Most-interacted items in the training split (ties: smaller id).

    ``exclude_seen=False`` is the default because it reproduces the
    published POP numbers on MovieLens 100K; with ``True`` the user's own
    training items are skipped.
    """

    def __init__(self, k: int = DEFAULT_K, exclude_seen: bool = False):
        self.k = k
        self.exclude_seen = exclude_seen

    def fit(self, split: Split, y=None):
        counts = Counter(i for h in split.train.values() for i in h.items)
        self.counts_ = counts
        self.order_ = tuple(sorted(counts, key=lambda i: (-counts[i], i)))
        self.split_ = split
        return self

    def recommend(self, user_id: int) -> list[int]:
        check_is_fitted(self, "order_")
        seen = set(self.split_.train[user_id].items) if self.exclude_seen else ()
        out = []
        for item in self.order_:
            if item not in seen:
                out.append(item)
                if len(out) == self.k:
                    break
        return out

    def predict(self, users: Iterable[int]) -> list[list[int]]:
        return [self.recommend(u) for u in users]


def pop_baseline(split: Split, user: int, k: int = DEFAULT_K, exclude_seen: bool = False) -> list[int]:
    return PopularityRecommender(k, exclude_seen).fit(split).recommend(user)


def cs_random_baseline(candidates: CandidateSet | Sequence[int], seed: int | Sequence[int], k: int = DEFAULT_K) -> list[int]:
    """Uniform sample of ``min(k, |candidates|)`` items, in draw order.

    Uses numpy's PCG64 seeded through ``SeedSequence(seed)``; pass
    ``(run_seed, user_id)`` to get independent per-user streams.
    """
    items = list(candidates.items if isinstance(candidates, CandidateSet) else candidates)
    size = min(k, len(items))
    if size == 0:
        return []
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return [items[i] for i in rng.choice(len(items), size=size, replace=False)]


@dataclass
class EvalRecord:
    user_id: int
    strategy: str
    ground_truth: int
    ranking: list[int]
    rank_of_gt: int | None
    hit_at_k: int
    ndcg_at_k: float
    candidate_contained_gt: bool | None = None
    candidates: list[int] | None = None
    prompt_digests: list[str] = field(default_factory=list)
    answer_text: str | None = None
    unresolved_count: int = 0
    error: str | None = None

    @classmethod
    def grade(
        cls,
        user_id: int,
        strategy: str,
        gt: int,
        ranking: Sequence[int],
        k: int = DEFAULT_K,
        candidates: Sequence[int] | None = None,
        **extra: Any,
    ) -> "EvalRecord":
        r = rank_of(ranking, gt)
        return cls(
            user_id=user_id,
            strategy=strategy,
            ground_truth=gt,
            ranking=list(ranking),
            rank_of_gt=r,
            hit_at_k=hit_at_k(ranking, gt, k),
            ndcg_at_k=ndcg_at_k(ranking, gt, k),
            candidate_contained_gt=None if candidates is None else gt in candidates,
            candidates=None if candidates is None else list(candidates),
            **extra,
        )

    @classmethod
    def failed(cls, user_id: int, strategy: str, gt: int, error: str) -> "EvalRecord":
        return cls(user_id, strategy, gt, [], None, 0, 0.0, error=error)

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: Mapping) -> "EvalRecord":
        return cls(**obj)


@dataclass
class Summary:
    strategy: str
    k: int
    user_count: int
    failed_users: int
    hr: float
    ndcg: float
    candidate_coverage: float | None
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "K": self.k,
            "user_count": self.user_count,
            "failed_users": self.failed_users,
            f"HR@{self.k}": self.hr,
            f"NDCG@{self.k}": self.ndcg,
            "candidate_coverage": self.candidate_coverage,
            "params": self.params,
        }


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values)


def aggregate(records: Iterable[EvalRecord], k: int = DEFAULT_K, params: Mapping | None = None) -> Summary:
    """Mean HR/NDCG over successful records; failures are only counted.

    ``math.fsum`` makes the means independent of record order.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    strategies = {r.strategy for r in records}
    if len(strategies) > 1:
        raise ValueError(f"records mix strategies: {sorted(strategies)}")
    good = [r for r in records if r.ok]
    if not good:
        raise ValueError("every record failed")
    covered = [r.candidate_contained_gt for r in good if r.candidate_contained_gt is not None]
    return Summary(
        strategy=strategies.pop(),
        k=k,
        user_count=len(good),
        failed_users=len(records) - len(good),
        hr=_mean([r.hit_at_k for r in good]),
        ndcg=_mean([r.ndcg_at_k for r in good]),
        candidate_coverage=_mean([float(c) for c in covered]) if covered else None,
        params=dict(params or {}),
    )


def write_records(path: str | Path, records: Iterable[EvalRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in sorted(records, key=lambda r: r.user_id):
            fh.write(json.dumps(rec.to_json(), sort_keys=True, ensure_ascii=False) + "\n")


def read_records(path: str | Path) -> list[EvalRecord]:
    with open(path, encoding="utf-8") as fh:
        return [EvalRecord.from_json(json.loads(line)) for line in fh if line.strip()]
