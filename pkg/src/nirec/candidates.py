"""Candidate set construction by user filtering and item filtering.

Users and items are multi-hot vectors built from the training split only.
Both filters return a fully ordered candidate list; ties are broken so that
the same split and parameters always give the same sets:

* neighbours: higher cosine first, then smaller id;
* candidates: higher popularity count, then higher similarity mass, then
  smaller item id.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dataset import Split

Method = Literal["UF", "IF"]


@dataclass(frozen=True)
class SparseVector:
    """Binary vector stored as its sorted active indices."""

    dimension: int
    active: tuple[int, ...]

    def __post_init__(self):
        act = self.active
        if any(b <= a for a, b in zip(act, act[1:])):
            raise ValueError("active indices must be strictly ascending")
        if act and (act[0] < 0 or act[-1] >= self.dimension):
            raise ValueError(f"active index out of range for dimension {self.dimension}")

    @classmethod
    def from_indices(cls, dimension: int, indices: Iterable[int]) -> "SparseVector":
        return cls(dimension, tuple(sorted(set(indices))))

    def __len__(self) -> int:
        return len(self.active)


def cosine(a: SparseVector, b: SparseVector) -> float:
    if a.dimension != b.dimension:
        raise ValueError(f"dimension mismatch: {a.dimension} != {b.dimension}")
    if not a.active or not b.active:
        return 0.0
    overlap = len(set(a.active).intersection(b.active))
    return overlap / math.sqrt(len(a) * len(b))


@dataclass(frozen=True)
class FilterParams:
    m: int = 10
    n: int = 10
    s: int = 19

    def __post_init__(self):
        for name in ("m", "n", "s"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass(frozen=True)
class CandidateSet:
    user_id: int
    method: Method
    items: tuple[int, ...]
    scores: tuple[tuple[int, float], ...]
    params: FilterParams = field(default_factory=FilterParams)
    exhausted: bool = False

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item_id: int) -> bool:
        return item_id in self.items

    def to_json(self) -> dict:
        return {
            "user_id": self.user_id,
            "method": self.method,
            "params": {"m": self.params.m, "n": self.params.n, "s": self.params.s},
            "items": list(self.items),
            "scores": [[c, m] for c, m in self.scores],
            "exhausted": self.exhausted,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "CandidateSet":
        return cls(
            user_id=int(obj["user_id"]),
            method=obj["method"],
            items=tuple(int(i) for i in obj["items"]),
            scores=tuple((int(c), float(m)) for c, m in obj["scores"]),
            params=FilterParams(**obj["params"]),
            exhausted=bool(obj.get("exhausted", False)),
        )


class _Incidence:
    """Dense user x item incidence shared by both index types."""

    def __init__(self, user_ids: Sequence[int], item_ids: Sequence[int], rows: Mapping[int, Iterable[int]]):
        self.user_ids = np.asarray(user_ids, dtype=np.int64)
        self.item_ids = np.asarray(item_ids, dtype=np.int64)
        self.user_pos = {u: k for k, u in enumerate(user_ids)}
        self.item_pos = {i: k for k, i in enumerate(item_ids)}
        self.matrix = np.zeros((len(user_ids), len(item_ids)), dtype=np.int32)
        for u, items in rows.items():
            cols = [self.item_pos[i] for i in items]
            self.matrix[self.user_pos[u], cols] = 1


def _universe(split: Split, items: Iterable[int] | None) -> list[int]:
    seen = {i for h in split.train.values() for i in h.items}
    if items is not None:
        seen |= set(items)
    return sorted(seen)


@dataclass(frozen=True)
class UserVectorIndex:
    """user_id -> multi-hot vector over the item dimension."""

    item_ids: tuple[int, ...]
    vectors: Mapping[int, SparseVector]
    _inc: _Incidence = field(repr=False, compare=False, default=None)

    def vector(self, user_id: int) -> SparseVector:
        return self.vectors[user_id]


@dataclass(frozen=True)
class ItemVectorIndex:
    """item_id -> multi-hot vector over the user dimension."""

    user_ids: tuple[int, ...]
    vectors: Mapping[int, SparseVector]
    _inc: _Incidence = field(repr=False, compare=False, default=None)

    def vector(self, item_id: int) -> SparseVector:
        return self.vectors[item_id]


def _incidence(split: Split, items: Iterable[int] | None) -> _Incidence:
    users = sorted(split.train)
    return _Incidence(users, _universe(split, items), {u: split.train[u].items for u in users})


def build_user_vectors(split: Split, items: Iterable[int] | None = None) -> UserVectorIndex:
    """Multi-hot user vectors from the train split.

    ``items`` widens the item dimension (e.g. to the whole catalog); items
    never seen in training get all-zero vectors.
    """
    inc = _incidence(split, items)
    dim = len(inc.item_ids)
    vectors = {
        int(u): SparseVector(dim, tuple(int(c) for c in np.flatnonzero(inc.matrix[k])))
        for k, u in enumerate(inc.user_ids)
    }
    return UserVectorIndex(tuple(int(i) for i in inc.item_ids), vectors, inc)


def build_item_vectors(split: Split, items: Iterable[int] | None = None) -> ItemVectorIndex:
    inc = _incidence(split, items)
    dim = len(inc.user_ids)
    vectors = {
        int(i): SparseVector(dim, tuple(int(r) for r in np.flatnonzero(inc.matrix[:, k])))
        for k, i in enumerate(inc.item_ids)
    }
    return ItemVectorIndex(tuple(int(u) for u in inc.user_ids), vectors, inc)


def _cosines(overlap: np.ndarray, size_a: int, sizes_b: np.ndarray) -> np.ndarray:
    denom = np.sqrt((size_a * sizes_b).astype(np.float64))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = overlap / denom
    out[denom == 0] = 0.0
    return out


def _order_key(overlap: np.ndarray, sizes_b: np.ndarray) -> np.ndarray:
    # overlap**2 / |b| orders neighbours exactly like the cosine (the query size
    # is constant) and, being one correctly rounded division of integers,
    # keeps mathematically equal similarities bit-equal.
    ov = overlap.astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        key = ov * ov / sizes_b
    return np.where(np.broadcast_to(sizes_b, key.shape) == 0, 0.0, key)


def _rank_pool(
    counts: Mapping[int, int], masses: Mapping[int, list[float]], s: int
) -> tuple[tuple[int, ...], tuple[tuple[int, float], ...], bool]:
    scored = [(counts[i], math.fsum(masses[i]), i) for i in counts]
    scored.sort(key=lambda t: (-t[0], -t[1], t[2]))
    top = scored[:s]
    return tuple(i for _, _, i in top), tuple((c, m) for c, m, _ in top), len(scored) < s


def user_filter_candidates(target: int, index: UserVectorIndex, params: FilterParams) -> CandidateSet:
    inc = index._inc
    if target not in inc.user_pos:
        raise KeyError(f"user {target} not in index")
    t = inc.user_pos[target]
    X = inc.matrix
    sizes = X.sum(axis=1)
    overlap = X @ X[t]
    cos = _cosines(overlap, int(sizes[t]), sizes)
    key = _order_key(overlap, sizes)
    if sizes[t] == 0:
        key[:] = 0.0
    key[t] = -np.inf
    # stable sort on -key keeps ascending user id among ties
    order = np.argsort(-key, kind="stable")
    neighbours = [k for k in order if k != t][: params.m]

    seen = X[t].astype(bool)
    counts: dict[int, int] = {}
    masses: dict[int, list[float]] = {}
    for k in neighbours:
        for col in np.flatnonzero(X[k] & ~seen):
            item = int(inc.item_ids[col])
            counts[item] = counts.get(item, 0) + 1
            masses.setdefault(item, []).append(float(cos[k]))
    items, scores, exhausted = _rank_pool(counts, masses, params.s)
    return CandidateSet(target, "UF", items, scores, params, exhausted)


class _ItemNeighbours:
    """Item-item cosine over the user dimension, with per-item neighbour order."""

    def __init__(self, inc: _Incidence):
        X = inc.matrix
        self.sizes = X.sum(axis=0)
        self.cooc = X.T @ X
        key = _order_key(self.cooc, self.sizes[None, :])
        self.order = np.argsort(-key, axis=1, kind="stable")

    def cosine_row(self, col: int) -> np.ndarray:
        return _cosines(self.cooc[col], int(self.sizes[col]), self.sizes)


def _neighbours_for(index: ItemVectorIndex) -> _ItemNeighbours:
    cached = getattr(index._inc, "_neighbours", None)
    if cached is None:
        cached = _ItemNeighbours(index._inc)
        index._inc._neighbours = cached
    return cached


def item_filter_candidates(
    target_history: Sequence[int], index: ItemVectorIndex, params: FilterParams, user_id: int = 0
) -> CandidateSet:
    """Items nominated by the top-n neighbours of each history item.

    ``target_history`` is the user's train sequence; items outside the index
    dimension are ignored.
    """
    inc = index._inc
    history = [inc.item_pos[i] for i in dict.fromkeys(target_history) if i in inc.item_pos]
    if not history:
        raise ValueError("target history is empty")
    nb = _neighbours_for(index)
    excluded = np.zeros(len(inc.item_ids), dtype=bool)
    excluded[history] = True

    rows = nb.order[history]
    allowed = ~excluded[rows]
    picked = allowed & (np.cumsum(allowed, axis=1) <= params.n)

    counts: dict[int, int] = {}
    masses: dict[int, list[float]] = {}
    for r, h in enumerate(history):
        cols = rows[r, picked[r]]
        cos = nb.cosine_row(h)[cols]
        for col, c in zip(cols, cos):
            item = int(inc.item_ids[col])
            counts[item] = counts.get(item, 0) + 1
            masses.setdefault(item, []).append(float(c))
    items, scores, exhausted = _rank_pool(counts, masses, params.s)
    return CandidateSet(user_id, "IF", items, scores, params, exhausted)


class UserFilter(BaseEstimator):
    """Candidate generator: popular items among the ``m`` most similar users.

    Parameters
    ----------
    m : int
        Number of similar users.
    s : int
        Candidate set size.
    """

    def __init__(self, m: int = 10, s: int = 19):
        self.m = m
        self.s = s

    def fit(self, split: Split, y=None, items: Iterable[int] | None = None):
        self.params_ = FilterParams(m=self.m, s=self.s)
        self.index_ = build_user_vectors(split, items)
        return self

    def predict(self, users: Iterable[int]) -> list[CandidateSet]:
        check_is_fitted(self, "index_")
        return [user_filter_candidates(u, self.index_, self.params_) for u in users]


class ItemFilter(BaseEstimator):
    """Candidate generator: items most often among the ``n`` nearest
    neighbours of the user's history items.
    """

    def __init__(self, n: int = 10, s: int = 19):
        self.n = n
        self.s = s

    def fit(self, split: Split, y=None, items: Iterable[int] | None = None):
        self.params_ = FilterParams(n=self.n, s=self.s)
        self.index_ = build_item_vectors(split, items)
        self.split_ = split
        _neighbours_for(self.index_)
        return self

    def predict(self, users: Iterable[int]) -> list[CandidateSet]:
        check_is_fitted(self, "index_")
        return [
            item_filter_candidates(self.split_.train[u].items, self.index_, self.params_, user_id=u)
            for u in users
        ]


def make_filter(method: str, m: int = 10, n: int = 10, s: int = 19) -> UserFilter | ItemFilter:
    method = method.upper()
    if method == "UF":
        return UserFilter(m=m, s=s)
    if method == "IF":
        return ItemFilter(n=n, s=s)
    raise ValueError(f"unknown filter {method!r}; expected 'uf' or 'if'")


def write_candidates(path: str | Path, sets: Iterable[CandidateSet]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cs in sets:
            fh.write(json.dumps(cs.to_json(), sort_keys=True) + "\n")


def read_candidates(path: str | Path) -> dict[int, CandidateSet]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                cs = CandidateSet.from_json(json.loads(line))
                out[cs.user_id] = cs
    return out
