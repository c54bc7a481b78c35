import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import A, B, C, D, E, F, TOY_TRAIN, split_from_train
from nirec.candidates import (
    CandidateSet,
    FilterParams,
    ItemFilter,
    SparseVector,
    UserFilter,
    build_item_vectors,
    build_user_vectors,
    cosine,
    item_filter_candidates,
    read_candidates,
    user_filter_candidates,
    write_candidates,
)
from oracles import brute_item_filter, brute_user_filter, dense_cosine, random_instance


def sv(dim, *idx):
    return SparseVector(dim, tuple(idx))


def test_cosine_examples():
    assert cosine(sv(5, 1, 2, 3), sv(5, 1, 2, 3)) == 1.0
    assert cosine(sv(5, 1, 2), sv(5, 3, 4)) == 0.0
    got = cosine(sv(6, 0, 1, 2), sv(6, 0, 1, 3))
    assert got == pytest.approx(2 / 3)
    assert got == pytest.approx(dense_cosine([1, 1, 1, 0, 0, 0], [1, 1, 0, 1, 0, 0]))


def test_cosine_empty_and_mismatch():
    assert cosine(sv(3), sv(3, 1)) == 0.0
    with pytest.raises(ValueError, match="dimension"):
        cosine(sv(3, 1), sv(4, 1))


def test_sparse_vector_validation():
    with pytest.raises(ValueError):
        SparseVector(3, (2, 1))
    with pytest.raises(ValueError):
        SparseVector(3, (3,))


@given(st.sets(st.integers(0, 9), max_size=10), st.sets(st.integers(0, 9), max_size=10))
def test_cosine_symmetry(a, b):
    va, vb = SparseVector.from_indices(10, a), SparseVector.from_indices(10, b)
    assert cosine(va, vb) == cosine(vb, va)
    if a:
        assert cosine(va, va) == pytest.approx(1.0)
    assert 0.0 <= cosine(va, vb) <= 1.0 + 1e-12


def test_vectors_are_transposes(toy_split):
    uv = build_user_vectors(toy_split)
    iv = build_item_vectors(toy_split)
    assert uv.item_ids == (A, B, C, D, E, F)
    assert [uv.item_ids[k] for k in uv.vector(1).active] == [A, B, C]
    users_of_a = [iv.user_ids[k] for k in iv.vector(A).active]
    assert users_of_a == [u for u, h in TOY_TRAIN.items() if A in h]
    incidence = {(u, uv.item_ids[k]) for u, v in uv.vectors.items() for k in v.active}
    back = {(iv.user_ids[k], i) for i, v in iv.vectors.items() for k in v.active}
    assert incidence == back == {(u, i) for u, h in TOY_TRAIN.items() for i in h}


def test_user_filter_toy(toy_split):
    cs = user_filter_candidates(1, build_user_vectors(toy_split), FilterParams(m=2, s=2))
    assert cs.items == (D, E)
    assert [c for c, _ in cs.scores] == [1, 1]
    assert cs.scores[0][1] == pytest.approx(2 / 3)
    assert cs.scores[1][1] == pytest.approx(1 / 6**0.5)
    assert not cs.exhausted


def test_item_filter_toy(toy_split):
    # frozen from tests/oracles.brute_item_filter
    cs = item_filter_candidates(toy_split.train[1].items, build_item_vectors(toy_split), FilterParams(n=2, s=2), 1)
    assert cs.items == (D, E)
    assert [c for c, _ in cs.scores] == [3, 2]
    assert cs.scores[0][1] == pytest.approx(1.3164965809277263)
    assert cs.scores[1][1] == pytest.approx(0.7071067811865475)


def test_item_filter_exhausted(toy_split):
    cs = item_filter_candidates(toy_split.train[1].items, build_item_vectors(toy_split), FilterParams(n=2, s=5), 1)
    assert cs.items == (D, E, F)
    assert cs.exhausted


def test_user_filter_exhausted_when_everything_watched():
    split = split_from_train({1: [1, 2, 3], 2: [1, 2], 3: [3]})
    cs = user_filter_candidates(1, build_user_vectors(split), FilterParams(m=2, s=3))
    assert cs.items == ()
    assert cs.exhausted


def test_user_filter_single_neighbour():
    split = split_from_train({1: [1, 2], 2: [1, 2, 5, 3], 3: [4]})
    cs = user_filter_candidates(1, build_user_vectors(split), FilterParams(m=1, s=10))
    assert cs.items == (3, 5)
    assert all(c == 1 for c, _ in cs.scores)


def test_user_filter_unknown_target(toy_split):
    with pytest.raises(KeyError):
        user_filter_candidates(42, build_user_vectors(toy_split), FilterParams())


def test_item_filter_single_history_item():
    split = split_from_train({1: [1], 2: [1, 2, 3], 3: [1, 3], 4: [4]})
    cs = item_filter_candidates([1], build_item_vectors(split), FilterParams(n=2, s=1), 1)
    # neighbours of 1: 3 (2/sqrt(6)), 2 (1/sqrt(3)); truncated to s=1
    assert cs.items == (3,)


def test_item_filter_all_zero_falls_back_to_id_order():
    split = split_from_train({1: [1], 2: [4], 3: [3], 4: [2]})
    cs = item_filter_candidates([1], build_item_vectors(split), FilterParams(n=3, s=3), 1)
    assert cs.items == (2, 3, 4)


def test_item_filter_empty_history(toy_split):
    with pytest.raises(ValueError):
        item_filter_candidates([], build_item_vectors(toy_split), FilterParams())


def test_filter_params_validation():
    with pytest.raises(ValueError):
        FilterParams(m=0)


@pytest.mark.parametrize("seed", range(60))
def test_filters_match_oracle(seed):
    rng = random.Random(seed)
    train, n_items = random_instance(rng)
    items = list(range(1, n_items + 1))
    split = split_from_train(train, holdout=n_items + 1)
    uv = build_user_vectors(split, items)
    iv = build_item_vectors(split, items)
    for target in train:
        m, n, s = rng.randint(1, 4), rng.randint(1, 4), rng.randint(1, 6)
        expected = brute_user_filter(train, items, target, m, s)
        got = user_filter_candidates(target, uv, FilterParams(m=m, s=s))
        assert (list(got.items), list(got.scores), got.exhausted) == expected
        expected = brute_item_filter(train, items, target, n, s)
        got = item_filter_candidates(train[target], iv, FilterParams(n=n, s=s), target)
        assert (list(got.items), list(got.scores), got.exhausted) == expected


def test_exclusion_and_determinism():
    rng = random.Random(3)
    train, n_items = random_instance(rng)
    split = split_from_train(train, holdout=n_items + 1)
    uf, itf = UserFilter(m=3, s=4).fit(split), ItemFilter(n=3, s=4).fit(split)
    users = sorted(train)
    first = uf.predict(users) + itf.predict(users)
    again = UserFilter(m=3, s=4).fit(split).predict(users[::-1])[::-1] + itf.predict(users)
    assert first == again
    for cs in first:
        assert not set(cs.items) & set(train[cs.user_id])
        assert len(set(cs.items)) == len(cs.items)


def test_estimator_params():
    uf = UserFilter(m=5, s=7)
    assert uf.get_params() == {"m": 5, "s": 7}
    assert ItemFilter().set_params(n=3).n == 3


def test_predict_before_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        UserFilter().predict([1])


def test_candidates_jsonl_round_trip(tmp_path, toy_split):
    sets = UserFilter(m=2, s=3).fit(toy_split).predict([1, 2, 3])
    path = tmp_path / "cands.jsonl"
    write_candidates(path, sets)
    back = read_candidates(path)
    assert [back[u] for u in (1, 2, 3)] == sets
    line = path.read_text().splitlines()[0]
    assert set(__import__("json").loads(line)) == {"user_id", "method", "params", "items", "scores", "exhausted"}


@pytest.mark.movielens
def test_movielens_candidates_exclude_train(movielens):
    split = movielens.split
    users = list(split.eligible_users[:25])
    items = list(movielens.catalog.entries)
    for est in (UserFilter(), ItemFilter()):
        for cs in est.fit(split, items=items).predict(users):
            assert len(cs) == 19
            assert not set(cs.items) & set(split.train[cs.user_id].items)
