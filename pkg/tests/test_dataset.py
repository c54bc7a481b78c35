import pytest
from hypothesis import given, strategies as st

from nirec.dataset import (
    DataFormatError,
    InteractionEvent,
    UserHistory,
    build_histories,
    parse_catalog,
    parse_interactions,
    split_leave_one_out,
)


def test_parse_interactions_documented_line():
    assert parse_interactions("196\t242\t3\t881250949") == [InteractionEvent(196, 242, 3, 881250949)]


def test_parse_interactions_minimal_values():
    assert parse_interactions("1\t1\t5\t0\n") == [InteractionEvent(1, 1, 5, 0)]


def test_parse_interactions_short_line():
    with pytest.raises(DataFormatError, match="line 1: expected 4 fields, got 3"):
        parse_interactions("196\t242\t3")


def test_parse_interactions_reports_line_and_text():
    with pytest.raises(DataFormatError, match=r"line 2: .*'1\\tx\\t3\\t4'"):
        parse_interactions("1\t1\t3\t4\n1\tx\t3\t4\n")


@pytest.mark.parametrize("line", ["0\t1\t3\t4", "1\t1\t6\t4", "1\t1\t0\t4"])
def test_parse_interactions_invariants(line):
    with pytest.raises(DataFormatError, match="line 1"):
        parse_interactions(line)


def test_parse_interactions_empty():
    with pytest.raises(DataFormatError):
        parse_interactions("")


def test_parse_interactions_bytes_and_iterables_agree():
    text = "1\t2\t3\t4\n5\t6\t1\t8\n"
    assert parse_interactions(text.encode()) == parse_interactions(text) == parse_interactions(
        iter(text.splitlines(keepends=True))
    )


def test_parse_catalog():
    cat = parse_catalog("1|Toy Story (1995)|01-Jan-1995||http://x|0|0\n2|Rock, The (1996)|x\n")
    assert cat.entries == {1: "Toy Story (1995)", 2: "Rock, The (1996)"}
    assert cat.lookup("The Rock") == [2]
    assert set(cat.normalized_index) == {"toy story", "the rock"}


def test_parse_catalog_latin1():
    cat = parse_catalog("543|Mis\xe9rables, Les (1995)|x\n".encode("latin-1"))
    assert cat.title(543) == "Misérables, Les (1995)"


def test_parse_catalog_duplicate():
    with pytest.raises(DataFormatError, match="duplicate item id 7"):
        parse_catalog("7|A|\n7|B|\n")


def test_parse_catalog_non_integer_id():
    with pytest.raises(DataFormatError, match="non-integer"):
        parse_catalog("x|A|\n")


def test_build_histories_sorts_by_timestamp():
    h = build_histories([InteractionEvent(1, 2, 3, 2), InteractionEvent(1, 1, 3, 1)])
    assert h[1].items == (1, 2)


def test_build_histories_ties_keep_input_order():
    h = build_histories([InteractionEvent(1, 1, 3, 1), InteractionEvent(1, 2, 3, 1)])
    assert h[1].items == (1, 2)
    h = build_histories([InteractionEvent(1, 2, 3, 1), InteractionEvent(1, 1, 3, 1)])
    assert h[1].items == (2, 1)


def test_split_leave_one_out():
    hist = {1: UserHistory(1, (1, 2, 3)), 2: UserHistory(2, (1,))}
    split = split_leave_one_out(hist, min_history=2)
    assert split.train[1].items == (1, 2)
    assert split.ground_truth[1] == 3
    assert split.eligible_users == (1,)
    assert 2 not in split.train


def test_split_rejects_small_min_history():
    with pytest.raises(ValueError):
        split_leave_one_out({}, min_history=1)


def test_split_empty_warns(caplog):
    split = split_leave_one_out({1: UserHistory(1, (1,))})
    assert split.eligible_users == ()
    assert "empty" in caplog.text


events_st = st.lists(
    st.tuples(st.integers(1, 6), st.integers(1, 12), st.integers(1, 5), st.integers(0, 5)),
    min_size=1,
    max_size=60,
)


@given(events_st, st.integers(2, 4))
def test_split_round_trip(rows, min_history):
    events = [InteractionEvent(*r) for r in rows]
    hist = build_histories(events)
    split = split_leave_one_out(hist, min_history)
    for u in split.eligible_users:
        assert split.train[u].items + (split.ground_truth[u],) == hist[u].items
        assert len(split.train[u]) >= 1
    assert set(split.eligible_users) == {u for u, h in hist.items() if len(h) >= min_history}


@given(events_st)
def test_histories_sorted_and_stable(rows):
    events = [InteractionEvent(*r) for r in rows]
    hist = build_histories(events)
    for u, h in hist.items():
        mine = [e for e in events if e.user_id == u]
        expected = [e.item_id for t in sorted({e.timestamp for e in mine}) for e in mine if e.timestamp == t]
        assert list(h.items) == expected


@given(events_st)
def test_parse_is_pure(rows):
    text = "\n".join("\t".join(map(str, r)) for r in rows)
    assert parse_interactions(text) == parse_interactions(text)


@pytest.mark.movielens
def test_movielens_counts(movielens):
    assert len(movielens.events) == 100_000
    assert len(movielens.histories) == 943
    assert len(movielens.catalog) == 1682
    assert len(movielens.split.eligible_users) == 943
    assert all(movielens.split.ground_truth[u] in movielens.catalog for u in movielens.split.eligible_users)
