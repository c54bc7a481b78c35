"""MovieLens-100K ingestion and the leave-one-out split.

Raw files are ``u.data`` (``user \\t item \\t rating \\t timestamp``) and
``u.item`` (``item_id|title|release_date|...``, Latin-1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .text import normalize_title

logger = logging.getLogger(__name__)

ENCODING = "latin-1"


class DataFormatError(ValueError):
    """Raised when a raw data file does not follow the expected format."""


@dataclass(frozen=True)
class InteractionEvent:
    user_id: int
    item_id: int
    rating: int
    timestamp: int

    def __post_init__(self):
        if self.user_id < 1 or self.item_id < 1:
            raise DataFormatError(f"ids must be >= 1, got user={self.user_id} item={self.item_id}")
        if not 1 <= self.rating <= 5:
            raise DataFormatError(f"rating must be in 1..5, got {self.rating}")


@dataclass(frozen=True)
class UserHistory:
    user_id: int
    items: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class Catalog:
    """Item id to title registry with a normalized-title lookup."""

    entries: dict[int, str]
    normalized_index: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.normalized_index:
            index: dict[str, list[int]] = {}
            for item_id in sorted(self.entries):
                index.setdefault(normalize_title(self.entries[item_id]), []).append(item_id)
            self.normalized_index = index

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, item_id: int) -> bool:
        return item_id in self.entries

    def title(self, item_id: int) -> str:
        return self.entries[item_id]

    def titles(self, item_ids: Iterable[int]) -> list[str]:
        return [self.entries[i] for i in item_ids]

    def lookup(self, text: str) -> list[int]:
        """Item ids whose normalized title equals the normalized ``text``."""
        return list(self.normalized_index.get(normalize_title(text), []))


@dataclass(frozen=True)
class Split:
    train: Mapping[int, UserHistory]
    ground_truth: Mapping[int, int]
    eligible_users: tuple[int, ...]

    def train_items(self, user_id: int) -> tuple[int, ...]:
        return self.train[user_id].items


def _lines(stream: str | bytes | Iterable[str]) -> list[str]:
    if isinstance(stream, bytes):
        stream = stream.decode(ENCODING)
    if isinstance(stream, str):
        return stream.splitlines()
    return [line.rstrip("\r\n") for line in stream]


def parse_interactions(stream: str | bytes | Iterable[str]) -> list[InteractionEvent]:
    """Parse ``u.data``-style lines into events, preserving order.

    Blank lines are skipped; anything else that is not four integer fields
    raises :class:`DataFormatError` naming the 1-based line number.
    """
    events = []
    for lineno, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise DataFormatError(f"line {lineno}: expected 4 fields, got {len(fields)}")
        try:
            user, item, rating, ts = (int(f) for f in fields)
        except ValueError:
            raise DataFormatError(f"line {lineno}: non-integer field in {line!r}") from None
        try:
            events.append(InteractionEvent(user, item, rating, ts))
        except DataFormatError as exc:
            raise DataFormatError(f"line {lineno}: {exc} in {line!r}") from None
    if not events:
        raise DataFormatError("no interactions in input")
    return events


def parse_catalog(stream: str | bytes | Iterable[str]) -> Catalog:
    entries: dict[int, str] = {}
    for lineno, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        fields = line.split("|")
        if len(fields) < 2:
            raise DataFormatError(f"line {lineno}: expected 'item_id|title|...', got {line!r}")
        try:
            item_id = int(fields[0])
        except ValueError:
            raise DataFormatError(f"line {lineno}: non-integer item id {fields[0]!r}") from None
        if item_id in entries:
            raise DataFormatError(f"duplicate item id {item_id}")
        entries[item_id] = fields[1]
    if not entries:
        raise DataFormatError("no catalog entries in input")
    return Catalog(entries)


def build_histories(events: Iterable[InteractionEvent]) -> dict[int, UserHistory]:
    """Group events per user, ordered by timestamp with ties in input order."""
    grouped: dict[int, list[InteractionEvent]] = {}
    for ev in events:
        grouped.setdefault(ev.user_id, []).append(ev)
    # list.sort is stable, so equal timestamps keep input order
    return {
        user: UserHistory(user, tuple(ev.item_id for ev in sorted(evs, key=lambda e: e.timestamp)))
        for user, evs in sorted(grouped.items())
    }


def split_leave_one_out(histories: Mapping[int, UserHistory], min_history: int = 2) -> Split:
    if min_history < 2:
        raise ValueError(f"min_history must be >= 2, got {min_history}")
    train, truth, eligible = {}, {}, []
    for user in sorted(histories):
        items = histories[user].items
        if len(items) < min_history:
            continue
        train[user] = UserHistory(user, items[:-1])
        truth[user] = items[-1]
        eligible.append(user)
    if not eligible:
        logger.warning("no user has at least %d interactions; split is empty", min_history)
    return Split(train=train, ground_truth=truth, eligible_users=tuple(eligible))


@dataclass(frozen=True)
class Dataset:
    events: list[InteractionEvent]
    catalog: Catalog
    histories: dict[int, UserHistory]
    split: Split


def load_movielens(data_dir: str | Path, min_history: int = 2) -> Dataset:
    data_dir = Path(data_dir)
    for name in ("u.data", "u.item"):
        if not (data_dir / name).is_file():
            raise FileNotFoundError(f"{data_dir / name} not found (expected a MovieLens 100K directory)")
    events = parse_interactions((data_dir / "u.data").read_bytes())
    catalog = parse_catalog((data_dir / "u.item").read_bytes())
    histories = build_histories(events)
    split = split_leave_one_out(histories, min_history)
    unknown = {i for i in split.ground_truth.values() if i not in catalog}
    if unknown:
        raise DataFormatError(f"ground-truth items missing from catalog: {sorted(unknown)[:5]}")
    logger.info(
        "loaded %d events, %d users, %d items", len(events), len(histories), len(catalog)
    )
    return Dataset(events, catalog, histories, split)
