"""Turn free-text model answers into ranked catalog items."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dataset import Catalog
from .text import jaccard, normalize_title, title_aliases, title_year

__all__ = [
    "AnswerExtractor",
    "ExtractedRanking",
    "RawRecommendationLine",
    "normalize_title",
    "parse_lines",
    "resolve",
]

DEFAULT_THRESHOLD = 0.6

_ARROW = re.compile(r"<-{1,2}\s*(?P<cand>.*?)\s*(?:-{1,2}>|$)")
_LEAD = re.compile(r"^\s*(?:\(?\d+\s*[.):]\)?|[-*•]|#\d+)\s*")
_NUMBERED = re.compile(r"^\s*(?:\(?\d+[.)]|#\d+\.?)\s+(?P<title>\S.*)$")
_DESCRIPTION = re.compile(r"\s+[-–—]\s+.*$")
_STRIP = " \t\"'“”‘’*_`[]"
# "Titanic, 1997" / "Titanic [1997]" / "Titanic (1997 film)"
_LOOSE_YEAR = re.compile(r"(?<=\S)[\s,–-]*[\[(]?\b(?:18|19|20)\d{2}(?: film)?[\])]?$")


@dataclass(frozen=True)
class RawRecommendationLine:
    position: int
    watched_part: str
    candidate_part: str


@dataclass(frozen=True)
class ExtractedRanking:
    user_id: int
    items: tuple[int, ...]
    unresolved: tuple[str, ...] = ()


def _clean(text: str) -> str:
    text = text.strip(_STRIP)
    text = text.rstrip(".,;:!").strip(_STRIP)
    return text


def parse_lines(answer_text: str) -> list[RawRecommendationLine]:
    """Recommendation lines in text order.

    Lines carrying ``<- title ->`` are used when any exist; otherwise
    numbered list items (``1. Title``) are taken as titles.
    """
    lines = answer_text.splitlines()
    out: list[RawRecommendationLine] = []
    for line in lines:
        match = _ARROW.search(line)
        if not match:
            continue
        cand = _clean(match["cand"])
        if not cand:
            continue
        watched = _LEAD.sub("", line[: match.start()]).strip().rstrip(":-–").strip(_STRIP)
        out.append(RawRecommendationLine(len(out) + 1, watched, cand))
    if out:
        return out
    for line in lines:
        match = _NUMBERED.match(line)
        if not match:
            continue
        title = _DESCRIPTION.sub("", match["title"].replace("**", ""))
        title = _clean(title)
        if title:
            out.append(RawRecommendationLine(len(out) + 1, "", title))
    return out


def _variants(text: str) -> list[str]:
    """The answer string, then progressively looser readings of it."""
    out = [text]
    no_year = _LOOSE_YEAR.sub("", text).strip()
    if no_year:
        out.append(no_year)
    for sep in (": ", " - ", " ("):
        head = text.split(sep, 1)[0].strip()
        if head:
            out.append(head)
    return list(dict.fromkeys(out))


class _Pool:
    def __init__(self, item_ids: Sequence[int], catalog: Catalog):
        self.item_ids = list(item_ids)
        self.aliases = {i: title_aliases(catalog.title(i)) for i in self.item_ids}
        self.tokens = {i: [frozenset(a.split()) for a in self.aliases[i]] for i in self.item_ids}
        self.year = {i: title_year(catalog.title(i)) for i in self.item_ids}

    def _exact(self, norm: str, year: str | None) -> int | None:
        hits = [i for i in self.item_ids if norm in self.aliases[i]]
        if len(hits) > 1 and year:
            hits = [i for i in hits if self.year[i] == year] or hits
        return hits[0] if hits else None

    def _fuzzy(self, norm: str, threshold: float) -> int | None:
        tokens = frozenset(norm.split())
        scores = [(max(jaccard(tokens, t) for t in self.tokens[i]), i) for i in self.item_ids]
        best = max((sc for sc, _ in scores), default=0.0)
        if best < threshold:
            return None
        winners = [i for sc, i in scores if sc == best]
        return winners[0] if len(winners) == 1 else None

    def match(self, text: str, threshold: float) -> int | None:
        year = title_year(text)
        norms = [n for n in (normalize_title(v) for v in _variants(text)) if n]
        for norm in norms:
            item = self._exact(norm, year)
            if item is not None:
                return item
        for norm in norms:
            item = self._fuzzy(norm, threshold)
            if item is not None:
                return item
        return None


def _catalog_pool(catalog: Catalog) -> _Pool:
    pool = getattr(catalog, "_resolution_pool", None)
    if pool is None or len(pool.item_ids) != len(catalog):
        pool = _Pool(sorted(catalog.entries), catalog)
        catalog._resolution_pool = pool
    return pool


def resolve(
    raw_lines: Sequence[RawRecommendationLine],
    candidates: Sequence[int] | None,
    catalog: Catalog,
    k: int = 10,
    threshold: float = DEFAULT_THRESHOLD,
    user_id: int = 0,
) -> ExtractedRanking:
    """Map parsed lines to item ids.

    ``candidates`` restricts matching to the candidate set; ``None`` matches
    against the whole catalog. A string resolves on an exact normalized
    title (or alternate title), else on the single best token-Jaccard score
    when it reaches ``threshold``; looser readings of the string (trailing
    year forms, text before ": ") are tried only after the literal one.
    Repeats keep their first position; at most ``k`` items.
    """
    if candidates is not None and not candidates:
        raise ValueError("candidate set is empty")
    pool = _Pool(candidates, catalog) if candidates is not None else _catalog_pool(catalog)
    items: list[int] = []
    unresolved: list[str] = []
    for line in raw_lines:
        if len(items) >= k:
            break
        item = pool.match(line.candidate_part, threshold)
        if item is None:
            unresolved.append(line.candidate_part)
        elif item not in items:
            items.append(item)
    return ExtractedRanking(user_id, tuple(items), tuple(unresolved))


class AnswerExtractor(BaseEstimator):
    """Parse and resolve model answers against a fitted catalog."""

    def __init__(self, k: int = 10, threshold: float = DEFAULT_THRESHOLD):
        self.k = k
        self.threshold = threshold

    def fit(self, catalog: Catalog, y=None):
        self.catalog_ = catalog
        return self

    def extract(self, answer_text: str, candidates: Sequence[int] | None = None, user_id: int = 0) -> ExtractedRanking:
        check_is_fitted(self, "catalog_")
        return resolve(parse_lines(answer_text), candidates, self.catalog_, self.k, self.threshold, user_id)
