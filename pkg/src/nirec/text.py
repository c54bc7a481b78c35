"""Title normalization shared by the catalog index and answer extraction."""

from __future__ import annotations

import re
import unicodedata

_YEAR_SUFFIX = re.compile(r"\s*\(\s*\d{4}\s*\)\s*$")
# MovieLens moves leading articles to the end: "Rock, The", "Misérables, Les"
_ARTICLES = "the|a|an|les|la|le|l|il|das|der|die|el|los|las"
_ARTICLE_SUFFIX = re.compile(rf"^(?P<body>.+?),\s*(?P<article>{_ARTICLES})$", re.IGNORECASE)
_ALT_TITLE = re.compile(r"^(?P<main>.+?)\s*\((?P<alt>[^()]*[^\d()][^()]*)\)$")
_NON_WORD = re.compile(r"[^\w\s]|_")
_SPACES = re.compile(r"\s+")
_YEAR_ANYWHERE = re.compile(r"\((\d{4})\)")


def normalize_title(text: str) -> str:
    """Canonical matching form of a movie title.

    >>> normalize_title("Rock, The (1996)")
    'the rock'
    """
    text = _fold(text).strip().lower()
    text = _YEAR_SUFFIX.sub("", text)
    match = _ARTICLE_SUFFIX.match(text.strip())
    if match:
        text = f"{match['article']} {match['body']}"
    # apostrophes join words ("schindler's" -> "schindlers") instead of splitting them
    text = text.replace("'", "").replace("’", "")
    text = _NON_WORD.sub(" ", text)
    return _SPACES.sub(" ", text).strip()


def _fold(text: str) -> str:
    decomposed = unicodedata.normalize("NFKD", text)
    return "".join(c for c in decomposed if not unicodedata.combining(c))


def title_aliases(title: str) -> tuple[str, ...]:
    """Normalized forms a catalog title may be referred to by.

    "Seven (Se7en) (1995)" answers to "seven se7en", "seven" and "se7en".
    """
    full = normalize_title(title)
    stem = _YEAR_SUFFIX.sub("", title.strip())
    match = _ALT_TITLE.match(stem)
    if not match:
        return (full,)
    extra = [normalize_title(match["main"]), normalize_title(match["alt"])]
    return tuple(dict.fromkeys([full] + [a for a in extra if a]))


def title_tokens(text: str) -> frozenset[str]:
    return frozenset(normalize_title(text).split())


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def title_year(text: str) -> str | None:
    """Last parenthesized four-digit year in ``text``, if any."""
    years = _YEAR_ANYWHERE.findall(text)
    return years[-1] if years else None
