"""Tiered name resolution used by read tools and the perception check."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .store import normalize_name

DEFAULT_JACCARD = 0.5


class MatchTier(str, Enum):
    EXACT = "EXACT"
    SUBSTRING = "SUBSTRING"
    TOKEN_OVERLAP = "TOKEN_OVERLAP"
    NONE = "NONE"


@dataclass(frozen=True)
class MatchSet:
    query: str
    matches: tuple[str, ...] = field(default_factory=tuple)
    tier: MatchTier = MatchTier.NONE

    def __bool__(self) -> bool:
        return bool(self.matches)


def jaccard(a: str, b: str) -> float:
    ta, tb = set(a.split()), set(b.split())
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def fuzzy_match(
    query: str, candidates: Iterable[str], threshold: float = DEFAULT_JACCARD
) -> MatchSet:
    """Return every candidate matched at the first non-empty tier.

    Tiers: exact equality, then substring containment in either direction,
    then whitespace-token Jaccard at or above ``threshold``.  Candidate order
    is preserved in the result.
    """
    q = normalize_name(query)
    pool = [normalize_name(c) for c in candidates]
    if not q:
        return MatchSet(query=query)
    exact = [c for c in pool if c == q]
    if exact:
        return MatchSet(query, tuple(dict.fromkeys(exact)), MatchTier.EXACT)
    sub = [c for c in pool if c and (q in c or c in q)]
    if sub:
        return MatchSet(query, tuple(dict.fromkeys(sub)), MatchTier.SUBSTRING)
    tok = [c for c in pool if jaccard(q, c) >= threshold]
    if tok:
        return MatchSet(query, tuple(dict.fromkeys(tok)), MatchTier.TOKEN_OVERLAP)
    return MatchSet(query=query)


def fuzzy_equal(query: str, value: str, threshold: float = DEFAULT_JACCARD) -> bool:
    return bool(fuzzy_match(query, [value], threshold))
