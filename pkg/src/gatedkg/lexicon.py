"""Condition vocabulary: surface forms, concepts, ages and negation scopes.

Used by the offline query parser and the offline condition evaluator to
recognize patient-context phrases without a model.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

# Generic population heads carry no condition meaning on their own.
POPULATION_WORDS = frozenset({
    "patient", "patients", "person", "persons", "people", "individual", "individuals",
    "subject", "subjects", "population", "populations", "those", "cases", "case",
})

# Concept pairs that cannot both hold for one patient.
EXCLUSIVE = (
    ("children", "adults"),
    ("children", "elderly"),
    ("males", "females"),
    ("males", "pregnancy"),
    ("males", "breastfeeding"),
)
# concept -> concepts it entails
IMPLIES = {
    "pregnancy": ("females",),
    "breastfeeding": ("females",),
    "elderly": ("adults",),
}
AGE_CONCEPTS = frozenset({"children", "adults", "elderly"})

_AGE_PATTERNS = (
    re.compile(r"\b(\d{1,3})[\s-]*(?:year|yr)s?[\s-]*old\b"),
    re.compile(r"\b(\d{1,3})\s*(?:years?|yrs?)\s+of\s+age\b"),
    re.compile(r"\baged?\s+(\d{1,3})\b"),
)
_MONTH_AGE = re.compile(r"\b\d{1,2}[\s-]*(?:month|week|day)s?[\s-]*old\b")

_THRESHOLD = re.compile(
    r"(<=|>=|≤|≥|<|>|less than|under|younger than|below|older than|over|above|at least|at most)"
    r"\s*(\d{1,3})"
)
_AGE_CONTEXT = re.compile(r"\b(?:years?|yrs?|aged?|old|children|child|adults?|infants?|boys?|girls?)\b")

NEGATION_CUES = re.compile(
    r"\b(?:no known|no history of|no|without|not|denies|free of|absence of|never)\s+"
)
_SCOPE_END = re.compile(r"[,.;:?!()]|\b(?:and|but|or|who|which|that|with)\b")


def stem(token: str) -> str:
    """Tiny plural folder: ``allergies`` -> ``allergy``, ``women`` unchanged."""
    if len(token) > 4 and token.endswith("ies"):
        return token[:-3] + "y"
    if len(token) > 3 and token.endswith("s") and not token.endswith("ss"):
        return token[:-1]
    return token


_TOKEN = re.compile(r"[a-z0-9]+(?:[-'][a-z0-9]+)*")


def tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.casefold())


@dataclass(frozen=True)
class Match:
    surface: str
    start: int
    end: int


class ConceptLexicon:
    def __init__(self, entries: dict[str, set[str]] | None = None) -> None:
        self._concepts: dict[str, frozenset[str]] = {}
        self._patterns: list[tuple[str, re.Pattern[str]]] = []
        for surface, concepts in (entries or {}).items():
            self.add(surface, *concepts)

    def add(self, surface: str, *concepts: str) -> None:
        surface = " ".join(surface.casefold().split())
        current = set(self._concepts.get(surface, ()))
        current.update(" ".join(c.casefold().split()) for c in concepts)
        if surface not in self._concepts:
            pattern = re.compile(r"(?<![\w-])" + re.escape(surface) + r"(?![\w-])")
            self._patterns.append((surface, pattern))
            self._patterns.sort(key=lambda p: (-len(p[0]), p[0]))
        self._concepts[surface] = frozenset(current)

    @classmethod
    def from_tsv(cls, path: str | Path) -> ConceptLexicon:
        lex = cls()
        with open(path, encoding="utf-8") as fh:
            lex._load_lines(fh)
        return lex

    def _load_lines(self, lines) -> None:
        for line in lines:
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            surface, _, concept = line.partition("\t")
            if not concept:
                raise ValueError(f"expected 'surface<TAB>concept', got {line!r}")
            self.add(surface, concept)

    @property
    def concept_names(self) -> set[str]:
        return {c for cs in self._concepts.values() for c in cs}

    def concepts_of(self, surface: str) -> frozenset[str]:
        return self._concepts.get(surface, frozenset())

    def find_all(self, text: str) -> list[Match]:
        """Every surface occurrence, nested ones included."""
        low = text.casefold()
        found = []
        for surface, pattern in self._patterns:
            for m in pattern.finditer(low):
                found.append(Match(surface, m.start(), m.end()))
        found.sort(key=lambda m: (m.start, -(m.end - m.start)))
        return found

    def find_maximal(self, text: str) -> list[Match]:
        """Longest non-overlapping surface occurrences, left to right."""
        out: list[Match] = []
        for m in sorted(self.find_all(text), key=lambda m: (-(m.end - m.start), m.start)):
            if all(m.end <= o.start or m.start >= o.end for o in out):
                out.append(m)
        return sorted(out, key=lambda m: m.start)

    def concepts_in(self, text: str, *, nested: bool = False) -> set[str]:
        matches = self.find_all(text) if nested else self.find_maximal(text)
        return {c for m in matches for c in self._concepts[m.surface]}


@lru_cache(maxsize=1)
def default_lexicon() -> ConceptLexicon:
    lex = ConceptLexicon()
    with resources.files("gatedkg.data").joinpath("condition_synonyms.tsv").open(encoding="utf-8") as fh:
        lex._load_lines(fh)
    return lex


def find_ages(text: str) -> list[int]:
    low = text.casefold()
    ages = [int(m.group(1)) for p in _AGE_PATTERNS for m in p.finditer(low)]
    if _MONTH_AGE.search(low):
        ages.append(0)
    return ages


def age_spans(text: str) -> list[tuple[int, int]]:
    low = text.casefold()
    spans = [m.span() for p in _AGE_PATTERNS for m in p.finditer(low)]
    spans.extend(m.span() for m in _MONTH_AGE.finditer(low))
    return sorted(spans)


def age_threshold(text: str) -> tuple[str, int] | None:
    """``"children < 3 years"`` -> ``("<", 3)``; None when not an age bound."""
    low = text.casefold()
    m = _THRESHOLD.search(low)
    if m is None or not _AGE_CONTEXT.search(low):
        return None
    op = {
        "<": "<", "less than": "<", "under": "<", "younger than": "<", "below": "<",
        ">": ">", "older than": ">", "over": ">", "above": ">",
        "<=": "<=", "≤": "<=", "at most": "<=",
        ">=": ">=", "≥": ">=", "at least": ">=",
    }[m.group(1)]
    return op, int(m.group(2))


def satisfies(age: int, bound: tuple[str, int]) -> bool:
    op, n = bound
    return {"<": age < n, ">": age > n, "<=": age <= n, ">=": age >= n}[op]


def age_concepts(age: int) -> dict[str, bool]:
    return {"children": age < 18, "adults": age >= 18, "elderly": age >= 65}


def negated_spans(text: str) -> list[tuple[int, int]]:
    """Character spans governed by a negation cue (``no known allergies``)."""
    low = text.casefold()
    spans = []
    for m in NEGATION_CUES.finditer(low):
        start = m.end()
        end_m = _SCOPE_END.search(low, start)
        end = end_m.start() if end_m else len(low)
        if low[start:end].strip():
            spans.append((start, end))
    return spans
