"""Batched condition evaluation and the edge gate.

All conditions of a graph are judged against the query in one evaluator
call, producing a verdict table. Traversal then consults the table: an
edge is open unless one of its conditions is judged False.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import threading
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Protocol, Sequence

from .errors import ProviderError, SchemaError
from .kg import ConditionLabel, EdgeRecord
from .lexicon import (EXCLUSIVE, IMPLIES, POPULATION_WORDS, ConceptLexicon, age_concepts, age_threshold,
                      default_lexicon, find_ages, negated_spans, satisfies, stem, tokens)
from .prompts import CONDITION_EVAL_SYSTEM, CONDITION_EVAL_USER, render
from .query import STOPWORDS, ParsedQuery

log = logging.getLogger(__name__)


class Verdict(enum.Enum):
    TRUE = "true"
    FALSE = "false"
    NULL = "null"

    @classmethod
    def from_bool(cls, value: bool | None) -> Verdict:
        if value is None:
            return cls.NULL
        return cls.TRUE if value else cls.FALSE

    def invert(self) -> Verdict:
        return {Verdict.TRUE: Verdict.FALSE, Verdict.FALSE: Verdict.TRUE}.get(self, Verdict.NULL)


@dataclass(frozen=True)
class ConditionVerdictTable:
    """Condition -> verdict lookup. Unknown conditions read as NULL."""

    entries: Mapping[ConditionLabel, Verdict] = field(default_factory=dict)
    query_fingerprint: str = ""
    degraded: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", MappingProxyType(dict(self.entries)))

    def lookup(self, label: ConditionLabel) -> Verdict:
        return self.entries.get(label, Verdict.NULL)

    __getitem__ = lookup

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, label: object) -> bool:
        return label in self.entries

    def to_json(self) -> dict[str, str]:
        return {label.serialize(): self.entries[label].value for label in sorted(self.entries)}

    @classmethod
    def all_null(cls, conditions: Iterable[ConditionLabel], query_fingerprint: str = "") -> ConditionVerdictTable:
        """The gating-off table: every edge stays traversable."""
        return cls({c: Verdict.NULL for c in conditions}, query_fingerprint)


def gate(edge: EdgeRecord, table: ConditionVerdictTable) -> bool:
    """True unless some condition of ``edge`` is judged False."""
    lookup = table.lookup
    for c in edge.conditions:
        if lookup(c) is Verdict.FALSE:
            return False
    return True


# -- offline evaluator ------------------------------------------------------------

class _QueryState:
    """Concept truth values implied by one query."""

    def __init__(self, query: ParsedQuery, lexicon: ConceptLexicon) -> None:
        self.lexicon = lexicon
        text = query.raw.casefold()
        self.ages = find_ages(text)
        self.states: dict[str, bool] = {}
        spans = negated_spans(text)

        def concepts(t: str) -> set[str]:
            return lexicon.concepts_in(t, nested=True)

        for label in query.excluded_conditions:
            for c in concepts(label.text):
                self._set(c, label.negated)
        for label in query.required_conditions:
            for c in concepts(label.text):
                self._set(c, not label.negated)
        for s, e in spans:
            for c in concepts(text[s:e]):
                self._set(c, False)
        for age in self.ages:
            for c, holds in age_concepts(age).items():
                self._set(c, holds)
        positive = list(text)
        for s, e in spans:
            positive[s:e] = " " * (e - s)
        self.positive_text = "".join(positive)
        for c in lexicon.concepts_in(self.positive_text):
            self._set(c, True)
        for c, implied in IMPLIES.items():
            if self.states.get(c):
                for i in implied:
                    self._set(i, True)
        for a, b in EXCLUSIVE:
            if self.states.get(a):
                self._set(b, False)
            if self.states.get(b):
                self._set(a, False)
        self.positive_stems = {stem(t) for t in tokens(self.positive_text)}
        self.negated_stems = {stem(t) for s, e in spans for t in tokens(text[s:e])}

    def _set(self, concept: str, value: bool) -> None:
        self.states.setdefault(concept, value)

    def judge(self, text: str) -> bool | None:
        """Truth of the positive condition ``text``; None when the query is silent."""
        bound = age_threshold(text)
        if bound is not None and self.ages:
            return all(satisfies(a, bound) for a in self.ages)
        nested = self.lexicon.concepts_in(text, nested=True)
        if any(self.states.get(c) is False for c in nested):
            return False
        if any(self.states.get(c) is True for c in self.lexicon.concepts_in(text)):
            return True
        content = {stem(t) for t in tokens(text) if t not in STOPWORDS and t not in POPULATION_WORDS}
        if content and content <= self.positive_stems:
            return True
        if content and content <= self.negated_stems:
            return False
        return None


def offline_evaluate(query: ParsedQuery, condition: ConditionLabel, lexicon: ConceptLexicon | None = None) -> Verdict:
    """Rule verdict for one condition; negated labels invert the positive verdict."""
    state = _QueryState(query, lexicon or default_lexicon())
    verdict = Verdict.from_bool(state.judge(condition.text))
    return verdict.invert() if condition.negated else verdict


class ConditionEvaluator(Protocol):
    def evaluate_batch(self, query: ParsedQuery, conditions: Sequence[ConditionLabel]) -> dict[ConditionLabel, Verdict]:
        """Judge every condition in one call."""
        ...


class OfflineConditionEvaluator:
    remote = False

    def __init__(self, lexicon: ConceptLexicon | None = None) -> None:
        self.lexicon = lexicon or default_lexicon()

    def evaluate_batch(self, query: ParsedQuery, conditions: Sequence[ConditionLabel]) -> dict[ConditionLabel, Verdict]:
        state = _QueryState(query, self.lexicon)
        out = {}
        for c in conditions:
            v = Verdict.from_bool(state.judge(c.text))
            out[c] = v.invert() if c.negated else v
        return out


_WIRE = {True: Verdict.TRUE, False: Verdict.FALSE, None: Verdict.NULL,
         "true": Verdict.TRUE, "false": Verdict.FALSE, "null": Verdict.NULL}


class ChatConditionEvaluator:
    """One chat call per batch; negated labels are asked in positive form and inverted locally."""

    remote = True

    def __init__(self, client, system_prompt: str = CONDITION_EVAL_SYSTEM,
                 user_template: str = CONDITION_EVAL_USER) -> None:
        self.client = client
        self.system_prompt = system_prompt
        self.user_template = user_template

    def evaluate_batch(self, query: ParsedQuery, conditions: Sequence[ConditionLabel]) -> dict[ConditionLabel, Verdict]:
        texts = sorted({c.text for c in conditions})
        user = render(self.user_template, {"question": query.raw, "conditions": json.dumps(texts)},
                      required={"question", "conditions"})
        content = self.client.chat([("system", self.system_prompt), ("user", user)])
        start, end = content.find("{"), content.rfind("}")
        if start < 0 or end < start:
            raise SchemaError("no JSON object in evaluator output")
        try:
            data = json.loads(content[start:end + 1])
        except json.JSONDecodeError as exc:
            raise SchemaError(f"unparseable evaluator output: {exc}") from exc
        if not isinstance(data, dict):
            raise SchemaError("evaluator output is not an object")
        verdicts = {}
        for t in texts:
            if t not in data:
                raise SchemaError(f"evaluator output lacks condition {t!r}")
            value = data[t].casefold() if isinstance(data[t], str) else data[t]
            if value not in _WIRE:
                raise SchemaError(f"bad verdict {data[t]!r} for {t!r}")
            verdicts[t] = _WIRE[value]
        return {c: (verdicts[c.text].invert() if c.negated else verdicts[c.text]) for c in conditions}


class CountingEvaluator:
    """Wraps an evaluator and counts batch calls."""

    def __init__(self, inner: ConditionEvaluator | None = None) -> None:
        self.inner = inner or OfflineConditionEvaluator()
        self.calls = 0
        self.sizes: list[int] = []

    def evaluate_batch(self, query, conditions):
        self.calls += 1
        self.sizes.append(len(conditions))
        return self.inner.evaluate_batch(query, conditions)


def condition_set_hash(conditions: Iterable[ConditionLabel]) -> str:
    payload = json.dumps(sorted(c.serialize() for c in conditions), ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


class VerdictCache:
    """Tables keyed by (query fingerprint, condition-set hash). Thread-safe."""

    def __init__(self) -> None:
        self._data: dict[tuple[str, str], ConditionVerdictTable] = {}
        self._lock = threading.Lock()
        self.hits = 0

    def get(self, key: tuple[str, str]) -> ConditionVerdictTable | None:
        with self._lock:
            table = self._data.get(key)
            if table is not None:
                self.hits += 1
            return table

    def put(self, key: tuple[str, str], table: ConditionVerdictTable) -> None:
        with self._lock:
            self._data[key] = table


def evaluate_conditions(query: ParsedQuery, conditions: Iterable[ConditionLabel],
                        evaluator: ConditionEvaluator | None = None,
                        cache: VerdictCache | None = None) -> ConditionVerdictTable:
    """Build the verdict table with a single evaluator call (none for an empty set).

    Query-level required conditions are then forced True and excluded ones
    False, along with the opposite polarity of each.
    """
    conds = sorted(set(conditions))
    if not conds:
        return ConditionVerdictTable({}, query.fingerprint)
    key = (query.fingerprint, condition_set_hash(conds))
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    evaluator = evaluator or OfflineConditionEvaluator()
    degraded: list[str] = []
    try:
        verdicts = evaluator.evaluate_batch(query, conds)
    except (ProviderError, SchemaError) as exc:
        log.warning("condition evaluator failed (%s); using offline rules", exc)
        degraded.append(f"evaluator: {type(exc).__name__}: {exc}")
        verdicts = OfflineConditionEvaluator().evaluate_batch(query, conds)
    entries = {c: verdicts.get(c, Verdict.NULL) for c in conds}
    for label in query.excluded_conditions:
        entries[label] = Verdict.FALSE
        if label.flipped() in entries:
            entries[label.flipped()] = Verdict.TRUE
    for label in query.required_conditions:
        entries[label] = Verdict.TRUE
        if label.flipped() in entries:
            entries[label.flipped()] = Verdict.FALSE
    table = ConditionVerdictTable(entries, query.fingerprint, tuple(degraded))
    if cache is not None and not degraded:
        cache.put(key, table)
    return table
