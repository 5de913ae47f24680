"""Question parsing into keywords, required/excluded conditions and negated entities."""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from typing import Mapping, Protocol

from .errors import EmptyEntity, EmptyQuery, ProviderError, SchemaError
from .kg import ConditionLabel, EntityId, canonicalize_entity
from .lexicon import (AGE_CONCEPTS, NEGATION_CUES, POPULATION_WORDS, ConceptLexicon, age_concepts,
                      age_threshold, default_lexicon, find_ages, negated_spans, tokens)
from .prompts import QUERY_PARSE_SYSTEM, QUERY_PARSE_USER, render

log = logging.getLogger(__name__)

# Concepts describing who the patient is rather than what they have.
DEMOGRAPHIC_CONCEPTS = AGE_CONCEPTS | {"males", "females", "pregnancy", "breastfeeding"}

STOPWORDS = frozenset("""
a an the of in for to with without on at by from and or but not no nor as into onto during among about
over under than then this that these those it its their there his her he she they them we you i me my
our your which what who whom whose when where why how is are was were be been being am do does did done
has have had having should would can could may might must will shall also very most more less such
some any each every other another only just both either neither all same so if because while whereas
patient patients person people individual individuals year years old aged month months day days
known history given case cases
""".split())

# Common verbs that end a noun phrase (target type, negated entity).
VERBS = frozenset("""
cause causes caused treat treats treated replace replaces replaced prevent prevents reduce reduces
increase increases indicate indicates recommend recommends recommended prefer prefers preferred
contraindicate contraindicates contraindicated use used is are was were should can may
""".split())

_EXCLUSION = re.compile(
    r"(?:,\s*)?\b(but not|excluding|except for|except|other than|distinct from|besides|rather than|"
    r"apart from|not including)\s+(.+?)(?=\s*(?:[,;?.!]|$)|\s+(?:but|and)\s+(?:not|excluding)\b)",
    re.I)
_PREPOSITIONS = ("in", "for", "during", "with", "among", "without", "on")
_SEGMENT = re.compile(r"\b(in|for|during|with|among|without|on)\s+", re.I)
_ARTICLES = re.compile(r"^(?:(?:a|an|the)\s+)+", re.I)
_WH = re.compile(r"^\s*(?:which|what)\s+(.*)$", re.I)


@dataclass(frozen=True)
class ParsedQuery:
    raw: str
    keywords: tuple[str, ...]
    required_conditions: tuple[ConditionLabel, ...] = ()
    excluded_conditions: tuple[ConditionLabel, ...] = ()
    negated_entities: tuple[EntityId, ...] = ()
    target_entity: str | None = None
    target_type: str | None = None
    fallback: str | None = None
    fingerprint: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        req = _dedupe(ConditionLabel.parse(c) for c in self.required_conditions)
        exc = _dedupe(ConditionLabel.parse(c) for c in self.excluded_conditions)
        overlap = [c for c in req if c in exc]
        if overlap:
            log.info("dropping %s from required conditions: also excluded", [str(c) for c in overlap])
            req = [c for c in req if c not in exc]
        negated = _dedupe(canonicalize_entity(n) for n in self.negated_entities)
        banned = set(negated) | {t for n in negated for t in n.split()}
        kws = _dedupe(k for k in (" ".join(k.split()).casefold() for k in self.keywords)
                      if k and k not in banned)
        object.__setattr__(self, "required_conditions", tuple(req))
        object.__setattr__(self, "excluded_conditions", tuple(exc))
        object.__setattr__(self, "negated_entities", tuple(negated))
        object.__setattr__(self, "keywords", tuple(kws))
        object.__setattr__(self, "fingerprint", query_fingerprint(self.raw))

    def to_json(self) -> dict:
        return {
            "raw": self.raw,
            "keywords": list(self.keywords),
            "required": [c.serialize() for c in self.required_conditions],
            "excluded": [c.serialize() for c in self.excluded_conditions],
            "negated": list(self.negated_entities),
            "target_entity": self.target_entity,
            "target_type": self.target_type,
        }


def query_fingerprint(raw: str) -> str:
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:16]


def _dedupe(items):
    out = []
    for item in items:
        if item not in out:
            out.append(item)
    return out


def _strip_articles(text: str) -> str:
    return " ".join(_ARTICLES.sub("", text.strip(" ,;:.?!")).split())


def _phrase_head(text: str, limit: int = 4) -> str:
    """Leading noun phrase: stop at a stopword (after the first word) or a verb."""
    words = []
    for w in _strip_articles(text).split():
        lw = w.casefold().strip(",;:.?!")
        if not lw:
            if words:
                break
            continue
        if words and (lw in STOPWORDS or lw in VERBS):
            break
        words.append(w.strip(",;:.?!"))
        if len(words) >= limit:
            break
    return " ".join(words)


class QueryParser(Protocol):
    def parse(self, question: str) -> ParsedQuery: ...


@dataclass
class _Segment:
    prep: str | None
    text: str
    condition: bool = False
    demographic: bool = False


class OfflineQueryParser:
    """Deterministic pattern parser."""

    remote = False

    def __init__(self, lexicon: ConceptLexicon | None = None) -> None:
        self.lexicon = lexicon if lexicon is not None else default_lexicon()

    # -- helpers ------------------------------------------------------------

    def _is_conditiony(self, text: str) -> bool:
        low = text.casefold()
        if find_ages(low) or age_threshold(low):
            return True
        if any(t in POPULATION_WORDS for t in tokens(low)):
            return True
        return bool(self.lexicon.find_all(low))

    def _labels_for(self, phrase: str) -> list[str]:
        """Condition strings describing ``phrase``: as written, lexicon surfaces and concepts."""
        phrase = _strip_articles(phrase)
        generic = all(t in POPULATION_WORDS for t in tokens(phrase))
        out = [phrase] if phrase and not generic else []
        for m in self.lexicon.find_maximal(phrase):
            out.append(m.surface)
            for concept in sorted(self.lexicon.concepts_of(m.surface)):
                out.append(f"in {concept}" if concept in DEMOGRAPHIC_CONCEPTS else concept)
        for age in find_ages(phrase):
            out.extend(f"in {c}" for c, holds in sorted(age_concepts(age).items()) if holds)
        return out

    def _demographic_words(self, text: str) -> set[str]:
        low = text.casefold()
        words = {t for t in tokens(low) if t in POPULATION_WORDS}
        for m in self.lexicon.find_all(low):
            if self.lexicon.concepts_of(m.surface) & DEMOGRAPHIC_CONCEPTS:
                words.update(tokens(m.surface))
        for t in tokens(low):
            if re.search(r"\d", t):
                words.add(t)
        return words

    # -- main ---------------------------------------------------------------

    def parse(self, question: str) -> ParsedQuery:
        raw = question
        text = " ".join(question.split())
        if not text.strip(" ?.!"):
            raise EmptyQuery("question is empty")
        work = text.rstrip(" ?.!")

        excluded: list[str] = []
        negated: list[str] = []
        cuts: list[tuple[int, int]] = []
        for m in _EXCLUSION.finditer(work):
            phrase = m.group(2).strip()
            first = phrase.split()[0].casefold() if phrase.split() else ""
            if first in _PREPOSITIONS or self._is_conditiony(phrase):
                body = phrase
                if first in _PREPOSITIONS:
                    body = phrase.split(None, 1)[1] if len(phrase.split()) > 1 else phrase
                excluded.append(_strip_articles(phrase))
                excluded.extend(label for label in self._labels_for(body) if label != _strip_articles(body))
                cuts.append(m.span())
            else:
                head = _phrase_head(phrase)
                if head:
                    negated.append(head)
                    cuts.append((m.start(), work.index(head, m.start(2)) + len(head)))
        for start, end in reversed(cuts):
            work = work[:start] + " " + work[end:]
        work = " ".join(work.split())

        segments = self._segments(work)
        required: list[str] = []
        drop_words: set[str] = set()
        after_population = False
        for seg in segments:
            if seg.prep is None:
                continue
            prep = seg.prep.casefold()
            conditiony = self._is_conditiony(seg.text)
            if prep == "without":
                excluded.extend(self._labels_for(seg.text))
                drop_words.update(tokens(seg.text))
                continue
            if conditiony or (prep == "with" and after_population) or (prep == "on" and after_population):
                seg.condition = True
                demo = self._demographic_words(seg.text)
                seg.demographic = bool(demo)
                drop_words |= demo
                if prep in ("with", "on") and after_population:
                    for part in re.split(r"\s+and\s+|,\s*", seg.text):
                        part = part.strip()
                        if not part:
                            continue
                        if NEGATION_CUES.match(part.casefold() + " "):
                            for s, e in negated_spans(part):
                                neg = part[s:e].strip()
                                excluded.extend(self._labels_for(neg))
                                drop_words.update(tokens(part))
                        else:
                            required.extend(self._labels_for(part))
                else:
                    required.extend(self._labels_for(seg.text))
                after_population = after_population or seg.demographic
            else:
                after_population = False

        for s, e in negated_spans(work):
            drop_words.update(tokens(work[s:e]))
            drop_words.update(tokens(work[max(0, s - 12):s]))

        target_type, target_entity, keywords = self._keywords(work, drop_words, negated)
        if not keywords:
            # the cuts consumed the whole question; fall back to its own words
            neg_words = {t for n in negated for t in tokens(n)}
            raw_words = [t for t in tokens(text) if t not in neg_words and not t.isdigit()]
            keywords = _dedupe([t for t in raw_words if t not in STOPWORDS] or raw_words)
        return ParsedQuery(raw=raw, keywords=tuple(keywords), required_conditions=tuple(required),
                           excluded_conditions=tuple(excluded), negated_entities=tuple(negated),
                           target_entity=target_entity, target_type=target_type)

    def _segments(self, work: str) -> list[_Segment]:
        out = []
        pos = 0
        prep = None
        for m in _SEGMENT.finditer(work):
            out.append(_Segment(prep, work[pos:m.start()].strip(" ,")))
            prep = m.group(1)
            pos = m.end()
        out.append(_Segment(prep, work[pos:].strip(" ,")))
        return [s for s in out if s.text]

    def _keywords(self, work: str, drop: set[str], negated: list[str]) -> tuple[str | None, str | None, list[str]]:
        neg_words = {t for n in negated for t in tokens(n)}
        content = [t for t in tokens(work) if t not in STOPWORDS and t not in neg_words
                   and not t.isdigit()]
        keywords = [t for t in content if t not in drop]
        if not keywords:
            keywords = content or [t for t in tokens(work) if not t.isdigit()]
        target_type = None
        wh = _WH.match(work)
        if wh:
            head = _phrase_head(wh.group(1), limit=2)
            if head and head.split()[0].casefold() not in STOPWORDS | VERBS:
                target_type = head.casefold()
        tt_words = set(target_type.split()) if target_type else set()
        target_entity = next((k for k in keywords if k not in tt_words and k not in VERBS), None)
        return target_type, target_entity, _dedupe(keywords)


_QUERY_KEYS = ("target_type", "target_entity", "positive_attributes", "negated_entities",
               "required_conditions", "excluded_conditions")


def _parse_json_object(content: str) -> dict:
    import json

    start, end = content.find("{"), content.rfind("}")
    if start < 0 or end < start:
        raise SchemaError("no JSON object in parser output")
    try:
        data = json.loads(content[start:end + 1])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"unparseable parser output: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaError("parser output is not an object")
    return data


def validate_parse_payload(data: Mapping) -> dict:
    missing = [k for k in _QUERY_KEYS if k not in data]
    if missing:
        raise SchemaError(f"parser output lacks {', '.join(missing)}")
    for key in _QUERY_KEYS[2:]:
        value = data[key]
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise SchemaError(f"{key} must be a list of strings")
    for key in _QUERY_KEYS[:2]:
        if data[key] is not None and not isinstance(data[key], str):
            raise SchemaError(f"{key} must be a string or null")
    return dict(data)


class ChatQueryParser:
    """Parsing through a chat provider with the query-parsing prompt."""

    remote = True

    def __init__(self, client, system_prompt: str = QUERY_PARSE_SYSTEM, user_template: str = QUERY_PARSE_USER,
                 offline: OfflineQueryParser | None = None) -> None:
        self.client = client
        self.system_prompt = system_prompt
        self.user_template = user_template
        self.offline = offline or OfflineQueryParser()

    def parse(self, question: str) -> ParsedQuery:
        if not question.strip():
            raise EmptyQuery("question is empty")
        user = render(self.user_template, {"question": question}, required={"question"})
        data = validate_parse_payload(_parse_json_object(
            self.client.chat([("system", self.system_prompt), ("user", user)])))
        keywords = [w for phrase in [data["target_type"] or "", data["target_entity"] or "",
                                     *data["positive_attributes"]] for w in tokens(phrase)
                    if w not in STOPWORDS]
        if not keywords:
            keywords = list(self.offline.parse(question).keywords)
        negated = []
        for n in data["negated_entities"]:
            try:
                negated.append(canonicalize_entity(n))
            except EmptyEntity:
                continue
        labels = lambda xs: tuple(ConditionLabel.parse(x) for x in xs if x.strip())  # noqa: E731
        return ParsedQuery(raw=question, keywords=tuple(keywords),
                           required_conditions=labels(data["required_conditions"]),
                           excluded_conditions=labels(data["excluded_conditions"]),
                           negated_entities=tuple(negated), target_entity=data["target_entity"],
                           target_type=data["target_type"])


def parse_query(question: str, parser: QueryParser | None = None) -> ParsedQuery:
    """Parse ``question``; a remote parser failure falls back to the offline rules.

    The fallback reason is kept in ``ParsedQuery.fallback``.
    """
    if not question or not question.strip():
        raise EmptyQuery("question is empty")
    offline = OfflineQueryParser()
    if parser is None:
        return offline.parse(question)
    try:
        return parser.parse(question)
    except (SchemaError, ProviderError) as exc:
        log.warning("query parser failed (%s); using offline rules", exc)
        parsed = offline.parse(question)
        return ParsedQuery(parsed.raw, parsed.keywords, parsed.required_conditions, parsed.excluded_conditions,
                           parsed.negated_entities, parsed.target_entity, parsed.target_type,
                           fallback=f"{type(exc).__name__}: {exc}")
