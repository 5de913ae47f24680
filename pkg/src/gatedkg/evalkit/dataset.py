"""Benchmark items: schema, JSON Lines loading and structural checks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..errors import FormatError

CATEGORIES = (
    "comorbidity_contraindication",
    "diagnostic_modality",
    "special_population",
    "drug_interaction",
)

MODIFIER_MISSING = "ModifierMissing"
ANSWER_NOT_DIVERGENT = "AnswerNotDivergent"
MISSING_DOCUMENTS = "MissingDocuments"
EMPTY_FIELD = "EmptyField"
UNKNOWN_CATEGORY = "UnknownCategory"


def _canon(text: str) -> str:
    return " ".join(text.split()).casefold()


@dataclass
class BenchmarkItem:
    id: str
    question: str
    conditional_answer: str
    general_answer: str | None = None
    condition: str | None = None
    doc_ids: list[str] = field(default_factory=list)
    category: str | None = None

    @classmethod
    def from_json(cls, obj: dict) -> BenchmarkItem:
        known = {k: obj[k] for k in cls.__dataclass_fields__ if k in obj}
        item = cls(**known)
        if not isinstance(item.doc_ids, list):
            raise ValueError("doc_ids must be a list")
        item.id = str(item.id)
        return item

    def to_json(self) -> dict:
        return asdict(self)


def validate_item(item: BenchmarkItem) -> list[str]:
    """Mechanically checkable conditionality violations (empty list when clean)."""
    out = []
    if not item.question.strip() or not item.conditional_answer.strip():
        out.append(EMPTY_FIELD)
    if item.condition and _canon(item.condition) not in _canon(item.question):
        out.append(MODIFIER_MISSING)
    if item.general_answer is not None and _canon(item.general_answer) == _canon(item.conditional_answer):
        out.append(ANSWER_NOT_DIVERGENT)
    needed = 2 if item.condition else 1
    if len(item.doc_ids) < needed:
        out.append(MISSING_DOCUMENTS)
    if item.category is not None and item.category not in CATEGORIES:
        out.append(UNKNOWN_CATEGORY)
    return out


def load_dataset(path: str | Path) -> list[BenchmarkItem]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                items.append(BenchmarkItem.from_json(json.loads(line)))
            except (ValueError, TypeError, KeyError) as exc:
                raise FormatError(str(exc), line=lineno) from exc
    ids = [i.id for i in items]
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate item ids")
    return items


def save_dataset(items: list[BenchmarkItem], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_json(), ensure_ascii=False) + "\n")
