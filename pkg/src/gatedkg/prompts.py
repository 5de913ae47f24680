"""Default prompt templates for the remote (chat model) providers.

Placeholders use ``{{name}}`` syntax and are filled by :func:`render`.
Every template can be replaced from a text file on the command line.
"""

from __future__ import annotations

import re
from pathlib import Path

from .errors import TemplateError

_PLACEHOLDER = re.compile(r"\{\{\s*([a-zA-Z_][a-zA-Z0-9_]*)\s*\}\}")

EXTRACTION_SYSTEM = """\
You extract a biomedical knowledge graph from a passage. Return a JSON array of
n-tuples, one per factual claim, each with contextual conditions.

Rules:
- Recall: emit a tuple for every factual claim, including minor ones.
- One subject and one object per tuple. Split coordinated subjects or objects
  into separate tuples.
- Use canonical entity names. Descriptors such as "elevated" or "serum" belong
  in the conditions list, not in the entity.
- Also extract claims stated inside exclusions, differentials and comparisons.

Each tuple is an object with keys: "entity1" (subject), "relation",
"inverse_relation", "entity2" (object), "conditions" (list of qualifier strings,
for example "in cardiomyocytes" or "during pregnancy"). Use snake_case relations.

Example input: "L-type and T-type calcium channels are both blocked by Compound 99 in cardiomyocytes."
Example output:
[{"entity1": "L-type calcium channels", "relation": "blocked_by", "inverse_relation": "blocks",
  "entity2": "Compound 99", "conditions": ["in cardiomyocytes"]},
 {"entity1": "T-type calcium channels", "relation": "blocked_by", "inverse_relation": "blocks",
  "entity2": "Compound 99", "conditions": ["in cardiomyocytes"]}]

Return only the JSON array."""

EXTRACTION_USER = "Passage:\n{{passage}}"

QUERY_PARSE_SYSTEM = """\
You parse questions over a biomedical knowledge graph into a structured form.

Fields:
- target_type: the kind of entity the answer is (drug, gene, imaging test, ...)
- target_entity: the central concept the question is about
- positive_attributes: 2-5 properties the answer has to have
- negated_entities: entities the question rules out as answers ("other than X", "distinct from Y")
- required_conditions: patient context that holds ("in males", "during pregnancy")
- excluded_conditions: patient context that is stated not to hold

Output a single JSON object with exactly the keys target_type, target_entity,
positive_attributes, negated_entities, required_conditions, excluded_conditions.

Examples:
"Which gene causes cardiomyopathy in pediatric patients but not in adults?"
-> {"required_conditions": ["pediatric"], "excluded_conditions": ["in adults"], ...}
"What drug treats hypertension in pregnant women, excluding ACE inhibitors?"
-> {"negated_entities": ["ACE inhibitors"], "required_conditions": ["in pregnancy"], ...}"""

QUERY_PARSE_USER = "Question: {{question}}"

CONDITION_EVAL_SYSTEM = """\
You check clinical conditions taken from knowledge-graph edges against a query.
For every condition decide whether the patient or context in the query meets it.

Values:
- true: the query states or clearly implies the condition holds
- false: the query states or clearly implies the condition does not hold
- null: the query says nothing relevant; do not guess

Treat synonyms as equal ("in boys" = "male children"), reason over numbers
(a 5-year-old is a child, not an adult), follow implications (a pregnant woman
meets "during pregnancy") and negations ("no kidney disease" fails "renal impairment").

Answer with one JSON object whose keys are exactly the input condition strings
and whose values are true, false or null."""

CONDITION_EVAL_USER = "Query: {{question}}\nConditions: {{conditions}}"

ANSWER_INSTRUCTIONS = """\
Give the best available answer supported by the evidence paths.
- If only one option has supporting evidence, choose it.
- A caution about a treatment shows that it is in use; it does not rule it out.
- Contraindications of the other options support the remaining one.
- Reply "insufficient evidence" only when no option connects to the question at all.

Format:
REASONING: 2-4 sentences citing documents like [doc1].
ANSWER: a single entity, yes/no, or a short phrase; no sentence.
Keep the answer as short as a clinician would say it, preferring standard acronyms."""

ANSWER_TEMPLATE = """\
Question: {{question}}

Reasoning paths:
{{paths}}

Evidence:
{{evidence}}

Instructions:
{{instructions}}
"""

ANSWER_SYSTEM = "You are a biomedical question-answering assistant."


def placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER.findall(template))


def render(template: str, values: dict[str, str], *, required: set[str] | None = None) -> str:
    """Substitute ``{{name}}`` placeholders.

    Raises TemplateError for a placeholder with no value or a required
    placeholder missing from the template.
    """
    found = placeholders(template)
    unknown = found - values.keys()
    if unknown:
        raise TemplateError(f"unknown placeholder(s): {', '.join(sorted(unknown))}")
    missing = (required or set()) - found
    if missing:
        raise TemplateError(f"template lacks placeholder(s): {', '.join(sorted(missing))}")
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template)


def load_template(path: str | Path) -> str:
    return Path(path).read_text(encoding="utf-8")
