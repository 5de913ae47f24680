"""Inter-annotator agreement: Gwet's AC1/AC2 and raw agreement rates."""

from __future__ import annotations

import csv
from itertools import combinations
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from ..errors import DegenerateScale

Rating = Hashable | None


def _categories(ratings: Sequence[Sequence[Rating]], categories: Sequence[Hashable] | None) -> list:
    if categories is not None:
        cats = list(categories)
        seen = {r for row in ratings for r in row if r is not None}
        unknown = seen - set(cats)
        if unknown:
            raise ValueError(f"ratings outside the category list: {sorted(map(str, unknown))}")
        return cats
    return sorted({r for row in ratings for r in row if r is not None}, key=lambda v: (str(type(v)), v))


def _check(ratings: Sequence[Sequence[Rating]]) -> None:
    if not ratings:
        raise ValueError("need at least one item")
    if any(len(row) < 2 for row in ratings):
        raise ValueError("need at least two raters")


def weight_matrix(q: int, scale: str = "nominal") -> np.ndarray:
    """Identity for nominal data, quadratic 1 - (k-l)^2/(q-1)^2 for ordinal."""
    if scale == "nominal" or q == 1:
        return np.eye(q)
    if scale == "ordinal":
        k = np.arange(q)
        return 1.0 - (k[:, None] - k[None, :]) ** 2 / (q - 1) ** 2
    raise ValueError(f"unknown scale {scale!r}")


def gwet_ac(ratings: Sequence[Sequence[Rating]], scale: str = "nominal",
            categories: Sequence[Hashable] | None = None, strict: bool = False) -> float:
    """Gwet's AC1 (``scale="nominal"``) or AC2 with quadratic weights (``"ordinal"``).

    ``ratings`` is items x raters; ``None`` marks a missing rating. Ordinal
    categories are ordered as given (or sorted). When chance agreement is 1
    (a single category in use) the coefficient is undefined; 1.0 is returned,
    or DegenerateScale raised with ``strict``.
    """
    _check(ratings)
    cats = _categories(ratings, categories)
    q = len(cats)
    pos = {c: i for i, c in enumerate(cats)}
    counts = np.zeros((len(ratings), q))
    for i, row in enumerate(ratings):
        for r in row:
            if r is not None:
                counts[i, pos[r]] += 1
    w = weight_matrix(q, scale)
    r_i = counts.sum(axis=1)
    rated = r_i >= 1
    multi = r_i >= 2
    if not multi.any():
        raise ValueError("no item has two or more ratings")
    weighted = counts @ w.T
    pa_items = (counts[multi] * (weighted[multi] - 1)).sum(axis=1) / (r_i[multi] * (r_i[multi] - 1))
    p_a = float(pa_items.mean())
    pi = (counts[rated] / r_i[rated, None]).mean(axis=0)
    if q == 1:
        p_e = 1.0
    else:
        p_e = float(w.sum() / (q * (q - 1)) * (pi * (1 - pi)).sum())
    if np.isclose(p_e, 1.0, rtol=0.0, atol=1e-15):
        if strict:
            raise DegenerateScale("chance agreement is 1; coefficient undefined")
        return 1.0
    return (p_a - p_e) / (1 - p_e)


def percent_agreement(ratings: Sequence[Sequence[Rating]]) -> tuple[float, float]:
    """(% items with unanimous ratings, mean % agreeing rater pairs per item)."""
    _check(ratings)
    unanimous = []
    pairwise = []
    for row in ratings:
        vals = [r for r in row if r is not None]
        if len(vals) < 2:
            continue
        unanimous.append(len(set(vals)) == 1)
        pairs = list(combinations(vals, 2))
        pairwise.append(sum(a == b for a, b in pairs) / len(pairs))
    if not unanimous:
        raise ValueError("no item has two or more ratings")
    return 100.0 * sum(unanimous) / len(unanimous), 100.0 * sum(pairwise) / len(pairwise)


def read_ratings_csv(path: str | Path) -> tuple[list[str], list[list[str | None]]]:
    """Read ``item_id,rater_1,...,rater_k``; empty cells are missing ratings."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "item_id" or len(header) < 3:
            raise ValueError("ratings CSV header must be item_id,rater_1,...,rater_k")
        ids, rows = [], []
        for line in reader:
            if not line:
                continue
            ids.append(line[0])
            rows.append([cell.strip() or None for cell in line[1:]])
    return ids, rows
