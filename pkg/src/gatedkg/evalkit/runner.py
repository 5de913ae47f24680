"""Dataset runs: per-item graphs, scoring, gating ablation and sweeps."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..extraction import (ExtractionStats, RuleBasedExtractor, SynonymDictionary, TupleExtractor, build_graph,
                          extract_corpus)
from ..kg import KnowledgeGraph
from ..pipeline import PipelineConfig, Providers, answer_question
from ..ranking import RankingConfig
from .dataset import BenchmarkItem
from .metrics import exact_match, token_f1

log = logging.getLogger(__name__)


def config_hash(config: Mapping) -> str:
    """Hash of a JSON-able mapping, independent of key order."""
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def pipeline_metadata(config: PipelineConfig) -> dict:
    t = config.traversal
    return {"gating": config.gating, "k_paths": config.ranking.k_paths, "k_nodes": t.k_nodes,
            "d_max": t.d_max, "tau": t.tau, "max_paths": t.max_paths}


@dataclass
class ItemResult:
    id: str
    prediction: str
    em: int
    f1: float
    error: str | None = None

    def to_json(self) -> dict:
        out = {"id": self.id, "prediction": self.prediction, "em": self.em, "f1": round(self.f1, 6)}
        if self.error:
            out["error"] = self.error
        return out


@dataclass
class EvalReport:
    items: list[ItemResult]
    metadata: dict = field(default_factory=dict)

    @property
    def em(self) -> float:
        return round(100.0 * sum(i.em for i in self.items) / len(self.items), 2) if self.items else 0.0

    @property
    def f1(self) -> float:
        return round(100.0 * sum(i.f1 for i in self.items) / len(self.items), 2) if self.items else 0.0

    @property
    def errors(self) -> int:
        return sum(1 for i in self.items if i.error)

    def to_json(self) -> dict:
        return {"metadata": self.metadata, "aggregate": {"em": self.em, "f1": self.f1, "n": len(self.items)},
                "items": [i.to_json() for i in self.items]}

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


class GraphSource:
    """Per-item graphs built from each item's documents, or one shared graph."""

    def __init__(self, corpus: Mapping[str, str] | None = None, graph: KnowledgeGraph | None = None,
                 extractor: TupleExtractor | None = None, dictionary: SynonymDictionary | None = None,
                 max_chunk_chars: int = 1500, materialize_inverse: bool = True) -> None:
        if (corpus is None) == (graph is None):
            raise ValueError("give exactly one of corpus or graph")
        self.corpus = corpus
        self.graph = graph
        self.extractor = extractor or RuleBasedExtractor()
        self.dictionary = dictionary
        self.max_chunk_chars = max_chunk_chars
        self.materialize_inverse = materialize_inverse
        self.stats = ExtractionStats()
        self._cache: dict[tuple[str, ...], KnowledgeGraph] = {}

    def for_item(self, item: BenchmarkItem) -> KnowledgeGraph:
        if self.graph is not None:
            return self.graph
        key = tuple(sorted(item.doc_ids))
        if key not in self._cache:
            missing = [d for d in key if d not in self.corpus]
            if missing:
                raise KeyError(f"documents not in corpus: {missing}")
            docs = {d: self.corpus[d] for d in key}
            tuples = extract_corpus(docs, self.extractor, self.max_chunk_chars, self.stats)
            self._cache[key] = build_graph(tuples, self.dictionary, docs, self.materialize_inverse)
        return self._cache[key]


def _run_item(item: BenchmarkItem, source: GraphSource, config: PipelineConfig, providers: Providers) -> ItemResult:
    try:
        graph = source.for_item(item)
        out = answer_question(graph, item.question, config, providers)
        pred = out.result.answer
        return ItemResult(item.id, pred, exact_match(pred, item.conditional_answer),
                          token_f1(pred, item.conditional_answer))
    except Exception as exc:  # a failed item scores zero, the run goes on
        log.warning("item %s failed: %s", item.id, exc)
        return ItemResult(item.id, "", 0, 0.0, f"{type(exc).__name__}: {exc}")


def run_eval(dataset: Sequence[BenchmarkItem], source: GraphSource, config: PipelineConfig = PipelineConfig(),
             providers: Providers | None = None, jobs: int = 1, extra_metadata: Mapping | None = None) -> EvalReport:
    providers = providers or Providers()
    # graphs are built up front, single-threaded, so item workers only read them
    if source.graph is None:
        for item in dataset:
            try:
                source.for_item(item)
            except KeyError:
                pass
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda it: _run_item(it, source, config, providers), dataset))
    else:
        results = [_run_item(it, source, config, providers) for it in dataset]
    results.sort(key=lambda r: r.id)
    meta = pipeline_metadata(config)
    meta.update(extra_metadata or {})
    meta["config_hash"] = config_hash(meta)
    return EvalReport(results, meta)


def sweep(dataset: Sequence[BenchmarkItem], source: GraphSource, base: PipelineConfig = PipelineConfig(),
          k_paths: Iterable[int] | None = None, k_nodes: Iterable[int] | None = None,
          gating: Iterable[bool] | None = None, providers: Providers | None = None, jobs: int = 1) -> list[EvalReport]:
    """One report per combination of the given settings."""
    reports = []
    for g in (list(gating) if gating is not None else [base.gating]):
        for kn in (list(k_nodes) if k_nodes is not None else [base.traversal.k_nodes]):
            for kp in (list(k_paths) if k_paths is not None else [base.ranking.k_paths]):
                cfg = replace(base, gating=g, traversal=replace(base.traversal, k_nodes=kn),
                              ranking=RankingConfig(kp))
                reports.append(run_eval(dataset, source, cfg, providers, jobs))
    return reports
