"""Command-line entry point: extract, build, query, evaluate, agreement.

Exit codes: 0 ok, 1 fatal (config or I/O), 2 partial (some chunks or items failed).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

from .answer import ChatAnswerGenerator
from .errors import FormatError, GatedKGError
from .extraction import (DEFAULT_MAX_CHUNK_CHARS, ChatTupleExtractor, ExtractionStats, RawTuple, RuleBasedExtractor,
                         SynonymDictionary, build_graph, extract_corpus, read_corpus)
from .gating import ChatConditionEvaluator
from .kg import load_graph, save_graph
from .pipeline import PipelineConfig, Providers, answer_question
from .providers import HashEmbedder, ProviderConfig, RemoteClient
from .query import ChatQueryParser
from .ranking import RankingConfig, ranked_records
from .traversal import TraversalConfig

log = logging.getLogger("gatedkg")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2
ROLES = ("extractor", "parser", "evaluator", "embedder", "generator")

DEFAULTS: dict[str, Any] = {
    "k_nodes": 5, "k_paths": 3, "d_max": 4, "tau": 0.35, "max_paths": 10000,
    "gating": True, "remote": [], "jobs": 1, "max_chunk_chars": DEFAULT_MAX_CHUNK_CHARS,
    "materialize_inverse": True, "dict": None, "providers": {},
}


class ConfigError(GatedKGError, ValueError):
    pass


@dataclass
class RunConfig:
    """Effective settings: defaults, then the --config file, then flags."""

    values: dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def remote_roles(self) -> set[str]:
        roles = set(self.values["remote"])
        unknown = roles - set(ROLES)
        if unknown:
            raise ConfigError(f"unknown provider role(s): {sorted(unknown)}")
        return roles

    def pipeline(self) -> PipelineConfig:
        try:
            return PipelineConfig(
                TraversalConfig(int(self["k_nodes"]), float(self["tau"]), int(self["d_max"]), int(self["max_paths"])),
                RankingConfig(int(self["k_paths"])), bool(self["gating"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def provider_config(self, role: str) -> ProviderConfig:
        table = self.values.get("providers") or {}
        merged = {**table.get("default", {}), **table.get(role, {})}
        if "endpoint_url" not in merged or "model_name" not in merged:
            raise ConfigError(f"remote role {role!r} needs providers.{role} (or providers.default) "
                              "with endpoint_url and model_name")
        try:
            return ProviderConfig.from_dict(merged)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"providers.{role}: {exc}") from exc

    def to_json(self) -> dict:
        out = dict(self.values)
        out["remote"] = sorted(self.remote_roles)
        return out

    def hash(self) -> str:
        from .evalkit.runner import config_hash
        return config_hash(self.to_json())


def load_run_config(args: argparse.Namespace) -> RunConfig:
    values = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in data.items():
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = value
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "offline", False):
        values["remote"] = []
    return RunConfig(values)


def echo_config(cfg: RunConfig) -> None:
    print(f"effective config {cfg.hash()}: {json.dumps(cfg.to_json(), sort_keys=True)}", file=sys.stderr)


def build_providers(cfg: RunConfig) -> Providers:
    remote = cfg.remote_roles
    clients: dict[str, RemoteClient] = {r: RemoteClient(cfg.provider_config(r)) for r in sorted(remote)}
    return Providers(
        parser=ChatQueryParser(clients["parser"]) if "parser" in clients else None,
        evaluator=ChatConditionEvaluator(clients["evaluator"]) if "evaluator" in clients else None,
        embedder=clients.get("embedder") or HashEmbedder(),
        generator=ChatAnswerGenerator(clients["generator"]) if "generator" in clients else None,
    )


def build_extractor(cfg: RunConfig):
    if "extractor" in cfg.remote_roles:
        return ChatTupleExtractor(RemoteClient(cfg.provider_config("extractor")))
    return RuleBasedExtractor()


def load_dictionary(cfg: RunConfig) -> SynonymDictionary | None:
    return SynonymDictionary.from_tsv(cfg["dict"]) if cfg["dict"] else None


# -- tuples file ---------------------------------------------------------------------

def write_tuples(path: str | Path, documents: dict[str, str], tuples: Sequence[RawTuple]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id in sorted(documents):
            fh.write(json.dumps({"kind": "document", "doc_id": doc_id, "text": documents[doc_id]},
                                ensure_ascii=False) + "\n")
        for t in tuples:
            fh.write(json.dumps({"kind": "tuple", **t.to_record()}, ensure_ascii=False) + "\n")


def read_tuples(path: str | Path) -> tuple[dict[str, str], list[RawTuple]]:
    documents: dict[str, str] = {}
    tuples: list[RawTuple] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record is not an object")
                kind = rec.pop("kind", "tuple")
                if kind == "document":
                    documents[str(rec["doc_id"])] = str(rec["text"])
                elif kind == "tuple":
                    tuples.append(RawTuple.from_record(rec))
                else:
                    raise ValueError(f"unknown record kind {kind!r}")
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"bad tuple record: {exc}", line=lineno) from exc
    return documents, tuples


# -- commands ------------------------------------------------------------------------

def cmd_extract(args: argparse.Namespace, cfg: RunConfig) -> int:
    try:
        documents = read_corpus(args.corpus)
    except OSError as exc:
        print(f"error: cannot read corpus: {exc}", file=sys.stderr)
        return EXIT_FATAL
    stats = ExtractionStats()
    tuples = extract_corpus(documents, build_extractor(cfg), int(cfg["max_chunk_chars"]), stats, int(cfg["jobs"]))
    write_tuples(args.out, documents, tuples)
    ledger = Path(args.failures) if args.failures else Path(str(args.out) + ".failures.jsonl")
    if stats.failures:
        ledger.write_text("".join(json.dumps(f) + "\n" for f in stats.failures), encoding="utf-8")
    print(json.dumps({"documents": len(documents), "tuples": len(tuples), "dropped": stats.dropped,
                      "failures": len(stats.failures)}))
    return EXIT_PARTIAL if stats.failures else EXIT_OK


def cmd_build(args: argparse.Namespace, cfg: RunConfig) -> int:
    documents, tuples = read_tuples(args.tuples)
    graph = build_graph(tuples, load_dictionary(cfg), documents, bool(cfg["materialize_inverse"]))
    save_graph(graph, args.out)
    print(json.dumps({"nodes": len(graph.nodes), "edges": len(graph.edges),
                      "conditions": len(graph.unique_conditions())}))
    return EXIT_OK


def cmd_query(args: argparse.Namespace, cfg: RunConfig) -> int:
    graph = load_graph(args.graph)
    out = answer_question(graph, args.question, cfg.pipeline(), build_providers(cfg))
    result = out.result.to_json(args.question)
    if args.dump_verdicts:
        result["verdicts"] = out.table.to_json()
    if args.dump_paths:
        result["candidate_paths"] = ranked_records(out.ranked)
        result["traversal"] = {"paths": len(out.traversal), "blocked_count": out.traversal.blocked_count,
                               "truncated": out.traversal.truncated}
    print(json.dumps(result, indent=2, ensure_ascii=False))
    return EXIT_OK


def _parse_list(raw: str | None, kind=int) -> list | None:
    if raw is None:
        return None
    try:
        return [kind(x) for x in raw.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad list {raw!r}: {exc}") from exc


def _report_path(base: Path, tag: str | None) -> Path:
    return base if tag is None else base.with_name(f"{base.stem}.{tag}{base.suffix or '.json'}")


def cmd_evaluate(args: argparse.Namespace, cfg: RunConfig) -> int:
    from .evalkit import GraphSource, load_dataset, sweep

    dataset = load_dataset(args.dataset)
    if (args.corpus is None) == (args.graph is None):
        raise ConfigError("give exactly one of --corpus or --graph")
    if args.corpus is not None:
        try:
            corpus = read_corpus(args.corpus)
        except OSError as exc:
            raise ConfigError(f"cannot read corpus: {exc}") from exc
        source = GraphSource(corpus=corpus, extractor=build_extractor(cfg), dictionary=load_dictionary(cfg),
                             max_chunk_chars=int(cfg["max_chunk_chars"]),
                             materialize_inverse=bool(cfg["materialize_inverse"]))
    else:
        source = GraphSource(graph=load_graph(args.graph))
    base = cfg.pipeline()
    k_paths = _parse_list(args.sweep_k_paths)
    k_nodes = _parse_list(args.sweep_k_nodes)
    gating = [base.gating, False] if args.ablate_gating and base.gating else None
    reports = sweep(dataset, source, base, k_paths, k_nodes, gating, build_providers(cfg), int(cfg["jobs"]))
    multi = len(reports) > 1
    status = EXIT_OK
    summary = []
    for rep in reports:
        m = rep.metadata
        tag = f"kp{m['k_paths']}-kn{m['k_nodes']}-{'gated' if m['gating'] else 'ungated'}" if multi else None
        path = _report_path(Path(args.report), tag)
        rep.write(path)
        summary.append({"report": str(path), "em": rep.em, "f1": rep.f1, "errors": rep.errors,
                        "config_hash": m["config_hash"]})
        if rep.errors:
            status = EXIT_PARTIAL
    print(json.dumps(summary, indent=2))
    return status


def cmd_agreement(args: argparse.Namespace, cfg: RunConfig) -> int:
    from .evalkit.agreement import gwet_ac, percent_agreement, read_ratings_csv

    ids, rows = read_ratings_csv(args.ratings)
    categories = _parse_list(args.categories, str)
    if args.scale == "ordinal" and categories is None:
        values = {v for row in rows for v in row if v is not None}
        try:
            categories = sorted(values, key=float)
        except ValueError as exc:
            raise ConfigError("ordinal scale needs --categories unless every rating is numeric") from exc
    ac = gwet_ac(rows, scale=args.scale, categories=categories)
    all_pct, pair_pct = percent_agreement(rows)
    print(json.dumps({"items": len(ids), "raters": max(len(r) for r in rows) if rows else 0, "scale": args.scale,
                      "coefficient": "AC2" if args.scale == "ordinal" else "AC1", "value": ac,
                      "percent_all": all_pct, "percent_pairwise": pair_pct}, indent=2))
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with the same keys as the flags; flags win")
    p.add_argument("--offline", action="store_true", help="use offline implementations for every role (default)")
    p.add_argument("--remote", action="append", choices=ROLES, metavar="ROLE",
                   help=f"serve ROLE from the configured endpoint; one of {', '.join(ROLES)}; repeatable")
    p.add_argument("--jobs", type=int, help="parallel workers")
    p.add_argument("-v", "--verbose", action="store_true")


def _pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k-nodes", dest="k_nodes", type=int)
    p.add_argument("--k-paths", dest="k_paths", type=int)
    p.add_argument("--d-max", dest="d_max", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--max-paths", dest="max_paths", type=int)
    p.add_argument("--no-gating", dest="gating", action="store_const", const=False,
                   help="treat every condition as unknown so all edges stay traversable")


def _graph_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dict", help="synonym TSV (surface<TAB>canonical)")
    p.add_argument("--max-chunk-chars", dest="max_chunk_chars", type=int)
    p.add_argument("--no-inverse", dest="materialize_inverse", action="store_const", const=False)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gatedkg", description="Condition-gated knowledge graph QA")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="corpus directory -> tuples JSONL")
    p.add_argument("corpus")
    p.add_argument("out")
    p.add_argument("--failures", help="failure ledger path (default OUT.failures.jsonl)")
    _common(p)
    _graph_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("build", help="tuples JSONL -> graph JSONL")
    p.add_argument("tuples")
    p.add_argument("out")
    _common(p)
    _graph_flags(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="answer one question over a graph")
    p.add_argument("graph")
    p.add_argument("question")
    p.add_argument("--dump-paths", action="store_true", help="include ranked candidate paths")
    p.add_argument("--dump-verdicts", action="store_true", help="include the condition verdict table")
    _common(p)
    _pipeline_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("evaluate", help="score a dataset, building one graph per item")
    p.add_argument("dataset")
    p.add_argument("--corpus", help="directory holding the documents named by doc_ids")
    p.add_argument("--graph", help="one prebuilt graph shared by every item")
    p.add_argument("--report", required=True)
    p.add_argument("--ablate-gating", action="store_true", help="also run with gating off")
    p.add_argument("--sweep-k-paths", help="comma-separated k_paths values")
    p.add_argument("--sweep-k-nodes", help="comma-separated k_nodes values")
    _common(p)
    _pipeline_flags(p)
    _graph_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("agreement", help="Gwet AC1/AC2 and percent agreement from a ratings CSV")
    p.add_argument("ratings")
    p.add_argument("--scale", choices=("nominal", "ordinal"), default="nominal")
    p.add_argument("--categories", help="comma-separated category order (ordinal scale)")
    _common(p)
    p.set_defaults(func=cmd_agreement)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_run_config(args)
        cfg.remote_roles
        cfg.pipeline()
        echo_config(cfg)
        return args.func(args, cfg)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except (GatedKGError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
