"""meo command line: operator surface over the observatory.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import date
from pathlib import Path

from .config import Config, load_config
from .errors import ObservatoryError
from .indexing import Fusion, HybridQuery, SearchFilters
from .ledger import Interval
from .observatory import Observatory
from .platforms import Platform
from .seeds import SeedRegistry


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meo", description="media ecosystem observatory")
    parser.add_argument("--config", type=Path, default=None, help="path to config YAML")
    parser.add_argument("--data-dir", type=Path, default=None, help="override storage root")
    sub = parser.add_subparsers(dest="command", required=True)

    seeds = sub.add_parser("seeds", help="seed list management")
    seeds_sub = seeds.add_subparsers(dest="seeds_command", required=True)
    seeds_import = seeds_sub.add_parser("import", help="load a seed CSV into the registry")
    seeds_import.add_argument("file", type=Path)
    seeds_validate = seeds_sub.add_parser("validate", help="check a seed CSV without loading")
    seeds_validate.add_argument("file", type=Path)

    crawl = sub.add_parser("crawl", help="crawling")
    crawl_sub = crawl.add_subparsers(dest="crawl_command", required=True)
    crawl_run = crawl_sub.add_parser("run", help="run the pipeline for one platform")
    crawl_run.add_argument("--platform", required=True)
    crawl_run.add_argument("--handles", default=None, help="comma-separated; default all")
    crawl_run.add_argument("--from", dest="date_from", required=True)
    crawl_run.add_argument("--to", dest="date_to", required=True)

    gaps = sub.add_parser("gaps", help="coverage gaps")
    gaps_sub = gaps.add_subparsers(dest="gaps_command", required=True)
    gaps_detect = gaps_sub.add_parser("detect", help="list uncovered day intervals")
    gaps_detect.add_argument("--platform", required=True)
    gaps_detect.add_argument("--handle", default=None)
    gaps_detect.add_argument("--from", dest="date_from", required=True)
    gaps_detect.add_argument("--to", dest="date_to", required=True)
    gaps_detect.add_argument("--enqueue", action="store_true", help="also emit backfill tasks")

    backfill = sub.add_parser("backfill", help="backfill tasks")
    backfill_sub = backfill.add_subparsers(dest="backfill_command", required=True)
    backfill_run = backfill_sub.add_parser("run", help="consume pending backfill tasks")
    backfill_run.add_argument("--limit", type=int, default=None)

    query = sub.add_parser("query", help="search indexed posts")
    query.add_argument("--q", required=True)
    query.add_argument("--mode", choices=["lexical", "semantic", "hybrid"], default="lexical")
    query.add_argument("-k", type=int, default=10)
    query.add_argument("--platform", action="append", default=None)

    stats = sub.add_parser("stats", help="summary tables")
    stats.add_argument("--table", choices=["table2", "distribution"], default="table2")

    export = sub.add_parser("export", help="dump unified posts")
    export.add_argument("--format", choices=["ndjson", "csv"], default="ndjson")
    export.add_argument("--from", dest="date_from", default=None)
    export.add_argument("--to", dest="date_to", default=None)
    export.add_argument("--out", type=Path, default=None)

    serve = sub.add_parser("serve", help="start the REST API")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8300)

    return parser


def _load_observatory(args) -> Observatory:
    config = load_config(args.config) if args.config else load_config()
    if args.data_dir is not None:
        config.storage_root = args.data_dir
    return Observatory(config)


def _window(args) -> Interval:
    return Interval(date.fromisoformat(args.date_from), date.fromisoformat(args.date_to))


def _cmd_seeds(args) -> int:
    if args.seeds_command == "validate":
        registry = SeedRegistry()
        report = registry.import_seeds(args.file)
        for row, reason in report.rejected:
            print(f"row {row}: {reason}", file=sys.stderr)
        print(f"accepted: {report.accepted}, rejected: {len(report.rejected)}")
        return 1 if report.rejected else 0
    obs = _load_observatory(args)
    report = obs.import_seeds(args.file)
    for row, reason in report.rejected:
        print(f"row {row}: {reason}", file=sys.stderr)
    print(f"accepted: {report.accepted}, rejected: {len(report.rejected)}")
    return 1 if report.rejected else 0


def _cmd_crawl(args) -> int:
    obs = _load_observatory(args)
    platform = Platform(args.platform)
    handles = args.handles.split(",") if args.handles else None
    report = obs.crawl(platform, _window(args), handles)
    print(json.dumps(report.to_json(), indent=1))
    return 0 if report.ok else 1


def _cmd_gaps(args) -> int:
    obs = _load_observatory(args)
    platform = Platform(args.platform)
    window = _window(args)
    found = obs.detect_gaps(platform, window, args.handle)
    print(json.dumps(found, indent=1))
    if args.enqueue:
        created = 0
        for gap in found:
            created += len(obs.enqueue_backfills(
                platform, gap["handle"],
                [Interval(date.fromisoformat(gap["start"]), date.fromisoformat(gap["end"]))],
            ))
        print(f"enqueued: {created}", file=sys.stderr)
    return 0


def _cmd_backfill(args) -> int:
    obs = _load_observatory(args)
    reports = obs.run_backfills(limit=args.limit)
    print(json.dumps([r.to_json() for r in reports], indent=1))
    return 0 if all(r.ok for r in reports) else 1


def _cmd_query(args) -> int:
    obs = _load_observatory(args)
    filters = SearchFilters(
        platforms=frozenset(Platform(p) for p in args.platform) if args.platform else None
    )
    if args.mode == "lexical":
        ranked = obs.engine.search_lexical(args.q, filters, args.k)
    elif args.mode == "semantic":
        vec = obs.engine.embed(args.q)
        if vec is None:
            raise ObservatoryError("query embeds to null")
        ranked = obs.engine.search_semantic(vec, filters, args.k)
    else:
        ranked = obs.engine.search_hybrid(
            HybridQuery(text=args.q, filters=filters, k=args.k, fusion=Fusion.RRF)
        )
    for post_id, score in ranked:
        doc = obs.engine.unified.doc(post_id)
        print(f"{score:.6f}\t{post_id}\t{doc['text'][:80]}")
    return 0


def _cmd_stats(args) -> int:
    obs = _load_observatory(args)
    if args.table == "table2":
        print(obs.render_table2(), end="")
    else:
        print(obs.distribution().render(), end="")
    return 0


def _cmd_export(args) -> int:
    obs = _load_observatory(args)
    window = None
    if args.date_from and args.date_to:
        window = Interval(date.fromisoformat(args.date_from), date.fromisoformat(args.date_to))
    if args.format == "ndjson":
        text = "\n".join(obs.export_ndjson(window))
        text = text + "\n" if text else ""
    else:
        text = obs.export_csv(window)
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app

    obs = _load_observatory(args)
    if not obs.config.api_tokens:
        print("warning: no api tokens configured; every request will get 401", file=sys.stderr)
    uvicorn.run(create_app(obs), host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "seeds": _cmd_seeds,
    "crawl": _cmd_crawl,
    "gaps": _cmd_gaps,
    "backfill": _cmd_backfill,
    "query": _cmd_query,
    "stats": _cmd_stats,
    "export": _cmd_export,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ObservatoryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
