"""Command-line entry point: ``forkdiff <crawl|diff|stats|analyze|taxonomy|report|run>``.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 missing
stage dependency, 3 transport failure, 4 bad input data.
"""

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path

from .errors import ConfigError, ForkdiffError

logger = logging.getLogger("forkdiff")


def _date(text):
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from None


def _open_unit(text):
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {value}")
    return value


def _write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def cmd_crawl(args):
    from .crawl import MediaWikiClient, ResponseCache, WikiEndpoint, crawl, default_cache_dir, load_title_list

    cache = ResponseCache(default_cache_dir(args.cache_dir or Path(args.out) / "cache"))
    clients = [
        MediaWikiClient(WikiEndpoint(url, label, rate_limit=args.rate_limit, max_retries=args.max_retries),
                        cache=cache)
        for url, label in ((args.upstream_api, "upstream"), (args.fork_api, "fork"))
    ]
    manifest = crawl(clients[0], clients[1], load_title_list(args.titles), args.out, workers=args.workers)
    print(json.dumps(manifest.counts, sort_keys=True))


def cmd_diff(args):
    from .diff import WikitextDiffer, write_diffs
    from .records import read_pages

    diffs = WikitextDiffer(args.threshold).fit().transform(read_pages(args.pages))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_diffs(args.out, diffs)
    print(f"{len(diffs)} diffs written to {args.out}")


def cmd_stats(args):
    from .records import read_pages
    from .stats import read_revlog, read_views, relevance_report

    window = tuple(args.window) if args.window else None
    report = relevance_report(read_pages(args.pages), read_revlog(args.revlog), read_views(args.views), window,
                              n_resamples=args.resamples, sample_size=args.sample_size,
                              confidence=args.confidence, seed=args.seed)
    _write_json(args.out, report)
    print(f"statistics written to {args.out}")


def cmd_analyze(args):
    from .analytics import GazetteerRecognizer, HttpRecognizer, SubprocessRecognizer, analyze, read_geo
    from .diff import read_diffs
    from .records import read_pages
    from .stats import read_revlog

    if args.ner_command:
        recognizer = SubprocessRecognizer(args.ner_command)
    elif args.ner_url:
        recognizer = HttpRecognizer(args.ner_url)
    elif args.gazetteer:
        recognizer = GazetteerRecognizer.from_tsv(args.gazetteer)
    else:
        recognizer = GazetteerRecognizer.default()
    statuses = {p.title: p.status.value for p in read_pages(args.pages)} if args.pages else None
    if args.geo and not statuses:
        raise ConfigError("--geo needs --pages to know each page's status")
    analyze(
        read_diffs(args.diffs), args.out,
        revlog_upstream=read_revlog(args.revlog_upstream) if args.revlog_upstream else (),
        revlog_fork=read_revlog(args.revlog_fork) if args.revlog_fork else (),
        statuses=statuses,
        geo=read_geo(args.geo) if args.geo else (),
        recognizer=recognizer,
        top_k=args.top_k, top_k_references=args.top_k_references, top_k_entities=args.top_k_entities,
        bot_list=tuple(args.bot or ()),
    )
    print(f"analysis tables written to {args.out}")


def cmd_taxonomy(args):
    from .diff import read_diffs
    from .taxonomy.backend import make_backend
    from .taxonomy.pipeline import EditTaxonomy

    backend = make_backend(args.backend, cache_dir=args.cache_dir, base_url=args.base_url,
                           completion_model=args.completion_model, embedding_model=args.embedding_model)
    model = EditTaxonomy(backend=backend, seed=args.seed, k_range=(args.k_min, args.k_max),
                         n_resamples=args.resamples, max_workers=args.workers,
                         prompts_dir=args.prompts).fit(read_diffs(args.diffs))
    _write_json(args.out, model.report_)
    for c in model.report_["clusters"]:
        print(f"{c['size_fraction']:7.2%}  {c['name']}")


def _load_config(args):
    from .config import validate_config
    from .fixtures import fixture_dir

    path = fixture_dir() / "run.toml" if args.config == "bundled" else args.config
    cfg = validate_config(path)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    return cfg


def _run(args, stages):
    from .config import STAGES
    from .orchestrator import Pipeline

    cfg = _load_config(args)
    pipeline = Pipeline(cfg)
    if args.dry_run:
        print(f"run directory: {pipeline.run_dir}")
        for stage, action in pipeline.describe(stages, force=args.force):
            print(f"  {stage:<9} {action}")
        return
    manifest = pipeline.run(stages, force=args.force)
    for stage in STAGES:
        record = manifest.stages.get(stage)
        if record and (stages is None or stage in stages):
            print(f"{stage:<9} {record.status}")
    print(f"run directory: {pipeline.run_dir}")


def cmd_run(args):
    stages = [s.strip() for s in args.stages.split(",") if s.strip()] if args.stages else None
    _run(args, stages)


def cmd_report(args):
    _run(args, ["report"])


def _add_run_options(parser, stages=True):
    parser.add_argument("--config", required=True,
                        help="TOML run configuration, or 'bundled' for the sample corpus")
    parser.add_argument("--out-dir", help="override the configured out_dir")
    if stages:
        parser.add_argument("--stages", help="comma-separated subset of crawl,diff,stats,analyze,taxonomy,report")
    parser.add_argument("--dry-run", action="store_true", help="print the plan without running")
    parser.add_argument("--force", action="store_true", help="re-run stages even if up to date")


class _Parser(argparse.ArgumentParser):
    # usage errors share the configuration exit code; 2 means a missing stage dependency
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="forkdiff", description="Compare a MediaWiki fork with its upstream.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("crawl", help="classify pages and fetch fork/base revisions")
    p.add_argument("--upstream-api", required=True)
    p.add_argument("--fork-api", required=True)
    p.add_argument("--titles", required=True)
    p.add_argument("--out", required=True, help="output directory for pages.jsonl and manifest.json")
    p.add_argument("--cache-dir")
    p.add_argument("--rate-limit", type=float, default=5.0, help="requests per second per endpoint")
    p.add_argument("--max-retries", type=int, default=5)
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(func=cmd_crawl)

    p = sub.add_parser("diff", help="structural diffs of changed pages")
    p.add_argument("--pages", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=_open_unit, default=0.6)
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("stats", help="bootstrap relevance statistics per page status")
    p.add_argument("--pages", required=True)
    p.add_argument("--revlog", required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--resamples", type=int, default=10000)
    p.add_argument("--sample-size", type=int, default=1000)
    p.add_argument("--confidence", type=_open_unit, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", nargs=2, type=_date, metavar=("START", "END"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("analyze", help="temporal, geographic, category, reference and entity tables")
    p.add_argument("--diffs", required=True)
    p.add_argument("--revlog-upstream")
    p.add_argument("--revlog-fork")
    p.add_argument("--geo")
    p.add_argument("--pages", help="pages.jsonl, needed for the geo table")
    p.add_argument("--gazetteer")
    p.add_argument("--ner-command", help="external recognizer: JSON {text} on stdin, entity list on stdout")
    p.add_argument("--ner-url", help="external recognizer over HTTP with the same JSON contract")
    p.add_argument("--bot", action="append", help="extra bot account name (repeatable)")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--top-k-references", type=int, default=10)
    p.add_argument("--top-k-entities", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("taxonomy", help="summarise, cluster, name, evaluate and correct edits")
    p.add_argument("--diffs", required=True)
    p.add_argument("--backend", choices=("mock", "http"), default="mock")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--cache-dir")
    p.add_argument("--prompts", help="directory overriding prompt templates")
    p.add_argument("--base-url")
    p.add_argument("--completion-model")
    p.add_argument("--embedding-model")
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=15)
    p.add_argument("--resamples", type=int, default=10000)
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(func=cmd_taxonomy)

    p = sub.add_parser("report", help="assemble the report bundle of a configured run")
    _add_run_options(p, stages=False)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="run pipeline stages from a config file")
    _add_run_options(p)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ForkdiffError as exc:
        print(f"forkdiff {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"forkdiff {args.command}: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
