"""Staged end-to-end runs.

A run lives in ``<out_dir>/run-<config hash prefix>/``::

    crawl/pages.jsonl, crawl/manifest.json
    diffs.jsonl
    stats.json
    analysis/{temporal,geo,categories,references,entities}.csv, analysis/analysis.json
    taxonomy.json
    report/                      bundle with summary.json and MANIFEST.json
    run_manifest.json            stage checksums, versions, timestamps

A stage whose inputs and parameters hash the same as last time, and whose
outputs are still present and unmodified, is skipped. Stage outputs are
written to a staging directory first and moved into place only when the stage
succeeds.
"""

import csv
import hashlib
import json
import logging
import platform
import shutil
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timezone
from importlib import metadata
from pathlib import Path

from .config import STAGES, digest_file
from .errors import DependencyError

logger = logging.getLogger(__name__)

ANALYSIS_FILES = ("temporal.csv", "geo.csv", "categories.csv", "references.csv", "entities.csv", "analysis.json")
OUTPUTS = {
    "crawl": ("crawl/pages.jsonl", "crawl/manifest.json"),
    "diff": ("diffs.jsonl",),
    "stats": ("stats.json",),
    "analyze": tuple(f"analysis/{name}" for name in ANALYSIS_FILES),
    "taxonomy": ("taxonomy.json",),
    "report": ("report/MANIFEST.json",),
}
# artifacts a stage reads from earlier stages
NEEDS = {
    "crawl": (),
    "diff": ("crawl",),
    "stats": ("crawl",),
    "analyze": ("crawl", "diff"),
    "taxonomy": ("diff",),
    "report": ("crawl", "stats", "analyze", "taxonomy"),
}
BUNDLE_DESCRIPTIONS = {
    "summary.json": "headline rates: page status fractions, views share, office-hours shares, taxonomy fit",
    "stats.json": "bootstrap estimates per page status group and metric, views share",
    "temporal.csv": "mean non-bot edits per weekday and hour, fork then upstream",
    "geo.csv": "page status rate per country annotation",
    "categories.csv": "top added and removed categories with share of changed pages",
    "references.csv": "top added and removed reference domains",
    "entities.csv": "top added and deleted named entities with share of text-changed pages",
    "analysis.json": "office-hours shares, table denominators, diagnostics",
    "taxonomy.csv": "final clusters: name, description, size fraction, fit rate before and after correction",
    "taxonomy.json": "full taxonomy with per-edit assignments",
}


@dataclass
class StageRecord:
    status: str
    inputs: dict
    params: str
    outputs: dict
    started_at: str
    finished_at: str


@dataclass
class RunManifest:
    config_hash: str
    versions: dict
    stages: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path, config_hash):
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            return cls(config_hash, _versions())
        stages = {name: StageRecord(**record) for name, record in data.get("stages", {}).items()}
        return cls(data["config_hash"], data.get("versions", {}), stages)

    def save(self, path):
        data = {"config_hash": self.config_hash, "versions": self.versions,
                "stages": {name: asdict(rec) for name, rec in self.stages.items()}}
        tmp = Path(path).with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(data, fh, ensure_ascii=False, indent=2, sort_keys=True)
            fh.write("\n")
        tmp.replace(path)


def _versions():
    out = {"python": platform.python_version()}
    for dist in ("forkdiff", "numpy", "scikit-learn", "requests", "tldextract"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def _now():
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _stage_params(cfg, stage):
    params = {
        "crawl": {"upstream": asdict(cfg.upstream), "fork": asdict(cfg.fork)},
        "diff": cfg.diff,
        "stats": {**cfg.stats, "seed": cfg.seed},
        "analyze": cfg.analyze,
        "taxonomy": {k: v for k, v in cfg.taxonomy.items() if k != "max_workers"} | {"seed": cfg.seed},
        "report": {"stages": cfg.enabled_stages()},
    }[stage]
    text = json.dumps(params, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _external_inputs(cfg, stage):
    keys = {
        "crawl": ("titles",),
        "stats": ("revlog_upstream", "views"),
        "analyze": ("revlog_upstream", "revlog_fork", "geo", "gazetteer"),
        "taxonomy": ("prompts",),
    }.get(stage, ())
    out = {}
    for key in keys:
        path = cfg.paths.get(key)
        if path and Path(path).is_file():
            out[f"paths.{key}"] = digest_file(path)
        elif path:
            out[f"paths.{key}"] = hashlib.sha256(
                "\n".join(f"{p.name}:{digest_file(p)}" for p in sorted(Path(path).glob("*")) if p.is_file())
                .encode("utf-8")).hexdigest()
    return out


class Pipeline:
    """Executes stages of one configured run."""

    def __init__(self, cfg, run_dir=None):
        self.cfg = cfg
        self.run_dir = Path(run_dir) if run_dir else cfg.run_dir()
        self.manifest_path = self.run_dir / "run_manifest.json"

    def path(self, rel):
        return self.run_dir / rel

    def plan(self, stages=None):
        """Stages to consider, in dependency order."""
        requested = set(stages) if stages else set(self.cfg.enabled_stages())
        unknown = requested - set(STAGES)
        if unknown:
            from .errors import ConfigError

            raise ConfigError(f"unknown stage(s) {', '.join(sorted(unknown))}; valid: {', '.join(STAGES)}")
        return [s for s in STAGES if s in requested]

    def _required(self, stage):
        enabled = set(self.cfg.enabled_stages())
        needs = NEEDS[stage]
        if stage == "report":
            needs = tuple(n for n in needs if n in enabled or n == "crawl")
        return needs

    def _check_dependencies(self, stage, will_run):
        for need in self._required(stage):
            if need in will_run:
                continue
            missing = [rel for rel in OUTPUTS[need] if not self.path(rel).exists()]
            if missing:
                raise DependencyError(f"stage '{stage}' needs {missing[0]}; run stage '{need}' first")

    def _inputs(self, stage):
        out = _external_inputs(self.cfg, stage)
        for need in self._required(stage):
            for rel in OUTPUTS[need]:
                out[rel] = digest_file(self.path(rel))
        return out

    def _up_to_date(self, stage, record, inputs, params):
        if record is None or record.inputs != inputs or record.params != params:
            return False
        for rel, digest in record.outputs.items():
            if not self.path(rel).exists() or digest_file(self.path(rel)) != digest:
                return False
        return True

    def describe(self, stages=None, force=False):
        """``(stage, action)`` pairs for a dry run; nothing is executed or written."""
        order = self.plan(stages)
        manifest = RunManifest.load(self.manifest_path, self.cfg.config_hash())
        plan = []
        for i, stage in enumerate(order):
            try:
                self._check_dependencies(stage, set(order[:i]))
            except DependencyError as exc:
                plan.append((stage, f"blocked: {exc}"))
                continue
            if force or any(s in order[:i] and a == "run" for s, a in plan):
                plan.append((stage, "run"))
                continue
            try:
                inputs = self._inputs(stage)
            except FileNotFoundError:
                plan.append((stage, "run"))
                continue
            fresh = self._up_to_date(stage, manifest.stages.get(stage), inputs, _stage_params(self.cfg, stage))
            plan.append((stage, "skip (up to date)" if fresh else "run"))
        return plan

    def run(self, stages=None, force=False):
        order = self.plan(stages)
        for i, stage in enumerate(order):
            self._check_dependencies(stage, set(order[:i]))
        self.run_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest.load(self.manifest_path, self.cfg.config_hash())
        manifest.config_hash = self.cfg.config_hash()
        manifest.versions = _versions()
        for stage in order:
            inputs = self._inputs(stage)
            params = _stage_params(self.cfg, stage)
            previous = manifest.stages.get(stage)
            if not force and self._up_to_date(stage, previous, inputs, params):
                logger.info("stage %s: inputs unchanged, skipped", stage)
                previous.status = "skipped"
                continue
            started = _now()
            logger.info("stage %s: running", stage)
            staging = self.run_dir / ".staging" / stage
            shutil.rmtree(staging, ignore_errors=True)
            staging.mkdir(parents=True)
            try:
                written = getattr(self, f"_stage_{stage}")(staging)
            except BaseException:
                shutil.rmtree(staging, ignore_errors=True)
                raise
            outputs = {}
            for rel in written:
                target = self.path(rel)
                target.parent.mkdir(parents=True, exist_ok=True)
                (staging / rel).replace(target)
                outputs[rel] = digest_file(target)
            shutil.rmtree(self.run_dir / ".staging", ignore_errors=True)
            manifest.stages[stage] = StageRecord("ran", inputs, params, outputs, started, _now())
            manifest.save(self.manifest_path)
        manifest.save(self.manifest_path)
        return manifest

    # -- stages ---------------------------------------------------------------

    def _cache_dir(self, kind):
        from .crawl import default_cache_dir

        base = Path(self.cfg.cache_dir) if self.cfg.cache_dir else default_cache_dir(self.run_dir / "cache")
        return base / kind

    def _stage_crawl(self, staging):
        from .crawl import MediaWikiClient, ResponseCache, crawl, load_title_list

        cache = ResponseCache(self._cache_dir("api"))
        upstream = MediaWikiClient(self.cfg.upstream.to_endpoint(), cache=cache)
        fork = MediaWikiClient(self.cfg.fork.to_endpoint(), cache=cache)
        titles = load_title_list(self.cfg.paths["titles"])
        crawl(upstream, fork, titles, staging / "crawl", workers=self.cfg.crawl["workers"])
        return OUTPUTS["crawl"]

    def _pages(self):
        from .records import read_pages

        return read_pages(self.path("crawl/pages.jsonl"))

    def _stage_diff(self, staging):
        from .diff import WikitextDiffer, write_diffs

        diffs = WikitextDiffer(self.cfg.diff["threshold"]).fit().transform(self._pages())
        write_diffs(staging / "diffs.jsonl", diffs)
        return OUTPUTS["diff"]

    def _stage_stats(self, staging):
        from .stats import read_revlog, read_views, relevance_report

        window = self.cfg.stats["window"]
        if window is not None:
            window = tuple(w if isinstance(w, date) else date.fromisoformat(str(w)) for w in window)
        report = relevance_report(
            self._pages(), read_revlog(self.cfg.paths["revlog_upstream"]),
            read_views(self.cfg.paths["views"]), window,
            n_resamples=self.cfg.stats["resamples"], sample_size=self.cfg.stats["sample_size"],
            confidence=self.cfg.stats["confidence"], seed=_child_seed(self.cfg.seed, "stats"),
        )
        _write_json(staging / "stats.json", report)
        return OUTPUTS["stats"]

    def _stage_analyze(self, staging):
        from .analytics import GazetteerRecognizer, analyze, read_geo
        from .diff import read_diffs
        from .stats import read_revlog

        paths = self.cfg.paths
        recognizer = (GazetteerRecognizer.from_tsv(paths["gazetteer"]) if paths.get("gazetteer")
                      else GazetteerRecognizer.default())
        analyze(
            read_diffs(self.path("diffs.jsonl")), staging / "analysis",
            revlog_upstream=read_revlog(paths["revlog_upstream"]) if paths.get("revlog_upstream") else (),
            revlog_fork=read_revlog(paths["revlog_fork"]) if paths.get("revlog_fork") else (),
            statuses={p.title: p.status.value for p in self._pages()},
            geo=read_geo(paths["geo"]) if paths.get("geo") else (),
            recognizer=recognizer,
            top_k=self.cfg.analyze["top_k_categories"],
            top_k_references=self.cfg.analyze["top_k_references"],
            top_k_entities=self.cfg.analyze["top_k_entities"],
            bot_list=tuple(self.cfg.analyze["bot_list"]),
            office_hours=tuple(self.cfg.analyze["office_hours"]),
        )
        return OUTPUTS["analyze"]

    def _stage_taxonomy(self, staging):
        from .diff import read_diffs
        from .taxonomy.backend import make_backend
        from .taxonomy.pipeline import EditTaxonomy, write_taxonomy

        tax = self.cfg.taxonomy
        cache = self._cache_dir("llm") if tax["backend"] == "http" else None
        backend = make_backend(tax["backend"], cache_dir=cache, base_url=tax["base_url"],
                               completion_model=tax["completion_model"], embedding_model=tax["embedding_model"])
        model = EditTaxonomy(
            backend=backend, seed=_child_seed(self.cfg.seed, "taxonomy"), k_range=(tax["k_min"], tax["k_max"]),
            max_words=tax["max_words"], n_resamples=tax["resamples"], silhouette_sample=tax["silhouette_sample"],
            n_init=tax["n_init"], max_workers=tax["max_workers"], prompts_dir=self.cfg.paths.get("prompts"),
        ).fit(read_diffs(self.path("diffs.jsonl")))
        write_taxonomy(model.report_, staging / "taxonomy.json")
        return OUTPUTS["taxonomy"]

    def _stage_report(self, staging):
        return emit_report(self.run_dir, staging / "report", self.cfg.config_hash())


def _child_seed(seed, stage):
    from .stats import derive_seed

    return derive_seed(seed, stage)


def _write_json(path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def emit_report(run_dir, out_dir, config_hash=None):
    """Assemble the report bundle from whatever stage artifacts exist in ``run_dir``.

    Returns the bundle paths relative to ``out_dir.parent``. The bundle has no
    timestamps or absolute paths, so equal inputs give byte-identical files.
    """
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    crawl_manifest = _read_json(run_dir / "crawl" / "manifest.json")
    counts = crawl_manifest["counts"]
    total = sum(counts.values())
    summary = {
        "pages": total,
        "counts": counts,
        "fractions": {k: (v / total if total else 0.0) for k, v in sorted(counts.items())},
        "blocked": len(crawl_manifest.get("blocked", [])),
        "needs_review": len(crawl_manifest.get("needs_review", [])),
    }
    files = []
    if (run_dir / "stats.json").exists():
        stats = _read_json(run_dir / "stats.json")
        summary["views_share"] = stats["views_share"]
        shutil.copyfile(run_dir / "stats.json", out_dir / "stats.json")
        files.append("stats.json")
    if (run_dir / "analysis").is_dir():
        analysis = _read_json(run_dir / "analysis" / "analysis.json")
        summary["office_hours_share"] = {
            side: analysis.get(f"office_hours_share_{side}") for side in ("fork", "upstream")
        }
        for name in ANALYSIS_FILES:
            shutil.copyfile(run_dir / "analysis" / name, out_dir / name)
            files.append(name)
    if (run_dir / "taxonomy.json").exists():
        taxonomy = _read_json(run_dir / "taxonomy.json")
        summary["taxonomy"] = {
            "k": taxonomy["k"],
            "eligible_edits": taxonomy["counts"]["eligible"],
            "ecfr_pre": taxonomy["ecfr"]["pre"],
            "ecfr_post": taxonomy["ecfr"]["post"],
        }
        with open(out_dir / "taxonomy.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["rank", "name", "description", "size", "size_fraction", "ecfr_pre", "ecfr_post"])
            for rank, c in enumerate(taxonomy["clusters"], 1):
                pre = c["ecfr_pre"]["rate"] if c["ecfr_pre"] else ""
                post = c["ecfr_post"]["rate"] if c["ecfr_post"] else ""
                writer.writerow([rank, c["name"], c["description"], c["size"], f"{c['size_fraction']:.6f}",
                                 pre if pre == "" else f"{pre:.6f}", post if post == "" else f"{post:.6f}"])
        shutil.copyfile(run_dir / "taxonomy.json", out_dir / "taxonomy.json")
        files += ["taxonomy.csv", "taxonomy.json"]
    _write_json(out_dir / "summary.json", summary)
    files.insert(0, "summary.json")
    bundle = {
        "config_hash": config_hash,
        "files": [
            {"path": name, "sha256": digest_file(out_dir / name), "bytes": (out_dir / name).stat().st_size,
             "description": BUNDLE_DESCRIPTIONS[name]}
            for name in files
        ],
    }
    _write_json(out_dir / "MANIFEST.json", bundle)
    return [f"{out_dir.name}/{name}" for name in files + ["MANIFEST.json"]]


def run_pipeline(cfg, stages=None, run_dir=None, force=False):
    """Run the requested stages (default: all enabled) and return the RunManifest."""
    return Pipeline(cfg, run_dir).run(stages, force=force)
