"""Run configuration: a TOML file validated into a fully defaulted ``PipelineConfig``.

Input paths are resolved relative to the config file. ``out_dir`` and
``cache_dir`` are resolved relative to the working directory.

Example::

    seed = 42
    out_dir = "runs"

    [endpoints.upstream]
    api = "https://ru.wikipedia.org/w/api.php"
    [endpoints.fork]
    api = "https://fork.example/w/api.php"

    [paths]
    titles = "titles.txt"
    revlog_upstream = "revlog_upstream.jsonl"
    views = "views.jsonl"
"""

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

STAGES = ("crawl", "diff", "stats", "analyze", "taxonomy", "report")
DEFAULT_OUT_DIR = "forkdiff-runs"

ENDPOINT_KEYS = {"api", "label", "rate_limit", "max_retries", "pageviews_url", "backoff_base", "timeout"}
PATH_KEYS = {"titles", "revlog_upstream", "revlog_fork", "views", "geo", "gazetteer", "prompts"}
SECTION_DEFAULTS = {
    "diff": {"threshold": 0.6},
    "stats": {"resamples": 10000, "sample_size": 1000, "confidence": 0.95, "window": None},
    "analyze": {"top_k_categories": 5, "top_k_references": 10, "top_k_entities": 8, "bot_list": [],
                "office_hours": [8, 17]},
    "taxonomy": {"backend": "mock", "k_min": 2, "k_max": 15, "max_words": 40, "silhouette_sample": 5000,
                 "n_init": 10, "resamples": 10000, "max_workers": 4, "base_url": None,
                 "completion_model": None, "embedding_model": None},
    "crawl": {"workers": 4},
}
TOP_KEYS = {"seed", "out_dir", "cache_dir", "endpoints", "paths", "stages"} | set(SECTION_DEFAULTS)


@dataclass
class EndpointConfig:
    api: str
    label: str
    rate_limit: float = 5.0
    max_retries: int = 5
    pageviews_url: str = None
    backoff_base: float = 1.0
    timeout: float = 30.0

    def to_endpoint(self):
        from .crawl import WikiEndpoint

        return WikiEndpoint(self.api, self.label, self.rate_limit, self.max_retries, self.pageviews_url,
                            self.backoff_base, self.timeout)


@dataclass
class PipelineConfig:
    upstream: EndpointConfig
    fork: EndpointConfig
    paths: dict
    seed: int = 0
    out_dir: str = DEFAULT_OUT_DIR
    cache_dir: str = None
    diff: dict = field(default_factory=lambda: dict(SECTION_DEFAULTS["diff"]))
    stats: dict = field(default_factory=lambda: dict(SECTION_DEFAULTS["stats"]))
    analyze: dict = field(default_factory=lambda: dict(SECTION_DEFAULTS["analyze"]))
    taxonomy: dict = field(default_factory=lambda: dict(SECTION_DEFAULTS["taxonomy"]))
    crawl: dict = field(default_factory=lambda: dict(SECTION_DEFAULTS["crawl"]))
    stages: dict = field(default_factory=lambda: {s: True for s in STAGES})
    source: str = None

    def enabled_stages(self):
        return [s for s in STAGES if self.stages.get(s, True)]

    def identity(self):
        """Everything that determines the results; locations and worker counts excluded."""
        data = asdict(self)
        for key in ("out_dir", "cache_dir", "stages", "source"):
            data.pop(key)
        data["crawl"].pop("workers", None)
        data["taxonomy"].pop("max_workers", None)
        data["paths"] = {k: _digest_path(v) if v else v for k, v in data["paths"].items()}
        return data

    def config_hash(self):
        text = json.dumps(self.identity(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def run_dir(self):
        return Path(self.out_dir) / f"run-{self.config_hash()[:12]}"


def digest_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _digest_path(path):
    """Content digest of a file, or of a directory's files by relative name."""
    path = Path(path)
    if path.is_file():
        return digest_file(path)
    parts = [f"{p.relative_to(path).as_posix()}:{digest_file(p)}" for p in sorted(path.rglob("*")) if p.is_file()]
    return hashlib.sha256("\n".join(parts).encode("utf-8")).hexdigest()


def _check_keys(section, data, valid):
    unknown = sorted(set(data) - set(valid))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)} in [{section}]; valid keys: "
                          f"{', '.join(sorted(valid))}")


def _number(section, key, value, lo, hi, integer=False, lo_open=False, hi_open=False):
    kind = int if integer else (int, float)
    if isinstance(value, bool) or not isinstance(value, kind):
        raise ConfigError(f"[{section}] {key} must be {'an integer' if integer else 'a number'}, got {value!r}")
    below = value <= lo if lo_open else value < lo
    above = hi is not None and (value >= hi if hi_open else value > hi)
    if below or above:
        left = "(" if lo_open else "["
        right = ")" if hi_open else "]"
        raise ConfigError(f"[{section}] {key}={value} out of range {left}{lo}, {hi if hi is not None else 'inf'}{right}")
    return value


def _endpoint(name, data):
    if not isinstance(data, dict):
        raise ConfigError(f"[endpoints.{name}] must be a table")
    _check_keys(f"endpoints.{name}", data, ENDPOINT_KEYS)
    if not data.get("api"):
        raise ConfigError(f"[endpoints.{name}] api is required")
    cfg = EndpointConfig(api=str(data["api"]), label=str(data.get("label", name)))
    if "rate_limit" in data:
        cfg.rate_limit = float(_number(f"endpoints.{name}", "rate_limit", data["rate_limit"], 0, None, lo_open=True))
    if "max_retries" in data:
        cfg.max_retries = _number(f"endpoints.{name}", "max_retries", data["max_retries"], 0, 20, integer=True)
    if "backoff_base" in data:
        cfg.backoff_base = float(_number(f"endpoints.{name}", "backoff_base", data["backoff_base"], 0, 60))
    if "timeout" in data:
        cfg.timeout = float(_number(f"endpoints.{name}", "timeout", data["timeout"], 0, 600, lo_open=True))
    cfg.pageviews_url = data.get("pageviews_url")
    return cfg


STAGE_INPUTS = {
    "crawl": ("titles",),
    "stats": ("revlog_upstream", "views"),
}


def build_config(data, base_dir=".", source=None):
    """Validate a parsed config mapping. Relative input paths resolve against ``base_dir``."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table")
    _check_keys("top level", data, TOP_KEYS)
    base_dir = Path(base_dir)

    endpoints = data.get("endpoints") or {}
    _check_keys("endpoints", endpoints, {"upstream", "fork"})
    for name in ("upstream", "fork"):
        if name not in endpoints:
            raise ConfigError(f"[endpoints.{name}] is required")

    paths = dict(data.get("paths") or {})
    _check_keys("paths", paths, PATH_KEYS)
    if not paths.get("titles"):
        raise ConfigError("[paths] titles is required")
    resolved = {key: None for key in sorted(PATH_KEYS)}
    for key, value in paths.items():
        path = Path(value)
        path = path if path.is_absolute() else base_dir / path
        if not path.exists():
            raise ConfigError(f"[paths] {key}: {path} does not exist")
        resolved[key] = str(path.resolve())

    seed = _number("top level", "seed", data.get("seed", 0), 0, 2 ** 63 - 1, integer=True)
    cfg = PipelineConfig(_endpoint("upstream", endpoints["upstream"]), _endpoint("fork", endpoints["fork"]),
                         resolved, seed=seed, source=source)
    cfg.out_dir = str(data.get("out_dir", DEFAULT_OUT_DIR))
    cfg.cache_dir = data.get("cache_dir")

    for section, defaults in SECTION_DEFAULTS.items():
        given = data.get(section) or {}
        _check_keys(section, given, defaults)
        merged = dict(defaults)
        merged.update(given)
        setattr(cfg, section, merged)

    _number("diff", "threshold", cfg.diff["threshold"], 0, 1, lo_open=True, hi_open=True)
    _number("stats", "resamples", cfg.stats["resamples"], 1, 10 ** 7, integer=True)
    _number("stats", "sample_size", cfg.stats["sample_size"], 1, 10 ** 7, integer=True)
    _number("stats", "confidence", cfg.stats["confidence"], 0, 1, lo_open=True, hi_open=True)
    window = cfg.stats["window"]
    if window is not None and (not isinstance(window, list) or len(window) != 2):
        raise ConfigError("[stats] window must be a [start, end] pair of dates")
    for key in ("top_k_categories", "top_k_references", "top_k_entities"):
        _number("analyze", key, cfg.analyze[key], 1, 1000, integer=True)
    hours = cfg.analyze["office_hours"]
    if not (isinstance(hours, list) and len(hours) == 2 and all(isinstance(h, int) for h in hours)
            and 0 <= hours[0] <= hours[1] <= 23):
        raise ConfigError("[analyze] office_hours must be [first, last] hours within 0..23")
    tax = cfg.taxonomy
    if tax["backend"] not in ("mock", "http"):
        raise ConfigError(f"[taxonomy] backend must be 'mock' or 'http', got {tax['backend']!r}")
    _number("taxonomy", "k_min", tax["k_min"], 2, 1000, integer=True)
    _number("taxonomy", "k_max", tax["k_max"], tax["k_min"], 1000, integer=True)
    _number("taxonomy", "max_words", tax["max_words"], 1, 1000, integer=True)
    _number("taxonomy", "silhouette_sample", tax["silhouette_sample"], 2, 10 ** 6, integer=True)
    _number("taxonomy", "n_init", tax["n_init"], 1, 100, integer=True)
    _number("taxonomy", "resamples", tax["resamples"], 1, 10 ** 7, integer=True)
    _number("taxonomy", "max_workers", tax["max_workers"], 1, 256, integer=True)
    _number("crawl", "workers", cfg.crawl["workers"], 1, 256, integer=True)

    stages = data.get("stages") or {}
    _check_keys("stages", stages, STAGES)
    for name, value in stages.items():
        if not isinstance(value, bool):
            raise ConfigError(f"[stages] {name} must be true or false")
    cfg.stages = {s: stages.get(s, True) for s in STAGES}

    for stage, keys in STAGE_INPUTS.items():
        if cfg.stages[stage]:
            for key in keys:
                if not resolved.get(key):
                    raise ConfigError(f"stage {stage} needs [paths] {key}")
    return cfg


def validate_config(path):
    """Parse and validate a TOML run configuration."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return build_config(data, base_dir=path.parent, source=str(path))
