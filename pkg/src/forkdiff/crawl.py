"""Fetch fork/upstream page state from two MediaWiki Action APIs and establish lineage.

Every API response goes through a content-addressed on-disk cache, so a crawl
can be interrupted and resumed, and re-running it against unchanged data
produces byte-identical output.
"""

import calendar
import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .errors import EmptyInputError, PreconditionError, TransportError
from .records import (
    PageRecord,
    RevisionMeta,
    Status,
    looks_like_bot,
    parse_timestamp,
    write_jsonl,
)

logger = logging.getLogger(__name__)

HISTORY_PAGE_SIZE = 500
USER_AGENT = "forkdiff/0.1 (wiki fork comparison; https://www.mediawiki.org/wiki/API:Etiquette)"
RETRYABLE_API_ERRORS = {"maxlag", "ratelimited", "readonly"}
_MONTH = re.compile(r"^(\d{4})-(0[1-9]|1[0-2])$")


@dataclass(frozen=True)
class WikiEndpoint:
    base_url: str
    label: str
    rate_limit: float = 5.0
    max_retries: int = 5
    pageviews_url: str = None  # REST template with {article}, {start}, {end}
    backoff_base: float = 1.0
    timeout: float = 30.0

    def __post_init__(self):
        if not self.base_url:
            raise PreconditionError("endpoint base_url must be non-empty")
        if not self.rate_limit > 0:
            raise PreconditionError(f"rate_limit must be > 0, got {self.rate_limit}")
        if self.max_retries < 0:
            raise PreconditionError(f"max_retries must be >= 0, got {self.max_retries}")


@dataclass
class CrawlManifest:
    titles: list
    fetched_at: str
    counts: dict
    blocked: list = field(default_factory=list)
    needs_review: list = field(default_factory=list)

    def to_dict(self):
        return {
            "titles": self.titles,
            "fetched_at": self.fetched_at,
            "counts": self.counts,
            "blocked": self.blocked,
            "needs_review": self.needs_review,
        }


class TokenBucket:
    """Shared per-endpoint limiter: consecutive acquisitions are at least
    ``1 / rate`` seconds apart."""

    def __init__(self, rate, clock=time.monotonic, sleep=time.sleep):
        self.interval = 1.0 / rate
        self.clock = clock
        self.sleep = sleep
        self._next = None
        self._lock = threading.Lock()

    def acquire(self):
        with self._lock:
            now = self.clock()
            if self._next is None or self._next <= now:
                slot = now
            else:
                slot = self._next
            self._next = slot + self.interval
        wait = slot - now
        if wait > 0:
            self.sleep(wait)


def _canonical_request(url, params):
    return json.dumps([url, sorted((str(k), str(v)) for k, v in (params or {}).items())],
                      ensure_ascii=False, separators=(",", ":"))


class ResponseCache:
    """Content-addressed JSON cache keyed by (endpoint label, canonical request)."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def _path(self, label, request):
        digest = hashlib.sha256(f"{label}\n{request}".encode("utf-8")).hexdigest()
        return self.directory / label / digest[:2] / f"{digest}.json"

    def get(self, label, request):
        path = self._path(label, request)
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            logger.warning("discarding corrupt cache entry %s", path)
            return None

    def put(self, label, request, entry):
        path = self._path(label, request)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(entry, fh, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def default_cache_dir(fallback):
    return Path(os.environ.get("FORKDIFF_CACHE_DIR") or fallback)


class HttpTransport:
    """requests-backed transport returning ``(status_code, json_body_or_None)``."""

    def __init__(self, session=None, timeout=30.0, user_agent=USER_AGENT):
        self.session = session or requests.Session()
        self.session.headers.setdefault("User-Agent", user_agent)
        self.timeout = timeout

    def get(self, url, params=None):
        response = self.session.get(url, params=params, timeout=self.timeout)
        try:
            body = response.json()
        except ValueError:
            body = None
        return response.status_code, body


def transport_for(endpoint):
    if endpoint.base_url.startswith("fixture:"):
        from .fixtures import FixtureTransport

        return FixtureTransport.from_url(endpoint.base_url)
    return HttpTransport(timeout=endpoint.timeout)


class MediaWikiClient:
    """Rate-limited, retrying, caching reader for one MediaWiki endpoint."""

    def __init__(self, endpoint, transport=None, cache=None, clock=time.monotonic,
                 sleep=time.sleep, wall_clock=time.time):
        self.endpoint = endpoint
        self.transport = transport or transport_for(endpoint)
        self.cache = cache
        self.sleep = sleep
        self.wall_clock = wall_clock
        self.limiter = TokenBucket(endpoint.rate_limit, clock=clock, sleep=sleep)
        self.blocked_titles = set()
        self.latest_fetch = None
        self._lock = threading.Lock()

    def _note_fetch(self, fetched_at):
        with self._lock:
            if self.latest_fetch is None or fetched_at > self.latest_fetch:
                self.latest_fetch = fetched_at

    def request(self, params, url=None):
        """GET with cache, rate limit and exponential backoff.

        Returns ``(status, body)``. 2xx, 403 and 404 are final (and cached);
        network errors, 429, 5xx and retryable API errors are retried
        ``max_retries`` times before raising TransportError.
        """
        url = url or self.endpoint.base_url
        key = _canonical_request(url, params)
        if self.cache is not None:
            hit = self.cache.get(self.endpoint.label, key)
            if hit is not None:
                self._note_fetch(hit["fetched_at"])
                return hit["status"], hit["body"]

        last_problem = None
        for attempt in range(self.endpoint.max_retries + 1):
            if attempt:
                self.sleep(self.endpoint.backoff_base * 2 ** (attempt - 1))
            self.limiter.acquire()
            try:
                status, body = self.transport.get(url, params)
            except (requests.RequestException, OSError) as exc:
                last_problem = f"{type(exc).__name__}: {exc}"
                continue
            if status == 429 or status >= 500:
                last_problem = f"HTTP {status}"
                continue
            error = (body or {}).get("error") if isinstance(body, dict) else None
            if error:
                code = error.get("code", "unknown")
                if code in RETRYABLE_API_ERRORS:
                    last_problem = f"API error {code}"
                    continue
                raise TransportError(f"{self.endpoint.label}: API error {code}: {error.get('info', '')}")
            if status not in (403, 404) and not 200 <= status < 300:
                raise TransportError(f"{self.endpoint.label}: unexpected HTTP {status} for {url}")
            fetched_at = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(self.wall_clock()))
            if self.cache is not None:
                self.cache.put(self.endpoint.label, key,
                               {"request": key, "status": status, "body": body, "fetched_at": fetched_at})
            self._note_fetch(fetched_at)
            return status, body
        raise TransportError(
            f"{self.endpoint.label}: giving up after {self.endpoint.max_retries} retries ({last_problem})"
        )

    # -- revision queries ---------------------------------------------------

    def _revision_params(self, **extra):
        params = {
            "action": "query",
            "prop": "revisions",
            "rvprop": "ids|timestamp|user|comment",
            "rvslots": "main",
            "format": "json",
            "formatversion": "2",
        }
        params.update(extra)
        return params

    def last_revision(self, title):
        params = self._revision_params(titles=title, rvlimit="1")
        params["rvprop"] += "|content"
        status, body = self.request(params)
        if status in (403, 404):
            if status == 403:
                with self._lock:
                    self.blocked_titles.add(title)
            return None
        page = _first_page(body)
        if page is None or page.get("missing") or page.get("invalid") or not page.get("revisions"):
            return None
        rev = page["revisions"][0]
        return _revision_meta(rev), _revision_content(rev)

    def iter_history(self, title):
        """Yield RevisionMeta newest-first, following API continuation."""
        params = self._revision_params(titles=title, rvlimit=str(HISTORY_PAGE_SIZE), rvdir="older")
        while True:
            status, body = self.request(params)
            if status in (403, 404):
                return
            page = _first_page(body)
            if page is None or page.get("missing") or page.get("invalid"):
                return
            for rev in page.get("revisions", []):
                yield _revision_meta(rev)
            cont = body.get("continue") if isinstance(body, dict) else None
            if not cont:
                return
            if "rvcontinue" not in cont:
                raise TransportError(f"{self.endpoint.label}: malformed continuation token {cont!r}")
            params = {**params, **{k: str(v) for k, v in cont.items()}}

    def history(self, title, until=None, stop=None):
        revisions = []
        for rev in self.iter_history(title):
            revisions.append(rev)
            if (until is not None and rev.rev_id == until) or (stop is not None and stop(rev)):
                break
        return revisions

    def revision_content(self, rev_id):
        params = self._revision_params(revids=str(rev_id))
        params["rvprop"] += "|content"
        status, body = self.request(params)
        if status in (403, 404):
            return None
        page = _first_page(body)
        if not page or not page.get("revisions"):
            return None
        return _revision_content(page["revisions"][0])

    def monthly_views(self, title, month):
        match = _MONTH.match(month or "")
        if not match:
            raise PreconditionError(f"month must be YYYY-MM, got {month!r}")
        year, mon = int(match.group(1)), int(match.group(2))
        last_day = calendar.monthrange(year, mon)[1]
        if self.endpoint.pageviews_url:
            url = self.endpoint.pageviews_url.format(
                article=requests.utils.quote(title.replace(" ", "_"), safe=""),
                start=f"{year:04d}{mon:02d}01",
                end=f"{year:04d}{mon:02d}{last_day:02d}",
            )
            status, body = self.request({}, url=url)
            if status in (403, 404) or not body:
                return 0
            return int(sum(item.get("views", 0) for item in body.get("items", [])))
        status, body = self.request({
            "action": "query",
            "prop": "pageviews",
            "titles": title,
            "pvipdays": "60",
            "format": "json",
            "formatversion": "2",
        })
        page = _first_page(body) if status == 200 else None
        daily = (page or {}).get("pageviews") or {}
        return int(sum(v or 0 for day, v in daily.items() if day.startswith(month)))


def _first_page(body):
    if not isinstance(body, dict):
        return None
    pages = body.get("query", {}).get("pages")
    if isinstance(pages, dict):  # formatversion=1
        pages = list(pages.values())
    return pages[0] if pages else None


def _revision_meta(rev):
    user = rev.get("user", "")
    return RevisionMeta(
        rev_id=int(rev["revid"]),
        parent_id=int(rev.get("parentid", 0)),
        timestamp=parse_timestamp(rev["timestamp"]),
        user=user,
        is_bot=looks_like_bot(user),
        comment=rev.get("comment", ""),
    )


def _revision_content(rev):
    slot = rev.get("slots", {}).get("main", rev)
    content = slot.get("content", slot.get("*"))
    return content if content is not None else ""


def _client(endpoint_or_client):
    if isinstance(endpoint_or_client, MediaWikiClient):
        return endpoint_or_client
    return MediaWikiClient(endpoint_or_client)


# -- module-level operations ------------------------------------------------


def load_title_list(path):
    """Read one title per line, dropping blanks and duplicates (first wins)."""
    with open(path, encoding="utf-8") as fh:
        titles = [line.strip() for line in fh]
    titles = list(dict.fromkeys(t for t in titles if t))
    if not titles:
        raise EmptyInputError(f"{path}: no titles")
    return titles


def fetch_last_revision(endpoint, title):
    """Newest revision ``(RevisionMeta, wikitext)``, or None if the page is gone."""
    return _client(endpoint).last_revision(title)


def fetch_history(endpoint, title, until=None):
    """Revisions newest-first, stopping after ``until`` when it is found."""
    return _client(endpoint).history(title, until=until)


def fetch_monthly_views(endpoint, title, month):
    return _client(endpoint).monthly_views(title, month)


def match_lineage(fork_history, upstream_history):
    """Locate the fork's upstream parent revision.

    Both histories are newest-first. Only (rev_id, parent_id) pairs are
    compared. Returns ``(Status.DUPLICATED, rev)`` when the fork's newest
    revision exists upstream, ``(Status.CHANGED, rev)`` for the newest shared
    revision otherwise, and ``(Status.CHANGED, None)`` when nothing is shared.
    """
    if not fork_history:
        raise PreconditionError("fork history must be non-empty")
    upstream = {}
    for rev in upstream_history:
        upstream.setdefault(rev.key, rev)
    if fork_history[0].key in upstream:
        return Status.DUPLICATED, upstream[fork_history[0].key]
    for rev in fork_history[1:]:
        if rev.key in upstream:
            return Status.CHANGED, upstream[rev.key]
    return Status.CHANGED, None


def crawl_page(title, upstream, fork):
    """Build the PageRecord for one title. Returns ``(record, needs_review)``."""
    latest = fork.last_revision(title)
    if latest is None:
        return PageRecord(title=title, status=Status.MISSING), False
    fork_last, fork_text = latest

    upstream_history = upstream.history(title)
    upstream_keys = {rev.key for rev in upstream_history}
    if fork_last.key in upstream_keys:
        status, parent = match_lineage([fork_last], upstream_history)
        return PageRecord(title, status, fork_last_rev=fork_last, upstream_parent_rev=parent), False

    fork_history = fork.history(title, stop=lambda rev: rev.key in upstream_keys)
    if not fork_history or fork_history[0].rev_id != fork_last.rev_id:
        fork_history = [fork_last] + [r for r in fork_history if r.rev_id != fork_last.rev_id]
    status, parent = match_lineage(fork_history, upstream_history)
    if parent is None:
        logger.warning("%s: no shared revision with upstream; flagged for review", title)
        newest = upstream.last_revision(title)
        base_text = newest[1] if newest else ""
        return PageRecord(title, Status.CHANGED, fork_last_rev=fork_last,
                          fork_text=fork_text, upstream_text=base_text), True
    base_text = upstream.revision_content(parent.rev_id)
    if base_text is None:
        raise TransportError(f"{title}: upstream revision {parent.rev_id} content unavailable")
    return PageRecord(title, Status.CHANGED, fork_last_rev=fork_last, upstream_parent_rev=parent,
                      fork_text=fork_text, upstream_text=base_text), False


def crawl(upstream, fork, titles, out_dir, workers=4):
    """Crawl ``titles`` and write ``pages.jsonl`` and ``manifest.json`` into ``out_dir``.

    ``upstream`` and ``fork`` are MediaWikiClients (or endpoints). Output order
    follows ``titles`` regardless of worker scheduling.
    """
    upstream, fork = _client(upstream), _client(fork)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda t: crawl_page(t, upstream, fork), titles))

    records = [record for record, _ in results]
    counts = {status.value: 0 for status in Status}
    for record in records:
        counts[record.status.value] += 1
    fetched = [ts for ts in (upstream.latest_fetch, fork.latest_fetch) if ts]
    manifest = CrawlManifest(
        titles=list(titles),
        fetched_at=max(fetched) if fetched else "",
        counts=counts,
        blocked=sorted(fork.blocked_titles),
        needs_review=[record.title for record, flag in results if flag],
    )
    write_jsonl(out_dir / "pages.jsonl", (record.to_dict() for record in records))
    with open(out_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest.to_dict(), fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    return manifest
