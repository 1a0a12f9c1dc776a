"""Per-page relevance metrics and bootstrap estimates of group means.

Resampling uses numpy's PCG64 bit generator seeded through ``SeedSequence``;
given the same seed and inputs the resample indices, and so every estimate,
are reproduced exactly.
"""

import hashlib
import ipaddress
import logging
from dataclasses import asdict, dataclass
from datetime import date

import numpy as np

from .errors import DataError, PreconditionError
from .records import Status, parse_rows, parse_timestamp

logger = logging.getLogger(__name__)

METRICS = ("monthly_views", "edit_count", "ip_edit_rate", "revert_rate")
_CHUNK_ROWS = 256


def derive_seed(seed, *labels):
    """Stable 63-bit child seed for a (seed, label, ...) path."""
    text = "/".join([str(seed)] + [str(label) for label in labels])
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big") >> 1


def is_ip_literal(user):
    try:
        ipaddress.ip_address((user or "").strip())
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class RevisionLogEntry:
    title: str
    rev_id: int
    timestamp: object
    user: str
    is_ip: bool
    was_reverted: bool

    @classmethod
    def from_dict(cls, data):
        user = data.get("user", "")
        is_ip = is_ip_literal(user)
        if "is_ip" in data and bool(data["is_ip"]) != is_ip:
            raise DataError(f"rev {data.get('rev_id')}: is_ip={data['is_ip']} but user is {user!r}")
        return cls(
            title=data["title"],
            rev_id=int(data["rev_id"]),
            timestamp=parse_timestamp(data["timestamp"]),
            user=user,
            is_ip=is_ip,
            was_reverted=bool(data.get("was_reverted", False)),
        )


@dataclass(frozen=True)
class RelevanceMetrics:
    title: str
    monthly_views: float
    edit_count: int
    ip_edit_rate: float
    revert_rate: float


@dataclass(frozen=True)
class BootstrapEstimate:
    mean: float
    ci_low: float
    ci_high: float
    n_resamples: int
    sample_size: int
    confidence: float

    def to_dict(self):
        return asdict(self)


def read_revlog(path):
    return parse_rows(path, RevisionLogEntry.from_dict)


def read_views(path):
    """``views.jsonl`` rows into ``{title: {month: count}}``."""
    views = {}

    def add(row):
        count = int(row["count"])
        if count < 0:
            raise DataError(f"{row['title']} {row['month']}: negative view count")
        views.setdefault(row["title"], {})[row["month"]] = count

    parse_rows(path, add)
    return views


def months_between(start, end):
    """All ``YYYY-MM`` labels from ``start``'s month to ``end``'s month inclusive."""
    months = []
    year, month = start.year, start.month
    while (year, month) <= (end.year, end.month):
        months.append(f"{year:04d}-{month:02d}")
        year, month = (year + 1, 1) if month == 12 else (year, month + 1)
    return months


def _month_start(label):
    year, month = label.split("-")
    return date(int(year), int(month), 1)


def compute_metrics(log, views, window, title=None):
    """Relevance metrics of one page.

    ``window`` is an inclusive ``(start_date, end_date)`` pair. Edits are
    counted inside it; monthly views average over every month it touches,
    with months lacking data counted as zero. An empty log gives zero edits
    and zero rates.
    """
    start, end = window
    if start > end:
        raise PreconditionError(f"empty window {start}..{end}")
    entries = list(log)
    titles = {e.title for e in entries}
    if len(titles) > 1:
        raise PreconditionError(f"log mixes titles: {sorted(titles)[:3]}")
    title = title or (entries[0].title if entries else "")

    in_window = [e for e in entries if start <= e.timestamp.date() <= end]
    edits = len(in_window)
    ip_rate = sum(e.is_ip for e in in_window) / edits if edits else 0.0
    revert_rate = sum(e.was_reverted for e in in_window) / edits if edits else 0.0

    months = months_between(start, end)
    views = views or {}
    monthly = sum(views.get(m, 0) for m in months) / len(months)
    return RelevanceMetrics(title, float(monthly), edits, float(ip_rate), float(revert_rate))


def bootstrap_estimate(values, n_resamples=10000, sample_size=1000, confidence=0.95, seed=0):
    """Percentile bootstrap of the mean.

    Draws ``n_resamples`` samples of ``sample_size`` values with replacement.
    ``mean`` is the grand mean of the resample means and the interval holds
    the ``(1-confidence)/2`` and ``1-(1-confidence)/2`` quantiles of those
    means.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise PreconditionError("bootstrap needs at least one value")
    if not 0 < confidence < 1:
        raise PreconditionError(f"confidence must be in (0, 1), got {confidence}")
    if n_resamples < 1 or sample_size < 1:
        raise PreconditionError("n_resamples and sample_size must be >= 1")
    if not np.all(np.isfinite(values)):
        raise DataError("bootstrap values must be finite")

    if np.all(values == values[0]):
        v = float(values[0])
        return BootstrapEstimate(v, v, v, int(n_resamples), int(sample_size), float(confidence))

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    means = np.empty(n_resamples)
    for lo in range(0, n_resamples, _CHUNK_ROWS):
        rows = min(_CHUNK_ROWS, n_resamples - lo)
        idx = rng.integers(0, values.size, size=(rows, sample_size))
        means[lo:lo + rows] = values[idx].mean(axis=1)

    alpha = (1.0 - confidence) / 2.0
    low, high = np.quantile(means, [alpha, 1.0 - alpha])
    mean = float(np.clip(means.mean(), low, high))
    return BootstrapEstimate(mean, float(low), float(high), int(n_resamples), int(sample_size),
                             float(confidence))


def group_estimates(metrics, statuses, n_resamples=10000, sample_size=1000, confidence=0.95, seed=0):
    """Bootstrap estimate per (status, metric name); empty groups are omitted."""
    missing = [m.title for m in metrics if m.title not in statuses]
    if missing:
        raise PreconditionError(f"no status for {len(missing)} titles, e.g. {missing[:3]}")
    grouped = {status: [] for status in Status}
    for m in metrics:
        grouped[Status(statuses[m.title])].append(m)

    out = {}
    for status, members in grouped.items():
        if not members:
            logger.warning("group %s has no pages; omitted", status.value)
            continue
        for name in METRICS:
            values = [getattr(m, name) for m in members]
            out[(status.value, name)] = bootstrap_estimate(
                values, n_resamples, sample_size, confidence,
                seed=derive_seed(seed, status.value, name),
            )
    return out


def views_share(metrics, statuses):
    """Fraction of total monthly views held by each status group present."""
    totals = {}
    for m in metrics:
        key = Status(statuses[m.title]).value
        totals[key] = totals.get(key, 0.0) + m.monthly_views
    grand = sum(totals.values())
    if grand == 0:
        logger.warning("total views are zero; shares reported as 0")
        return {key: 0.0 for key in totals}
    return {key: value / grand for key, value in totals.items()}


def default_window(revlog, views):
    """Smallest month-aligned window covering all log entries and view months."""
    dates = [e.timestamp.date() for e in revlog]
    for monthly in views.values():
        dates.extend(_month_start(m) for m in monthly)
    if not dates:
        raise DataError("cannot infer a window from empty revision log and views")
    return min(dates), max(dates)


def relevance_report(pages, revlog, views, window=None, n_resamples=10000, sample_size=1000,
                     confidence=0.95, seed=0):
    """Group x metric table of bootstrap estimates plus views shares and page counts."""
    statuses = {page.title: page.status.value for page in pages}
    by_title = {}
    for entry in revlog:
        by_title.setdefault(entry.title, []).append(entry)
    window = window or default_window(revlog, views)
    metrics = [
        compute_metrics(by_title.get(title, []), views.get(title, {}), window, title=title)
        for title in statuses
    ]
    estimates = group_estimates(metrics, statuses, n_resamples, sample_size, confidence, seed)
    groups = {}
    for (status, name), estimate in estimates.items():
        groups.setdefault(status, {})[name] = estimate.to_dict()
    counts = {status.value: 0 for status in Status}
    for status in statuses.values():
        counts[status] += 1
    return {
        "window": [window[0].isoformat(), window[1].isoformat()],
        "params": {"n_resamples": n_resamples, "sample_size": sample_size,
                   "confidence": confidence, "seed": seed},
        "page_counts": counts,
        "groups": {status: groups[status] for status in sorted(groups)},
        "views_share": dict(sorted(views_share(metrics, statuses).items())),
    }
