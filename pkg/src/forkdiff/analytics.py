"""Descriptive aggregates over diffs and revision logs.

Everything here is an order-independent reduction: permuting the input
stream gives identical output, and rankings break count ties by key.
"""

import csv
import json
import logging
import re
import subprocess
from collections import Counter
from dataclasses import dataclass
from datetime import timedelta
from importlib import resources
from pathlib import Path

import numpy as np
import requests

from .errors import DataError, PreconditionError, UndefinedShareError
from .records import Status, looks_like_bot

logger = logging.getLogger(__name__)

ENTITY_LABELS = ("LOC", "ORG", "PER", "MISC")
OFFICE_HOURS = (8, 17)  # inclusive on both ends
WEEKDAYS = range(0, 5)
_ALPHA2 = re.compile(r"^[A-Z]{2}$")


# -- temporal ------------------------------------------------------------------


@dataclass
class TemporalHeatmap:
    cells: np.ndarray  # 7 x 24, Monday first, UTC hours
    label: str = ""


def is_bot(user, bot_list=()):
    return looks_like_bot(user) or user in bot_list


def temporal_heatmap(log, bot_filter=True, bot_list=(), label="", start=None, end=None):
    """Mean edits per (weekday, UTC hour) slot.

    Each cell is the number of edits in that slot divided by how many times
    the weekday occurs in the covered date range (the span of the log unless
    ``start``/``end`` dates are given).
    """
    bot_list = set(bot_list)
    counts = np.zeros((7, 24))
    dates = []
    for entry in log:
        if bot_filter and is_bot(entry.user, bot_list):
            continue
        ts = entry.timestamp
        counts[ts.weekday(), ts.hour] += 1
        dates.append(ts.date())
    if not dates:
        return TemporalHeatmap(np.zeros((7, 24)), label)

    first = start or min(dates)
    last = end or max(dates)
    occurrences = np.zeros(7)
    day = first
    while day <= last:
        occurrences[day.weekday()] += 1
        day += timedelta(days=1)
    cells = np.divide(counts, occurrences[:, None], out=np.zeros_like(counts),
                      where=occurrences[:, None] > 0)
    return TemporalHeatmap(cells, label)


def office_hours_share(heatmap, hours=OFFICE_HOURS):
    """Share of heatmap mass on weekdays within ``hours`` (inclusive)."""
    total = heatmap.cells.sum()
    if total <= 0:
        raise UndefinedShareError("heatmap is empty; office-hours share undefined")
    first, last = hours
    return float(heatmap.cells[0:5, first:last + 1].sum() / total)


# -- geography -----------------------------------------------------------------


@dataclass(frozen=True)
class GeoAnnotation:
    title: str
    countries: frozenset

    def __post_init__(self):
        bad = [c for c in self.countries if not _ALPHA2.match(c)]
        if bad:
            raise DataError(f"{self.title!r}: invalid country codes {bad}")

    @property
    def key(self):
        return "+".join(sorted(self.countries))


def read_geo(path):
    """``title<TAB>comma-separated alpha-2 codes``; a ``title`` header line is skipped."""
    annotations = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE):
            if not row or (row[0] == "title" and not annotations):
                continue
            codes = row[1] if len(row) > 1 else ""
            countries = frozenset(c.strip().upper() for c in codes.split(",") if c.strip())
            annotations.append(GeoAnnotation(row[0], countries))
    return annotations


def geo_group_rates(statuses, geo):
    """``{(country_key, status): rate}``: share of a country-set's pages in each status.

    Pages without a status or with no countries are left out.
    """
    seen = set()
    totals = Counter()
    by_status = Counter()
    for annotation in geo:
        if annotation.title in seen:
            raise PreconditionError(f"duplicate geo annotation for {annotation.title!r}")
        seen.add(annotation.title)
        if not annotation.countries or annotation.title not in statuses:
            continue
        key = annotation.key
        totals[key] += 1
        by_status[key, Status(statuses[annotation.title]).value] += 1
    return {
        (key, status.value): by_status[key, status.value] / totals[key]
        for key in sorted(totals)
        for status in Status
    }


# -- categories and references ---------------------------------------------------


def _rank(counter, k, denominator):
    ranked = sorted(counter.items(), key=lambda item: (-item[1], item[0]))[:k]
    pct = (lambda c: 100.0 * c / denominator) if denominator else (lambda c: 0.0)
    return [(key, count, pct(count)) for key, count in ranked]


def top_category_changes(diffs, k=5):
    """Top-k added and removed categories as ``(category, count, pct)``.

    ``pct`` is relative to the number of diffs with any change at all.
    """
    if k < 1:
        raise PreconditionError("k must be >= 1")
    added, removed, pages = Counter(), Counter(), 0
    for diff in diffs:
        pages += not diff.is_empty
        added.update(diff.categories_added)
        removed.update(diff.categories_removed)
    return _rank(added, k, pages), _rank(removed, k, pages)


def top_reference_changes(diffs, k=10):
    """Top-k added and removed reference domains as ``(domain, count)``, one count per page."""
    if k < 1:
        raise PreconditionError("k must be >= 1")
    added, removed = Counter(), Counter()
    for diff in diffs:
        added.update(diff.references_added.keys())
        removed.update(diff.references_removed.keys())
    return (
        [(d, c) for d, c, _ in _rank(added, k, 0)],
        [(d, c) for d, c, _ in _rank(removed, k, 0)],
    )


# -- named entities ---------------------------------------------------------------


@dataclass(frozen=True)
class NamedEntity:
    surface: str
    label: str
    lemma: str

    def __post_init__(self):
        if self.label not in ENTITY_LABELS:
            raise DataError(f"unknown entity label {self.label!r}")
        if not self.lemma:
            raise DataError(f"entity {self.surface!r} has an empty lemma")

    @classmethod
    def from_wire(cls, item):
        surface = item["surface"]
        return cls(surface, item.get("label", "MISC"), item.get("lemma") or surface)


class GazetteerRecognizer:
    """Longest-match dictionary lookup with an optional capitalized-token fallback.

    Parameters
    ----------
    entries : dict
        surface form -> (lemma, label)
    fallback : bool
        Tag remaining capitalized tokens (other than a sentence's first word)
        as MISC with the token itself as lemma.
    """

    _TOKEN = re.compile(r"(?<![\w-])[A-ZА-ЯЁ][\w'’-]*\w|(?<![\w-])[A-ZА-ЯЁ](?![\w-])")

    def __init__(self, entries, fallback=True):
        self.entries = dict(entries)
        self.fallback = fallback
        surfaces = sorted(self.entries, key=lambda s: (-len(s), s))
        self._pattern = (
            re.compile(r"(?<!\w)(" + "|".join(map(re.escape, surfaces)) + r")(?!\w)")
            if surfaces else None
        )

    @classmethod
    def from_tsv(cls, path, fallback=True):
        entries = {}
        with open(path, encoding="utf-8", newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE), 1):
                if not row or row[0].startswith("#") or (lineno == 1 and row[0] == "surface"):
                    continue
                if len(row) < 3:
                    raise DataError(f"{path}:{lineno}: expected surface, lemma, label")
                entries[row[0]] = (row[1], row[2].upper())
        return cls(entries, fallback=fallback)

    @classmethod
    def default(cls, fallback=True):
        return cls.from_tsv(resources.files("forkdiff") / "data" / "gazetteer.tsv", fallback)

    def recognize(self, text):
        found, spans = [], []
        if self._pattern is not None:
            for match in self._pattern.finditer(text):
                lemma, label = self.entries[match.group(1)]
                found.append((match.start(), NamedEntity(match.group(1), label, lemma)))
                spans.append(match.span())
        if self.fallback:
            for i, match in enumerate(self._TOKEN.finditer(text)):
                if match.start() == len(text) - len(text.lstrip()):
                    continue  # sentence-initial capital carries no signal
                if any(a <= match.start() < b for a, b in spans):
                    continue
                found.append((match.start(), NamedEntity(match.group(), "MISC", match.group())))
        return [entity for _, entity in sorted(found, key=lambda item: item[0])]


class SubprocessRecognizer:
    """Adapter for an external recognizer command.

    The command receives ``{"text": ...}`` on stdin and must print a JSON list
    of ``{surface, label, lemma, start, end}`` objects.
    """

    def __init__(self, command, timeout=60):
        self.command = command
        self.timeout = timeout

    def recognize(self, text):
        proc = subprocess.run(self.command, input=json.dumps({"text": text}, ensure_ascii=False),
                              capture_output=True, text=True, timeout=self.timeout, check=True)
        return [NamedEntity.from_wire(item) for item in json.loads(proc.stdout)]


class HttpRecognizer:
    """Same JSON contract as SubprocessRecognizer, over HTTP POST."""

    def __init__(self, url, session=None, timeout=60):
        self.url = url
        self.session = session or requests.Session()
        self.timeout = timeout

    def recognize(self, text):
        response = self.session.post(self.url, json={"text": text}, timeout=self.timeout)
        response.raise_for_status()
        return [NamedEntity.from_wire(item) for item in response.json()]


def _side_entities(recognizer, sentences):
    seen = {}
    for sentence in sentences:
        for entity in recognizer.recognize(sentence):
            seen.setdefault(entity.lemma, entity.label)
    return set(seen.items())


def entity_deltas(diffs, recognizer, k=8, diagnostics=None):
    """Top-k added and deleted entities as ``(lemma, label, count, pct)``.

    Deleted text is deleted sentences plus the old side of changed pairs;
    added text is inserted sentences plus the new side. An entity counts once
    per page and side. ``pct`` is relative to pages with any text change.
    A page whose recognition fails is skipped and tallied in ``diagnostics``.
    """
    if diagnostics is None:
        diagnostics = Counter()
    added, deleted, pages = Counter(), Counter(), 0
    for diff in diffs:
        if not diff.has_text_change:
            continue
        try:
            old = _side_entities(recognizer, diff.deleted + [o for o, _, _ in diff.changed])
            new = _side_entities(recognizer, diff.inserted + [n for _, n, _ in diff.changed])
        except Exception as exc:  # plug-in recognizers may fail arbitrarily
            logger.warning("%s: recognizer failed (%s); page skipped", diff.title, exc)
            diagnostics["recognizer_failures"] += 1
            continue
        pages += 1
        deleted.update(old)
        added.update(new)

    def rank(counter):
        return [(lemma, label, count, pct) for (lemma, label), count, pct in _rank(counter, k, pages)]

    return rank(added), rank(deleted)


# -- report files -----------------------------------------------------------------


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _pct(value):
    return f"{value:.4f}"


def analyze(diffs, out_dir, revlog_upstream=(), revlog_fork=(), statuses=None, geo=(),
            recognizer=None, top_k=5, top_k_references=10, top_k_entities=8, bot_list=(),
            office_hours=OFFICE_HOURS):
    """Write the temporal, geo, category, reference and entity tables into ``out_dir``."""
    diffs = list(diffs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    recognizer = recognizer or GazetteerRecognizer.default()
    meta = {"office_hours": list(office_hours)}

    rows = []
    for label, log in (("fork", revlog_fork), ("upstream", revlog_upstream)):
        heatmap = temporal_heatmap(log, bot_filter=True, bot_list=bot_list, label=label)
        for day in range(7):
            rows.append([label, day] + [f"{v:.6f}" for v in heatmap.cells[day]])
        try:
            meta[f"office_hours_share_{label}"] = office_hours_share(heatmap, office_hours)
        except UndefinedShareError:
            meta[f"office_hours_share_{label}"] = None
    _write_csv(out_dir / "temporal.csv", ["endpoint", "day"] + [f"h{h:02d}" for h in range(24)], rows)

    rates = geo_group_rates(statuses or {}, geo) if statuses else {}
    totals = Counter()
    for annotation in geo:
        if annotation.countries and statuses and annotation.title in statuses:
            totals[annotation.key] += 1
    _write_csv(out_dir / "geo.csv", ["countries", "status", "pages", "total", "rate"],
               [[key, status, round(rate * totals[key]), totals[key], f"{rate:.6f}"]
                for (key, status), rate in rates.items()])

    cat_added, cat_removed = top_category_changes(diffs, top_k)
    _write_csv(out_dir / "categories.csv", ["side", "rank", "category", "count", "pct"],
               [["added", i, c, n, _pct(p)] for i, (c, n, p) in enumerate(cat_added, 1)]
               + [["removed", i, c, n, _pct(p)] for i, (c, n, p) in enumerate(cat_removed, 1)])

    ref_added, ref_removed = top_reference_changes(diffs, top_k_references)
    _write_csv(out_dir / "references.csv", ["side", "rank", "domain", "count"],
               [["added", i, d, n] for i, (d, n) in enumerate(ref_added, 1)]
               + [["removed", i, d, n] for i, (d, n) in enumerate(ref_removed, 1)])

    diagnostics = Counter()
    ent_added, ent_deleted = entity_deltas(diffs, recognizer, top_k_entities, diagnostics)
    _write_csv(out_dir / "entities.csv", ["side", "rank", "lemma", "label", "count", "pct"],
               [["added", i, lem, lab, n, _pct(p)] for i, (lem, lab, n, p) in enumerate(ent_added, 1)]
               + [["deleted", i, lem, lab, n, _pct(p)]
                  for i, (lem, lab, n, p) in enumerate(ent_deleted, 1)])

    meta["denominators"] = {
        "changed_pages": len(diffs),
        "pages_with_any_change": sum(not d.is_empty for d in diffs),
        "pages_with_text_change": sum(d.has_text_change for d in diffs),
    }
    meta["diagnostics"] = dict(sorted(diagnostics.items()))
    with open(out_dir / "analysis.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    return meta
