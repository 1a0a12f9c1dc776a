"""Structural content diff between an upstream base revision and a fork revision."""

from collections import Counter
from dataclasses import dataclass, field

from sklearn.base import BaseEstimator, TransformerMixin

from .errors import PreconditionError
from .records import Status, parse_rows, write_jsonl
from .similarity import exceeds_threshold, levenshtein_distance
from .wikitext import normalize_text, parse_wikitext

DEFAULT_THRESHOLD = 0.6

SET_FIELDS = (
    "categories_added",
    "categories_removed",
    "media_added",
    "media_removed",
    "templates_added",
    "templates_removed",
    "tags_added",
    "tags_removed",
)
REFERENCE_FIELDS = ("references_added", "references_removed")
CONTENT_DIFF_FIELDS = (
    ("title", "inserted", "deleted", "changed") + SET_FIELDS[:2] + REFERENCE_FIELDS + SET_FIELDS[2:]
)


def check_threshold(threshold):
    threshold = float(threshold)
    if not 0.0 < threshold < 1.0:
        raise PreconditionError(f"similarity threshold must be in (0, 1), got {threshold}")
    return threshold


@dataclass
class ContentDiff:
    title: str
    inserted: list = field(default_factory=list)
    deleted: list = field(default_factory=list)
    changed: list = field(default_factory=list)  # (old, new, similarity)
    categories_added: set = field(default_factory=set)
    categories_removed: set = field(default_factory=set)
    # registrable domain -> set of full URLs seen for it
    references_added: dict = field(default_factory=dict)
    references_removed: dict = field(default_factory=dict)
    media_added: set = field(default_factory=set)
    media_removed: set = field(default_factory=set)
    templates_added: set = field(default_factory=set)
    templates_removed: set = field(default_factory=set)
    tags_added: set = field(default_factory=set)
    tags_removed: set = field(default_factory=set)

    @property
    def has_text_change(self):
        return bool(self.inserted or self.deleted or self.changed)

    @property
    def is_empty(self):
        return not (
            self.has_text_change
            or self.references_added
            or self.references_removed
            or any(getattr(self, name) for name in SET_FIELDS)
        )

    def to_dict(self):
        out = {
            "title": self.title,
            "inserted": list(self.inserted),
            "deleted": list(self.deleted),
            "changed": [[old, new, round(sim, 4)] for old, new, sim in self.changed],
        }
        for name in CONTENT_DIFF_FIELDS[4:]:
            value = getattr(self, name)
            if name in REFERENCE_FIELDS:
                out[name] = {domain: sorted(urls) for domain, urls in sorted(value.items())}
            else:
                out[name] = sorted(value)
        return out

    @classmethod
    def from_dict(cls, data):
        kwargs = {
            "title": data["title"],
            "inserted": list(data.get("inserted", [])),
            "deleted": list(data.get("deleted", [])),
            "changed": [(old, new, float(sim)) for old, new, sim in data.get("changed", [])],
        }
        for name in SET_FIELDS:
            kwargs[name] = set(data.get(name, []))
        for name in REFERENCE_FIELDS:
            kwargs[name] = {domain: set(urls) for domain, urls in data.get(name, {}).items()}
        return cls(**kwargs)


def pair_changed(inserted, deleted, threshold=DEFAULT_THRESHOLD):
    """Greedily match deleted/inserted sentences into changed pairs.

    The highest-similarity pair strictly above ``threshold`` is accepted
    first; ties go to the earlier deleted sentence, then the earlier inserted
    one. Each sentence is used at most once.

    Returns ``(changed, residual_inserted, residual_deleted)`` where
    ``changed`` holds ``(old, new, similarity)`` triples.
    """
    threshold = check_threshold(threshold)
    candidates = []
    for di, old in enumerate(deleted):
        for ii, new in enumerate(inserted):
            longest = max(len(old), len(new))
            if longest == 0:
                continue
            # distance >= length gap, so similarity <= shorter/longer
            if min(len(old), len(new)) / longest <= threshold - 1e-12:
                continue
            distance = levenshtein_distance(old, new)
            if exceeds_threshold(old, new, threshold, distance):
                candidates.append((-(1.0 - distance / longest), di, ii))
    candidates.sort()

    used_deleted, used_inserted, changed = set(), set(), []
    for neg_sim, di, ii in candidates:
        if di in used_deleted or ii in used_inserted:
            continue
        used_deleted.add(di)
        used_inserted.add(ii)
        changed.append((deleted[di], inserted[ii], -neg_sim))

    residual_inserted = [s for i, s in enumerate(inserted) if i not in used_inserted]
    residual_deleted = [s for i, s in enumerate(deleted) if i not in used_deleted]
    return changed, residual_inserted, residual_deleted


def _multiset_minus(left, right):
    """Items of ``left`` not matched in ``right``, multiplicity-aware, order of ``left``."""
    budget = Counter(right)
    out = []
    for item in left:
        if budget[item]:
            budget[item] -= 1
        else:
            out.append(item)
    return out


def _domains(references):
    grouped = {}
    for url, domain in references:
        grouped.setdefault(domain, set()).add(url)
    return grouped


def diff_texts(title, base_text, fork_text, threshold=DEFAULT_THRESHOLD):
    """ContentDiff turning ``base_text`` (upstream) into ``fork_text``."""
    base = parse_wikitext(base_text)
    fork = parse_wikitext(fork_text)
    base_sentences = [normalize_text(s) for s in base.sentences]
    fork_sentences = [normalize_text(s) for s in fork.sentences]

    deleted = _multiset_minus(base_sentences, fork_sentences)
    inserted = _multiset_minus(fork_sentences, base_sentences)
    changed, inserted, deleted = pair_changed(inserted, deleted, threshold)

    base_refs, fork_refs = _domains(base.references), _domains(fork.references)
    return ContentDiff(
        title=title,
        inserted=inserted,
        deleted=deleted,
        changed=changed,
        categories_added=fork.categories - base.categories,
        categories_removed=base.categories - fork.categories,
        references_added={d: fork_refs[d] for d in fork_refs.keys() - base_refs.keys()},
        references_removed={d: base_refs[d] for d in base_refs.keys() - fork_refs.keys()},
        media_added=fork.media - base.media,
        media_removed=base.media - fork.media,
        templates_added=fork.templates - base.templates,
        templates_removed=base.templates - fork.templates,
        tags_added=fork.tags - base.tags,
        tags_removed=base.tags - fork.tags,
    )


def diff_pages(record, threshold=DEFAULT_THRESHOLD):
    if record.status is not Status.CHANGED:
        raise PreconditionError(
            f"{record.title!r}: only changed pages can be diffed (status={record.status.value})"
        )
    if record.upstream_text is None or record.fork_text is None:
        raise PreconditionError(f"{record.title!r}: both texts are required")
    return diff_texts(record.title, record.upstream_text, record.fork_text, threshold)


class WikitextDiffer(TransformerMixin, BaseEstimator):
    """Transformer mapping changed PageRecords to ContentDiffs.

    Records with any other status are skipped, so a whole crawl can be passed
    through unfiltered.

    Parameters
    ----------
    threshold : float, default=0.6
        Changed-pair similarity must be strictly above this value.
    """

    def __init__(self, threshold=DEFAULT_THRESHOLD):
        self.threshold = threshold

    def fit(self, records=None, y=None):
        self.threshold_ = check_threshold(self.threshold)
        return self

    def transform(self, records):
        threshold = check_threshold(self.threshold)
        return [
            diff_pages(record, threshold) for record in records if record.status is Status.CHANGED
        ]


def read_diffs(path):
    return parse_rows(path, ContentDiff.from_dict)


def write_diffs(path, diffs):
    write_jsonl(path, (d.to_dict() for d in diffs))
