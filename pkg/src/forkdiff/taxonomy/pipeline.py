"""Edit taxonomy: summarise edits, embed and cluster the summaries, name the
clusters, judge edit-to-cluster fit, and reassign misfits.

Every backend call is made at temperature 0 and keyed by its prompt, so with a
cached or deterministic backend the whole run is reproducible.
"""

import json
import logging
import re
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np
from sklearn.base import BaseEstimator

from ..errors import DataError, PreconditionError
from ..stats import bootstrap_estimate, derive_seed
from .clustering import DEFAULT_K_RANGE, SILHOUETTE_SAMPLE, kmeans, select_k
from .prompts import OTHER_CHANGES_DESCRIPTION, OTHER_CHANGES_NAME, PromptSet, all_clusters_details, cluster_details

logger = logging.getLogger(__name__)

SUMMARY_MAX_WORDS = 40
SUMMARY_RETRIES = 3
NAMING_SAMPLES = 20
NORM_TOLERANCE = 1e-6
_DIAG_LOCK = threading.Lock()

# (section label, ContentDiff attribute); media and references are not covered
COVERED_SECTIONS = (
    ("DELETED", "deleted"),
    ("ADDED", "inserted"),
    ("CHANGED", "changed"),
    ("CATEGORIES ADDED", "categories_added"),
    ("CATEGORIES REMOVED", "categories_removed"),
    ("TAGS ADDED", "tags_added"),
    ("TAGS REMOVED", "tags_removed"),
    ("TEMPLATES ADDED", "templates_added"),
    ("TEMPLATES REMOVED", "templates_removed"),
)


@dataclass
class EditRepresentation:
    title: str
    flat_text: str
    eligible: bool


@dataclass
class EditSummary:
    id: int
    title: str
    text: str
    over_length: bool = False
    failed: bool = False
    embedding: object = None


@dataclass
class TaxonomyCluster:
    id: int
    name: str
    description: str
    members: list = field(default_factory=list)
    size_fraction: float = 0.0
    ecfr: object = None  # BootstrapEstimate, None for "Other changes"
    ecfr_rate: float = None
    is_other: bool = False


def flatten_edit(diff):
    """One section-labelled string per edit; list sections are JSON arrays."""
    lines = [f"TITLE: {diff.title}"]
    for label, attr in COVERED_SECTIONS:
        value = getattr(diff, attr)
        if attr == "changed":
            items = [[old, new] for old, new, _ in value]
        elif isinstance(value, (set, frozenset)):
            items = sorted(value)
        else:
            items = list(value)
        if items:
            lines.append(f"{label}: {json.dumps(items, ensure_ascii=False)}")
    return EditRepresentation(diff.title, "\n".join(lines), len(lines) > 1)


def _json_object(text):
    text = text.strip()
    fenced = re.match(r"^```(?:json)?\s*(.*?)\s*```$", text, re.S)
    if fenced:
        text = fenced.group(1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        match = re.search(r"\{.*\}", text, re.S)
        if not match:
            return None
        try:
            value = json.loads(match.group(0))
        except json.JSONDecodeError:
            return None
    return value if isinstance(value, dict) else None


def summarize_edit(rep, backend, prompts=None, max_words=SUMMARY_MAX_WORDS, retries=SUMMARY_RETRIES):
    """Ask the backend for a JSON ``{"desc": ...}`` summary.

    Returns ``(text, over_length)``, or ``(None, False)`` when no attempt
    (one try plus ``retries``) yields a usable answer. Over-long answers are
    kept and flagged.
    """
    if not rep.eligible:
        raise PreconditionError(f"{rep.title}: edit has no covered content")
    prompts = prompts or PromptSet.load()
    prompt = prompts.render_summary(rep.flat_text, max_words)
    for attempt in range(retries + 1):
        data = _json_object(backend.complete(prompt, temperature=0.0, attempt=attempt))
        desc = data.get("desc") if data else None
        if isinstance(desc, str) and desc.strip():
            desc = " ".join(desc.split())
            return desc, len(desc.split()) > max_words
        logger.debug("%s: unusable summary on attempt %d", rep.title, attempt)
    return None, False


def embed_summaries(texts, backend, batch_size=256):
    """Unit-norm embedding matrix, one row per text."""
    texts = list(texts)
    if not texts:
        raise PreconditionError("nothing to embed")
    rows = []
    for lo in range(0, len(texts), batch_size):
        rows.extend(backend.embed(texts[lo:lo + batch_size]))
    dims = {len(row) for row in rows}
    if len(rows) != len(texts) or len(dims) != 1:
        raise DataError(f"backend returned {len(rows)} embeddings of dimensions {sorted(dims)}")
    matrix = np.asarray(rows, dtype=float)
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise DataError("backend returned a zero or non-finite embedding")
    off = np.abs(norms - 1.0) > NORM_TOLERANCE
    if off.any():
        logger.info("renormalising %d embeddings", int(off.sum()))
        matrix[off] /= norms[off, None]
    return matrix


def name_cluster(samples, backend, prompts=None, seed=0, n_samples=NAMING_SAMPLES, retries=SUMMARY_RETRIES):
    """``(name, description)`` from a seeded draw of member summaries.

    Clusters with at least ``n_samples`` members are sampled without
    replacement, smaller ones with replacement. Returns None for an empty
    cluster or when the backend never returns both fields.
    """
    samples = list(samples)
    if not samples:
        return None
    prompts = prompts or PromptSet.load()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    replace = len(samples) < n_samples
    picks = rng.choice(len(samples), size=n_samples, replace=replace)
    prompt = prompts.render_naming([samples[i] for i in picks])
    for attempt in range(retries + 1):
        data = _json_object(backend.complete(prompt, temperature=0.0, attempt=attempt))
        if data and isinstance(data.get("name"), str) and isinstance(data.get("description"), str):
            if data["name"].strip():
                return " ".join(data["name"].split()), " ".join(data["description"].split())
    return None


def _yes_no(text):
    word = re.match(r"\W*([A-Za-z]+)", text or "")
    word = word.group(1).upper() if word else ""
    return {"YES": True, "NO": False}.get(word)


def judge_fit(summary, name, description, backend, prompts, diagnostics=None):
    """One YES/NO fit judgement; unparseable twice counts as NO."""
    prompt = prompts.render_fit(summary, cluster_details(name, description))
    for attempt in range(2):
        verdict = _yes_no(backend.complete(prompt, temperature=0.0, attempt=attempt))
        if verdict is not None:
            return verdict
    if diagnostics is not None:
        with _DIAG_LOCK:
            diagnostics["fit_unparseable"] += 1
    return False


def ecfr_estimate(verdicts, n_resamples=10000, confidence=0.95, seed=0):
    """Yes-fraction plus a bootstrap estimate with ``sample_size=min(1000, n)``."""
    values = np.asarray(verdicts, dtype=float)
    if values.size == 0:
        return None, None
    estimate = bootstrap_estimate(values, n_resamples=n_resamples, sample_size=min(1000, values.size),
                                  confidence=confidence, seed=seed)
    return float(values.mean()), estimate


def _map(func, items, max_workers):
    if max_workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(func, items))


def evaluate_ecfr(clusters, summaries, backend, prompts=None, seed=0, n_resamples=10000,
                  confidence=0.95, max_workers=1, verdicts=None, diagnostics=None):
    """Fit judgement for every member of every named cluster.

    ``verdicts`` maps ``(summary id, cluster id)`` to an earlier judgement and
    is extended in place, so re-evaluation only asks about new pairs.
    Sets ``ecfr_rate``/``ecfr`` on each cluster and returns the overall
    yes-fraction across all judged members.
    """
    prompts = prompts or PromptSet.load()
    verdicts = {} if verdicts is None else verdicts
    diagnostics = diagnostics if diagnostics is not None else Counter()
    by_id = {s.id: s for s in summaries}
    todo = [(sid, c) for c in clusters if not c.is_other for sid in c.members if (sid, c.id) not in verdicts]
    results = _map(lambda item: judge_fit(by_id[item[0]].text, item[1].name, item[1].description,
                                          backend, prompts, diagnostics), todo, max_workers)
    for (sid, c), verdict in zip(todo, results):
        verdicts[(sid, c.id)] = verdict
    yes = total = 0
    for c in clusters:
        if c.is_other:
            continue
        member_verdicts = [verdicts[(sid, c.id)] for sid in c.members]
        c.ecfr_rate, c.ecfr = ecfr_estimate(member_verdicts, n_resamples, confidence,
                                            seed=derive_seed(seed, "ecfr", c.id))
        yes += sum(member_verdicts)
        total += len(member_verdicts)
    return yes / total if total else None


def _cluster_number(text, n_options):
    match = re.search(r"\d+", text or "")
    if not match:
        return None
    number = int(match.group(0))
    return number if 0 <= number <= n_options else None


def correct_clusters(misfits, clusters, summaries, backend, prompts=None, max_workers=1, diagnostics=None):
    """Reassign each misfit summary id to a cluster index or to "Other changes".

    ``clusters`` are the named clusters in prompt order; option ``len(clusters)``
    is "Other changes". Returns ``{summary id: index}``.
    """
    prompts = prompts or PromptSet.load()
    diagnostics = diagnostics if diagnostics is not None else Counter()
    by_id = {s.id: s for s in summaries}
    details = all_clusters_details([(c.name, c.description) for c in clusters])
    other = len(clusters)

    def ask(sid):
        prompt = prompts.render_reassign(by_id[sid].text, details, other)
        number = _cluster_number(backend.complete(prompt, temperature=0.0), other)
        if number is None:
            with _DIAG_LOCK:
                diagnostics["reassign_unparseable"] += 1
            return other
        return number

    misfits = list(misfits)
    return dict(zip(misfits, _map(ask, misfits, max_workers)))


def emit_taxonomy(clusters, total):
    """Rows ordered by size (Other last) with size fractions of ``total``."""
    if total <= 0:
        return []
    named = sorted((c for c in clusters if not c.is_other), key=lambda c: (-len(c.members), c.id))
    other = [c for c in clusters if c.is_other]
    rows = []
    for c in named + other:
        c.size_fraction = len(c.members) / total
        rows.append(c)
    return rows


def _estimate_dict(rate, estimate, n):
    if estimate is None:
        return None
    z = NormalDist().inv_cdf(0.5 + estimate.confidence / 2)
    return {
        "rate": rate,
        "members": n,
        "mean": estimate.mean,
        "ci_low": estimate.ci_low,
        "ci_high": estimate.ci_high,
        "std_error": (estimate.ci_high - estimate.ci_low) / (2 * z),
        "n_resamples": estimate.n_resamples,
        "sample_size": estimate.sample_size,
    }


class EditTaxonomy(BaseEstimator):
    """Build a taxonomy from ``ContentDiff`` objects.

    After ``fit``: ``summaries_`` (eligible edits, in input order),
    ``clusters_`` (final, Other last), ``report_`` (the taxonomy.json
    document). ``predict`` maps new diffs to final cluster names through the
    nearest k-means centroid.
    """

    def __init__(self, backend=None, seed=0, k_range=DEFAULT_K_RANGE, max_words=SUMMARY_MAX_WORDS,
                 n_resamples=10000, confidence=0.95, silhouette_sample=SILHOUETTE_SAMPLE, n_init=10,
                 max_workers=4, prompts_dir=None):
        self.backend = backend
        self.seed = seed
        self.k_range = k_range
        self.max_words = max_words
        self.n_resamples = n_resamples
        self.confidence = confidence
        self.silhouette_sample = silhouette_sample
        self.n_init = n_init
        self.max_workers = max_workers
        self.prompts_dir = prompts_dir

    def _backend(self):
        if self.backend is None:
            from .backend import MockBackend
            return MockBackend()
        return self.backend

    def _summarize(self, diffs, backend, prompts):
        reps = [flatten_edit(d) for d in diffs]
        eligible = [r for r in reps if r.eligible]
        results = _map(lambda r: summarize_edit(r, backend, prompts, self.max_words), eligible, self.max_workers)
        summaries = [
            EditSummary(i, rep.title, text or "", over_length, failed=text is None)
            for i, (rep, (text, over_length)) in enumerate(zip(eligible, results))
        ]
        return reps, summaries

    def _choose_k(self, vectors):
        lo, hi = self.k_range
        hi = min(hi, len(vectors) - 1)
        if len(vectors) < 3 or hi < lo or np.all(vectors == vectors[0]):
            return 1, {}
        return select_k(vectors, (lo, hi), self.seed, self.silhouette_sample, n_init=self.n_init,
                        return_scores=True)

    def fit(self, diffs, y=None):
        backend = self._backend()
        prompts = PromptSet.load(self.prompts_dir)
        diagnostics = Counter()
        diffs = list(diffs)
        reps, summaries = self._summarize(diffs, backend, prompts)
        diagnostics["summary_failures"] = sum(s.failed for s in summaries)
        diagnostics["summary_over_length"] = sum(s.over_length for s in summaries)
        ok = [s for s in summaries if not s.failed]

        k, scores, centroids = 0, {}, None
        clusters = []
        if ok:
            vectors = embed_summaries([s.text for s in ok], backend)
            for s, v in zip(ok, vectors):
                s.embedding = v
            k, scores = self._choose_k(vectors)
            labels, centroids, _ = kmeans(vectors, k, seed=self.seed, n_init=self.n_init)
            for cid in range(k):
                members = [s.id for s, label in zip(ok, labels) if label == cid]
                if not members:
                    continue
                texts = [s.text for s in ok if s.id in set(members)]
                named = name_cluster(texts, backend, prompts, seed=derive_seed(self.seed, "naming", cid))
                if named is None:
                    diagnostics["naming_failures"] += 1
                    named = (f"Cluster {cid}", "")
                clusters.append(TaxonomyCluster(cid, named[0], named[1], members))
        self.centroids_ = centroids
        self.cluster_ids_ = [c.id for c in clusters]
        initial = {sid: c.id for c in clusters for sid in c.members}

        verdicts = {}
        pre = evaluate_ecfr(clusters, summaries, backend, prompts, self.seed, self.n_resamples,
                            self.confidence, self.max_workers, verdicts, diagnostics)
        pre_rows = {c.id: _estimate_dict(c.ecfr_rate, c.ecfr, len(c.members)) for c in clusters}

        misfits = [sid for c in clusters for sid in c.members if not verdicts[(sid, c.id)]]
        moves = correct_clusters(misfits, clusters, summaries, backend, prompts, self.max_workers, diagnostics)
        other = TaxonomyCluster(k, OTHER_CHANGES_NAME, OTHER_CHANGES_DESCRIPTION,
                                [s.id for s in summaries if s.failed], is_other=True)
        for sid, target in moves.items():
            source = next(c for c in clusters if c.id == initial[sid])
            destination = other if target == len(clusters) else clusters[target]
            if destination is source:
                continue
            source.members.remove(sid)
            destination.members.append(sid)
        for c in clusters + [other]:
            c.members.sort()
        diagnostics["moved_to_other"] = sum(1 for t in moves.values() if t == len(clusters))
        post = evaluate_ecfr(clusters, summaries, backend, prompts, self.seed, self.n_resamples,
                             self.confidence, self.max_workers, verdicts, diagnostics)

        rows = emit_taxonomy(clusters + ([other] if other.members else []), len(summaries))
        final = {sid: c for c in rows for sid in c.members}
        self.summaries_ = summaries
        self.clusters_ = rows
        self.report_ = {
            "params": {
                "seed": self.seed,
                "k_range": list(self.k_range),
                "max_words": self.max_words,
                "n_resamples": self.n_resamples,
                "confidence": self.confidence,
                "completion_model": backend.completion_model,
                "embedding_model": backend.embedding_model,
            },
            "counts": {"diffs": len(diffs), "eligible": len(summaries),
                       "ineligible": len(reps) - len(summaries), "clustered": len(ok)},
            "k": k,
            "silhouette": {str(key): value for key, value in sorted(scores.items())},
            "ecfr": {"pre": pre, "post": post},
            "clusters": [
                {
                    "id": c.id,
                    "name": c.name,
                    "description": c.description,
                    "size": len(c.members),
                    "size_fraction": c.size_fraction,
                    "ecfr_pre": pre_rows.get(c.id),
                    "ecfr_post": _estimate_dict(c.ecfr_rate, c.ecfr, len(c.members)),
                }
                for c in rows
            ],
            "assignments": [
                {
                    "id": s.id,
                    "title": s.title,
                    "summary": s.text,
                    "over_length": s.over_length,
                    "summary_failed": s.failed,
                    "initial_cluster": initial.get(s.id),
                    "fit": verdicts.get((s.id, initial[s.id])) if s.id in initial else None,
                    "final_cluster": final[s.id].id,
                    "final_name": final[s.id].name,
                }
                for s in summaries
            ],
            "diagnostics": dict(sorted(diagnostics.items())),
        }
        return self

    def predict(self, diffs):
        if getattr(self, "centroids_", None) is None:
            raise PreconditionError("taxonomy has no clusters; fit it on eligible edits first")
        backend = self._backend()
        prompts = PromptSet.load(self.prompts_dir)
        _, summaries = self._summarize(list(diffs), backend, prompts)
        names = {c.id: c.name for c in self.clusters_}
        ok = [s for s in summaries if not s.failed]
        out = {s.id: OTHER_CHANGES_NAME for s in summaries}
        if ok:
            vectors = embed_summaries([s.text for s in ok], backend)
            d = ((vectors[:, None, :] - self.centroids_[None, :, :]) ** 2).sum(-1)
            for s, cid in zip(ok, d.argmin(1)):
                out[s.id] = names.get(int(cid), OTHER_CHANGES_NAME)
        return [out[s.id] for s in summaries]

    def report(self):
        return self.report_


def write_taxonomy(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
