"""Language-model backends: an OpenAI-compatible HTTP client, a deterministic
offline mock, and a disk cache that wraps either.

A backend provides::

    complete(prompt, temperature=0.0, attempt=0) -> str
    embed(texts) -> list of vectors

plus ``completion_model`` and ``embedding_model`` identifiers used in cache
keys. ``attempt`` only distinguishes retries in the cache.
"""

import hashlib
import json
import logging
import os
import re
import time
from collections import Counter

import numpy as np
import requests

from ..crawl import ResponseCache
from ..errors import ConfigError, TransportError

logger = logging.getLogger(__name__)

DEFAULT_COMPLETION_MODEL = "gpt-4o-mini-2024-07-18"
DEFAULT_EMBEDDING_MODEL = "text-embedding-3-small"
DEFAULT_DIM = 1536
DEFAULT_BASE_URL = "https://api.openai.com/v1"

STOPWORDS = frozenset(
    """
    a an and are as at be by for from has have he in is it its of on or that the this to was
    were with which who will not but into their they them than then there these those also
    edit edits page pages wikipedia string text
    и в во не что он на я с со как а то все она так его но да ты к у же вы за бы по только
    ее мне было вот от меня еще нет о из ему теперь когда даже ну вдруг ли если уже или ни
    быть был него до вас нибудь опять уж вам ведь там потом себя ничего ей может они тут где
    есть надо ней для мы тебя их чем была сам чтоб без будто чего раз тоже себе под будет
    """.split()
)
_WORD = re.compile(r"[^\W_]+", re.UNICODE)


def content_words(text):
    return [w for w in _WORD.findall(text.lower()) if len(w) >= 3 and w not in STOPWORDS]


class HttpBackend:
    """Chat-completion and embedding endpoints of an OpenAI-compatible API."""

    def __init__(self, base_url=DEFAULT_BASE_URL, completion_model=DEFAULT_COMPLETION_MODEL,
                 embedding_model=DEFAULT_EMBEDDING_MODEL, api_key=None, timeout=120,
                 max_retries=3, session=None):
        self.base_url = base_url.rstrip("/")
        self.completion_model = completion_model
        self.embedding_model = embedding_model
        self.api_key = api_key or os.environ.get("FORKDIFF_LLM_KEY")
        if not self.api_key:
            raise ConfigError("HTTP backend needs an API key (set FORKDIFF_LLM_KEY)")
        self.timeout = timeout
        self.max_retries = max_retries
        self.session = session or requests.Session()

    def _post(self, path, payload):
        headers = {"Authorization": f"Bearer {self.api_key}"}
        problem = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(2 ** (attempt - 1))
            try:
                response = self.session.post(f"{self.base_url}{path}", json=payload,
                                             headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                problem = str(exc)
                continue
            if response.status_code == 429 or response.status_code >= 500:
                problem = f"HTTP {response.status_code}"
                continue
            if response.status_code >= 400:
                raise TransportError(f"LLM API {path}: HTTP {response.status_code}: {response.text[:200]}")
            return response.json()
        raise TransportError(f"LLM API {path}: giving up after {self.max_retries} retries ({problem})")

    def complete(self, prompt, temperature=0.0, attempt=0):
        body = self._post("/chat/completions", {
            "model": self.completion_model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
        })
        return body["choices"][0]["message"]["content"]

    def embed(self, texts):
        body = self._post("/embeddings", {"model": self.embedding_model, "input": list(texts)})
        data = sorted(body["data"], key=lambda item: item["index"])
        return [item["embedding"] for item in data]


class MockBackend:
    """Deterministic offline backend.

    Without a ``responder`` it recognises the four default prompt templates
    and answers them with simple lexical heuristics: summaries list the edit's
    concrete deltas, fit judgements check word overlap with the cluster
    details, and reassignment picks the cluster with the largest overlap.
    Embeddings are signed feature-hashed bags of words.

    ``responder(prompt) -> str`` and ``embedder(texts) -> vectors`` replace
    the built-in behaviour, which is how tests script exact answers.
    """

    completion_model = "mock-completion"
    embedding_model = "mock-embedding"

    def __init__(self, dim=DEFAULT_DIM, responder=None, embedder=None):
        self.dim = dim
        self.responder = responder
        self.embedder = embedder

    def complete(self, prompt, temperature=0.0, attempt=0):
        if self.responder is not None:
            return self.responder(prompt)
        if "The edit to analyze will be provided in the <>: <" in prompt:
            edit = prompt.split("The edit to analyze will be provided in the <>: <", 1)[1]
            return json.dumps({"desc": mock_summary(edit.rsplit(">", 1)[0])}, ensure_ascii=False)
        if "decide whether the edit fits the provided cluster" in prompt:
            summary = _between(prompt, "Edit summary: <", ">\n")
            details = _between(prompt, "Cluster details: ~", "~")
            return "YES" if set(content_words(summary)) & set(content_words(details)) else "NO"
        if "reclassify the edit to the correct cluster" in prompt:
            return _mock_reassign(prompt)
        if '"name"' in prompt and "Edit summaries: <" in prompt:
            samples = _between(prompt, "Edit summaries: <", ">\n")
            return json.dumps(_mock_name(samples), ensure_ascii=False)
        return ""

    def embed(self, texts):
        if self.embedder is not None:
            return self.embedder(texts)
        return [hashed_embedding(t, self.dim) for t in texts]


def _between(text, start, end):
    head = text.split(start, 1)[-1]
    idx = head.rfind(end)
    return head[:idx] if idx >= 0 else head.rstrip(">\n")


def hashed_embedding(text, dim=DEFAULT_DIM):
    vec = np.zeros(dim)
    words = content_words(text) or ["<empty>"]
    for word in words:
        digest = hashlib.sha256(word.encode("utf-8")).digest()
        index = int.from_bytes(digest[:4], "big") % dim
        vec[index] += 1.0 if digest[4] & 1 else -1.0
    norm = np.linalg.norm(vec)
    if norm == 0:
        vec[0], norm = 1.0, 1.0
    return (vec / norm).tolist()


def _json_list(line):
    try:
        value = json.loads(line)
    except json.JSONDecodeError:
        return []
    return value if isinstance(value, list) else []


def _quote(words, limit=6):
    return " ".join(words[:limit])


def mock_summary(edit_string, max_words=40):
    """Terse list of concrete deltas from a flattened edit string."""
    sections = {}
    for line in edit_string.split("\n"):
        key, sep, value = line.partition(": ")
        if sep:
            sections[key.strip()] = value
    phrases = []
    for old, new in (p for p in _json_list(sections.get("CHANGED", "[]")) if len(p) == 2):
        old_words, new_words = old.split(), new.split()
        removed = [w for w in old_words if w not in new_words]
        added = [w for w in new_words if w not in old_words]
        phrases.append(f"replaced '{_quote(removed)}' with '{_quote(added)}'")
    for label, key in (("removed category", "CATEGORIES REMOVED"), ("added category", "CATEGORIES ADDED"),
                       ("added tag", "TAGS ADDED"), ("removed tag", "TAGS REMOVED"),
                       ("added template", "TEMPLATES ADDED"), ("removed template", "TEMPLATES REMOVED")):
        for item in _json_list(sections.get(key, "[]")):
            phrases.append(f"{label} '{item}'")
    for sentence in _json_list(sections.get("DELETED", "[]")):
        phrases.append(f"deleted '{_quote(sentence.split())}'")
    for sentence in _json_list(sections.get("ADDED", "[]")):
        phrases.append(f"added '{_quote(sentence.split())}'")
    words = "; ".join(phrases).split() or ["no", "substantive", "change"]
    return " ".join(words[:max_words])


def _mock_reassign(prompt):
    summary_words = set(content_words(_between(prompt, "Edit summary: <", ">")))
    other = re.search(r"^(\d+)\. Other changes:", prompt, re.M)
    other_index = other.group(1) if other else "0"
    best, best_score = other_index, 0
    details = prompt.split("Cluster details:\n", 1)[-1]
    for match in re.finditer(r"^(\d+)\. (.*)$", details, re.M):
        if match.group(1) == other_index:
            break
        score = len(summary_words & set(content_words(match.group(2))))
        if score > best_score:
            best, best_score = match.group(1), score
    return best


def _mock_name(samples):
    counts = Counter(content_words(samples))
    top = [w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:3]]
    if not top:
        return {"name": "Miscellaneous", "description": "Edits without a dominant theme."}
    return {
        "name": " ".join(w.capitalize() for w in top),
        "description": "Edits that mostly involve " + ", ".join(top) + ".",
    }


class CachedBackend:
    """Persist every completion (temperature 0 only) and embedding on disk."""

    def __init__(self, backend, directory):
        self.backend = backend
        self.cache = ResponseCache(directory)
        self.completion_model = backend.completion_model
        self.embedding_model = backend.embedding_model

    @staticmethod
    def _label(model):
        return re.sub(r"[^A-Za-z0-9._-]", "_", model)

    def complete(self, prompt, temperature=0.0, attempt=0):
        if temperature != 0:
            return self.backend.complete(prompt, temperature=temperature, attempt=attempt)
        label = self._label(self.completion_model)
        key = hashlib.sha256(f"{attempt}\n{prompt}".encode("utf-8")).hexdigest()
        hit = self.cache.get(label, key)
        if hit is not None:
            return hit["text"]
        text = self.backend.complete(prompt, temperature=temperature, attempt=attempt)
        self.cache.put(label, key, {"text": text})
        return text

    def embed(self, texts):
        label = self._label(self.embedding_model)
        keys = [hashlib.sha256(t.encode("utf-8")).hexdigest() for t in texts]
        out = [None] * len(texts)
        todo = []
        for i, key in enumerate(keys):
            hit = self.cache.get(label, key)
            if hit is None:
                todo.append(i)
            else:
                out[i] = hit["vector"]
        if todo:
            fresh = self.backend.embed([texts[i] for i in todo])
            for i, vector in zip(todo, fresh):
                vector = [float(v) for v in vector]
                self.cache.put(label, keys[i], {"vector": vector})
                out[i] = vector
        return out


def make_backend(kind, cache_dir=None, **options):
    """Build a backend by name (``mock`` or ``http``), cached if ``cache_dir`` is given."""
    if kind == "mock":
        backend = MockBackend(dim=options.get("dim", DEFAULT_DIM))
    elif kind == "http":
        backend = HttpBackend(
            base_url=options.get("base_url") or DEFAULT_BASE_URL,
            completion_model=options.get("completion_model") or DEFAULT_COMPLETION_MODEL,
            embedding_model=options.get("embedding_model") or DEFAULT_EMBEDDING_MODEL,
        )
    else:
        raise ConfigError(f"unknown backend {kind!r} (expected 'mock' or 'http')")
    return CachedBackend(backend, cache_dir) if cache_dir else backend
