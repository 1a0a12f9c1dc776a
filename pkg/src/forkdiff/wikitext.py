"""Wikitext element extraction and prose sentence segmentation.

The parser is deliberately forgiving: it never raises on malformed markup.
Unbalanced constructs are dropped from the prose and counted in
``WikitextElements.diagnostics`` instead.
"""

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from urllib.parse import urlsplit

import tldextract

CATEGORY_NAMESPACES = ("категория", "category", "к")
FILE_NAMESPACES = ("файл", "file", "image", "изображение", "media", "медиа")
CITE_TEMPLATE_PREFIXES = ("cite", "citation", "статья", "книга", "публикация", "source")
MEDIA_EXTENSIONS = re.compile(
    r"\.(?:jpe?g|png|svg|gif|tiff?|webp|ogg|oga|ogv|webm|mp3|wav|flac|pdf|djvu)$", re.I
)

_COMMENT = re.compile(r"<!--.*?-->", re.S)
_REF_SELF_CLOSING = re.compile(r"<ref\b[^>]*/\s*>", re.I)
_REF_BLOCK = re.compile(r"<ref\b[^>]*>(.*?)</ref\s*>", re.I | re.S)
_GALLERY = re.compile(r"<gallery\b[^>]*>(.*?)</gallery\s*>", re.I | re.S)
_DROPPED_BLOCKS = re.compile(
    r"<(math|syntaxhighlight|source|score|timeline|chem|graph|templatedata)\b[^>]*>.*?</\1\s*>",
    re.I | re.S,
)
_HTML_TAG = re.compile(r"</?[A-Za-z][A-Za-z0-9]*\b[^<>]*>")
_URL = re.compile(r"https?://[^\s|\]\[{}<>\"']+", re.I)
_EXTERNAL_LINK = re.compile(r"\[(?:https?:)?//[^\s\]]+(?:\s+([^\]]*))?\]", re.I)
_BEHAVIOR_SWITCH = re.compile(r"__[A-ZА-ЯЁ_]+__")
_BOLD_ITALIC = re.compile(r"'{2,5}")
_HEADING = re.compile(r"^\s*(=+)\s*.*?\s*\1\s*$")
_INTERWIKI = re.compile(r"^:?[a-z]{2,3}(?:-[a-z]+)*:", re.I)
_WHITESPACE = re.compile(r"\s+")

_extract_domain = tldextract.TLDExtract(suffix_list_urls=(), cache_dir=None)


@dataclass
class WikitextElements:
    sentences: list = field(default_factory=list)
    categories: set = field(default_factory=set)
    references: list = field(default_factory=list)
    media: set = field(default_factory=set)
    templates: set = field(default_factory=set)
    tags: set = field(default_factory=set)
    diagnostics: Counter = field(default_factory=Counter)


def normalize_text(text):
    """NFC-normalize and collapse runs of whitespace."""
    return _WHITESPACE.sub(" ", unicodedata.normalize("NFC", text)).strip()


def _normalize_name(name):
    name = normalize_text(name.replace("_", " "))
    return name[:1].upper() + name[1:]


@lru_cache(maxsize=65536)
def registrable_domain(url):
    """Public-suffix aware registrable domain of ``url``.

    Hosts without a known public suffix (IP literals, reserved TLDs such as
    ``.example``) fall back to the hostname minus a leading ``www.``.
    """
    host = (urlsplit(url).hostname or "").lower().rstrip(".")
    if not host:
        return ""
    result = _extract_domain(host)
    if result.suffix and result.domain:
        return f"{result.domain}.{result.suffix}"
    return host[4:] if host.startswith("www.") else host


def _clean_url(url):
    return url.rstrip(".,;:!?)»")


def _find_closing(text, start, opener, closer):
    """Index just past the ``closer`` balancing the ``opener`` at ``start``, or -1."""
    depth = 0
    i = start
    n = len(text)
    while i < n:
        if text.startswith(opener, i):
            depth += 1
            i += len(opener)
        elif text.startswith(closer, i):
            depth -= 1
            i += len(closer)
            if depth == 0:
                return i
        else:
            i += 1
    return -1


def _split_top_level(body, sep="|"):
    """Split on ``sep`` ignoring separators nested inside ``{{ }}`` or ``[[ ]]``."""
    parts, depth_t, depth_l, last, i = [], 0, 0, 0, 0
    while i < len(body):
        two = body[i:i + 2]
        if two == "{{":
            depth_t += 1
            i += 2
        elif two == "}}" and depth_t:
            depth_t -= 1
            i += 2
        elif two == "[[":
            depth_l += 1
            i += 2
        elif two == "]]" and depth_l:
            depth_l -= 1
            i += 2
        else:
            if body[i] == sep and not depth_t and not depth_l:
                parts.append(body[last:i])
                last = i + 1
            i += 1
    parts.append(body[last:])
    return parts


class _Extractor:
    def __init__(self):
        self.elements = WikitextElements()

    def add_reference(self, url):
        url = _clean_url(url)
        if url:
            self.elements.references.append((url, registrable_domain(url)))

    def references_in(self, fragment):
        """Collect URLs from a <ref> body or cite template, in document order."""
        for url in _URL.findall(fragment):
            self.add_reference(url)

    def template(self, body):
        parts = _split_top_level(body)
        raw_name = parts[0].strip()
        if not raw_name or raw_name.startswith("#") or raw_name.startswith("{"):
            return
        if ":" in raw_name and raw_name.split(":", 1)[0].strip().isupper():
            # magic word such as DEFAULTSORT:, DISPLAYTITLE:
            return
        name = _normalize_name(raw_name)
        self.elements.templates.add(name)

        positional, named = [], {}
        for arg in parts[1:]:
            key, eq, value = arg.partition("=")
            if eq and "{{" not in key and "[[" not in key:
                named[normalize_text(key).lower()] = value
            else:
                positional.append(arg)
            value = (value if eq else arg).strip()
            if MEDIA_EXTENSIONS.search(value) and not re.search(r"[\[\]{}|<>]", value):
                self.elements.media.add(_normalize_name(value.split(":", 1)[-1]))

        if name.lower().startswith(CITE_TEMPLATE_PREFIXES):
            for key in ("url", "archive-url", "archiveurl", "ссылка"):
                if key in named:
                    for url in _URL.findall(named[key]):
                        self.add_reference(url)
        elif positional and not named and all(
            p.strip() and not re.search(r"[\[\]{}<>=\n]", p) and len(p) <= 100 for p in positional
        ):
            self.elements.tags.add("|".join([name] + [normalize_text(p) for p in positional]))

        for arg in parts[1:]:
            self.strip_templates(arg)

    def strip_templates(self, text):
        """Record every template in ``text`` (recursively) and return the text without them."""
        out = []
        i = 0
        while True:
            j = text.find("{{", i)
            if j < 0:
                out.append(text[i:])
                break
            out.append(text[i:j])
            end = _find_closing(text, j, "{{", "}}")
            if end < 0:
                self.elements.diagnostics["unbalanced_template"] += 1
                newline = text.find("\n", j)
                i = len(text) if newline < 0 else newline
                continue
            inner = text[j + 2:end - 2]
            if inner.startswith("{") and inner.endswith("}"):
                pass  # {{{parameter}}}
            else:
                self.template(inner)
            i = end
        return "".join(out)

    def link(self, body):
        """Handle one [[...]] body; return the text it contributes to prose."""
        target, _, rest = body.partition("|")
        target_stripped = target.strip()
        leading_colon = target_stripped.startswith(":")
        namespace, colon, name = target_stripped.lstrip(":").partition(":")
        ns = namespace.strip().lower()
        if colon and ns in CATEGORY_NAMESPACES and not leading_colon:
            category = _normalize_name(name)
            if category:
                self.elements.categories.add(category)
            return ""
        if colon and ns in FILE_NAMESPACES:
            filename = _normalize_name(name)
            if filename:
                self.elements.media.add(filename)
            return ""
        if colon and _INTERWIKI.match(target_stripped) and not leading_colon and not rest:
            return ""
        if rest:
            return rest.rsplit("|", 1)[-1] if "[[" not in rest else self.strip_links(rest)
        return target_stripped.lstrip(":")

    def strip_links(self, text):
        out = []
        i = 0
        while True:
            j = text.find("[[", i)
            if j < 0:
                out.append(text[i:])
                break
            out.append(text[i:j])
            end = _find_closing(text, j, "[[", "]]")
            if end < 0:
                self.elements.diagnostics["unbalanced_link"] += 1
                out.append(text[j + 2:])
                break
            out.append(self.link(text[j + 2:end - 2]))
            i = end
        return "".join(out)

    def strip_tables(self, text):
        lines, depth = [], 0
        for line in text.split("\n"):
            stripped = line.lstrip()
            if stripped.startswith("{|"):
                depth += 1
                continue
            if depth and stripped.startswith("|}"):
                depth -= 1
                continue
            if not depth:
                lines.append(line)
        if depth:
            self.elements.diagnostics["unclosed_table"] += 1
        return "\n".join(lines)

    def run(self, text):
        text = unicodedata.normalize("NFC", text)
        text = _COMMENT.sub("", text)
        if "<!--" in text:
            self.elements.diagnostics["unclosed_comment"] += 1
            text = text[:text.index("<!--")]

        for match in _GALLERY.finditer(text):
            for line in match.group(1).split("\n"):
                filename = line.split("|", 1)[0].strip()
                if filename:
                    self.elements.media.add(_normalize_name(filename.split(":", 1)[-1]))
        text = _GALLERY.sub("", text)
        text = _DROPPED_BLOCKS.sub("", text)

        def ref_block(match):
            self.references_in(self.strip_templates(match.group(1)))
            return ""

        text = _REF_BLOCK.sub(ref_block, text)
        text = _REF_SELF_CLOSING.sub("", text)
        if re.search(r"<ref\b", text, re.I):
            self.elements.diagnostics["unclosed_ref"] += 1
            text = re.sub(r"<ref\b[^>]*>.*", "", text, flags=re.I)

        for switch in _BEHAVIOR_SWITCH.findall(text):
            self.elements.tags.add(switch)
        text = _BEHAVIOR_SWITCH.sub("", text)

        text = self.strip_tables(text)
        text = self.strip_templates(text)
        text = self.strip_links(text)
        text = _EXTERNAL_LINK.sub(lambda m: m.group(1) or "", text)
        text = _HTML_TAG.sub("", text)
        text = _BOLD_ITALIC.sub("", text)

        for line in text.split("\n"):
            if _HEADING.match(line):
                continue
            line = line.strip().lstrip("*#:;").strip()
            if not line or re.fullmatch(r"-{4,}", line):
                continue
            self.elements.sentences.extend(segment_sentences(line))
        return self.elements


def parse_wikitext(text):
    """Split wikitext into prose sentences and structural elements.

    >>> el = parse_wikitext("Текст. [[Категория:X]]")
    >>> el.sentences, el.categories
    (['Текст.'], {'X'})
    """
    return _Extractor().run(text)


# Tokens (lowercased, final period removed) after which a period does not end
# a sentence.
ABBREVIATIONS = frozenset(
    """
    г гг ул пр просп пер пл наб ш д корп кв стр им т е п см ср род ок англ нем франц фр
    лат греч рус укр итал исп араб кит япон проф акад доц чл тыс млн млрд руб коп св ст
    обл р-н пос с дер гл напр др вв в изд тт т.е т.д т.п т.н н.э до.н.э и.о ген им.
    mr mrs ms dr prof st jr sr vs etc e.g i.e cf no nos fig figs vol vols ed eds al inc
    ltd co corp mt ft gen col lt sgt rev hon u.s u.k approx est dept univ jan feb mar apr
    jun jul aug sep sept oct nov dec
    """.split()
)

_BOUNDARY = re.compile(r"([.!?…]+)([\"»”’)\]]*)\s+(?=[\"«“(\[]?[A-ZА-ЯЁ0-9])")
_LAST_TOKEN = re.compile(r"(\S+)$")
_CYRILLIC = re.compile(r"[а-яё]", re.I)


def _is_abbreviation(prefix):
    match = _LAST_TOKEN.search(prefix)
    if not match:
        return False
    token = match.group(1).lstrip("(«\"'[").lower()
    if len(token) == 1 and token.isalpha():
        # a lone Latin letter after Cyrillic text is a Roman numeral ("Петром I.")
        before = _LAST_TOKEN.search(prefix[:match.start()].rstrip())
        if token in "ivx" and before and _CYRILLIC.search(before.group(1)):
            return False
        # initials ("А. С. Пушкин") and single-letter abbreviations
        return True
    return token in ABBREVIATIONS or token.rstrip(".") in ABBREVIATIONS


def segment_sentences(prose):
    """Split markup-free prose into whitespace-normalized sentences.

    A boundary is sentence-final punctuation followed by whitespace and an
    uppercase letter or digit. Periods after known abbreviations or
    single-letter initials are not boundaries.
    """
    prose = normalize_text(prose)
    if not prose:
        return []
    sentences = []
    start = 0
    for match in _BOUNDARY.finditer(prose):
        punct = match.group(1)
        if punct == "." and _is_abbreviation(prose[start:match.start(1)]):
            continue
        sentences.append(prose[start:match.end(2)].strip())
        start = match.end()
    sentences.append(prose[start:].strip())
    return [s for s in sentences if s]
