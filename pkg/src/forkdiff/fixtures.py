"""Offline stand-in for a MediaWiki Action API, backed by a JSON site description.

Endpoints with a ``fixture:<path>`` base URL are served from here, which is
how the bundled sample corpus and the test-suite run without a network.

Site file layout::

    {"pages": {title: {"revisions": [oldest..newest], "status": "missing"|"blocked"}},
     "pageviews": {title: {"YYYY-MM": count}}}

Each revision is ``{rev_id, parent_id, timestamp, user, comment, content}``.
"""

import calendar
import json
from importlib import resources
from pathlib import Path


def fixture_dir():
    """Directory holding the bundled 12-page sample corpus."""
    return Path(resources.files("forkdiff") / "data" / "fixture")


class FixtureTransport:
    def __init__(self, site):
        self.site = site
        self.requests = []

    @classmethod
    def from_url(cls, url):
        path = url[len("fixture:"):]
        if path.startswith("bundled/"):
            path = fixture_dir() / path[len("bundled/"):]
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def get(self, url, params=None):
        params = dict(params or {})
        self.requests.append((url, params))
        if params.get("action") != "query":
            return 400, {"error": {"code": "badvalue", "info": "only action=query is emulated"}}
        if params.get("prop") == "pageviews":
            return self._pageviews(params["titles"])
        if params.get("prop") == "revisions":
            if "revids" in params:
                return self._by_revid(int(params["revids"]), params)
            return self._history(params["titles"], params)
        return 400, {"error": {"code": "badvalue", "info": "unsupported query"}}

    @staticmethod
    def _wire(rev, with_content):
        out = {
            "revid": rev["rev_id"],
            "parentid": rev["parent_id"],
            "timestamp": rev["timestamp"],
            "user": rev.get("user", ""),
            "comment": rev.get("comment", ""),
        }
        if with_content:
            out["slots"] = {"main": {"contentmodel": "wikitext", "content": rev["content"]}}
        return out

    def _history(self, title, params):
        page = self.site["pages"].get(title)
        if page is None or page.get("status") == "missing":
            return 200, {"query": {"pages": [{"title": title, "missing": True}]}}
        if page.get("status") == "blocked":
            return 403, None
        revisions = list(reversed(page["revisions"]))
        start = int(params.get("rvcontinue", 0))
        limit = int(params.get("rvlimit", 1))
        chunk = revisions[start:start + limit]
        with_content = "content" in params.get("rvprop", "")
        body = {"query": {"pages": [{"title": title,
                                     "revisions": [self._wire(r, with_content) for r in chunk]}]}}
        if start + limit < len(revisions):
            body["continue"] = {"rvcontinue": str(start + limit), "continue": "||"}
        return 200, body

    def _by_revid(self, rev_id, params):
        for title, page in self.site["pages"].items():
            for rev in page.get("revisions", []):
                if rev["rev_id"] == rev_id:
                    with_content = "content" in params.get("rvprop", "")
                    return 200, {"query": {"pages": [{"title": title,
                                                      "revisions": [self._wire(rev, with_content)]}]}}
        return 200, {"query": {"badrevids": {str(rev_id): {"revid": rev_id}}}}

    def _pageviews(self, title):
        monthly = self.site.get("pageviews", {}).get(title)
        if monthly is None:
            return 200, {"query": {"pages": [{"title": title, "missing": True}]}}
        daily = {}
        for month, count in sorted(monthly.items()):
            year, mon = map(int, month.split("-"))
            days = calendar.monthrange(year, mon)[1]
            base, extra = divmod(int(count), days)
            for day in range(1, days + 1):
                daily[f"{month}-{day:02d}"] = base + (1 if day <= extra else 0)
        return 200, {"query": {"pages": [{"title": title, "pageviews": daily}]}}
