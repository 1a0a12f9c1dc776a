import json
from datetime import datetime, timedelta, timezone

import pytest

from forkdiff.crawl import WikiEndpoint, crawl, load_title_list
from forkdiff.diff import diff_pages
from forkdiff.fixtures import fixture_dir
from forkdiff.records import RevisionMeta, Status, read_pages

T0 = datetime(2023, 1, 1, tzinfo=timezone.utc)


def fixture_endpoints():
    return (
        WikiEndpoint("fixture:bundled/upstream.json", "upstream", rate_limit=1000.0),
        WikiEndpoint("fixture:bundled/fork.json", "fork", rate_limit=1000.0),
    )


def rev(rev_id, parent_id, minutes=0, user="Editor"):
    return RevisionMeta(rev_id, parent_id, T0 + timedelta(minutes=minutes), user, False, "")


@pytest.fixture(scope="session")
def fixture_crawl(tmp_path_factory):
    out = tmp_path_factory.mktemp("crawl")
    upstream, fork = fixture_endpoints()
    manifest = crawl(upstream, fork, load_title_list(fixture_dir() / "titles.txt"), out)
    return out, manifest


@pytest.fixture(scope="session")
def fixture_pages(fixture_crawl):
    return read_pages(fixture_crawl[0] / "pages.jsonl")


@pytest.fixture(scope="session")
def fixture_diffs(fixture_pages):
    return {p.title: diff_pages(p) for p in fixture_pages if p.status is Status.CHANGED}


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
