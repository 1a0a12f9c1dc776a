"""A scripted language-model backend with planted cluster structure.

Each diff inserts one sentence ``"<group> <i>"``. The summary echoes it,
the embedding puts it on the group's axis (or on another group's axis when
planted as misplaced), and fit/reassign/naming answers follow the group word.
"""

import json
import re
import zlib

import numpy as np

from forkdiff.diff import ContentDiff

GROUPS = ("alpha", "beta", "gamma", "delta")


def planted_diffs(sizes):
    return [ContentDiff(f"{group}-{i}", inserted=[f"{group} {i}"])
            for group, n in zip(GROUPS, sizes) for i in range(n)]


class ScriptedBackend:
    completion_model = "scripted"
    embedding_model = "scripted"

    def __init__(self, misplaced=None, dim=8, noise=0.02):
        self.misplaced = dict(misplaced or {})  # (group, i) -> axis group
        self.dim = dim
        self.noise = noise
        self.calls = []

    def complete(self, prompt, temperature=0.0, attempt=0):
        self.calls.append(prompt)
        if "The edit to analyze" in prompt:
            group, i = re.search(r'ADDED: \["(\w+) (\d+)"\]', prompt).groups()
            return json.dumps({"desc": f"{group} change {i}"})
        if "fits the provided cluster" in prompt:
            summary = re.search(r"Edit summary: <(\w+)", prompt).group(1)
            cluster = re.search(r"Cluster details: ~(\w+)", prompt).group(1)
            return "YES" if summary == cluster else "NO"
        if "reclassify the edit" in prompt:
            summary = re.search(r"Edit summary: <(\w+)", prompt).group(1)
            options = dict((name, num) for num, name in re.findall(r"^(\d+)\. (\w+)", prompt, re.M))
            return options.get(summary, re.search(r"^(\d+)\. Other changes", prompt, re.M).group(1))
        if "Edit summaries: <" in prompt:
            words = re.findall(r"^- (\w+)", prompt, re.M)
            top = max(sorted(set(words)), key=words.count)
            return json.dumps({"name": top, "description": f"edits about {top}"})
        raise AssertionError("unexpected prompt")

    def embed(self, texts):
        out = []
        for text in texts:
            group, _, i = text.split()
            axis = self.misplaced.get((group, int(i)), group)
            rng = np.random.default_rng(zlib.crc32(text.encode()))
            vec = rng.normal(0, self.noise, self.dim)
            vec[GROUPS.index(axis)] += 1.0
            out.append((vec / np.linalg.norm(vec)).tolist())
        return out
