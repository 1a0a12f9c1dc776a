"""Prompt templates.

Templates are plain text files using ``str.format`` placeholders (literal
braces doubled). Defaults ship in ``forkdiff/data/prompts``; any of them can
be replaced by pointing ``PromptSet`` at another directory.
"""

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

TEMPLATE_FILES = {
    "summary": "summary.txt",
    "fit": "fit.txt",
    "reassign": "reassign.txt",
    "naming": "naming.txt",
}
OTHER_CHANGES_NAME = "Other changes"
OTHER_CHANGES_DESCRIPTION = "The edit does not fit any of the provided clusters."
# the reassignment template numbers the escape option for an 8-cluster taxonomy
_OTHER_OPTION = "\n8. Other changes:"


def default_prompt_dir():
    return Path(resources.files("forkdiff") / "data" / "prompts")


@dataclass
class PromptSet:
    summary: str
    fit: str
    reassign: str
    naming: str

    @classmethod
    def load(cls, directory=None):
        directory = Path(directory) if directory else default_prompt_dir()
        fallback = default_prompt_dir()
        texts = {}
        for key, filename in TEMPLATE_FILES.items():
            path = directory / filename
            if not path.exists():
                path = fallback / filename
            texts[key] = path.read_text(encoding="utf-8")
        return cls(**texts)

    def render_summary(self, edit_string, max_words):
        return self.summary.format(MAX_WORDS=max_words, EDIT_STRING=edit_string)

    def render_fit(self, summary, cluster_details):
        return self.fit.format(EDIT_SUMMARY=summary, CLUSTER_DETAILS=cluster_details)

    def render_reassign(self, summary, all_clusters_details, n_clusters):
        template = self.reassign
        if n_clusters != 8:
            template = template.replace(_OTHER_OPTION, f"\n{n_clusters}. Other changes:")
        return template.format(ALL_CLUSTERS_DETAILS=all_clusters_details, EDIT_SUMMARY=summary)

    def render_naming(self, summaries):
        return self.naming.format(EDIT_SUMMARIES="\n".join(f"- {s}" for s in summaries))


def cluster_details(name, description):
    return f"{name}: {description}"


def all_clusters_details(clusters):
    """Numbered ``i. name: description`` lines, numbering from 0."""
    return "\n".join(
        f"{i}. {cluster_details(name, description)}" for i, (name, description) in enumerate(clusters)
    )
