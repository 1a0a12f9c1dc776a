"""Page-level record types shared by the crawler, differ and analytics."""

import enum
import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone

from .errors import DataError, PreconditionError

_BOT_NAME = re.compile(r"(?:bot|бот)$", re.I)


class Status(str, enum.Enum):
    DUPLICATED = "duplicated"
    CHANGED = "changed"
    MISSING = "missing"


def parse_timestamp(value):
    """Parse an ISO-8601 timestamp into an aware UTC datetime."""
    if isinstance(value, datetime):
        dt = value
    else:
        dt = datetime.fromisoformat(str(value).replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt):
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def looks_like_bot(user):
    return bool(_BOT_NAME.search(user or ""))


@dataclass(frozen=True)
class RevisionMeta:
    rev_id: int
    parent_id: int
    timestamp: datetime
    user: str = ""
    is_bot: bool = False
    comment: str = ""

    def __post_init__(self):
        if self.rev_id <= 0:
            raise PreconditionError(f"rev_id must be positive, got {self.rev_id}")
        if self.parent_id < 0:
            raise PreconditionError(f"parent_id must be non-negative, got {self.parent_id}")
        if self.rev_id == self.parent_id:
            raise PreconditionError(f"revision {self.rev_id} is its own parent")

    @property
    def key(self):
        """The (rev_id, parent_id) compound key used for lineage matching."""
        return (self.rev_id, self.parent_id)

    def to_dict(self):
        return {
            "rev_id": self.rev_id,
            "parent_id": self.parent_id,
            "timestamp": format_timestamp(self.timestamp),
            "user": self.user,
            "is_bot": self.is_bot,
            "comment": self.comment,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            rev_id=int(data["rev_id"]),
            parent_id=int(data.get("parent_id", 0)),
            timestamp=parse_timestamp(data["timestamp"]),
            user=data.get("user", ""),
            is_bot=bool(data.get("is_bot", False)),
            comment=data.get("comment", ""),
        )


PAGE_RECORD_FIELDS = (
    "title",
    "status",
    "fork_last_rev",
    "upstream_parent_rev",
    "fork_text",
    "upstream_text",
)


@dataclass
class PageRecord:
    title: str
    status: Status
    fork_last_rev: RevisionMeta = None
    upstream_parent_rev: RevisionMeta = None
    fork_text: str = None
    upstream_text: str = None

    def __post_init__(self):
        try:
            self.status = Status(self.status)
        except ValueError:
            raise DataError(f"{self.title!r}: unknown status {self.status!r}") from None
        if self.status is Status.MISSING and (self.fork_last_rev or self.fork_text is not None):
            raise DataError(f"{self.title!r}: missing page cannot carry fork fields")
        if self.status is Status.CHANGED and (self.fork_text is None or self.upstream_text is None):
            raise DataError(f"{self.title!r}: changed page needs both texts")

    def to_dict(self):
        return {
            "title": self.title,
            "status": self.status.value,
            "fork_last_rev": self.fork_last_rev.to_dict() if self.fork_last_rev else None,
            "upstream_parent_rev": (
                self.upstream_parent_rev.to_dict() if self.upstream_parent_rev else None
            ),
            "fork_text": self.fork_text,
            "upstream_text": self.upstream_text,
        }

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(PAGE_RECORD_FIELDS)
        if unknown:
            raise DataError(f"unexpected PageRecord fields: {sorted(unknown)}")
        return cls(
            title=data["title"],
            status=data["status"],
            fork_last_rev=(
                RevisionMeta.from_dict(data["fork_last_rev"]) if data.get("fork_last_rev") else None
            ),
            upstream_parent_rev=(
                RevisionMeta.from_dict(data["upstream_parent_rev"])
                if data.get("upstream_parent_rev")
                else None
            ),
            fork_text=data.get("fork_text"),
            upstream_text=data.get("upstream_text"),
        )


def dumps_line(obj):
    """Canonical one-line JSON used for every JSONL artifact."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=False, separators=(",", ":"))


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps_line(row))
            fh.write("\n")


def parse_rows(path, parse):
    """``parse`` every JSONL row; malformed rows raise DataError naming the line."""
    out = []
    for lineno, row in enumerate(read_jsonl(path), 1):
        try:
            out.append(parse(row))
        except DataError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: record {lineno}: {type(exc).__name__}: {exc}") from None
    return out


def read_pages(path):
    return parse_rows(path, PageRecord.from_dict)
