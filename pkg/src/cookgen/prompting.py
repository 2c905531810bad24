"""Prompt templates and reply parsing for the vision-language protocol.

Templates are versioned text assets shipped with the package (prompts/v1);
an alternative directory with the same file names can be supplied to any
stage that talks to the VLM.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import MalformedBackendReply

_TEMPLATE_FILES = {
    "identify": "identify.txt",
    "categorize": "categorize.txt",
    "refine": "refine_location.txt",
}

_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")
_ARTICLE_RE = re.compile(r"^(?:a|an|the)\s+", re.IGNORECASE)
_NONE_REPLIES = {"none", "nothing", "no objects", "n/a"}


@dataclass(frozen=True)
class PromptSet:
    identify: str
    categorize: str
    refine: str
    version: str = "v1"


def load_prompts(directory: str | Path | None = None) -> PromptSet:
    """Load prompt templates from a directory, or the packaged v1 set."""
    texts = {}
    if directory is None:
        pkg = resources.files("cookgen") / "prompts" / "v1"
        for key, fname in _TEMPLATE_FILES.items():
            texts[key] = (pkg / fname).read_text(encoding="utf-8")
        version = "v1"
    else:
        directory = Path(directory)
        for key, fname in _TEMPLATE_FILES.items():
            texts[key] = (directory / fname).read_text(encoding="utf-8")
        version = directory.name
    return PromptSet(version=version, **texts)


def _clean_item(item: str) -> str:
    item = _BULLET_RE.sub("", item.strip())
    item = item.strip(" .:\"'`")
    item = _ARTICLE_RE.sub("", item)
    return item.lower().strip()


def parse_object_list(reply: str) -> list[str]:
    """Parse a VLM reply into lowercase deduplicated noun phrases.

    Accepts comma/semicolon-separated lists, bulleted or numbered lines, or
    a single short phrase. Replies that read as prose (any candidate item
    longer than four words) raise MalformedBackendReply; an explicit "none"
    yields an empty list.
    """
    text = reply.strip()
    if not text:
        raise MalformedBackendReply("empty reply where an object list was expected")
    if text.lower().strip(" .") in _NONE_REPLIES:
        return []
    parts = re.split(r"[,;\n]+", text)
    items = []
    for part in parts:
        cleaned = _clean_item(part)
        if not cleaned:
            continue
        if len(cleaned.split()) > 4:
            raise MalformedBackendReply(f"reply looks like prose, not a list: {reply!r}")
        if cleaned not in items:
            items.append(cleaned)
    if not items:
        raise MalformedBackendReply(f"no object names found in reply: {reply!r}")
    return items


def parse_category_lines(reply: str) -> dict[str, list[str]]:
    """Parse `core:/location:/functional:` lines into a category map.

    Lines that do not start with a known category name are ignored; the
    caller decides what to do with objects left unassigned.
    """
    categories: dict[str, list[str]] = {}
    for line in reply.splitlines():
        m = re.match(r"^\s*(core|location|functional)\s*(?:objects?)?\s*[:\-]\s*(.*)$",
                     line, re.IGNORECASE)
        if not m:
            continue
        name = m.group(1).lower()
        body = m.group(2).strip()
        items: list[str] = []
        if body and body.lower().strip(" .") not in _NONE_REPLIES:
            for part in re.split(r"[,;]+", body):
                cleaned = _clean_item(part)
                if cleaned and len(cleaned.split()) <= 4 and cleaned not in items:
                    items.append(cleaned)
        categories.setdefault(name, []).extend(
            i for i in items if i not in categories.get(name, [])
        )
    return categories
