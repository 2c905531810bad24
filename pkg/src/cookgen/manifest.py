"""JSONL manifest IO.

Stages communicate exclusively through manifests and files on disk. Paths
stored in a manifest are relative to the manifest's own directory so that an
artifact tree can be moved or compared byte-for-byte across machines.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Iterable

from .errors import MissingInput, SchemaMismatch


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"manifest not found: {path}")
    rows = []
    with path.open("r", encoding="utf-8") as f:
        for line_num, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaMismatch(f"{path}:{line_num}: invalid JSON: {exc}") from exc
    return rows


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def write_json(path: str | Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: str | Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"file not found: {path}")
    with path.open("r", encoding="utf-8") as f:
        return json.load(f)


def relativize(path: str | Path, base: str | Path) -> str:
    """Express `path` relative to `base`, tolerating unrelated roots."""
    try:
        rel = os.path.relpath(Path(path), Path(base))
    except ValueError:  # different drive on windows
        return str(path)
    return rel.replace(os.sep, "/")


def resolve(rel: str | Path, base: str | Path) -> Path:
    rel = Path(rel)
    if rel.is_absolute():
        return rel
    return (Path(base) / rel).resolve()
