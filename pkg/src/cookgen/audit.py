"""Append-only structured audit log.

Each pipeline stage writes exactly one terminal record per triplet. The log
carries wall-clock data and is therefore kept out of the deterministic
artifact tree (stages write it under `<out>/audit/`).
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any


class AuditLog:
    def __init__(self, out_dir: str | Path, stage: str):
        self.stage = stage
        self.path = Path(out_dir) / "audit" / f"{stage}.jsonl"
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def record(self, triplet_id: str, event: str, **details: Any) -> None:
        entry = {
            "ts": datetime.now(timezone.utc).isoformat(),
            "stage": self.stage,
            "triplet_id": triplet_id,
            "event": event,
        }
        if details:
            entry["details"] = details
        with self.path.open("a", encoding="utf-8") as f:
            f.write(json.dumps(entry, sort_keys=True, default=str) + "\n")
