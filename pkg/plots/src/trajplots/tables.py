"""Readers for the exported table schemas (CSV or JSON rows)."""

from __future__ import annotations

import csv
import json
from pathlib import Path

_TYPES = {
    "step": int,
    "cluster_id": int,
    "accuracy": float,
    "r": float,
    "value": float,
    "kappa": float,
}


def read_table(path: str | Path) -> list[dict]:
    path = Path(path)
    if path.suffix == ".json":
        rows = json.loads(path.read_text(encoding="utf-8"))
    elif path.suffix == ".csv":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [dict(r) for r in csv.DictReader(fh)]
    else:
        raise ValueError(f"{path}: expected a .csv or .json table")
    out = []
    for r in rows:
        typed = {}
        for k, v in r.items():
            if k in _TYPES and v not in (None, ""):
                typed[k] = _TYPES[k](float(v)) if _TYPES[k] is int else _TYPES[k](v)
            elif k == "dev_perplexity":
                typed[k] = None if v in (None, "") else float(v)
            else:
                typed[k] = v
        out.append(typed)
    return out


def load_annotations(table_path: str | Path) -> dict | None:
    """Matched-performance metadata from figures_manifest.json next to the
    correlations table, if present."""
    fm = Path(table_path).parent / "figures_manifest.json"
    if not fm.exists():
        return None
    manifest = json.loads(fm.read_text(encoding="utf-8"))
    return manifest.get("tables", {}).get("correlations", {}).get("annotations")
