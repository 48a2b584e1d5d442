"""JSON schemas for the documents the command line writes."""

from __future__ import annotations

import json
from importlib import resources

SCHEMAS = ("verify_report", "count_report", "bench_report", "matrix_dump")


def load_schema(name: str) -> dict:
    if name not in SCHEMAS:
        raise KeyError(f"no schema named {name!r}")
    return json.loads(resources.files(__name__).joinpath(f"{name}.schema.json").read_text())
