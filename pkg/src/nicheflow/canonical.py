"""Canonical text encoding for documents that must be byte-reproducible.

All on-disk artifacts (genomes, configs, step logs, manifests) go through
``dumps`` so that structurally equal objects always produce identical bytes:
keys sorted, compact separators, floats rounded to 12 significant digits.
"""

import json
from typing import Any


def canonical_float(x: float) -> float:
    # 12 significant digits; repr of the rounded value is shortest-roundtrip
    # and stable across CPython platforms.
    return float(f"{x:.12g}")


def _canonicalize(obj: Any) -> Any:
    if isinstance(obj, float):
        return canonical_float(obj)
    if isinstance(obj, dict):
        return {str(k): _canonicalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonicalize(v) for v in obj]
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_canonicalize(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def loads(text: str) -> Any:
    return json.loads(text)
