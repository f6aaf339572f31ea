"""Canonical text serialization.

Every value the engine persists (topologies, hypotheses, trace records,
landscape specs) goes through one of two encoders:

* ``dumps``        -- compact JSON, keys sorted, for content addressing and
                      documents whose key order carries no meaning.
* ``dumps_ordered`` -- compact JSON preserving insertion order, for wire
                      records whose key order is part of the contract.

Both reject non-finite floats; Python's float repr already gives the
shortest round-trip decimal form.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any


def dumps(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def dumps_ordered(doc: Any) -> str:
    return json.dumps(doc, sort_keys=False, separators=(",", ":"), allow_nan=False)


def loads(text: str) -> Any:
    return json.loads(text)


def digest(doc: Any) -> str:
    """Content hash of a document's canonical form (hex sha256)."""
    return hashlib.sha256(dumps(doc).encode("utf-8")).hexdigest()


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
