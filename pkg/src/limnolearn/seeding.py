"""Deterministic seed derivation for independent random streams."""

from __future__ import annotations

import numpy as np

_TAGS = {}


def _encode(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    if isinstance(part, str):
        if part not in _TAGS:
            _TAGS[part] = int.from_bytes(part.encode()[:8].ljust(8, b"\0"),
                                         "little") & 0xFFFFFFFF
        return _TAGS[part]
    raise TypeError(f"seed parts must be int or str, got {type(part)}")


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from a mixed tuple of ints and short strings."""
    entropy = tuple(_encode(p) for p in parts)
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])
