from __future__ import annotations

import hashlib
import json

import numpy as np

_SEED_MASK = (1 << 63) - 1


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from an arbitrary tuple of JSON-able parts.

    Unlike ``hash()``, the result does not depend on the interpreter's hash
    randomization, so worker processes and reruns agree.
    """
    blob = json.dumps(parts, sort_keys=True, default=str).encode("utf-8")
    digest = hashlib.blake2b(blob, digest_size=8).digest()
    return int.from_bytes(digest, "big") & _SEED_MASK


def rng_for(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
