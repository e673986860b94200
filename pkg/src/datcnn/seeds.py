"""Deterministic seed derivation.

Every run draws all of its randomness from a single top-level seed. Sub-seeds
are derived by hashing the root seed together with a purpose string and
optional indices, e.g. ``derive_seed(root, "fold", 3)``. SHA-256 keeps the
derivation stable across processes and platforms, so a whole experiment is
reproducible bit-for-bit from one integer.
"""

import hashlib


def derive_seed(root, *parts):
    """Derive a 64-bit sub-seed from a root seed and purpose parts."""
    key = "/".join(str(p) for p in (root, *parts))
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
