"""Master-seed fan-out.

Every randomness consumer gets its own child seed derived from
``hash(master, purpose)``, so adding a new consumer never perturbs the
streams of existing ones.
"""

import hashlib


def derive_seed(master: int, purpose: str) -> int:
    """Return a 64-bit child seed for the given purpose string."""
    digest = hashlib.sha256(f"{master}|{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
