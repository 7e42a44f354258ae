import numpy as np


def derive_seed(*keys: int) -> int:
    """Stable 63-bit child seed from an integer key path."""
    ss = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
