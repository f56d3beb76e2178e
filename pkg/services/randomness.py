"""
Derivación determinista de semillas.

Todas las semillas hijas salen de `numpy.random.SeedSequence` a partir de la
semilla maestra y de claves enteras estables (índice de árbol, pliegue,
repetición, entropía del checksum), nunca del reloj.
"""
import hashlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _as_entropy(key: Key) -> int:
    if isinstance(key, str):
        return int(hashlib.sha256(key.encode("utf-8")).hexdigest()[:16], 16)
    return int(key)


def derive_seed(seed: int, *keys: Key) -> int:
    """Semilla de 64 bits derivada de (seed, claves...)"""
    sequence = np.random.SeedSequence([int(seed)] + [_as_entropy(key) for key in keys])
    low, high = sequence.generate_state(2, dtype=np.uint32)
    return (int(high) << 32) | int(low)


def make_rng(seed: int, *keys: Key) -> np.random.Generator:
    """Generador local a una llamada; nunca se comparte entre llamadas"""
    return np.random.default_rng(derive_seed(seed, *keys))
