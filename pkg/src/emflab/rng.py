"""Counter-based deterministic random numbers.

Every draw is a pure function of a 64-bit seed plus integer index words
(e.g. matrix position (i, j) or a replica id), so output never depends on
fill order or thread count.  The mixer is the splitmix64 finalizer applied
after each absorbed word; uniforms take the top 53 bits, Gaussians go
through the inverse normal CDF.
"""

import hashlib

import numpy as np
from scipy.special import ndtri

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _finalize(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _as_word(w):
    """Coerce an int, array of ints, or str tag to uint64 (mod 2^64)."""
    if isinstance(w, str):
        digest = hashlib.blake2b(w.encode(), digest_size=8).digest()
        return np.uint64(int.from_bytes(digest, "little"))
    if isinstance(w, (int, np.integer)):
        return np.uint64(int(w) & _MASK)
    arr = np.asarray(w)
    if not np.issubdtype(arr.dtype, np.integer):
        raise TypeError(f"index words must be integers, got {arr.dtype}")
    return arr.astype(np.int64).view(np.uint64) if arr.dtype.kind == "i" \
        else arr.astype(np.uint64)


def hash_words(seed, *words):
    """Mix seed and index words into uint64 hashes (broadcasting over arrays)."""
    with np.errstate(over="ignore"):
        h = _finalize(_as_word(seed) + _GAMMA)
        for w in words:
            h = _finalize((h ^ _as_word(w)) + _GAMMA)
    return h


def uniforms(seed, *words):
    """Uniform doubles in (0, 1), one per broadcast index."""
    h = hash_words(seed, *words)
    return (h >> np.uint64(11)) * 2.0**-53 + 2.0**-54


def normals(seed, *words):
    """Standard normal doubles, one per broadcast index."""
    return ndtri(uniforms(seed, *words))


def signs(seed, *words):
    """±1.0 with equal probability, one per broadcast index."""
    h = hash_words(seed, *words)
    return np.where((h >> np.uint64(63)).astype(bool), 1.0, -1.0)


def child_seed(seed, *words):
    """Derive an independent 64-bit stream seed (e.g. per replica)."""
    return int(hash_words(seed, *words))


def bulk_generator(seed, *words):
    """numpy Generator seeded from a derived child seed, for bulk path noise."""
    return np.random.default_rng(child_seed(seed, *words))
