"""Wigner-type random matrix ensembles.

Gaussian orthogonal/unitary ensembles, Bernoulli sign matrices, and
generalized Wigner matrices with a variance profile, plus the
Ornstein-Uhlenbeck interpolation between a fixed matrix and fresh
Gaussian noise.  All sampling is counter-based: entry (i, j) depends
only on (seed, i, j), never on fill order.
"""

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import (
    AsymmetricProfile,
    BoundViolation,
    ColumnSumViolation,
    TimeOutOfRange,
)

KINDS = ("goe", "gue", "bernoulli-wigner", "custom")
SYMMETRIES = ("symmetric", "hermitian")


@dataclass(frozen=True)
class VarianceProfile:
    """Entrywise variance matrix s with c/n <= s_ij <= C/n and unit column sums."""

    n: int
    s: np.ndarray
    c: float
    C: float


@dataclass(frozen=True)
class EnsembleSpec:
    """What to sample: ensemble kind, size, symmetry class, variance profile."""

    kind: str
    n: int
    profile: VarianceProfile | None = None
    symmetry: str | None = None
    moment_bounds: tuple | None = None
    sampler: object = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("dimension must be positive")
        sym = self.symmetry
        if sym is None:
            sym = "hermitian" if self.kind == "gue" else "symmetric"
            object.__setattr__(self, "symmetry", sym)
        if sym not in SYMMETRIES:
            raise ValueError(f"unknown symmetry {sym!r}")
        if self.kind == "goe" and sym != "symmetric":
            raise ValueError("goe is a real symmetric ensemble")
        if self.kind == "gue" and sym != "hermitian":
            raise ValueError("gue is a complex hermitian ensemble")
        if self.kind in ("goe", "gue") and self.profile is not None:
            raise ValueError(f"{self.kind} uses its implicit flat profile")
        if self.kind == "custom" and self.sampler is None:
            raise ValueError("custom ensembles need a standardized sampler")
        if self.profile is not None and self.profile.n != self.n:
            raise ValueError("profile dimension does not match spec dimension")


@dataclass(frozen=True)
class RandomMatrix:
    """Dense symmetric/hermitian matrix with its sampling provenance."""

    n: int
    symmetry: str
    entries: np.ndarray
    provenance: tuple

    def __post_init__(self):
        a = self.entries
        if a.shape != (self.n, self.n):
            raise ValueError("entry array has wrong shape")
        if not np.allclose(a, a.conj().T, rtol=0.0, atol=0.0):
            raise ValueError("entries must equal their conjugate transpose")


def build_variance_profile(raw):
    """Validate a raw nonnegative matrix as a variance profile.

    Columns are renormalized to sum to one only when already within 1e-9;
    larger deviations are rejected.  Returns the profile with the extracted
    band constants c = n*min(s), C = n*max(s).
    """
    s = np.array(raw, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("profile must be a square matrix")
    n = s.shape[0]
    if not np.array_equal(s, s.T):
        if np.abs(s - s.T).max() > 1e-14:
            raise AsymmetricProfile(
                f"max asymmetry {np.abs(s - s.T).max():.3e}")
        s = (s + s.T) / 2.0
    if np.any(s <= 0.0):
        raise BoundViolation("profile entries must be strictly positive")
    colsums = s.sum(axis=0)
    worst = np.abs(colsums - 1.0).max()
    if worst > 1e-9:
        j = int(np.argmax(np.abs(colsums - 1.0)))
        raise ColumnSumViolation(
            f"column {j} sums to {colsums[j]:.12f} (off by {worst:.3e})")
    s = s / colsums[None, :]
    s = (s + s.T) / 2.0
    c = float(n * s.min())
    C = float(n * s.max())
    return VarianceProfile(n=n, s=s, c=c, C=C)


def flat_profile(n):
    """The constant profile s_ij = 1/n (exact unit column sums)."""
    return build_variance_profile(np.full((n, n), 1.0 / n))


def load_profile_csv(path):
    """Load a variance profile from CSV (n rows of n comma-separated reals)."""
    return build_variance_profile(np.loadtxt(path, delimiter=",", ndmin=2))


def _profile_variances(spec):
    """Dense variance matrix used by sampling (implicit flat for goe/gue)."""
    n = spec.n
    if spec.kind == "goe":
        v = np.full((n, n), 1.0 / n)
        np.fill_diagonal(v, 2.0 / n)
        return v
    if spec.kind == "gue":
        # total variance per off-diagonal entry (split evenly re/im); real diagonal
        return np.full((n, n), 1.0 / n)
    if spec.profile is not None:
        return spec.profile.s
    return np.full((n, n), 1.0 / n)


def sample(spec, seed):
    """Draw one matrix.  Deterministic and fill-order independent per (spec, seed)."""
    n = spec.n
    var = _profile_variances(spec)
    iu, ju = np.triu_indices(n)
    sd = np.sqrt(var[iu, ju])
    if spec.kind == "gue":
        re = rng.normals(seed, iu, ju, "re") * (sd / np.sqrt(2.0))
        im = rng.normals(seed, iu, ju, "im") * (sd / np.sqrt(2.0))
        im[iu == ju] = 0.0
        re[iu == ju] = rng.normals(seed, iu[iu == ju], ju[iu == ju], "re") \
            * sd[iu == ju]
        vals = re + 1j * im
        entries = np.zeros((n, n), dtype=complex)
        entries[iu, ju] = vals
        entries[ju, iu] = vals.conj()
        entries[np.arange(n), np.arange(n)] = re[iu == ju]
    else:
        if spec.kind == "bernoulli-wigner":
            vals = rng.signs(seed, iu, ju) * sd
        elif spec.kind == "custom":
            g = rng.bulk_generator(seed, "custom-entries")
            vals = np.asarray(spec.sampler(len(iu), g), dtype=float) * sd
        else:
            vals = rng.normals(seed, iu, ju) * sd
        entries = np.zeros((n, n))
        entries[iu, ju] = vals
        entries[ju, iu] = vals
    return RandomMatrix(n=n, symmetry=spec.symmetry, entries=entries,
                        provenance=(spec, int(seed)))


def gaussian_divisible(w, s, seed):
    """Ornstein-Uhlenbeck step: exp(-s/2)*w + sqrt(1-exp(-s)) * fresh GOE/GUE."""
    if not 0.0 <= s <= 1.0:
        raise TimeOutOfRange(f"time {s} outside [0, 1]")
    kind = "gue" if w.symmetry == "hermitian" else "goe"
    noise = sample(EnsembleSpec(kind=kind, n=w.n), seed)
    entries = np.exp(-s / 2.0) * w.entries \
        + np.sqrt(-np.expm1(-s)) * noise.entries
    return RandomMatrix(n=w.n, symmetry=w.symmetry, entries=entries,
                        provenance=(w.provenance[0], int(seed)))
