"""Overlap observables: fluctuation determinants, hafnians, permanents.

Overlaps p_kl measure how a family of projection directions couples a
pair of eigenvectors, with the diagonal centered so p_kk has mean zero
over a random basis.  Determinants of the fluctuation matrix give the
antisymmetrized (Fermionic) observable; hafnians of the doubled block
matrix give the symmetrized (Bosonic) one, with the permanent variant
for complex bases.  Gaussian reference moments A_n and the
Gaussian-vector identity check calibrate both.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import (
    DimensionTooLarge,
    EmptyIndexSet,
    MissingOverlap,
    OddDimension,
)


# --------------------------------------------------------------------
# projections and overlaps
# --------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectionFamily:
    """Projection directions: canonical coordinate indices or explicit vectors.

    C0=None defers the centering to evaluation time, where it defaults to
    (number of directions)/n for real bases and half that for complex ones.
    """

    mode: str
    indices: tuple = ()
    directions: tuple = ()
    C0: float | None = None

    def __post_init__(self):
        if self.mode not in ("canonical-indices", "directions"):
            raise ValueError(f"unknown projection mode {self.mode!r}")
        if self.mode == "canonical-indices":
            if len(self.indices) == 0:
                raise EmptyIndexSet("index set must be nonempty")
            object.__setattr__(self, "indices",
                               tuple(int(i) for i in self.indices))
        elif len(self.directions) == 0:
            raise EmptyIndexSet("direction list must be nonempty")

    @property
    def size(self):
        if self.mode == "canonical-indices":
            return len(self.indices)
        return len(self.directions)


def index_family(indices, C0=None):
    """Canonical-coordinate projection family (0-based indices)."""
    return ProjectionFamily(mode="canonical-indices", indices=tuple(indices),
                            C0=C0)


def direction_family(directions, C0=None):
    """Explicit (not necessarily orthogonal) projection directions."""
    return ProjectionFamily(mode="directions",
                            directions=tuple(np.asarray(q) for q in directions),
                            C0=C0)


@dataclass(frozen=True)
class OverlapSet:
    """Overlap values p_kl for a tuple of eigenvector indices.

    Symmetric bases give real symmetric values; complex bases satisfy
    p_kl = conj(p_lk).  Diagonals carry the centering -C0.
    """

    indices: tuple
    values: dict = field(compare=False)
    C0: float = 0.0
    hermitian: bool = False

    def p(self, k, l):
        try:
            return self.values[(k, l)]
        except KeyError:
            raise MissingOverlap(f"overlap ({k}, {l}) not computed") from None

    def matrix(self, ks=None):
        """Fluctuation matrix over ks (default: all indices of the set)."""
        ks = tuple(self.indices if ks is None else ks)
        m = len(ks)
        dtype = complex if self.hermitian else float
        out = np.empty((m, m), dtype=dtype)
        for a, k in enumerate(ks):
            for b, l in enumerate(ks):
                out[a, b] = self.p(k, l)
        return FluctuationMatrix(indices=ks, values=out)


@dataclass(frozen=True)
class FluctuationMatrix:
    """The m x m matrix of centered overlaps over a distinct index tuple."""

    indices: tuple
    values: np.ndarray


def coefficient_matrix(spec, fam):
    """<q_alpha, u_k> for all alpha, k (conjugate-linear in the basis side)."""
    vectors = spec.vectors
    if fam.mode == "canonical-indices":
        n = vectors.shape[0]
        bad = [i for i in fam.indices if not 0 <= i < n]
        if bad:
            raise IndexError(f"projection indices {bad} outside 0..{n - 1}")
        return vectors[list(fam.indices), :]
    q = np.stack([np.asarray(v) for v in fam.directions])
    return q @ vectors


def default_centering(fam, n, hermitian):
    if fam.C0 is not None:
        return float(fam.C0)
    return fam.size / (2.0 * n) if hermitian else fam.size / n


def overlaps(spec, fam, ks):
    """Overlap set p_kl = sum_alpha <q_a,u_k> conj(<q_a,u_l>) - C0*delta_kl.

    Real bases drop the conjugation (it is a no-op) and produce a symmetric
    real set.
    """
    ks = tuple(int(k) for k in ks)
    n = spec.n
    for k in ks:
        if not 0 <= k < n:
            raise IndexError(f"eigenvector index {k} outside 0..{n - 1}")
    hermitian = bool(np.iscomplexobj(spec.vectors))
    c0 = default_centering(fam, n, hermitian)
    coeff = coefficient_matrix(spec, fam)[:, list(ks)]
    gram = coeff.T @ coeff.conj() if hermitian else coeff.T @ coeff
    values = {}
    for a, k in enumerate(ks):
        for b, l in enumerate(ks):
            v = gram[a, b]
            if k == l:
                v = v - c0
            values[(k, l)] = complex(v) if hermitian else float(v)
    return OverlapSet(indices=ks, values=values, C0=c0, hermitian=hermitian)


# --------------------------------------------------------------------
# particle configurations
# --------------------------------------------------------------------

@dataclass(frozen=True)
class ParticleConfig:
    """Occupation numbers: site -> positive count."""

    occupancy: tuple  # sorted tuple of (site, count)

    @property
    def total(self):
        return sum(c for _, c in self.occupancy)

    @property
    def sites(self):
        return tuple(s for s, _ in self.occupancy)

    @property
    def particles(self):
        """Sites repeated with multiplicity, ascending."""
        return tuple(s for s, c in self.occupancy for _ in range(c))

    @property
    def is_fermionic(self):
        return all(c == 1 for _, c in self.occupancy)


def particle_config(occupancy):
    """Build a config from {site: count} or an iterable of sites."""
    if isinstance(occupancy, dict):
        items = occupancy.items()
    else:
        counts = {}
        for s in occupancy:
            counts[int(s)] = counts.get(int(s), 0) + 1
        items = counts.items()
    occ = tuple(sorted((int(s), int(c)) for s, c in items if c != 0))
    if any(c < 0 for _, c in occ):
        raise ValueError("occupation numbers must be nonnegative")
    return ParticleConfig(occupancy=occ)


# --------------------------------------------------------------------
# exact combinatorial kernels
# --------------------------------------------------------------------

def _cofactor_det(a):
    m = a.shape[0]
    if m == 1:
        return a[0, 0]
    if m == 2:
        return a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    total = 0
    rest = list(range(1, m))
    for j in range(m):
        cols = [c for c in range(m) if c != j]
        minor = a[np.ix_(rest, cols)]
        term = a[0, j] * _cofactor_det(minor)
        total = total + (term if j % 2 == 0 else -term)
    return total


def fermionic_value(P):
    """det P: cofactor expansion up to 4x4 (exact for rational inputs),
    pivoted LU beyond."""
    a = P.values if isinstance(P, FluctuationMatrix) else np.asarray(P)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("fluctuation matrix must be square")
    if a.shape[0] <= 4:
        return _cofactor_det(a)
    return np.linalg.det(a)


def hafnian(a):
    """Sum over perfect matchings of products of entries (diagonal unused)."""
    a = np.asarray(a)
    m = a.shape[0]
    if a.ndim != 2 or a.shape[1] != m:
        raise ValueError("hafnian needs a square matrix")
    if m % 2 != 0:
        raise OddDimension(f"dimension {m} is odd")
    if m > 20:
        raise DimensionTooLarge(f"dimension {m} exceeds the ceiling 20")
    if m == 0:
        return 1.0
    full = (1 << m) - 1
    cache = {}

    def match(mask):
        if mask == 0:
            return 1.0
        try:
            return cache[mask]
        except KeyError:
            pass
        i = (mask & -mask).bit_length() - 1
        rest = mask & ~(1 << i)
        total = 0.0
        r = rest
        while r:
            j = (r & -r).bit_length() - 1
            r &= r - 1
            aij = a[i, j]
            if aij != 0:
                total += aij * match(rest & ~(1 << j))
        cache[mask] = total
        return total

    return match(full)


def permanent(a):
    """Ryser's formula with Gray-code updates; exact for m <= 12."""
    a = np.asarray(a)
    m = a.shape[0]
    if a.ndim != 2 or a.shape[1] != m:
        raise ValueError("permanent needs a square matrix")
    if m > 12:
        raise DimensionTooLarge(f"dimension {m} exceeds the ceiling 12")
    if m == 0:
        return 1.0
    row_sum = np.zeros(m, dtype=a.dtype if a.dtype.kind == "c" else float)
    total = 0.0
    sign = -1.0 if m % 2 else 1.0
    gray = 0
    for t in range(1, 1 << m):
        g = t ^ (t >> 1)
        changed = g ^ gray
        j = changed.bit_length() - 1
        if g & changed:
            row_sum = row_sum + a[:, j]
        else:
            row_sum = row_sum - a[:, j]
        gray = g
        parity = -1.0 if bin(g).count("1") % 2 else 1.0
        total = total + parity * np.prod(row_sum)
    return sign * total


# --------------------------------------------------------------------
# Bosonic observables
# --------------------------------------------------------------------

def odd_product(m):
    """Product of the odd integers <= m (the text's double-factorial reading)."""
    out = 1
    for k in range(1, m + 1, 2):
        out *= k
    return out


def bosonic_normalization(cfg):
    """M(xi) = prod_i odd_product(2 xi_i)."""
    out = 1
    for _, c in cfg.occupancy:
        out *= odd_product(2 * c)
    return out


def bosonic_matrix(cfg, ov):
    """2n x 2n block matrix: block (i, j) is the constant 2x2 block p_{k_i k_j}."""
    parts = cfg.particles
    n = len(parts)
    if n < 1:
        raise ValueError("configuration must hold at least one particle")
    out = np.empty((2 * n, 2 * n))
    for i, ki in enumerate(parts):
        for j, kj in enumerate(parts):
            out[2 * i:2 * i + 2, 2 * j:2 * j + 2] = ov.p(ki, kj)
    return out


def bosonic_value(cfg, ov):
    """Haf(Q(xi)) / M(xi) for a symmetric-basis overlap set."""
    if cfg.total > 10:
        raise DimensionTooLarge(f"{cfg.total} particles exceed the ceiling 10")
    return hafnian(bosonic_matrix(cfg, ov)) / bosonic_normalization(cfg)


def hermitian_bosonic_value(cfg, ov):
    """per(P(xi)) / prod_i xi_i! for a complex-basis overlap set."""
    if cfg.total > 10:
        raise DimensionTooLarge(f"{cfg.total} particles exceed the ceiling 10")
    parts = cfg.particles
    n = len(parts)
    p = np.empty((n, n), dtype=complex)
    for i, ki in enumerate(parts):
        for j, kj in enumerate(parts):
            p[i, j] = ov.p(ki, kj)
    denom = 1
    for _, c in cfg.occupancy:
        denom *= math.factorial(c)
    value = permanent(p) / denom
    return float(value.real) if abs(value.imag) < 1e-10 * (1 + abs(value)) \
        else value


# --------------------------------------------------------------------
# Gaussian calibration
# --------------------------------------------------------------------

def gaussian_det_moment(n):
    """A_n: E[det] moments of the Gaussian reference matrix, by the recursion
    A_n = -(n-1) A_{n-2} with A_1 = 0, A_2 = -1 (so odd n give 0)."""
    if n < 1:
        raise ValueError("order must be at least 1")
    if n % 2 == 1:
        return 0
    a = -1
    for k in range(4, n + 1, 2):
        a = -(k - 1) * a
    return a


def gaussian_bosonic_identity_check(cfg, spec, fam, replicas, seed):
    """Monte Carlo check of the Gaussian-vector representation.

    Draws q = 1_I(alpha) N_alpha + i sqrt(C0) N'_alpha, averages
    prod_i <q, u_{k_i}>^{2 xi_i} / M(xi) over replicas, and compares with
    the hafnian-based value on the same fixed eigenvectors.
    """
    if fam.mode != "canonical-indices":
        raise ValueError("the Gaussian-vector identity uses canonical indices")
    n = spec.n
    c0 = default_centering(fam, n, hermitian=False)
    idx = list(fam.indices)
    u = np.asarray(spec.vectors, dtype=float)
    parts = cfg.particles
    g = rng.bulk_generator(seed, "gaussian-vector")
    block = 200_000 // max(1, len(parts))
    samples = []
    done = 0
    while done < replicas:
        b = min(block, replicas - done)
        n1 = g.standard_normal((b, len(idx)))
        n2 = g.standard_normal((b, n))
        inner = n1 @ u[idx, :] + 1j * np.sqrt(c0) * (n2 @ u)
        prod = np.ones(b, dtype=complex)
        for k in parts:
            prod = prod * inner[:, k] ** 2
        samples.append(prod.real)
        done += b
    vals = np.concatenate(samples) / bosonic_normalization(cfg)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(len(vals)))
    ov = overlaps(spec, fam, sorted(set(parts)))
    exact = bosonic_value(cfg, ov)
    z = abs(est - exact) / se if se > 0 else 0.0
    return {
        "estimate": est,
        "stderr": se,
        "exact": float(exact),
        "zscore": float(z),
        "replicas": int(replicas),
        "pass": bool(z <= 3.0 or abs(est - exact) < 1e-12),
    }
