"""Sparse anticommuting-variable calculus over four generator families.

Elements are sparse multilinear expansions over the 4N generators
eta_0..eta_{N-1}, xi_*, phi_*, psi_* (family-major canonical order),
with complex coefficients and monomials stored as ascending id tuples.
The Gaussian functional integrates against
exp(sum_ij eta_i (Delta^{-1})_ij xi_j + sum_i phi_i psi_i) and divides by
the partition function computed in the same ordering, so normalization
and global sign hold by construction for every N; the one-pair Wick
value fixes the remaining convention and is asserted in tests.
Determinant identities (Wick theorem, observable construction) are
verified by brute-force expansion at N <= 4.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    GeneratorBudgetExceeded,
    IncompleteOrdering,
    OddDegreeInput,
    SingularCovariance,
)
from .observables import default_centering

FAMILIES = ("eta", "xi", "phi", "psi")
MAX_SITES = 6  # 4N <= 24


@dataclass(frozen=True)
class GeneratorIndex:
    """One anticommuting generator: family and 0-based site."""

    family: str
    site: int

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.site < 0:
            raise ValueError("site must be nonnegative")

    def gid(self, n_sites):
        if n_sites > MAX_SITES:
            raise GeneratorBudgetExceeded(
                f"{4 * n_sites} generators exceed the budget {4 * MAX_SITES}")
        if self.site >= n_sites:
            raise ValueError(f"site {self.site} outside 0..{n_sites - 1}")
        return FAMILIES.index(self.family) * n_sites + self.site


class GrassmannElement:
    """Sparse expansion: map from ascending generator-id tuples to complex."""

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = {}
        if terms:
            for mono, c in terms.items():
                if c != 0:
                    self.terms[tuple(mono)] = complex(c)

    @staticmethod
    def scalar(c):
        return GrassmannElement({(): c})

    @staticmethod
    def generator(gid):
        return GrassmannElement({(int(gid),): 1.0})

    @property
    def is_zero(self):
        return not self.terms

    def __add__(self, other):
        if not isinstance(other, GrassmannElement):
            other = GrassmannElement.scalar(other)
        out = dict(self.terms)
        for mono, c in other.terms.items():
            c2 = out.get(mono, 0.0) + c
            if c2 == 0:
                out.pop(mono, None)
            else:
                out[mono] = c2
        return GrassmannElement(out)

    def __sub__(self, other):
        if not isinstance(other, GrassmannElement):
            other = GrassmannElement.scalar(other)
        return self + (other * -1.0)

    def __mul__(self, scalar):
        return GrassmannElement({m: c * scalar for m, c in self.terms.items()})

    __rmul__ = __mul__

    def coefficient(self, mono):
        return self.terms.get(tuple(sorted(mono)), 0.0)

    def __repr__(self):
        if self.is_zero:
            return "0"
        bits = []
        for mono in sorted(self.terms, key=lambda m: (len(m), m)):
            bits.append(f"{self.terms[mono]}*g{list(mono)}")
        return " + ".join(bits)


def _merge_sign(m1, m2):
    """Koszul sign for reordering the concatenation of two ascending
    monomials into ascending order; None when they share a generator."""
    crossings = 0
    i = j = 0
    while i < len(m1) and j < len(m2):
        if m1[i] == m2[j]:
            return None, ()
        if m1[i] < m2[j]:
            i += 1
        else:
            crossings += len(m1) - i
            j += 1
    merged = tuple(sorted(m1 + m2))
    return (-1 if crossings % 2 else 1), merged


def wedge(a, b):
    """Associative anticommutative product."""
    out = {}
    for m1, c1 in a.terms.items():
        if c1 == 0:
            continue
        for m2, c2 in b.terms.items():
            sign, merged = _merge_sign(m1, m2)
            if sign is None:
                continue
            if len(merged) > 4 * MAX_SITES:
                raise GeneratorBudgetExceeded(
                    f"monomial of degree {len(merged)} exceeds the budget")
            c = out.get(merged, 0.0) + sign * c1 * c2
            if c == 0:
                out.pop(merged, None)
            else:
                out[merged] = c
    return GrassmannElement(out)


def projection(v, family, n_sites=None):
    """<v> in one family: sum_alpha v(alpha) * generator(family, alpha)."""
    v = np.asarray(v)
    n = len(v) if n_sites is None else n_sites
    if n > MAX_SITES:
        raise GeneratorBudgetExceeded(
            f"{4 * n} generators exceed the budget {4 * MAX_SITES}")
    terms = {}
    for alpha, val in enumerate(v):
        if val != 0:
            gid = GeneratorIndex(family, alpha).gid(n)
            terms[(gid,)] = complex(val)
    return GrassmannElement(terms)


def grassmann_exp(a):
    """exp of a nilpotent even element: sum_m a^m / m! until a^m = 0."""
    for mono in a.terms:
        if len(mono) == 0:
            raise OddDegreeInput("exponential argument has a constant term")
        if len(mono) % 2 != 0:
            raise OddDegreeInput(f"odd-degree monomial {mono}")
    out = GrassmannElement.scalar(1.0)
    power = GrassmannElement.scalar(1.0)
    m = 0
    while True:
        power = wedge(power, a)
        m += 1
        if power.is_zero:
            return out
        out = out + power * (1.0 / math.factorial(m))


def berezin_integral(a, ordering):
    """Coefficient of the full wedge of `ordering`, signed by the reordering
    of the canonical stored monomial into the requested sequence."""
    ids = [g if isinstance(g, (int, np.integer)) else g for g in ordering]
    ids = [int(g) for g in ids]
    if len(set(ids)) != len(ids):
        raise IncompleteOrdering("ordering repeats a generator")
    used = set()
    for mono in a.terms:
        used.update(mono)
    if not used.issubset(ids):
        raise IncompleteOrdering(
            f"ordering misses generators {sorted(used - set(ids))}")
    target = tuple(sorted(ids))
    coeff = a.terms.get(target, 0.0)
    if coeff == 0:
        return 0.0
    return coeff * _permutation_parity(ids)


def _permutation_parity(seq):
    order = sorted(range(len(seq)), key=lambda i: seq[i])
    seen = [False] * len(seq)
    sign = 1
    for start in range(len(seq)):
        if seen[start]:
            continue
        j = start
        length = 0
        while not seen[j]:
            seen[j] = True
            j = order[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


# --------------------------------------------------------------------
# Gaussian functional
# --------------------------------------------------------------------

@dataclass(frozen=True)
class Covariance:
    """Invertible coupling matrix Delta with the centering constant C0."""

    delta: np.ndarray
    C0: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError("covariance must be square")
        object.__setattr__(self, "delta", d)
        if self.C0 < 0:
            raise ValueError("C0 must be nonnegative")

    @property
    def n(self):
        return self.delta.shape[0]

    @property
    def condition(self):
        return float(np.linalg.cond(self.delta))


class GaussianExpectation:
    """Precomputed Gaussian functional for one covariance.

    Caches exp(B) for B = sum eta_i (Delta^{-1})_ij xi_j + sum phi_i psi_i,
    and evaluates E[f] = (f wedge exp(B))_top / (exp(B))_top by complement
    lookups, one per term of f.
    """

    def __init__(self, cov):
        n = cov.n
        if n > MAX_SITES:
            raise GeneratorBudgetExceeded(
                f"{4 * n} generators exceed the budget {4 * MAX_SITES}")
        if cov.condition > 1e12:
            raise SingularCovariance(
                f"condition number {cov.condition:.3e} too large")
        self.cov = cov
        self.n = n
        inv = np.linalg.inv(cov.delta)
        b = GrassmannElement()
        for i in range(n):
            for j in range(n):
                if inv[i, j] != 0:
                    b = b + GrassmannElement(
                        {(_gid("eta", i, n), _gid("xi", j, n)): inv[i, j]})
            b = b + GrassmannElement(
                {(_gid("phi", i, n), _gid("psi", i, n)): 1.0})
        self.expB = grassmann_exp(b)
        full = tuple(range(4 * n))
        self.full = full
        self.z = self.expB.terms.get(full, 0.0)
        if self.z == 0:
            raise SingularCovariance("vanishing partition function")

    def expect(self, f):
        """E[f] by pairing each term of f with its complement in exp(B)."""
        full_set = set(self.full)
        total = 0.0
        for mono, c in f.terms.items():
            comp = tuple(sorted(full_set - set(mono)))
            d = self.expB.terms.get(comp, 0.0)
            if d == 0:
                continue
            sign, _ = _merge_sign(mono, comp)
            total += sign * c * d
        return total / self.z


def _gid(family, site, n):
    return FAMILIES.index(family) * n + site


def gaussian_expectation(f, cov, engine=None):
    """Normalized Gaussian functional of one element."""
    if engine is None:
        engine = GaussianExpectation(cov)
    return engine.expect(f)


def _paired_factor(i, j, c0, n):
    """(eta_i + i sqrt(C0) phi_i) wedge (xi_j + i sqrt(C0) psi_j)."""
    root = 1j * math.sqrt(c0)
    left = GrassmannElement.generator(_gid("eta", i, n)) \
        + GrassmannElement.generator(_gid("phi", i, n)) * root
    right = GrassmannElement.generator(_gid("xi", j, n)) \
        + GrassmannElement.generator(_gid("psi", j, n)) * root
    return wedge(left, right)


def wick_check(pairs, cov, m=None, engine=None, tol=1e-10):
    """Compare the Gaussian expectation of a product of paired linear factors
    with the determinant det((Delta - C0 Id)_{i_k j_l})."""
    pairs = [(int(i), int(j)) for i, j in pairs]
    if m is None:
        m = len(pairs)
    if m != len(pairs):
        raise ValueError("m disagrees with the number of pairs")
    if m > 3:
        raise ValueError("wick check ceiling is 3 pairs")
    n = cov.n
    if n > 4:
        raise ValueError("wick check ceiling is 4 sites")
    if engine is None:
        engine = GaussianExpectation(cov)
    f = GrassmannElement.scalar(1.0)
    for i, j in pairs:
        f = wedge(f, _paired_factor(i, j, cov.C0, n))
    lhs = engine.expect(f)
    shifted = cov.delta - cov.C0 * np.eye(n)
    rows = [i for i, _ in pairs]
    cols = [j for _, j in pairs]
    rhs = complex(np.linalg.det(shifted[np.ix_(rows, cols)])) if m > 0 else 1.0
    delta = abs(lhs - rhs)
    return {
        "check": "wick",
        "pairs": pairs,
        "lhs": complex(lhs),
        "rhs": complex(rhs),
        "delta": float(delta),
        "pass": bool(delta <= tol),
    }


def fermionic_construction_check(u, fam, k, tol=1e-9):
    """Check that the Gaussian functional of paired eigenvector projections
    reproduces the numeric fluctuation determinant.

    Builds Delta = sum_alpha q_alpha q_alpha^T from the projection family;
    a rank-deficient Delta is shifted by eps*Id on both sides of the
    identity (the shift adds exactly eps*Id to the fluctuation matrix for
    orthonormal u).
    """
    from .observables import coefficient_matrix, fermionic_value
    from .spectral import SpectralData

    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    k = tuple(int(i) for i in k)
    if n > 4:
        raise ValueError("construction check ceiling is 4 sites")
    if len(k) > 2:
        raise ValueError("construction check ceiling is 2 particles")
    spec = SpectralData(lambdas=np.zeros(n), vectors=u,
                        sign_policy=("provided",))
    if fam.mode == "canonical-indices":
        q = np.eye(n)[list(fam.indices)]
    else:
        q = np.stack([np.asarray(d, dtype=float) for d in fam.directions])
    c0 = default_centering(fam, n, hermitian=False)
    delta = q.T @ q
    eps = 0.0
    if np.linalg.matrix_rank(delta, tol=1e-10) < n:
        eps = 1e-3
    cov = Covariance(delta=delta + eps * np.eye(n), C0=c0)
    engine = GaussianExpectation(cov)
    f = GrassmannElement.scalar(1.0)
    for site in k:
        vec = u[:, site]
        root = 1j * math.sqrt(c0)
        left = projection(vec, "eta") + projection(vec, "phi") * root
        right = projection(vec, "xi") + projection(vec, "psi") * root
        f = wedge(f, wedge(left, right))
    lhs = engine.expect(f)
    coeff = coefficient_matrix(spec, fam)[:, list(k)]
    p = coeff.T @ coeff - c0 * np.eye(len(k)) + eps * np.eye(len(k))
    rhs = fermionic_value(p)
    delta_val = abs(lhs - rhs)
    return {
        "check": "fermionic-construction",
        "tuple": list(k),
        "regularization": eps,
        "lhs": complex(lhs),
        "rhs": float(rhs),
        "delta": float(delta_val),
        "pass": bool(delta_val <= tol),
    }
