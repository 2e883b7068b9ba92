"""Occupation-state moment flow and exact symbolic generator algebra.

The eigenvector diffusion closes on two families of conditional moments:
an exclusion family indexed by sorted tuples of distinct sites (values
are conditional determinant moments) and a zero-range family indexed by
occupation vectors (hafnian moments).  Both evolve by site-to-site jump
dynamics with rates set by inverse squared eigenvalue gaps:

  exclusion:   d/ds f(k)  = sum_i sum_{l not in k} (f(k^i(l)) - f(k)) / (N (lam_{k_i}-lam_l)^2)
  zero-range:  d/ds f(xi) = sum_{a != b} xi_a (1 + 2 xi_b) (f(xi^{a,b}) - f(xi)) / (N (lam_a-lam_b)^2)

The quadratic generator sum_{a<b} X_ab^2 / (2N (lam_a-lam_b)^2) of the
vector diffusion produces exactly these rates; the relations X_ab obeys
on overlap symbols are implemented in exact rational arithmetic, and
`generator_identity_check` proves the determinant-family closure with a
zero residual polynomial rather than a small one.

A note on normalization: one textbook-style convention doubles these
jump rates (equivalently, weights the generator 1/N instead of 1/(2N)).
That convention is inconsistent with the vector stochastics implemented
in `dbm` — a direct Euler-Maruyama probe of d/ds E[p_kk] reproduces the
rates above and excludes twice them at z > 300 — so the halved, fully
consistent normalization is used everywhere here, and
`flow_residual_check` is the executable proof of that consistency.
"""

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import rng
from .dbm import FlowConfig, evolve_eigen, evolve_eigen_conditional
from .errors import (
    ConvergenceFailure,
    DegenerateSpectrum,
    DimensionTooLarge,
    PathTooShort,
    StateSpaceTooLarge,
)
from .observables import default_centering
from .spectral import decompose


# --------------------------------------------------------------------
# states
# --------------------------------------------------------------------

@dataclass(frozen=True)
class FermionicState:
    """Exclusion-family values over sorted tuples of distinct sites."""

    N: int
    n: int
    values: dict = field(compare=False)
    default: float = 0.0

    def __post_init__(self):
        for key in self.values:
            if tuple(sorted(key)) != key or len(set(key)) != len(key):
                raise ValueError(f"key {key} is not a sorted distinct tuple")
            if len(key) != self.n:
                raise ValueError(f"key {key} has wrong particle count")

    def f(self, k):
        return self.values.get(tuple(k), self.default)


@dataclass(frozen=True)
class BosonicState:
    """Zero-range-family values over occupation vectors (length-N tuples)."""

    N: int
    n: int
    values: dict = field(compare=False)
    default: float = 0.0

    def __post_init__(self):
        for key in self.values:
            if len(key) != self.N or sum(key) != self.n or min(key) < 0:
                raise ValueError(f"occupancy {key} invalid for (N={self.N}, "
                                 f"n={self.n})")

    def f(self, xi):
        return self.values.get(tuple(xi), self.default)


def fermionic_tuples(N, n):
    return list(itertools.combinations(range(N), n))


def bosonic_occupancies(N, n):
    out = []
    for sites in itertools.combinations_with_replacement(range(N), n):
        occ = [0] * N
        for s in sites:
            occ[s] += 1
        out.append(tuple(occ))
    return out


def _check_distinct(lambdas):
    lam = np.asarray(lambdas, dtype=float)
    diff = np.abs(lam[:, None] - lam[None, :])
    diff[np.diag_indices(len(lam))] = np.inf
    if diff.min() == 0.0:
        raise DegenerateSpectrum("coinciding eigenvalues")
    return lam


# --------------------------------------------------------------------
# right-hand sides
# --------------------------------------------------------------------

def fermionic_rhs(state, lambdas, k):
    """Jump-rate derivative of the exclusion family at tuple k."""
    lam = _check_distinct(lambdas)
    N = len(lam)
    k = tuple(sorted(int(i) for i in k))
    if len(set(k)) != len(k):
        raise ValueError("tuple entries must be distinct")
    occupied = set(k)
    total = 0.0
    fk = state.f(k)
    for i, ki in enumerate(k):
        for l in range(N):
            if l in occupied:
                continue
            moved = tuple(sorted(k[:i] + k[i + 1:] + (l,)))
            total += (state.f(moved) - fk) / (N * (lam[ki] - lam[l]) ** 2)
    return total


def bosonic_rhs(state, lambdas, xi):
    """Jump-rate derivative of the zero-range family at occupancy xi."""
    lam = _check_distinct(lambdas)
    N = len(lam)
    xi = tuple(int(c) for c in xi)
    fxi = state.f(xi)
    total = 0.0
    for a in range(N):
        if xi[a] == 0:
            continue
        for b in range(N):
            if b == a:
                continue
            moved = list(xi)
            moved[a] -= 1
            moved[b] += 1
            rate = xi[a] * (1 + 2 * xi[b])
            total += rate * (state.f(tuple(moved)) - fxi) \
                / (N * (lam[a] - lam[b]) ** 2)
    return total


# --------------------------------------------------------------------
# deterministic integration over the full state space
# --------------------------------------------------------------------

def _edges_fermionic(N, n):
    keys = fermionic_tuples(N, n)
    index = {k: i for i, k in enumerate(keys)}
    src, dst, fro, to, coef = [], [], [], [], []
    for k in keys:
        occupied = set(k)
        for i, ki in enumerate(k):
            for l in range(N):
                if l in occupied:
                    continue
                moved = tuple(sorted(k[:i] + k[i + 1:] + (l,)))
                src.append(index[k])
                dst.append(index[moved])
                fro.append(ki)
                to.append(l)
                coef.append(1.0)
    return keys, index, (np.array(src), np.array(dst), np.array(fro),
                         np.array(to), np.array(coef))


def _edges_bosonic(N, n):
    keys = bosonic_occupancies(N, n)
    index = {k: i for i, k in enumerate(keys)}
    src, dst, fro, to, coef = [], [], [], [], []
    for xi in keys:
        for a in range(N):
            if xi[a] == 0:
                continue
            for b in range(N):
                if b == a:
                    continue
                moved = list(xi)
                moved[a] -= 1
                moved[b] += 1
                src.append(index[xi])
                dst.append(index[tuple(moved)])
                fro.append(a)
                to.append(b)
                coef.append(float(xi[a] * (1 + 2 * xi[b])))
    return keys, index, (np.array(src), np.array(dst), np.array(fro),
                         np.array(to), np.array(coef))


def _rhs_vector(f, lam, N, edges):
    src, dst, fro, to, coef = edges
    w = coef / (N * (lam[fro] - lam[to]) ** 2)
    out = np.zeros_like(f)
    np.add.at(out, src, w * (f[dst] - f[src]))
    return out


def _rk4(f0, path, t0, t1, steps, N, edges):
    f = f0.copy()
    h = (t1 - t0) / steps
    for j in range(steps):
        t = t0 + j * h
        lam1 = _check_distinct(path.lambdas(t))
        lam2 = _check_distinct(path.lambdas(t + h / 2))
        lam3 = _check_distinct(path.lambdas(t + h))
        k1 = _rhs_vector(f, lam1, N, edges)
        k2 = _rhs_vector(f + h / 2 * k1, lam2, N, edges)
        k3 = _rhs_vector(f + h / 2 * k2, lam2, N, edges)
        k4 = _rhs_vector(f + h * k3, lam3, N, edges)
        f += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return f


def integrate_flow(state0, path, t_grid, tol=1e-8):
    """Integrate the full coupled system along an eigenvalue path.

    Classic fourth-order Runge-Kutta on every tuple simultaneously, with
    per-interval step halving until two refinements agree within tol.
    Returns the list of states at the t_grid times (the first grid time is
    the initial condition).
    """
    N, n = state0.N, state0.n
    if N > 40 or n > 3:
        raise StateSpaceTooLarge(f"(N={N}, n={n}) beyond the (40, 3) ceiling")
    bosonic = isinstance(state0, BosonicState)
    keys, _, edges = (_edges_bosonic if bosonic else _edges_fermionic)(N, n)
    if path.times[0] > t_grid[0] + 1e-12 or path.times[-1] < t_grid[-1] - 1e-12:
        raise PathTooShort("path does not cover the time grid")
    f = np.array([state0.f(k) for k in keys], dtype=float)
    out = [state0]
    for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
        steps = 1
        prev = None
        for _ in range(15):
            cand = _rk4(f, path, t0, t1, steps, N, edges)
            if prev is not None and np.abs(cand - prev).max() <= tol:
                prev = cand
                break
            prev = cand
            steps *= 2
        else:
            raise ConvergenceFailure(
                f"no {tol} agreement after {steps // 2} steps on "
                f"[{t0}, {t1}]")
        f = prev
        values = dict(zip(keys, f.tolist()))
        cls = BosonicState if bosonic else FermionicState
        out.append(cls(N=N, n=n, values=values, default=state0.default))
    return out


# --------------------------------------------------------------------
# exact polynomial algebra in overlap symbols
# --------------------------------------------------------------------

def _canon_pair(i, j):
    return (i, j) if i <= j else (j, i)


class OverlapPolynomial:
    """Multivariate polynomial in symmetric overlap symbols p_{ij} = p_{ji}.

    Monomials are sorted tuples of canonical (i <= j) index pairs, with
    repetition for powers; coefficients are exact rationals unless numeric
    weights are introduced downstream.  Zero coefficients are pruned.
    """

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = {}
        if terms:
            for mono, c in terms.items():
                if c != 0:
                    self.terms[tuple(mono)] = c

    @staticmethod
    def symbol(i, j, coeff=Fraction(1)):
        return OverlapPolynomial({(_canon_pair(int(i), int(j)),): coeff})

    @staticmethod
    def constant(c):
        return OverlapPolynomial({(): c})

    @staticmethod
    def zero():
        return OverlapPolynomial()

    def copy(self):
        return OverlapPolynomial(dict(self.terms))

    @property
    def is_zero(self):
        return not self.terms

    @property
    def term_count(self):
        return len(self.terms)

    def __eq__(self, other):
        if isinstance(other, OverlapPolynomial):
            return self.terms == other.terms
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __add__(self, other):
        if not isinstance(other, OverlapPolynomial):
            other = OverlapPolynomial.constant(other)
        out = dict(self.terms)
        for mono, c in other.terms.items():
            c2 = out.get(mono, 0) + c
            if c2 == 0:
                out.pop(mono, None)
            else:
                out[mono] = c2
        return OverlapPolynomial(out)

    def __neg__(self):
        return OverlapPolynomial({m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        if not isinstance(other, OverlapPolynomial):
            other = OverlapPolynomial.constant(other)
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, OverlapPolynomial):
            out = {}
            for m1, c1 in self.terms.items():
                for m2, c2 in other.terms.items():
                    mono = tuple(sorted(m1 + m2))
                    c = out.get(mono, 0) + c1 * c2
                    if c == 0:
                        out.pop(mono, None)
                    else:
                        out[mono] = c
            return OverlapPolynomial(out)
        return OverlapPolynomial({m: c * other for m, c in self.terms.items()
                                  if c * other != 0})

    __rmul__ = __mul__

    def evaluate(self, assign):
        """Numeric value under the symbol assignment {(i, j): value}."""
        total = 0.0
        for mono, c in self.terms.items():
            val = float(c)
            for pair in mono:
                val *= assign[pair]
            total += val
        return total

    def __repr__(self):
        if self.is_zero:
            return "0"
        bits = []
        for mono in sorted(self.terms):
            c = self.terms[mono]
            sym = "*".join(f"p[{i},{j}]" for i, j in mono) or "1"
            bits.append(f"{c}*{sym}")
        return " + ".join(bits)


def det_expand(k):
    """Leibniz expansion of the determinant over the tuple k as an exact
    polynomial in overlap symbols."""
    k = tuple(int(i) for i in k)
    n = len(k)
    if n > 5:
        raise DimensionTooLarge(f"{n} particles beyond the symbolic ceiling 5")
    if len(set(k)) != n:
        raise ValueError("tuple entries must be distinct")
    terms = {}
    for perm in itertools.permutations(range(n)):
        sign = _permutation_sign(perm)
        mono = tuple(sorted(_canon_pair(k[i], k[perm[i]]) for i in range(n)))
        c = terms.get(mono, 0) + sign
        if c == 0:
            terms.pop(mono, None)
        else:
            terms[mono] = c
    return OverlapPolynomial({m: Fraction(c) for m, c in terms.items()})


def _permutation_sign(perm):
    sign = 1
    seen = [False] * len(perm)
    for start in range(len(perm)):
        if seen[start]:
            continue
        length = 0
        j = start
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def _x_symbol(a, b, pair):
    """Image of one overlap symbol under the rotation derivation X_ab."""
    if pair == (a, a):
        return {_canon_pair(a, b): -2}
    if pair == (b, b):
        return {_canon_pair(a, b): 2}
    if pair == _canon_pair(a, b):
        return {(a, a): 1, (b, b): -1}
    i, j = pair
    if a in pair and b not in pair:
        other = j if i == a else i
        return {_canon_pair(b, other): -1}
    if b in pair and a not in pair:
        other = j if i == b else i
        return {_canon_pair(a, other): 1}
    return {}


def apply_X(a, b, poly):
    """Derivation X_ab extended to polynomials by the Leibniz rule."""
    if a == b:
        raise ValueError("generator indices must differ")
    out = {}
    for mono, coeff in poly.terms.items():
        for pos in range(len(mono)):
            image = _x_symbol(a, b, mono[pos])
            if not image:
                continue
            rest = mono[:pos] + mono[pos + 1:]
            for sym, c2 in image.items():
                new = tuple(sorted(rest + (sym,)))
                c = out.get(new, 0) + coeff * c2
                if c == 0:
                    out.pop(new, None)
                else:
                    out[new] = c
    return OverlapPolynomial(out)


def generator_identity_check(k, extra):
    """Exact closure identities of the determinant family.

    Within the tuple: X^2_{k_i k_j} annihilates det_expand(k).  Jumping to
    the free site: X^2_{k_i, extra} det_expand(k) equals
    2 (det_expand(k with k_i -> extra) - det_expand(k)).  Residuals are
    exact polynomials; pass means identically zero.
    """
    k = tuple(sorted(int(i) for i in k))
    if len(k) > 4:
        raise DimensionTooLarge("identity check ceiling is 4 particles")
    if extra in k or len(set(k)) != len(k):
        raise ValueError("sites must be distinct and exclude the extra site")
    g = det_expand(k)
    entries = []
    for i, j in itertools.combinations(k, 2):
        resid = apply_X(i, j, apply_X(i, j, g))
        entries.append({
            "tuple": list(k),
            "identity": f"exchange({i},{j})",
            "residual_term_count": resid.term_count,
            "pass": resid.is_zero,
        })
    for pos, ki in enumerate(k):
        moved = tuple(sorted(k[:pos] + k[pos + 1:] + (extra,)))
        target = (det_expand(moved) - g) * Fraction(2)
        resid = apply_X(ki, extra, apply_X(ki, extra, g)) - target
        entries.append({
            "tuple": list(k),
            "identity": f"jump({ki}->{extra})",
            "residual_term_count": resid.term_count,
            "pass": resid.is_zero,
        })
    return {"tuple": list(k), "extra": int(extra), "entries": entries,
            "pass": all(e["pass"] for e in entries)}


def generator_apply(poly, lambdas, N=None):
    """The diffusion generator sum_{a<b} X_ab^2 / (2 N (lam_a - lam_b)^2)
    applied to a polynomial, with numeric coefficients."""
    lam = _check_distinct(lambdas)
    if N is None:
        N = len(lam)
    out = OverlapPolynomial.zero()
    for a in range(len(lam)):
        for b in range(a + 1, len(lam)):
            x2 = apply_X(a, b, apply_X(a, b, poly))
            if x2.is_zero:
                continue
            w = 1.0 / (2.0 * N * (lam[a] - lam[b]) ** 2)
            out = out + OverlapPolynomial(
                {m: float(c) * w for m, c in x2.terms.items()})
    return out


# --------------------------------------------------------------------
# Monte Carlo flow residual
# --------------------------------------------------------------------

def flow_residual_check(ensemble, fam, k, s0, ds, replicas, seed,
                        dt=1e-3, reorth_every=2):
    """Monte Carlo test that the conditional determinant moments solve the
    exclusion flow.

    One eigenvalue path is frozen (joint evolution); replicas rerun the
    vector diffusion against it with independent noise.  The determinant
    observable over tuple k and all single-jump neighbors is recorded at
    five equally spaced times across [s0, s0 + ds]; the centered difference
    of the endpoint estimates is compared with the Simpson average of the
    per-replica right-hand side, replica-paired so the comparison has a
    single standard error.
    """
    k = tuple(sorted(int(i) for i in k))
    n = len(k)
    N = ensemble.n
    if N > 30:
        raise StateSpaceTooLarge(f"N={N} beyond the Monte Carlo ceiling 30")
    if n != 2:
        raise StateSpaceTooLarge("the residual check is wired for 2 particles")
    from .ensembles import sample

    h0 = sample(ensemble, rng.child_seed(seed, "matrix"))
    spec0 = decompose(h0)
    horizon = s0 + ds
    cfg = FlowConfig(dt=dt, t_end=horizon, reorthonormalize_every=reorth_every)
    path, _ = evolve_eigen(spec0, horizon, cfg,
                           seed_val=rng.child_seed(seed, "path-values"),
                           seed_vec=rng.child_seed(seed, "path-vectors"))
    idx = np.array(fam.indices, dtype=int)
    c0 = default_centering(fam, N, hermitian=False)
    times = [s0 + ds * q / 4.0 for q in range(5)]
    lam_at = [path.lambdas(t) for t in times]

    tuples = [k]
    edge_src, edge_to = [], []
    for i, ki in enumerate(k):
        for l in range(N):
            if l in k:
                continue
            moved = tuple(sorted(k[:i] + k[i + 1:] + (l,)))
            tuples.append(moved)
            edge_src.append(ki)
            edge_to.append(l)
    pair_a = np.array([t[0] for t in tuples])
    pair_b = np.array([t[1] for t in tuples])
    edge_src = np.array(edge_src)
    edge_to = np.array(edge_to)
    weights = [1.0 / (N * (lam[edge_src] - lam[edge_to]) ** 2)
               for lam in lam_at]

    f_sum = np.zeros((5, len(tuples)))
    f_sq = np.zeros(5)
    rhs_sum = np.zeros(5)
    resid = np.empty(replicas)
    resid_half = np.empty(replicas)
    u0 = spec0.vectors
    for r in range(replicas):
        snaps = evolve_eigen_conditional(
            path, u0, cfg, rng.child_seed(seed, "replica", r),
            record_times=times)
        fd_vals = np.empty(5)
        rhs_vals = np.empty(5)
        for t_i, u in enumerate(snaps):
            c = u[idx, :]
            g = c.T @ c
            diag = g[np.arange(N), np.arange(N)] - c0
            f_all = diag[pair_a] * diag[pair_b] - g[pair_a, pair_b] ** 2
            fd_vals[t_i] = f_all[0]
            rhs_vals[t_i] = float(weights[t_i] @ (f_all[1:] - f_all[0]))
            f_sum[t_i] += f_all
        f_sq += fd_vals ** 2
        rhs_sum += rhs_vals
        resid[r] = (fd_vals[4] - fd_vals[0]) / ds \
            - (rhs_vals[0] + 4 * rhs_vals[2] + rhs_vals[4]) / 6.0
        resid_half[r] = (fd_vals[2] - fd_vals[0]) / (ds / 2) \
            - (rhs_vals[0] + 4 * rhs_vals[1] + rhs_vals[2]) / 6.0

    f_mean = f_sum / replicas
    rhs_mean = rhs_sum / replicas
    est = f_mean[:, 0]
    est_se = np.sqrt(np.maximum(f_sq / replicas - est ** 2, 0.0)
                     / replicas)
    states = [FermionicState(N=N, n=n,
                             values=dict(zip(tuples, f_mean[t_i])))
              for t_i in range(5)]
    rhs_state = [fermionic_rhs(states[t_i], lam_at[t_i], k)
                 for t_i in range(5)]
    z = float(resid.mean() / (resid.std(ddof=1) / math.sqrt(replicas)))
    z_half = float(resid_half.mean()
                   / (resid_half.std(ddof=1) / math.sqrt(replicas)))
    rows = []
    row_z = {0: 0.0, 2: z_half, 4: z}
    for t_i, t in enumerate(times):
        rows.append((t, float(est[t_i]), float(est_se[t_i]),
                     float(rhs_state[t_i]), row_z.get(t_i, 0.0)))
    return {
        "s0": s0,
        "ds": ds,
        "replicas": replicas,
        "tuple": list(k),
        "fd": float((est[4] - est[0]) / ds),
        "rhs_simpson": float((rhs_mean[0] + 4 * rhs_mean[2] + rhs_mean[4])
                             / 6.0),
        "resid_mean": float(resid.mean()),
        "resid_stderr": float(resid.std(ddof=1) / math.sqrt(replicas)),
        "zscore": z,
        "zscore_half": z_half,
        "rows": rows,
        "pass": bool(abs(z) <= 3.0),
    }
