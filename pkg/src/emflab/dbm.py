"""Ornstein-Uhlenbeck matrix flow and the coupled eigenvalue/eigenvector SDEs.

The matrix flow dH = dB/sqrt(n) - (1/2) H dt is available exactly (its OU
transition kernel) and as an Euler-Maruyama path.  The spectral flow evolves
eigenvalues with Coulomb repulsion drift and eigenvectors with the
antisymmetric pair-noise rotation driven by an independent Brownian family;
the conditional variant freezes an eigenvalue path and evolves only the
eigenvectors, so repeated calls with different vector seeds share one path
(common random numbers).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels, rng
from .ensembles import EnsembleSpec, RandomMatrix, sample
from .errors import GapCollapse, PathTooShort, StepTooLarge
from .spectral import SpectralData

_MAX_HALVINGS = 20


@dataclass(frozen=True)
class FlowConfig:
    """Discretization choices for the stochastic flows.

    dt is a step-size ceiling (actual steps divide the horizon evenly);
    gap_floor=None means 1e-8 times the spectral width of the initial data.
    """

    dt: float
    t_end: float
    gap_floor: float | None = None
    reorthonormalize_every: int = 2
    symmetry: str = "symmetric"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.gap_floor is not None and self.gap_floor <= 0:
            raise ValueError("gap_floor must be positive")
        if self.reorthonormalize_every < 1:
            raise ValueError("reorthonormalize_every must be at least 1")


@dataclass(frozen=True)
class MatrixPath:
    """Euler-Maruyama trajectory of the matrix flow."""

    times: np.ndarray
    matrices: np.ndarray
    seed: int


@dataclass(frozen=True)
class EigenPath:
    """Eigenvalue trajectory: per-time ascending vectors on a strict time grid."""

    times: np.ndarray
    lambdas_at: np.ndarray
    noise_seed: int

    def __post_init__(self):
        if np.diff(self.times).min() <= 0:
            raise ValueError("times must be strictly increasing")

    @property
    def n(self):
        return self.lambdas_at.shape[1]

    def lambdas(self, t):
        """Eigenvalues at time t by linear interpolation within the grid."""
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise PathTooShort(
                f"time {t} outside path range [{self.times[0]}, {self.times[-1]}]")
        out = np.empty(self.n)
        for c in range(self.n):
            out[c] = np.interp(t, self.times, self.lambdas_at[:, c])
        return out


def _steps_for(horizon, dt_ceiling):
    return max(1, math.ceil(horizon / dt_ceiling - 1e-12))


def _default_gap_floor(config, lambdas):
    if config.gap_floor is not None:
        return config.gap_floor
    width = float(lambdas.max() - lambdas.min())
    return 1e-8 * (width if width > 0 else 1.0)


def evolve_matrix_exact(h0, s, seed):
    """One draw of the OU transition: exp(-s/2) h0 + sqrt(1-exp(-s)) fresh noise."""
    if s < 0:
        raise ValueError("time must be nonnegative")
    kind = "gue" if h0.symmetry == "hermitian" else "goe"
    noise = sample(EnsembleSpec(kind=kind, n=h0.n), seed)
    entries = np.exp(-s / 2.0) * h0.entries \
        + np.sqrt(-np.expm1(-s)) * noise.entries
    return RandomMatrix(n=h0.n, symmetry=h0.symmetry, entries=entries,
                        provenance=(h0.provenance[0], int(seed)))


def evolve_matrix_em(h0, s, config, seed, noise_scale=1.0):
    """Euler-Maruyama path of the matrix flow (noise_scale=0 is a drift-only
    testing hook)."""
    if config.dt > 0.1:
        raise StepTooLarge(f"dt = {config.dt} exceeds the 0.1 ceiling")
    if config.dt > s:
        raise ValueError("config.dt must not exceed the horizon")
    steps = _steps_for(s, config.dt)
    dt = s / steps
    kind = "gue" if h0.symmetry == "hermitian" else "goe"
    spec = EnsembleSpec(kind=kind, n=h0.n)
    out = np.empty((steps + 1,) + h0.entries.shape, dtype=h0.entries.dtype)
    out[0] = h0.entries
    for j in range(steps):
        g = sample(spec, rng.child_seed(seed, "matrix-noise", j)).entries
        out[j + 1] = out[j] - 0.5 * dt * out[j] \
            + (noise_scale * np.sqrt(dt)) * g
    return MatrixPath(times=np.linspace(0.0, s, steps + 1), matrices=out,
                      seed=int(seed))


def _halved_substeps(lam, u, dt, step_index, seed_val, seed_vec, gap_floor,
                     reorth_every):
    """Redo one rejected step as 2^depth finer substeps with fresh increments."""
    n = len(lam)
    npairs = n * (n - 1) // 2
    for depth in range(1, _MAX_HALVINGS + 1):
        sub = 2 ** depth
        vn = rng.bulk_generator(seed_val, "halve", step_index, depth) \
            .standard_normal((sub, n))
        en = rng.bulk_generator(seed_vec, "halve", step_index, depth) \
            .standard_normal((sub, npairs))
        lam_try = np.empty((sub + 1, n))
        lam_try[0] = lam
        u_try = u.copy()
        done = kernels.joint_flow(lam_try, u_try, vn, en, dt / sub,
                                  reorth_every, gap_floor)
        if done == sub:
            u[:] = u_try
            return lam_try[-1]
    raise GapCollapse(
        f"gap below {gap_floor:.3e} at step {step_index} after "
        f"{_MAX_HALVINGS} halvings")


def evolve_eigen(spec0, s, config, seed_val, seed_vec):
    """Joint spectral flow from decomposed initial data.

    Eigenvalue noise comes from seed_val, eigenvector noise from seed_vec;
    the two streams are disjoint, so the eigenvalue path never depends on
    seed_vec.  A step that would push a gap below the floor is retried with
    halved substeps, up to 20 halvings, then aborts.
    """
    n = spec0.n
    lam0 = np.asarray(spec0.lambdas, dtype=float)
    gap_floor = _default_gap_floor(config, lam0)
    if n > 1 and np.diff(lam0).min() < gap_floor:
        raise GapCollapse("initial eigenvalue gaps already below the floor")
    steps = _steps_for(s, config.dt)
    dt = s / steps
    val_noise = rng.bulk_generator(seed_val, "eigenvalue-noise") \
        .standard_normal((steps, n))
    vec_noise = rng.bulk_generator(seed_vec, "eigenvector-noise") \
        .standard_normal((steps, n * (n - 1) // 2))
    lam_path = np.empty((steps + 1, n))
    lam_path[0] = lam0
    u = np.ascontiguousarray(spec0.vectors, dtype=float)
    u = u.copy()
    j = 0
    while j < steps:
        j = kernels.joint_flow(lam_path, u, val_noise, vec_noise, dt,
                               config.reorthonormalize_every, gap_floor,
                               start_step=j)
        if j < steps:
            lam_path[j + 1] = _halved_substeps(
                lam_path[j], u, dt, j, seed_val, seed_vec, gap_floor,
                config.reorthonormalize_every)
            j += 1
    path = EigenPath(times=np.linspace(0.0, s, steps + 1),
                     lambdas_at=lam_path, noise_seed=int(seed_val))
    final = SpectralData(lambdas=lam_path[-1], vectors=u,
                         sign_policy=("evolved-basis",))
    return path, final


def _resample_path(path, grid):
    """Eigenvalues at the start of each step of a uniform grid."""
    out = np.empty((len(grid), path.n))
    for c in range(path.n):
        out[:, c] = np.interp(grid, path.times, path.lambdas_at[:, c])
    return out


def evolve_eigen_conditional(path, u0, config, seed_vec, record_times=None):
    """Eigenvector flow against a frozen eigenvalue path.

    Returns the final orthonormal frame, or — when record_times is given —
    the list of frames at those times (snapped to the step grid).  Identical
    (path, seed_vec) always reproduce the same trajectory, and different
    seed_vec values share the path.
    """
    t_end = config.t_end
    if path.times[-1] < t_end - 1e-12:
        raise PathTooShort(
            f"path ends at {path.times[-1]}, flow needs {t_end}")
    u0 = np.asarray(u0)
    if np.iscomplexobj(u0):
        return _conditional_hermitian(path, u0, config, seed_vec, record_times)
    steps = _steps_for(t_end, config.dt)
    dt = t_end / steps
    grid = np.linspace(0.0, t_end, steps + 1)
    lam_steps = _resample_path(path, grid[:-1])
    if path.n > 1 and np.diff(lam_steps, axis=1).min() < _default_gap_floor(
            config, lam_steps[0]):
        raise GapCollapse("frozen path has gaps below the floor")
    n = path.n
    noise = rng.bulk_generator(seed_vec, "eigenvector-noise") \
        .standard_normal((steps, n * (n - 1) // 2))
    u = np.ascontiguousarray(u0, dtype=float).copy()
    if record_times is None:
        kernels.vector_flow(u, lam_steps, noise, dt,
                            config.reorthonormalize_every)
        return u
    marks = [int(round(t / dt)) for t in record_times]
    if any(not 0 <= m <= steps for m in marks):
        raise PathTooShort("record time outside the flow horizon")
    snapshots = []
    prev = 0
    for m in sorted(set(marks)):
        if m > prev:
            kernels.vector_flow(u, lam_steps[:m], noise[:m], dt,
                                config.reorthonormalize_every,
                                start_step=prev)
            prev = m
        snapshots.append(u.copy())
    return snapshots


def _mgs_complex(u):
    n = u.shape[1]
    for k in range(n):
        col = u[:, k]
        col /= np.linalg.norm(col)
        if k + 1 < n:
            proj = col.conj() @ u[:, k + 1:]
            u[:, k + 1:] -= np.outer(col, proj)


def _hermitian_step(u, lam, re, im, dt):
    """One Euler-Maruyama update of the unitary frame (complex pair noise)."""
    n = u.shape[1]
    iu, ju = np.triu_indices(n, k=1)
    gap = lam[:, None] - lam[None, :]
    np.fill_diagonal(gap, np.inf)
    inv = 1.0 / gap
    a = np.zeros((n, n), dtype=complex)
    w = (re + 1j * im) * np.sqrt(dt / (2.0 * n)) * inv[iu, ju]
    a[ju, iu] = w
    a[iu, ju] = -w.conj()
    a[np.arange(n), np.arange(n)] = -dt / (2.0 * n) * (inv * inv).sum(axis=1)
    u += u @ a


def _conditional_hermitian(path, u0, config, seed_vec, record_times):
    t_end = config.t_end
    steps = _steps_for(t_end, config.dt)
    dt = t_end / steps
    grid = np.linspace(0.0, t_end, steps + 1)
    lam_steps = _resample_path(path, grid[:-1])
    n = path.n
    npairs = n * (n - 1) // 2
    g = rng.bulk_generator(seed_vec, "eigenvector-noise")
    noise = g.standard_normal((steps, 2, npairs))
    u = np.array(u0, dtype=complex)
    marks = {} if record_times is None else {
        int(round(t / dt)): None for t in record_times}
    snapshots = []
    if 0 in marks:
        snapshots.append(u.copy())
    for j in range(steps):
        _hermitian_step(u, lam_steps[j], noise[j, 0], noise[j, 1], dt)
        if (j + 1) % config.reorthonormalize_every == 0 or j + 1 == steps:
            _mgs_complex(u)
        if (j + 1) in marks:
            _mgs_complex(u)
            snapshots.append(u.copy())
    if record_times is None:
        return u
    return snapshots


def evolve_eigen_hermitian(spec0, s, config, seed_val, seed_vec):
    """Joint spectral flow with complex (unitary-invariant) vector noise."""
    n = spec0.n
    lam = np.asarray(spec0.lambdas, dtype=float).copy()
    gap_floor = _default_gap_floor(config, lam)
    steps = _steps_for(s, config.dt)
    dt = s / steps
    gval = rng.bulk_generator(seed_val, "eigenvalue-noise")
    gvec = rng.bulk_generator(seed_vec, "eigenvector-noise")
    val_noise = gval.standard_normal((steps, n))
    npairs = n * (n - 1) // 2
    vec_noise = gvec.standard_normal((steps, 2, npairs))
    lam_path = np.empty((steps + 1, n))
    lam_path[0] = lam
    u = np.array(spec0.vectors, dtype=complex)
    for j in range(steps):
        gap = lam[:, None] - lam[None, :]
        np.fill_diagonal(gap, np.inf)
        drift = (1.0 / gap).sum(axis=1) / n - lam / 2.0
        lam_new = lam + np.sqrt(dt / n) * val_noise[j] + dt * drift
        if n > 1 and np.diff(lam_new).min() < gap_floor:
            raise GapCollapse(f"gap below {gap_floor:.3e} at step {j}")
        _hermitian_step(u, lam, vec_noise[j, 0], vec_noise[j, 1], dt)
        lam = lam_new
        lam_path[j + 1] = lam
        if (j + 1) % config.reorthonormalize_every == 0 or j + 1 == steps:
            _mgs_complex(u)
    path = EigenPath(times=np.linspace(0.0, s, steps + 1),
                     lambdas_at=lam_path, noise_seed=int(seed_val))
    final = SpectralData(lambdas=lam_path[-1], vectors=u,
                         sign_policy=("evolved-basis",))
    return path, final


def gram_drift(u):
    """Max-norm deviation of the Gram matrix from the identity."""
    g = u.conj().T @ u
    return float(np.abs(g - np.eye(u.shape[1])).max())


def orthonormality_probe(lambdas, dt, steps, seed_vec):
    """Per-step Gram drift of the raw update, measured before renormalization.

    Applies the raw Euler-Maruyama update once per step, records the Gram
    deviation it introduces, then renormalizes; returns the per-step drifts.
    """
    lam = np.asarray(lambdas, dtype=float)
    n = len(lam)
    iu, ju = np.triu_indices(n, k=1)
    gap = lam[:, None] - lam[None, :]
    np.fill_diagonal(gap, np.inf)
    inv = 1.0 / gap
    noise = rng.bulk_generator(seed_vec, "eigenvector-noise") \
        .standard_normal((steps, n * (n - 1) // 2))
    u = np.eye(n)
    a = np.zeros((n, n))
    a[np.arange(n), np.arange(n)] = -dt / (2.0 * n) * (inv * inv).sum(axis=1)
    drifts = np.empty(steps)
    for j in range(steps):
        w = noise[j] * np.sqrt(dt / n) * inv[iu, ju]
        a[ju, iu] = w
        a[iu, ju] = -w
        u += u @ a
        drifts[j] = gram_drift(u)
        kernels._mgs_numpy(u)
    return drifts
