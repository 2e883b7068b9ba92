"""Inner loops of the stochastic flows, in two interchangeable backends.

The compiled backend uses numba when importable; the fallback is
vectorized numpy.  Selection: environment variable EMF_BACKEND in
{"numba", "numpy", "auto"} (default auto = numba when available).
Both backends implement the same Euler-Maruyama arithmetic and agree to
floating-point roundoff; a benchmark comparing them lives in
benchmarks/bench_kernels.py.

Step math, shared by all implementations (n coupled unit vectors, size-n
ambient dimension, eigenvalue vector lam, time step dt):

  vector update   u <- u @ (I + A)
    A[l, k] = xi_{kl} * sqrt(dt/n) / (lam[k] - lam[l])      (k < l, antisymmetric)
    A[k, k] = -dt/(2n) * sum_{l != k} (lam[k] - lam[l])^{-2}
  eigenvalue update (joint flow only)
    lam[k] <- lam[k] + sqrt(2dt/n)*zeta_k
              + dt * (sum_{l != k} 1/(n(lam[k]-lam[l])) - lam[k]/2)

xi (one standard normal per unordered pair, symmetric Brownian increment)
and zeta (one per eigenvalue) are pregenerated outside the kernels so the
backends consume identical noise.  Orthonormality is restored by modified
Gram-Schmidt every `reorth_every` steps.
"""

import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via EMF_BACKEND=numpy
    numba = None
    HAS_NUMBA = False


def backend_name():
    """Active backend: 'numba' or 'numpy'."""
    choice = os.environ.get("EMF_BACKEND", "auto").strip().lower()
    if choice not in ("numba", "numpy", "auto"):
        raise ValueError(f"EMF_BACKEND must be numba|numpy|auto, got {choice!r}")
    if choice == "numba" and not HAS_NUMBA:
        raise RuntimeError("EMF_BACKEND=numba but numba is not importable")
    if choice == "auto":
        return "numba" if HAS_NUMBA else "numpy"
    return choice


# --------------------------------------------------------------------
# numpy backend
# --------------------------------------------------------------------

def _mgs_numpy(u):
    """Modified Gram-Schmidt, in place, columns in order."""
    n = u.shape[1]
    for k in range(n):
        col = u[:, k]
        col /= np.linalg.norm(col)
        if k + 1 < n:
            proj = col @ u[:, k + 1:]
            u[:, k + 1:] -= np.outer(col, proj)


def vector_flow_numpy(u, lam_steps, noise, dt, reorth_every, start_step=0):
    """Evolve coupled eigenvectors against a frozen eigenvalue path.

    u: (n, n) orthonormal columns, modified in place.
    lam_steps: (S, n) eigenvalues at the start of each step.
    noise: (S, n(n-1)/2) standard normals, pair order (0,1),(0,2),...,(n-2,n-1).
    """
    n = u.shape[1]
    iu, ju = np.triu_indices(n, k=1)
    scale = np.sqrt(dt / n)
    a = np.zeros((n, n))
    steps = lam_steps.shape[0]
    for j in range(start_step, steps):
        lam = lam_steps[j]
        gap = lam[:, None] - lam[None, :]
        np.fill_diagonal(gap, np.inf)
        inv = 1.0 / gap
        w = noise[j] * scale * inv[iu, ju]
        a[ju, iu] = w
        a[iu, ju] = -w
        a[np.arange(n), np.arange(n)] = -dt / (2.0 * n) * (inv * inv).sum(axis=1)
        u += u @ a
        if (j + 1) % reorth_every == 0:
            _mgs_numpy(u)
    _mgs_numpy(u)


def joint_flow_numpy(lam_path, u, val_noise, vec_noise, dt, reorth_every,
                     gap_floor, start_step=0):
    """Evolve eigenvalues and eigenvectors together.

    lam_path: (S+1, n); row start_step holds the current state and later rows
    are filled in.  Returns S on success, or the index of the first step whose
    proposed eigenvalues violate the gap floor (that row is left unwritten and
    u is left at the pre-step state).
    """
    n = u.shape[1]
    iu, ju = np.triu_indices(n, k=1)
    scale = np.sqrt(dt / n)
    val_scale = np.sqrt(2.0 * dt / n)
    a = np.zeros((n, n))
    steps = val_noise.shape[0]
    for j in range(start_step, steps):
        lam = lam_path[j]
        gap = lam[:, None] - lam[None, :]
        np.fill_diagonal(gap, np.inf)
        inv = 1.0 / gap
        lam_new = lam + val_scale * val_noise[j] \
            + dt * (inv.sum(axis=1) / n - lam / 2.0)
        if n > 1 and np.diff(lam_new).min() < gap_floor:
            return j
        w = vec_noise[j] * scale * inv[iu, ju]
        a[ju, iu] = w
        a[iu, ju] = -w
        a[np.arange(n), np.arange(n)] = -dt / (2.0 * n) * (inv * inv).sum(axis=1)
        u += u @ a
        lam_path[j + 1] = lam_new
        if (j + 1) % reorth_every == 0:
            _mgs_numpy(u)
    _mgs_numpy(u)
    return steps


# --------------------------------------------------------------------
# numba backend
# --------------------------------------------------------------------

if HAS_NUMBA:

    @numba.njit(cache=True)
    def _mgs_nb(u):
        n = u.shape[1]
        for k in range(n):
            s = 0.0
            for i in range(n):
                s += u[i, k] * u[i, k]
            inv_norm = 1.0 / np.sqrt(s)
            for i in range(n):
                u[i, k] *= inv_norm
            for m in range(k + 1, n):
                d = 0.0
                for i in range(n):
                    d += u[i, k] * u[i, m]
                for i in range(n):
                    u[i, m] -= d * u[i, k]

    @numba.njit(cache=True)
    def _vector_flow_nb(u, lam_steps, noise, dt, reorth_every, start_step):
        n = u.shape[1]
        scale = np.sqrt(dt / n)
        half = dt / (2.0 * n)
        a = np.zeros((n, n))
        un = np.empty_like(u)
        steps = lam_steps.shape[0]
        for j in range(start_step, steps):
            lam = lam_steps[j]
            p = 0
            for k in range(n):
                drift = 0.0
                for l in range(n):
                    if l != k:
                        g = 1.0 / (lam[k] - lam[l])
                        drift += g * g
                a[k, k] = -half * drift
                for l in range(k + 1, n):
                    w = noise[j, p] * scale / (lam[k] - lam[l])
                    a[l, k] = w
                    a[k, l] = -w
                    p += 1
            np.dot(u, a, un)
            u += un
            if (j + 1) % reorth_every == 0:
                _mgs_nb(u)
        _mgs_nb(u)

    @numba.njit(cache=True)
    def _joint_flow_nb(lam_path, u, val_noise, vec_noise, dt, reorth_every,
                       gap_floor, start_step):
        n = u.shape[1]
        scale = np.sqrt(dt / n)
        val_scale = np.sqrt(2.0 * dt / n)
        half = dt / (2.0 * n)
        a = np.zeros((n, n))
        un = np.empty_like(u)
        lam_new = np.empty(n)
        steps = val_noise.shape[0]
        for j in range(start_step, steps):
            lam = lam_path[j]
            for k in range(n):
                drift = 0.0
                for l in range(n):
                    if l != k:
                        drift += 1.0 / (lam[k] - lam[l])
                lam_new[k] = lam[k] + val_scale * val_noise[j, k] \
                    + dt * (drift / n - lam[k] / 2.0)
            ok = True
            for k in range(n - 1):
                if lam_new[k + 1] - lam_new[k] < gap_floor:
                    ok = False
            if not ok:
                return j
            p = 0
            for k in range(n):
                drift = 0.0
                for l in range(n):
                    if l != k:
                        g = 1.0 / (lam[k] - lam[l])
                        drift += g * g
                a[k, k] = -half * drift
                for l in range(k + 1, n):
                    w = vec_noise[j, p] * scale / (lam[k] - lam[l])
                    a[l, k] = w
                    a[k, l] = -w
                    p += 1
            np.dot(u, a, un)
            u += un
            for k in range(n):
                lam_path[j + 1, k] = lam_new[k]
            if (j + 1) % reorth_every == 0:
                _mgs_nb(u)
        _mgs_nb(u)
        return steps


# --------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------

def vector_flow(u, lam_steps, noise, dt, reorth_every, start_step=0):
    """Dispatch the conditional vector flow to the active backend."""
    if backend_name() == "numba":
        _vector_flow_nb(u, lam_steps, noise, float(dt), int(reorth_every),
                        int(start_step))
    else:
        vector_flow_numpy(u, lam_steps, noise, float(dt), int(reorth_every),
                          start_step=int(start_step))


def joint_flow(lam_path, u, val_noise, vec_noise, dt, reorth_every, gap_floor,
               start_step=0):
    """Dispatch the joint eigenvalue/eigenvector flow to the active backend."""
    if backend_name() == "numba":
        return int(_joint_flow_nb(lam_path, u, val_noise, vec_noise, float(dt),
                                  int(reorth_every), float(gap_floor),
                                  int(start_step)))
    return int(joint_flow_numpy(lam_path, u, val_noise, vec_noise, float(dt),
                                int(reorth_every), float(gap_floor),
                                start_step=int(start_step)))
