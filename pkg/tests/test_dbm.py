"""Stochastic flow tests.

Oracles, each derivable by hand and frozen before the tests were run:

* Ornstein-Uhlenbeck transition: the time-s matrix is
  exp(-s/2) h0 + sqrt(1 - exp(-s)) * fresh noise, so s = 0 is the identity
  map, the stationary entry variances are preserved, and with the noise
  switched off the Euler path must follow h' = -h/2.
* Two-level rotation: against a frozen constant gap g the first column of
  the 2x2 frame is (cos th, sin th) with th Brownian of variance
  t/(n g^2), hence E[cos^2 th] = (1 + exp(-2 s/(n g^2)))/2.  The same
  relaxation law holds for E|u_11|^2 in the complex flow (first-moment
  computation of |a + w c - delta a|^2 with E|w|^2 = dt/(n g^2), and
  |c|^2 = 1 - |a|^2 for a 2x2 unitary).  At s = 0.5, n = 2, g = 1 the
  value is (1 + exp(-1/2))/2 = 0.8032653298563167.
* Joint flow vs one-shot transition: both start from the same
  deterministic diagonal matrix, so eigenvector overlap moments estimated
  from the discretized spectral dynamics must agree with those of exact
  draws within Monte Carlo error.
"""

import numpy as np
import pytest

from emflab import dbm, ensembles, rng, spectral
from emflab.errors import GapCollapse, PathTooShort, StepTooLarge

TWO_LEVEL_HALF_TIME = 0.8032653298563167  # (1 + exp(-1/2)) / 2

from conftest import zcheck


def _diag_matrix(values):
    values = np.asarray(values, dtype=float)
    return ensembles.RandomMatrix(
        n=len(values), symmetry="symmetric", entries=np.diag(values),
        provenance=("fixed", 0))


def _constant_path(lambdas, t_end):
    lam = np.asarray(lambdas, dtype=float)
    return dbm.EigenPath(
        times=np.array([0.0, t_end]),
        lambdas_at=np.vstack([lam, lam]),
        noise_seed=0)


# --------------------------------------------------------------------
# configuration and path containers
# --------------------------------------------------------------------

def test_flow_config_validation():
    with pytest.raises(ValueError):
        dbm.FlowConfig(dt=0.0, t_end=1.0)
    with pytest.raises(ValueError):
        dbm.FlowConfig(dt=0.01, t_end=-1.0)
    with pytest.raises(ValueError):
        dbm.FlowConfig(dt=0.01, t_end=1.0, gap_floor=0.0)
    with pytest.raises(ValueError):
        dbm.FlowConfig(dt=0.01, t_end=1.0, reorthonormalize_every=0)


def test_eigen_path_interpolation():
    path = dbm.EigenPath(
        times=np.array([0.0, 1.0, 2.0]),
        lambdas_at=np.array([[0.0, 1.0], [0.0, 3.0], [0.0, 5.0]]),
        noise_seed=3)
    assert path.n == 2
    np.testing.assert_allclose(path.lambdas(1.0), [0.0, 3.0])
    np.testing.assert_allclose(path.lambdas(0.5), [0.0, 2.0])
    with pytest.raises(PathTooShort):
        path.lambdas(2.5)
    with pytest.raises(ValueError):
        dbm.EigenPath(times=np.array([0.0, 0.0]),
                      lambdas_at=np.zeros((2, 2)), noise_seed=0)


# --------------------------------------------------------------------
# matrix flow: exact transition and Euler path
# --------------------------------------------------------------------

def test_exact_transition_identity_at_zero():
    h0 = ensembles.sample(ensembles.EnsembleSpec(kind="goe", n=5), 11)
    out = dbm.evolve_matrix_exact(h0, 0.0, 99)
    np.testing.assert_array_equal(out.entries, h0.entries)
    with pytest.raises(ValueError):
        dbm.evolve_matrix_exact(h0, -0.1, 99)


def test_exact_transition_deterministic_and_hermitian():
    h0 = ensembles.sample(ensembles.EnsembleSpec(kind="gue", n=4), 21)
    a = dbm.evolve_matrix_exact(h0, 0.6, 5)
    b = dbm.evolve_matrix_exact(h0, 0.6, 5)
    np.testing.assert_array_equal(a.entries, b.entries)
    assert a.symmetry == "hermitian"
    assert np.iscomplexobj(a.entries)
    c = dbm.evolve_matrix_exact(h0, 0.6, 6)
    assert np.abs(a.entries - c.entries).max() > 1e-3


def test_exact_transition_decays_mean_and_keeps_variance():
    # Deterministic start: the mean of every entry decays by exp(-s/2);
    # a stationary start keeps off-diagonal variance 1/n.
    n, s, reps = 4, 0.7, 8000
    h0 = _diag_matrix([1.0, 2.0, 3.0, 4.0])
    diag_vals = np.empty(reps)
    offd_vals = np.empty(reps)
    for r in range(reps):
        out = dbm.evolve_matrix_exact(h0, s, rng.child_seed(303, "ou", r))
        diag_vals[r] = out.entries[2, 2]
        offd_vals[r] = out.entries[0, 1]
    zcheck(diag_vals, np.exp(-s / 2.0) * 3.0)
    zcheck(offd_vals ** 2, -np.expm1(-s) / n)

    stat = np.empty(reps)
    spec = ensembles.EnsembleSpec(kind="goe", n=n)
    for r in range(reps):
        start = ensembles.sample(spec, rng.child_seed(304, "start", r))
        out = dbm.evolve_matrix_exact(start, s, rng.child_seed(304, "ou", r))
        stat[r] = out.entries[0, 1]
    zcheck(stat ** 2, 1.0 / n)


def test_em_drift_only_is_exponential_decay():
    h0 = _diag_matrix([1.0, -2.0, 0.5])
    target = np.exp(-0.5) * h0.entries

    def rel_err(dt):
        cfg = dbm.FlowConfig(dt=dt, t_end=1.0)
        path = dbm.evolve_matrix_em(h0, 1.0, cfg, 7, noise_scale=0.0)
        assert path.matrices.shape[0] == len(path.times)
        np.testing.assert_array_equal(path.matrices[0], h0.entries)
        return np.abs(path.matrices[-1] - target).max() / np.abs(target).max()

    e1 = rel_err(0.01)
    e2 = rel_err(0.005)
    assert e1 < 3e-3
    assert 1.7 < e1 / e2 < 2.3  # first-order step error halves with dt


def test_em_guards():
    h0 = _diag_matrix([1.0, 2.0])
    with pytest.raises(StepTooLarge):
        dbm.evolve_matrix_em(h0, 1.0, dbm.FlowConfig(dt=0.2, t_end=1.0), 0)
    with pytest.raises(ValueError):
        dbm.evolve_matrix_em(h0, 0.01, dbm.FlowConfig(dt=0.05, t_end=1.0), 0)


# --------------------------------------------------------------------
# conditional vector flow
# --------------------------------------------------------------------

def test_two_level_rotation_relaxation():
    # E[u_00^2] after time s against a frozen unit gap, vs the closed form.
    s, reps = 0.5, 6000
    path = _constant_path([-0.5, 0.5], s)
    cfg = dbm.FlowConfig(dt=1.0 / 400.0, t_end=s)
    vals = np.empty(reps)
    for r in range(reps):
        u = dbm.evolve_eigen_conditional(
            path, np.eye(2), cfg, rng.child_seed(17, "rot", r))
        vals[r] = u[0, 0] ** 2
    zcheck(vals, TWO_LEVEL_HALF_TIME, max_z=3.5)


def test_two_level_rotation_relaxation_complex():
    s, reps = 0.5, 2500
    path = _constant_path([-0.5, 0.5], s)
    cfg = dbm.FlowConfig(dt=1.0 / 400.0, t_end=s)
    vals = np.empty(reps)
    for r in range(reps):
        u = dbm.evolve_eigen_conditional(
            path, np.eye(2, dtype=complex), cfg, rng.child_seed(18, "crot", r))
        assert np.iscomplexobj(u)
        vals[r] = np.abs(u[0, 0]) ** 2
    zcheck(vals, TWO_LEVEL_HALF_TIME, max_z=3.5)


def test_conditional_flow_reproducible_and_seed_sensitive():
    path = _constant_path([-1.0, 0.0, 1.5], 0.3)
    cfg = dbm.FlowConfig(dt=0.01, t_end=0.3)
    u0 = np.eye(3)
    a = dbm.evolve_eigen_conditional(path, u0, cfg, 42)
    b = dbm.evolve_eigen_conditional(path, u0, cfg, 42)
    np.testing.assert_array_equal(a, b)
    c = dbm.evolve_eigen_conditional(path, u0, cfg, 43)
    assert np.abs(a - c).max() > 1e-6
    assert dbm.gram_drift(a) < 1e-12


def test_conditional_record_times():
    path = _constant_path([-1.0, 0.0, 1.5], 0.3)
    cfg = dbm.FlowConfig(dt=0.01, t_end=0.3)
    u0 = np.eye(3)
    final = dbm.evolve_eigen_conditional(path, u0, cfg, 9)
    snaps = dbm.evolve_eigen_conditional(path, u0, cfg, 9,
                                         record_times=[0.3])
    assert len(snaps) == 1
    np.testing.assert_array_equal(snaps[0], final)
    three = dbm.evolve_eigen_conditional(path, u0, cfg, 9,
                                         record_times=[0.0, 0.15, 0.3])
    assert len(three) == 3
    np.testing.assert_array_equal(three[0], u0)
    for frame in three:
        assert dbm.gram_drift(frame) < 1e-12
    with pytest.raises(PathTooShort):
        dbm.evolve_eigen_conditional(path, u0, cfg, 9, record_times=[0.4])
    with pytest.raises(PathTooShort):
        dbm.evolve_eigen_conditional(
            path, u0, dbm.FlowConfig(dt=0.01, t_end=0.5), 9)


def test_conditional_gap_guard():
    path = _constant_path([0.0, 1e-12], 0.1)
    cfg = dbm.FlowConfig(dt=0.01, t_end=0.1, gap_floor=1e-6)
    with pytest.raises(GapCollapse):
        dbm.evolve_eigen_conditional(path, np.eye(2), cfg, 1)


# --------------------------------------------------------------------
# joint flow
# --------------------------------------------------------------------

def test_joint_flow_initial_gap_guard():
    data = spectral.SpectralData(
        lambdas=np.array([0.0, 1e-9, 1.0]), vectors=np.eye(3),
        sign_policy=("provided",))
    cfg = dbm.FlowConfig(dt=0.01, t_end=0.1)  # default floor 1e-8 * width
    with pytest.raises(GapCollapse):
        dbm.evolve_eigen(data, 0.1, cfg, 1, 2)


def test_joint_flow_value_path_independent_of_vector_seed():
    data = spectral.SpectralData(
        lambdas=np.array([-1.0, 0.0, 1.0]), vectors=np.eye(3),
        sign_policy=("provided",))
    cfg = dbm.FlowConfig(dt=0.005, t_end=0.2)
    path_a, fin_a = dbm.evolve_eigen(data, 0.2, cfg, 5, 100)
    path_b, fin_b = dbm.evolve_eigen(data, 0.2, cfg, 5, 200)
    np.testing.assert_array_equal(path_a.lambdas_at, path_b.lambdas_at)
    assert np.abs(fin_a.vectors - fin_b.vectors).max() > 1e-6
    assert dbm.gram_drift(fin_a.vectors) < 1e-12
    assert np.all(np.diff(fin_a.lambdas) > 0)
    assert path_a.times[-1] == 0.2


def test_joint_flow_matches_exact_transition_moments():
    # Overlap moments from the discretized spectral dynamics vs exact
    # one-shot draws, both from the same deterministic diagonal start.
    lam0 = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    s, reps = 0.4, 600
    cfg = dbm.FlowConfig(dt=0.002, t_end=s)
    data0 = spectral.SpectralData(lambdas=lam0, vectors=np.eye(5),
                                  sign_policy=("provided",))
    h0 = _diag_matrix(lam0)

    p_kk = np.empty((2, reps))
    p_kl_sq = np.empty((2, reps))
    for r in range(reps):
        _, fin = dbm.evolve_eigen(data0, s, cfg,
                                  rng.child_seed(61, "val", r),
                                  rng.child_seed(61, "vec", r))
        u = fin.vectors
        p_kk[0, r] = u[0, 2] ** 2
        p_kl_sq[0, r] = (u[0, 2] * u[0, 3]) ** 2

        hs = dbm.evolve_matrix_exact(h0, s, rng.child_seed(62, "mat", r))
        w = spectral.decompose(hs).vectors
        p_kk[1, r] = w[0, 2] ** 2
        p_kl_sq[1, r] = (w[0, 2] * w[0, 3]) ** 2

    for vals in (p_kk, p_kl_sq):
        m = vals.mean(axis=1)
        se = vals.std(axis=1, ddof=1) / np.sqrt(reps)
        z = (m[0] - m[1]) / np.hypot(se[0], se[1])
        assert abs(z) <= 3.5, f"flows disagree: {m[0]:.4g} vs {m[1]:.4g}, z={z:.2f}"


def test_hermitian_joint_flow():
    mat = ensembles.sample(ensembles.EnsembleSpec(kind="gue", n=6), 77)
    data = spectral.decompose(mat)
    cfg = dbm.FlowConfig(dt=0.005, t_end=0.2, symmetry="hermitian")
    path, fin = dbm.evolve_eigen_hermitian(data, 0.2, cfg, 8, 9)
    assert np.iscomplexobj(fin.vectors)
    assert dbm.gram_drift(fin.vectors) < 1e-12
    assert np.all(np.diff(fin.lambdas) > 0)
    path2, fin2 = dbm.evolve_eigen_hermitian(data, 0.2, cfg, 8, 9)
    np.testing.assert_array_equal(fin.vectors, fin2.vectors)
    np.testing.assert_array_equal(path.lambdas_at, path2.lambdas_at)


# --------------------------------------------------------------------
# orthonormality diagnostics
# --------------------------------------------------------------------

def test_gram_drift():
    assert dbm.gram_drift(np.eye(4)) == 0.0
    u = np.eye(4)
    u[0, 0] = 1.0 + 1e-3
    assert dbm.gram_drift(u) == pytest.approx(2e-3, rel=1e-2)


def test_orthonormality_probe_step_error_is_linear_in_dt():
    lam = np.array([0.0, 1.0, 2.0, 3.5])
    coarse = dbm.orthonormality_probe(lam, 1e-3, 400, 5)
    fine = dbm.orthonormality_probe(lam, 2.5e-4, 400, 5)
    assert coarse.shape == (400,)
    assert coarse.max() < 1e-2
    ratio = coarse.mean() / fine.mean()  # same noise stream, quartered step
    assert 3.2 < ratio < 4.8
