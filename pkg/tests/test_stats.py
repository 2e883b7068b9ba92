"""Experiment-layer tests.

Oracles:

* The closed-form orthogonal-frame moments are validated against direct
  Monte Carlo over QR-sampled random orthonormal columns — an
  implementation with no code shared with the estimators.
* Gaussian-ensemble eigenbases are exactly rotation invariant, so the
  same closed forms are finite-N targets (not asymptotics) for the
  estimators at any size.
* With the index set equal to all coordinates, orthonormality forces
  every centered overlap to vanish identically — a negative control on
  the centering constant.
* Worked numbers for the error parameters, evaluated by hand:
  psi1(1e4, 100, 1) = 1e-4 + 1e-3 = 0.0011 exactly, and
  psi2(1e3, 0.1, 0.01) = 3.3185117926874143e-3.
"""

import math

import numpy as np
import pytest

from emflab import ensembles, observables, rng, spectral, stats
from emflab.errors import ConfigError, TimeBelowValidity

from conftest import zcheck


def _haar_overlaps(n, m, reps, seed):
    """Independent Monte Carlo over Haar frames via QR, two columns."""
    p_kk = np.empty(reps)
    p_ll = np.empty(reps)
    p_kl = np.empty(reps)
    for r in range(reps):
        q = stats.haar_oracle(n, 2, rng.child_seed(seed, "haar", r))
        uk, ul = q[:m, 0], q[:m, 1]
        p_kk[r] = uk @ uk - m / n
        p_ll[r] = ul @ ul - m / n
        p_kl[r] = uk @ ul
    return p_kk, p_ll, p_kl


# --------------------------------------------------------------------
# rules and containers
# --------------------------------------------------------------------

def test_resolve_index_size():
    assert stats.resolve_index_size("sqrt", 400) == 20
    assert stats.resolve_index_size("pow:0.5", 100) == 10
    assert stats.resolve_index_size("fixed:7", 100) == 7
    with pytest.raises(ValueError):
        stats.resolve_index_size("cube", 100)
    with pytest.raises(ValueError):
        stats.resolve_index_size("fixed:0", 100)
    with pytest.raises(ValueError):
        stats.resolve_index_size("fixed:101", 100)


def test_select_index():
    assert stats.select_index("bulk", 100) == 50
    assert stats.select_index("bulk+3", 100) == 53
    assert stats.select_index("bulk-2", 100) == 48
    assert stats.select_index("edge:1", 100) == 0
    assert stats.select_index("edge:100", 100) == 99
    with pytest.raises(ValueError):
        stats.select_index("edge:0", 100)
    with pytest.raises(ValueError):
        stats.select_index("bulk+60", 100)
    with pytest.raises(ValueError):
        stats.select_index("median", 100)


def test_experiment_spec_properties():
    spec = stats.ExperimentSpec(
        ensemble=ensembles.EnsembleSpec(kind="goe", n=100), replicas=10)
    assert spec.N == 100
    assert spec.index_size == 10
    assert spec.k == 50 and spec.l == 51
    assert spec.index_window_ok  # 100^0.25 <= 10 <= 100^0.75
    narrow = stats.ExperimentSpec(
        ensemble=ensembles.EnsembleSpec(kind="goe", n=100),
        index_rule="fixed:2", replicas=10)
    assert not narrow.index_window_ok
    with pytest.raises(ValueError):
        stats.ExperimentSpec(
            ensemble=ensembles.EnsembleSpec(kind="goe", n=10), replicas=1)
    with pytest.raises(ValueError):
        stats.ExperimentSpec(
            ensemble=ensembles.EnsembleSpec(kind="goe", n=10), s=-0.5,
            replicas=10)


def test_estimate_result():
    est = stats.EstimateResult(mean=1.5, stderr=0.1, replicas=100, seed=0,
                               wall_time=0.0)
    assert est.zscore(1.0) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        stats.EstimateResult(mean=0.0, stderr=0.0, replicas=1, seed=0,
                             wall_time=0.0)


# --------------------------------------------------------------------
# closed-form frame moments
# --------------------------------------------------------------------

def test_haar_oracle_is_orthonormal():
    q = stats.haar_oracle(12, 5, 3)
    assert q.shape == (12, 5)
    np.testing.assert_allclose(q.T @ q, np.eye(5), atol=1e-12)
    with pytest.raises(ValueError):
        stats.haar_oracle(3, 4, 0)
    vals = np.array([stats.haar_oracle(10, 1, rng.child_seed(1, "o", r))[0, 0]
                     for r in range(4000)])
    zcheck(vals ** 2, 1.0 / 10.0)


def test_closed_forms_against_qr_monte_carlo():
    n, m, reps = 30, 5, 40_000
    p_kk, p_ll, p_kl = _haar_overlaps(n, m, reps, 555)
    scale = n ** 2 / (2.0 * m)
    zcheck(scale * p_kk * p_ll, stats.haar_decorrelation_value(n, m),
           max_z=3.5)
    zcheck(scale * p_kk ** 2, stats.haar_diagonal_value(n, m), max_z=3.5)
    zcheck((n / np.sqrt(m) * p_kl) ** 2, stats.haar_variance_value(n, m),
           max_z=3.5)
    zcheck(p_kk * p_ll - p_kl ** 2, stats.haar_fermionic_value(n, m),
           max_z=3.5)
    zcheck(p_kk * p_ll + 2.0 * p_kl ** 2, stats.haar_bosonic_value(n, m),
           max_z=3.5)


def test_haar_frame_primitives_match_closed_forms():
    spec = stats.ExperimentSpec(
        ensemble=ensembles.EnsembleSpec(kind="goe", n=30),
        replicas=40_000, base_seed=556)
    prim = stats.haar_overlap_primitives(spec)
    n, m = spec.N, spec.index_size
    assert len(prim["p_kk"]) == spec.replicas
    assert np.all(prim["p_kk"] >= -m / n - 1e-12)
    assert np.all(prim["p_kk"] <= 1.0 - m / n + 1e-12)
    assert np.all(np.abs(prim["p_kl"]) <= 1.0 + 1e-12)
    dec = stats.estimate_decorrelation(spec, primitives=prim)
    assert abs(dec.zscore(stats.haar_decorrelation_value(n, m))) <= 3.5
    var = stats.estimate_overlap_variance(spec, primitives=prim)
    assert abs(var.zscore(stats.haar_variance_value(n, m))) <= 3.5
    again = stats.haar_overlap_primitives(spec)
    np.testing.assert_array_equal(prim["p_kl"], again["p_kl"])


# --------------------------------------------------------------------
# estimators on the exactly-invariant ensemble
# --------------------------------------------------------------------

@pytest.fixture(scope="module")
def goe_primitives():
    spec = stats.ExperimentSpec(
        ensemble=ensembles.EnsembleSpec(kind="goe", n=50),
        replicas=3000, base_seed=99)
    return spec, stats.overlap_primitives(spec)


def test_primitives_match_full_eigensolve():
    spec = stats.ExperimentSpec(
        ensemble=ensembles.EnsembleSpec(kind="goe", n=12),
        replicas=5, base_seed=4)
    prim = stats.overlap_primitives(spec)
    m, k, l = spec.index_size, spec.k, spec.l
    for r in range(spec.replicas):
        seed_r = rng.child_seed(spec.base_seed, "replica", r)
        mat = ensembles.sample(spec.ensemble, seed_r)
        _, vec = np.linalg.eigh(mat.entries)
        uk, ul = vec[:m, k], vec[:m, l]
        assert prim["p_kk"][r] == pytest.approx(uk @ uk - m / 12, abs=1e-10)
        assert prim["p_ll"][r] == pytest.approx(ul @ ul - m / 12, abs=1e-10)
        assert abs(prim["p_kl"][r]) == pytest.approx(abs(uk @ ul), abs=1e-10)
    again = stats.overlap_primitives(spec)
    np.testing.assert_array_equal(prim["p_kl"], again["p_kl"])


def test_estimators_hit_exact_targets(goe_primitives):
    spec, prim = goe_primitives
    n, m = spec.N, spec.index_size
    dec = stats.estimate_decorrelation(spec, primitives=prim)
    assert abs(dec.zscore(stats.haar_decorrelation_value(n, m))) <= 3.5
    var = stats.estimate_overlap_variance(spec, primitives=prim)
    assert abs(var.zscore(stats.haar_variance_value(n, m))) <= 3.5
    assert var.replicas == spec.replicas


def test_gaussian_eigenbasis_indistinguishable_from_haar(goe_primitives):
    spec, prim = goe_primitives
    ref = stats.haar_overlap_primitives(
        stats.ExperimentSpec(ensemble=spec.ensemble,
                             replicas=spec.replicas, base_seed=557))
    for name in ("estimate_decorrelation", "estimate_overlap_variance"):
        est = getattr(stats, name)(spec, primitives=prim)
        oth = getattr(stats, name)(spec, primitives=ref)
        z = (est.mean - oth.mean) / math.hypot(est.stderr, oth.stderr)
        assert abs(z) <= 3.5, (name, est, oth)


def test_system_solve(goe_primitives):
    spec, prim = goe_primitives
    n, m = spec.N, spec.index_size
    out = stats.system_solve(spec, primitives=prim)
    assert abs(out["F"].zscore(stats.haar_fermionic_value(n, m))) <= 3.5
    assert abs(out["B"].zscore(stats.haar_bosonic_value(n, m))) <= 3.5
    assert out["solved"]["p_kl_sq"] == pytest.approx(
        out["direct"]["p_kl_sq"], rel=1e-10)
    assert out["solved"]["p_kk_p_ll"] == pytest.approx(
        out["direct"]["p_kk_p_ll"], rel=1e-10)
    assert out["targets"]["F"] == -m / n ** 2
    assert out["targets"]["B"] == 2.0 * m / n ** 2


def test_tail_check(goe_primitives):
    spec, prim = goe_primitives
    rows = stats.tail_check(spec, (2.0, 3.0, 4.0), primitives=prim)
    assert [row["level"] for row in rows] == [2.0, 3.0, 4.0]
    probs = [row["probability"] for row in rows]
    assert probs == sorted(probs, reverse=True)
    for row in rows:
        assert row["envelope"] == row["level"] ** -2.0
        assert row["ratio"] == pytest.approx(
            row["probability"] / row["envelope"])
        assert row["pass"]


def test_diagonal_diagnostic_mode():
    spec = stats.ExperimentSpec(
        ensemble=ensembles.EnsembleSpec(kind="goe", n=50),
        l_rule="bulk", replicas=2000, base_seed=17)
    assert spec.k == spec.l
    est = stats.estimate_decorrelation(spec)
    assert abs(est.zscore(stats.haar_diagonal_value(50, 7))) <= 3.5
    with pytest.raises(ValueError):
        stats.estimate_overlap_variance(spec)
    with pytest.raises(ValueError):
        stats.system_solve(spec)


def test_full_index_set_negative_control():
    # |I| = N makes every centered overlap exactly zero by orthonormality
    spec = stats.ExperimentSpec(
        ensemble=ensembles.EnsembleSpec(kind="goe", n=20),
        index_rule="fixed:20", replicas=50, base_seed=3)
    prim = stats.overlap_primitives(spec)
    assert np.abs(prim["p_kk"]).max() < 1e-12
    assert np.abs(prim["p_kl"]).max() < 1e-12


def test_entry_gaussianity():
    spec = stats.ExperimentSpec(
        ensemble=ensembles.EnsembleSpec(kind="goe", n=40),
        replicas=3000, base_seed=23)
    rows = stats.entry_gaussianity(spec, (0, 1))
    by_moment = {row["moment"]: row for row in rows}
    assert set(by_moment) == {1, 2, 3, 4, "cross"}
    assert by_moment[2]["target"] == 1.0
    assert by_moment[4]["target"] == 3.0
    for row in rows:
        assert abs(row["zscore"]) <= 3.5, row


# --------------------------------------------------------------------
# bound parameters and checks
# --------------------------------------------------------------------

def test_psi_worked_numbers():
    assert stats.psi1(10_000, 100, 1.0) == pytest.approx(0.0011, abs=1e-18)
    assert stats.psi2(1_000, 0.1, 0.01) == pytest.approx(
        3.3185117926874143e-3, rel=1e-12)


def test_que_bound_check():
    spec = stats.ExperimentSpec(
        ensemble=ensembles.EnsembleSpec(kind="goe", n=80),
        s=0.6, replicas=60, base_seed=41)
    report = stats.que_bound_check(spec)
    assert report["pass"], report
    assert report["bound"] == pytest.approx(
        80 ** 0.2 * stats.psi1(80, 9, 0.6))
    assert report["ratios"].shape == (60,)
    assert 0.0 <= report["violating_fraction"] <= 0.05
    low = stats.ExperimentSpec(
        ensemble=ensembles.EnsembleSpec(kind="goe", n=100),
        s=0.01, replicas=10, base_seed=0)
    with pytest.raises(TimeBelowValidity):
        stats.que_bound_check(low)


def test_resolvent_decorrelation_check():
    spec = stats.ExperimentSpec(
        ensemble=ensembles.EnsembleSpec(kind="goe", n=30),
        s=0.4, replicas=150, base_seed=8)
    report = stats.resolvent_decorrelation_check(
        spec, z=0.2 + 0.5j, j=10, alpha=2, beta=5, dt=2e-3)
    assert not report["diagnostic"]
    assert report["pass"], report
    assert report["ratio"] <= 1.0
    assert report["envelope"] == pytest.approx(
        30 ** 0.2 * stats.psi2(30, 0.4, 0.5))

    diag = stats.resolvent_decorrelation_check(
        spec, z=0.2 + 0.5j, j=10, alpha=2, beta=2, dt=2e-3)
    assert diag["diagnostic"]
    assert diag["pass"] is None
    m_z = spectral.semicircle_stieltjes(0.2 + 0.5j)
    assert diag["expected_scale"] == pytest.approx(m_z.imag / 30)
    # the diagnostic mean should land at its predicted scale, loosely
    assert 0.3 <= diag["scale_ratio"] <= 3.0

    with pytest.raises(ValueError):
        stats.resolvent_decorrelation_check(spec, z=0.2 - 0.5j, j=0,
                                            alpha=0, beta=1)
    flat = stats.ExperimentSpec(
        ensemble=ensembles.EnsembleSpec(kind="goe", n=30), replicas=10,
        base_seed=0)
    with pytest.raises(ValueError):
        stats.resolvent_decorrelation_check(flat, z=0.2 + 0.5j, j=0,
                                            alpha=0, beta=1)


def test_gaussian_det_mc():
    one = stats.gaussian_det_mc(1, 100_000, 12)
    assert abs(one.zscore(0.0)) <= 3.5
    two = stats.gaussian_det_mc(2, 300_000, 13)
    assert abs(two.zscore(observables.gaussian_det_moment(2))) <= 3.5
    again = stats.gaussian_det_mc(2, 300_000, 13)
    assert again.mean == two.mean
    with pytest.raises(ValueError):
        stats.gaussian_det_mc(9, 10, 0)


# --------------------------------------------------------------------
# configuration loading
# --------------------------------------------------------------------

def _write_config(tmp_path, body):
    path = tmp_path / "exp.cfg"
    path.write_text(body)
    return str(path)


GOOD_CONFIG = """
[ensemble]
kind = goe
n = 50

[experiment]
replicas = 100
base_seed = 7
s = 0.25
extra_knob = hello

[exponents]
epsilon = 0.3
"""


def test_load_experiment_config(tmp_path):
    spec, extras = stats.load_experiment_config(
        _write_config(tmp_path, GOOD_CONFIG))
    assert spec.N == 50
    assert spec.replicas == 100
    assert spec.base_seed == 7
    assert spec.s == 0.25
    assert spec.exponents.epsilon == 0.3
    assert spec.exponents.omega == 0.1  # untouched default
    assert extras == {"extra_knob": "hello"}


@pytest.mark.parametrize("body,key", [
    ("[experiment]\nreplicas = 10\n", "ensemble"),
    ("[ensemble]\nkind = goe\nn = 10\n", "experiment"),
    ("[ensemble]\nkind = circular\nn = 10\n\n[experiment]\nreplicas = 10\n",
     "ensemble.kind"),
    ("[ensemble]\nkind = goe\nn = ten\n\n[experiment]\nreplicas = 10\n",
     "ensemble.n"),
    ("[ensemble]\nkind = goe\nn = 10\n\n[experiment]\nreplicas = lots\n",
     "experiment.replicas"),
    ("[ensemble]\nkind = goe\nn = 10\n\n[experiment]\nreplicas = 10\n\n"
     "[exponents]\nzeta = 0.1\n", "exponents.zeta"),
])
def test_config_errors_name_their_key(tmp_path, body, key):
    with pytest.raises(ConfigError) as err:
        stats.load_experiment_config(_write_config(tmp_path, body))
    assert err.value.key == key


def test_missing_config_file():
    with pytest.raises(ConfigError) as err:
        stats.load_experiment_config("/nonexistent/exp.cfg")
    assert err.value.key == "config"
