"""Command-line surface: sampling, flows, observables, verification
suites, and Monte Carlo experiments.

Exit codes: 0 = all requested checks passed, 1 = a check failed,
2 = usage or configuration error.  `--seed` beats the EMF_SEED
environment variable, which beats the config file.  All outputs embed
the run-manifest digest and contain no timestamps, so rerunning a
manifest reproduces every file byte for byte.
"""

import argparse
import itertools
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import container, dbm, ensembles, observables, spectral, stats
from .errors import ConfigError, EmflabError
from .rng import bulk_generator, child_seed

EXPERIMENTS = ("decorrelation", "variance", "tail", "que",
               "resolvent", "gaussdet", "gaussianity")
CHECKS = ("generator", "wick", "flow", "hafnian", "semicircle")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="emf",
        description="Random-matrix eigenvector statistics laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config,
                       help="key=value config file with [ensemble], "
                            "[experiment], [exponents] sections")
        p.add_argument("--out", default="emf-out",
                       help="output directory (default: emf-out)")
        p.add_argument("--seed", type=int, default=None,
                       help="base seed override (beats EMF_SEED and config)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker count hint (beats EMF_THREADS)")

    common(sub.add_parser("sample", help="draw one matrix into an EMF1 file"))
    common(sub.add_parser("flow", help="run the spectral flow, record the path"))
    p_obs = sub.add_parser("observe", help="overlap observables from a flow output")
    common(p_obs)
    p_obs.add_argument("--flow-dir", default=None,
                       help="directory holding a `flow` run (default: --out)")

    p_ver = sub.add_parser("verify", help="run one self-verification suite")
    p_ver.add_argument("check", choices=CHECKS)
    p_ver.add_argument("--n", type=int, default=2, help="particle count")
    p_ver.add_argument("--N", type=int, default=3, dest="sites",
                       help="site / dimension count")
    p_ver.add_argument("--m", type=int, default=2, help="pair count")
    p_ver.add_argument("--replicas", type=int, default=2000)
    p_ver.add_argument("--seed", type=int, default=None)
    p_ver.add_argument("--threads", type=int, default=None)

    p_exp = sub.add_parser("experiment", help="run one Monte Carlo experiment")
    p_exp.add_argument("name", choices=EXPERIMENTS)
    common(p_exp)
    return parser


def resolve_seed(args, config_seed=0):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("EMF_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError("EMF_SEED", f"not an integer: {env!r}") from None
    return config_seed


def resolve_threads(args):
    if getattr(args, "threads", None) is not None:
        return args.threads
    env = os.environ.get("EMF_THREADS")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError("EMF_THREADS", f"not an integer: {env!r}") from None
    return 1


def _prepare(args, command):
    spec, extras = stats.load_experiment_config(args.config)
    seed = resolve_seed(args, spec.base_seed)
    spec = replace(spec, base_seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = container.RunManifest.create(command, args.config, seed, out)
    manifest.write(out / "manifest.json")
    return spec, extras, out, manifest


# --------------------------------------------------------------------
# sample / flow / observe
# --------------------------------------------------------------------

def cmd_sample(args):
    spec, _, out, manifest = _prepare(args, "sample")
    mat = ensembles.sample(spec.ensemble, child_seed(spec.base_seed, "matrix"))
    if spec.s > 0:
        mat = ensembles.gaussian_divisible(
            mat, spec.s, child_seed(spec.base_seed, "flow-noise"))
    container.write_matrix(out / "matrix.emf1", mat.entries,
                           symmetry=mat.symmetry,
                           manifest_hash=manifest.digest)
    print(f"wrote {out / 'matrix.emf1'} (n={mat.n}, {mat.symmetry})")
    return 0


def cmd_flow(args):
    spec, extras, out, manifest = _prepare(args, "flow")
    if spec.s <= 0:
        raise ConfigError("experiment.s", "flow needs a positive time horizon")
    dt = float(extras.get("dt", 1e-3))
    mat = ensembles.sample(spec.ensemble, child_seed(spec.base_seed, "matrix"))
    spec0 = spectral.decompose(mat)
    config = dbm.FlowConfig(dt=dt, t_end=spec.s,
                            symmetry=spec.ensemble.symmetry)
    if spec.ensemble.symmetry == "hermitian":
        path, spec_s = dbm.evolve_eigen_hermitian(
            spec0, spec.s, config,
            child_seed(spec.base_seed, "path-values"),
            child_seed(spec.base_seed, "path-vectors"))
    else:
        path, spec_s = dbm.evolve_eigen(
            spec0, spec.s, config,
            child_seed(spec.base_seed, "path-values"),
            child_seed(spec.base_seed, "path-vectors"))
    container.write_path(out / "path.emf1", path.times, path.lambdas_at,
                         manifest_hash=manifest.digest)
    container.write_matrix(out / "vectors.emf1", spec_s.vectors,
                           symmetry=spec.ensemble.symmetry,
                           manifest_hash=manifest.digest)
    print(f"wrote {out / 'path.emf1'} ({len(path.times)} times) and "
          f"{out / 'vectors.emf1'}")
    return 0


def cmd_observe(args):
    spec, _, out, manifest = _prepare(args, "observe")
    flow_dir = Path(args.flow_dir) if args.flow_dir else out
    vectors, symmetry, _ = container.read_matrix(flow_dir / "vectors.emf1")
    times, lam_rows, _ = container.read_path(flow_dir / "path.emf1")
    sdata = spectral.SpectralData(lambdas=lam_rows[-1], vectors=vectors,
                                  sign_policy=("provided",))
    m = spec.index_size
    fam = observables.ProjectionFamily(mode="canonical-indices",
                                       indices=tuple(range(m)))
    k, l = spec.k, spec.l
    ov = observables.overlaps(sdata, fam, (k, l))
    p_kk, p_ll, p_kl = ov.p(k, k), ov.p(l, l), ov.p(k, l)
    fer = (p_kk * p_ll - p_kl ** 2).real
    bos = (p_kk * p_ll + 2 * p_kl ** 2).real
    rows = [{
        "time": times[-1], "k": k, "l": l,
        "p_kk": _real(p_kk), "p_ll": _real(p_ll), "p_kl": _real(p_kl),
        "fermionic_pair": fer, "bosonic_pair": bos,
    }]
    container.write_csv(out / "overlaps.csv", rows,
                        manifest_hash=manifest.digest)
    container.write_json(out / "overlaps.json",
                         {"experiment": "observe", "rows": rows},
                         manifest_hash=manifest.digest)
    print(f"wrote {out / 'overlaps.csv'}")
    return 0


def _real(x):
    return float(np.real(x))


# --------------------------------------------------------------------
# verify suites
# --------------------------------------------------------------------

def cmd_verify(args):
    seed = resolve_seed(args, 0)
    runner = {
        "generator": lambda: _verify_generator(args.n, seed),
        "wick": lambda: _verify_wick(args.sites, args.m, seed),
        "flow": lambda: _verify_flow(args.replicas, seed),
        "hafnian": lambda: _verify_hafnian(seed),
        "semicircle": lambda: _verify_semicircle(seed),
    }[args.check]
    report = runner()
    print(json.dumps(report, sort_keys=True, indent=2,
                     default=container._json_default))
    return 0 if report["pass"] else 1


def _verify_generator(n, seed):
    from . import momentflow

    g = bulk_generator(seed, "generator-tuples")
    n_sites = max(2 * n, 6)
    trials = []
    failures = 0
    for _ in range(10):
        k = tuple(sorted(g.choice(n_sites, size=n, replace=False).tolist()))
        extra = int(g.choice([x for x in range(n_sites) if x not in k]))
        rep = momentflow.generator_identity_check(k, extra)
        ok = rep["pass"]
        failures += 0 if ok else 1
        trials.append({"tuple": list(k), "extra": extra, "pass": ok,
                       "residual_terms": max(
                           e["residual_term_count"] for e in rep["entries"])})
    return {"check": "generator", "particles": n, "trials": trials,
            "failures": failures, "pass": failures == 0}


def _verify_wick(n_sites, m, seed):
    from .grassmann import Covariance, GaussianExpectation, wick_check

    g = bulk_generator(seed, "wick-covariances")
    worst = 0.0
    count = 0
    for _ in range(2):
        a = g.normal(size=(n_sites, n_sites))
        cov = Covariance(delta=a @ a.T + n_sites * np.eye(n_sites),
                         C0=float(g.uniform(0.05, 0.5)))
        engine = GaussianExpectation(cov)
        for pairs in itertools.product(
                itertools.product(range(n_sites), repeat=2), repeat=m):
            rep = wick_check(list(pairs), cov, engine=engine)
            worst = max(worst, rep["delta"])
            count += 1
    return {"check": "wick", "sites": n_sites, "pairs": m,
            "cases": count, "worst_delta": worst, "pass": worst <= 1e-10}


def _verify_flow(replicas, seed):
    from .momentflow import flow_residual_check

    ens = ensembles.EnsembleSpec(kind="goe", n=10)
    fam = observables.ProjectionFamily(mode="canonical-indices",
                                       indices=(0, 1, 2))
    rep = flow_residual_check(ens, fam, (4, 6), s0=0.3, ds=0.05,
                              replicas=replicas, seed=seed)
    return {"check": "flow", "zscore": rep["zscore"],
            "zscore_half": rep["zscore_half"],
            "resid_mean": rep["resid_mean"],
            "resid_stderr": rep["resid_stderr"], "pass": rep["pass"]}


def _brute_hafnian(a):
    n = a.shape[0]
    if n == 0:
        return 1.0
    def matchings(items):
        if not items:
            yield []
            return
        first, rest = items[0], items[1:]
        for i, other in enumerate(rest):
            for tail in matchings(rest[:i] + rest[i + 1:]):
                yield [(first, other)] + tail
    return sum(np.prod([a[i, j] for i, j in match])
               for match in matchings(list(range(n))))


def _brute_permanent(a):
    n = a.shape[0]
    return sum(np.prod([a[i, p[i]] for i in range(n)])
               for p in itertools.permutations(range(n)))


def _verify_hafnian(seed):
    g = bulk_generator(seed, "hafnian-matrices")
    worst = 0.0
    for two_m in (2, 4, 6, 8, 10):
        a = g.normal(size=(two_m, two_m))
        a = a + a.T
        worst = max(worst, abs(observables.hafnian(a) - _brute_hafnian(a)))
    for m in range(1, 6):
        a = g.normal(size=(m, m))
        worst = max(worst, abs(observables.permanent(a) - _brute_permanent(a)))
    return {"check": "hafnian", "worst_delta": float(worst),
            "pass": bool(worst <= 1e-9)}


def _verify_semicircle(seed):
    g = bulk_generator(seed, "semicircle-grid")
    re = g.uniform(-3, 3, size=1000)
    im = g.uniform(0.05, 3, size=1000)
    worst = 0.0
    for z in re + 1j * im:
        m_z = spectral.semicircle_stieltjes(z)
        worst = max(worst, abs(m_z * m_z + z * m_z + 1.0))
    n = 500
    ratios = []
    law_ok = 0
    seeds = 5
    for r in range(seeds):
        mat = ensembles.sample(ensembles.EnsembleSpec(kind="goe", n=n),
                               child_seed(seed, "rigidity", r))
        sdata = spectral.decompose(mat)
        rep = spectral.rigidity_report(sdata)
        ratios.append(rep.max_ratio)
        z = 0.3 + 2j / n ** 0.8
        resid = abs(spectral.empirical_stieltjes(sdata, z)
                    - spectral.semicircle_stieltjes(z))
        law_ok += resid <= spectral.averaged_law_bound(n, z)
    return {"check": "semicircle", "worst_root_residual": float(worst),
            "max_rigidity_ratio": float(max(ratios)),
            "averaged_law_ok": law_ok, "seeds": seeds,
            "pass": bool(worst <= 1e-12 and max(ratios) <= 1.0
                         and law_ok == seeds)}


# --------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------

def cmd_experiment(args):
    spec, extras, out, manifest = _prepare(args, f"experiment {args.name}")
    runner = {
        "decorrelation": _exp_decorrelation,
        "variance": _exp_variance,
        "tail": _exp_tail,
        "que": _exp_que,
        "resolvent": _exp_resolvent,
        "gaussdet": _exp_gaussdet,
        "gaussianity": _exp_gaussianity,
    }[args.name]
    summary, rows = runner(spec, extras)
    summary["experiment"] = args.name
    container.write_csv(out / "result.csv", rows,
                        manifest_hash=manifest.digest)
    container.write_json(out / "result.json", summary,
                         manifest_hash=manifest.digest)
    status = "pass" if summary["pass"] else "FAIL"
    print(f"{args.name}: estimate={summary['estimate']:.6g} "
          f"stderr={summary['stderr']:.3g} target={summary['target']:.6g} "
          f"[{status}] -> {out / 'result.json'}")
    return 0 if summary["pass"] else 1


def _exp_decorrelation(spec, extras):
    est = stats.estimate_decorrelation(spec)
    target = stats.haar_decorrelation_value(spec.N, spec.index_size)
    z = est.zscore(target)
    summary = {"estimate": est.mean, "stderr": est.stderr, "target": target,
               "zscore": z, "pass": bool(abs(z) <= 3.0)}
    rows = [{"N": spec.N, "index_size": spec.index_size,
             "estimate": est.mean, "stderr": est.stderr,
             "target": target, "zscore": z}]
    return summary, rows


def _exp_variance(spec, extras):
    est = stats.estimate_overlap_variance(spec)
    target = stats.haar_variance_value(spec.N, spec.index_size)
    z = est.zscore(target)
    summary = {"estimate": est.mean, "stderr": est.stderr, "target": target,
               "zscore": z, "departure_from_one": abs(est.mean - 1.0),
               "pass": bool(abs(z) <= 3.0)}
    rows = [{"N": spec.N, "index_size": spec.index_size,
             "estimate": est.mean, "stderr": est.stderr,
             "target": target, "zscore": z}]
    return summary, rows


def _exp_tail(spec, extras):
    levels = [float(x) for x in extras.get("levels", "2,3,4").split(",")]
    rows = stats.tail_check(spec, levels)
    worst = max(r["ratio"] for r in rows)
    summary = {"estimate": worst, "stderr": 0.0, "target": 1.5,
               "pass": bool(all(r["pass"] for r in rows))}
    return summary, rows


def _exp_que(spec, extras):
    rep = stats.que_bound_check(spec)
    rows = [{"seed_index": i, "ratio": float(r)}
            for i, r in enumerate(rep["ratios"])]
    summary = {"estimate": rep["violating_fraction"], "stderr": 0.0,
               "target": 0.05, "psi1": rep["psi1"], "bound": rep["bound"],
               "max_ratio": rep["max_ratio"], "pass": rep["pass"]}
    return summary, rows


def _exp_resolvent(spec, extras):
    z = complex(float(extras.get("z_re", 0.0)),
                float(extras.get("z_im", 0.5)))
    j = int(extras.get("j", spec.N // 2))
    alpha = int(extras.get("alpha", 0))
    beta = int(extras.get("beta", 1))
    rep = stats.resolvent_decorrelation_check(spec, z, j, alpha, beta)
    summary = {"estimate": rep["estimate"], "stderr": rep["stderr"],
               "target": rep["envelope"],
               "sharper_than_trivial": rep["sharper_than_trivial"],
               "pass": bool(rep["pass"])}
    rows = [{"z_re": z.real, "z_im": z.imag, "j": j,
             "alpha": alpha, "beta": beta,
             "estimate": rep["estimate"], "stderr": rep["stderr"],
             "envelope": rep["envelope"],
             "trivial_envelope": rep["trivial_envelope"]}]
    return summary, rows


def _exp_gaussdet(spec, extras):
    n = int(extras.get("det_n", 4))
    est = stats.gaussian_det_mc(n, spec.replicas, spec.base_seed)
    target = observables.gaussian_det_moment(n)
    z = est.zscore(target)
    summary = {"estimate": est.mean, "stderr": est.stderr,
               "target": float(target), "zscore": z,
               "pass": bool(abs(z) <= 3.0)}
    rows = [{"n": n, "estimate": est.mean, "stderr": est.stderr,
             "target": float(target), "zscore": z}]
    return summary, rows


def _exp_gaussianity(spec, extras):
    i_fixed = tuple(int(x) for x in extras.get("i_fixed", "0,1,2").split(","))
    max_moment = int(extras.get("max_moment", 4))
    rows = stats.entry_gaussianity(spec, i_fixed, max_moment=max_moment)
    worst = max(abs(r["zscore"]) for r in rows)
    summary = {"estimate": worst, "stderr": 0.0, "target": 3.0,
               "pass": bool(worst <= 3.0)}
    return summary, rows


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {
        "sample": cmd_sample,
        "flow": cmd_flow,
        "observe": cmd_observe,
        "verify": cmd_verify,
        "experiment": cmd_experiment,
    }[args.command]
    try:
        resolve_threads(args)  # validates the worker-count hint
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except EmflabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
