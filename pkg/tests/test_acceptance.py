"""Acceptance suite: one test per criterion, each printing a verdict line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict
lines as they appear. Criterion 6 asserts both of its clauses exactly as
stated; the multiplier-vs-oracle clause fails by a wide, reproducible
margin because the kernel surrogate's gradient shrinkage is inherent at
any feasible sample count (see README and the printed diagnostics), so
that test is expected to stay red while the moment clause passes.
"""

import math
import time

import numpy as np
import pytest

from conlearn.constraints import (HomogenizationBlocks, TiltingOracle,
                                  homogenization_spec, linear_moment_spec)
from conlearn.elasticity import (VOIGT_PAIRS, FieldHyper,
                                 MaterialFieldSample, generate_training,
                                 isotropic_matrix, moment_report,
                                 sample_prior)
from conlearn.kde_prior import KdePrior, normalize_training
from conlearn.sampler import IsdeConfig, init_conditions, run
from conlearn.solver import solve
from conlearn.surrogate import SurrogateModel

from conftest import synthetic_prior


def _verdict(num, name, ok, detail):
    print(f"\nACCEPTANCE {num:2d} [{name}]: {'PASS' if ok else 'FAIL'} "
          f"({detail})", flush=True)
    return ok


# -- shared heavy runs -------------------------------------------------------


@pytest.fixture(scope="session")
def oracle_run():
    """Criterion 6/7/10 workhorse: full multiplier iteration, 2-component
    linear target, N=5000, i_max=30."""
    _, _, prior = synthetic_prior(2, seed=123)
    b = np.array([0.5, -0.3])
    spec = linear_moment_spec(prior, b)
    cfg = IsdeConfig.for_prior(prior, n_chains=5000, seed=7)
    t0 = time.perf_counter()
    res = solve(spec, prior, cfg, i_max=30, alpha_relax=0.3)
    elapsed = time.perf_counter() - t0
    oracle = TiltingOracle.from_prior(prior, [0, 1], b)
    return {"prior": prior, "b": b, "spec": spec, "cfg": cfg, "res": res,
            "elapsed": elapsed, "lam_star": oracle.root()}


@pytest.fixture(scope="session")
def homog_run(bvp, hyper, training_run):
    """Criterion 9 workhorse: end-to-end homogenization learn."""
    t0 = time.perf_counter()
    norm, red = normalize_training(training_run.raw)
    prior = KdePrior.from_training(red)
    rep_d = moment_report(training_run.c_eff)
    truth_hyper = FieldHyper(lengths=hyper.lengths,
                             mean_bulk=1.15 * 1.08974e11,
                             mean_shear=1.15 * 6.85484e10,
                             cov_bulk=0.25, cov_shear=0.125,
                             delta_bounds=(0.15, 0.25))
    truth = generate_training(bvp, truth_hyper, n_d=200, seed=777)
    rep_t = moment_report(truth.c_eff)
    targets = HomogenizationBlocks.from_matrices(rep_t.mean_matrix,
                                                 rep_t.delta_eff,
                                                 rep_d.mean_matrix)
    spec, evaluator = homogenization_spec(bvp, norm, training_run.layout,
                                          targets, rep_d.mean_matrix)
    cfg = IsdeConfig.for_prior(prior, n_chains=2000, seed=9)
    res = solve(spec, prior, cfg, i_max=15, alpha_relax=0.3)
    elapsed = time.perf_counter() - t0
    return {"res": res, "elapsed": elapsed, "targets": targets,
            "rep_d": rep_d, "evaluator": evaluator}


# -- criteria ----------------------------------------------------------------


def test_criterion_1_normalization_invariants(training_run):
    t0 = time.perf_counter()
    _, red = normalize_training(training_run.raw)
    mean_max = np.abs(red.eta_d.mean(axis=1)).max()
    cov = np.cov(red.eta_d, ddof=1)
    cov_err = np.linalg.norm(cov - np.eye(red.nu))
    elapsed = time.perf_counter() - t0
    ok = mean_max <= 1e-10 and cov_err <= 1e-8 and elapsed < 1.0
    _verdict(1, "normalization invariants", ok,
             f"|mean|={mean_max:.2e}, |cov-I|_F={cov_err:.2e}, "
             f"{elapsed:.2f}s")
    assert mean_max <= 1e-10
    assert cov_err <= 1e-8
    assert elapsed < 1.0


def test_criterion_2_prior_moment_preservation(fem_prior):
    _, _, prior = fem_prior
    mean_err = np.abs(prior.mixture_mean()).max()
    mom_err = np.abs(prior.mixture_second_moment() - np.eye(prior.nu)).max()
    ok = mean_err <= 1e-12 and mom_err <= 1e-12
    _verdict(2, "prior moment preservation", ok,
             f"mean={mean_err:.2e}, second moment={mom_err:.2e}")
    assert mean_err <= 1e-12
    assert mom_err <= 1e-12


def test_criterion_3_invariant_measure_recovery():
    _, _, prior = synthetic_prior(30, seed=2024)
    cfg = IsdeConfig.for_prior(prior, n_chains=10000, seed=31)
    t0 = time.perf_counter()
    bank = init_conditions(prior, cfg)
    ls = run(cfg, bank, prior)
    elapsed = time.perf_counter() - t0
    mean_max = np.abs(ls.points.mean(axis=1)).max()
    cov = np.cov(ls.points, ddof=1)
    eye = np.eye(prior.nu)
    cov_rel = np.linalg.norm(cov - eye) / np.linalg.norm(eye)
    ok = mean_max < 0.05 and cov_rel < 0.1 and elapsed < 120.0
    _verdict(3, "invariant-measure recovery", ok,
             f"|mean|={mean_max:.3f}, cov rel={cov_rel:.3f}, {elapsed:.0f}s")
    assert mean_max < 0.05
    assert cov_rel < 0.1
    assert elapsed < 120.0


def test_criterion_4_surrogate_gradient():
    rng = np.random.default_rng(44)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        nu = int(rng.integers(2, 7))
        n_c = int(rng.integers(1, 5))
        n = int(rng.integers(10, 60))
        model = SurrogateModel.build(rng.standard_normal((nu, n)),
                                     rng.standard_normal((n_c, n)))
        eta = rng.standard_normal(nu)
        g = model.grad(eta)
        h = 1e-5
        fd = np.zeros_like(g)
        for a in range(nu):
            step = np.zeros(nu)
            step[a] = h
            fd[a] = (model.eval(eta + step) - model.eval(eta - step)) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 10.0
    _verdict(4, "surrogate gradient vs finite differences", ok,
             f"worst rel={worst:.2e}, {elapsed:.1f}s")
    assert worst < 1e-5
    assert elapsed < 10.0


def test_criterion_5_surrogate_convergence():
    rng = np.random.default_rng(55)
    t0 = time.perf_counter()
    grid = np.stack(np.meshgrid(np.linspace(-1.2, 1.2, 9),
                                np.linspace(-1.2, 1.2, 9)), axis=0)
    probes = grid.reshape(2, -1)
    truth = np.sin(probes[0])[None, :]
    sup = []
    for n in (250, 1000, 4000):
        anchors = rng.standard_normal((2, n))
        model = SurrogateModel.build(anchors, np.sin(anchors[0])[None, :])
        sup.append(float(np.abs(model.eval_many(probes) - truth).max()))
    elapsed = time.perf_counter() - t0
    ok = sup[1] <= 1.1 * sup[0] and sup[2] <= 1.1 * sup[1] and elapsed < 60
    _verdict(5, "surrogate convergence sweep", ok,
             f"sup errors {sup[0]:.3f} -> {sup[1]:.3f} -> {sup[2]:.3f}, "
             f"{elapsed:.0f}s")
    assert sup[1] <= 1.1 * sup[0]
    assert sup[2] <= 1.1 * sup[1]
    assert elapsed < 60


def test_criterion_6_oracle_equivalence(oracle_run):
    res = oracle_run["res"]
    b = oracle_run["b"]
    lam_star = oracle_run["lam_star"]
    tr = res.trace
    mom = tr.moments[tr.i_sol - 1]
    mom_rel = np.linalg.norm(mom - b) / np.linalg.norm(b)
    lam_rel = np.linalg.norm(res.lambda_sol - lam_star) \
        / np.linalg.norm(lam_star)
    elapsed = oracle_run["elapsed"]
    ok = mom_rel < 0.05 and lam_rel < 0.02 and elapsed < 300
    _verdict(6, "oracle equivalence", ok,
             f"moment rel={mom_rel:.2e} (<0.05), "
             f"lambda rel={lam_rel:.3f} (<0.02 required), {elapsed:.0f}s; "
             f"lambda_sol={np.round(res.lambda_sol, 4)}, "
             f"oracle={np.round(lam_star, 4)}")
    assert mom_rel < 0.05
    assert elapsed < 300
    # Known-unattainable clause, asserted as stated: the kernel surrogate's
    # gradient shrinks by about 1/(1 + s_sb^2), which inflates the fixed
    # point of the multiplier iteration by ~10-15% at N=5000 while the
    # moments still meet the target. An exact-gradient control run lands at
    # ~2%. See README (acceptance notes) for the decomposition.
    assert lam_rel < 0.02


def test_criterion_7_hessian_is_covariance(oracle_run):
    tr = oracle_run["res"].trace
    sym_worst = 0.0
    eig_worst = 0.0
    for hess in tr.hessians:
        sym_worst = max(sym_worst, np.abs(hess - hess.T).max())
        eig_worst = min(eig_worst,
                        np.linalg.eigvalsh(hess).min() / np.trace(hess))
    ok = sym_worst <= 1e-12 and eig_worst >= -1e-10
    _verdict(7, "Hessian is a covariance", ok,
             f"max asymmetry={sym_worst:.2e}, min eig/trace={eig_worst:.2e}")
    assert sym_worst <= 1e-12
    assert eig_worst >= -1e-10


def test_criterion_8_fem_identities(bvp, hyper):
    t0 = time.perf_counter()
    k0, m0 = 1.08974e11, 6.85484e10
    mesh = bvp.mesh
    mat = MaterialFieldSample(kappa=np.full(mesh.n_p, k0),
                              mu=np.full(mesh.n_p, m0),
                              z_bulk=np.zeros(mesh.n_p),
                              z_shear=np.zeros(mesh.n_p),
                              w=np.array([math.log(k0), math.log(m0),
                                          math.log(0.2)]))
    y = bvp.solve_load_cases(mat)
    ceff = bvp.effective_matrix(mat, y)
    exact = isotropic_matrix(k0, m0)
    homog_rel = np.linalg.norm(ceff - exact) / np.linalg.norm(exact)
    kubc_worst = 0.0
    for seed in range(10):
        s = sample_prior(bvp.mesh, hyper, 800 + seed)
        ys = bvp.solve_load_cases(s)
        avg = bvp.average_strains(ys)
        for c, (m, r) in enumerate(VOIGT_PAIRS):
            target = np.zeros((3, 3))
            target[m, r] += 0.5
            target[r, m] += 0.5
            kubc_worst = max(kubc_worst, np.abs(avg[c] - target).max())
    elapsed = time.perf_counter() - t0
    ok = homog_rel <= 1e-8 and kubc_worst <= 1e-8 and elapsed < 60
    _verdict(8, "FEM identities", ok,
             f"homogeneous rel={homog_rel:.2e}, KUBC worst={kubc_worst:.2e}, "
             f"{elapsed:.0f}s")
    assert homog_rel <= 1e-8
    assert kubc_worst <= 1e-8
    assert elapsed < 60


def test_criterion_9_end_to_end_homogenization(homog_run):
    res = homog_run["res"]
    targets = homog_run["targets"]
    rep_d = homog_run["rep_d"]
    tr = res.trace
    err_improved = tr.errs[tr.i_sol - 1] < tr.errs[0]

    iu = np.triu_indices(6)

    def norm_from_moments(mom):
        m = np.zeros((6, 6))
        m[iu] = mom[1:22]
        m = m + m.T - np.diag(np.diag(m))
        return np.linalg.norm(m) * targets.mu_exp

    mu_exp = targets.mu_exp
    mu_traj = [norm_from_moments(m) for m in tr.moments]
    gap_train = abs(rep_d.mu - mu_exp)
    gaps = [abs(m - mu_exp) for m in mu_traj]
    closer = gaps[tr.i_sol - 1] < gap_train
    never_worse = all(g <= gaps[0] + 1e-9 for g in gaps)
    right_way = (mu_traj[tr.i_sol - 1] - mu_traj[0]) \
        * (mu_exp - mu_traj[0]) > 0
    rho = homog_run["evaluator"].residues(res.learned_set.points)
    rho2 = float((rho**2).mean())
    rho_ok = 0.8 <= rho2 <= 1.6
    elapsed = homog_run["elapsed"]
    ok = err_improved and closer and never_worse and right_way and rho_ok \
        and elapsed < 1800
    _verdict(9, "end-to-end homogenization learn", ok,
             f"err {tr.errs[0]:.3f}->{tr.errs[tr.i_sol - 1]:.3f}, "
             f"mean-norm gap {gap_train / 1e11:.3f}->"
             f"{gaps[tr.i_sol - 1] / 1e11:.3f} (x1e11), "
             f"E(rho^2)={rho2:.3f}, {elapsed:.0f}s")
    assert err_improved
    assert closer and never_worse and right_way
    assert rho_ok
    assert elapsed < 1800


def test_criterion_10_determinism(oracle_run, tmp_path):
    first = oracle_run["res"]
    spec = oracle_run["spec"]
    prior = oracle_run["prior"]
    cfg = oracle_run["cfg"]
    second = solve(spec, prior, cfg, i_max=30, alpha_relax=0.3)
    p1 = tmp_path / "trace1.csv"
    p2 = tmp_path / "trace2.csv"
    first.trace.write_csv(p1)
    second.trace.write_csv(p2)
    identical = p1.read_bytes() == p2.read_bytes()
    _verdict(10, "determinism", identical,
             f"trace CSVs byte-identical: {identical}")
    assert identical
