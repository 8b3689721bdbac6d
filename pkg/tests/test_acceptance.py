"""Acceptance criteria, one test each, at their stated tolerances.

Each test prints (and the terminal summary repeats) a ``CRITERION n PASS|FAIL``
line. Runtime limits are measured on this machine and are part of the verdict.
"""

import json
import math
import time

import numpy as np

from acceptance_log import record
from oracles import toy_grid_optimum
from pacbayes.bounds import pac_bayes_bound, zero_variance_bound
from pacbayes.cli import main
from pacbayes.datasets import toy_dataset_dict
from pacbayes.divergence import bernoulli_kl, d_gamma, invert_bound
from pacbayes.hypotheses import FiniteHypothesisSpace, FiniteWorld, BoundedLoss
from pacbayes.models import (
    LinearBinaryModel,
    MulticlassModel,
    binary_stochastic_loss,
    block_feature_map,
    mc_gradient,
    mc_posterior_loss,
)
from pacbayes.posteriors import (
    DropoutPosterior,
    GaussianShiftPosterior,
    dropout_kl,
    gaussian_kl,
    gibbs_objective,
    gibbs_weights,
    kl_discrete_rows,
    mc_log_ratio_kl,
)
from pacbayes.rng import make_rng
from pacbayes.simulation import (
    ExperimentParams,
    GibbsAlgorithm,
    binomial_moment_exact,
    catoni_chain_experiment,
    langford_decomposition_check,
    moment_bound_check,
    outlier_world,
    random_world,
    run_validity_experiment,
    shift_of_measure_sides,
    train_var_experiment,
)
from pacbayes.training import TrainConfig, sgd_minimize_bound

M = 2000
DELTA = 0.05


def _validity(kind, n=50, world=None, **params):
    world, space, loss = world or random_world(20, 10, seed=0)
    return run_validity_experiment(kind, world, space, loss,
                                   ExperimentParams(n=n, delta=DELTA, **params), M,
                                   make_rng(2024, "acceptance", kind))


def _fmt(rep):
    return f"{rep.kind} {rep.violation_count}/{rep.m} violations, UCL {rep.upper_limit:.5f} <= {rep.delta}"


def test_criterion_01_occam_validity():
    t0 = time.perf_counter()
    rep = _validity("occam")
    secs = time.perf_counter() - t0
    ok = rep.passed and secs <= 120
    record(1, "Occam validity", ok, f"{_fmt(rep)}, {secs:.1f}s (limit 120s)")
    assert ok


def test_criterion_02_pac_bayes_validity():
    t0 = time.perf_counter()
    fixed = _validity("pac_bayes", lam=1.0)
    grid = _validity("pac_bayes_grid", grid=(1.0, 2.0, 4.0))
    secs = time.perf_counter() - t0
    ok = fixed.passed and grid.passed and secs <= 180
    record(2, "PAC-Bayes validity", ok, f"{_fmt(fixed)}; {_fmt(grid)}; {secs:.1f}s (limit 180s)")
    assert ok


def test_criterion_03_gibbs_optimality():
    rng = make_rng(3, "acceptance", "gibbs")
    worst = math.inf
    for pair in range(200):
        world, space, loss = random_world(int(rng.integers(2, 30)), int(rng.integers(2, 15)),
                                          seed=int(rng.integers(2**32)))
        sample = world.draw(int(rng.integers(1, 200)), rng)
        lam = float(np.exp(rng.uniform(np.log(0.6), np.log(50))))
        q = gibbs_weights(space, sample, loss, lam)
        best = gibbs_objective(q)
        h = len(space)
        # half global Dirichlet draws, half local mixtures with the optimum at log-uniform sizes
        glob = rng.dirichlet(np.ones(h), size=500)
        eps = np.exp(rng.uniform(np.log(1e-6), 0.0, 500))[:, None]
        local = (1 - eps) * q.weights + eps * rng.dirichlet(np.ones(h), size=500)
        cloud = np.vstack([glob, local])
        objs = cloud @ q.l_hat + q.lam * q.l_max / q.n * kl_discrete_rows(cloud, space.prior)
        worst = min(worst, float(np.min(objs - best)))
    ok = worst >= -1e-12
    record(3, "Gibbs optimality", ok, f"min slack {worst:.3e} over 200 x 1000 perturbations")
    assert ok


def test_criterion_04_kl_closed_forms():
    rng = make_rng(4, "acceptance", "kl")
    worst = 0.0
    for i in range(20):
        d = int(rng.integers(1, 11))
        theta = rng.normal(0, 1.5, d)
        cases = [(GaussianShiftPosterior(theta), gaussian_kl(theta))]
        cases += [(DropoutPosterior(a, theta), dropout_kl(DropoutPosterior(a, theta)))
                  for a in (0.0, 0.25, 0.5, 0.9)]
        for j, (post, exact) in enumerate(cases):
            est, se = mc_log_ratio_kl(post, 1_000_000, make_rng(4, "kl-draws", i, j))
            worst = max(worst, abs(est - exact) / se)
    ok = worst <= 3
    record(4, "KL closed forms", ok, f"max |MC - exact| = {worst:.2f} SE over 100 cases (limit 3)")
    assert ok


def _sup_gamma(q, p):
    """Numerical sup over gamma: dense grid then Newton polishing, independent of any closed form."""
    grid = np.linspace(-30, 30, 2001)
    vals = d_gamma(q[:, None], p[:, None], grid[None, :])
    g = grid[np.argmax(vals, axis=1)]
    for _ in range(50):
        e = np.exp(g)
        m = 1 - p + p * e
        d1 = q - p * e / m
        d2 = -p * (1 - p) * e / (m * m)
        g = np.clip(g - d1 / d2, -30, 30)
    return np.maximum(vals.max(axis=1), d_gamma(q, p, g))


def test_criterion_05_divergence_identities():
    rng = make_rng(5, "acceptance", "divergence")
    q, p = rng.uniform(1e-4, 1 - 1e-4, 10_000), rng.uniform(1e-4, 1 - 1e-4, 10_000)
    sup_err = float(np.max(np.abs(_sup_gamma(q, p) - bernoulli_kl(q, p))))
    exact_max = max(binomial_moment_exact(mu, n, g)
                    for n in range(1, 26) for mu in np.linspace(0.01, 0.99, 25)
                    for g in np.linspace(-5, 5, 21))
    world, space, loss = random_world(20, 10, seed=5)
    mc_rows = [r for h in range(4) for r in moment_bound_check(
        world, h, loss, 100, [-3.0, -1.0, 1.0, 3.0], 200_000, make_rng(5, "moment", h))]
    mc_flags = sum(r["flagged"] for r in mc_rows)
    shift_ok, eq_err = True, 0.0
    for _ in range(10_000):
        k = int(rng.integers(2, 10))
        pp, qq = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
        lhs, rhs = shift_of_measure_sides(pp, qq, rng.uniform(-10, 10, k))
        shift_ok &= lhs <= rhs + 1e-12
        lhs, rhs = shift_of_measure_sides(pp, qq, np.log(qq / pp))
        eq_err = max(eq_err, abs(lhs - rhs))
    qs, ps = rng.random(100_000), rng.random(100_000)
    lam = 0.5 + rng.exponential(3.0, 100_000) + 1e-9
    c = np.maximum(d_gamma(qs, ps, -1.0 / lam), 0.0)
    unsound = int(np.sum(ps > invert_bound(qs, c, lam) + 1e-12))
    ok = (sup_err <= 1e-9 and exact_max <= 1 + 1e-12 and mc_flags == 0 and shift_ok
          and eq_err <= 1e-12 and unsound == 0)
    record(5, "Divergence identities", ok,
           f"sup-gamma err {sup_err:.1e}; exact moment max {exact_max:.15f}; "
           f"MC flags {mc_flags}/{len(mc_rows)}; shift sweep {'ok' if shift_ok else 'broken'}, "
           f"equality err {eq_err:.1e}; inversion failures {unsound}/100000")
    assert ok


def test_criterion_06_binary_closed_form():
    rng = make_rng(6, "acceptance", "binary")
    worst = 0.0
    for i in range(50):
        d = int(rng.integers(1, 6))
        theta, x, y = rng.normal(0, 1, d), rng.normal(0, 1, d), int(rng.choice([-1, 1]))
        model = LinearBinaryModel()
        data = model.featurize([x], [y])
        est, se = mc_posterior_loss(GaussianShiftPosterior(theta), data, model, 1_000_000,
                                    make_rng(6, "draws", i))
        worst = max(worst, abs(est - binary_stochastic_loss(theta, x, y)) / se)
    at_zero = binary_stochastic_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0]), 1)
    ok = worst <= 3 and at_zero == 0.5
    record(6, "Binary closed form", ok, f"max deviation {worst:.2f} SE over 50 instances; "
                                        f"margin 0 gives {at_zero!r}")
    assert ok


def test_criterion_07_gradient_correctness():
    rng = make_rng(7, "acceptance", "gradient")
    worst = 0.0
    for i in range(20):
        k, d = int(rng.integers(2, 5)), int(rng.integers(1, 4))
        model = MulticlassModel(block_feature_map(k), tuple(range(k)), float(rng.uniform(0.5, 8)),
                                rng.uniform(0, 1, (k, k)), 1.0)
        n = int(rng.integers(5, 40))
        data = model.featurize(list(rng.normal(0, 1, (n, d))), list(rng.integers(0, k, n)))
        theta = rng.normal(0, 1.5, k * d)
        for make in (GaussianShiftPosterior, lambda t: DropoutPosterior(0.3, t)):
            g = mc_gradient(make(theta), data, model, 32, make_rng(7, "crn", i))
            fd = np.empty_like(theta)
            for j, e in enumerate(np.eye(theta.size)):
                up = mc_posterior_loss(make(theta + 1e-4 * e), data, model, 32, make_rng(7, "crn", i))[0]
                dn = mc_posterior_loss(make(theta - 1e-4 * e), data, model, 32, make_rng(7, "crn", i))[0]
                fd[j] = (up - dn) / 2e-4
            worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    g1 = mc_gradient(DropoutPosterior(1.0, theta), data, model, 32, make_rng(7))
    ok = worst <= 1e-3 and np.all(g1 == 0)
    record(7, "Gradient correctness", ok, f"max relative FD error {worst:.2e} over 40 cases; "
                                          f"alpha=1 gradient zero: {bool(np.all(g1 == 0))}")
    assert ok


def test_criterion_08_training_efficacy(toy):
    data, model = toy
    config = TrainConfig(lam=1.0, delta=0.05, eta0=1.0, steps=3000, mc_per_step=8, seed=1)
    t0 = time.perf_counter()
    _, trace, report = sgd_minimize_bound(data, model, config)
    secs = time.perf_counter() - t0
    grid_best, _ = toy_grid_optimum(data, model, 1.0, 0.05)
    se = report.extra["mc_std_error"]
    ok = abs(report.value - grid_best) <= 3 * se and report.value < model.l_max and secs <= 120
    record(8, "Training efficacy", ok,
           f"SGD {report.value:.5f} vs grid {grid_best:.5f} (3 SE = {3 * se:.5f}); "
           f"bound < l_max {report.value < model.l_max}; {secs:.1f}s (limit 120s)")
    assert ok


def test_criterion_09_training_variance_and_catoni():
    worst = 0.0
    for seed in range(5):
        world, space, loss = random_world(8, 2, seed=seed)
        for n in (3, 6):
            lhs, (var, pt) = langford_decomposition_check(GibbsAlgorithm(space, loss, 4.0), world,
                                                          n, space.prior, tolerance=1e-10)
            worst = max(worst, abs(lhs - var - pt))
    world3 = FiniteWorld(np.array([0.2, 0.5, 0.3]))
    space3 = FiniteHypothesisSpace(np.array([0.4, 0.35, 0.25]))
    loss3 = BoundedLoss.from_matrix([[0, 1, 0.5], [1, 0, 0.2], [0.3, 0.3, 0.3]], 1.0)
    lhs, (var, pt) = langford_decomposition_check(GibbsAlgorithm(space3, loss3, 4.0), world3, 8,
                                                  space3.prior)
    worst = max(worst, abs(lhs - var - pt))
    world, space, loss = random_world(20, 10, seed=0)
    tv = train_var_experiment(GibbsAlgorithm(space, loss, 4.0), world, space, loss, 4.0, 50, M,
                              make_rng(9, "acceptance", "train-var"))
    cat = catoni_chain_experiment(world, space, loss, 4.0, 50, M,
                                  make_rng(9, "acceptance", "catoni"), delta=DELTA)
    ok = worst <= 1e-10 and tv.eq6_holds and tv.eq7_holds and cat.eq10_holds \
        and cat.eq11_holds and cat.hc_validity.passed
    record(9, "Training variance and Catoni chain", ok,
           f"Langford max err {worst:.1e}; train-var bounds {tv.eq6_holds}/{tv.eq7_holds}; "
           f"KL and loss chain {cat.eq10_holds}/{cat.eq11_holds}; {_fmt(cat.hc_validity)}")
    assert ok


def test_criterion_10_variance_bounds():
    union = _validity("bernstein_union")
    zero = _validity("zero_variance", n=30, world=outlier_world(seed=0))
    rng = make_rng(10, "acceptance", "factor-two")
    broken = 0
    for _ in range(10_000):
        l_hat, c, n = float(rng.random()), float(rng.uniform(0, 30)), int(rng.integers(2, 10_000))
        delta = float(rng.uniform(1e-6, 1))
        occ = pac_bayes_bound(l_hat, c, n, delta, 1.0, 1.0).value
        broken += occ > 2 * zero_variance_bound(l_hat, c, n, delta, 1.0).value + l_hat
    ok = union.passed and zero.passed and broken == 0
    record(10, "Variance-sensitive bounds", ok,
           f"{_fmt(union)}; {_fmt(zero)}; factor-of-2 failures {broken}/10000")
    assert ok


def _tree(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_criterion_11_reproducibility(tmp_path):
    verify = tmp_path / "verify.json"
    verify.write_text(json.dumps({"seed": 11, "params": {
        "kind": "occam", "random_world": {"n_hypotheses": 20, "n_situations": 10, "seed": 0},
        "n": 50, "delta": DELTA, "trials": M}}))
    train = tmp_path / "train.json"
    train.write_text(json.dumps({"seed": 1, "params": {
        "dataset": toy_dataset_dict(), "lambda": 1.0, "delta": DELTA, "eta0": 1.0,
        "steps": 500, "mc_per_step": 8}}))
    codes, same = [], True
    for name, cfg in (("verify", verify), ("train", train)):
        dirs = []
        for jobs in (1, 2, 1):
            out = tmp_path / f"{name}-{len(dirs)}"
            codes.append(main([name, "--config", str(cfg), "--out", str(out), "--jobs", str(jobs)]))
            dirs.append(_tree(out))
        same &= dirs[0] == dirs[1] == dirs[2]
    ok = same and codes == [0] * 6
    record(11, "Reproducibility", ok, f"verify and train outputs byte-identical across reruns "
                                      f"and jobs 1/2: {same}; exit codes {codes}")
    assert ok

