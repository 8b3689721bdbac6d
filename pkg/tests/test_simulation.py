import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import binom

from pacbayes.hypotheses import BoundedLoss, FiniteHypothesisSpace, FiniteWorld, SampleSet
from pacbayes.posteriors import kl_discrete
from pacbayes.rng import make_rng
from pacbayes.simulation import (
    VALIDITY_KINDS,
    EnumerationBudgetExceeded,
    ExperimentParams,
    GibbsAlgorithm,
    ValidityReport,
    binomial_moment_exact,
    binomial_upper_limit,
    catoni_chain_experiment,
    chernoff_check,
    deterministic_world,
    enumerate_samples,
    estimate_mean_posterior,
    langford_decomposition_check,
    moment_bound_check,
    outlier_world,
    random_world,
    realizable_outlier_check,
    run_validity_experiment,
    shift_of_measure_check,
    shift_of_measure_sides,
    train_var_experiment,
)


def bernoulli_world(mu):
    """One rule with 0/1 loss, losing with probability mu."""
    world = FiniteWorld(np.array([1 - mu, mu]))
    return world, BoundedLoss.from_matrix([[0.0, 1.0]], 1.0)


def ordered_mean_posterior(algorithm, world, n):
    """Mean posterior by enumerating every ordered sample."""
    acc = 0.0
    for seq in itertools.product(range(len(world)), repeat=n):
        w = math.prod(world.probs[s] for s in seq)
        acc = acc + w * np.asarray(algorithm(SampleSet(seq)))
    return acc


class TestValidity:
    @pytest.mark.parametrize("kind", [k for k in VALIDITY_KINDS if k != "local_hc"])
    def test_loose_delta(self, kind):
        world, space, loss = random_world(seed=2)
        lam = 4.0 if kind in ("catoni_hc", "kl_gibbs_hc") else 1.0
        rep = run_validity_experiment(kind, world, space, loss,
                                      ExperimentParams(n=20, delta=0.99, lam=lam), 200,
                                      make_rng(2, kind))
        assert rep.m == 200 and rep.violation_rate <= 0.99

    def test_point_mass_world(self):
        space = FiniteHypothesisSpace.uniform(3)
        loss = BoundedLoss.from_matrix([[0.2], [0.9], [0.0]], 1.0)
        rep, trials = run_validity_experiment("occam", FiniteWorld(np.array([1.0])), space, loss,
                                              ExperimentParams(n=10, delta=0.05), 100,
                                              make_rng(0), return_trials=True)
        assert rep.violation_count == 0
        assert all(t.l_hat == t.true_loss for t in trials)

    def test_local_hc_is_uncertified(self):
        world, space, loss = random_world(seed=3)
        q_bar = estimate_mean_posterior(GibbsAlgorithm(space, loss, 1.0), world, 20, 200, make_rng(3))
        rep = run_validity_experiment("local_hc", world, space, loss,
                                      ExperimentParams(n=20, delta=0.05, mean_posterior=tuple(q_bar)),
                                      200, make_rng(3))
        assert rep.certified is False

    def test_rejects_unknown_kind_and_budget(self):
        world, space, loss = random_world()
        with pytest.raises(ValueError):
            run_validity_experiment("nope", world, space, loss, ExperimentParams(n=5, delta=0.1),
                                    10, make_rng(0))
        with pytest.raises(EnumerationBudgetExceeded):
            run_validity_experiment("occam", world, space, loss, ExperimentParams(n=5, delta=0.1),
                                    10, make_rng(0), budget=100)

    def test_parallelism_invariant(self):
        world, space, loss = random_world(seed=4)
        params = ExperimentParams(n=30, delta=0.05)
        r1, t1 = run_validity_experiment("pac_bayes", world, space, loss, params, 101, make_rng(4),
                                         jobs=1, return_trials=True)
        r2, t2 = run_validity_experiment("pac_bayes", world, space, loss, params, 101, make_rng(4),
                                         jobs=2, return_trials=True)
        assert r1 == r2 and t1 == t2

    def test_upper_limit(self):
        assert binomial_upper_limit(0, 2000) == pytest.approx(1 - 0.001 ** (1 / 2000), rel=1e-12)
        assert binomial_upper_limit(0, 2000) == pytest.approx(0.003448, abs=1e-6)
        assert binomial_upper_limit(5, 5) == 1.0
        # the limit upper-bounds the rate: P(Bin(m, limit) <= k) = 1 - confidence
        assert binom.cdf(7, 500, binomial_upper_limit(7, 500)) == pytest.approx(0.001, rel=1e-9)

    def test_report_round_trip(self):
        rep = ValidityReport("occam", 2000, 0.05, 3, binomial_upper_limit(3, 2000), 50)
        d = rep.to_dict()
        assert d["passed"] is True and d["violation_rate"] == 3 / 2000
        assert ValidityReport.from_dict(d) == rep


class TestRealizable:
    def test_constant_rules_never_violate(self):
        world = FiniteWorld(np.array([0.5, 0.3, 0.2]))
        space = FiniteHypothesisSpace.uniform(2)
        loss = BoundedLoss.from_matrix([[0.3, 0.3, 0.3], [1.0, 1.0, 1.0]], 1.0)
        rep, trials = realizable_outlier_check(world, space, loss, 10, 0.05, 100, make_rng(1),
                                               return_trials=True)
        assert rep.violation_count == 0 and all(t.true_loss == 0.0 for t in trials)

    def test_rare_outliers(self):
        world, space, loss = outlier_world(outlier_probs=np.full(9, 0.01), seed=5)
        rep = realizable_outlier_check(world, space, loss, 30, 0.05, 2000, make_rng(5))
        assert rep.passed

    def test_high_confidence(self):
        # confidence 0.999: violations stay around 0.1% at most
        world, space, loss = outlier_world(seed=6)
        rep = realizable_outlier_check(world, space, loss, 30, 0.001, 2000, make_rng(6))
        assert rep.violation_rate <= 0.001 + 3 * math.sqrt(0.001 * 0.999 / 2000)

    def test_loose_delta(self):
        world, space, loss = outlier_world(seed=6)
        rep = realizable_outlier_check(world, space, loss, 30, 0.999, 500, make_rng(6))
        assert rep.violation_rate <= 0.999


class TestConcentration:
    def test_chernoff_edges(self):
        world, loss = bernoulli_world(0.3)
        rows = chernoff_check(world, 0, loss, 50, [0.0, 0.31], 10_000, make_rng(0))
        assert rows[0]["ceiling"] == 1.0 and not rows[0]["flagged"]
        assert rows[1]["frequency"] == 0.0

    def test_chernoff_bernoulli(self):
        world, loss = bernoulli_world(0.5)
        (row,) = chernoff_check(world, 0, loss, 100, [0.1], 100_000, make_rng(1))
        exact = binom.cdf(40, 100, 0.5)
        assert exact == pytest.approx(0.028444, abs=1e-6)
        assert abs(row["frequency"] - exact) <= 3 * math.sqrt(exact * (1 - exact) / 100_000)
        assert row["ceiling"] == pytest.approx(math.exp(-1), rel=1e-12)
        assert not row["flagged"]

    def test_moment_edges(self):
        world, loss = bernoulli_world(0.3)
        (row,) = moment_bound_check(world, 0, loss, 20, [0.0], 1000, make_rng(2))
        assert row["estimate"] == 1.0 and row["exact"] == 1.0
        w = FiniteWorld(np.array([0.5, 0.5]))
        # a constant 0/1 loss has D_gamma(mu, mu) = 0, hence moment 1
        for value in (0.0, 1.0):
            const = BoundedLoss.from_matrix([[value, value]], 1.0)
            for row in moment_bound_check(w, 0, const, 20, [-3.0, 2.0], 1000, make_rng(2)):
                assert row["estimate"] == pytest.approx(1.0, abs=1e-12)
        # an interior constant has D_gamma(mu, mu) < 0: no noise, moment below 1
        const = BoundedLoss.from_matrix([[0.4, 0.4]], 1.0)
        for row in moment_bound_check(w, 0, const, 20, [-3.0, 2.0], 1000, make_rng(2)):
            assert row["std_error"] <= 1e-15 and row["estimate"] < 1.0
            assert row["estimate"] == pytest.approx(row["exact"], rel=1e-12)

    def test_moment_bernoulli(self):
        world, loss = bernoulli_world(0.3)
        k = np.arange(21)
        dg = -1 * k / 20 - math.log(1 - 0.3 + 0.3 * math.exp(-1))
        oracle = float(np.sum(binom.pmf(k, 20, 0.3) * np.exp(20 * dg)))
        assert oracle == pytest.approx(1.0, abs=1e-12)
        assert binomial_moment_exact(0.3, 20, -1.0) == pytest.approx(oracle, abs=1e-12)
        (row,) = moment_bound_check(world, 0, loss, 20, [-1.0], 1_000_000, make_rng(3))
        assert row["estimate"] <= 1 + 3 * row["std_error"] and not row["flagged"]
        assert abs(row["estimate"] - oracle) <= 3 * row["std_error"]

    def test_moment_exact_at_most_one_for_bounded(self):
        world, space, loss = random_world(seed=7)
        for h in (1, 3, 5):
            for row in moment_bound_check(world, h, loss, 25, [-4.0, -1.0, 1.0, 4.0], 10,
                                          make_rng(h)):
                assert row["exact"] <= 1 + 1e-12


class TestShiftOfMeasure:
    def test_equal_measures_constant_f(self):
        p = np.array([0.2, 0.5, 0.3])
        lhs, rhs = shift_of_measure_sides(p, p, np.full(3, 1.7))
        assert lhs == pytest.approx(1.7, abs=1e-15) and rhs == pytest.approx(1.7, abs=1e-15)

    def test_equality_case(self):
        rng = make_rng(0, "shift")
        for _ in range(100):
            p, q = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
            lhs, rhs = shift_of_measure_sides(p, q, np.log(q / p) + 2.5)
            assert abs(lhs - rhs) <= 1e-12

    def test_random_sweep(self):
        rng = make_rng(1, "shift")
        for _ in range(10_000):
            d = int(rng.integers(2, 8))
            p, q = rng.dirichlet(np.ones(d)), rng.dirichlet(np.ones(d))
            assert shift_of_measure_check(p, q, rng.uniform(-10, 10, d))


class TestMeanPosterior:
    def test_fixed_algorithm(self):
        world, space, loss = random_world(seed=1)
        fixed = np.array([0.1] * 10 + [0.0] * 10)
        est = estimate_mean_posterior(lambda s: fixed, world, 5, 50, make_rng(0))
        assert np.allclose(est, fixed, atol=1e-15)

    def test_exact_matches_hand_enumeration(self):
        world = FiniteWorld(np.array([0.35, 0.65]))
        space = FiniteHypothesisSpace(np.array([0.2, 0.5, 0.3]))
        loss = BoundedLoss.from_matrix([[0.0, 1.0], [0.5, 0.2], [1.0, 0.0]], 1.0)
        alg = GibbsAlgorithm(space, loss, 1.0)
        assert len(list(enumerate_samples(world, 3))) == 4
        exact = estimate_mean_posterior(alg, world, 3, 0, None, exact=True)
        assert np.allclose(exact, ordered_mean_posterior(alg, world, 3), atol=1e-15)

    def test_mc_converges_to_exact(self):
        world, space, loss = random_world(6, 3, seed=2)
        alg = GibbsAlgorithm(space, loss, 1.0)
        exact = estimate_mean_posterior(alg, world, 4, 0, None, exact=True)
        est, se = estimate_mean_posterior(alg, world, 4, 4000, make_rng(2), return_se=True)
        assert np.all(np.abs(est - exact) <= 3 * se + 1e-15)

    def test_budget(self):
        world, _, _ = random_world(seed=0)
        with pytest.raises(EnumerationBudgetExceeded):
            list(enumerate_samples(world, 8, budget=1000))


class TestLangford:
    def test_fixed_algorithm(self):
        world = FiniteWorld(np.array([0.4, 0.6]))
        prior = np.array([0.5, 0.25, 0.25])
        fixed = np.array([0.7, 0.2, 0.1])
        lhs, (var, pt) = langford_decomposition_check(lambda s: fixed, world, 3, prior)
        assert lhs == pytest.approx(kl_discrete(fixed, prior), abs=1e-14)
        assert var == pytest.approx(0.0, abs=1e-14)

    def test_prior_equal_to_mean(self):
        world, space, loss = random_world(5, 2, seed=3)
        alg = GibbsAlgorithm(space, loss, 1.0)
        q_bar = estimate_mean_posterior(alg, world, 3, 0, None, exact=True)
        lhs, (var, pt) = langford_decomposition_check(alg, world, 3, q_bar)
        assert pt == pytest.approx(0.0, abs=1e-14) and lhs == pytest.approx(var, abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_two_situation_world(self, seed):
        world, space, loss = random_world(6, 2, seed=seed)
        alg = GibbsAlgorithm(space, loss, 2.0)
        lhs, (var, pt) = langford_decomposition_check(alg, world, 3, space.prior)
        # independent oracle over ordered samples
        q_bar = ordered_mean_posterior(alg, world, 3)
        seqs = list(itertools.product(range(2), repeat=3))
        w = [math.prod(world.probs[s] for s in seq) for seq in seqs]
        qs = [alg(SampleSet(seq)) for seq in seqs]
        oracle_lhs = sum(wi * kl_discrete(q, space.prior) for wi, q in zip(w, qs))
        oracle_var = sum(wi * kl_discrete(q, q_bar) for wi, q in zip(w, qs))
        assert lhs == pytest.approx(oracle_lhs, abs=1e-10)
        assert var == pytest.approx(oracle_var, abs=1e-10)
        assert abs(lhs - var - pt) <= 1e-10
        # dominance: the mean posterior is the best fixed prior
        assert var <= lhs + 1e-12


class TestCatoni:
    def test_deterministic_world(self):
        world, space, loss = deterministic_world()
        rep = catoni_chain_experiment(world, space, loss, 4.0, 20, 200, make_rng(0))
        assert rep.e_kl_ideal[0] <= 1e-12 and rep.e_loss[0] == pytest.approx(rep.e_emp_loss[0])
        assert rep.eq10_holds and rep.passed

    def test_random_world(self):
        world, space, loss = random_world(seed=4)
        rep = catoni_chain_experiment(world, space, loss, 4.0, 50, 500, make_rng(4))
        assert rep.eq9_holds and rep.eq10_holds and rep.eq11_holds
        assert rep.hc_validity.violation_count == 0 and rep.kl_hc_validity.violation_count == 0

    def test_rejects_small_lambda(self):
        world, space, loss = deterministic_world()
        with pytest.raises(ValueError):
            catoni_chain_experiment(world, space, loss, 2.0, 20, 10, make_rng(0))


class TestTrainVar:
    def test_fixed_algorithm(self):
        world, space, loss = random_world(seed=5)
        fixed = np.asarray(space.prior)
        rep = train_var_experiment(lambda s: fixed, world, space, loss, 1.0, 30, 300, make_rng(5))
        assert rep.e_kl_to_mean[0] == pytest.approx(0.0, abs=1e-12)
        assert rep.rhs_mean == pytest.approx(2 * rep.e_emp_loss[0], rel=1e-12)
        assert rep.eq6_holds

    def test_gibbs(self):
        world, space, loss = random_world(seed=6)
        rep = train_var_experiment(GibbsAlgorithm(space, loss, 1.0), world, space, loss, 1.0, 50,
                                   500, make_rng(6))
        assert rep.passed and rep.rhs_mean <= rep.rhs_prior

    def test_rejects_lambda(self):
        world, space, loss = random_world()
        with pytest.raises(ValueError):
            train_var_experiment(lambda s: space.prior, world, space, loss, 0.5, 10, 10, make_rng(0))
