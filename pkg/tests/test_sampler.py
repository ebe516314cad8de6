import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gbart.config import SamplerConfig
from gbart.models import (
    AftGenGammaFamily,
    AftLogLogisticFamily,
    ConstantFamily,
    GammaShapeFamily,
    GaussianFamily,
    HetVarFamily,
    LogisticFamily,
    PoissonFamily,
    WeibullFamily,
)
from gbart.sampler import (
    LAPLACE_MAX_ITER,
    acceptance_log_ratio,
    gibbs_iteration,
    laplace_leaf_proposal,
    log_node_score,
    move_probabilities,
    rj_update_tree,
    slice_refresh_leaves,
    update_sigma_mu,
    update_split_probs,
)
from gbart.tree import (
    Birth,
    Change,
    DecisionTree,
    SplitRule,
    TreeNode,
    TreePriorParams,
    apply_move,
    node_region,
    sample_split_rule,
    sample_tree_prior,
)
from oracles import brute_force_birth_log_ratio, gaussian_leaf_posterior
from sampler_cases import FAMILY_FACTORIES, make_state, matched_pair

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


class TestLogNodeScore:
    def test_empty_node(self):
        e = np.array([])
        assert log_node_score(e, e, None, 0.0, GaussianFamily(1.0), 1.0) == pytest.approx(-HALF_LOG_2PI)

    def test_one_observation(self):
        one = np.array([0.0])
        val = log_node_score(one, one, None, 0.0, GaussianFamily(1.0), 1.0)
        assert val == pytest.approx(-2 * HALF_LOG_2PI)

    def test_additive_in_observations(self):
        fam = PoissonFamily()
        y, lam = np.array([1.0, 4.0]), np.array([0.2, -0.1])
        both = log_node_score(y, lam, None, 0.3, fam, 0.5)
        first = log_node_score(y[:1], lam[:1], None, 0.3, fam, 0.5)
        assert both - first == pytest.approx(float(fam.log_density(y[1:], lam[1:] + 0.3)[0]))


class TestLaplace:
    def test_empty_node(self):
        e = np.array([])
        prop = laplace_leaf_proposal(e, e, None, GaussianFamily(), 2.0)
        assert (prop.mean, prop.sd, prop.iterations) == (0.0, 2.0, 0)

    def test_gaussian_two_residuals(self):
        y = np.array([1.0, 3.0])
        prop = laplace_leaf_proposal(y, np.zeros(2), None, GaussianFamily(1.0), 1.0, init=0.0)
        assert prop.mean == pytest.approx(4 / 3, abs=1e-12)
        assert prop.sd**2 == pytest.approx(1 / 3, abs=1e-12)
        assert prop.iterations <= 2

    def test_logistic_heavy_shrinkage(self):
        n, sigma_mu = 30, 0.1
        prop = laplace_leaf_proposal(np.ones(n), np.zeros(n), None, LogisticFamily(), sigma_mu)
        assert 0 < prop.mean < sigma_mu**2 * n * 0.5 + 1e-12
        assert math.isfinite(prop.sd)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=1, max_size=40),
           st.floats(0.1, 5.0), st.floats(0.05, 5.0), st.floats(-10, 10))
    def test_gaussian_exact(self, resid, sigma, sigma_mu, init):
        r = np.array(resid)
        prop = laplace_leaf_proposal(r, np.zeros_like(r), None, GaussianFamily(sigma), sigma_mu, init=init)
        mean, sd = gaussian_leaf_posterior(r, sigma, sigma_mu)
        assert abs(prop.mean - mean) < 1e-8
        assert abs(prop.sd - sd) < 1e-8

    def test_termination_rate_across_zoo(self):
        rng = np.random.default_rng(0)
        families = [GaussianFamily(1.3), LogisticFamily(), PoissonFamily(), HetVarFamily(0.8),
                    AftLogLogisticFamily(0.9), AftGenGammaFamily(1.1, 1.5), WeibullFamily(1.4),
                    GammaShapeFamily(1.2)]
        calls = capped = 0
        for k in range(10_000):
            fam = families[k % len(families)]
            n = int(rng.integers(1, 40))
            lam = rng.normal(0.0, 0.7, n)
            y = fam.sample(lam + rng.normal(0, 0.5), rng)
            delta = (rng.random(n) < 0.6).astype(float) if fam.survival else None
            sigma_mu = float(rng.choice([0.05, 0.14, 0.5]))
            prop = laplace_leaf_proposal(y, lam, delta, fam, sigma_mu, init=float(rng.normal(0, 0.3)))
            calls += 1
            capped += prop.capped
            assert prop.sd > 0 and math.isfinite(prop.mean)
        assert capped / calls < 0.01

    def test_cap_reported(self):
        y = np.array([1.0, 3.0])
        prop = laplace_leaf_proposal(y, np.zeros(2), None, GaussianFamily(1.0), 1.0, init=50.0, max_iter=0)
        assert prop.capped and prop.mean == 50.0
        assert LAPLACE_MAX_ITER == 50


class TestMoveProbabilities:
    def test_root_only(self):
        assert move_probabilities(DecisionTree.leaf(), (0.25, 0.25, 0.5)) == (1.0, 0.0, 0.0)

    def test_default_mix(self):
        tree = apply_move(DecisionTree.leaf(), Birth("", SplitRule(0, 0.5), 0.0, 0.0))
        probs = move_probabilities(tree, (0.25, 0.25, 0.5))
        assert probs == (0.25, 0.25, 0.5) and sum(probs) == 1.0


class TestAcceptanceRatios:
    @pytest.mark.parametrize("name", sorted(FAMILY_FACTORIES))
    def test_birth_death_cancel(self, name):
        worst = 0.0
        for seed in range(200):
            forward, reverse, tree, rule = matched_pair(FAMILY_FACTORIES[name](), seed)
            if rule.degenerate:
                continue
            assert reverse.new_tree == tree
            worst = max(worst, abs(forward.log_ratio + reverse.log_ratio))
        assert worst < 1e-10

    @pytest.mark.parametrize("name", sorted(FAMILY_FACTORIES))
    def test_identity_change(self, name):
        for seed in range(20):
            state = make_state(FAMILY_FACTORIES[name](), seed=seed, num_trees=1,
                               trees=[apply_move(DecisionTree.leaf(), Birth("", SplitRule(0, 0.4), 0.2, -0.1))])
            tree = state.trees[0]
            move = Change("", tree[""].rule, tree["L"].leaf_value, tree["R"].leaf_value)
            result = acceptance_log_ratio(move, tree, state.members[0], state, state.partial_fit(0))
            assert result.log_ratio == 0.0

    def test_matches_brute_force_joint(self):
        for seed in range(40):
            rng = np.random.default_rng(100 + seed)
            fam = GaussianFamily(float(rng.uniform(0.5, 2.0)))
            state = make_state(fam, n=50, p=2, num_trees=1, seed=seed)
            state.sigma_mu = float(rng.uniform(0.1, 1.0))
            state.split_probs = rng.dirichlet(np.ones(2))
            tree, members = state.trees[0], state.members[0]
            lam = state.partial_fit(0) + rng.normal(0, 0.3, 50)
            leaf = tree.leaves()[0]
            rule = sample_split_rule(rng, node_region(tree, leaf, 2), state.split_probs)
            move = Birth(leaf, rule, float(rng.normal(0, 0.4)), float(rng.normal(0, 0.4)))
            got = acceptance_log_ratio(move, tree, members, state, lam)
            expected = brute_force_birth_log_ratio(
                tree, got.new_tree, leaf, state.X, state.y, lam, fam.sigma, state.sigma_mu,
                state.prior, state.split_probs, state.move_probs)
            assert got.log_ratio == pytest.approx(expected, abs=1e-8)

    def test_degenerate_birth_rejected(self):
        # the left child of [x0 <= 0] has a zero-width interval in x0
        tree = apply_move(DecisionTree.leaf(), Birth("", SplitRule(0, 0.0), 0.0, 0.0))
        state = make_state(GaussianFamily(), p=1, num_trees=1, trees=[tree])
        rng = np.random.default_rng(2)
        rule = sample_split_rule(rng, node_region(tree, "L", 1), state.split_probs)
        assert rule.degenerate
        result = acceptance_log_ratio(Birth("L", rule, 0.0, 0.0), tree, state.members[0], state,
                                      state.partial_fit(0))
        assert result.log_ratio == -math.inf
        for _ in range(50):
            rj_update_tree(0, state, rng)
            assert all(not state.trees[0][p].rule.degenerate for p in state.trees[0].branches())


class TestTreeUpdate:
    @pytest.mark.parametrize("name", sorted(FAMILY_FACTORIES))
    def test_lambda_cache_identity(self, name):
        state = make_state(FAMILY_FACTORIES[name](), n=80, num_trees=4, seed=3)
        rng = np.random.default_rng(4)
        for _ in range(10):
            gibbs_iteration(state, rng)
            assert np.max(np.abs(state.fit - state.forest().evaluate(state.X))) < 1e-9
            for t, tree in enumerate(state.trees):
                lam = state.partial_fit(t)
                np.testing.assert_allclose(lam + tree.evaluate(state.X), state.fit, atol=1e-12)
                members = tree.partition(state.X)
                assert members.keys() == state.members[t].keys()
                for k in members:
                    np.testing.assert_array_equal(members[k], state.members[t][k])

    def test_counters(self):
        state = make_state(GaussianFamily(), n=100, num_trees=5, seed=5)
        rng = np.random.default_rng(6)
        for _ in range(20):
            gibbs_iteration(state, rng)
        total = sum(c.attempts for c in state.counters.values())
        assert total == 100
        for c in state.counters.values():
            assert c.accepts + c.rejects == c.attempts

    def test_deterministic_replay(self):
        def run():
            state = make_state(PoissonFamily(), n=70, num_trees=4, seed=7)
            rng = np.random.default_rng(8)
            out = []
            for _ in range(15):
                gibbs_iteration(state, rng)
                out.append((state.log_posterior(), state.sigma_mu, tuple(state.fit)))
            return out

        assert run() == run()


def batch_se(x, batches=50):
    means = np.array([b.mean() for b in np.array_split(np.asarray(x), batches)])
    return means.std(ddof=1) / math.sqrt(batches)


class TestSliceRefresh:
    def test_gaussian_leaf_stationary(self):
        tree = apply_move(DecisionTree.leaf(), Birth("", SplitRule(0, 0.5), 0.0, 0.0))
        fam = GaussianFamily(1.2)
        state = make_state(fam, n=40, p=1, num_trees=1, trees=[tree], seed=9)
        state.sigma_mu = 0.7
        lam = state.partial_fit(0) + 0.4
        rng = np.random.default_rng(10)
        draws = []
        for _ in range(20_000):
            tree = slice_refresh_leaves(tree, state.members[0], state, lam, rng)
            draws.append((tree["L"].leaf_value, tree["R"].leaf_value))
        draws = np.array(draws)
        for j, leaf in enumerate("LR"):
            idx = state.members[0][leaf]
            mean, sd = gaussian_leaf_posterior(state.y[idx] - lam[idx], 1.2, 0.7)
            assert abs(draws[:, j].mean() - mean) < 3 * batch_se(draws[:, j])
            assert draws[:, j].std() == pytest.approx(sd, rel=0.05)

    def test_empty_leaf_follows_prior(self):
        # every row sits left of 0.99 after rescaling to [0, 0.5], so leaf R is empty
        tree = apply_move(DecisionTree.leaf(), Birth("", SplitRule(0, 0.99), 0.0, 0.0))
        state = make_state(LogisticFamily(), n=30, p=1, num_trees=1, trees=[tree], seed=11)
        state.X *= 0.5
        state.set_forest([tree])
        assert len(state.members[0]["R"]) == 0
        state.sigma_mu = 0.3
        rng = np.random.default_rng(12)
        draws = []
        lam = state.partial_fit(0)
        for _ in range(20_000):
            tree = slice_refresh_leaves(tree, state.members[0], state, lam, rng)
            draws.append(tree["R"].leaf_value)
        assert abs(np.mean(draws)) < 3 * batch_se(draws)
        assert np.std(draws) == pytest.approx(0.3, rel=0.05)


class TestHyperparameters:
    def test_sigma_mu_concentrates(self):
        rng = np.random.default_rng(13)
        leaves = rng.normal(0.0, 0.2, 10_000)
        s, draws = 0.5, []
        for _ in range(600):
            s = update_sigma_mu(leaves, 0.2, rng, s)
            draws.append(s)
        assert np.mean(draws[100:]) == pytest.approx(0.2, rel=0.05)

    def test_sigma_mu_prior_without_leaves(self):
        rng = np.random.default_rng(14)
        s, draws = 0.2, []
        for _ in range(20_000):
            s = update_sigma_mu(np.array([]), 0.2, rng, s)
            draws.append(s)
        draws = np.array(draws)
        # half-Cauchy(0, c) quartiles are c tan(pi/8), c, c tan(3 pi/8)
        for q, expected in [(0.25, math.tan(math.pi / 8)), (0.5, 1.0), (0.75, math.tan(3 * math.pi / 8))]:
            frac = np.mean(draws < 0.2 * expected)
            assert abs(frac - q) < 0.03

    def test_default_scale(self):
        assert SamplerConfig(num_trees=50, k=1.0).sigma_mu_scale == pytest.approx(0.1414, abs=1e-4)

    def test_split_probs_posterior_mean(self):
        rng = np.random.default_rng(15)
        counts = np.zeros(10)
        counts[0] = 100
        draws = np.array([update_split_probs(counts, 1.0, rng) for _ in range(20_000)])
        assert draws[:, 0].mean() == pytest.approx(100.1 / 101, abs=5e-4)
        np.testing.assert_allclose(draws.sum(axis=1), 1.0, atol=1e-14)

    def test_split_probs_prior(self):
        rng = np.random.default_rng(16)
        draws = np.array([update_split_probs(np.zeros(10), 1.0, rng) for _ in range(40_000)])
        assert np.all(np.isfinite(draws)) and np.all(draws >= 0)
        np.testing.assert_allclose(draws.mean(axis=0), 0.1, atol=0.01)
        # Dirichlet(0.1, ...) marginal variance a(A - a) / (A^2 (A + 1)) with A = 1
        assert draws[:, 0].var() == pytest.approx(0.1 * 0.9 / 2, rel=0.1)


class TestConstantLikelihood:
    def test_single_tree_depth_matches_prior(self):
        fam = ConstantFamily()
        state = make_state(fam, n=20, p=2, num_trees=1, seed=17, y=np.zeros(20),
                           trees=[DecisionTree.leaf()], update_nuisance=False)
        rng = np.random.default_rng(18)
        sizes = []
        for it in range(6000):
            gibbs_iteration(state, rng)
            if it >= 500:
                sizes.append(len(state.trees[0].leaves()))
        prior = TreePriorParams(0.95, 2.0)
        prior_sizes = [len(sample_tree_prior(rng, prior, np.ones(2) / 2).leaves()) for _ in range(20_000)]
        assert np.mean(sizes) == pytest.approx(np.mean(prior_sizes), abs=0.15)
        assert np.mean(np.array(sizes) == 1) == pytest.approx(0.05, abs=0.02)


def test_set_forest_checks_length():
    state = make_state(GaussianFamily(), num_trees=2)
    with pytest.raises(ValueError):
        state.set_forest([DecisionTree.leaf()])
    assert isinstance(state.trees[0][""], TreeNode)
