import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gbart.config import SamplerConfig
from gbart.data import Dataset, friedman, simulate
from gbart.engine import (
    ChainTrace,
    gengamma_variance,
    heldout_metrics,
    lpml,
    predict,
    run_chain,
    run_chains,
    survival_curve,
)
from gbart.errors import UnsupportedModelError, ValidationError
from gbart.models import (
    AftGenGammaFamily,
    AftLogLogisticFamily,
    GaussianFamily,
    HetVarFamily,
    LogisticFamily,
)
from gbart.tree import DecisionTree, Forest


def small_config(**kw):
    base = dict(num_trees=5, iterations=30, burn_in=10)
    base.update(kw)
    return SamplerConfig(**base)


@pytest.fixture(scope="module")
def gaussian_data():
    return simulate("friedman_gaussian", np.random.default_rng(0), n=100, p=6)[0]


def root_trace(model, family, n_draws=3, p=2, values=0.0, nuisance=None):
    forests = [Forest((DecisionTree.leaf(values),) * 2, 0.1, np.full(p, 1 / p)) for _ in range(n_draws)]
    nuis = [dict(nuisance or family.nuisance) for _ in range(n_draws)]
    return ChainTrace(model, small_config(), {}, forests, nuis, np.zeros((n_draws, 1)), family=family)


class TestRunChain:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 6), st.integers(1, 4), st.integers(1, 4))
    def test_kept_count(self, burn_in, thin, blocks):
        data = Dataset(np.random.default_rng(0).random((8, 2)), np.arange(8.0))
        cfg = SamplerConfig(num_trees=2, burn_in=burn_in, thin=thin, iterations=burn_in + thin * blocks)
        trace = run_chain(cfg, data, GaussianFamily())
        assert trace.num_kept == blocks == (cfg.iterations - cfg.burn_in) // cfg.thin
        assert trace.pointwise_loglik.shape == (blocks, 8)
        assert len(trace.forests) == blocks
        assert len(trace.metrics["iteration"]) == cfg.iterations
        assert trace.kept_mask.sum() == blocks

    def test_single_kept_draw_band_collapses(self, gaussian_data):
        trace = run_chain(small_config(iterations=12, burn_in=11), gaussian_data, GaussianFamily())
        summary = predict(trace, gaussian_data.X[:5])
        np.testing.assert_array_equal(summary.r.lower, summary.r.upper)
        np.testing.assert_allclose(summary.r.mean, summary.r.lower)

    def test_replay(self, gaussian_data):
        a = run_chain(small_config(seed=4), gaussian_data, GaussianFamily())
        b = run_chain(small_config(seed=4), gaussian_data, GaussianFamily())
        for k in a.metrics:
            np.testing.assert_array_equal(a.metrics[k], b.metrics[k])
        np.testing.assert_array_equal(a.pointwise_loglik, b.pointwise_loglik)

    def test_family_not_mutated(self, gaussian_data):
        fam = GaussianFamily(3.0)
        run_chain(small_config(), gaussian_data, fam)
        assert fam.sigma == 3.0

    def test_dimension_mismatch(self, gaussian_data):
        with pytest.raises(ValidationError):
            run_chain(small_config(), gaussian_data, GaussianFamily(), X_pred=np.zeros((3, 2)))

    def test_missing_outcome(self, gaussian_data):
        with pytest.raises(ValidationError):
            run_chain(small_config(), Dataset(gaussian_data.X), GaussianFamily())

    def test_censoring_required(self, gaussian_data):
        data = Dataset(gaussian_data.X, np.abs(gaussian_data.y) + 0.1)
        with pytest.raises(ValidationError):
            run_chain(small_config(), data, AftLogLogisticFamily())

    def test_multiple_chains(self, gaussian_data):
        trace = run_chains(small_config(chains=2), gaussian_data, GaussianFamily())
        assert trace.num_kept == 40
        assert set(trace.metrics["chain"]) == {0.0, 1.0}

    def test_predictions_match_forests(self, gaussian_data):
        X = gaussian_data.X[:7]
        trace = run_chain(small_config(), gaussian_data, GaussianFamily(), X_pred=X, X_heldout=X)
        expected = np.array([f.evaluate(X) for f in trace.forests])
        np.testing.assert_array_equal(trace.predictions, expected)
        np.testing.assert_array_equal(trace.heldout_lambda[trace.kept_mask], expected)


class TestPredict:
    def test_root_forests_give_zero(self):
        summary = predict(root_trace("gaussian", GaussianFamily()), np.random.default_rng(0).random((4, 2)))
        np.testing.assert_array_equal(summary.r.mean, 0.0)
        np.testing.assert_array_equal(summary.transforms["mean"].mean, 0.0)

    def test_hetvar_exp_transform(self):
        trace = root_trace("hetvar", HetVarFamily(link="exp"), values=0.35)
        summary = predict(trace, np.zeros((2, 2)))
        np.testing.assert_allclose(summary.transforms["mean"].mean, math.exp(0.7))

    def test_bands_ordered(self, gaussian_data):
        trace = run_chain(small_config(), gaussian_data, GaussianFamily())
        s = predict(trace, gaussian_data.X)
        assert np.all(s.r.lower <= s.r.upper)

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            predict(root_trace("gaussian", GaussianFamily()), np.zeros((2, 5)))


@pytest.fixture(scope="module")
def aft_trace():
    data = simulate("friedman_aft_loglogistic", np.random.default_rng(1), n=80, p=5)[0]
    return run_chain(small_config(), data, AftLogLogisticFamily())


class TestSurvivalCurve:
    def test_t0_and_monotone(self, aft_trace):
        x = np.random.default_rng(2).random((3, 5))
        curves = survival_curve(aft_trace, x, np.linspace(0.0, 20.0, 41))
        np.testing.assert_array_equal(curves.draws[..., 0], 1.0)
        assert np.all(np.diff(curves.draws, axis=-1) <= 0)
        assert np.all(curves.lower <= curves.upper)

    def test_median_at_exp_r(self, aft_trace):
        x = np.random.default_rng(3).random((1, 5))
        r = np.array([f.evaluate(x)[0] for f in aft_trace.forests])
        for m in range(aft_trace.num_kept):
            s = survival_curve(aft_trace, x, [math.exp(r[m])]).draws[m, 0, 0]
            assert s == pytest.approx(0.5, abs=1e-12)

    def test_non_survival_family(self):
        with pytest.raises(UnsupportedModelError):
            survival_curve(root_trace("gaussian", GaussianFamily()), np.zeros((1, 2)), [1.0])


class TestLpml:
    def test_worked_example(self):
        total, cpo = lpml(np.array([[-1.0], [-3.0]]))
        assert total == pytest.approx(-math.log((math.e + math.e**3) / 2), abs=1e-6)
        assert total == pytest.approx(-2.4338, abs=1e-4)

    def test_one_draw(self):
        ll = np.array([[-0.5, -1.25, -2.0]])
        assert lpml(ll)[0] == pytest.approx(-3.75, abs=1e-12)

    def test_constant_column(self):
        ll = np.full((5, 2), -0.7)
        np.testing.assert_allclose(lpml(ll)[1], -0.7)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_bounded_by_max(self, draws, n, seed):
        ll = np.random.default_rng(seed).normal(-2, 3, (draws, n))
        total, cpo = lpml(ll)
        assert total <= ll.max(axis=0).sum() + 1e-9
        assert np.all(cpo >= ll.min(axis=0) - 1e-9)

    @pytest.mark.parametrize("bad", [np.array([[np.nan]]), np.array([[-np.inf, 0.0]]), np.empty((0, 3))])
    def test_invalid(self, bad):
        with pytest.raises(ValidationError):
            lpml(bad)


class TestHeldoutMetrics:
    def test_perfect_predictions(self):
        trace = root_trace("gaussian", GaussianFamily(), values=1.5)
        held = Dataset(np.zeros((4, 2)), np.full(4, 3.0))
        np.testing.assert_array_equal(heldout_metrics(trace, held)["mse"], 0.0)

    def test_logistic_zero(self):
        trace = root_trace("logistic", LogisticFamily())
        held = Dataset(np.zeros((6, 2)), np.array([0, 1, 1, 0, 1, 0.0]))
        np.testing.assert_allclose(heldout_metrics(trace, held)["loglik"], 6 * math.log(0.5))

    def test_rmse_of_zero_predictor(self):
        rng = np.random.default_rng(5)
        X = rng.random((500, 5))
        rf = friedman(X)
        trace = root_trace("gaussian", GaussianFamily(), p=5)
        out = heldout_metrics(trace, Dataset(X), {"r0": rf})
        np.testing.assert_allclose(out["rmse_r"], math.sqrt(np.mean(rf**2)))

    def test_empty_heldout(self):
        with pytest.raises(ValidationError):
            heldout_metrics(root_trace("gaussian", GaussianFamily()), Dataset(np.zeros((0, 2))))

    def test_no_metric_available(self):
        with pytest.raises(ValidationError):
            heldout_metrics(root_trace("gaussian", GaussianFamily()), Dataset(np.zeros((2, 2))))


class TestGengammaVariance:
    def test_unit_parameters(self):
        trace = root_trace("aft_gengamma", AftGenGammaFamily(1.0, 1.0))
        v, mean = gengamma_variance(trace)
        np.testing.assert_allclose(v, math.pi**2 / 6)
        assert mean == pytest.approx(1.6449, abs=1e-4)

    def test_wrong_family(self):
        with pytest.raises(UnsupportedModelError):
            gengamma_variance(root_trace("gaussian", GaussianFamily()))
