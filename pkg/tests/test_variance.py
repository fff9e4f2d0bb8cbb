import math

import numpy as np
import pytest

from conftest import simulate_trial
from trialcraft.data import make_folds
from trialcraft.errors import DegenerateFold, DegeneratePi
from trialcraft.variance import (
    InfluenceVector,
    crossfit_values,
    if_variance_crossfit,
    if_variance_parametric_ps,
    if_variance_simple,
    if_variance_strong_null,
    se_from_values,
    strong_null_values,
)


def two_sample_se(y, z):
    y1, y0 = y[z == 1], y[z == 0]
    return math.sqrt(y1.var(ddof=1) / y1.size + y0.var(ddof=1) / y0.size)


class TestSimple:
    def test_arm_mean_predictions_match_two_sample_formula(self, rng):
        d = simulate_trial(rng, n=200)
        pred1 = np.full(d.n, d.y[d.z == 1].mean())
        pred0 = np.full(d.n, d.y[d.z == 0].mean())
        se, _ = if_variance_simple(pred1, pred0, d.y, d.z, d.n_treated / d.n)
        classic = two_sample_se(d.y, d.z)
        assert abs(se - classic) / classic < 0.02

    def test_constant_outcome_gives_zero(self):
        y = np.full(10, 3.0)
        z = np.r_[np.ones(5), np.zeros(5)]
        se, _ = if_variance_simple(np.full(10, 3.0), np.full(10, 3.0), y, z, 0.5)
        assert se == 0.0

    def test_perfect_predictions_give_zero(self, rng):
        d = simulate_trial(rng, n=50)
        se, _ = if_variance_simple(d.y, d.y, d.y, d.z, d.n_treated / d.n)
        assert se < 1e-12

    def test_degenerate_pi(self, rng):
        d = simulate_trial(rng, n=20)
        with pytest.raises(DegeneratePi):
            if_variance_simple(d.y, d.y, d.y, d.z, 1.0)


class TestCrossfit:
    def test_known_pi_reduces_to_simple(self, rng):
        d = simulate_trial(rng, n=60)
        folds = make_folds(d.n, 3, d.z, seed=2, stratified=True)
        pred1 = rng.standard_normal(d.n)
        pred0 = rng.standard_normal(d.n)
        se_cf, iv_cf = if_variance_crossfit(pred1, pred0, d.y, d.z, folds, known_pi=0.5)
        se_s, iv_s = if_variance_simple(pred1, pred0, d.y, d.z, 0.5)
        assert se_cf == se_s
        np.testing.assert_array_equal(iv_cf.values, iv_s.values)

    def test_corrections_mean_zero_per_fold(self, rng):
        d = simulate_trial(rng, n=90)
        folds = make_folds(d.n, 3, d.z, seed=4, stratified=True)
        pred1 = rng.standard_normal(d.n)
        pred0 = rng.standard_normal(d.n)
        v1, v0, pi_i = crossfit_values(d.y, d.z, pred1, pred0, folds)
        for k in range(1, 4):
            idx = folds.fold_indices(k)
            base1 = d.z[idx] / pi_i[idx] * (d.y[idx] - pred1[idx]) + pred1[idx]
            corr = v1[idx] - base1
            assert abs(corr.mean()) < 1e-12

    def test_single_arm_fold_rejected(self):
        y = np.arange(8.0)
        z = np.r_[np.ones(4), np.zeros(4)]
        assignments = np.r_[np.ones(4), np.full(4, 2.0)]  # fold 1 all treated
        from trialcraft.data import FoldPlan

        folds = FoldPlan(assignments.astype(int), 2, 0, False)
        with pytest.raises(DegenerateFold):
            crossfit_values(y, z, y, y, folds)


class TestStrongNull:
    def test_pooled_mean_prediction_close_to_z_test(self, rng):
        d = simulate_trial(rng, n=200, effect=0.0)
        pred = np.full(d.n, d.y.mean())
        se, _ = if_variance_strong_null(pred, d.y, d.z, d.n_treated / d.n)
        classic = two_sample_se(d.y, d.z)
        assert abs(se - classic) / classic < 0.02

    def test_perfect_predictions_give_zero(self, rng):
        d = simulate_trial(rng, n=40)
        se, _ = if_variance_strong_null(d.y, d.y, d.z, 0.5)
        assert se < 1e-12

    def test_correction_terms_have_mean_zero_with_estimated_pi(self, rng):
        d = simulate_trial(rng, n=64)
        pred = rng.standard_normal(d.n)
        pi_hat = d.n_treated / d.n
        v1, v0 = strong_null_values(d.y, d.z, pred, pi_hat)
        base1 = d.z / pi_hat * (d.y - pred) + pred
        assert abs((v1 - base1).mean()) < 1e-12


class TestParametricPs:
    def test_intercept_only_reduces_to_crossfit(self, rng):
        # pinned reduction: with a constant propensity the score correction
        # collapses exactly to the (Z - pi_k) fold correction
        d = simulate_trial(rng, n=80)
        folds = make_folds(d.n, 4, d.z, seed=3, stratified=False)
        pred1 = rng.standard_normal(d.n)
        pred0 = rng.standard_normal(d.n)
        p_hat = np.empty(d.n)
        for k in range(1, 5):
            idx = folds.fold_indices(k)
            p_hat[idx] = d.z[idx].mean()
        ps_design = np.ones((d.n, 1))
        se_p, iv_p = if_variance_parametric_ps(pred1, pred0, d.y, d.z, p_hat, ps_design, folds)
        se_c, iv_c = if_variance_crossfit(pred1, pred0, d.y, d.z, folds)
        assert abs(se_p - se_c) <= 1e-8
        np.testing.assert_allclose(iv_p.values, iv_c.values, atol=1e-8)


class TestScaleEquivariance:
    def test_all_variants_scale_with_outcome(self, rng):
        d = simulate_trial(rng, n=100)
        folds = make_folds(d.n, 4, d.z, seed=9, stratified=True)
        pred1 = rng.standard_normal(d.n)
        pred0 = rng.standard_normal(d.n)
        pi_hat = d.n_treated / d.n
        c = -3.7

        se_a, _ = if_variance_simple(pred1, pred0, d.y, d.z, pi_hat)
        se_b, _ = if_variance_simple(c * pred1, c * pred0, c * d.y, d.z, pi_hat)
        assert abs(se_b - abs(c) * se_a) < 1e-10

        se_a, _ = if_variance_crossfit(pred1, pred0, d.y, d.z, folds)
        se_b, _ = if_variance_crossfit(c * pred1, c * pred0, c * d.y, d.z, folds)
        assert abs(se_b - abs(c) * se_a) < 1e-10

        se_a, _ = if_variance_strong_null(pred1, d.y, d.z, pi_hat)
        se_b, _ = if_variance_strong_null(c * pred1, c * d.y, d.z, pi_hat)
        assert abs(se_b - abs(c) * se_a) < 1e-10

    def test_positive_se_for_nonconstant_values(self, rng):
        values = rng.standard_normal(30)
        assert se_from_values(values) > 0

    def test_center(self):
        iv = InfluenceVector(np.array([1.0, 2.0, 3.0]), centered=False)
        assert abs(iv.center().values.mean()) < 1e-15
