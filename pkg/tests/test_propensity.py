"""Propensity model fitting: empirical counts, stratified counts, and the
discrete-time adoption hazard."""

from __future__ import annotations

import numpy as np
import pytest

from ripw.design import staggered_path, staggered_support
from ripw.errors import (
    EmptyStratum,
    PathOutsideSupport,
    SeparationDetected,
    TooManyStrata,
    ValidationError,
)
from ripw.panel import PanelDataset
from ripw.propensity import (
    fit_discrete_hazard,
    fit_empirical,
    fit_stratified,
    make_propensity_fitter,
)


def staggered_panel(rng, n, T, probs, X=None):
    counts = rng.choice(T + 1, size=n, p=probs)
    W = np.array([staggered_path(T, int(j)) for j in counts])
    Y = rng.normal(size=(n, T))
    return PanelDataset(Y=Y, W=W, X=X)


class TestFitEmpirical:
    def test_counting(self):
        T = 2
        sup = staggered_support(T)
        W = np.array([[0, 0]] * 4 + [[1, 1]] * 6)
        panel = PanelDataset(Y=np.zeros((10, T)), W=W)
        model = fit_empirical(panel, sup)
        np.testing.assert_allclose(model.probs, [0.4, 0.0, 0.6])
        dist = model.predict(panel)
        assert dist.n == 10
        np.testing.assert_allclose(dist.probs.sum(axis=1), 1.0)

    def test_path_outside_support(self):
        sup = staggered_support(2, [1])
        panel = PanelDataset(Y=np.zeros((2, 2)), W=np.array([[1, 0], [0, 1]]))
        with pytest.raises(PathOutsideSupport):
            fit_empirical(panel, sup)

    def test_single_unit_point_mass(self):
        sup = staggered_support(2)
        panel = PanelDataset(Y=np.zeros((1, 2)), W=np.array([[0, 1]]))
        model = fit_empirical(panel, sup)
        np.testing.assert_allclose(model.probs, [0.0, 1.0, 0.0])


class TestFitStratified:
    def test_within_stratum_frequencies(self, rng):
        T = 2
        sup = staggered_support(T)
        W = np.array([[0, 0], [0, 1], [0, 0], [1, 1]])
        X = np.array([1.0, 1.0, 2.0, 2.0])[:, None].repeat(T, axis=1)[:, :, None]
        panel = PanelDataset(Y=np.zeros((4, T)), W=W, X=X)
        model = fit_stratified(panel, sup, 0)
        np.testing.assert_allclose(model.level_probs[0], [0.5, 0.5, 0.0])
        np.testing.assert_allclose(model.level_probs[1], [0.5, 0.0, 0.5])
        dist = model.predict(panel)
        np.testing.assert_allclose(dist.probs[2], [0.5, 0.0, 0.5])

    def test_time_varying_covariate_rejected(self):
        sup = staggered_support(2)
        X = np.array([[[1.0], [2.0]], [[1.0], [1.0]]])
        panel = PanelDataset(Y=np.zeros((2, 2)), W=np.array([[0, 1], [0, 0]]), X=X)
        with pytest.raises(ValidationError):
            fit_stratified(panel, sup, 0)

    def test_too_many_strata(self, rng):
        sup = staggered_support(2)
        n = 40
        X = np.arange(n, dtype=float)[:, None].repeat(2, axis=1)[:, :, None]
        W = np.tile([0, 1], (n, 1))
        W[0] = [0, 0]
        panel = PanelDataset(Y=np.zeros((n, 2)), W=W, X=X)
        with pytest.raises(TooManyStrata):
            fit_stratified(panel, sup, 0)

    def test_singleton_stratum_flagged(self):
        sup = staggered_support(2)
        X = np.array([1.0, 1.0, 2.0])[:, None].repeat(2, axis=1)[:, :, None]
        panel = PanelDataset(
            Y=np.zeros((3, 2)), W=np.array([[0, 1], [0, 0], [0, 1]]), X=X
        )
        model = fit_stratified(panel, sup, 0)
        assert model.singleton_strata == (2.0,)

    def test_unseen_stratum_on_predict(self):
        sup = staggered_support(2)
        X = np.ones((3, 2, 1))
        panel = PanelDataset(Y=np.zeros((3, 2)), W=np.array([[0, 1], [0, 0], [1, 1]]), X=X)
        model = fit_stratified(panel, sup, 0)
        X2 = np.full((2, 2, 1), 9.0)
        target = PanelDataset(Y=np.zeros((2, 2)), W=np.zeros((2, 2)), X=X2)
        with pytest.raises(EmptyStratum):
            model.predict(target)

    def test_constant_covariate_equals_empirical(self, rng):
        T = 3
        sup = staggered_support(T)
        panel0 = staggered_panel(rng, 30, T, [0.4, 0.2, 0.2, 0.2])
        X = np.ones((30, T, 1))
        panel = PanelDataset(Y=panel0.Y, W=panel0.W, X=X)
        emp = fit_empirical(panel, sup)
        strat = fit_stratified(panel, sup, 0)
        np.testing.assert_array_equal(strat.level_probs[0], emp.probs)

    def test_recovers_stratum_table_on_synthetic_design(self):
        """On a large generated panel the stratified fit converges to the
        per-level path probabilities the design drew from."""
        from ripw.simulate import DEFAULT_PI_TABLE, generate_panel, scenario_from_name

        scn = scenario_from_name("pta", n=10000, seed=31)
        panel, _, _ = generate_panel(scn, 0)
        model = fit_stratified(panel, staggered_support(4), 0)
        for level, expected in DEFAULT_PI_TABLE.items():
            j = model.levels.index(float(level))
            n_level = 10000 * (0.7 if level == 1 else 0.3)
            for p_hat, p in zip(model.level_probs[j], expected):
                sigma = np.sqrt(p * (1 - p) / n_level)
                assert abs(p_hat - p) <= 4 * sigma + 1e-9


class TestDiscreteHazard:
    def test_no_covariates_equals_empirical(self, rng):
        T = 3
        sup = staggered_support(T)
        for _ in range(50):
            probs = rng.dirichlet(np.full(T + 1, 2.0))
            panel = staggered_panel(rng, 40, T, probs)
            emp = fit_empirical(panel, sup).predict(panel)
            haz = fit_discrete_hazard(panel, sup, ()).predict(panel)
            emp_map = dict(zip(emp.paths, emp.probs[0]))
            haz_map = dict(zip(haz.paths, haz.probs[0]))
            for p in sup.paths:
                assert abs(emp_map[p] - haz_map.get(p, 0.0)) <= 1e-8

    def test_densities_sum_to_one(self, rng):
        T = 4
        sup = staggered_support(T)
        X = rng.normal(size=(50, T, 1))
        panel0 = staggered_panel(rng, 50, T, [0.3, 0.2, 0.2, 0.15, 0.15])
        panel = PanelDataset(Y=panel0.Y, W=panel0.W, X=X)
        dist = fit_discrete_hazard(panel, sup, (0,)).predict(panel)
        np.testing.assert_allclose(dist.probs.sum(axis=1), 1.0, atol=1e-10)
        assert np.all(dist.probs >= 0)

    def test_common_adoption_is_point_mass(self):
        T = 3
        sup = staggered_support(T)
        W = np.tile(staggered_path(T, 2), (5, 1))
        X = np.linspace(0, 1, 5)[:, None].repeat(T, axis=1)[:, :, None]
        panel = PanelDataset(Y=np.zeros((5, T)), W=W, X=X)
        model = fit_discrete_hazard(panel, sup, (0,))  # no separation raised
        dist = model.predict(panel)
        probs = dict(zip(dist.paths, dist.probs[0]))
        assert probs[staggered_path(T, 2)] == pytest.approx(1.0)

    def test_perfect_split_raises_separation(self):
        T = 3
        sup = staggered_support(T)
        n = 20
        adopt = np.array([1] * 10 + [0] * 10)  # adopters at period 2
        W = np.array([staggered_path(T, 2 if a else 0) for a in adopt])
        X = adopt.astype(float)[:, None].repeat(T, axis=1)[:, :, None]
        panel = PanelDataset(Y=np.zeros((n, T)), W=W, X=X)
        with pytest.raises(SeparationDetected):
            fit_discrete_hazard(panel, sup, (0,))

    def test_covariate_effect_recovered_roughly(self, rng):
        # strong positive coefficient: high-x units adopt earlier on average
        T = 4
        n = 400
        beta = 1.2
        x = rng.normal(size=n)
        theta0 = -1.0
        adopt = np.full(n, T)  # 0-indexed adoption period; T = never
        for t in range(T):
            at_risk = adopt == T
            h = 1 / (1 + np.exp(-(theta0 + beta * x)))
            hit = at_risk & (rng.random(n) < h)
            adopt[hit] = t
        W = np.array([staggered_path(T, T - a if a < T else 0) for a in adopt])
        X = x[:, None].repeat(T, axis=1)[:, :, None]
        panel = PanelDataset(Y=np.zeros((n, T)), W=W, X=X)
        model = fit_discrete_hazard(panel, staggered_support(T), (0,))
        assert model.beta[0] == pytest.approx(beta, abs=0.5)

    def test_non_staggered_path_rejected(self):
        sup = staggered_support(2)
        panel = PanelDataset(Y=np.zeros((2, 2)), W=np.array([[1, 0], [0, 1]]))
        from ripw.errors import NonStaggeredSupport

        with pytest.raises(NonStaggeredSupport):
            fit_discrete_hazard(panel, sup, ())


class TestFitterSelector:
    def test_selectors(self, rng):
        sup = staggered_support(2)
        X = np.ones((6, 2, 1))
        panel0 = staggered_panel(rng, 6, 2, [0.4, 0.3, 0.3])
        panel = PanelDataset(Y=panel0.Y, W=panel0.W, X=X)
        for spec in ("empirical", "stratified:0", "hazard:", "hazard:0"):
            fitter = make_propensity_fitter(spec, sup)
            dist = fitter(panel)(panel)
            np.testing.assert_allclose(dist.probs.sum(axis=1), 1.0, atol=1e-10)

    def test_unknown_selector(self):
        with pytest.raises(ValidationError):
            make_propensity_fitter("mystery", staggered_support(2))
