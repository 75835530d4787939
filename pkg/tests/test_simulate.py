"""Monte Carlo harness: generation determinism, estimator nesting, and the
effect-weight extraction."""

from __future__ import annotations

import numpy as np
import pytest

from ripw.design import staggered_support
from ripw.errors import ValidationError
from ripw.estimator import fit_from_weights
from ripw.panel import PanelDataset
from ripw.simulate import (
    DEFAULT_PI_TABLE,
    SimScenario,
    conditional_effect_weights,
    effect_weights,
    generate_panel,
    midpoint_reshape,
    run_monte_carlo,
    scenario_constants,
    scenario_from_name,
    uniform_reshape,
    weights_design,
)


class TestScenario:
    def test_names_map_to_settings(self):
        pta = scenario_from_name("pta", n=100, seed=1)
        assert (pta.sigma_m, pta.sigma_tau) == (1.0, 0.0)
        cte = scenario_from_name("cte-uniform", n=100, seed=1)
        assert cte.a_mode == "uniform"
        with pytest.raises(ValidationError):
            scenario_from_name("mystery")

    def test_invalid_sigma_combo(self):
        with pytest.raises(ValidationError):
            SimScenario(name="x", n=10, sigma_m=1.0, sigma_tau=1.0)

    def test_tau_star_zero_when_no_effect(self):
        scn = scenario_from_name("pta", n=50, seed=3)
        _, tau_star, _ = generate_panel(scn, 0)
        assert tau_star == 0.0

    def test_constants_fixed_across_reps(self):
        scn = scenario_from_name("cte-const", n=30, seed=7)
        p1, t1, d1 = generate_panel(scn, 0)
        p2, t2, d2 = generate_panel(scn, 1)
        assert t1 == t2
        np.testing.assert_array_equal(d1.probs, d2.probs)
        assert not np.array_equal(p1.W, p2.W)  # assignments resampled

    def test_bit_identical_for_fixed_seeds(self):
        scn = scenario_from_name("cte-uniform", n=25, seed=11)
        p1, _, _ = generate_panel(scn, 4)
        p2, _, _ = generate_panel(scn, 4)
        np.testing.assert_array_equal(p1.Y, p2.Y)
        np.testing.assert_array_equal(p1.W, p2.W)

    def test_stratum_frequencies_converge(self):
        scn = scenario_from_name("pta", n=10000, seed=5)
        consts = scenario_constants(scn)
        panel, _, _ = generate_panel(scn, 0)
        counts = panel.W.sum(axis=1)
        for level, probs in DEFAULT_PI_TABLE.items():
            mask = consts.X == level
            m = int(mask.sum())
            for j, p in enumerate(probs):
                freq = (counts[mask] == j).mean()
                sigma = np.sqrt(p * (1 - p) / m)
                assert abs(freq - p) <= 3.5 * sigma + 1e-9


class TestRunMonteCarlo:
    def test_deterministic_and_worker_invariant(self):
        scn = scenario_from_name("pta", n=80, seed=3)
        r1 = run_monte_carlo(scn, 12, workers=1)
        r2 = run_monte_carlo(scn, 12, workers=1)
        r3 = run_monte_carlo(scn, 12, workers=3)
        for est in r1.estimators:
            np.testing.assert_array_equal(r1.tau_hats[est], r2.tau_hats[est])
            np.testing.assert_array_equal(r1.tau_hats[est], r3.tau_hats[est])

    def test_unweighted_is_theta_one_pathway(self):
        scn = scenario_from_name("cte-const", n=60, seed=9)
        report = run_monte_carlo(scn, 5, estimators=("unweighted",))
        consts = scenario_constants(scn)
        for rep in range(5):
            panel, tau_star, _ = generate_panel(scn, rep)
            fit = fit_from_weights(PanelDataset(Y=panel.Y, W=panel.W), np.ones(scn.n))
            assert report.tau_hats["unweighted"][rep] == fit.tau_hat

    def test_rows_match_request(self):
        scn = scenario_from_name("pta", n=50, seed=2)
        report = run_monte_carlo(scn, 7)
        rows = report.rows()
        assert len(rows) == 7 * 3
        assert {r[0] for r in rows} == {"unweighted", "ipw", "ripw"}

    def test_reps_validated(self):
        scn = scenario_from_name("pta", n=50, seed=2)
        with pytest.raises(ValidationError):
            run_monte_carlo(scn, 0)

    def test_worker_cap_from_env(self, monkeypatch):
        from ripw.simulate import worker_count

        monkeypatch.delenv("RIPW_THREADS", raising=False)
        assert worker_count() == 1
        monkeypatch.setenv("RIPW_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("RIPW_THREADS", "0")
        assert worker_count() >= 1
        monkeypatch.setenv("RIPW_THREADS", "zebra")
        with pytest.raises(ValidationError):
            worker_count()


class TestEffectWeights:
    def test_conditional_weights_sum_to_one(self, rng):
        design = weights_design(40, seed=21)
        paths = np.array(design.paths, float)
        for _ in range(10):
            idx = np.array([rng.choice(5, p=design.probs[i]) for i in range(40)])
            W = paths[idx]
            theta = rng.uniform(0.5, 2.0, size=40)
            xi = conditional_effect_weights(W, theta)
            assert abs(xi.sum() - 1.0) <= 1e-8

    def test_matches_finite_difference(self, rng):
        """Independent oracle: perturb one cell's outcome through the full
        estimator; the analytic weight must match for any step size."""
        design = weights_design(15, seed=22)
        paths = np.array(design.paths, float)
        idx = np.array([rng.choice(5, p=design.probs[i]) for i in range(15)])
        W = paths[idx]
        theta = rng.uniform(0.5, 2.0, size=15)
        Y = rng.normal(size=(15, 4))
        xi = conditional_effect_weights(W, theta)
        base = fit_from_weights(PanelDataset(Y=Y, W=W), theta).tau_hat
        for (i, t) in [(0, 0), (3, 2), (14, 3)]:
            for step in (1.0, 0.37):
                bumped = Y.copy()
                bumped[i, t] += step * W[i, t]
                tau2 = fit_from_weights(PanelDataset(Y=bumped, W=W), theta).tau_hat
                fd = (tau2 - base) / step
                assert abs(fd - xi[i, t]) <= 1e-10

    def test_constant_effect_shift_reproduced(self, rng):
        # adding a constant to every treated cell moves the estimate by
        # exactly the total conditional weight on treated cells
        design = weights_design(20, seed=23)
        paths = np.array(design.paths, float)
        idx = np.array([rng.choice(5, p=design.probs[i]) for i in range(20)])
        W = paths[idx]
        theta = np.ones(20)
        Y = rng.normal(size=(20, 4))
        xi = conditional_effect_weights(W, theta)
        t1 = fit_from_weights(PanelDataset(Y=Y, W=W), theta).tau_hat
        t2 = fit_from_weights(PanelDataset(Y=Y + 1.0 * W, W=W), theta).tau_hat
        assert abs((t2 - t1) - xi.sum()) <= 1e-8

    def test_unweighted_realizations_have_negatives(self):
        design = weights_design(60, seed=24)
        ew = effect_weights(design, "unweighted", reps=50, seed=24)
        assert ew.share_with_negative > 0.9
        assert len(ew.conditional) == 3

    def test_ripw_unconditional_near_uniform(self):
        design = weights_design(60, seed=25)
        Pi = midpoint_reshape(4)
        ew = effect_weights(design, "ripw", reps=4000, seed=25, Pi=Pi)
        scaled = ew.n * ew.T * ew.unconditional
        assert np.max(np.abs(scaled - 1.0)) < 0.25  # loose at 4k realizations

    def test_needs_reshape_for_ripw(self):
        design = weights_design(10, seed=1)
        with pytest.raises(ValidationError):
            effect_weights(design, "ripw", reps=5, seed=1)


class TestReshapeHelpers:
    def test_midpoint_matches_staggered_midpoint(self):
        from ripw.solver import pick_solution, solve_staggered

        for T in (3, 4, 6):
            direct = midpoint_reshape(T)
            solved = pick_solution(solve_staggered(staggered_support(T)), 0.5)
            np.testing.assert_allclose(direct.probs, solved.probs, atol=1e-12)

    def test_uniform_reshape(self):
        u = uniform_reshape(4)
        np.testing.assert_allclose(u.probs, 0.2)
