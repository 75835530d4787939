"""Acceptance suite: every shipping criterion at its stated tolerance.

Run with ``pytest -s tests/test_acceptance.py`` to see one PASS line per
criterion with its measured margin and runtime.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from conftest import random_panel, wls_dummy_tau
from ripw.design import ReshapedDistribution, staggered_support, transient_support
from ripw.errors import DegenerateDenominator
from ripw.estimator import fit_from_weights, gram_summary, influence_values, ripw_point
from ripw.panel import PanelDataset, TimeWeights, center_doubly
from ripw.simulate import (
    DEFAULT_SEED,
    effect_weights,
    midpoint_reshape,
    run_monte_carlo,
    scenario_from_name,
    weights_design,
)
from ripw.solver import (
    date_residual,
    pick_solution,
    solve_generic,
    solve_staggered,
    solve_transient,
)


def report(num, detail, t0):
    print(f"\n[acceptance {num}] PASS ({time.time() - t0:.1f}s) {detail}")


def test_criterion_1_closed_forms_exact():
    t0 = time.time()
    fam = solve_staggered(staggered_support(3))
    np.testing.assert_allclose(fam.end1, [2 / 9, 1 / 3, 0, 4 / 9], atol=1e-12)
    np.testing.assert_allclose(fam.end2, [4 / 9, 0, 1 / 3, 2 / 9], atol=1e-12)
    mid = pick_solution(fam, 0.5)
    np.testing.assert_allclose(mid.probs, [1 / 3, 1 / 6, 1 / 6, 1 / 3], atol=1e-12)
    worst = 0.0
    for T in range(3, 9):
        probs = np.full(T + 1, 1 / (2 * T))
        probs[0] = probs[-1] = (T + 1) / (4 * T)
        Pi = ReshapedDistribution(support=staggered_support(T), probs=probs)
        worst = max(worst, date_residual(Pi, TimeWeights.equal(T)).max_abs)
    assert worst <= 1e-10
    assert time.time() - t0 < 1.0
    report(1, f"segment endpoints exact; midpoint residuals <= {worst:.1e} for T=3..8", t0)


def test_criterion_2_uniform_is_excluded():
    t0 = time.time()
    Pi = ReshapedDistribution(support=staggered_support(3), probs=np.full(4, 0.25))
    worst = date_residual(Pi, TimeWeights.equal(3)).max_abs
    assert worst > 1e-3
    assert time.time() - t0 < 1.0
    report(2, f"uniform residual {worst:.4f} > 1e-3", t0)


def test_criterion_3_generic_solver():
    t0 = time.time()
    worst = 0.0
    for T in range(3, 7):
        fam = solve_generic(staggered_support(T), TimeWeights.equal(T))
        assert fam.kind == "point"
        worst = max(worst, date_residual(pick_solution(fam), TimeWeights.equal(T)).max_abs)
    for T in range(2, 6):
        fam = solve_generic(transient_support(T, 1), TimeWeights.equal(T))
        assert fam.kind == "point"
        worst = max(worst, date_residual(pick_solution(fam), TimeWeights.equal(T)).max_abs)
    assert worst <= 1e-8
    # blocked adoption chain {1,2,4,5}: the consecutive-gap equations force a
    # negative mass, so all 32 restarts must fail.  The support listing
    # {w0, w1, w2, w4, w5, wT} needs T >= 6 for the chain to be interior.
    fam = solve_generic(staggered_support(6, [1, 2, 4, 5]), TimeWeights.equal(6))
    assert fam.kind == "empty"
    elapsed = time.time() - t0
    assert elapsed < 30.0
    report(3, f"recoveries <= {worst:.1e}; blocked chain empty (best obj {fam.best_objective:.1e})", t0)


def test_criterion_4_oracle_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(404)
    checked = 0
    worst = 0.0
    while checked < 200:
        panel, theta = random_panel(rng)
        try:
            _, _, tau = ripw_point(panel, theta)
        except DegenerateDenominator:
            continue
        oracle = wls_dummy_tau(panel.Y, panel.W, theta)
        rel = abs(tau - oracle) / max(1.0, abs(oracle))
        worst = max(worst, rel)
        checked += 1
    assert worst <= 1e-8
    elapsed = time.time() - t0
    assert elapsed < 20.0
    report(4, f"200 panels, worst relative gap {worst:.2e}", t0)


def test_criterion_5_exact_recovery():
    t0 = time.time()
    rng = np.random.default_rng(505)
    worst = 0.0
    for _ in range(20):
        n, T = int(rng.integers(4, 30)), int(rng.integers(2, 6))
        alpha = rng.normal(size=n)
        gam = rng.normal(size=T)
        W = rng.integers(0, 2, size=(n, T))
        tau = float(rng.normal()) * 3
        panel = PanelDataset(Y=alpha[:, None] + gam[None, :] + tau * W, W=W)
        theta = rng.uniform(0.1, 3.0, size=n)
        try:
            _, _, tau_hat = ripw_point(panel, theta)
        except DegenerateDenominator:
            continue
        worst = max(worst, abs(tau_hat - tau))
    assert worst <= 1e-12
    assert time.time() - t0 < 1.0
    report(5, f"noiseless recovery, worst error {worst:.1e}", t0)


def test_criterion_6_scaled_study():
    t0 = time.time()
    lines = []
    for name in ("pta", "cte-const", "cte-uniform"):
        scn = scenario_from_name(name, n=2000, seed=DEFAULT_SEED)
        rep = run_monte_carlo(scn, 500)
        s = {e: rep.summary(e) for e in rep.estimators}
        z = {e: abs(s[e].mean_bias) / s[e].se_mean for e in s}
        cover = s["ripw"].coverage
        assert z["ripw"] <= 2.0, f"{name}: ripw mean bias at {z['ripw']:.2f} SEs"
        assert z["unweighted"] >= 5.0, f"{name}: unweighted only {z['unweighted']:.2f} SEs"
        if name == "cte-uniform":
            assert z["ipw"] >= 5.0, f"{name}: ipw only {z['ipw']:.2f} SEs"
        else:
            assert z["ipw"] <= 2.0, f"{name}: ipw at {z['ipw']:.2f} SEs"
        assert 0.92 <= cover <= 0.98, f"{name}: ripw coverage {cover:.3f}"
        lines.append(f"{name}: z(ripw)={z['ripw']:.2f} z(ipw)={z['ipw']:.1f} "
                     f"z(unw)={z['unweighted']:.0f} cover={cover:.3f}")
    # full-scale coverage
    covers = []
    for name in ("pta", "cte-const", "cte-uniform"):
        scn = scenario_from_name(name, n=10000, seed=DEFAULT_SEED)
        rep = run_monte_carlo(scn, 1000, estimators=("ripw",))
        cover = rep.summary("ripw").coverage
        assert 0.94 <= cover <= 0.965, f"{name}: full-scale coverage {cover:.3f}"
        covers.append(cover)
    elapsed = time.time() - t0
    assert elapsed < 300.0
    report(6, "; ".join(lines) + f"; full-scale covers {covers}", t0)


def test_criterion_7_effect_weights():
    t0 = time.time()
    design = weights_design(100, seed=DEFAULT_SEED)
    Pi = midpoint_reshape(4)
    ew = effect_weights(design, "ripw", reps=100_000, seed=DEFAULT_SEED, Pi=Pi)
    dev = float(np.max(np.abs(ew.n * ew.T * ew.unconditional - 1.0)))
    assert dev <= 0.05
    ew_u = effect_weights(design, "unweighted", reps=100_000, seed=DEFAULT_SEED)
    assert ew_u.share_with_negative >= 0.99
    elapsed = time.time() - t0
    assert elapsed < 180.0
    report(
        7,
        f"max |(nT)*weight - 1| = {dev:.4f}; negative share {ew_u.share_with_negative:.3f}",
        t0,
    )


def test_criterion_8_property_suites(tmp_path, capsys):
    t0 = time.time()
    rng = np.random.default_rng(808)
    # double-centering idempotence
    for _ in range(50):
        M = rng.normal(size=(int(rng.integers(1, 201)), int(rng.integers(1, 13))))
        once = center_doubly(M)
        assert np.max(np.abs(center_doubly(once) - once)) <= 1e-10
    # residual entries always sum to zero
    from test_solver import random_reshape

    for T in range(2, 7):
        for _ in range(1000):
            Pi = random_reshape(rng, T)
            xi = TimeWeights(rng.dirichlet(np.ones(T)))
            assert abs(date_residual(Pi, xi).total) <= 1e-12
    # denominator nonnegative, influence mean zero, location invariance
    for _ in range(100):
        panel, theta = random_panel(rng)
        g = gram_summary(panel, theta)
        D = g.gamma_ww * g.gamma_theta - float(g.gamma_w @ g.gamma_w)
        assert D >= -1e-12
        try:
            fit = fit_from_weights(panel, theta)
        except DegenerateDenominator:
            continue
        V = influence_values(panel, theta, None, fit.tau_hat, g)
        assert abs(V.mean()) <= 1e-10
        shift = rng.normal() + rng.normal(size=(panel.n, 1)) + rng.normal(size=(1, panel.T))
        fit2 = fit_from_weights(PanelDataset(Y=panel.Y + shift, W=panel.W), theta)
        assert abs(fit.tau_hat - fit2.tau_hat) <= 1e-9
    # CLI determinism: identical bytes for identical config + seed
    import json as _json

    from ripw.cli import main as cli_main

    blob = {
        "T": 3,
        "support": [[0, 0, 0], [0, 0, 1], [0, 1, 1], [1, 1, 1]],
        "pi": {"mode": "shared", "probs": [0.4, 0.2, 0.2, 0.2]},
    }
    design = tmp_path / "design.json"
    design.write_text(_json.dumps(blob), encoding="utf-8")
    outputs = []
    for _ in range(2):
        code = cli_main(["solve-date", "--design", str(design), "--seed", "12"])
        assert code == 0
        outputs.append(capsys.readouterr().out)
    assert outputs[0] == outputs[1]
    report(8, "centering, redundancy, dispersion, influence, invariance, CLI determinism", t0)
