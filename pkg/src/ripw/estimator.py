"""Reshaped-IPW two-way-fixed-effects estimation.

The weighted regression has a closed form in five Gram summaries; the same
summaries drive per-unit influence values, a conservative variance estimate,
and Wald confidence intervals.  An optional outcome adjustment subtracts a
doubly-centered baseline prediction before estimation, and nuisances can be
fit with K-fold cross-fitting.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable, Sequence

import numpy as np

from .design import AssignmentDistribution, ReshapedDistribution, clip_propensities, rip_weights
from .errors import (
    AllWeightsZero,
    DegenerateDenominator,
    TooFewUnits,
    ValidationError,
)
from .panel import PanelDataset, center_doubly, center_rows
from .rng import permutation

SMALL_SAMPLE_N = 10
DEFAULT_OVERLAP_FLOOR = 1e-3

PropensityFitter = Callable[[PanelDataset], Callable[[PanelDataset], AssignmentDistribution]]
OutcomeFitter = Callable[[PanelDataset], Callable[[PanelDataset], np.ndarray]]


@dataclass(frozen=True)
class GramSummary:
    """Weighted moments of the centered panel; everything the closed-form
    estimator and its variance need."""

    gamma_theta: float
    gamma_ww: float
    gamma_wy: float
    gamma_w: np.ndarray
    gamma_y: np.ndarray


@dataclass(frozen=True)
class OutcomeModel:
    """Doubly-centered baseline outcome predictions; centering is re-applied
    on construction since the fit is only identified up to two-way shifts."""

    m_hat: np.ndarray

    def __post_init__(self):
        m = center_doubly(np.asarray(self.m_hat, dtype=float))
        m.flags.writeable = False
        object.__setattr__(self, "m_hat", m)


@dataclass(frozen=True)
class RipwFit:
    """Point estimate, influence values, and Wald interval."""

    n: int
    tau_hat: float
    numerator: float
    denominator: float
    influence: np.ndarray
    sigma_hat: float
    se: float
    alpha: float
    ci_lower: float
    ci_upper: float
    zero_weight_units: int
    small_sample: bool
    folds: tuple | None = None
    clipped_propensities: bool = False

    @property
    def ci(self) -> tuple[float, float]:
        return (self.ci_lower, self.ci_upper)


def _as_m_hat(m_hat, n: int, T: int) -> np.ndarray | None:
    if m_hat is None:
        return None
    if isinstance(m_hat, OutcomeModel):
        m = m_hat.m_hat
    else:
        m = OutcomeModel(m_hat=np.asarray(m_hat, dtype=float)).m_hat
    if m.shape != (n, T):
        raise ValidationError(f"outcome model has shape {m.shape}, expected {(n, T)}")
    return m


def gram_summary(
    panel: PanelDataset, theta: np.ndarray, m_hat=None
) -> GramSummary:
    """Compute the five weighted Gram moments from raw arrays."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != panel.n:
        raise ValidationError(f"got {theta.size} weights for {panel.n} units")
    if np.any(theta < 0):
        raise ValidationError("weights must be nonnegative")
    m = _as_m_hat(m_hat, panel.n, panel.T)
    W = panel.W.astype(float)
    Yt = panel.Y - m if m is not None else panel.Y
    JW = center_rows(W)
    JY = center_rows(Yt)
    return GramSummary(
        gamma_theta=float(theta.mean()),
        gamma_ww=float((theta * np.einsum("it,it->i", W, JW)).mean()),
        gamma_wy=float((theta * np.einsum("it,it->i", W, JY)).mean()),
        gamma_w=(theta[:, None] * JW).mean(axis=0),
        gamma_y=(theta[:, None] * JY).mean(axis=0),
    )


def _point_from_grams(g: GramSummary, theta: np.ndarray) -> tuple[float, float, float]:
    if not np.any(theta > 0):
        raise AllWeightsZero("every unit has zero weight")
    N = g.gamma_wy * g.gamma_theta - float(g.gamma_w @ g.gamma_y)
    D = g.gamma_ww * g.gamma_theta - float(g.gamma_w @ g.gamma_w)
    d_tol = 1e-12 * g.gamma_theta**2
    if D <= d_tol:
        raise DegenerateDenominator(
            f"weighted path dispersion D={D!r} is at or below tolerance {d_tol!r}; "
            "positive-weight units do not carry two or more centered-distinct paths"
        )
    return N, D, N / D


def ripw_point(
    panel: PanelDataset, theta: np.ndarray, m_hat=None
) -> tuple[float, float, float]:
    """Closed-form weighted two-way estimate.

    Returns ``(N, D, tau_hat)`` where ``tau_hat = N / D``; ``D`` is a
    weighted dispersion of centered assignment paths and is nonnegative for
    any input.
    """
    g = gram_summary(panel, theta, m_hat)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    return _point_from_grams(g, theta)


def influence_values(
    panel: PanelDataset,
    theta: np.ndarray,
    m_hat,
    tau_hat: float,
    grams: GramSummary,
) -> np.ndarray:
    """Plug-in per-unit influence values; their mean vanishes identically at
    the fitted point."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    m = _as_m_hat(m_hat, panel.n, panel.T)
    W = panel.W.astype(float)
    Yt = panel.Y - m if m is not None else panel.Y
    JW = center_rows(W)
    JY = center_rows(Yt)
    R = JY - tau_hat * JW
    scalar = grams.gamma_wy - tau_hat * grams.gamma_ww
    lin = JW @ (grams.gamma_y - tau_hat * grams.gamma_w)
    own = grams.gamma_theta * np.einsum("it,it->i", W, R)
    cross = R @ grams.gamma_w
    return theta * (scalar - lin + own - cross)


def _wald(
    influence: np.ndarray, D: float, tau_hat: float, alpha: float, n: int
) -> tuple[float, float, float, float]:
    sigma2 = float(influence.var(ddof=1)) if n > 1 else 0.0
    sigma = np.sqrt(sigma2)
    z = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    se = sigma / (np.sqrt(n) * D)
    return sigma, se, tau_hat - z * se, tau_hat + z * se


def fit_from_weights(
    panel: PanelDataset,
    theta: np.ndarray,
    m_hat=None,
    alpha: float = 0.05,
    folds: tuple | None = None,
    clipped: bool = False,
) -> RipwFit:
    """Full fit from explicit unit weights: point estimate, influence
    values, conservative variance, Wald interval."""
    if not 0.0 < alpha <= 0.5:
        raise ValidationError(f"alpha must lie in (0, 0.5], got {alpha}")
    theta = np.asarray(theta, dtype=float).reshape(-1)
    grams = gram_summary(panel, theta, m_hat)
    N, D, tau = _point_from_grams(grams, theta)
    V = influence_values(panel, theta, m_hat, tau, grams)
    sigma, se, lo, hi = _wald(V, D, tau, alpha, panel.n)
    return RipwFit(
        n=panel.n,
        tau_hat=tau,
        numerator=N,
        denominator=D,
        influence=V,
        sigma_hat=sigma,
        se=se,
        alpha=alpha,
        ci_lower=lo,
        ci_upper=hi,
        zero_weight_units=int(np.sum(theta == 0.0)),
        small_sample=panel.n < SMALL_SAMPLE_N,
        folds=folds,
        clipped_propensities=clipped,
    )


def ripw_infer(
    panel: PanelDataset,
    pi: AssignmentDistribution,
    Pi: ReshapedDistribution,
    m_hat=None,
    alpha: float = 0.05,
) -> RipwFit:
    """Reshaped-IPW inference with known or estimated propensities."""
    theta = rip_weights(pi, Pi, panel.paths())
    return fit_from_weights(panel, theta, m_hat=m_hat, alpha=alpha)


# -------------------------------------------------------- outcome fitters


def zero_outcome_fitter(train: PanelDataset) -> Callable[[PanelDataset], np.ndarray]:
    """Baseline model that predicts zero everywhere."""
    return lambda target: np.zeros((target.n, target.T))


def twfe_covariate_fitter(
    covariate_cols: Sequence[int] | None = None,
) -> OutcomeFitter:
    """Outcome fitter that runs the standard two-way regression of the
    outcome on treatment and covariates, and predicts the covariate part
    ``X beta-hat`` as the baseline.

    Prediction uses covariates only, so it extends to held-out units.
    """

    def fit(train: PanelDataset) -> Callable[[PanelDataset], np.ndarray]:
        if train.X is None or train.n_covariates == 0:
            return lambda target: np.zeros((target.n, target.T))
        cols = list(range(train.n_covariates)) if covariate_cols is None else list(covariate_cols)
        CW = center_doubly(train.W.astype(float)).reshape(-1)
        CX = np.stack([center_doubly(train.X[:, :, c]).reshape(-1) for c in cols], axis=1)
        CY = center_doubly(train.Y).reshape(-1)
        design = np.column_stack([CW, CX])
        coef, *_ = np.linalg.lstsq(design, CY, rcond=None)
        beta = coef[1:]

        def predict(target: PanelDataset) -> np.ndarray:
            if target.X is None:
                raise ValidationError("target panel has no covariates to predict from")
            return np.einsum("itc,c->it", target.X[:, :, cols], beta)

        return predict

    return fit


# ----------------------------------------------------------- cross-fitting


def crossfit_folds(n: int, K: int, seed: int) -> np.ndarray:
    """Deterministic fold labels: shuffle units by a splitmix permutation of
    the seed, then deal round-robin into K near-equal folds."""
    if K < 2:
        raise ValidationError(f"cross-fitting needs K >= 2, got {K}")
    if n < K:
        raise TooFewUnits(f"cannot split {n} units into {K} folds")
    order = permutation(seed, n)
    fold_of = np.empty(n, dtype=int)
    for pos, unit in enumerate(order):
        fold_of[unit] = pos % K
    return fold_of


def crossfit_estimate(
    panel: PanelDataset,
    propensity_fitter: PropensityFitter,
    outcome_fitter: OutcomeFitter,
    Pi: ReshapedDistribution,
    K: int,
    seed: int = 0,
    alpha: float = 0.05,
    overlap_floor: float = DEFAULT_OVERLAP_FLOOR,
) -> RipwFit:
    """K-fold cross-fitted estimation: each unit's propensity and outcome
    nuisances are fit on the complement of its fold, then the assembled
    nuisances feed one final estimation pass.

    Cross-fitted propensities that land below ``overlap_floor`` on a
    realized or support path are floored and renormalized, and the fit is
    flagged.
    """
    fold_of = crossfit_folds(panel.n, K, seed)
    mu_hat = np.zeros((panel.n, panel.T))
    fold_dists: list[tuple[np.ndarray, AssignmentDistribution]] = []
    all_paths: dict = {}
    for k in range(K):
        test_idx = np.flatnonzero(fold_of == k)
        train_idx = np.flatnonzero(fold_of != k)
        train = panel.subset(train_idx)
        test = panel.subset(test_idx)
        pi_k = propensity_fitter(train)(test)
        mu_hat[test_idx] = outcome_fitter(train)(test)
        fold_dists.append((test_idx, pi_k))
        for p in pi_k.paths:
            all_paths.setdefault(p, None)
    for p in Pi.support.paths:
        all_paths.setdefault(p, None)
    paths = tuple(sorted(all_paths))
    col = {p: j for j, p in enumerate(paths)}
    probs = np.zeros((panel.n, len(paths)))
    for test_idx, pi_k in fold_dists:
        for j, p in enumerate(pi_k.paths):
            probs[test_idx, col[p]] = pi_k.probs[:, j]
    pi_hat = AssignmentDistribution(paths=paths, probs=probs, support=Pi.support)

    realized = pi_hat.realized_probs(panel.paths())
    support_cols = [col[p] for p in Pi.support.paths]
    clipped = bool(
        realized.min() < overlap_floor or probs[:, support_cols].min() < overlap_floor
    )
    if clipped:
        pi_hat = clip_propensities(pi_hat, overlap_floor, support=None)

    theta = rip_weights(pi_hat, Pi, panel.paths())
    return fit_from_weights(
        panel,
        theta,
        m_hat=OutcomeModel(m_hat=mu_hat),
        alpha=alpha,
        folds=tuple(int(f) for f in fold_of),
        clipped=clipped,
    )
