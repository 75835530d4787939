"""Generalized-propensity-score estimators: per-unit distributions over
assignment paths, fit from realized paths and covariates.

Three models are provided: a pooled empirical distribution, a
covariate-stratified empirical distribution, and a discrete-time logistic
hazard for staggered adoption (per-period adoption hazards whose
product-limit survival curve is differenced into path probabilities).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .design import AssignmentDistribution, DesignSupport, staggered_path
from .errors import (
    EmptyStratum,
    NonStaggeredSupport,
    PathOutsideSupport,
    SeparationDetected,
    TooManyStrata,
    ValidationError,
)
from .panel import PanelDataset

MAX_STRATA = 32
SEPARATION_BOUND = 30.0
IRLS_MAX_ITER = 100
IRLS_GRAD_TOL = 1e-8


def _check_realized_in_support(panel: PanelDataset, support: DesignSupport):
    allowed = set(support.paths)
    for i, w in enumerate(panel.paths()):
        if w not in allowed:
            raise PathOutsideSupport(
                f"unit {panel.unit_labels[i]!r} realized path {w} outside support"
            )


@dataclass(frozen=True)
class EmpiricalPropensity:
    """Shared empirical path distribution, ignoring covariates."""

    support: DesignSupport
    probs: np.ndarray  # aligned with support.paths

    kind = "empirical"

    def predict(self, panel: PanelDataset) -> AssignmentDistribution:
        return AssignmentDistribution.shared(
            self.support.paths, self.probs, panel.n, support=self.support
        )


def fit_empirical(panel: PanelDataset, support: DesignSupport) -> EmpiricalPropensity:
    """Empirical frequency of each support path across units."""
    _check_realized_in_support(panel, support)
    idx = support.index_of()
    counts = np.zeros(support.size)
    for w in panel.paths():
        counts[idx[w]] += 1
    return EmpiricalPropensity(support=support, probs=counts / panel.n)


@dataclass(frozen=True)
class StratifiedPropensity:
    """Within-stratum empirical path distributions, keyed by the level of a
    time-invariant discrete covariate."""

    support: DesignSupport
    stratum_col: int
    levels: tuple
    level_probs: np.ndarray  # len(levels) x support.size
    singleton_strata: tuple = ()

    kind = "stratified"

    def predict(self, panel: PanelDataset) -> AssignmentDistribution:
        values = _stratum_values(panel, self.stratum_col)
        level_index = {lv: j for j, lv in enumerate(self.levels)}
        probs = np.zeros((panel.n, self.support.size))
        for i, v in enumerate(values):
            j = level_index.get(v)
            if j is None:
                raise EmptyStratum(
                    f"no training units in stratum {v!r} of covariate "
                    f"{self.stratum_col}"
                )
            probs[i] = self.level_probs[j]
        return AssignmentDistribution(
            paths=self.support.paths, probs=probs, support=self.support
        )


def _stratum_values(panel: PanelDataset, col: int) -> list:
    if panel.X is None or not 0 <= col < panel.n_covariates:
        raise ValidationError(f"panel has no covariate column {col}")
    X = panel.X[:, :, col]
    if np.any(X != X[:, [0]]):
        raise ValidationError(
            f"stratifying covariate {col} varies over time; stratified "
            "propensities need a time-invariant covariate"
        )
    return [v for v in X[:, 0]]


def fit_stratified(
    panel: PanelDataset, support: DesignSupport, stratum_col: int
) -> StratifiedPropensity:
    """Empirical path frequencies within each level of a discrete,
    time-invariant covariate."""
    _check_realized_in_support(panel, support)
    values = _stratum_values(panel, stratum_col)
    levels = tuple(sorted(set(values)))
    if len(levels) > MAX_STRATA:
        raise TooManyStrata(
            f"covariate {stratum_col} has {len(levels)} levels, cap is {MAX_STRATA}"
        )
    idx = support.index_of()
    probs = np.zeros((len(levels), support.size))
    singletons = []
    for j, lv in enumerate(levels):
        members = [i for i, v in enumerate(values) if v == lv]
        if len(members) == 1:
            singletons.append(lv)
        for i in members:
            probs[j, idx[tuple(int(b) for b in panel.W[i])]] += 1
        probs[j] /= len(members)
    return StratifiedPropensity(
        support=support,
        stratum_col=stratum_col,
        levels=levels,
        level_probs=probs,
        singleton_strata=tuple(singletons),
    )


# ------------------------------------------------------- discrete hazard


@dataclass(frozen=True)
class DiscreteHazardPropensity:
    """Per-period logistic adoption hazards with covariate effects.

    ``theta`` holds one baseline logit per period; periods where every
    at-risk training unit adopted (or none did) are stored as hazard one
    (or zero) via ``forced`` and bypass the linear predictor.
    """

    support: DesignSupport
    T: int
    covariate_cols: tuple
    theta: np.ndarray  # per-period baseline logits
    beta: np.ndarray  # covariate coefficients
    forced: np.ndarray  # per period: nan = model, else hazard forced to 0/1

    kind = "discrete_hazard"

    def hazards(self, panel: PanelDataset) -> np.ndarray:
        """n x T adoption hazards for the panel's units."""
        h = np.empty((panel.n, self.T))
        for t in range(self.T):
            if not np.isnan(self.forced[t]):
                h[:, t] = self.forced[t]
                continue
            eta = np.full(panel.n, self.theta[t])
            if len(self.covariate_cols):
                if panel.X is None:
                    raise ValidationError("panel lacks hazard covariates")
                eta = eta + panel.X[:, t, list(self.covariate_cols)] @ self.beta
            h[:, t] = 1.0 / (1.0 + np.exp(-eta))
        return h

    def predict(self, panel: PanelDataset) -> AssignmentDistribution:
        h = self.hazards(panel)
        survive = np.cumprod(1.0 - h, axis=1)  # P(not yet adopted through t)
        paths = tuple(staggered_path(self.T, j) for j in range(self.T + 1))
        probs = np.empty((panel.n, self.T + 1))
        probs[:, 0] = survive[:, -1]  # never adopt
        for j in range(1, self.T + 1):
            a = self.T - j  # adoption period, 0-indexed
            prior = survive[:, a - 1] if a >= 1 else 1.0
            probs[:, j] = prior * h[:, a]
        return AssignmentDistribution(paths=paths, probs=probs, support=self.support)


def _adoption_periods(panel: PanelDataset) -> np.ndarray:
    """0-indexed first treated period per unit; T marks never-treated.
    Requires every realized path to be staggered."""
    out = np.full(panel.n, panel.T, dtype=int)
    for i, w in enumerate(panel.paths()):
        if list(w) != sorted(w):
            raise NonStaggeredSupport(
                f"unit {panel.unit_labels[i]!r} path {w} is not staggered"
            )
        ones = sum(w)
        if ones:
            out[i] = panel.T - ones
    return out


def fit_discrete_hazard(
    panel: PanelDataset,
    support: DesignSupport,
    covariate_cols: Sequence[int] = (),
) -> DiscreteHazardPropensity:
    """Maximum-likelihood discrete-time logistic hazard on at-risk
    unit-periods, with saturated per-period baselines.

    Units contribute one row per period they remain unadopted; censored
    (never-treated) units contribute survival terms only.  Periods with
    all-or-none adoption among at-risk units get hazards forced to one or
    zero and are excluded from the likelihood.  Separation in the covariate
    effects is reported rather than returned as a divergent fit.
    """
    if support.kind != "staggered":
        raise NonStaggeredSupport("discrete hazard fitting needs a staggered support")
    T = panel.T
    adopt = _adoption_periods(panel)
    cols = tuple(int(c) for c in covariate_cols)
    if cols and (panel.X is None or max(cols) >= panel.n_covariates):
        raise ValidationError(f"panel lacks hazard covariate columns {cols}")

    at_risk: list[np.ndarray] = []
    events: list[np.ndarray] = []
    for t in range(T):
        risk = adopt >= t
        at_risk.append(np.flatnonzero(risk))
        events.append(np.flatnonzero(risk & (adopt == t)))

    forced = np.full(T, np.nan)
    model_periods = []
    for t in range(T):
        n_risk, n_event = len(at_risk[t]), len(events[t])
        if n_risk == 0 or n_event == 0:
            forced[t] = 0.0
        elif n_event == n_risk:
            forced[t] = 1.0
        else:
            model_periods.append(t)

    theta = np.zeros(T)
    beta = np.zeros(len(cols))
    if model_periods and not cols:
        for t in model_periods:
            hz = len(events[t]) / len(at_risk[t])
            theta[t] = np.log(hz / (1.0 - hz))
    elif model_periods:
        rows_t, rows_i, y = [], [], []
        for t in model_periods:
            for i in at_risk[t]:
                rows_t.append(t)
                rows_i.append(i)
                y.append(1.0 if adopt[i] == t else 0.0)
        y = np.array(y)
        period_pos = {t: j for j, t in enumerate(model_periods)}
        P = np.zeros((len(y), len(model_periods)))
        for r, t in enumerate(rows_t):
            P[r, period_pos[t]] = 1.0
        Xc = panel.X[rows_i][:, :, cols][np.arange(len(rows_i)), rows_t, :]
        design = np.column_stack([P, Xc])
        coef = np.zeros(design.shape[1])
        for _ in range(IRLS_MAX_ITER):
            eta = design @ coef
            p = 1.0 / (1.0 + np.exp(-eta))
            grad = design.T @ (y - p)
            if np.max(np.abs(coef)) > SEPARATION_BOUND:
                raise SeparationDetected(
                    "hazard likelihood is unbounded; a covariate perfectly "
                    "predicts adoption"
                )
            if np.max(np.abs(grad)) <= IRLS_GRAD_TOL:
                break
            wt = np.clip(p * (1.0 - p), 1e-12, None)
            H = design.T @ (design * wt[:, None])
            step, *_ = np.linalg.lstsq(H, grad, rcond=None)
            coef = coef + step
        else:
            if np.max(np.abs(coef)) > SEPARATION_BOUND:
                raise SeparationDetected(
                    "hazard likelihood is unbounded; a covariate perfectly "
                    "predicts adoption"
                )
        for t in model_periods:
            theta[t] = coef[period_pos[t]]
        beta = coef[len(model_periods):]

    return DiscreteHazardPropensity(
        support=support,
        T=T,
        covariate_cols=cols,
        theta=theta,
        beta=beta,
        forced=forced,
    )


PropensityModel = Union[EmpiricalPropensity, StratifiedPropensity, DiscreteHazardPropensity]


def make_propensity_fitter(spec: str, support: DesignSupport):
    """Parse a CLI-style selector into a cross-fitting-compatible fitter.

    ``empirical`` | ``stratified:<col>`` | ``hazard:<col1,col2,...>`` (the
    hazard column list may be empty).
    """
    name, _, arg = spec.partition(":")
    if name == "empirical":
        return lambda train: fit_empirical(train, support).predict
    if name == "stratified":
        col = int(arg)
        return lambda train: fit_stratified(train, support, col).predict
    if name == "hazard":
        cols = tuple(int(c) for c in arg.split(",") if c != "")
        return lambda train: fit_discrete_hazard(train, support, cols).predict
    raise ValidationError(f"unknown propensity selector {spec!r}")
