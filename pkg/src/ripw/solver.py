"""Solvers for the reshaped-design balance condition.

A reshaped distribution over assignment paths makes the weighted two-way
regression estimate the time-weighted average effect exactly when the
residual vector

    h(Pi) = E_{W~Pi}[(diag(W) - xi W') J (W - E_Pi W)]

vanishes.  This module evaluates h exactly, provides closed-form solution
families for two-period, staggered, and transient supports, and a generic
simplex-constrained least-squares solver for everything else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize

from .design import DesignSupport, ReshapedDistribution, transient_support
from .errors import (
    DegenerateSupport,
    EmptyFamily,
    NonUniformWeightsUnsupported,
    NoPositiveSolution,
    SolverDiverged,
    ValidationError,
)
from .panel import TimeWeights

__all__ = [
    "DateResidual",
    "SolutionFamily",
    "SolverConfig",
    "date_residual",
    "effective_xi",
    "pick_solution",
    "solve_date",
    "solve_generic",
    "solve_staggered",
    "solve_transient",
    "solve_two_period",
]


@dataclass(frozen=True)
class DateResidual:
    """Residual vector of the balance condition; its entries always sum to
    zero, so one equation is redundant."""

    h: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.h)))

    @property
    def total(self) -> float:
        return float(self.h.sum())


def date_residual(Pi: ReshapedDistribution, xi: TimeWeights) -> DateResidual:
    """Evaluate the balance-condition residual by exact summation over the
    support (no sampling)."""
    if xi.T != Pi.T:
        raise ValidationError(f"weights have T={xi.T}, distribution has T={Pi.T}")
    A = np.array(Pi.support.paths, dtype=float)  # K x T
    p = Pi.probs
    mu = p @ A
    d = A - mu
    u = d - d.mean(axis=1, keepdims=True)  # J(w - mu) per path
    wu = np.einsum("kt,kt->k", A, u)  # w' J (w - mu)
    h = (p[:, None] * (A * u - wu[:, None] * xi.xi[None, :])).sum(axis=0)
    return DateResidual(h=h)


def effective_xi(Pi: ReshapedDistribution) -> np.ndarray:
    """Time weights whose weighted average effect an unweighted two-way
    regression targets under design ``Pi``.

    May contain negative entries when ``Pi`` does not solve the balance
    condition for any valid weight vector; returned as a plain array for
    that reason.
    """
    A = np.array(Pi.support.paths, dtype=float)
    p = Pi.probs
    mu = p @ A
    d = A - mu
    u = d - d.mean(axis=1, keepdims=True)
    num = (p[:, None] * (A * u)).sum(axis=0)
    den = float((p * np.einsum("kt,kt->k", A, u)).sum())
    if den <= 1e-15:
        raise DegenerateSupport(
            "support carries no path variation after two-way centering"
        )
    return num / den


@dataclass(frozen=True)
class SolutionFamily:
    """Solution set of the balance condition on a fixed support: a single
    point, a one-dimensional segment, or empty.

    Segment endpoints live on the closure of the support simplex; every
    strictly interior mixture is positive on the support.
    """

    kind: str  # "point" | "segment" | "empty"
    support: DesignSupport | None = None
    point: np.ndarray | None = None
    end1: np.ndarray | None = None
    end2: np.ndarray | None = None
    best_objective: float | None = None
    lambda_default: float = 0.5

    @property
    def is_empty(self) -> bool:
        return self.kind == "empty"

    def pick(self, lam: float | None = None) -> ReshapedDistribution:
        return pick_solution(self, lam)


def _point(support: DesignSupport, probs: np.ndarray) -> SolutionFamily:
    probs = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    probs = probs / probs.sum()
    return SolutionFamily(kind="point", support=support, point=probs)


def _segment(support: DesignSupport, end1, end2) -> SolutionFamily:
    e1 = np.clip(np.asarray(end1, dtype=float), 0.0, None)
    e2 = np.clip(np.asarray(end2, dtype=float), 0.0, None)
    return SolutionFamily(
        kind="segment", support=support, end1=e1 / e1.sum(), end2=e2 / e2.sum()
    )


def _empty(support: DesignSupport, best_objective: float | None = None) -> SolutionFamily:
    return SolutionFamily(kind="empty", support=support, best_objective=best_objective)


def pick_solution(family: SolutionFamily, lam: float | None = None) -> ReshapedDistribution:
    """Concrete distribution from a solution family.

    Points ignore ``lam``; segments require ``lam`` strictly inside (0, 1)
    because the endpoints may put zero mass on support paths.
    """
    if family.kind == "empty":
        raise EmptyFamily("the solution set is empty")
    if family.kind == "point":
        return ReshapedDistribution(support=family.support, probs=family.point)
    lam = family.lambda_default if lam is None else float(lam)
    if not 0.0 < lam < 1.0:
        raise EmptyFamily(
            f"lambda must lie strictly inside (0, 1), got {lam}; "
            "segment endpoints may vanish on support paths"
        )
    probs = lam * family.end1 + (1.0 - lam) * family.end2
    return ReshapedDistribution(support=family.support, probs=probs / probs.sum())


# ------------------------------------------------------------- two periods


def _relation_gap(p00, p01, p10, p11, delta):
    """Gap in the scalar equation equivalent to the balance condition at
    T = 2, where ``delta`` is xi_1 - xi_2."""
    d2 = p10 - p01
    return (p11 - p00) * d2 - delta * (d2 * d2 - (p10 + p01))

# For each admissible two-path support, the unique xi_1 - xi_2 under which
# every positive density solves the balance condition.
_TWO_PATH_DELTA = {
    frozenset({(0, 0), (0, 1)}): -1.0,
    frozenset({(1, 0), (1, 1)}): -1.0,
    frozenset({(0, 0), (1, 0)}): 1.0,
    frozenset({(0, 1), (1, 1)}): 1.0,
    frozenset({(0, 1), (1, 0)}): 0.0,
}


def _two_period_gridscan(support_set, delta, steps: int = 400):
    """Feasible solutions of the T=2 relation on a grid, keeping the most
    dispersed one (max-min probability).  Exact: the dependent coordinate is
    solved from the relation, so accepted points satisfy it to round-off."""
    best = None
    best_min = 0.0
    full = len(support_set) == 4
    s_grid = np.linspace(1e-3, 1 - 1e-3, steps)
    for s in s_grid:
        if full:
            d2s = np.linspace(-s + 1e-9, s - 1e-9, steps)
            d2s = d2s[d2s != 0.0]
            d1s = delta * (d2s * d2s - s) / d2s
            p10 = (s + d2s) / 2
            p01 = (s - d2s) / 2
            p11 = (1 - s + d1s) / 2
            p00 = (1 - s - d1s) / 2
        else:
            # one path is off-support; the relation becomes a quadratic in d2
            if (1, 1) not in support_set:
                a, b, c = delta, (1 - s), -delta * s
                p11_fix, p00_fix = 0.0, 1 - s
            else:
                a, b, c = delta, -(1 - s), -delta * s
                p11_fix, p00_fix = 1 - s, 0.0
            disc = b * b - 4 * a * c
            if disc < 0:
                continue
            roots = np.array([(-b + math.sqrt(disc)) / (2 * a), (-b - math.sqrt(disc)) / (2 * a)])
            p10 = (s + roots) / 2
            p01 = (s - roots) / 2
            p11 = np.full_like(roots, p11_fix)
            p00 = np.full_like(roots, p00_fix)
        stacked = np.stack([p00, p01, p10, p11], axis=0)
        on = np.array(
            [
                (0, 0) in support_set,
                (0, 1) in support_set,
                (1, 0) in support_set,
                (1, 1) in support_set,
            ]
        )
        feas = np.all(stacked[on] > 1e-12, axis=0) & np.all(
            np.abs(stacked[~on]) < 1e-12, axis=0
        )
        if not feas.any():
            continue
        mins = np.where(feas, stacked[on].min(axis=0), -np.inf)
        j = int(np.argmax(mins))
        if mins[j] > best_min:
            best_min = float(mins[j])
            best = stacked[:, j]
    return best


def solve_two_period(support: DesignSupport, xi: TimeWeights) -> SolutionFamily:
    """Closed-form solution families at T = 2 via the scalar quadratic
    relation the balance condition reduces to."""
    if support.T != 2 or xi.T != 2:
        raise ValidationError("solve_two_period requires T = 2")
    delta = float(xi.xi[0] - xi.xi[1])
    sset = frozenset(support.paths)
    order = support.index_of()

    def to_vec(by_path: dict) -> np.ndarray:
        vec = np.zeros(support.size)
        for path, value in by_path.items():
            vec[order[path]] = value
        return vec

    if support.size == 2:
        required = _TWO_PATH_DELTA[sset]
        if abs(delta - required) <= 1e-12:
            p1, p2 = support.paths
            return _segment(support, to_vec({p1: 1.0}), to_vec({p2: 1.0}))
        return _empty(support)

    if support.size == 3 and (0, 0) in sset and (1, 1) in sset:
        # monotone (staggered) or reverse-monotone support: the solution set
        # is linear in the total mass s on the constant paths
        if abs(delta) >= 1.0 - 1e-12:
            return _empty(support)
        lo = {(0, 0): 0.0, (1, 1): 0.0}
        hi = {(0, 0): (1 - delta) / 2, (1, 1): (1 + delta) / 2}
        middle = (0, 1) if (0, 1) in sset else (1, 0)
        if middle == (1, 0):
            hi = {(0, 0): (1 + delta) / 2, (1, 1): (1 - delta) / 2}
        lo[middle], hi[middle] = 1.0, 0.0
        return _segment(support, to_vec(hi), to_vec(lo))

    if support.size == 3:
        # supports without both constant paths: solutions have equal mass on
        # the two time-varying paths when xi is balanced
        if abs(delta) <= 1e-12:
            rest = next(iter(sset - {(0, 1), (1, 0)}))
            return _segment(
                support,
                to_vec({rest: 1.0}),
                to_vec({(0, 1): 0.5, (1, 0): 0.5}),
            )
        best = _two_period_gridscan(sset, delta)
        if best is None:
            return _empty(support)
        by_path = dict(zip(((0, 0), (0, 1), (1, 0), (1, 1)), best))
        return _point(support, to_vec({p: by_path[p] for p in sset}))

    # full support
    if abs(delta) <= 1e-12:
        hi = {(0, 0): 0.5, (1, 1): 0.5, (0, 1): 0.0, (1, 0): 0.0}
        lo = {(0, 0): 0.0, (1, 1): 0.0, (0, 1): 0.5, (1, 0): 0.5}
        return _segment(support, to_vec(hi), to_vec(lo))
    best = _two_period_gridscan(sset, delta)
    if best is None:
        return _empty(support)
    by_path = dict(zip(((0, 0), (0, 1), (1, 0), (1, 1)), best))
    return _point(support, to_vec(by_path))


# --------------------------------------------------------------- staggered


def solve_staggered(
    support: DesignSupport, xi: TimeWeights | None = None
) -> SolutionFamily:
    """Solution family for a staggered support under equal time weights.

    The balance condition reduces to a linear system; the set of solutions
    is a one-dimensional segment parameterized by the mass on the earliest
    interior adoption path, or empty when the chain of linear constraints
    admits no strictly positive point.
    """
    T = support.T
    if xi is not None and not xi.is_equal_weights():
        raise NonUniformWeightsUnsupported(
            "staggered closed form covers equal time weights only; "
            "use solve_generic for other weight vectors"
        )
    counts = support.adoption_counts()
    if support.kind != "staggered":
        raise ValidationError("solve_staggered requires a staggered support")
    if 0 not in counts or T not in counts:
        raise ValidationError(
            "staggered supports must include the never- and always-treated paths"
        )
    js = sorted(c for c in counts if 0 < c < T)
    if not js:
        raise ValidationError("staggered support needs at least one interior path")

    # affine representation prob = const + slope * s, s = mass on first
    # interior path
    coeff = {js[0]: (0.0, 1.0)}
    for prev, cur in zip(js, js[1:]):
        c_prev, m_prev = coeff[prev]
        coeff[cur] = ((cur - prev) / T - c_prev, -m_prev)
    c_T = (T - js[-1]) / T - coeff[js[-1]][0]
    m_T = -coeff[js[-1]][1]
    for j in js:
        c_T += j * coeff[j][0] / T
        m_T += j * coeff[j][1] / T
    coeff[T] = (c_T, m_T)
    c0 = 1.0 - sum(coeff[j][0] for j in js) - c_T
    m0 = -sum(coeff[j][1] for j in js) - m_T
    coeff[0] = (c0, m0)

    s_lo, s_hi = -np.inf, np.inf
    for c, m in coeff.values():
        if m > 1e-15:
            s_lo = max(s_lo, -c / m)
        elif m < -1e-15:
            s_hi = min(s_hi, -c / m)
        elif c <= 0:
            return _empty(support)
    if not (s_lo < s_hi - 1e-14):
        return _empty(support)

    def probs_at(s: float) -> np.ndarray:
        return np.array([coeff[sum(p)][0] + coeff[sum(p)][1] * s for p in support.paths])

    return _segment(support, probs_at(s_hi), probs_at(s_lo))


# --------------------------------------------------------------- transient


def solve_transient(
    T: int,
    k: int,
    xi: TimeWeights,
    layer_masses: Sequence[float] | None = None,
) -> SolutionFamily:
    """Solutions on the at-most-k-treated-periods support.

    Equal weights: the distribution that is uniform within each
    treated-count layer solves the balance condition for any positive layer
    masses; masses default to path-uniform and may be overridden.

    General weights (k = 1 only): scan the never-treated mass over a fine
    grid and solve the per-period quadratics through their common scale by
    scalar root-finding; the first strictly positive solution is returned.
    """
    support = transient_support(T, k)
    if xi.T != T:
        raise ValidationError(f"weights have T={xi.T}, expected {T}")

    if xi.is_equal_weights():
        layer_sizes = np.array([math.comb(T, kk) for kk in range(k + 1)], dtype=float)
        if layer_masses is None:
            masses = layer_sizes / layer_sizes.sum()
        else:
            masses = np.asarray(layer_masses, dtype=float)
            if masses.size != k + 1:
                raise ValidationError(
                    f"expected {k + 1} layer masses (treated counts 0..{k}), "
                    f"got {masses.size}"
                )
            if np.any(masses <= 0) or abs(masses.sum() - 1.0) > 1e-12:
                raise ValidationError("layer masses must be positive and sum to 1")
        probs = np.array([masses[sum(p)] / layer_sizes[sum(p)] for p in support.paths])
        return _point(support, probs)

    if k != 1:
        raise NonUniformWeightsUnsupported(
            "non-equal weights are only supported on the single-treated-period "
            "design; use solve_generic for k >= 2"
        )

    xiv = xi.xi
    pos = xiv > 0
    for p0 in np.arange(1e-3, 1.0, 1e-3):
        c = 1.0 - p0 / T
        # periods with zero weight are forced to the large quadratic root
        fixed = np.where(~pos, c, 0.0).sum()
        target = (1.0 - p0) - fixed
        if target <= 0:
            continue
        if not pos.any():
            continue
        bmax = float(np.min(c * c / (4.0 * xiv[pos])))

        def small_roots(b: float) -> np.ndarray:
            disc = np.clip(c * c - 4.0 * xiv[pos] * b, 0.0, None)
            return (c - np.sqrt(disc)) / 2.0

        def gap(b: float) -> float:
            return float(small_roots(b).sum() - target)

        if gap(bmax) < 0:
            continue
        lo, hi = 0.0, bmax
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if gap(mid) < 0:
                lo = mid
            else:
                hi = mid
        b = 0.5 * (lo + hi)
        if b <= 0:
            continue
        eta = np.where(pos, 0.0, c)
        eta[pos] = small_roots(b)
        if np.any(eta <= 0):
            continue
        probs = np.empty(support.size)
        for i, path in enumerate(support.paths):
            if sum(path) == 0:
                probs[i] = p0
            else:
                probs[i] = eta[path.index(1)]
        family = _point(support, probs)
        if date_residual(family.pick(), xi).max_abs <= 1e-10:
            return family
    raise NoPositiveSolution(
        "no strictly positive solution on the single-treated-period support "
        f"for weights {xiv.tolist()}"
    )


# ------------------------------------------------------------ generic NLP


@dataclass(frozen=True)
class SolverConfig:
    """Tuning for the generic simplex-constrained least-squares solver.

    ``support_floor`` is the strict-positivity margin: candidate solutions
    are searched over probabilities at least that large on every support
    path.  This rules out boundary points whose effective support is a
    strict subset; solutions putting less than the floor on some support
    path are treated as out of scope.
    """

    obj_tol: float = 1e-16
    max_restarts: int = 32
    seed: int = 0
    maxiter: int = 1000
    logit_bound: float = 30.0
    support_floor: float = 1e-3


def _generic_matrices(support: DesignSupport, xi: TimeWeights):
    T, K = support.T, support.size
    A = np.array(support.paths, dtype=float).T  # T x K
    J = np.eye(T) - np.full((T, T), 1.0 / T)
    Ms, bs = [], []
    for j in range(T):
        E = np.zeros((T, T))
        E[j, j] = 1.0
        B = J @ (E - xi.xi[j] * np.eye(T)) @ A  # T x K
        Ms.append(A.T @ B)  # K x K
        bs.append(np.diag(A.T @ B).copy())
    return Ms, bs


def solve_generic(
    support: DesignSupport, xi: TimeWeights, config: SolverConfig | None = None
) -> SolutionFamily:
    """Minimize the squared balance-condition residual over the probability
    simplex, reparameterized through a softmax mapped onto the floor-shrunk
    simplex so every iterate keeps at least ``support_floor`` mass on each
    support path.

    Runs a quasi-Newton pass followed by a least-squares polish from the
    uniform start and then random simplex starts; returns a point as soon as
    the objective reaches ``obj_tol``, and an empty family carrying the best
    objective found after all restarts otherwise.
    """
    config = config or SolverConfig()
    if xi.T != support.T:
        raise ValidationError(f"weights have T={xi.T}, support has T={support.T}")
    K = support.size
    eps = config.support_floor
    if not 0.0 <= eps * K < 1.0:
        raise ValidationError(
            f"support floor {eps} is too large for a {K}-path support"
        )
    scale = 1.0 - eps * K
    Ms, bs = _generic_matrices(support, xi)
    sym = [M + M.T for M in Ms]

    def softmax(z: np.ndarray) -> np.ndarray:
        e = np.exp(z - z.max())
        return e / e.sum()

    def probs(z: np.ndarray) -> np.ndarray:
        return eps + scale * softmax(z)

    def residuals(z: np.ndarray) -> np.ndarray:
        p = probs(z)
        return np.array([p @ b - p @ M @ p for M, b in zip(Ms, bs)])

    def objective(z: np.ndarray):
        s = softmax(z)
        p = eps + scale * s
        r = np.array([p @ b - p @ M @ p for M, b in zip(Ms, bs)])
        f = float(r @ r)
        if not np.isfinite(f):
            raise SolverDiverged("balance-condition objective is not finite")
        gp = np.zeros(K)
        for rj, S, b in zip(r, sym, bs):
            gp += 2.0 * rj * (b - S @ p)
        gz = scale * s * (gp - gp @ s)
        return f, gz

    rng = np.random.default_rng(config.seed)
    bound = [(-config.logit_bound, config.logit_bound)] * K
    best_f, best_z = np.inf, None
    for restart in range(config.max_restarts):
        if restart == 0:
            z0 = np.zeros(K)
        else:
            p0 = rng.dirichlet(np.ones(K))
            z0 = np.clip(np.log(np.clip(p0, 1e-12, None)), -config.logit_bound, None)
        res = optimize.minimize(
            objective,
            z0,
            jac=True,
            method="L-BFGS-B",
            bounds=bound,
            options={"maxiter": config.maxiter, "ftol": 1e-18, "gtol": 1e-12},
        )
        z, f = res.x, float(res.fun)
        if f <= 1e-6:  # polish only near-solutions; hopeless starts stay cheap
            lsq = optimize.least_squares(
                residuals,
                z,
                bounds=(-config.logit_bound, config.logit_bound),
                method="trf",
                xtol=1e-15,
                ftol=1e-15,
                gtol=1e-15,
            )
            r = residuals(lsq.x)
            f2 = float(r @ r)
            if np.isfinite(f2) and f2 < f:
                z, f = lsq.x, f2
        if not np.isfinite(f):
            raise SolverDiverged("balance-condition objective is not finite")
        if f < best_f:
            best_f, best_z = f, z
        if best_f <= config.obj_tol:
            return _point(support, probs(best_z))
    return _empty(support, best_objective=best_f)


# ------------------------------------------------------------- dispatcher


def solve_date(
    support: DesignSupport,
    xi: TimeWeights,
    config: SolverConfig | None = None,
) -> SolutionFamily:
    """Route to the closed form matching the support when one applies; fall
    back to the generic solver otherwise."""
    if support.T == 2:
        return solve_two_period(support, xi)
    if support.kind == "staggered" and xi.is_equal_weights():
        counts = support.adoption_counts()
        if 0 in counts and support.T in counts:
            return solve_staggered(support, xi)
    if support.kind == "transient" and support.k is not None:
        if xi.is_equal_weights() or support.k == 1:
            return solve_transient(support.T, support.k, xi)
    return solve_generic(support, xi, config)
