"""Assignment designs: path supports, generalized propensity scores, reshaped
distributions, and the likelihood-ratio weights they induce.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    AbsoluteContinuityViolated,
    FloorTooLarge,
    InvalidAdoptionSet,
    ValidationError,
    ZeroPropensityRealized,
)
from .panel import AssignmentPath, PanelDataset, validate_path

SUPPORT_KINDS = ("staggered", "transient", "did", "crossover", "general")


def staggered_path(T: int, j: int) -> AssignmentPath:
    """The length-``T`` path with the last ``j`` periods treated."""
    return (0,) * (T - j) + (1,) * j


def is_staggered_path(path: AssignmentPath) -> bool:
    """True when treatment, once on, stays on to the end of the panel."""
    bits = list(path)
    return bits == sorted(bits)


@dataclass(frozen=True)
class DesignSupport:
    """An explicit, ordered set of admissible assignment paths."""

    T: int
    paths: tuple
    kind: str = "general"
    k: int | None = None  # treated-period cap for transient supports

    def __post_init__(self):
        if self.kind not in SUPPORT_KINDS:
            raise ValidationError(f"unknown support kind {self.kind!r}")
        paths = tuple(validate_path(p, self.T) for p in self.paths)
        if len(set(paths)) != len(paths):
            raise ValidationError("support contains duplicate paths")
        if len(paths) < 2:
            raise ValidationError("support must contain at least two paths")
        trivial = {(0,) * self.T, (1,) * self.T}
        if all(p in trivial for p in paths):
            raise ValidationError(
                "support needs at least one path besides all-zeros/all-ones"
            )
        if self.kind == "staggered" and not all(is_staggered_path(p) for p in paths):
            raise ValidationError("staggered supports may only contain 0..01..1 paths")
        object.__setattr__(self, "paths", paths)

    @property
    def size(self) -> int:
        return len(self.paths)

    def __contains__(self, path) -> bool:
        return tuple(path) in set(self.paths)

    def index_of(self) -> dict:
        return {p: i for i, p in enumerate(self.paths)}

    def adoption_counts(self) -> list[int]:
        """Treated-period counts present in a staggered support."""
        return [sum(p) for p in self.paths]


def staggered_support(T: int, adopt_counts: Iterable[int] | None = None) -> DesignSupport:
    """Staggered support containing the never- and always-treated paths plus
    the paths with the requested interior treated-period counts.

    ``adopt_counts`` defaults to the full set {1, .., T-1}.
    """
    if T < 2:
        raise ValidationError(f"staggered supports need T >= 2, got {T}")
    if adopt_counts is None:
        counts = list(range(1, T))
    else:
        counts = [int(j) for j in adopt_counts]
        if len(set(counts)) != len(counts):
            raise InvalidAdoptionSet(f"duplicate adoption counts in {counts}")
        if any(j < 1 or j > T - 1 for j in counts):
            raise InvalidAdoptionSet(
                f"adoption counts must lie in [1, {T - 1}], got {sorted(counts)}"
            )
        counts = sorted(counts)
    paths = [staggered_path(T, 0)] + [staggered_path(T, j) for j in counts]
    paths.append(staggered_path(T, T))
    return DesignSupport(T=T, paths=tuple(paths), kind="staggered")


def transient_support(T: int, k: int) -> DesignSupport:
    """All paths with at most ``k`` treated periods, ordered by treated count
    then lexicographically."""
    if not 1 <= k <= T:
        raise ValidationError(f"transient cap must satisfy 1 <= k <= T, got k={k}")
    from .panel import enumerate_paths

    paths = [p for p in enumerate_paths(T) if sum(p) <= k]
    paths.sort(key=lambda p: (sum(p), p))
    return DesignSupport(T=T, paths=tuple(paths), kind="transient", k=k)


def did_support() -> DesignSupport:
    return DesignSupport(T=2, paths=((0, 0), (0, 1)), kind="did")


def crossover_support() -> DesignSupport:
    return DesignSupport(T=2, paths=((0, 1), (1, 0)), kind="crossover")


def general_support(T: int, paths: Sequence[Sequence[int]]) -> DesignSupport:
    return DesignSupport(T=T, paths=tuple(tuple(p) for p in paths), kind="general")


@dataclass(frozen=True)
class ReshapedDistribution:
    """A single probability map over assignment paths, positive exactly on
    its support."""

    support: DesignSupport
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float).reshape(-1)
        if probs.size != self.support.size:
            raise ValidationError(
                f"got {probs.size} probabilities for {self.support.size} support paths"
            )
        if np.any(probs < 0):
            raise ValidationError(f"probabilities must be nonnegative, got {probs}")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValidationError(f"probabilities must sum to 1, got {probs.sum()!r}")
        probs = probs.copy()
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @property
    def T(self) -> int:
        return self.support.T

    def prob(self, path) -> float:
        path = tuple(path)
        for p, pr in zip(self.support.paths, self.probs):
            if p == path:
                return float(pr)
        return 0.0

    def as_map(self) -> dict:
        return {p: float(pr) for p, pr in zip(self.support.paths, self.probs)}

    @classmethod
    def from_map(
        cls, probs: Mapping[AssignmentPath, float], support: DesignSupport | None = None
    ) -> "ReshapedDistribution":
        items = {tuple(k): float(v) for k, v in probs.items()}
        if support is None:
            T = len(next(iter(items)))
            pos = tuple(sorted(p for p, v in items.items() if v > 0))
            support = DesignSupport(T=T, paths=pos, kind="general")
        vec = np.array([items.get(p, 0.0) for p in support.paths])
        return cls(support=support, probs=vec)


@dataclass(frozen=True)
class AssignmentDistribution:
    """Per-unit generalized propensity scores over a common path list.

    ``probs`` has one row per unit; a distribution shared by all units can be
    built with :meth:`shared`.
    """

    paths: tuple
    probs: np.ndarray
    support: DesignSupport | None = None

    def __post_init__(self):
        paths = tuple(validate_path(p) for p in self.paths)
        T = len(paths[0])
        if any(len(p) != T for p in paths):
            raise ValidationError("all paths must share one length")
        if len(set(paths)) != len(paths):
            raise ValidationError("duplicate paths in assignment distribution")
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim == 1:
            probs = probs[None, :]
        if probs.shape[1] != len(paths):
            raise ValidationError(
                f"probability rows have {probs.shape[1]} entries for {len(paths)} paths"
            )
        if np.any(probs < -1e-15):
            raise ValidationError("propensities must be nonnegative")
        probs = np.clip(probs, 0.0, None)
        sums = probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-10):
            i = int(np.argmax(np.abs(sums - 1.0)))
            raise ValidationError(
                f"unit {i} propensities sum to {sums[i]!r}, expected 1"
            )
        probs = probs.copy()
        probs.flags.writeable = False
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def shared(
        cls,
        paths: Sequence[AssignmentPath],
        probs: Sequence[float],
        n: int,
        support: DesignSupport | None = None,
    ) -> "AssignmentDistribution":
        row = np.asarray(probs, dtype=float).reshape(1, -1)
        return cls(paths=tuple(paths), probs=np.repeat(row, n, axis=0), support=support)

    @property
    def n(self) -> int:
        return int(self.probs.shape[0])

    @property
    def T(self) -> int:
        return len(self.paths[0])

    def index_of(self) -> dict:
        return {p: i for i, p in enumerate(self.paths)}

    def realized_probs(self, realized: Sequence[AssignmentPath]) -> np.ndarray:
        """pi_i(W_i) for each unit's realized path (0 for unlisted paths)."""
        if len(realized) != self.n:
            raise ValidationError(
                f"got {len(realized)} realized paths for {self.n} units"
            )
        idx = self.index_of()
        out = np.zeros(self.n)
        for i, w in enumerate(realized):
            j = idx.get(tuple(w))
            if j is not None:
                out[i] = self.probs[i, j]
        return out

    def min_support_prob(self, support: DesignSupport) -> float:
        """Smallest propensity over support paths and units (overlap check)."""
        idx = self.index_of()
        cols = []
        for p in support.paths:
            j = idx.get(p)
            if j is None:
                return 0.0
            cols.append(j)
        return float(self.probs[:, cols].min())

    def subset(self, indices: Sequence[int]) -> "AssignmentDistribution":
        idx = np.asarray(indices, dtype=int)
        return AssignmentDistribution(
            paths=self.paths, probs=self.probs[idx], support=self.support
        )


def rip_weights(
    pi: AssignmentDistribution,
    Pi: ReshapedDistribution,
    realized: Sequence[AssignmentPath],
) -> np.ndarray:
    """Likelihood-ratio weights Theta_i = Pi(W_i) / pi_i(W_i).

    Requires every realized path to have positive propensity; the reshaped
    distribution may assign zero to a realized path, which zeroes that
    unit's weight.
    """
    realized = [tuple(w) for w in realized]
    pi_real = pi.realized_probs(realized)
    Pi_map = Pi.as_map()
    Pi_real = np.array([Pi_map.get(w, 0.0) for w in realized])
    zero = pi_real <= 0.0
    if np.any(zero):
        i = int(np.argmax(zero))
        if Pi_real[i] > 0:
            raise AbsoluteContinuityViolated(
                f"unit {i} realized path {realized[i]} has zero propensity but "
                f"reshaped mass {Pi_real[i]}"
            )
        raise ZeroPropensityRealized(
            f"unit {i} realized path {realized[i]} has zero propensity"
        )
    return Pi_real / pi_real


def clip_propensities(
    pi: AssignmentDistribution, floor: float, support: DesignSupport | None = None
) -> AssignmentDistribution:
    """Floor support-path propensities at ``floor`` and rescale the remaining
    entries so each unit's distribution still sums to one.

    Floored entries keep the exact floor value; the rescaling is applied to
    the other entries only (iterated until stable), which makes the
    operation idempotent.  Off-support zeros are untouched.
    """
    support = support or pi.support
    if support is not None:
        idx_map = pi.index_of()
        sup_idx = [idx_map[p] for p in support.paths if p in idx_map]
        k = support.size
    else:
        sup_idx = list(range(len(pi.paths)))
        k = len(pi.paths)
    if not 0 < floor < 1.0 / k:
        raise FloorTooLarge(
            f"floor must lie in (0, 1/{k}) for a {k}-path support, got {floor}"
        )
    probs = np.array(pi.probs, dtype=float)
    sup_mask = np.zeros(probs.shape[1], dtype=bool)
    sup_mask[sup_idx] = True
    for row in probs:
        floored = np.zeros_like(sup_mask)
        for _ in range(probs.shape[1] + 1):
            low = sup_mask & ~floored & (row < floor)
            if not low.any():
                break
            floored |= low
            row[floored] = floor
            free = ~floored
            free_mass = row[free].sum()
            target = 1.0 - floor * floored.sum()
            if free_mass <= 0 or target <= 0:
                raise FloorTooLarge(
                    f"floor {floor} leaves no mass for unfloored paths"
                )
            row[free] *= target / free_mass
    return AssignmentDistribution(paths=pi.paths, probs=probs, support=pi.support)


# ------------------------------------------------------------------ JSON I/O


def _parse_prob(value) -> float:
    if isinstance(value, str):
        return float(value)
    return float(value)


def load_design(path) -> tuple[DesignSupport, AssignmentDistribution | None]:
    """Read a design file: support paths plus (optionally) the generalized
    propensity scores.

    Schema::

        {"T": int,
         "support": [[0, 1, ...], ...],
         "pi": {"mode": "shared" | "per_unit",
                "probs": [...] | [[...], ...],
                "paths": [[0, 1, ...], ...]}}   # optional, default: support

    Probabilities may be numbers or decimal strings.  ``pi`` is optional.
    """
    with open(path, "r", encoding="utf-8") as fh:
        blob = json.load(fh)
    T = int(blob["T"])
    paths = [validate_path(p, T) for p in blob["support"]]
    kind = "staggered" if all(is_staggered_path(p) for p in paths) else "general"
    support = DesignSupport(T=T, paths=tuple(paths), kind=kind)
    pi = None
    if blob.get("pi") is not None:
        spec = blob["pi"]
        pi_paths = [validate_path(p, T) for p in spec.get("paths", blob["support"])]
        mode = spec.get("mode", "shared")
        raw = spec["probs"]
        if mode == "shared":
            probs = np.array([[_parse_prob(v) for v in raw]])
        elif mode == "per_unit":
            probs = np.array([[_parse_prob(v) for v in row] for row in raw])
        else:
            raise ValidationError(f"unknown pi mode {mode!r}")
        pi = AssignmentDistribution(paths=tuple(pi_paths), probs=probs, support=support)
    return support, pi


def reshape_to_json(Pi: ReshapedDistribution, extra: Mapping | None = None) -> dict:
    """JSON-serializable payload for a reshaped distribution."""
    payload = {
        "T": Pi.T,
        "paths": [list(p) for p in Pi.support.paths],
        "probs": [float(v) for v in Pi.probs],
    }
    if extra:
        payload.update(extra)
    return payload


def reshape_from_json(blob: Mapping) -> ReshapedDistribution:
    T = int(blob["T"])
    paths = tuple(validate_path(p, T) for p in blob["paths"])
    kind = "staggered" if all(is_staggered_path(p) for p in paths) else "general"
    support = DesignSupport(T=T, paths=paths, kind=kind)
    probs = np.array([_parse_prob(v) for v in blob["probs"]])
    return ReshapedDistribution(support=support, probs=probs)
