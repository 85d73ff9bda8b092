"""Token-grid bookkeeping: masking, token throwing, dispersion, isolation.

All sampling is pure and call-local: every function that draws random
numbers takes an explicit seed and builds its own generator, so results
are deterministic and thread-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

UNMASKED = 0
MASKED_RETAINED = 1
MASKED_THROWN = 2

BRUTE_FORCE_GUARD = 10**6


class ConstraintError(ValueError):
    """A selection vector violates the retain-count constraint."""


class SizeError(ValueError):
    """Exhaustive search would exceed the combinatorial guard."""


def round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class GridShape:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must be positive, got {self.rows}x{self.cols}")

    @property
    def n_tokens(self):
        return self.rows * self.cols

    def coord(self, index):
        return (index // self.cols, index % self.cols)


@dataclass(frozen=True)
class MaskPlan:
    """Per-token partition into unmasked / masked-retained / masked-thrown."""

    grid: GridShape
    labels: np.ndarray
    rho_e: float
    rho_d: float = 0.0

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if labels.shape != (self.grid.n_tokens,):
            raise ValueError(f"labels length {labels.shape} != N={self.grid.n_tokens}")
        n = self.grid.n_tokens
        n_masked = int(np.count_nonzero(labels != UNMASKED))
        n_thrown = int(np.count_nonzero(labels == MASKED_THROWN))
        if n_masked != round_half_up(n * self.rho_e):
            raise ValueError("masked count inconsistent with rho_e")
        if n_thrown != round_half_up(n * self.rho_d):
            raise ValueError("thrown count inconsistent with rho_d")

    @property
    def n_masked(self):
        return int(np.count_nonzero(self.labels != UNMASKED))

    @property
    def n_thrown(self):
        return int(np.count_nonzero(self.labels == MASKED_THROWN))

    @property
    def unmasked_indices(self):
        return np.flatnonzero(self.labels == UNMASKED)

    @property
    def masked_indices(self):
        return np.flatnonzero(self.labels != UNMASKED)

    @property
    def retained_indices(self):
        return np.flatnonzero(self.labels == MASKED_RETAINED)

    @property
    def thrown_indices(self):
        return np.flatnonzero(self.labels == MASKED_THROWN)


@dataclass(frozen=True)
class DistanceMatrix:
    """Pairwise Euclidean distances between masked-token grid coordinates."""

    dist: np.ndarray
    coords: np.ndarray

    @property
    def n(self):
        return self.dist.shape[0]


def generate_mask(grid, rho_e, rng_seed):
    """Mask round(N * rho_e) tokens uniformly at random; all start RETAINED."""
    if not 0.0 <= rho_e <= 1.0:
        raise ValueError(f"rho_e must be in [0, 1], got {rho_e}")
    n = grid.n_tokens
    n_masked = round_half_up(n * rho_e)
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    masked = rng.choice(n, size=n_masked, replace=False)
    labels = np.full(n, UNMASKED, dtype=np.int64)
    labels[masked] = MASKED_RETAINED
    return MaskPlan(grid=grid, labels=labels, rho_e=rho_e, rho_d=0.0)


def distance_matrix(plan):
    idx = plan.masked_indices
    if idx.size == 0:
        raise ValueError("plan has no masked tokens")
    coords = np.stack([idx // plan.grid.cols, idx % plan.grid.cols], axis=1).astype(np.float64)
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    return DistanceMatrix(dist=dist, coords=coords)


def _check_throw_args(plan, rho_d):
    if rho_d > plan.rho_e:
        raise ValueError(f"rho_d={rho_d} exceeds rho_e={plan.rho_e}")
    if rho_d < 0:
        raise ValueError(f"rho_d must be >= 0, got {rho_d}")
    return round_half_up(plan.grid.n_tokens * rho_d)


def throw_random(plan, rho_d, rng_seed):
    """Relabel round(N * rho_d) uniformly chosen masked tokens as THROWN."""
    n_throw = _check_throw_args(plan, rho_d)
    masked = plan.masked_indices
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    thrown = rng.choice(masked.size, size=n_throw, replace=False)
    labels = plan.labels.copy()
    labels[masked] = MASKED_RETAINED
    labels[masked[thrown]] = MASKED_THROWN
    return replace(plan, labels=labels, rho_d=rho_d)


def throw_furthest(plan, rho_d, rng_seed, first_index=None):
    """Greedy farthest-point retention; everything else is thrown.

    The first retained token is uniform random over the masked set
    (seeded) unless ``first_index`` pins it (position within the masked
    order, used for reproducible unit tests). Each later pick maximizes
    the minimum distance to the already-retained set; ties break to the
    lowest token index.
    """
    n_throw = _check_throw_args(plan, rho_d)
    masked = plan.masked_indices
    n_m = masked.size
    n_retain = n_m - n_throw
    labels = plan.labels.copy()
    labels[masked] = MASKED_THROWN
    if n_retain > 0:
        dmat = distance_matrix(plan)
        if first_index is None:
            rng = np.random.Generator(np.random.PCG64(rng_seed))
            first = int(rng.integers(0, n_m))
        else:
            first = int(first_index)
        selected = [first]
        min_dist = dmat.dist[first].copy()
        min_dist[first] = -1.0
        for _ in range(n_retain - 1):
            pick = int(np.argmax(min_dist))
            selected.append(pick)
            min_dist = np.minimum(min_dist, dmat.dist[pick])
            min_dist[pick] = -1.0
        labels[masked[np.array(selected)]] = MASKED_RETAINED
    return replace(plan, labels=labels, rho_d=rho_d)


def selection_vector(plan):
    """0/1 retained indicator over the masked tokens in ascending index order."""
    return (plan.labels[plan.masked_indices] == MASKED_RETAINED).astype(np.int64)


def dispersion_objective(dmat, s, retain_count=None):
    """Sum of D_ij over ordered retained pairs (each unordered pair twice)."""
    s = np.asarray(s)
    if s.shape != (dmat.n,):
        raise ConstraintError(f"selection length {s.shape} != {dmat.n}")
    if not np.all((s == 0) | (s == 1)):
        raise ConstraintError("selection entries must be 0/1")
    if retain_count is not None and int(s.sum()) != retain_count:
        raise ConstraintError(f"selection retains {int(s.sum())}, expected {retain_count}")
    keep = np.flatnonzero(s == 1)
    return float(dmat.dist[np.ix_(keep, keep)].sum())


def min_pairwise_distance(dmat, s):
    """Smallest retained-pair distance; +inf when fewer than two retained."""
    keep = np.flatnonzero(np.asarray(s) == 1)
    if keep.size < 2:
        return math.inf
    sub = dmat.dist[np.ix_(keep, keep)]
    return float(sub[~np.eye(keep.size, dtype=bool)].min())


def brute_force_select(dmat, retain_count):
    """Exhaustive maximizer of the dispersion objective.

    Ties resolve to the lexicographically smallest retained index set
    (first encountered in combination order wins on strict improvement).
    """
    n_m = dmat.n
    if not 0 <= retain_count <= n_m:
        raise ConstraintError(f"retain_count {retain_count} out of range [0, {n_m}]")
    if math.comb(n_m, retain_count) > BRUTE_FORCE_GUARD:
        raise SizeError(
            f"C({n_m}, {retain_count}) exceeds the {BRUTE_FORCE_GUARD} subset guard"
        )
    best_s = None
    best_obj = -1.0
    for keep in combinations(range(n_m), retain_count):
        idx = np.array(keep, dtype=np.intp)
        obj = float(dmat.dist[np.ix_(idx, idx)].sum())
        if obj > best_obj:
            best_obj = obj
            best_s = idx
    s = np.zeros(n_m, dtype=np.int64)
    s[best_s] = 1
    return s, best_obj


def brute_force_maxmin(dmat, retain_count):
    """Exhaustive maximizer of the minimum retained-pair distance."""
    n_m = dmat.n
    if not 0 <= retain_count <= n_m:
        raise ConstraintError(f"retain_count {retain_count} out of range [0, {n_m}]")
    if math.comb(n_m, retain_count) > BRUTE_FORCE_GUARD:
        raise SizeError(
            f"C({n_m}, {retain_count}) exceeds the {BRUTE_FORCE_GUARD} subset guard"
        )
    off_diag = ~np.eye(retain_count, dtype=bool) if retain_count >= 2 else None
    best_s = None
    best_min = -1.0
    for keep in combinations(range(n_m), retain_count):
        idx = np.array(keep, dtype=np.intp)
        if off_diag is None:
            val = math.inf
        else:
            val = float(dmat.dist[np.ix_(idx, idx)][off_diag].min())
        if val > best_min:
            best_min = val
            best_s = idx
    s = np.zeros(n_m, dtype=np.int64)
    s[best_s] = 1
    return s, best_min


def isolation_rate(plan, window=3):
    """Fraction of thrown tokens with no retained/unmasked token in-window.

    The window excludes its center and is clipped at grid borders; a plan
    with no thrown tokens scores 0.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    thrown = plan.thrown_indices
    if thrown.size == 0:
        return 0.0
    rows, cols = plan.grid.rows, plan.grid.cols
    grid_labels = plan.labels.reshape(rows, cols)
    half = window // 2
    isolated = 0
    for idx in thrown:
        r, c = plan.grid.coord(int(idx))
        r0, r1 = max(0, r - half), min(rows, r + half + 1)
        c0, c1 = max(0, c - half), min(cols, c + half + 1)
        patch = grid_labels[r0:r1, c0:c1].copy()
        patch[r - r0, c - c0] = MASKED_THROWN
        if not np.any(patch != MASKED_THROWN):
            isolated += 1
    return isolated / thrown.size
