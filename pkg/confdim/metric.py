"""
Finite metric spaces, net hierarchies and the regularity diagnostics
(doubling, uniform perfectness, Ahlfors regularity).

Two backends share one interface: an explicit symmetric distance matrix, or a
Euclidean point cloud whose distances are computed on demand with scipy.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Optional, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree
from scipy.spatial.distance import cdist, pdist
from scipy.stats import linregress

from .errors import InvalidInputError, ResolutionError

logger = logging.getLogger(__name__)

# distances within this relative slack of a radius count as equal to it
RELATIVE_TIE = 1e-9
TRIANGLE_TOL = 1e-9
PERFECTNESS_GRID = tuple(round(0.01*i, 2) for i in range(1, 100))
MIN_USABLE_LEVELS = 3


class FiniteMetricSpace:
    """A finite metric space over point indices 0..n-1

    Args:
        matrix (np.ndarray, optional): symmetric distance matrix (matrix backend)
        points (np.ndarray, optional): n x d coordinates (cloud backend)
        labels (Sequence, optional): point identifiers, defaults to the indices
        validate (bool): check the metric axioms of a matrix backend. Defaults to True.
    """

    def __init__(self, matrix: Optional[np.ndarray] = None, points: Optional[np.ndarray] = None,
                 labels: Optional[Sequence[Any]] = None, validate: bool = True):
        if (matrix is None) == (points is None):
            raise InvalidInputError("exactly one of matrix or points must be given")

        if matrix is not None:
            matrix = np.array(matrix, dtype=float)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise InvalidInputError(f"distance matrix must be square, got shape {matrix.shape}")
            matrix.setflags(write=False)
            n = matrix.shape[0]
        else:
            points = np.array(points, dtype=float)
            if points.ndim == 1:
                points = points.reshape(-1, 1)
            if points.ndim != 2:
                raise InvalidInputError(f"point cloud must be a 2-d array, got shape {points.shape}")
            points.setflags(write=False)
            n = points.shape[0]

        self._matrix = matrix
        self._points = points
        self.labels = tuple(labels) if labels is not None else tuple(range(n))
        if len(self.labels) != n:
            raise InvalidInputError(f"{len(self.labels)} labels given for {n} points")

        if matrix is not None and validate:
            self._validate_matrix()

    ### constructors ###

    @classmethod
    def from_points(cls, points, labels: Optional[Sequence[Any]] = None) -> 'FiniteMetricSpace':
        return cls(points=points, labels=labels)

    @classmethod
    def from_matrix(cls, matrix, labels: Optional[Sequence[Any]] = None, validate: bool = True) -> 'FiniteMetricSpace':
        return cls(matrix=matrix, labels=labels, validate=validate)

    @classmethod
    def from_json(cls, doc: dict) -> 'FiniteMetricSpace':
        """Reads {"type":"matrix","labels":[...],"dist":[[...]]} or {"type":"cloud","dim":d,"points":[[...]]}"""
        kind = doc.get('type')
        try:
            if kind == 'matrix':
                return cls(matrix=doc['dist'], labels=doc.get('labels'))
            if kind == 'cloud':
                points = np.array(doc['points'], dtype=float)
                dim = int(doc.get('dim', points.shape[1] if points.ndim == 2 else 1))
                points = points.reshape(-1, dim) if points.size else np.zeros((0, dim))
                return cls(points=points, labels=doc.get('labels'))
        except (KeyError, TypeError, ValueError) as err:
            if isinstance(err, InvalidInputError):
                raise
            raise InvalidInputError(f"malformed metric space document: {err}") from err
        raise InvalidInputError(f"unknown metric space type {kind!r}")

    def to_json(self) -> dict:
        if self.backend == 'matrix':
            return {'type': 'matrix', 'labels': list(self.labels), 'dist': self._matrix.tolist()}
        return {'type': 'cloud', 'dim': self.dim, 'labels': list(self.labels), 'points': self._points.tolist()}

    ### properties ###

    @property
    def n(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return self.n

    @property
    def backend(self) -> str:
        return 'matrix' if self._matrix is not None else 'cloud'

    @property
    def dim(self) -> Optional[int]:
        return None if self._points is None else self._points.shape[1]

    @property
    def points(self) -> Optional[np.ndarray]:
        return self._points

    @cached_property
    def diameter(self) -> float:
        if self.n < 2:
            return 0.0
        if self._matrix is not None:
            return float(self._matrix.max())
        if self.dim == 1:
            return float(np.ptp(self._points[:, 0]))
        return _cloud_diameter(self._points)

    @cached_property
    def min_positive_distance(self) -> float:
        """The smallest nonzero distance, 0 for spaces without two distinct points"""
        if self.n < 2:
            return 0.0
        if self._matrix is not None:
            positive = self._matrix[self._matrix > 0]
            return float(positive.min()) if positive.size else 0.0
        unique = np.unique(self._points, axis=0)
        if len(unique) < 2:
            return 0.0
        dists, _ = cKDTree(unique).query(unique, k=2)
        return float(dists[:, 1].min())

    @property
    def resolution_floor(self) -> float:
        """Twice the minimum positive distance. Radii below it say nothing about the sampled space."""
        return 2.0 * self.min_positive_distance

    ### distances ###

    def dist(self, i: int, j: int) -> float:
        if self._matrix is not None:
            return float(self._matrix[i, j])
        return float(np.linalg.norm(self._points[i] - self._points[j]))

    def row(self, i: int) -> np.ndarray:
        """Distances from point <i> to every point"""
        if self._matrix is not None:
            return self._matrix[i]
        return cdist(self._points[i:i+1], self._points)[0]

    def block(self, rows: Iterable[int], cols: Optional[Iterable[int]] = None) -> np.ndarray:
        """Distance submatrix between the index sets <rows> and <cols> (default: rows)"""
        rows = np.asarray(list(rows) if not isinstance(rows, np.ndarray) else rows, dtype=int)
        cols = rows if cols is None else np.asarray(list(cols) if not isinstance(cols, np.ndarray) else cols, dtype=int)
        if self._matrix is not None:
            return self._matrix[np.ix_(rows, cols)]
        return cdist(self._points[rows], self._points[cols])

    def full_matrix(self) -> np.ndarray:
        if self._matrix is not None:
            return self._matrix
        return self.block(np.arange(self.n))

    ### transformations ###

    def scaled(self, factor: float) -> 'FiniteMetricSpace':
        """The same space with every distance multiplied by <factor>"""
        if factor <= 0:
            raise InvalidInputError(f"scaling factor must be positive, got {factor}")
        if self._matrix is not None:
            return FiniteMetricSpace(matrix=self._matrix * factor, labels=self.labels, validate=False)
        return FiniteMetricSpace(points=self._points * factor, labels=self.labels)

    def subspace(self, indices: Iterable[int]) -> 'FiniteMetricSpace':
        indices = np.asarray(list(indices), dtype=int)
        labels = [self.labels[i] for i in indices]
        if self._matrix is not None:
            return FiniteMetricSpace(matrix=self._matrix[np.ix_(indices, indices)], labels=labels, validate=False)
        return FiniteMetricSpace(points=self._points[indices], labels=labels)

    def _validate_matrix(self) -> None:
        dist = self._matrix
        if not np.all(np.isfinite(dist)):
            raise InvalidInputError("distance matrix has non finite entries")
        if np.any(dist < 0):
            raise InvalidInputError("distance matrix has negative entries")
        if np.any(np.diag(dist) != 0):
            raise InvalidInputError("distance matrix has a nonzero diagonal")
        if not np.array_equal(dist, dist.T):
            raise InvalidInputError("distance matrix is not symmetric")
        slack = TRIANGLE_TOL * (dist.max() if dist.size else 0.0)
        for k in range(dist.shape[0]):
            # d(i,j) <= d(i,k) + d(k,j) for every pair, one pivot at a time
            excess = dist - (dist[:, k:k+1] + dist[k:k+1, :])
            if excess.max() > slack:
                i, j = np.unravel_index(np.argmax(excess), excess.shape)
                raise InvalidInputError(f"triangle inequality fails for ({i}, {k}, {j})")

    def __repr__(self) -> str:
        return f"FiniteMetricSpace(n={self.n}, backend={self.backend})"


def _cloud_diameter(points: np.ndarray, chunk: int = 1024) -> float:
    candidates = points
    if len(points) > chunk:
        try:
            candidates = points[ConvexHull(points).vertices]
        except (QhullError, ValueError):
            candidates = points
    if len(candidates) <= 4 * chunk:
        return float(pdist(candidates).max())
    best = 0.0
    for start in range(0, len(candidates), chunk):
        best = max(best, float(cdist(candidates[start:start+chunk], candidates).max()))
    return best


def covers(distances: np.ndarray, radius: float) -> np.ndarray:
    """Mask of the distances that are not strictly larger than <radius> (ties count as covered)"""
    return distances <= radius * (1 + RELATIVE_TIE)


def greedy_separated(block: np.ndarray, radius: float) -> list[int]:
    """Greedy maximal <radius>-separated subset of a candidate set, scanned in order

    Args:
        block (np.ndarray): square distance matrix of the candidates
        radius (float): separation radius, pairs must be strictly farther apart

    Returns:
        list[int]: positions (into the block) of the chosen points
    """
    covered = np.zeros(block.shape[0], dtype=bool)
    chosen = []
    for i in range(block.shape[0]):
        if covered[i]:
            continue
        chosen.append(i)
        covered |= covers(block[i], radius)
    return chosen


@dataclass(frozen=True)
class NetHierarchy:
    """Per-level maximal separated subsets X_k with radius(k) = base^-k"""
    base: float
    levels: dict[int, np.ndarray]
    resolution_floor: float
    valid: dict[int, bool] = field(default_factory=dict)

    def radius(self, k: int) -> float:
        return self.base ** (-k)

    def net(self, k: int) -> np.ndarray:
        try:
            return self.levels[k]
        except KeyError:
            raise ResolutionError(f"level {k} is not part of the hierarchy (k_max = {self.k_max})") from None

    @property
    def k_max(self) -> int:
        return max(self.levels)

    def is_valid(self, k: int) -> bool:
        return self.valid.get(k, False)

    @property
    def valid_levels(self) -> list[int]:
        return [k for k in sorted(self.levels) if self.valid[k]]

    @property
    def finest_valid_level(self) -> Optional[int]:
        valid = self.valid_levels
        return valid[-1] if valid else None

    def require_valid(self, k: int) -> None:
        """Raises ResolutionError unless level <k> exists and sits above the resolution floor"""
        if k not in self.levels:
            raise ResolutionError(f"level {k} is not part of the hierarchy (k_max = {self.k_max})")
        if not self.valid[k]:
            raise ResolutionError(f"level {k} (radius {self.radius(k):.6g}) is below the "
                                  f"resolution floor {self.resolution_floor:.6g}")


def build_net_hierarchy(space: FiniteMetricSpace, base: float, k_max: int) -> NetHierarchy:
    """Builds the nets X_0..X_kmax by greedy insertion in index order

    Args:
        space (FiniteMetricSpace): the ground space
        base (float): scale factor between levels, > 1
        k_max (int): finest level, >= 0

    Returns:
        NetHierarchy: nets as sorted index arrays, with the levels under the resolution floor flagged
    """
    if space.n == 0:
        raise InvalidInputError("cannot build nets on an empty space")
    if base <= 1:
        raise InvalidInputError(f"base must be > 1, got {base}")
    if k_max < 0:
        raise InvalidInputError(f"k_max must be >= 0, got {k_max}")

    floor = space.resolution_floor
    levels, valid = {}, {}
    for k in range(k_max + 1):
        radius = base ** (-k)
        covered = np.zeros(space.n, dtype=bool)
        chosen = []
        for i in range(space.n):
            if covered[i]:
                continue
            chosen.append(i)
            covered |= covers(space.row(i), radius)
        net = np.array(chosen, dtype=int)
        net.setflags(write=False)
        levels[k] = net
        valid[k] = radius >= floor
        logger.debug("level %d: radius %.6g, %d net points%s", k, radius, len(net),
                     "" if valid[k] else " (below resolution floor)")

    return NetHierarchy(base=float(base), levels=levels, resolution_floor=floor, valid=valid)


def _sample(indices: np.ndarray, max_centers: Optional[int], seed: int) -> np.ndarray:
    if max_centers is None or len(indices) <= max_centers:
        return indices
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(indices, size=max_centers, replace=False))


def estimate_doubling(space: FiniteMetricSpace, hierarchy: NetHierarchy,
                      max_centers: Optional[int] = None, seed: int = 0) -> int:
    """Lower bound on the doubling constant.

    For every level k, every center x of X_k (or a seeded sample of them) and
    rho = radius(k), counts a greedy rho/2-separated subset of the closed ball
    B(x, rho). A greedy subset is not maximum, so the result is a lower bound.
    Levels under the resolution floor are kept: their balls are tiny and only
    contribute small counts to the maximum.
    """
    best = 1
    for k in sorted(hierarchy.levels):
        rho = hierarchy.radius(k)
        for x in _sample(hierarchy.net(k), max_centers, seed):
            ball = np.flatnonzero(covers(space.row(x), rho))
            if len(ball) <= best:
                continue
            best = max(best, len(greedy_separated(space.block(ball), rho / 2)))
    return best


def estimate_uniform_perfectness(space: FiniteMetricSpace, rho_grid: Sequence[float],
                                 centers: Optional[Iterable[int]] = None,
                                 max_centers: Optional[int] = None, seed: int = 0) -> float:
    """Largest a on the grid 0.01..0.99 such that every sampled annulus
    B̄(x,rho) minus B(x,a·rho) holds a point. Returns 0 when a = 0.01 already fails.

    Args:
        space (FiniteMetricSpace): the space
        rho_grid (Sequence[float]): radii to check, expected inside (resolution floor, diameter)
        centers (Iterable[int], optional): centers to check. Defaults to every point.
        max_centers (int, optional): seeded subsample size for the centers
        seed (int): subsampling seed

    Returns:
        float: the grid value a
    """
    rho_grid = sorted(float(rho) for rho in rho_grid)
    if not rho_grid:
        raise InvalidInputError("empty rho grid")
    if rho_grid[0] <= 0:
        raise InvalidInputError("radii must be positive")
    outside = [rho for rho in rho_grid if not space.resolution_floor < rho < space.diameter]
    if outside:
        logger.warning("radii %s lie outside (resolution floor, diameter) = (%.6g, %.6g)",
                       outside, space.resolution_floor, space.diameter)

    if centers is None:
        centers = np.arange(space.n)
    centers = _sample(np.asarray(list(centers), dtype=int), max_centers, seed)

    worst = 1.0
    for x in centers:
        dists = np.sort(space.row(x))
        for rho in rho_grid:
            # farthest point still inside the closed ball
            inside = np.searchsorted(dists, rho * (1 + RELATIVE_TIE), side='right')
            worst = min(worst, dists[inside - 1] / rho)
        if worst == 0:
            break

    best = 0.0
    for a in PERFECTNESS_GRID:
        if a <= worst + RELATIVE_TIE:
            best = a
    return best


def usable_levels(space: FiniteMetricSpace, hierarchy: NetHierarchy) -> list[int]:
    """Levels usable for a measure fit: valid, strictly coarser than the finest
    valid level, and with radius below a quarter of the diameter"""
    finest = hierarchy.finest_valid_level
    if finest is None:
        return []
    return [k for k in hierarchy.valid_levels
            if k < finest and hierarchy.radius(k) < space.diameter / 4]


def fit_ahlfors_regularity(space: FiniteMetricSpace, hierarchy: NetHierarchy,
                           max_centers: Optional[int] = None, seed: int = 0) -> tuple[float, float]:
    """Fits (s, A) with (1/A)·rho^s <= mu(B(x,rho)) <= A·rho^s.

    mu is the counting measure of the finest valid net, normalized to mass 1.
    s is the least squares slope of log mu(B(x, radius(k))) against log radius(k)
    over the usable levels and the net points as centers; A is the smallest
    constant making both inequalities hold on the same pairs.

    Returns:
        tuple[float, float]: (s_est, A_est)
    """
    levels = usable_levels(space, hierarchy)
    if len(levels) < MIN_USABLE_LEVELS:
        raise ResolutionError(f"Ahlfors fit needs {MIN_USABLE_LEVELS} usable levels, found {len(levels)} "
                              f"(valid levels {hierarchy.valid_levels}, diameter {space.diameter:.6g})")

    support = hierarchy.net(hierarchy.finest_valid_level)
    centers = _sample(support, max_centers, seed)
    radii = np.array([hierarchy.radius(k) for k in levels])
    distances = space.block(centers, support)

    log_r, log_mu = [], []
    for row in distances:
        for radius in radii:
            mass = np.count_nonzero(covers(row, radius)) / len(support)
            log_r.append(math.log(radius))
            log_mu.append(math.log(mass))
    log_r, log_mu = np.array(log_r), np.array(log_mu)

    s_est = max(0.0, float(linregress(log_r, log_mu).slope))
    deviation = np.abs(log_mu - s_est * log_r)
    A_est = max(1.0, float(np.exp(deviation.max())))
    logger.info("Ahlfors fit over levels %s: s = %.6g, A = %.6g", levels, s_est, A_est)
    return s_est, A_est


def lemma21_perfectness_bound(A: float, s: float) -> float:
    """A^(-2/s): every a below it is an admissible uniform perfectness constant
    for an (A, s)-Ahlfors regular space"""
    if s <= 0:
        raise InvalidInputError(f"s must be positive, got {s}")
    if A < 1:
        raise InvalidInputError(f"A must be >= 1, got {A}")
    return A ** (-2.0 / s)


def derive_qss_perfectness_constants(L0: float, rho0: float, c0: float, diam: float) -> float:
    """Uniform perfectness constant a0 = c0/(2·L0·diam) of a quasi-selfsimilar space
    whose balls of radius rho0/L0 have diameter at least c0. Values >= 1 are
    clamped just below 1."""
    if L0 < 1:
        raise InvalidInputError(f"L0 must be >= 1, got {L0}")
    if rho0 <= 0 or c0 <= 0:
        raise InvalidInputError(f"rho0 and c0 must be positive, got {rho0}, {c0}")
    if diam < rho0:
        raise InvalidInputError(f"diam must be >= rho0, got {diam} < {rho0}")
    a0 = (c0 / (2 * L0 * rho0)) * rho0 / diam
    if a0 >= 1:
        logger.warning("degenerate constants give a0 = %.6g, clamped below 1", a0)
        a0 = float(np.nextafter(1.0, 0.0))
    return a0


def qss_diameter_constant(a0: float, rho0: float, L0: float) -> float:
    """c0 = a0·rho0/L0, the lower bound on diameters of balls of radius rho0/L0"""
    if not 0 < a0 < 1:
        raise InvalidInputError(f"a0 must lie in (0, 1), got {a0}")
    if rho0 <= 0 or L0 < 1:
        raise InvalidInputError(f"need rho0 > 0 and L0 >= 1, got {rho0}, {L0}")
    return a0 * rho0 / L0


def box_counting_dimension(space: FiniteMetricSpace, hierarchy: NetHierarchy) -> float:
    """Slope of log N(r) against -log r, N(r) being the number of grid boxes of
    side r holding a point, over the usable radii of the hierarchy"""
    if space.backend != 'cloud':
        raise InvalidInputError("box counting needs Euclidean coordinates")
    levels = usable_levels(space, hierarchy)
    if len(levels) < 2:
        raise ResolutionError(f"box counting needs 2 usable levels, found {len(levels)}")
    origin = space.points.min(axis=0)
    log_inv_r, log_n = [], []
    for k in levels:
        radius = hierarchy.radius(k)
        boxes = np.floor((space.points - origin) / radius + RELATIVE_TIE).astype(np.int64)
        log_inv_r.append(-math.log(radius))
        log_n.append(math.log(len(np.unique(boxes, axis=0))))
    return float(np.polyfit(log_inv_r, log_n, 1)[0])


@dataclass(frozen=True)
class RegularityReport:
    doubling_lower_bound: int
    perfectness_constant: float
    ahlfors_exponent: Optional[float]
    ahlfors_constant: Optional[float]
    resolution_floor: float
    rho_grid: tuple[float, ...]

    def to_json(self) -> dict:
        return {
            'doubling_lower_bound': self.doubling_lower_bound,
            'perfectness_constant': self.perfectness_constant,
            'ahlfors_exponent': self.ahlfors_exponent,
            'ahlfors_constant': self.ahlfors_constant,
            'resolution_floor': self.resolution_floor,
            'rho_grid': list(self.rho_grid),
        }


def default_rho_grid(space: FiniteMetricSpace, hierarchy: NetHierarchy) -> list[float]:
    """Hierarchy radii strictly between the resolution floor and the diameter"""
    return [hierarchy.radius(k) for k in sorted(hierarchy.levels)
            if space.resolution_floor < hierarchy.radius(k) < space.diameter]


def regularity_report(space: FiniteMetricSpace, hierarchy: NetHierarchy,
                      rho_grid: Optional[Sequence[float]] = None,
                      max_centers: Optional[int] = None, seed: int = 0) -> RegularityReport:
    """Runs the doubling, uniform perfectness and Ahlfors diagnostics together.
    An Ahlfors fit without enough usable levels is reported as missing, not raised."""
    rho_grid = list(rho_grid) if rho_grid is not None else default_rho_grid(space, hierarchy)
    doubling = estimate_doubling(space, hierarchy, max_centers, seed)
    perfectness = estimate_uniform_perfectness(space, rho_grid, max_centers=max_centers, seed=seed) \
        if rho_grid else 0.0
    if perfectness == 0:
        logger.warning("space does not look uniformly perfect on the rho grid %s", rho_grid)
    try:
        s_est, A_est = fit_ahlfors_regularity(space, hierarchy, max_centers, seed)
    except ResolutionError as err:
        logger.warning("skipping Ahlfors fit: %s", err)
        s_est, A_est = None, None
    return RegularityReport(doubling, perfectness, s_est, A_est, space.resolution_floor, tuple(rho_grid))
