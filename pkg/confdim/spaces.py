"""
Generators for the example families: intervals, squares, circles, the Cantor
family (central gap 1/(2n+1)), the carpet family (central square of a
(2n+1)x(2n+1) subdivision removed), snowflaked spaces and visual boundaries of
regular trees. Each generated space comes with a quasi-selfsimilarity
certificate derived from the similarities of the construction.

Cantor and carpet approximations use endpoint and corner grids, so gaps are
exact at every depth. Coordinates are built on the integer lattice of the
finest scale and divided once, which keeps deduplication exact.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import BudgetError, InvalidInputError
from .metric import FiniteMetricSpace, covers

logger = logging.getLogger(__name__)

POINT_BUDGET = 100_000
KINDS = ('point', 'interval', 'square', 'circle', 'cantor', 'carpet', 'snowflake', 'tree_boundary')


@dataclass(frozen=True)
class SpaceDescriptor:
    kind: str
    depth: int = 0
    n: int = 1
    eps: float = 1.0
    inner: Optional['SpaceDescriptor'] = None
    branching: int = 2
    a: float = 1.0
    length: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown space kind {self.kind!r}, expected one of {KINDS}")
        if self.depth < 0:
            raise InvalidInputError(f"depth must be >= 0, got {self.depth}")
        if self.n < 1:
            raise InvalidInputError(f"n must be >= 1, got {self.n}")
        if not 0 < self.eps <= 1:
            raise InvalidInputError(f"eps must lie in (0, 1], got {self.eps}")
        if self.kind == 'snowflake' and self.inner is None:
            raise InvalidInputError("snowflake descriptors need an inner descriptor")
        if self.kind == 'tree_boundary' and (self.branching < 2 or self.a <= 0):
            raise InvalidInputError(f"tree boundaries need branching >= 2 and a > 0, got {self.branching}, {self.a}")
        if self.length <= 0:
            raise InvalidInputError(f"length must be positive, got {self.length}")

    @classmethod
    def from_json(cls, doc: dict) -> 'SpaceDescriptor':
        """Reads {"kind":"cantor","n":1,"depth":6}, {"kind":"snowflake","eps":0.5,"inner":{...}}, ..."""
        if not isinstance(doc, dict) or 'kind' not in doc:
            raise InvalidInputError(f"a space descriptor needs a 'kind', got {doc!r}")
        fields = dict(doc)
        if fields.get('inner') is not None:
            fields['inner'] = cls.from_json(fields['inner'])
            fields.setdefault('depth', fields['inner'].depth)
        known = {'kind', 'depth', 'n', 'eps', 'inner', 'branching', 'a', 'length'}
        unknown = set(fields) - known
        if unknown:
            raise InvalidInputError(f"unknown descriptor fields {sorted(unknown)}")
        try:
            return cls(**fields)
        except TypeError as err:
            raise InvalidInputError(f"malformed descriptor {doc!r}: {err}") from err

    def to_json(self) -> dict:
        doc = {'kind': self.kind, 'depth': self.depth}
        if self.kind in ('cantor', 'carpet'):
            doc['n'] = self.n
        if self.kind == 'interval' and self.length != 1:
            doc['length'] = self.length
        if self.kind == 'snowflake':
            doc.update(eps=self.eps, inner=self.inner.to_json())
        if self.kind == 'tree_boundary':
            doc.update(branching=self.branching, a=self.a)
        return doc

    @property
    def name(self) -> str:
        if self.kind in ('cantor', 'carpet'):
            return f'{self.kind}{self.n}-d{self.depth}'
        if self.kind == 'snowflake':
            return f'snowflake{self.eps:g}-{self.inner.name}'
        if self.kind == 'tree_boundary':
            return f'tree{self.branching}-d{self.depth}-a{self.a:g}'
        if self.kind == 'interval' and self.length != 1:
            return f'interval{self.length:g}-d{self.depth}'
        return f'{self.kind}-d{self.depth}'


@dataclass(frozen=True)
class QSSCertificate:
    """Constants (L0, rho0) of quasi-selfsimilarity and the diameter lower bound c0
    of balls of radius rho0/L0, with the maps realizing them"""
    L0: float
    rho0: float
    c0: float
    map_family: str
    contraction: float = 1.0

    def to_json(self) -> dict:
        return {'L0': self.L0, 'rho0': self.rho0, 'c0': self.c0,
                'map_family': self.map_family, 'contraction': self.contraction}


### point sets ###

def _cantor_lattice(n: int, depth: int) -> tuple[np.ndarray, int]:
    # left ends of the retained intervals, in units of (2n+1)^-depth
    scale = (2 * n + 1) ** depth
    lefts = np.array([0], dtype=np.int64)
    length = scale
    for _ in range(depth):
        child = length // (2 * n + 1) * n
        lefts = np.concatenate([lefts, lefts + length - child])
        length = child
    return np.sort(lefts), length


def _carpet_lattice(n: int, depth: int) -> tuple[np.ndarray, int]:
    # lower left corners of the retained squares, in units of (2n+1)^-depth
    m = 2 * n + 1
    corners = np.zeros((1, 2), dtype=np.int64)
    side = m ** depth
    offsets = np.array([(i, j) for i in range(m) for j in range(m) if (i, j) != (n, n)], dtype=np.int64)
    for _ in range(depth):
        side //= m
        corners = (corners[:, None, :] + offsets[None, :, :] * side).reshape(-1, 2)
    return corners, side


def _point_count(descriptor: SpaceDescriptor, depth: int) -> int:
    kind = descriptor.kind
    if kind == 'point':
        return 1
    if kind == 'interval':
        return 2 ** depth + 1
    if kind == 'square':
        return (2 ** depth + 1) ** 2
    if kind == 'circle':
        return max(2 ** depth, 1)
    if kind == 'cantor':
        return 2 ** (depth + 1)
    if kind == 'carpet':
        # corners of the retained squares; shared corners make this an upper bound
        return 4 * ((2 * descriptor.n + 1) ** 2 - 1) ** depth
    if kind == 'tree_boundary':
        return descriptor.branching ** depth
    return _point_count(descriptor.inner, depth)


def _check_budget(descriptor: SpaceDescriptor, budget: int) -> None:
    if _point_count(descriptor, descriptor.depth) <= budget:
        return
    depth = next(d for d in range(descriptor.depth + 1) if _point_count(descriptor, d) > budget)
    raise BudgetError(f"{descriptor.name} exceeds the point budget {budget} from depth {depth} on", depth=depth)


def _points(descriptor: SpaceDescriptor) -> np.ndarray:
    kind, depth = descriptor.kind, descriptor.depth
    if kind == 'point':
        return np.zeros((1, 1))
    if kind == 'interval':
        return np.linspace(0, descriptor.length, 2 ** depth + 1).reshape(-1, 1)
    if kind == 'square':
        axis = np.linspace(0, 1, 2 ** depth + 1)
        return np.array([(x, y) for x in axis for y in axis])
    if kind == 'circle':
        angles = 2 * np.pi * np.arange(max(2 ** depth, 1)) / max(2 ** depth, 1)
        return 0.5 * np.column_stack([np.cos(angles), np.sin(angles)])
    if kind == 'cantor':
        lefts, length = _cantor_lattice(descriptor.n, depth)
        ends = np.sort(np.concatenate([lefts, lefts + length]))
        return (ends / (2 * descriptor.n + 1) ** depth).reshape(-1, 1)
    # carpet
    corners, side = _carpet_lattice(descriptor.n, depth)
    shifts = np.array([(0, 0), (side, 0), (0, side), (side, side)], dtype=np.int64)
    lattice = np.unique((corners[:, None, :] + shifts[None, :, :]).reshape(-1, 2), axis=0)
    return lattice / (2 * descriptor.n + 1) ** depth


### certificates ###

def sampling_scale(descriptor: SpaceDescriptor) -> float:
    """Largest gap between the finite sample and the space it approximates"""
    kind, depth = descriptor.kind, descriptor.depth
    if kind == 'interval':
        return descriptor.length * 2.0 ** -depth
    if kind == 'square':
        return 2.0 ** -depth
    if kind == 'circle':
        return math.pi * 0.5 * 2.0 ** -depth
    if kind == 'cantor':
        return (descriptor.n / (2 * descriptor.n + 1)) ** depth
    if kind == 'carpet':
        return math.sqrt(2) * (2 * descriptor.n + 1) ** -depth
    if kind == 'tree_boundary':
        return math.exp(-descriptor.a * depth)
    if kind == 'snowflake':
        return sampling_scale(descriptor.inner) ** descriptor.eps
    return 0.0


def certificate(descriptor: SpaceDescriptor) -> Optional[QSSCertificate]:
    """Quasi-selfsimilarity constants of the generated space, None for a single point.
    L0 is inflated by 1 + 2·(sampling scale)/rho0 to account for the finite sample."""
    kind = descriptor.kind
    if kind == 'point':
        return None
    if kind == 'snowflake':
        inner = certificate(descriptor.inner)
        if inner is None:
            return None
        eps = descriptor.eps
        return QSSCertificate(inner.L0 ** eps, inner.rho0 ** eps, inner.c0 ** eps,
                              f"{inner.map_family}, distances raised to {eps:g}", inner.contraction ** eps)

    if kind == 'interval':
        rho0 = descriptor.length / 2
        L0, c0, family, ratio = 1.0, rho0, "affine rescaling of the ball, translated into the interval", 1.0
    elif kind == 'square':
        rho0 = 0.5
        L0, c0, family, ratio = 1.0, 0.5, "homothety of the disk, translated into the square", 1.0
    elif kind == 'circle':
        rho0 = 0.5
        L0, c0, family, ratio = math.pi / 2, 1 / math.pi, "arc reparametrization scaling angles by rho0/rho", 1.0
    elif kind == 'cantor':
        n = descriptor.n
        ratio = n / (2 * n + 1)
        rho0 = 0.5
        L0 = max(4.0, 2 * n + 1)
        c0 = ratio ** _levels_below(rho0 / L0, ratio)
        family = f"blow-up of the deepest construction interval holding the ball, ratio {n}/{2 * n + 1} per level"
    elif kind == 'carpet':
        m = 2 * descriptor.n + 1
        ratio = 1 / m
        rho0 = 0.5
        L0 = float(m)
        c0 = math.sqrt(2) * ratio ** _levels_below(rho0 / L0 / math.sqrt(2), ratio)
        family = f"blow-up of the level-j subsquare holding the center, ratio 1/{m} per level"
    else:
        ratio = math.exp(-descriptor.a)
        rho0 = 1.0
        L0 = math.exp(descriptor.a)
        c0 = ratio
        family = "blow-up of the subtree whose leaves form the ball"

    L0 *= 1 + 2 * sampling_scale(descriptor) / rho0
    return QSSCertificate(L0=L0, rho0=rho0, c0=c0, map_family=family, contraction=ratio)


def _levels_below(radius: float, ratio: float) -> int:
    """Smallest J with ratio^J <= radius"""
    level = max(0, math.ceil(math.log(radius) / math.log(ratio) - 1e-12))
    while ratio ** level > radius * (1 + 1e-12):
        level += 1
    return level


### operations ###

def generate(descriptor: SpaceDescriptor, budget: int = POINT_BUDGET) -> tuple[FiniteMetricSpace, Optional[QSSCertificate]]:
    """Builds the finite approximation described by <descriptor>

    Args:
        descriptor (SpaceDescriptor): kind, depth and parameters
        budget (int): maximal number of points. Defaults to 100000.

    Returns:
        tuple[FiniteMetricSpace, QSSCertificate|None]: the space (Euclidean backend, matrix
        backend for snowflakes and tree boundaries) and its certificate
    """
    _check_budget(descriptor, budget)
    if descriptor.kind == 'snowflake':
        inner, _ = generate(descriptor.inner, budget)
        space = snowflake(inner, descriptor.eps)
    elif descriptor.kind == 'tree_boundary':
        from .hyperbolic import regular_tree, standard_visual_metric
        tree = regular_tree(descriptor.branching, descriptor.depth)
        space, _ = standard_visual_metric(tree, descriptor.a)
    else:
        space = FiniteMetricSpace.from_points(_points(descriptor))
    logger.info("generated %s: %d points", descriptor.name, space.n)
    return space, certificate(descriptor)


def exact_hausdorff_dimension(descriptor: SpaceDescriptor) -> Optional[float]:
    """Closed form Hausdorff dimension of the limit object, None when unknown"""
    kind = descriptor.kind
    if kind == 'point':
        return 0.0
    if kind in ('interval', 'circle'):
        return 1.0
    if kind == 'square':
        return 2.0
    if kind == 'cantor':
        n = descriptor.n
        return math.log(2) / math.log((2 * n + 1) / n)
    if kind == 'carpet':
        m = 2 * descriptor.n + 1
        return math.log(m ** 2 - 1) / math.log(m)
    if kind == 'snowflake':
        inner = exact_hausdorff_dimension(descriptor.inner)
        return None if inner is None else inner / descriptor.eps
    if kind == 'tree_boundary':
        return math.log(descriptor.branching) / descriptor.a
    return None


def snowflake(space: FiniteMetricSpace, eps: float) -> FiniteMetricSpace:
    """The space with metric d^eps, as a matrix backend"""
    if not 0 < eps <= 1:
        raise InvalidInputError(f"eps must lie in (0, 1], larger powers can break the triangle inequality (got {eps})")
    # d^eps is a metric whenever d is and eps <= 1
    return FiniteMetricSpace.from_matrix(space.full_matrix() ** eps, labels=space.labels, validate=False)


### certificate validation ###

def _cantor_cell(coords: np.ndarray, n: int, depth: int) -> tuple[float, float]:
    """Deepest construction interval [a, a+length] holding every coordinate"""
    ratio = n / (2 * n + 1)
    start, length = 0.0, 1.0
    slack = 1e-12
    for _ in range(depth):
        child = length * ratio
        if coords.max() <= start + child + slack:
            length = child
        elif coords.min() >= start + length - child - slack:
            start, length = start + length - child, child
        else:
            break
    return start, length


def _box_map(center: np.ndarray, ball: np.ndarray, scale: float, lower: float, upper: float) -> np.ndarray:
    # homothety by <scale> around the center, translated per axis to fit [lower, upper]
    image = (ball - center) * scale
    low, high = image.min(axis=0), image.max(axis=0)
    anchor = np.clip(center, lower - low, upper - high)
    return image + anchor


def validate_certificate(space: FiniteMetricSpace, descriptor: SpaceDescriptor, cert: QSSCertificate,
                         trials: int = 100, seed: int = 0) -> dict:
    """Samples balls B(x, rho) with rho <= rho0, applies the certificate's map and
    checks that it distorts the rescaled metric (rho0/rho)·d by a factor within
    [1/L0, L0], and that images land on the space within the sampling scale

    Returns:
        dict: trials, distortion range, distortion_ok, membership violations
    """
    if descriptor.kind not in ('cantor', 'carpet', 'interval', 'square'):
        raise InvalidInputError(f"no explicit map family to validate for {descriptor.kind!r}")
    rng = np.random.default_rng(seed)
    tree = cKDTree(space.points)
    tolerance = sampling_scale(descriptor) + 1e-9
    low_ratio, high_ratio = math.inf, 0.0
    violations = checked = 0
    lower_radius = max(space.resolution_floor, 1e-12)

    for _ in range(trials):
        x = int(rng.integers(space.n))
        rho = float(rng.uniform(lower_radius, cert.rho0))
        members = np.flatnonzero(space.row(x) < rho)
        ball = space.points[members]
        center = space.points[x]

        if descriptor.kind == 'cantor':
            start, length = _cantor_cell(ball[:, 0], descriptor.n, descriptor.depth)
            image = (ball - start) / length
            in_cell = np.ones(len(ball), dtype=bool)
        elif descriptor.kind == 'carpet':
            ratio = cert.contraction
            level = min(descriptor.depth, int(math.floor(math.log(rho / cert.rho0) / math.log(ratio) + 1e-12)))
            side = ratio ** level
            corner = np.minimum(np.floor(center / side + 1e-9), 1 / side - 1) * side
            image = (ball - corner) / side
            in_cell = np.all((ball >= corner - 1e-12) & (ball <= corner + side + 1e-12), axis=1)
        else:
            upper = descriptor.length if descriptor.kind == 'interval' else 1.0
            image = _box_map(center, ball, cert.rho0 / rho, 0.0, upper)
            in_cell = np.ones(len(ball), dtype=bool)

        if len(ball) > 1:
            pairs = rng.integers(len(ball), size=(min(20, len(ball) ** 2), 2))
            pairs = pairs[pairs[:, 0] != pairs[:, 1]]
            if len(pairs):
                before = np.linalg.norm(ball[pairs[:, 0]] - ball[pairs[:, 1]], axis=1) * cert.rho0 / rho
                after = np.linalg.norm(image[pairs[:, 0]] - image[pairs[:, 1]], axis=1)
                ratios = after[before > 0] / before[before > 0]
                if ratios.size:
                    low_ratio = min(low_ratio, float(ratios.min()))
                    high_ratio = max(high_ratio, float(ratios.max()))

        gaps, _ = tree.query(image[in_cell])
        checked += int(in_cell.sum())
        violations += int(np.count_nonzero(gaps > tolerance))

    distortion_ok = high_ratio == 0 or (low_ratio >= 1 / cert.L0 - 1e-9 and high_ratio <= cert.L0 + 1e-9)
    if not distortion_ok or violations:
        logger.warning("certificate of %s: distortion [%.6g, %.6g] vs L0 %.6g, %d misplaced images",
                       descriptor.name, low_ratio, high_ratio, cert.L0, violations)
    return {'trials': trials, 'min_distortion': low_ratio if high_ratio else 1.0,
            'max_distortion': high_ratio if high_ratio else 1.0, 'distortion_ok': distortion_ok,
            'checked_points': checked, 'membership_violations': violations}


def family_uniformly_certified(descriptors: list[SpaceDescriptor]) -> bool:
    """True when every space of the family carries a certificate"""
    return all(certificate(d) is not None for d in descriptors)


def ball(space: FiniteMetricSpace, x: int, rho: float) -> np.ndarray:
    """Indices of the closed ball B̄(x, rho)"""
    return np.flatnonzero(covers(space.row(x), rho))
