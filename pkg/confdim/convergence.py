"""
Sequences of spaces converging to a limit: distances to the limit and the
dimension estimates along the sequence, compared with the estimate of the limit.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from .dimension import CurveConfig, DimensionEstimate, estimate_conformal_dimension
from .errors import InvalidInputError
from .metric import FiniteMetricSpace
from .spaces import SpaceDescriptor, certificate, family_uniformly_certified, generate

logger = logging.getLogger(__name__)

DEFAULT_SLACK = 0.05


def hausdorff_distance(A: FiniteMetricSpace, B: FiniteMetricSpace) -> float:
    """Hausdorff distance between two point clouds of the same Euclidean space"""
    if A.backend != 'cloud' or B.backend != 'cloud':
        raise InvalidInputError("Hausdorff distances need Euclidean coordinates on both sides")
    if A.dim != B.dim:
        raise InvalidInputError(f"ambient dimensions differ: {A.dim} and {B.dim}")
    if A.n == 0 or B.n == 0:
        raise InvalidInputError("Hausdorff distance of an empty set")
    return max(directed_hausdorff(A.points, B.points, seed=0)[0],
               directed_hausdorff(B.points, A.points, seed=0)[0])


@dataclass(frozen=True)
class DistanceProfile:
    """The invariants of a space the GH lower bound compares, read off one distance matrix"""
    diameter: float
    values: np.ndarray  # sorted distinct pair distances, 0 included
    eccentricities: np.ndarray  # sorted

    @classmethod
    def of(cls, space: FiniteMetricSpace) -> 'DistanceProfile':
        if space.n == 0:
            raise InvalidInputError("GH bound of an empty space")
        matrix = space.full_matrix()
        return cls(float(matrix.max()), np.unique(matrix[np.triu_indices(space.n)]), np.sort(matrix.max(axis=1)))


def _line_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    # a and b sorted
    def directed(src, dst):
        slot = np.clip(np.searchsorted(dst, src), 1, len(dst) - 1) if len(dst) > 1 else np.zeros(len(src), int)
        gaps = np.abs(src - dst[slot])
        if len(dst) > 1:
            gaps = np.minimum(gaps, np.abs(src - dst[slot - 1]))
        return float(gaps.max())
    return max(directed(a, b), directed(b, a))


def gh_lower_bounds(A: Union[FiniteMetricSpace, DistanceProfile], B: Union[FiniteMetricSpace, DistanceProfile]) -> float:
    """Lower bound on the Gromov-Hausdorff distance

    A correspondence of distortion 2r matches every distance of A with a distance
    of B up to 2r, and every point's eccentricity likewise. Half the Hausdorff
    distance between the distance value sets, or between the eccentricity sets,
    is therefore at most the GH distance; so is half the diameter difference.
    Either side may be given as a precomputed DistanceProfile.
    """
    A = A if isinstance(A, DistanceProfile) else DistanceProfile.of(A)
    B = B if isinstance(B, DistanceProfile) else DistanceProfile.of(B)
    diameters = abs(A.diameter - B.diameter) / 2
    values = _line_hausdorff(A.values, B.values) / 2
    eccentricity = _line_hausdorff(A.eccentricities, B.eccentricities) / 2
    return max(diameters, values, eccentricity)


### experiments ###

@dataclass(frozen=True)
class ExperimentConfig:
    sequence: tuple[SpaceDescriptor, ...]
    limit: SpaceDescriptor
    curve: CurveConfig = CurveConfig()
    p_lo: float = 0.1
    p_hi: float = 3.0
    p_tol: float = 0.05
    slack: float = DEFAULT_SLACK

    def __post_init__(self):
        if not self.sequence:
            raise InvalidInputError("the sequence of an experiment cannot be empty")

    @classmethod
    def from_json(cls, doc: dict, curve: Optional[CurveConfig] = None) -> 'ExperimentConfig':
        """Reads {"sequence":[descriptor,...],"limit":descriptor,"dimension":{...}}.
        The "dimension" entries p_lo, p_hi, p_tol and slack drive the bisection,
        the others override <curve>."""
        try:
            sequence = tuple(SpaceDescriptor.from_json(d) for d in doc['sequence'])
            limit = SpaceDescriptor.from_json(doc['limit'])
        except (KeyError, TypeError) as err:
            raise InvalidInputError(f"malformed experiment document: {err}") from err
        settings = dict(doc.get('dimension', {}))
        bisection = {key: float(settings.pop(key)) for key in ('p_lo', 'p_hi', 'p_tol', 'slack') if key in settings}
        curve = curve or CurveConfig()
        unknown = set(settings) - set(CurveConfig.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown dimension settings {sorted(unknown)}")
        return cls(sequence, limit, replace(curve, **settings), **bisection)


@dataclass
class ConvergenceExperiment:
    sequence: list[SpaceDescriptor]
    limit: SpaceDescriptor
    distances: list[tuple[Optional[float], float]]
    estimates: list[DimensionEstimate]
    limit_estimate: DimensionEstimate
    verdict: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            'sequence': [d.to_json() for d in self.sequence],
            'limit': self.limit.to_json(),
            'distances': [{'hausdorff': h, 'gh_lower_bound': g} for h, g in self.distances],
            'estimates': [{'name': d.name, 'cd_low': e.cd_low, 'cd_high': e.cd_high, 'cd_point': e.cd_point,
                           'inconclusive': e.inconclusive} for d, e in zip(self.sequence, self.estimates)],
            'limit_estimate': {'name': self.limit.name, 'cd_low': self.limit_estimate.cd_low,
                               'cd_high': self.limit_estimate.cd_high, 'cd_point': self.limit_estimate.cd_point,
                               'inconclusive': self.limit_estimate.inconclusive},
            'verdict': self.verdict,
        }


def semicontinuity_verdict(estimates: list[DimensionEstimate], limit: DimensionEstimate,
                           distances: list[tuple[Optional[float], float]], slack: float,
                           certified: bool) -> dict:
    """Upper semicontinuity signature (limit cd_low + slack >= limsup of the cd_high values,
    the limsup being the max over the tail half), the gaps to the limit and the distance decay"""
    tail = max(1, math.ceil(len(estimates) / 2))
    limsup = max(e.cd_high for e in estimates[-tail:])
    gaps = [limit.cd_point - e.cd_point for e in estimates]
    hausdorff = [h for h, _ in distances if h is not None]
    decreasing = all(b <= a * (1 + 1e-9) for a, b in zip(hausdorff, hausdorff[1:])) if hausdorff else None
    signature = limit.cd_low + slack >= limsup
    if certified and not signature:
        logger.warning("a quasi-selfsimilar family breaks the semicontinuity signature: limit cd_low %.6g, "
                       "limsup %.6g", limit.cd_low, limsup)
    return {'limsup_cd_high': limsup, 'tail_length': tail, 'signature_holds': signature,
            'slack': slack, 'gaps': gaps, 'strict_gap': limit.cd_low - limsup,
            'distances_decreasing': decreasing, 'qss_certified': certified}


def run_semicontinuity_experiment(config: ExperimentConfig) -> ConvergenceExperiment:
    """Estimates the dimension along the sequence and at the limit and measures the
    distances of the sequence to the limit.

    Repeated descriptors are generated and estimated once. Estimates run on
    <config.curve.threads> threads, each one single threaded inside.
    """
    descriptors = list(dict.fromkeys(list(config.sequence) + [config.limit]))
    spaces = {d: generate(d)[0] for d in descriptors}
    inner = replace(config.curve, threads=1) if config.curve.threads > 1 else config.curve

    def estimate(descriptor):
        logger.info("estimating %s", descriptor.name)
        return estimate_conformal_dimension(spaces[descriptor], None, config.p_lo, config.p_hi, config.p_tol, inner)

    if config.curve.threads > 1:
        with ThreadPoolExecutor(max_workers=config.curve.threads) as pool:
            results = dict(zip(descriptors, pool.map(estimate, descriptors)))
    else:
        results = {d: estimate(d) for d in descriptors}

    limit_space = spaces[config.limit]
    limit_profile = DistanceProfile.of(limit_space)
    profiles = {config.limit: limit_profile}
    distances = []
    for descriptor in config.sequence:
        space = spaces[descriptor]
        try:
            hausdorff = hausdorff_distance(space, limit_space)
        except InvalidInputError:
            hausdorff = None
        if descriptor not in profiles:
            profiles[descriptor] = DistanceProfile.of(space)
        distances.append((hausdorff, gh_lower_bounds(profiles[descriptor], limit_profile)))

    certified = family_uniformly_certified(list(config.sequence)) and certificate(config.limit) is not None
    estimates = [results[d] for d in config.sequence]
    verdict = semicontinuity_verdict(estimates, results[config.limit], distances, config.slack, certified)
    return ConvergenceExperiment(list(config.sequence), config.limit, distances, estimates,
                                 results[config.limit], verdict)
