"""
Annulus moduli.

For a net point y of level i the annulus modulus at depth k is the p-modulus,
in the path graph of level i+k, between the net points of the closed ball
B̄(y, L1·base^-i) and those outside the open ball B(y, L2·base^-i). Curves
take the supremum over levels i and centers y for each depth k.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidInputError
from .metric import RELATIVE_TIE, FiniteMetricSpace, NetHierarchy, covers
from .modulus import (DEFAULT_TOL, HEURISTIC_P, AdjacencyRule, ModulusProblem, PathGraph,
                      build_path_graph, solve_modulus)

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 10.0
DEFAULT_L1 = 3.0
DEFAULT_L2 = 4.0

CSV_HEADER = ['k', 'p', 'value', 'i_star', 'y_star', 'truncation', 'lambda', 'L1', 'L2', 'base', 'adjacency_rule']


@dataclass(frozen=True)
class AnnulusSpec:
    center: int
    i: int
    k: int
    L1: float = DEFAULT_L1
    L2: float = DEFAULT_L2
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not 1 <= self.L1 < self.L2:
            raise InvalidInputError(f"need 1 <= L1 < L2, got L1={self.L1}, L2={self.L2}")
        if self.i < 0 or self.k < 0:
            raise InvalidInputError(f"levels must be >= 0, got i={self.i}, k={self.k}")
        if self.lam <= 0:
            raise InvalidInputError(f"lambda must be positive, got {self.lam}")


@dataclass(frozen=True)
class Truncation:
    """Which levels i the supremum runs over: 'full' up to i_max, 'truncated' up to n0"""
    kind: str
    level: int

    def __str__(self) -> str:
        return f"{'Full' if self.kind == 'full' else 'Truncated'}({self.level})"


@dataclass(frozen=True)
class CurveEntry:
    k: int
    value: float
    i_star: Optional[int]
    y_star: Optional[int]


@dataclass
class ModulusCurve:
    p: float
    entries: dict[int, CurveEntry]
    truncation: Truncation
    lam: float
    L1: float
    L2: float
    base: float
    rule: AdjacencyRule
    resolution_floor: float = 0.0
    k0: float = field(default=math.nan)

    @property
    def ks(self) -> list[int]:
        return sorted(self.entries)

    @property
    def values(self) -> list[float]:
        return [self.entries[k].value for k in self.ks]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, k: int) -> float:
        return self.entries[k].value

    def csv_rows(self) -> list[list]:
        return [[k, self.p, entry.value,
                 '' if entry.i_star is None else entry.i_star,
                 '' if entry.y_star is None else entry.y_star,
                 str(self.truncation), self.lam, self.L1, self.L2, self.base, AdjacencyRule(self.rule).value]
                for k, entry in sorted(self.entries.items())]

    def to_json(self) -> dict:
        return {
            'p': self.p,
            'truncation': str(self.truncation),
            'lambda': self.lam, 'L1': self.L1, 'L2': self.L2, 'base': self.base,
            'adjacency_rule': AdjacencyRule(self.rule).value,
            'resolution_floor': self.resolution_floor,
            'k0': self.k0,
            'entries': [{'k': e.k, 'value': e.value, 'i_star': e.i_star, 'y_star': e.y_star}
                        for _, e in sorted(self.entries.items())],
        }

    @classmethod
    def from_values(cls, values: Sequence[float], p: float = 1.0, start: int = 1, **kwargs) -> 'ModulusCurve':
        """Curve with the given values at consecutive depths, no argmax metadata"""
        entries = {start + j: CurveEntry(start + j, float(v), None, None) for j, v in enumerate(values)}
        options = dict(truncation=Truncation('full', 0), lam=DEFAULT_LAMBDA, L1=DEFAULT_L1, L2=DEFAULT_L2,
                       base=10.0, rule=AdjacencyRule.DISTANCE_SURROGATE)
        options.update(kwargs)
        return cls(p=p, entries=entries, **options)


### annuli ###

def annulus_sets(space: FiniteMetricSpace, hierarchy: NetHierarchy, spec: AnnulusSpec) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """E = net points of level i+k in the closed ball B̄(y, L1·base^-i),
    F = net points of level i+k outside the open ball B(y, L2·base^-i)"""
    net = np.sort(hierarchy.net(spec.i + spec.k))
    distances = space.block([spec.center], net)[0]
    radius = hierarchy.radius(spec.i)
    inner = covers(distances, spec.L1 * radius)
    outer = distances >= spec.L2 * radius * (1 - RELATIVE_TIE)
    return tuple(int(v) for v in net[inner]), tuple(int(v) for v in net[outer])


def annulus_modulus(space: FiniteMetricSpace, hierarchy: NetHierarchy, spec: AnnulusSpec, p: float,
                    tol: float = DEFAULT_TOL, rule: AdjacencyRule = AdjacencyRule.DISTANCE_SURROGATE,
                    graph: Optional[PathGraph] = None) -> float:
    """p-modulus of the annulus described by <spec>

    Args:
        space (FiniteMetricSpace): ground space
        hierarchy (NetHierarchy): its nets; level i+k must be above the resolution floor
        spec (AnnulusSpec): center y in X_i, levels i and k, L1, L2, lambda
        p (float): exponent
        tol (float): outer tolerance of the solver
        rule (AdjacencyRule): adjacency rule of the path graph
        graph (PathGraph, optional): prebuilt path graph of level i+k with the same lambda and rule

    Returns:
        float: the modulus, 0 when E or F is empty or no path joins them
    """
    level = spec.i + spec.k
    hierarchy.require_valid(level)
    if spec.center not in set(hierarchy.net(spec.i).tolist()):
        raise InvalidInputError(f"center {spec.center} is not a net point of level {spec.i}")
    E, F = annulus_sets(space, hierarchy, spec)
    if not E or not F:
        return 0.0
    if graph is None:
        graph = build_path_graph(space, hierarchy, level, spec.lam, rule)
    return solve_modulus(ModulusProblem(graph, E, F, p), tol=tol).value


def modulus_at_depth(space: FiniteMetricSpace, hierarchy: NetHierarchy, p: float, k: int,
                     L1: float = DEFAULT_L1, L2: float = DEFAULT_L2, lam: float = DEFAULT_LAMBDA,
                     i_range: Iterable[int] = (0,), tol: float = DEFAULT_TOL,
                     rule: AdjacencyRule = AdjacencyRule.DISTANCE_SURROGATE, threads: int = 1) -> CurveEntry:
    """Supremum of the annulus moduli over i in <i_range> and y in X_i.

    Graphs are built once per level; the (i, y) sweep may run on several threads.
    The maximum is taken in (i, y) order, the first maximizer wins, so the result
    does not depend on scheduling.

    Returns:
        CurveEntry: the value with its maximizing level i* and center y*
    """
    i_range = sorted(set(i_range))
    if not i_range:
        raise InvalidInputError("empty i range")
    for i in i_range:
        hierarchy.require_valid(i + k)

    tasks = []
    for i in i_range:
        for y in np.sort(hierarchy.net(i)):
            spec = AnnulusSpec(int(y), i, k, L1, L2, lam)
            E, F = annulus_sets(space, hierarchy, spec)
            if E and F:
                tasks.append((spec, E, F))

    graphs = {level: build_path_graph(space, hierarchy, level, lam, rule)
              for level in sorted({spec.i + spec.k for spec, _, _ in tasks})}

    def solve(task):
        spec, E, F = task
        return solve_modulus(ModulusProblem(graphs[spec.i + spec.k], E, F, p), tol=tol).value

    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(solve, tasks))
    else:
        values = [solve(task) for task in tasks]

    best = CurveEntry(k, 0.0, None, None)
    for (spec, _, _), value in zip(tasks, values):
        if value > best.value:
            best = CurveEntry(k, value, spec.i, spec.center)
    logger.debug("p=%.6g k=%d: sup over %d annuli = %.12g (i*=%s, y*=%s)",
                 p, k, len(tasks), best.value, best.i_star, best.y_star)
    return best


### scale constants ###

def _smallest_exponent(ratio: float, base: float) -> int:
    """Smallest integer l >= 0 with base^-l <= ratio"""
    if ratio <= 0:
        raise InvalidInputError(f"ratio must be positive, got {ratio}")
    ell = max(0, math.ceil(-math.log(ratio) / math.log(base)))
    while ell > 0 and base ** -(ell - 1) <= ratio * (1 + 1e-12):
        ell -= 1
    while base ** -ell > ratio * (1 + 1e-12):
        ell += 1
    return ell


def compute_scale_constants(L0: float, rho0: float, base: float = 10.0) -> tuple[int, int]:
    """i0 is the smallest integer with 2(L0+5)²·base^-i0 <= rho0; n0 the largest
    integer i with (L0+5)·base^-i >= base^-i0

    Returns:
        tuple[int, int]: (i0, n0)
    """
    if L0 < 1 or rho0 <= 0 or base <= 1:
        raise InvalidInputError(f"need L0 >= 1, rho0 > 0, base > 1, got {L0}, {rho0}, {base}")
    i0 = _smallest_exponent(rho0 / (2 * (L0 + 5) ** 2), base)
    n0 = math.floor(i0 + math.log(L0 + 5) / math.log(base) + 1e-12)
    return i0, n0


def lemma32_shift(L1: float, L2: float, L1p: float, L2p: float, base: float = 10.0) -> int:
    """Depth shift l with base^-l <= (L2 - L1)/(L2' + L1') relating the (L1', L2')
    annulus moduli back to the (L1, L2) ones"""
    if not L1 < L2:
        raise InvalidInputError(f"need L1 < L2, got {L1}, {L2}")
    return _smallest_exponent((L2 - L1) / (L2p + L1p), base)


def lemma33_shift(lam: float, lam_p: float, base: float = 10.0) -> int:
    """Depth shift l with lam'·base^-l <= lam/2 - 1 relating lam' moduli to lam moduli"""
    if lam <= 2:
        raise InvalidInputError(f"lambda must exceed 2, got {lam}")
    return _smallest_exponent((lam / 2 - 1) / lam_p, base)


def lemma33_threshold(L1: float, L2: float, base: float = 10.0) -> float:
    """k0 = log_base(2/(L2 - L1)), the depth past which the lambda comparison holds both ways"""
    if not L1 < L2:
        raise InvalidInputError(f"need L1 < L2, got {L1}, {L2}")
    return math.log(2 / (L2 - L1)) / math.log(base)


### curves ###

def _check_k_range(k_range: Iterable[int]) -> list[int]:
    ks = sorted(set(k_range))
    if not ks:
        raise InvalidInputError("empty k range")
    if ks != list(range(ks[0], ks[-1] + 1)):
        raise InvalidInputError(f"k range must be consecutive, got {ks}")
    return ks


def _curve(space, hierarchy, p, k_range, i_range, truncation, tol, L1, L2, lam, rule, threads) -> ModulusCurve:
    ks = _check_k_range(k_range)
    for k in ks:
        for i in i_range:
            hierarchy.require_valid(i + k)
    if p < HEURISTIC_P:
        logger.warning("p = %.6g < 1: the moduli of this curve are computed heuristically", p)
    entries = {k: modulus_at_depth(space, hierarchy, p, k, L1, L2, lam, i_range, tol, rule, threads)
               for k in ks}
    return ModulusCurve(p=float(p), entries=entries, truncation=truncation, lam=float(lam), L1=float(L1),
                        L2=float(L2), base=hierarchy.base, rule=AdjacencyRule(rule),
                        resolution_floor=hierarchy.resolution_floor,
                        k0=lemma33_threshold(L1, L2, hierarchy.base))


def truncated_modulus_curve(space: FiniteMetricSpace, hierarchy: NetHierarchy, p: float, k_range: Iterable[int],
                            n0: int, tol: float = DEFAULT_TOL, L1: float = DEFAULT_L1, L2: float = DEFAULT_L2,
                            lam: float = DEFAULT_LAMBDA, rule: AdjacencyRule = AdjacencyRule.DISTANCE_SURROGATE,
                            threads: int = 1) -> ModulusCurve:
    """The curve k -> sup over i <= n0 and y in X_i of the annulus moduli"""
    if n0 < 0:
        raise InvalidInputError(f"n0 must be >= 0, got {n0}")
    return _curve(space, hierarchy, p, k_range, range(n0 + 1), Truncation('truncated', n0),
                  tol, L1, L2, lam, rule, threads)


def full_modulus_curve(space: FiniteMetricSpace, hierarchy: NetHierarchy, p: float, k_range: Iterable[int],
                       i_max: int, tol: float = DEFAULT_TOL, L1: float = DEFAULT_L1, L2: float = DEFAULT_L2,
                       lam: float = DEFAULT_LAMBDA, rule: AdjacencyRule = AdjacencyRule.DISTANCE_SURROGATE,
                       threads: int = 1) -> ModulusCurve:
    """The curve k -> sup over i <= i_max (the finite sample's stand-in for all i) and y in X_i"""
    if i_max < 0:
        raise InvalidInputError(f"i_max must be >= 0, got {i_max}")
    return _curve(space, hierarchy, p, k_range, range(i_max + 1), Truncation('full', i_max),
                  tol, L1, L2, lam, rule, threads)


def fit_truncation_constants(full: ModulusCurve, truncated: ModulusCurve,
                             ell_candidates: Iterable[int]) -> tuple[float, Optional[int]]:
    """Smallest C, over the candidate shifts l, with full[k+l] <= C·truncated[k] on every
    depth both curves cover. Reported as data, there is no reference value to compare with.

    Returns:
        tuple[float, int|None]: (C, l), (inf, None) when no candidate works
    """
    best = (math.inf, None)
    for ell in sorted(set(ell_candidates)):
        ratios = []
        for k in truncated.ks:
            if k + ell not in full.entries:
                continue
            top, bottom = full[k + ell], truncated[k]
            if bottom > 0:
                ratios.append(top / bottom)
            elif top > 0:
                ratios.append(math.inf)
        if ratios and max(ratios) < best[0]:
            best = (max(ratios), ell)
    return best
