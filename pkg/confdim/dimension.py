"""
Conformal dimension as a critical exponent: the smallest p whose annulus
modulus curve decays to zero. Each probe p computes a curve and classifies its
tail; a bisection over p brackets the transition.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import linregress

from .annulus import (DEFAULT_L1, DEFAULT_L2, DEFAULT_LAMBDA, ModulusCurve, compute_scale_constants,
                      full_modulus_curve, truncated_modulus_curve)
from .errors import InvalidInputError, ResolutionError
from .metric import (FiniteMetricSpace, NetHierarchy, build_net_hierarchy, default_rho_grid,
                     estimate_uniform_perfectness)
from .modulus import DEFAULT_TOL, AdjacencyRule
from .spaces import snowflake
from .utils import fmt

logger = logging.getLogger(__name__)

MIN_P = 0.1
WOBBLE = 1.1
PERSIST_FACTOR = 10.0
DEFAULT_RATE_BAND = 0.05
# a slope needs two depths
MIN_TREND_TAIL = 2


class Verdict(str, Enum):
    VANISHES = 'Vanishes'
    PERSISTS = 'Persists'
    INCONCLUSIVE = 'Inconclusive'


class DecayMode(str, Enum):
    ABSOLUTE = 'absolute'
    RELATIVE = 'relative'
    TREND = 'trend'


@dataclass(frozen=True)
class CurveConfig:
    """Numeric settings of the modulus pipeline, serialized into every estimate"""
    base: float = 10.0
    lam: float = DEFAULT_LAMBDA
    L1: float = DEFAULT_L1
    L2: float = DEFAULT_L2
    rule: AdjacencyRule = AdjacencyRule.DISTANCE_SURROGATE
    k_max: Optional[int] = None
    i_max: Optional[int] = None
    use_n0: bool = False
    L0: Optional[float] = None
    rho0: Optional[float] = None
    k_min: int = 1
    k_stop: Optional[int] = None
    tol: float = DEFAULT_TOL
    eps_decay: float = 1e-2
    k_tail: int = 3
    decay_mode: DecayMode = DecayMode.ABSOLUTE
    rate_band: float = DEFAULT_RATE_BAND
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.base <= 1:
            raise InvalidInputError(f"base must be > 1, got {self.base}")
        if self.eps_decay <= 0:
            raise InvalidInputError(f"eps_decay must be positive, got {self.eps_decay}")
        if self.k_tail < 1:
            raise InvalidInputError(f"k_tail must be >= 1, got {self.k_tail}")
        if self.rate_band <= 0:
            raise InvalidInputError(f"rate_band must be positive, got {self.rate_band}")
        if self.threads < 1:
            raise InvalidInputError(f"threads must be >= 1, got {self.threads}")
        if self.use_n0 and (self.L0 is None or self.rho0 is None):
            raise InvalidInputError("n0 mode needs both L0 and rho0")
        object.__setattr__(self, 'rule', AdjacencyRule(self.rule))
        object.__setattr__(self, 'decay_mode', DecayMode(self.decay_mode))
        if self.decay_mode == DecayMode.TREND and self.k_tail < MIN_TREND_TAIL:
            raise InvalidInputError(f"the trend rule needs k_tail >= {MIN_TREND_TAIL}, got {self.k_tail}")

    @classmethod
    def from_json(cls, doc: dict) -> 'CurveConfig':
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"unknown curve settings {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> dict:
        doc = asdict(self)
        # results do not depend on the thread count
        doc.pop('threads')
        doc['rule'] = self.rule.value
        doc['decay_mode'] = self.decay_mode.value
        return doc

    def hierarchy_depth(self, space: FiniteMetricSpace) -> int:
        """k_max, or the deepest level above the resolution floor"""
        if self.k_max is not None:
            return self.k_max
        floor = space.resolution_floor
        if floor <= 0:
            return 0
        return max(0, math.floor(-math.log(floor) / math.log(self.base) + 1e-12))

    def top_level(self, space: FiniteMetricSpace) -> int:
        """Largest level i of the supremum: n0, i_max, or the first level where the
        outer ball stops covering the whole space"""
        if self.use_n0:
            return compute_scale_constants(self.L0, self.rho0, self.base)[1]
        if self.i_max is not None:
            return self.i_max
        if space.diameter <= 0:
            return 0
        return max(0, math.floor(math.log(self.L2 / space.diameter) / math.log(self.base) + 1e-12) + 1)


@dataclass
class DimensionEstimate:
    cd_low: float
    cd_high: float
    curves: dict[float, ModulusCurve]
    verdicts: dict[float, Verdict]
    decay_threshold: float
    config: dict
    inconclusive: bool = False
    degenerate: bool = False
    low_witness: Optional[float] = None
    high_witness: Optional[float] = None
    undecided: list[float] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def cd_point(self) -> float:
        return (self.cd_low + self.cd_high) / 2

    def to_json(self) -> dict:
        return {
            'cd_low': self.cd_low,
            'cd_high': self.cd_high,
            'cd_point': self.cd_point,
            'decay_threshold': self.decay_threshold,
            'inconclusive': self.inconclusive,
            'degenerate': self.degenerate,
            'low_witness': self.low_witness,
            'high_witness': self.high_witness,
            'undecided': list(self.undecided),
            'verdicts': {fmt(p): v.value for p, v in sorted(self.verdicts.items())},
            'curves': {fmt(p): c.to_json() for p, c in sorted(self.curves.items())},
            'config': self.config,
            'notes': list(self.notes),
        }


### decay rule ###

def decay_rate(values: Sequence[float], base: float) -> float:
    """Least squares slope of log_base(value) against the depth, nan when a value is 0.
    A curve behaving like base^(r·k) has rate r."""
    values = np.asarray(values, dtype=float)
    if len(values) < MIN_TREND_TAIL:
        raise InvalidInputError(f"a decay rate needs {MIN_TREND_TAIL} values, got {len(values)}")
    if np.any(values <= 0):
        return math.nan
    return float(linregress(np.arange(len(values)), np.log(values)).slope / math.log(base))


def classify_decay(curve: ModulusCurve, eps_decay: float = 1e-2, k_tail: int = 3,
                   mode: DecayMode = DecayMode.ABSOLUTE, rate_band: float = DEFAULT_RATE_BAND) -> Verdict:
    """Vanishes when the last <k_tail> values dip under <eps_decay> while never
    growing by more than 10% from one depth to the next, Persists when they all
    stay above 10·eps_decay, Inconclusive otherwise.

    In relative mode the curve is first divided by its first nonzero value.
    Trend mode divides the same way and keeps the Vanishes test; a tail that
    fails it is decided by its decay rate instead of its level: Persists
    above -rate_band, Vanishes under -2·rate_band, Inconclusive in between or
    when the tail holds a zero.
    """
    mode = DecayMode(mode)
    values = np.array(curve.values, dtype=float)
    if len(values) < k_tail:
        raise InvalidInputError(f"curve has {len(values)} entries, the decay rule needs k_tail = {k_tail}")
    if mode != DecayMode.ABSOLUTE:
        nonzero = values[values > 0]
        if nonzero.size:
            values = values / nonzero[0]

    tail = values[-k_tail:]
    lowest = tail.min()
    steady = all(later <= WOBBLE * earlier for earlier, later in zip(tail[:-1], tail[1:]))
    if lowest < eps_decay and steady:
        return Verdict.VANISHES
    if mode == DecayMode.TREND:
        rate = decay_rate(tail, curve.base)
        if rate > -rate_band:
            return Verdict.PERSISTS
        if rate < -2 * rate_band:
            return Verdict.VANISHES
        return Verdict.INCONCLUSIVE
    if lowest > PERSIST_FACTOR * eps_decay:
        return Verdict.PERSISTS
    return Verdict.INCONCLUSIVE


### bisection ###

Probe = Callable[[float], tuple[Verdict, ModulusCurve]]


@dataclass
class Bracket:
    low: float
    high: float
    probes: dict[float, tuple[Verdict, ModulusCurve]]
    inconclusive: bool = False
    degenerate: bool = False
    low_witness: Optional[float] = None
    high_witness: Optional[float] = None
    # exponents tried inside the bracket without a decisive verdict
    undecided: list[float] = field(default_factory=list)


def _check_monotone(probes: dict) -> None:
    vanished = None
    for p in sorted(probes):
        verdict = probes[p][0]
        if verdict == Verdict.VANISHES and vanished is None:
            vanished = p
        elif verdict == Verdict.PERSISTS and vanished is not None:
            logger.warning("verdicts are not monotone in p: Vanishes at %.6g but Persists at %.6g", vanished, p)
            return


def bisect_critical_exponent(probe: Probe, p_lo: float, p_hi: float, p_tol: float) -> Bracket:
    """Brackets the transition from Persists to Vanishes

    Args:
        probe (Callable): p -> (verdict, curve)
        p_lo (float): lower end of the search window
        p_hi (float): upper end of the search window
        p_tol (float): target bracket width

    Returns:
        Bracket: [low, high] with the probed curves; the low end carries a Persists
        witness and the high end a Vanishes witness whenever those exist. An
        Inconclusive midpoint stops the search: the bracket stays at the last
        Persists and Vanishes exponents and the midpoint is kept as undecided.
    """
    if not p_hi > p_lo:
        raise InvalidInputError(f"need p_hi > p_lo, got {p_lo}, {p_hi}")
    if p_tol <= 0:
        raise InvalidInputError(f"p_tol must be positive, got {p_tol}")

    probes = {}

    def run(p):
        probes[p] = probe(p)
        logger.info("p = %.6g: %s", p, probes[p][0].value)
        return probes[p][0]

    first, last = run(p_lo), run(p_hi)
    if first == last and first != Verdict.INCONCLUSIVE:
        edge = p_lo if first == Verdict.VANISHES else p_hi
        logger.warning("both ends of [%.6g, %.6g] classify as %s, the dimension lies outside the window",
                       p_lo, p_hi, first.value)
        bracket = Bracket(edge, edge, probes, degenerate=True)
        if first == Verdict.VANISHES:
            bracket.high_witness = p_lo
        else:
            bracket.low_witness = p_hi
        return bracket
    if first == Verdict.VANISHES and last == Verdict.PERSISTS:
        logger.warning("Vanishes at p_lo but Persists at p_hi, reporting the whole window")
        return Bracket(p_lo, p_hi, probes, inconclusive=True)

    bracket = Bracket(p_lo, p_hi, probes)
    bracket.low_witness = p_lo if first == Verdict.PERSISTS else None
    bracket.high_witness = p_hi if last == Verdict.VANISHES else None
    if Verdict.INCONCLUSIVE in (first, last):
        bracket.inconclusive = True
        bracket.undecided = [p for p, verdict in ((p_lo, first), (p_hi, last)) if verdict == Verdict.INCONCLUSIVE]
        _check_monotone(probes)
        return bracket

    while bracket.high - bracket.low > p_tol:
        middle = (bracket.low + bracket.high) / 2
        verdict = run(middle)
        if verdict == Verdict.PERSISTS:
            bracket.low, bracket.low_witness = middle, middle
        elif verdict == Verdict.VANISHES:
            bracket.high, bracket.high_witness = middle, middle
        else:
            logger.warning("p = %.6g is inconclusive, keeping [%.6g, %.6g]", middle, bracket.low, bracket.high)
            bracket.inconclusive = True
            bracket.undecided.append(middle)
            break
    _check_monotone(probes)
    return bracket


def grid_critical_exponent(probe: Probe, grid: Sequence[float]) -> Bracket:
    """Probes every p of <grid>; low is the largest Persists value under the first
    Vanishes value, high that first Vanishes value"""
    grid = sorted(set(float(p) for p in grid))
    if not grid:
        raise InvalidInputError("empty p grid")
    probes = {p: probe(p) for p in grid}
    _check_monotone(probes)
    vanishing = [p for p in grid if probes[p][0] == Verdict.VANISHES]
    high = vanishing[0] if vanishing else grid[-1]
    persisting = [p for p in grid if p <= high and probes[p][0] == Verdict.PERSISTS]
    low = persisting[-1] if persisting else grid[0]
    bracket = Bracket(low, high, probes,
                      low_witness=persisting[-1] if persisting else None,
                      high_witness=vanishing[0] if vanishing else None)
    between = [p for p in grid if low < p < high]
    bracket.undecided = [p for p in between if probes[p][0] == Verdict.INCONCLUSIVE]
    bracket.inconclusive = bool(between) or bracket.low_witness is None or bracket.high_witness is None
    bracket.degenerate = not persisting or not vanishing
    if bracket.degenerate:
        logger.warning("grid %s does not straddle the dimension", grid)
    return bracket


### estimation ###

def _check_hypotheses(space: FiniteMetricSpace, hierarchy: NetHierarchy, config: CurveConfig) -> list[str]:
    notes = []
    grid = default_rho_grid(space, hierarchy)
    if grid and estimate_uniform_perfectness(space, grid, max_centers=50, seed=config.seed) == 0:
        notes.append("space does not look uniformly perfect")
    if hierarchy.finest_valid_level is None:
        notes.append("no level lies above the resolution floor")
    for note in notes:
        logger.warning(note)
    return notes


def curve_levels(space: FiniteMetricSpace, hierarchy: NetHierarchy, config: CurveConfig) -> tuple[int, list[int]]:
    """(top level of the supremum, depths k) for which every annulus graph is resolved"""
    top = config.top_level(space)
    finest = hierarchy.finest_valid_level
    if finest is None:
        raise ResolutionError("no level of the hierarchy lies above the resolution floor")
    k_stop = finest - top if config.k_stop is None else config.k_stop
    ks = list(range(config.k_min, k_stop + 1))
    needed = MIN_TREND_TAIL if config.decay_mode == DecayMode.TREND else 1
    if len(ks) < needed:
        raise ResolutionError(f"depths {config.k_min}..{k_stop} for levels i <= {top} give fewer than "
                              f"{needed} curve entries (finest valid level {finest})")
    return top, ks


def tail_length(ks: Sequence[int], config: CurveConfig) -> int:
    """k_tail, shortened to the resolved depths"""
    return min(config.k_tail, len(ks))


def make_probe(space: FiniteMetricSpace, hierarchy: NetHierarchy, config: CurveConfig) -> Probe:
    """p -> (verdict, curve) for the configured curve, memoized on p"""
    top, ks = curve_levels(space, hierarchy, config)
    k_tail = tail_length(ks, config)
    if k_tail < config.k_tail:
        logger.warning("only depths %s are resolved, the decay rule reads the last %d values instead of "
                       "k_tail = %d", ks, k_tail, config.k_tail)
    cache = {}

    def probe(p: float) -> tuple[Verdict, ModulusCurve]:
        if p not in cache:
            options = dict(tol=config.tol, L1=config.L1, L2=config.L2, lam=config.lam,
                           rule=config.rule, threads=config.threads)
            if config.use_n0:
                curve = truncated_modulus_curve(space, hierarchy, p, ks, top, **options)
            else:
                curve = full_modulus_curve(space, hierarchy, p, ks, top, **options)
            verdict = classify_decay(curve, config.eps_decay, k_tail, config.decay_mode, config.rate_band)
            cache[p] = (verdict, curve)
        return cache[p]

    return probe


def estimate_conformal_dimension(space: FiniteMetricSpace, hierarchy: Optional[NetHierarchy] = None,
                                 p_lo: float = MIN_P, p_hi: float = 3.0, p_tol: float = 0.05,
                                 config: CurveConfig = CurveConfig(),
                                 grid: Optional[Sequence[float]] = None) -> DimensionEstimate:
    """Brackets the conformal dimension of <space> between a Persists and a Vanishes exponent

    Args:
        space (FiniteMetricSpace): the space
        hierarchy (NetHierarchy, optional): its nets. Built from the config when omitted.
        p_lo (float): lower end of the window, >= 0.1. Defaults to 0.1.
        p_hi (float): upper end of the window. Defaults to 3.
        p_tol (float): bracket width at which bisection stops. Defaults to 0.05.
        config (CurveConfig): curve settings
        grid (Sequence[float], optional): probe these exponents instead of bisecting

    Returns:
        DimensionEstimate: bracket, verdicts and every probed curve
    """
    if p_lo < MIN_P:
        raise InvalidInputError(f"p_lo must be >= {MIN_P}, got {p_lo}")
    if grid is not None and min(grid) < MIN_P:
        raise InvalidInputError(f"grid exponents must be >= {MIN_P}")
    if space.n < 2:
        logger.warning("a single point has conformal dimension 0, nothing to probe")
        return DimensionEstimate(0.0, 0.0, {}, {}, config.eps_decay, config.to_json(), degenerate=True,
                                 notes=["single point space"])
    if hierarchy is None:
        hierarchy = build_net_hierarchy(space, config.base, config.hierarchy_depth(space))
    elif hierarchy.base != config.base:
        raise InvalidInputError(f"hierarchy base {hierarchy.base} differs from the configured base {config.base}")

    notes = _check_hypotheses(space, hierarchy, config)
    probe = make_probe(space, hierarchy, config)
    _, ks = curve_levels(space, hierarchy, config)
    k_tail = tail_length(ks, config)
    if k_tail < config.k_tail:
        notes.append(f"k_tail shortened to {k_tail}: only depths {ks[0]}..{ks[-1]} are resolved")
    if grid is not None:
        bracket = grid_critical_exponent(probe, grid)
    else:
        bracket = bisect_critical_exponent(probe, p_lo, p_hi, p_tol)
    if bracket.degenerate:
        notes.append("degenerate bracket: the dimension lies outside the search window")
    if bracket.inconclusive:
        undecided = ', '.join(fmt(p) for p in bracket.undecided) or 'none'
        notes.append(f"an inconclusive verdict stopped the bracket from shrinking (undecided p: {undecided})")

    snapshot = config.to_json()
    snapshot.update(p_lo=p_lo, p_hi=p_hi, p_tol=p_tol, grid=None if grid is None else sorted(grid),
                    hierarchy_k_max=hierarchy.k_max)
    estimate = DimensionEstimate(
        cd_low=bracket.low, cd_high=bracket.high,
        curves={p: curve for p, (_, curve) in bracket.probes.items()},
        verdicts={p: verdict for p, (verdict, _) in bracket.probes.items()},
        decay_threshold=config.eps_decay, config=snapshot,
        inconclusive=bracket.inconclusive, degenerate=bracket.degenerate,
        low_witness=bracket.low_witness, high_witness=bracket.high_witness,
        undecided=list(bracket.undecided), notes=notes)
    logger.info("conformal dimension in [%.6g, %.6g]", estimate.cd_low, estimate.cd_high)
    return estimate


### diagnostics ###

@dataclass(frozen=True)
class SubmultiplicativityReport:
    C: float
    ell: Optional[int]
    lower_bound: float
    skipped: int

    def to_json(self) -> dict:
        return asdict(self)


def submultiplicativity_diagnostic(curve: ModulusCurve, ell_candidates: Sequence[int]) -> SubmultiplicativityReport:
    """Smallest C with a[k+h] <= C·a[k-l]·a[h] over the pairs the curve covers, minimized
    over the candidate shifts l. A persisting curve stays above 1/C.
    Pairs touching a zero value are skipped and counted."""
    ell_candidates = sorted(set(int(ell) for ell in ell_candidates))
    if not ell_candidates or ell_candidates[0] < 0:
        raise InvalidInputError(f"shifts must be nonnegative integers, got {ell_candidates}")
    if len(curve) < ell_candidates[-1] + 3:
        raise InvalidInputError(f"curve has {len(curve)} entries, shifts up to {ell_candidates[-1]} "
                                f"need {ell_candidates[-1] + 3}")

    ks = set(curve.ks)
    best = SubmultiplicativityReport(math.inf, None, 0.0, 0)
    skipped_total = 0
    for ell in ell_candidates:
        worst, skipped, pairs = 0.0, 0, 0
        for k in sorted(ks):
            for h in sorted(ks):
                if k - ell not in ks or k + h not in ks:
                    continue
                bottom = curve[k - ell] * curve[h]
                if bottom == 0:
                    skipped += 1
                    continue
                pairs += 1
                worst = max(worst, curve[k + h] / bottom)
        skipped_total += skipped
        if pairs and worst < best.C:
            best = SubmultiplicativityReport(worst, ell, 1 / worst if worst > 0 else math.inf, skipped)
    if best.ell is None:
        logger.warning("no usable (k, h) pair for shifts %s", ell_candidates)
        return SubmultiplicativityReport(math.inf, None, 0.0, skipped_total)
    if best.skipped:
        logger.info("skipped %d pairs with a zero modulus", best.skipped)
    return best


def snowflake_invariance_check(space: FiniteMetricSpace, eps: float, config: CurveConfig = CurveConfig(),
                               p_lo: float = MIN_P, p_hi: float = 3.0, p_tol: float = 0.05) -> dict:
    """Estimates the dimension of (X, d) and (X, d^eps) with the same settings.
    The brackets should overlap once each is widened by p_tol."""
    original = estimate_conformal_dimension(space, None, p_lo, p_hi, p_tol, config)
    if eps == 1:
        flaked = original
    else:
        flaked = estimate_conformal_dimension(snowflake(space, eps), None, p_lo, p_hi, p_tol, config)
    overlap = max(original.cd_low, flaked.cd_low) - p_tol <= min(original.cd_high, flaked.cd_high) + p_tol
    if not overlap:
        logger.warning("brackets [%.6g, %.6g] and [%.6g, %.6g] do not overlap after snowflaking by %.6g",
                       original.cd_low, original.cd_high, flaked.cd_low, flaked.cd_high, eps)
    return {'eps': eps, 'original': original, 'snowflake': flaked, 'overlap': overlap}
