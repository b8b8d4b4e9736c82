import logging
import math
import sys

import numpy as np
import pytest

try:
    from confdim import dimension
    from confdim.annulus import ModulusCurve
    from confdim.dimension import CurveConfig, Verdict
    from confdim.errors import InvalidInputError, ResolutionError
    from confdim.metric import FiniteMetricSpace, build_net_hierarchy
    from confdim.spaces import SpaceDescriptor, generate
    from confdim.utils import dumps
except ImportError:
    sys.path.append("./")
    from confdim import dimension
    from confdim.annulus import ModulusCurve
    from confdim.dimension import CurveConfig, Verdict
    from confdim.errors import InvalidInputError, ResolutionError
    from confdim.metric import FiniteMetricSpace, build_net_hierarchy
    from confdim.spaces import SpaceDescriptor, generate
    from confdim.utils import dumps


def classify(values, **kwargs):
    return dimension.classify_decay(ModulusCurve.from_values(values), **kwargs)


def threshold_probe(critical, band=()):
    """Persists below <critical>, Vanishes above, Inconclusive inside <band>"""
    calls = []

    def probe(p):
        calls.append(p)
        if band and band[0] < p < band[1]:
            verdict = Verdict.INCONCLUSIVE
        else:
            verdict = Verdict.VANISHES if p > critical else Verdict.PERSISTS
        return verdict, ModulusCurve.from_values([1.0, 0.0, 0.0], p=p)

    probe.calls = calls
    return probe


def cantor():
    space, _ = generate(SpaceDescriptor('cantor', depth=6, n=1))
    return space


### decay rule ###

def test_zero_curve_vanishes():
    assert classify([0, 0, 0]) == Verdict.VANISHES

def test_constant_curve_persists():
    assert classify([0.5, 0.5, 0.5, 0.5]) == Verdict.PERSISTS

def test_decaying_curve_vanishes():
    assert classify([0.9, 0.4, 0.15, 0.05, 0.008]) == Verdict.VANISHES

def test_wobbling_tail_is_inconclusive():
    assert classify([0.5, 0.005, 0.009, 0.004]) == Verdict.INCONCLUSIVE

def test_middle_band_is_inconclusive():
    assert classify([0.5, 0.05, 0.05, 0.05]) == Verdict.INCONCLUSIVE

def test_relative_mode():
    values = [5, 2, 0.04, 0.03]
    assert classify(values) == Verdict.INCONCLUSIVE
    assert classify(values, mode='relative') == Verdict.VANISHES

def test_short_curve_rejected():
    with pytest.raises(InvalidInputError):
        classify([0.1, 0.01])

def test_trend_decay_rate():
    assert dimension.decay_rate([1, 0.1, 0.01], 10) == pytest.approx(-1)
    assert dimension.decay_rate([0.5, 1], 2) == pytest.approx(1)
    assert math.isnan(dimension.decay_rate([0.5, 0], 2))
    with pytest.raises(InvalidInputError):
        dimension.decay_rate([0.5], 2)

def test_trend_mode():
    assert classify([1, 0.5, 0.25], k_tail=2, mode='trend') == Verdict.VANISHES
    assert classify([1, 0.95, 0.9025], k_tail=2, mode='trend') == Verdict.PERSISTS
    # rate -0.075 lies between -rate_band and -2·rate_band
    assert classify([1, 10 ** -0.075, 10 ** -0.15], k_tail=2, mode='trend') == Verdict.INCONCLUSIVE
    assert classify([1, 10 ** -0.075, 10 ** -0.15], k_tail=2, mode='trend', rate_band=0.1) == Verdict.PERSISTS

def test_trend_mode_with_zero_tail():
    assert classify([1, 0.5, 0], k_tail=2, mode='trend') == Verdict.VANISHES
    assert classify([1, 0, 0.5], k_tail=2, mode='trend') == Verdict.INCONCLUSIVE


### bracketing ###

def test_bisection_brackets_threshold():
    bracket = dimension.bisect_critical_exponent(threshold_probe(1.3), 0.1, 3.0, 0.05)
    assert bracket.low <= 1.3 < bracket.high
    assert bracket.high - bracket.low <= 0.05
    assert bracket.low_witness == bracket.low and bracket.high_witness == bracket.high
    assert not bracket.inconclusive and not bracket.degenerate

def test_bisection_is_deterministic():
    first, second = threshold_probe(0.77), threshold_probe(0.77)
    dimension.bisect_critical_exponent(first, 0.1, 3.0, 0.01)
    dimension.bisect_critical_exponent(second, 0.1, 3.0, 0.01)
    assert first.calls == second.calls
    assert first.calls[:3] == [0.1, 3.0, 1.55]

def test_everything_vanishes():
    bracket = dimension.bisect_critical_exponent(threshold_probe(0.0), 0.1, 3.0, 0.05)
    assert bracket.degenerate
    assert bracket.low == bracket.high == 0.1
    assert bracket.high_witness == 0.1

def test_everything_persists():
    bracket = dimension.bisect_critical_exponent(threshold_probe(10.0), 0.1, 3.0, 0.05)
    assert bracket.degenerate
    assert bracket.low == bracket.high == 3.0
    assert bracket.low_witness == 3.0

def test_inconclusive_band_stops_bisection():
    bracket = dimension.bisect_critical_exponent(threshold_probe(1.3, band=(1.0, 1.6)), 0.1, 3.0, 0.05)
    assert bracket.inconclusive
    assert (bracket.low, bracket.high) == (0.1, 3.0)
    assert bracket.undecided == [1.55]

def test_inconclusive_midpoint_keeps_last_witnesses():
    bracket = dimension.bisect_critical_exponent(threshold_probe(1.3, band=(1.2, 1.4)), 0.1, 3.0, 0.05)
    assert bracket.inconclusive
    assert (bracket.low, bracket.high) == (1.1875, 1.55)
    assert (bracket.low_witness, bracket.high_witness) == (1.1875, 1.55)
    assert bracket.undecided == [1.36875]

def test_reversed_verdicts_report_whole_window():
    def probe(p):
        verdict = Verdict.VANISHES if p < 1 else Verdict.PERSISTS
        return verdict, ModulusCurve.from_values([0, 0, 0], p=p)
    bracket = dimension.bisect_critical_exponent(probe, 0.1, 3.0, 0.05)
    assert bracket.inconclusive
    assert (bracket.low, bracket.high) == (0.1, 3.0)

def test_bisection_window_validation():
    with pytest.raises(InvalidInputError):
        dimension.bisect_critical_exponent(threshold_probe(1), 2.0, 1.0, 0.05)
    with pytest.raises(InvalidInputError):
        dimension.bisect_critical_exponent(threshold_probe(1), 0.1, 1.0, 0)

def test_grid_mode():
    bracket = dimension.grid_critical_exponent(threshold_probe(1.3), [2, 0.5, 1.5, 1])
    assert (bracket.low, bracket.high) == (1.0, 1.5)
    assert not bracket.inconclusive and not bracket.degenerate

def test_grid_not_straddling():
    bracket = dimension.grid_critical_exponent(threshold_probe(5), [0.5, 1])
    assert bracket.degenerate and bracket.high_witness is None


### configuration ###

def test_curve_config_validation():
    with pytest.raises(InvalidInputError):
        CurveConfig(base=1)
    with pytest.raises(InvalidInputError):
        CurveConfig(use_n0=True)
    with pytest.raises(InvalidInputError):
        CurveConfig.from_json({'base': 3, 'colour': 'red'})

def test_curve_config_json_drops_threads():
    doc = CurveConfig(base=3, threads=8, decay_mode='relative').to_json()
    assert 'threads' not in doc
    assert doc['decay_mode'] == 'relative' and doc['rule'] == 'surrogate'

def test_cantor_levels():
    config = CurveConfig(base=3)
    space = cantor()
    assert config.hierarchy_depth(space) == 5
    assert config.top_level(space) == 2
    top, ks = dimension.curve_levels(space, build_net_hierarchy(space, 3, 5), config)
    assert (top, ks) == (2, [1, 2, 3])

def test_unresolved_curve():
    space = FiniteMetricSpace.from_points(np.linspace(0, 1, 5).reshape(-1, 1))
    with pytest.raises(ResolutionError):
        dimension.curve_levels(space, build_net_hierarchy(space, 10, 0), CurveConfig())

def test_trend_config_validation():
    with pytest.raises(InvalidInputError):
        CurveConfig(decay_mode='trend', k_tail=1)
    with pytest.raises(InvalidInputError):
        CurveConfig(rate_band=0)
    doc = CurveConfig(decay_mode='trend', k_tail=2, rate_band=0.1).to_json()
    assert doc['decay_mode'] == 'trend' and doc['rate_band'] == 0.1

def test_trend_needs_two_depths():
    config = CurveConfig(base=3, k_stop=1, decay_mode='trend', k_tail=2)
    space = cantor()
    with pytest.raises(ResolutionError):
        dimension.curve_levels(space, build_net_hierarchy(space, 3, 5), config)


### estimates ###

def test_single_point_estimate():
    estimate = dimension.estimate_conformal_dimension(FiniteMetricSpace.from_points([[0.0]]))
    assert (estimate.cd_low, estimate.cd_high) == (0, 0)
    assert estimate.degenerate

def test_p_lo_floor():
    with pytest.raises(InvalidInputError):
        dimension.estimate_conformal_dimension(cantor(), p_lo=0.05)

def test_cantor_estimate():
    estimate = dimension.estimate_conformal_dimension(cantor(), config=CurveConfig(base=3))
    assert estimate.cd_high <= 0.25
    assert estimate.degenerate
    assert all(v == Verdict.VANISHES for v in estimate.verdicts.values())
    doc = estimate.to_json()
    assert doc['config']['base'] == 3
    assert set(doc['verdicts']) == set(doc['curves'])

def test_estimate_is_reproducible():
    space = cantor()
    one = dimension.estimate_conformal_dimension(space, config=CurveConfig(base=3))
    many = dimension.estimate_conformal_dimension(space, config=CurveConfig(base=3, threads=4))
    assert dumps(one.to_json()) == dumps(many.to_json())

def test_hierarchy_base_must_match():
    space = cantor()
    with pytest.raises(InvalidInputError):
        dimension.estimate_conformal_dimension(space, build_net_hierarchy(space, 2, 5), config=CurveConfig(base=3))

def test_snowflake_identity():
    report = dimension.snowflake_invariance_check(cantor(), 1, CurveConfig(base=3))
    assert report['snowflake'] is report['original']
    assert report['overlap']

def test_k_tail_shortened(caplog):
    # Cantor depths 1..3 only: k_tail 5 falls back on 3
    with caplog.at_level(logging.WARNING, logger='confdim'):
        estimate = dimension.estimate_conformal_dimension(cantor(), p_lo=1, p_hi=2, p_tol=0.5,
                                                          config=CurveConfig(base=3, k_tail=5))
    assert any('k_tail shortened to 3' in note for note in estimate.notes)
    assert any('instead of k_tail = 5' in r.getMessage() for r in caplog.records)

def test_inconclusive_classifier_keeps_window(monkeypatch):
    def undecided_between_1_and_2(curve, *args, **kwargs):
        if curve.p < 1:
            return Verdict.PERSISTS
        return Verdict.INCONCLUSIVE if curve.p < 2 else Verdict.VANISHES
    monkeypatch.setattr(dimension, 'classify_decay', undecided_between_1_and_2)
    estimate = dimension.estimate_conformal_dimension(cantor(), p_lo=0.5, p_hi=3.0, config=CurveConfig(base=3))
    assert (estimate.cd_low, estimate.cd_high) == (0.5, 3.0)
    assert estimate.inconclusive and not estimate.degenerate
    assert estimate.undecided == [1.75]
    assert estimate.low_witness == 0.5 and estimate.high_witness == 3.0
    assert any('1.75' in note for note in estimate.notes)
    assert estimate.to_json()['undecided'] == [1.75]

def test_interval_estimate():
    space, _ = generate(SpaceDescriptor('interval', depth=10))
    config = CurveConfig(base=3, lam=1, decay_mode='trend', threads=4)
    estimate = dimension.estimate_conformal_dimension(space, config=config)
    assert 0.75 <= estimate.cd_point <= 1.25
    assert estimate.verdicts[0.1] == Verdict.PERSISTS
    assert estimate.verdicts[3.0] == Verdict.VANISHES

def test_square_estimate():
    space, _ = generate(SpaceDescriptor('square', depth=6))
    config = CurveConfig(base=2, lam=1, L1=1, L2=5, decay_mode='trend', k_tail=2, k_stop=2, threads=4)
    estimate = dimension.estimate_conformal_dimension(space, p_lo=1, p_hi=3, p_tol=0.5, config=config)
    assert 1.5 <= estimate.cd_point <= 2.5
    assert estimate.verdicts[1.0] == Verdict.PERSISTS

def test_snowflaked_interval_brackets_overlap():
    space, _ = generate(SpaceDescriptor('interval', depth=12))
    config = CurveConfig(base=2, lam=1, decay_mode='trend', k_tail=2, threads=4)
    report = dimension.snowflake_invariance_check(space, 0.5, config, p_lo=1, p_hi=2, p_tol=0.1)
    assert report['overlap']
    assert report['original'].verdicts[1.0] == Verdict.PERSISTS
    assert report['snowflake'].verdicts[1.0] == Verdict.PERSISTS


### submultiplicativity ###

def test_constant_curve_constant():
    report = dimension.submultiplicativity_diagnostic(ModulusCurve.from_values([0.5] * 6), [0, 1])
    assert report.C == pytest.approx(2)
    assert report.lower_bound == pytest.approx(0.5)

def test_geometric_curve_constant():
    curve = ModulusCurve.from_values([0.5 ** k for k in range(1, 7)])
    assert dimension.submultiplicativity_diagnostic(curve, [0]).C == pytest.approx(1)
    report = dimension.submultiplicativity_diagnostic(curve, [0, 1])
    assert report.ell == 1 and report.C == pytest.approx(0.5)

def test_zero_values_skipped():
    report = dimension.submultiplicativity_diagnostic(ModulusCurve.from_values([0.5, 0, 0.5, 0.5, 0.5]), [0])
    assert report.skipped > 0
    assert math.isfinite(report.C)

def test_short_curve_for_shift():
    with pytest.raises(InvalidInputError):
        dimension.submultiplicativity_diagnostic(ModulusCurve.from_values([0.5, 0.5]), [0])
