import sys

import numpy as np
import pytest

try:
    from confdim import convergence
    from confdim.dimension import CurveConfig, DimensionEstimate, estimate_conformal_dimension
    from confdim.errors import InvalidInputError
    from confdim.metric import FiniteMetricSpace
    from confdim.spaces import SpaceDescriptor, family_uniformly_certified, generate
except ImportError:
    sys.path.append("./")
    from confdim import convergence
    from confdim.dimension import CurveConfig, DimensionEstimate, estimate_conformal_dimension
    from confdim.errors import InvalidInputError
    from confdim.metric import FiniteMetricSpace
    from confdim.spaces import SpaceDescriptor, family_uniformly_certified, generate

D = SpaceDescriptor


def estimate(low, high):
    return DimensionEstimate(low, high, {}, {}, 1e-2, {})


### distances ###

def test_hausdorff_two_points():
    A = FiniteMetricSpace.from_points([[0.0]])
    B = FiniteMetricSpace.from_points([[0.0], [1.0]])
    assert convergence.hausdorff_distance(A, B) == 1

def test_hausdorff_needs_matching_clouds():
    line = FiniteMetricSpace.from_points([[0.0], [1.0]])
    with pytest.raises(InvalidInputError):
        convergence.hausdorff_distance(line, FiniteMetricSpace.from_points([[0.0, 0.0]]))
    with pytest.raises(InvalidInputError):
        convergence.hausdorff_distance(line, FiniteMetricSpace.from_matrix([[0, 1], [1, 0]]))

@pytest.mark.parametrize('n', [1, 2, 3])
def test_cantor_to_interval(n):
    cantor, _ = generate(D('cantor', depth=4, n=n))
    interval, _ = generate(D('interval', depth=10))
    # half the central gap, whose midpoint 1/2 lies on the interval grid
    assert convergence.hausdorff_distance(cantor, interval) == pytest.approx(1 / (2 * (2 * n + 1)))

def test_gh_translation():
    points = np.random.default_rng(0).random((20, 2))
    A = FiniteMetricSpace.from_points(points)
    B = FiniteMetricSpace.from_points(points + 5)
    assert convergence.gh_lower_bounds(A, B) == pytest.approx(0, abs=1e-12)

def test_gh_point_and_segment():
    point = FiniteMetricSpace.from_points([[0.0]])
    segment = FiniteMetricSpace.from_points([[0.0], [1.0]])
    assert convergence.gh_lower_bounds(point, segment) == pytest.approx(0.5)

def test_gh_below_hausdorff():
    cantor, _ = generate(D('cantor', depth=4, n=1))
    interval, _ = generate(D('interval', depth=6))
    assert convergence.gh_lower_bounds(cantor, interval) <= convergence.hausdorff_distance(cantor, interval) + 1e-12


### verdicts ###

def test_signature_holds():
    estimates = [estimate(1.0, 1.4), estimate(1.2, 1.3), estimate(1.25, 1.3), estimate(1.26, 1.3)]
    verdict = convergence.semicontinuity_verdict(estimates, estimate(1.3, 1.35), [(0.4, 0.1), (0.2, 0.05)], 0.05, True)
    assert verdict['tail_length'] == 2
    assert verdict['limsup_cd_high'] == pytest.approx(1.3)
    assert verdict['signature_holds']
    assert verdict['distances_decreasing']
    assert len(verdict['gaps']) == 4

def test_signature_broken():
    estimates = [estimate(1.0, 1.2), estimate(1.0, 1.2)]
    verdict = convergence.semicontinuity_verdict(estimates, estimate(0.0, 0.1), [(None, 0.3), (None, 0.2)], 0.05, False)
    assert not verdict['signature_holds']
    assert verdict['strict_gap'] == pytest.approx(-1.2)
    assert verdict['distances_decreasing'] is None

def test_point_limit_is_not_certified():
    family = [D('interval', depth=4, length=1 / n) for n in range(1, 4)]
    assert family_uniformly_certified(family)
    assert not family_uniformly_certified(family + [D('point')])


### experiments ###

def test_experiment_config():
    doc = {'sequence': [{'kind': 'cantor', 'n': 1, 'depth': 3}], 'limit': {'kind': 'cantor', 'n': 1, 'depth': 4},
           'dimension': {'p_lo': 0.5, 'slack': 0.1, 'base': 3, 'k_tail': 2}}
    config = convergence.ExperimentConfig.from_json(doc)
    assert config.p_lo == 0.5 and config.slack == 0.1
    assert config.curve.base == 3 and config.curve.k_tail == 2
    assert config.limit.depth == 4

def test_experiment_config_errors():
    with pytest.raises(InvalidInputError):
        convergence.ExperimentConfig.from_json({'sequence': [{'kind': 'point'}]})
    with pytest.raises(InvalidInputError):
        convergence.ExperimentConfig.from_json({'sequence': [], 'limit': {'kind': 'point'}})
    with pytest.raises(InvalidInputError):
        convergence.ExperimentConfig.from_json({'sequence': [{'kind': 'point'}], 'limit': {'kind': 'point'},
                                                'dimension': {'colour': 'red'}})

def test_constant_sequence_experiment():
    cantor = D('cantor', depth=6, n=1)
    config = convergence.ExperimentConfig((cantor, cantor), cantor, CurveConfig(base=3, threads=2))
    experiment = convergence.run_semicontinuity_experiment(config)
    assert experiment.distances == [(0.0, 0.0), (0.0, 0.0)]
    assert experiment.verdict['signature_holds']
    assert experiment.verdict['qss_certified']
    assert experiment.estimates[0] is experiment.limit_estimate
    doc = experiment.to_json()
    assert len(doc['estimates']) == 2 and doc['limit']['kind'] == 'cantor'

def test_cantor_sequence_is_below_interval_limit():
    curve = CurveConfig(base=3, lam=1, decay_mode='trend', k_tail=2, threads=4)
    # depths at which level 5 is resolved: every depth 3 annulus is cut by a gap
    sequence = tuple(D('cantor', depth=7 if n == 1 else 8, n=n) for n in range(1, 5))
    config = convergence.ExperimentConfig(sequence, D('interval', depth=10), curve)
    experiment = convergence.run_semicontinuity_experiment(config)
    assert all(e.cd_high <= 0.25 for e in experiment.estimates)
    assert experiment.limit_estimate.cd_low >= 0.75
    assert experiment.verdict['strict_gap'] >= 0.5
    assert experiment.verdict['signature_holds']
    assert experiment.verdict['distances_decreasing']

def test_carpets_approach_the_square():
    config = CurveConfig(base=2, lam=1, L1=1, L2=5, decay_mode='trend', k_tail=2, k_stop=2, threads=4)

    def estimate_of(descriptor):
        space, _ = generate(descriptor)
        return estimate_conformal_dimension(space, p_lo=1, p_hi=3, p_tol=0.5, config=config).cd_point

    carpets = [estimate_of(D('carpet', n=n, depth=depth)) for n, depth in ((1, 4), (2, 3), (3, 2))]
    limit = estimate_of(D('square', depth=6))
    assert all(1.0 < cd < 2.5 for cd in carpets)
    assert all(b >= a - 0.1 for a, b in zip(carpets, carpets[1:]))
    assert limit >= max(carpets) - 0.1

def test_distance_profile_matches_spaces():
    cantor, _ = generate(D('cantor', depth=4, n=1))
    interval, _ = generate(D('interval', depth=6))
    profile = convergence.DistanceProfile.of(interval)
    assert profile.diameter == pytest.approx(1)
    assert profile.values[0] == 0 and np.all(np.diff(profile.eccentricities) >= 0)
    assert convergence.gh_lower_bounds(cantor, profile) == convergence.gh_lower_bounds(cantor, interval)

def test_limit_profile_is_computed_once(monkeypatch):
    calls = []
    of = convergence.DistanceProfile.of

    def counting(space):
        calls.append(space.n)
        return of(space)
    monkeypatch.setattr(convergence.DistanceProfile, 'of', staticmethod(counting))
    small, large = D('cantor', depth=5, n=1), D('cantor', depth=6, n=1)
    config = convergence.ExperimentConfig((small, small, large), large, CurveConfig(base=3))
    convergence.run_semicontinuity_experiment(config)
    assert sorted(calls) == sorted([generate(small)[0].n, generate(large)[0].n])
