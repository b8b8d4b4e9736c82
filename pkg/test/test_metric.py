import math
import sys

import numpy as np
import pytest

try:
    from confdim import metric
    from confdim.errors import InvalidInputError, ResolutionError
    from confdim.spaces import SpaceDescriptor, certificate, generate
except ImportError:
    sys.path.append("./")
    from confdim import metric
    from confdim.errors import InvalidInputError, ResolutionError
    from confdim.spaces import SpaceDescriptor, certificate, generate


def line(n):
    return metric.FiniteMetricSpace.from_points(np.linspace(0, 1, n).reshape(-1, 1))


def test_matrix_triangle_inequality_rejected():
    with pytest.raises(InvalidInputError):
        metric.FiniteMetricSpace.from_matrix([[0, 1, 5], [1, 0, 1], [5, 1, 0]])

def test_matrix_asymmetry_rejected():
    with pytest.raises(InvalidInputError):
        metric.FiniteMetricSpace.from_matrix([[0, 1], [2, 0]])

def test_json_round_trip():
    cloud = metric.FiniteMetricSpace.from_points([[0, 0], [3, 4]])
    back = metric.FiniteMetricSpace.from_json(cloud.to_json())
    assert back.backend == 'cloud' and back.dist(0, 1) == 5
    matrix = metric.FiniteMetricSpace.from_matrix([[0, 2], [2, 0]], labels=['a', 'b'])
    back = metric.FiniteMetricSpace.from_json(matrix.to_json())
    assert back.backend == 'matrix' and back.labels == ('a', 'b') and back.dist(0, 1) == 2

def test_unknown_json_type():
    with pytest.raises(InvalidInputError):
        metric.FiniteMetricSpace.from_json({'type': 'graph'})

def test_diameter_and_floor():
    space = metric.FiniteMetricSpace.from_points([[0], [0.25], [1]])
    assert space.diameter == 1
    assert space.min_positive_distance == 0.25
    assert space.resolution_floor == 0.5

def test_scaled():
    space = line(5).scaled(2)
    assert space.diameter == pytest.approx(2)


### nets ###

def test_single_point_nets():
    space = metric.FiniteMetricSpace.from_points([[0.3]])
    hierarchy = metric.build_net_hierarchy(space, 10, 3)
    assert all(list(hierarchy.net(k)) == [0] for k in range(4))

def test_empty_space_rejected():
    with pytest.raises(InvalidInputError):
        metric.build_net_hierarchy(metric.FiniteMetricSpace.from_points(np.zeros((0, 1))), 10, 2)

def test_net_properties():
    space = line(101)
    hierarchy = metric.build_net_hierarchy(space, 10, 1)
    assert len(hierarchy.net(0)) == 1
    net = hierarchy.net(1)
    assert 5 <= len(net) <= 10
    block = space.block(net)
    assert np.all(block[~np.eye(len(net), dtype=bool)] > 0.1)
    assert np.all(space.block(np.arange(space.n), net).min(axis=1) <= 0.1 + 1e-12)

def test_resolution_floor_flags_levels():
    hierarchy = metric.build_net_hierarchy(line(101), 10, 3)
    assert hierarchy.valid_levels == [0, 1]
    with pytest.raises(ResolutionError):
        hierarchy.require_valid(2)


### diagnostics ###

def test_doubling_single_point():
    space = metric.FiniteMetricSpace.from_points([[0]])
    assert metric.estimate_doubling(space, metric.build_net_hierarchy(space, 10, 2)) == 1

def test_doubling_two_points():
    space = metric.FiniteMetricSpace.from_points([[0], [1]])
    assert metric.estimate_doubling(space, metric.build_net_hierarchy(space, 10, 0)) == 2

def test_doubling_dense_line():
    space = line(65)
    assert metric.estimate_doubling(space, metric.build_net_hierarchy(space, 2, 4)) in (3, 4, 5)

def test_perfectness_two_points():
    space = metric.FiniteMetricSpace.from_points([[0], [1]])
    assert metric.estimate_uniform_perfectness(space, [0.5]) == 0

def test_perfectness_dense_line():
    assert metric.estimate_uniform_perfectness(line(101), [0.1, 0.3]) >= 0.9

def test_perfectness_empty_grid():
    with pytest.raises(InvalidInputError):
        metric.estimate_uniform_perfectness(line(5), [])

def test_doubling_is_scale_invariant():
    space = metric.FiniteMetricSpace.from_points(np.random.default_rng(3).random((60, 2)) * 0.7)
    # a factor of base^-2 shifts every net level by two; the two new top levels hold one point
    shrunk = space.scaled(0.25)
    assert metric.estimate_doubling(space, metric.build_net_hierarchy(space, 2, 5)) == \
        metric.estimate_doubling(shrunk, metric.build_net_hierarchy(shrunk, 2, 7))

def test_perfectness_grows_with_points():
    points = np.random.default_rng(4).random((40, 2))
    sparse = metric.FiniteMetricSpace.from_points(points)
    dense = metric.FiniteMetricSpace.from_points(np.vstack([points, np.random.default_rng(5).random((60, 2))]))
    grid = [0.1, 0.2, 0.3]
    assert metric.estimate_uniform_perfectness(dense, grid, centers=range(40)) >= \
        metric.estimate_uniform_perfectness(sparse, grid, centers=range(40))

def test_ahlfors_line():
    space = line(1025)
    s_est, A_est = metric.fit_ahlfors_regularity(space, metric.build_net_hierarchy(space, 2, 9))
    assert 0.9 <= s_est <= 1.1
    assert A_est >= 1

def test_ahlfors_cantor():
    space, _ = generate(SpaceDescriptor('cantor', depth=6, n=1))
    s_est, A_est = metric.fit_ahlfors_regularity(space, metric.build_net_hierarchy(space, 3, 5))
    assert 0.58 <= s_est <= 0.68
    assert A_est < 1.5

def test_ahlfors_square():
    space, _ = generate(SpaceDescriptor('square', depth=7))
    s_est, _ = metric.fit_ahlfors_regularity(space, metric.build_net_hierarchy(space, 2, 6))
    assert 1.85 <= s_est <= 2.1

def test_ahlfors_needs_levels():
    space = line(101)
    with pytest.raises(ResolutionError):
        metric.fit_ahlfors_regularity(space, metric.build_net_hierarchy(space, 10, 3))

def test_box_counting_cantor():
    space, _ = generate(SpaceDescriptor('cantor', depth=6, n=1))
    slope = metric.box_counting_dimension(space, metric.build_net_hierarchy(space, 3, 5))
    assert slope == pytest.approx(math.log(2) / math.log(3), rel=1e-6)

def test_cantor_perfectness_consistency():
    desc = SpaceDescriptor('cantor', depth=6, n=1)
    space, cert = generate(desc)
    hierarchy = metric.build_net_hierarchy(space, 3, 5)
    a_est = metric.estimate_uniform_perfectness(space, metric.default_rho_grid(space, hierarchy))
    s_est, A_est = metric.fit_ahlfors_regularity(space, hierarchy)
    a0 = metric.derive_qss_perfectness_constants(cert.L0, cert.rho0, cert.c0, space.diameter)
    assert a_est > 0
    assert a_est >= min(metric.lemma21_perfectness_bound(A_est, s_est), a0) - 0.05
    assert a_est >= a0 - 0.01


### constants ###

def test_lemma21_bound():
    assert metric.lemma21_perfectness_bound(1, 1) == 1
    assert metric.lemma21_perfectness_bound(2, 1) == pytest.approx(0.25)
    assert metric.lemma21_perfectness_bound(2, 2) == pytest.approx(0.5)
    with pytest.raises(InvalidInputError):
        metric.lemma21_perfectness_bound(2, 0)
    with pytest.raises(InvalidInputError):
        metric.lemma21_perfectness_bound(0.5, 1)

def test_qss_perfectness_constants():
    assert metric.derive_qss_perfectness_constants(2, 1, 0.5, 1) == pytest.approx(0.125)
    assert metric.derive_qss_perfectness_constants(1, 1, 2, 1) < 1
    assert metric.qss_diameter_constant(0.1, 1, 2) == pytest.approx(0.05)
    with pytest.raises(InvalidInputError):
        metric.derive_qss_perfectness_constants(2, 1, 0.5, 0.5)

def test_regularity_report_json():
    space = line(65)
    report = metric.regularity_report(space, metric.build_net_hierarchy(space, 2, 5))
    doc = report.to_json()
    assert doc['doubling_lower_bound'] >= 2
    assert doc['resolution_floor'] == pytest.approx(2 / 64)
