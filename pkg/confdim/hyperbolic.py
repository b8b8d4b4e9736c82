"""
Gromov hyperbolicity of finite metric spaces and visual metrics on the
leaves of finite rooted trees.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import networkx as nx
import numpy as np

from .errors import BudgetError, InvalidInputError
from .metric import FiniteMetricSpace

logger = logging.getLogger(__name__)

MAX_EXHAUSTIVE_POINTS = 60
ULTRAMETRIC_TOL = 1e-12


@dataclass(frozen=True)
class TreeSpace:
    """A rooted tree with positive edge lengths. Leaves stand for boundary points."""
    graph: nx.Graph
    root: int

    def __post_init__(self):
        if self.root not in self.graph:
            raise InvalidInputError(f"root {self.root} is not a node of the tree")
        if not nx.is_tree(self.graph):
            raise InvalidInputError("edges must form a connected acyclic graph")
        for u, v, length in self.graph.edges(data='length'):
            if length is None or not length > 0:
                raise InvalidInputError(f"edge ({u}, {v}) needs a positive length, got {length}")

    @property
    def leaves(self) -> list[int]:
        """Degree one nodes other than the root, in node order"""
        return sorted(v for v in self.graph.nodes if v != self.root and self.graph.degree(v) == 1)

    @property
    def nodes(self) -> list[int]:
        return sorted(self.graph.nodes)

    def distances_from(self, source: int) -> dict[int, float]:
        return nx.single_source_dijkstra_path_length(self.graph, source, weight='length')

    def metric(self, nodes: Optional[list[int]] = None) -> FiniteMetricSpace:
        """Path metric restricted to <nodes> (every node by default)"""
        nodes = self.nodes if nodes is None else list(nodes)
        lengths = dict(nx.all_pairs_dijkstra_path_length(self.graph, weight='length'))
        matrix = np.array([[lengths[u][v] for v in nodes] for u in nodes])
        return FiniteMetricSpace.from_matrix(matrix, labels=nodes)

    def to_json(self) -> dict:
        return {'root': self.root,
                'edges': [[u, v, length] for u, v, length in sorted(self.graph.edges(data='length'))]}


def tree_from_json(doc: dict) -> TreeSpace:
    """Reads {"edges":[[parent,child,length],...],"root":0}"""
    try:
        edges = [(int(u), int(v), float(length)) for u, v, length in doc['edges']]
        root = int(doc.get('root', 0))
    except (KeyError, TypeError, ValueError) as err:
        raise InvalidInputError(f"malformed tree document: {err}") from err
    graph = nx.Graph()
    graph.add_node(root)
    graph.add_weighted_edges_from(edges, weight='length')
    return TreeSpace(graph, root)


def regular_tree(branching: int, depth: int, edge_length: float = 1.0) -> TreeSpace:
    """Rooted tree where every node above <depth> has <branching> children.
    Nodes are numbered breadth first, so leaves come out in lexicographic order."""
    if branching < 1 or depth < 0:
        raise InvalidInputError(f"need branching >= 1 and depth >= 0, got {branching}, {depth}")
    graph = nx.balanced_tree(branching, depth)
    nx.set_edge_attributes(graph, float(edge_length), 'length')
    return TreeSpace(graph, 0)


### Gromov products and the four point condition ###

def gromov_product(space: FiniteMetricSpace, x: int, y: int, z: int) -> float:
    """(y, z)_x = (d(x,y) + d(x,z) - d(y,z)) / 2"""
    return 0.5 * (space.dist(x, y) + space.dist(x, z) - space.dist(y, z))


def four_point_defect(matrix: np.ndarray, x: int, y: int, z: int, w: int) -> float:
    """(d(x,y) + d(z,w) - max(d(x,z) + d(y,w), d(x,w) + d(y,z))) / 2, clamped at 0"""
    s = matrix[x, y] + matrix[z, w]
    c1 = matrix[x, z] + matrix[y, w]
    c2 = matrix[x, w] + matrix[y, z]
    return max(0.0, float((s - max(c1, c2)) / 2))


@dataclass(frozen=True)
class HyperbolicityReport:
    delta: float
    witness: tuple[int, int, int, int]
    approximate: bool = False
    points: Optional[tuple[int, ...]] = None

    def to_json(self) -> dict:
        return {'delta': self.delta, 'witness': list(self.witness), 'approximate': self.approximate,
                'points': None if self.points is None else list(self.points)}


def four_point_delta(space: FiniteMetricSpace, max_points: int = MAX_EXHAUSTIVE_POINTS,
                     subsample: bool = False, seed: int = 0) -> HyperbolicityReport:
    """Exhaustive scan of every ordered quadruple for the largest four point defect

    Args:
        space (FiniteMetricSpace): the space
        max_points (int): largest n scanned exhaustively. Defaults to 60.
        subsample (bool): scan a seeded subsample of <max_points> points instead of
            rejecting larger spaces; the report is then flagged approximate
        seed (int): subsampling seed

    Returns:
        HyperbolicityReport: delta and the first quadruple, in (x, y, z, w) order, reaching it
    """
    indices = np.arange(space.n)
    approximate = False
    if space.n > max_points:
        if not subsample:
            raise BudgetError(f"four point scan is limited to {max_points} points, got {space.n}")
        rng = np.random.default_rng(seed)
        indices = np.sort(rng.choice(space.n, size=max_points, replace=False))
        approximate = True
        logger.info("four point scan on %d of %d points", max_points, space.n)

    matrix = space.block(indices)
    n = len(indices)
    best, witness = 0.0, (0, 0, 0, 0)
    for x in range(n):
        for y in range(n):
            s = matrix[x, y] + matrix
            c1 = matrix[x][:, None] + matrix[y][None, :]
            c2 = matrix[x][None, :] + matrix[y][:, None]
            defect = (s - np.maximum(c1, c2)) / 2
            flat = int(np.argmax(defect))
            if defect.flat[flat] > best:
                best = float(defect.flat[flat])
                witness = (x, y) + divmod(flat, n)
    witness = tuple(int(indices[v]) for v in witness)
    return HyperbolicityReport(best, witness, approximate, tuple(int(v) for v in indices) if approximate else None)


def gromov_product_condition(space: FiniteMetricSpace, delta: float, basepoint: Optional[int] = None,
                             tol: float = 1e-9) -> int:
    """Counts triples violating (x,z)_w >= min((x,y)_w, (y,z)_w) - delta, for the given
    basepoint w or for every basepoint"""
    matrix = space.full_matrix()
    basepoints = range(space.n) if basepoint is None else [basepoint]
    violations = 0
    for w in basepoints:
        products = 0.5 * (matrix[w][:, None] + matrix[w][None, :] - matrix)
        for y in range(space.n):
            floor = np.minimum(products[:, y][:, None], products[y][None, :]) - delta
            violations += int(np.count_nonzero(products < floor - tol))
    return violations


### visual metrics ###

def visual_parameter(delta: float) -> float:
    """a = 1/(4·delta·log2(e)), the parameter of the standard visual metric of a
    delta-hyperbolic space; infinite for trees, where every a > 0 is admissible"""
    if delta < 0:
        raise InvalidInputError(f"delta must be >= 0, got {delta}")
    if delta == 0:
        return math.inf
    return 1 / (4 * delta * math.log2(math.e))


def is_ultrametric(space: FiniteMetricSpace, tol: float = ULTRAMETRIC_TOL) -> tuple[bool, int]:
    """Checks D(x,z) <= max(D(x,y), D(y,z)) on every triple

    Returns:
        tuple[bool, int]: whether it holds, and the number of violating triples
    """
    matrix = space.full_matrix()
    violations = 0
    for y in range(space.n):
        bound = np.maximum(matrix[:, y][:, None], matrix[y][None, :])
        violations += int(np.count_nonzero(matrix > bound * (1 + tol) + tol))
    return violations == 0, violations


def quasi_ultrametric_constant(matrix: np.ndarray) -> float:
    """Smallest V with D(x,z) <= V·max(D(x,y), D(y,z)) over distinct triples"""
    worst = 1.0
    n = matrix.shape[0]
    for y in range(n):
        bound = np.maximum(matrix[:, y][:, None], matrix[y][None, :])
        mask = bound > 0
        mask[y, :] = mask[:, y] = False
        if mask.any():
            worst = max(worst, float((matrix[mask] / bound[mask]).max()))
    return worst


def _triangle_ok(matrix: np.ndarray, tol: float = 1e-9) -> bool:
    for y in range(matrix.shape[0]):
        if np.any(matrix > matrix[:, y][:, None] + matrix[y][None, :] + tol):
            return False
    return True


def visual_candidate(space: FiniteMetricSpace, basepoint: int, boundary: list[int], a: float) -> tuple[np.ndarray, dict]:
    """D(z,z') = exp(-a·(z,z')_basepoint) on <boundary>, with zero diagonal

    Returns:
        tuple[np.ndarray, dict]: the candidate matrix and a report with the triangle
        inequality check and its quasi-ultrametric constant V
    """
    if a <= 0:
        raise InvalidInputError(f"a must be positive, got {a}")
    from_base = space.block([basepoint], boundary)[0]
    products = 0.5 * (from_base[:, None] + from_base[None, :] - space.block(boundary))
    matrix = np.exp(-a * products)
    np.fill_diagonal(matrix, 0.0)
    report = {'a': a, 'triangle_ok': _triangle_ok(matrix), 'V': quasi_ultrametric_constant(matrix)}
    return matrix, report


def standard_visual_metric(tree, a: float, basepoint: Optional[int] = None,
                           boundary: Optional[list[int]] = None) -> tuple[Optional[FiniteMetricSpace], dict]:
    """The visual metric exp(-a·(z,z')_x) on the boundary

    Args:
        tree (TreeSpace|FiniteMetricSpace): a tree, whose leaves form the boundary and whose
            root is the basepoint, or any finite space with explicit basepoint and boundary
        a (float): visual parameter, > 0
        basepoint (int, optional): basepoint index for non-tree inputs
        boundary (list[int], optional): boundary indices for non-tree inputs

    Returns:
        tuple[FiniteMetricSpace|None, dict]: the leaf space (None when the candidate breaks
        the triangle inequality) and the report of the candidate
    """
    if isinstance(tree, TreeSpace):
        leaves = tree.leaves
        depths = tree.distances_from(tree.root)
        space = tree.metric(leaves)
        products = 0.5 * (np.array([depths[v] for v in leaves])[:, None]
                          + np.array([depths[v] for v in leaves])[None, :] - space.full_matrix())
        if a <= 0:
            raise InvalidInputError(f"a must be positive, got {a}")
        matrix = np.exp(-a * products)
        np.fill_diagonal(matrix, 0.0)
        ultrametric, violations = is_ultrametric(FiniteMetricSpace.from_matrix(matrix, validate=False))
        report = {'a': a, 'triangle_ok': ultrametric, 'V': 1.0, 'ultrametric': ultrametric,
                  'ultrametric_violations': violations}
        return FiniteMetricSpace.from_matrix(matrix, labels=leaves, validate=False), report

    if basepoint is None or boundary is None:
        raise InvalidInputError("non-tree inputs need a basepoint and boundary points")
    matrix, report = visual_candidate(tree, basepoint, boundary, a)
    if not report['triangle_ok']:
        logger.warning("visual candidate with a = %.6g breaks the triangle inequality (V = %.6g)", a, report['V'])
        return None, report
    labels = [tree.labels[v] for v in boundary]
    return FiniteMetricSpace.from_matrix(matrix, labels=labels, validate=False), report
