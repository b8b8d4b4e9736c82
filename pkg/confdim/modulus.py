"""
Combinatorial p-modulus of a pair (E, F) of net points.

A (lambda, k)-path is a chain of net points of level k whose consecutive
lambda·base^-k balls meet. A density f on the net is admissible when its sum
along every path from E to F is at least 1; the p-modulus is the minimum of
sum f^p over admissible densities, 0 when no path exists.

solve_modulus works by constraint generation: it keeps a set of active paths,
minimizes over densities satisfying only those, and asks a shortest path
oracle (vertex weights f) for the lightest path to each vertex of F. The
violated ones join the active set, a few per round. It stops when the
lightest path weighs at least 1 - tol. Simple paths suffice: a walk repeating vertices
weighs at least as much as the simple path it contains.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import networkx as nx
import numpy as np
from scipy.optimize import linprog, minimize

from .errors import BudgetError, InvalidInputError
from .metric import FiniteMetricSpace, NetHierarchy, covers

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-5
FEASIBILITY_TOL = 1e-7
HEURISTIC_P = 1.0
BRUTE_FORCE_MAX_VERTICES = 12
BRUTE_FORCE_MAX_PATHS = 200
# violated paths added per constraint generation round, one per endpoint in F
SEPARATION_BATCH = 8
REWEIGHT_STEPS = 30
STATIONARITY_TOL = 1e-10
# virtual node feeding every vertex of E in the separation oracle
SOURCE = -1


class AdjacencyRule(str, Enum):
    DISTANCE_SURROGATE = 'surrogate'
    WITNESS_POINT = 'witness'


class ModulusStatus(str, Enum):
    SOLVED = 'solved'
    DISCONNECTED = 'disconnected'


@dataclass(frozen=True)
class PathGraph:
    level: int
    lam: float
    radius: float
    vertices: tuple[int, ...]
    graph: nx.Graph = field(compare=False, repr=False)
    rule: AdjacencyRule = AdjacencyRule.DISTANCE_SURROGATE

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted(tuple(sorted(edge)) for edge in self.graph.edges)


@dataclass(frozen=True)
class ModulusProblem:
    graph: PathGraph
    E: tuple[int, ...]
    F: tuple[int, ...]
    p: float

    def __post_init__(self):
        vertices = set(self.graph.vertices)
        if not self.E or not self.F:
            raise InvalidInputError("E and F must be nonempty")
        if not set(self.E) <= vertices or not set(self.F) <= vertices:
            raise InvalidInputError("E and F must be subsets of the graph vertices")
        if self.p < 0:
            raise InvalidInputError(f"p must be >= 0, got {self.p}")
        object.__setattr__(self, 'E', tuple(sorted(set(self.E))))
        object.__setattr__(self, 'F', tuple(sorted(set(self.F))))


@dataclass
class ModulusResult:
    value: float
    density: dict[int, float]
    active_paths: list[tuple[int, ...]]
    status: ModulusStatus
    iterations: int
    heuristic: bool = False

    def to_json(self, vertices: Sequence[int]) -> dict:
        return {
            'value': self.value,
            'vertices': list(vertices),
            'density': [self.density.get(v, 0.0) for v in vertices],
            'active_paths': [list(path) for path in self.active_paths],
            'status': self.status.value,
            'iterations': self.iterations,
            'heuristic': self.heuristic,
        }


def disconnected_result(vertices: Iterable[int] = ()) -> ModulusResult:
    return ModulusResult(0.0, {v: 0.0 for v in vertices}, [], ModulusStatus.DISCONNECTED, 0)


### path graphs ###

def build_path_graph(space: FiniteMetricSpace, hierarchy: NetHierarchy, k: int, lam: float,
                     rule: AdjacencyRule = AdjacencyRule.DISTANCE_SURROGATE) -> PathGraph:
    """Builds the adjacency graph of the net X_k at radius lam·base^-k

    Args:
        space (FiniteMetricSpace): ground space
        hierarchy (NetHierarchy): nets of the ground space
        k (int): level
        lam (float): ball inflation, > 0
        rule (AdjacencyRule): 'surrogate' joins q, q' when d(q,q') <= 2·radius;
            'witness' when some ground point lies within radius of both

    Returns:
        PathGraph: undirected graph on the net, no self loops
    """
    if lam <= 0:
        raise InvalidInputError(f"lambda must be positive, got {lam}")
    rule = AdjacencyRule(rule)
    net = np.sort(hierarchy.net(k))
    radius = lam * hierarchy.radius(k)

    if rule == AdjacencyRule.DISTANCE_SURROGATE:
        adjacent = covers(space.block(net), 2 * radius)
    else:
        near = covers(space.block(net, np.arange(space.n)), radius).astype(np.float32)
        adjacent = (near @ near.T) > 0.5
    np.fill_diagonal(adjacent, False)

    graph = nx.Graph()
    graph.add_nodes_from(int(v) for v in net)
    rows, cols = np.nonzero(np.triu(adjacent, 1))
    graph.add_edges_from((int(net[i]), int(net[j])) for i, j in zip(rows, cols))
    logger.debug("path graph level %d, radius %.6g (%s): %d vertices, %d edges",
                 k, radius, rule.value, graph.number_of_nodes(), graph.number_of_edges())
    return PathGraph(level=k, lam=float(lam), radius=radius,
                     vertices=tuple(int(v) for v in net), graph=graph, rule=rule)


### separation oracle ###

def oracle_graph(graph: PathGraph, E: Iterable[int]) -> nx.DiGraph:
    """Directed copy of the path graph with a virtual source pointing to E.
    Nodes and edges are inserted in index order, so Dijkstra breaks ties the same way on every run."""
    oracle = nx.DiGraph()
    oracle.add_node(SOURCE)
    oracle.add_nodes_from(graph.vertices)
    for u, v in graph.edges:
        oracle.add_edge(u, v)
        oracle.add_edge(v, u)
    oracle.add_edges_from((SOURCE, e) for e in sorted(E))
    return oracle


def lightest_path(oracle: nx.DiGraph, F: Iterable[int], weights: dict[int, float]) -> tuple[float, Optional[tuple[int, ...]]]:
    """Minimum vertex weight path from E (the source's successors) to F

    Entering a vertex costs its weight, so the length of a path from the source is
    the sum of the weights of its vertices. Zero weights are fine for Dijkstra.

    Returns:
        tuple[float, tuple[int]|None]: the weight and the path, (inf, None) when F is unreachable
    """
    reached = lightest_paths(oracle, F, weights)
    if not reached:
        return math.inf, None
    return reached[0]


def lightest_paths(oracle: nx.DiGraph, F: Iterable[int], weights: dict[int, float]) -> list[tuple[float, tuple[int, ...]]]:
    """Lightest path to every reachable vertex of F, sorted by (weight, endpoint)"""
    dist, paths = nx.single_source_dijkstra(oracle, SOURCE, weight=lambda u, v, data: weights[v])
    reached = sorted((dist[f], f) for f in set(F) if f in dist)
    return [(weight, tuple(paths[f][1:])) for weight, f in reached]


### inner solvers ###

def _constraint_matrix(paths: Sequence[Sequence[int]], support: Sequence[int]) -> np.ndarray:
    position = {v: i for i, v in enumerate(support)}
    matrix = np.zeros((len(paths), len(support)))
    for row, path in enumerate(paths):
        for v in path:
            matrix[row, position[v]] += 1
    return matrix


def _solve_lp(matrix: np.ndarray, costs: np.ndarray, method: str = 'highs') -> np.ndarray:
    result = linprog(costs, A_ub=-matrix, b_ub=-np.ones(matrix.shape[0]),
                     bounds=(0, None), method=method)
    if result.status != 0:
        raise ArithmeticError(f"linear program failed: {result.message}")
    return np.maximum(result.x, 0)


def _dual_density(matrix: np.ndarray, mu: np.ndarray, p: float) -> np.ndarray:
    # stationarity of sum f^p - mu.(Af - 1) in f
    return (matrix.T @ mu / p) ** (1 / (p - 1))


def _initial_dual(matrix: np.ndarray, p: float) -> np.ndarray:
    # exact for a single path, damped where paths share vertices
    lengths = matrix.sum(axis=1)
    crowding = max(1.0, matrix.sum(axis=0).max())
    return p * lengths ** (1 - p) / crowding


def _dual_objective(mu: np.ndarray, matrix: np.ndarray, p: float) -> tuple[float, np.ndarray]:
    """Negated concave dual sum(mu) - (p-1)·sum((A^T mu / p)^(p/(p-1))) and its gradient"""
    load = matrix.T @ mu / p
    with np.errstate(over="ignore"):
        density = load ** (1 / (p - 1))
        value = mu.sum() - (p - 1) * np.sum(load ** (p / (p - 1)))
    return -value, matrix @ density - 1


def _solve_convex(matrix: np.ndarray, p: float, warm: Optional[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """min sum f^p subject to A f >= 1, f >= 0 for p > 1, through its bound constrained dual"""
    mu = _initial_dual(matrix, p) if warm is None else warm
    # a stalled line search is retried once from a fresh curvature memory
    for _ in range(2):
        result = minimize(_dual_objective, mu, args=(matrix, p), jac=True, method='L-BFGS-B',
                          bounds=[(0, None)] * matrix.shape[0],
                          options={'ftol': 1e-16, 'gtol': 1e-13, 'maxiter': 20000, 'maxls': 60})
        mu = np.maximum(result.x, 0)
        residual = np.where(mu > 0, result.jac, np.minimum(result.jac, 0))
        if result.success or np.abs(residual).max() < STATIONARITY_TOL:
            break
        logger.debug("dual solve stopped early: %s", result.message)
    return _dual_density(matrix, mu, p), mu


def _solve_concave(matrix: np.ndarray, p: float, restarts: int, seed: int) -> np.ndarray:
    """Heuristic for p < 1: reweighted linear programs from several starting weights.
    Each step minimizes the linearization of sum f^p, which never increases the objective."""
    rng = np.random.default_rng(seed)
    starts = [np.ones(matrix.shape[1])] + [rng.uniform(0.1, 1.0, matrix.shape[1]) for _ in range(restarts)]
    best, best_value = None, math.inf
    for costs in starts:
        density = _solve_lp(matrix, costs)
        value = np.sum(density ** p)
        for _ in range(REWEIGHT_STEPS):
            candidate = _solve_lp(matrix, p * (density + 1e-9) ** (p - 1))
            candidate_value = np.sum(candidate ** p)
            if candidate_value >= value - 1e-15:
                break
            density, value = candidate, candidate_value
        if value < best_value:
            best, best_value = density, value
    return best


def _inner_solve(paths: list[tuple[int, ...]], p: float, warm: Optional[np.ndarray],
                 restarts: int, seed: int) -> tuple[list[int], np.ndarray, Optional[np.ndarray]]:
    support = sorted({v for path in paths for v in path})
    matrix = _constraint_matrix(paths, support)
    dual = None
    if p == 1:
        density = _solve_lp(matrix, np.ones(len(support)))
    elif p > 1:
        density, dual = _solve_convex(matrix, p, warm)
    else:
        density = _solve_concave(matrix, p, restarts, seed)
    # make the active constraints hold exactly
    lightest = (matrix @ density).min()
    if 0 < lightest < 1:
        density = density / lightest
    return support, density, dual


def solve_modulus(problem: ModulusProblem, tol: float = DEFAULT_TOL, feasibility_tol: float = FEASIBILITY_TOL,
                  max_iterations: int = 10000, restarts: int = 4, seed: int = 0) -> ModulusResult:
    """Solves the p-modulus problem by constraint generation.

    Args:
        problem (ModulusProblem): graph, E, F and p > 0. p < 1 is solved heuristically.
        tol (float): stop once the lightest path weighs at least 1 - tol. Defaults to 1e-5.
        feasibility_tol (float): slack used to report tight active paths. Defaults to 1e-7.
        max_iterations (int): bound on the constraint generation rounds
        restarts (int): random restarts of the p < 1 heuristic, spent once the
            single start heuristic has converged
        seed (int): seed of the p < 1 heuristic

    Returns:
        ModulusResult: value, admissible density, tight paths, status
    """
    if tol <= 0:
        raise InvalidInputError(f"tol must be positive, got {tol}")
    p = float(problem.p)
    if p <= 0:
        raise InvalidInputError(f"p must be positive to solve, got {p}")
    heuristic = p < HEURISTIC_P
    if heuristic:
        logger.debug("p = %.6g < 1: the modulus is computed heuristically", p)

    vertices = problem.graph.vertices
    oracle = oracle_graph(problem.graph, problem.E)
    weights = {v: 0.0 for v in vertices}
    weight, path = lightest_path(oracle, problem.F, weights)
    if path is None:
        return disconnected_result(vertices)

    active: list[tuple[int, ...]] = [path]
    seen = {path}
    dual = None
    spread = 0 if heuristic else restarts
    iterations = 0
    while True:
        iterations += 1
        support, density, dual = _inner_solve(active, p, dual, spread, seed)
        weights = dict.fromkeys(vertices, 0.0)
        weights.update(zip(support, density.tolist()))
        reached = lightest_paths(oracle, problem.F, weights)
        weight = reached[0][0]
        if weight >= 1 - tol:
            if spread < restarts:
                spread = restarts
                continue
            break
        fresh = [path for w, path in reached if w < 1 - tol and path not in seen][:SEPARATION_BATCH]
        if not fresh:
            logger.debug("separation oracle returned active paths only (weight %.12g), stopping", weight)
            break
        if iterations >= max_iterations:
            logger.warning("constraint generation stopped after %d iterations (lightest path %.6g)",
                           iterations, weight)
            break
        active.extend(fresh)
        seen.update(fresh)
        if dual is not None:
            dual = np.append(dual, np.zeros(len(fresh)))

    # rescale to a truly admissible density, then clamp at 1 (still admissible)
    scale = 1 / weight if 0 < weight < 1 else 1.0
    density = {v: min(1.0, w * scale) for v, w in weights.items()}
    value = float(sum(w ** p for w in density.values() if w > 0))
    tight = [path for path in active if sum(density[v] for v in path) <= 1 + math.sqrt(feasibility_tol)]
    logger.debug("modulus %.12g after %d iterations, %d active paths", value, iterations, len(active))
    return ModulusResult(value, density, tight, ModulusStatus.SOLVED, iterations, heuristic)


### brute force oracle ###

def enumerate_paths(problem: ModulusProblem, max_paths: Optional[int] = None) -> list[tuple[int, ...]]:
    """All simple E to F paths of the graph, sorted. Raises BudgetError past <max_paths>."""
    graph = problem.graph.graph
    paths = []
    for e in problem.E:
        for f in problem.F:
            found = [(e,)] if e == f else (tuple(path) for path in nx.all_simple_paths(graph, e, f))
            for path in found:
                paths.append(path)
                if max_paths is not None and len(paths) > max_paths:
                    raise BudgetError(f"more than {max_paths} simple paths")
    return sorted(set(paths))


def minimal_vertex_sets(paths: Iterable[Sequence[int]]) -> list[tuple[int, ...]]:
    """Vertex sets of the paths with every superset dropped (its constraint is implied)"""
    sets = sorted({frozenset(path) for path in paths}, key=lambda s: (len(s), sorted(s)))
    minimal: list[frozenset] = []
    for candidate in sets:
        if not any(kept <= candidate for kept in minimal):
            minimal.append(candidate)
    return [tuple(sorted(s)) for s in minimal]


def _incidence(sets: Sequence[Sequence[int]], support: Sequence[int]) -> np.ndarray:
    position = {v: i for i, v in enumerate(support)}
    incidence = np.zeros((len(sets), len(support)))
    for row, members in enumerate(sets):
        incidence[row, [position[v] for v in members]] = 1
    return incidence


def _primal_minimum(incidence: np.ndarray, p: float) -> np.ndarray:
    """min sum f^p over 0 <= f <= 1 with incidence·f >= 1, by sequential quadratic programming.
    Starts from the constant density that makes the shortest set weigh 1."""
    density = np.full(incidence.shape[1], 1 / incidence.sum(axis=1).min())
    constraint = {'type': 'ineq', 'fun': lambda f: incidence @ f - 1, 'jac': lambda f: incidence}
    for _ in range(2):
        result = minimize(lambda f: np.sum(np.maximum(f, 0) ** p), density,
                          jac=lambda f: p * np.maximum(f, 0) ** (p - 1),
                          method='SLSQP', bounds=[(0, 1)] * incidence.shape[1],
                          constraints=[constraint], options={'ftol': 1e-15, 'maxiter': 2000})
        density = np.clip(result.x, 0, 1)
    if not result.success:
        logger.debug("brute force SLSQP: %s", result.message)
    return density


def brute_force_modulus(problem: ModulusProblem, max_vertices: int = BRUTE_FORCE_MAX_VERTICES,
                        max_paths: int = BRUTE_FORCE_MAX_PATHS) -> ModulusResult:
    """Exact modulus over every simple E to F path, for small instances only.

    Works on the primal directly, with one constraint per minimal path vertex
    set: p = 1 is a linear program solved by the dual simplex method, p > 1 is
    solved by SLSQP.

    Args:
        problem (ModulusProblem): the instance, p >= 1
        max_vertices (int): instances with at most this many vertices are always accepted
        max_paths (int): larger instances are accepted with at most this many simple paths

    Returns:
        ModulusResult: value, density and the tight paths
    """
    p = float(problem.p)
    if p < 1:
        raise InvalidInputError(f"brute force modulus needs p >= 1, got {p}")
    vertices = problem.graph.vertices
    limit = None if len(vertices) <= max_vertices else max_paths
    try:
        paths = enumerate_paths(problem, limit)
    except BudgetError as err:
        raise BudgetError(f"instance too large for brute force: {len(vertices)} vertices and {err}") from err
    if not paths:
        return disconnected_result(vertices)

    constraints = minimal_vertex_sets(paths)
    support = sorted({v for c in constraints for v in c})
    incidence = _incidence(constraints, support)
    if p == 1:
        result = linprog(np.ones(len(support)), A_ub=-incidence, b_ub=-np.ones(len(constraints)),
                         bounds=(0, 1), method='highs-ds')
        if result.status != 0:
            raise ArithmeticError(f"linear program failed: {result.message}")
        density = np.clip(result.x, 0, 1)
    else:
        density = _primal_minimum(incidence, p)
    lightest = (incidence @ density).min()
    if 0 < lightest < 1:
        density = np.minimum(density / lightest, 1.0)

    values = dict.fromkeys(vertices, 0.0)
    values.update(zip(support, density.tolist()))
    value = float(sum(w ** p for w in values.values() if w > 0))
    tight = [path for path in paths if sum(values[v] for v in path) <= 1 + 1e-6]
    return ModulusResult(value, values, tight, ModulusStatus.SOLVED, 1)
