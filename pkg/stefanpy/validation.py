"""Fast invariant suite behind `stefanpy validate`

Properties form a prerequisite graph: a property whose prerequisite did not
pass is reported as skipped rather than run. The graph keeps an incremental
topological order, so properties run in an order compatible with every edge
added so far, and an edge that would close a cycle is refused.
"""
import json
import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, Generic, List, Optional, Set, TypeVar

import numpy as np
from graphviz import Digraph

from .limit import step_deterministic
from .noise import (CoefficientFamily, ModeIndex, NoiseSpec, make_family,
                    structure_identity_check)
from .solver import (SolverConfig, divergence_orthogonality_check, energy_inequality_check,
                     simulate_path, step_ito)
from .spectral import ScalarField, TorusGrid, inner_product

log = logging.getLogger(__name__)


class DuplicatePropertyException(Exception):
    """Graph already contains a property with this name"""
    pass


class PropertyNotFoundException(Exception):
    """Property is missing from the graph"""
    pass


class CyclicPrerequisiteException(Exception):
    """Added prerequisite would make a property depend on itself"""
    pass


NodeT = TypeVar('NodeT')


class PropertyGraph(Generic[NodeT]):
    """Prerequisite edges between properties with an incrementally maintained order

    Only the region between the two endpoints of a new edge is visited and
    reordered; the order values of that region are reassigned among themselves.
    """

    def __init__(self):
        # node -> order value, prerequisites get lower values than dependents
        self._ordering: Dict[NodeT, int] = dict()
        self._edges: Dict[NodeT, Set[NodeT]] = dict()
        self._backward_edges: Dict[NodeT, Set[NodeT]] = dict()

    def __contains__(self, node: NodeT) -> bool:
        return node in self._ordering

    def __len__(self):
        return len(self._ordering)

    def add_node(self, node: NodeT):
        if node in self._ordering:
            raise DuplicatePropertyException(node)

        self._edges[node] = set()
        self._backward_edges[node] = set()
        self._ordering[node] = max(self._ordering.values(), default=0) + 1

    def add_edge(self, before: NodeT, after: NodeT) -> bool:
        """Require `before` to run ahead of `after`

        Returns False if the edge already existed.
        """
        if before not in self._ordering:
            raise PropertyNotFoundException(before)
        if after not in self._ordering:
            raise PropertyNotFoundException(after)
        if before == after:
            raise CyclicPrerequisiteException(f"{before} cannot be its own prerequisite")
        if after in self._edges[before]:
            return False

        upper_bound = self._ordering[before]
        lower_bound = self._ordering[after]

        if lower_bound < upper_bound:
            visited: Dict[NodeT, bool] = defaultdict(bool)
            change_forward: Set[NodeT] = set()
            change_backward: Set[NodeT] = set()

            # raises before any edge is stored, so a refused edge leaves the graph intact
            self._dfs_forward(after, visited, change_forward, upper_bound, before)
            self._dfs_backward(before, visited, change_backward, lower_bound)
            self._reorder(change_forward, change_backward)

        self._edges[before].add(after)
        self._backward_edges[after].add(before)
        return True

    def _dfs_forward(self, node, visited, output, upper_bound, origin):
        visited[node] = True
        output.add(node)

        for child in self._edges[node]:
            order_value = self._ordering[child]
            if order_value == upper_bound:
                raise CyclicPrerequisiteException(
                    f"{origin} -> {node} would close a prerequisite cycle")
            if not visited[child] and order_value < upper_bound:
                self._dfs_forward(child, visited, output, upper_bound, origin)

    def _dfs_backward(self, node, visited, output, lower_bound):
        visited[node] = True
        output.add(node)

        for parent in self._backward_edges[node]:
            if not visited[parent] and lower_bound < self._ordering[parent]:
                self._dfs_backward(parent, visited, output, lower_bound)

    def _reorder(self, change_forward, change_backward):
        backward = sorted(change_backward, key=self._ordering.__getitem__)
        forward = sorted(change_forward, key=self._ordering.__getitem__)

        nodes = backward + forward
        values = sorted(self._ordering[node] for node in nodes)
        for node, value in zip(nodes, values):
            self._ordering[node] = value

    def prerequisites(self, node: NodeT) -> Set[NodeT]:
        if node not in self._ordering:
            raise PropertyNotFoundException(node)
        return set(self._backward_edges[node])

    def descendants(self, node: NodeT) -> List[NodeT]:
        """Every property that transitively requires `node`, in run order"""
        if node not in self._ordering:
            raise PropertyNotFoundException(node)

        seen: Set[NodeT] = set()
        stack = [node]
        while stack:
            current = stack.pop()
            for child in self._edges[current]:
                if child not in seen:
                    seen.add(child)
                    stack.append(child)
        return sorted(seen, key=self._ordering.__getitem__)

    def order(self, reverse: bool = False) -> List[NodeT]:
        return sorted(self._ordering, key=self._ordering.__getitem__, reverse=reverse)

    def edges(self):
        for before in self.order():
            for after in sorted(self._edges[before], key=self._ordering.__getitem__):
                yield before, after


@dataclass
class Measurement:
    value: float
    threshold: float
    detail: str = ''

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value)) and self.value <= self.threshold


@dataclass
class PropertyResult:
    name: str
    status: str
    value: Optional[float] = None
    threshold: Optional[float] = None
    detail: str = ''
    seconds: float = 0.0

    def as_dict(self) -> dict:
        return {'name': self.name, 'status': self.status, 'value': self.value,
                'threshold': self.threshold, 'detail': self.detail}


@dataclass
class SuiteReport:
    results: List[PropertyResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.status == 'pass' for r in self.results)

    @property
    def failed(self) -> List[str]:
        return [r.name for r in self.results if r.status != 'pass']

    def to_json(self) -> str:
        return json.dumps({'passed': self.passed, 'properties': [r.as_dict() for r in self.results]},
                          sort_keys=True, indent=2)

    def to_text(self) -> str:
        lines = []
        for r in self.results:
            if r.status == 'skipped':
                lines.append(f"SKIP  {r.name:30s} {r.detail}")
                continue
            margin = f"{r.value:.3e} <= {r.threshold:.3e}" if r.value is not None else ''
            lines.append(f"{r.status.upper():5s} {r.name:30s} {margin}  {r.detail}".rstrip())
        return "\n".join(lines)


class PropertySuite:
    def __init__(self):
        self.graph: PropertyGraph[str] = PropertyGraph()
        self.checks: Dict[str, Callable[[], Measurement]] = dict()
        self.descriptions: Dict[str, str] = dict()

    def add(self, name: str, check: Callable[[], Measurement], description: str = '',
            requires: List[str] = ()):
        self.graph.add_node(name)
        self.checks[name] = check
        self.descriptions[name] = description
        for prerequisite in requires:
            self.graph.add_edge(prerequisite, name)

    def run(self, only: Optional[List[str]] = None) -> SuiteReport:
        report = SuiteReport()
        blocked_by: Dict[str, List[str]] = defaultdict(list)

        for name in self.graph.order():
            if only is not None and name not in only:
                continue

            if name in blocked_by:
                report.results.append(PropertyResult(
                    name, 'skipped',
                    detail=f"depends on {', '.join(blocked_by[name])}, which did not pass"))
                continue

            start = time.perf_counter()
            try:
                m = self.checks[name]()
            except Exception as e:
                log.exception("property %s raised", name)
                result = PropertyResult(name, 'error', detail=f"{type(e).__name__}: {e}")
            else:
                result = PropertyResult(name, 'pass' if m.passed else 'fail',
                                        float(m.value), float(m.threshold), m.detail)
            result.seconds = time.perf_counter() - start
            if result.status != 'pass':
                for dependent in self.graph.descendants(name):
                    blocked_by[dependent].append(name)
            log.info("%s: %s (%.1fs)", name, result.status, result.seconds)
            report.results.append(result)

        return report

    def digraph(self, report: Optional[SuiteReport] = None) -> Digraph:
        colors = {'pass': 'palegreen', 'fail': 'salmon', 'error': 'salmon', 'skipped': 'lightgrey'}
        status = {r.name: r.status for r in report.results} if report is not None else {}

        g = Digraph(name='properties')
        g.attr(rankdir='LR')
        for name in self.graph.order():
            attrs = {'style': 'filled', 'fillcolor': colors[status[name]]} if name in status else {}
            g.node(name, tooltip=self.descriptions[name], **attrs)
        for before, after in self.graph.edges():
            g.edge(before, after)
        return g


# Property checks

def broken_symmetry_family(N: int) -> CoefficientFamily:
    """Flat family with one coefficient of the outer shell doubled, renormalized"""
    family = make_family(N)
    alpha = np.array(family.alpha)
    alpha[-1] *= 2.0
    alpha /= np.sqrt(np.sum(alpha ** 2 / family.norms2))
    return CoefficientFamily(N, family.modes, alpha, validate=False)


def check_structure_identity(family_for: Callable[[int], CoefficientFamily] = make_family,
                             radii=range(1, 17), points: int = 100, seed: int = 0) -> Measurement:
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-0.5, 0.5, size=(points, 2))
    target = 0.5 * np.eye(2)
    worst = 0.0
    for N in radii:
        family = family_for(N)
        for x in xs:
            worst = max(worst, float(np.max(np.abs(structure_identity_check(family, x) - target))))
    return Measurement(worst, 1e-10, f"N in {radii.start}..{radii.stop - 1}, {points} points")


def check_coefficient_constraints(max_N: int = 64) -> Measurement:
    sups = []
    worst = 0.0
    for N in range(1, max_N + 1):
        family = make_family(N)
        worst = max(worst, abs(family.normalization() - 1.0))
        sups.append(family.sup_norm)

    # brute-force lattice sums: |k|^2 in {1} for N=1 and {1, 2, 4} for N=2
    exact = abs(sups[0] - 0.5) + abs(sups[1] - 7 ** -0.5)
    increasing = sum(1 for a, b in zip(sups, sups[1:]) if b >= a)
    value = worst + exact + increasing
    return Measurement(value, 1e-12,
                       f"normalization err {worst:.1e}, c_1/c_2 err {exact:.1e}, "
                       f"{increasing} non-decreasing steps")


def check_divergence_orthogonality(n: int = 64, N: int = 8) -> Measurement:
    grid = TorusGrid(n=n)
    noise = NoiseSpec(make_family(N), grid)
    cfg = SolverConfig(grid, 1e-4, 1e-4, noise=noise)

    worst = 0.0
    for j in (ModeIndex(1, 0), ModeIndex(2, -1), ModeIndex(3, 2)):
        X = ScalarField.from_function(
            grid, lambda x1, x2: 0.6 + 1.5 * np.cos(2 * np.pi * (j.k1 * x1 + j.k2 * x2)))
        worst = max(worst, float(np.max(np.abs(divergence_orthogonality_check(X, cfg)))))
    return Measurement(worst, 1e-8, f"n={n}, |k| <= {N}")


def _mixed_phase(grid: TorusGrid) -> ScalarField:
    return ScalarField.from_function(
        grid, lambda x1, x2: 0.4 + 1.2 * np.cos(2 * np.pi * x1) + 0.6 * np.sin(2 * np.pi * (x1 + x2)))


def check_energy_inequality(n: int = 32, N: int = 4, dt: float = 1e-4, T: float = 0.01,
                            seeds=range(3)) -> Measurement:
    grid = TorusGrid(n=n)
    x0 = _mixed_phase(grid)
    worst = -np.inf
    tolerance = np.inf
    for seed in seeds:
        cfg = SolverConfig(grid, dt, T, noise=NoiseSpec(make_family(N), grid, seed=seed))
        _, diag = simulate_path(x0, cfg, replica=0)
        report = energy_inequality_check(diag, cfg)
        worst = max(worst, report.worst)
        tolerance = report.tolerance
    return Measurement(worst, tolerance, f"{len(seeds)} seeds, n={n}, N={N}")


def check_ito_stratonovich(n: int = 32, N: int = 4, dt: float = 1e-4, T: float = 0.01,
                           replicas: int = 64, seed: int = 11) -> Measurement:
    grid = TorusGrid(n=n)
    x0 = _mixed_phase(grid)
    noise = NoiseSpec(make_family(N), grid, seed=seed)
    ito = SolverConfig(grid, dt, T, noise=noise, scheme='ito_imex', stride=int(round(T / dt)))
    strat = ito.with_scheme('stratonovich_midpoint')

    def energies(cfg):
        return np.array([inner_product(t.final, t.final)
                         for t, _ in (simulate_path(x0, cfg, m) for m in range(replicas))])

    a, b = energies(ito), energies(strat)
    gap = abs(a.mean() - b.mean())
    se = np.sqrt(a.var(ddof=1) / replicas + b.var(ddof=1) / replicas)
    allowed = max(3 * se, 10 * dt * inner_product(x0, x0))
    return Measurement(gap, allowed, f"{replicas} replicas, means {a.mean():.6g} / {b.mean():.6g}")


def check_deterministic_equivalence(n: int = 32, dt: float = 1e-4, steps: int = 20) -> Measurement:
    grid = TorusGrid(n=n)
    cfg = SolverConfig(grid, dt, steps * dt)
    limit_cfg = cfg.deterministic()
    X = Y = _mixed_phase(grid)
    worst = 0.0
    for k in range(steps):
        X = step_ito(X, k, 0, cfg)
        Y = step_deterministic(Y, limit_cfg)
        worst = max(worst, float(np.max(np.abs(X.values - Y.values))))
    return Measurement(worst, 0.0, "alpha = 0 against the limit stepper, bitwise")


def check_mean_conservation(n: int = 32, N: int = 4, dt: float = 1e-4, steps: int = 20) -> Measurement:
    grid = TorusGrid(n=n)
    cfg = SolverConfig(grid, dt, steps * dt, noise=NoiseSpec(make_family(N), grid, seed=3))
    X = _mixed_phase(grid)
    worst = 0.0
    for k in range(steps):
        Y = step_ito(X, k, 0, cfg)
        worst = max(worst, abs(Y.mean - X.mean))
        X = Y
    return Measurement(worst, 1e-12, f"{steps} steps, F = 0")


def default_suite(broken_symmetry: bool = False) -> PropertySuite:
    family_for = broken_symmetry_family if broken_symmetry else make_family

    suite = PropertySuite()
    suite.add('coefficient_constraints', check_coefficient_constraints,
              "sum alpha_k^2/|k|^2 = 1 and c_N decreasing")
    suite.add('structure_identity', lambda: check_structure_identity(family_for),
              "sum alpha_k^2 sigma_k (x) sigma_k = I/2", requires=['coefficient_constraints'])
    suite.add('divergence_orthogonality', check_divergence_orthogonality,
              "int sigma_k . grad Gamma_tilde(X) = 0")
    suite.add('mean_conservation', check_mean_conservation, "steps preserve the spatial mean")
    suite.add('deterministic_equivalence', check_deterministic_equivalence,
              "zero noise reproduces the limit stepper")
    suite.add('energy_inequality', check_energy_inequality,
              "pathwise L2 energy inequality",
              requires=['structure_identity', 'divergence_orthogonality', 'mean_conservation'])
    suite.add('ito_stratonovich_agreement', check_ito_stratonovich,
              "Ito corrector matches the midpoint transport scheme in law",
              requires=['structure_identity', 'deterministic_equivalence'])
    return suite
