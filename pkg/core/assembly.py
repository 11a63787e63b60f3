"""Global condensed system: scatter of per-edge blocks, Dirichlet lifting, point loads, recovery."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import norm as sparse_norm

from core.beam_local import (CondensedBlock, FieldCallback, LocalSolution, LocalSolverFactorization,
                             PolynomialSpace, assemble_local_solver, condense, local_solve,
                             numerical_fluxes)
from core.config import StabilizationRule
from core.errors import DimensionError, InternalConsistencyError
from core.network import Network

logger = logging.getLogger(__name__)

# edge id -> (f_e, g_e), callbacks of arc length returning global-frame vectors
EdgeLoads = Dict[int, Tuple[Optional[FieldCallback], Optional[FieldCallback]]]

SYMMETRY_TOL = 1e-11


class DofMap:
    """Free node -> first of its 6 global dofs (u components 0..2, r components 3..5)."""

    def __init__(self, net: Network):
        self.free_nodes: List[int] = net.free_nodes
        self.offsets: Dict[int, int] = {node_id: 6 * k for k, node_id in enumerate(self.free_nodes)}
        self.prescribed: Dict[int, np.ndarray] = {n.id: n.prescribed for n in net.nodes if n.is_dirichlet}

    @property
    def size(self) -> int:
        return 6 * len(self.free_nodes)

    def is_free(self, node_id: int) -> bool:
        return node_id in self.offsets

    def edge_dofs(self, nodes: Tuple[int, int]) -> np.ndarray:
        """Global dofs of the 12 edge-local hybrid entries, -1 where the node is Dirichlet."""
        out = np.full(12, -1, dtype=int)
        for which, node_id in enumerate(nodes):
            if node_id in self.offsets:
                out[6 * which:6 * which + 6] = self.offsets[node_id] + np.arange(6)
        return out

    def edge_prescribed(self, nodes: Tuple[int, int]) -> np.ndarray:
        out = np.zeros(12)
        for which, node_id in enumerate(nodes):
            if node_id in self.prescribed:
                out[6 * which:6 * which + 6] = self.prescribed[node_id]
        return out

    def expand(self, x: np.ndarray, num_nodes: int) -> np.ndarray:
        """Per-node 6-vectors: free values from x, prescribed data at Dirichlet nodes."""
        hybrid = np.zeros((num_nodes, 6))
        for node_id, offset in self.offsets.items():
            hybrid[node_id] = x[offset:offset + 6]
        for node_id, values in self.prescribed.items():
            hybrid[node_id] = values
        return hybrid

    def restrict(self, hybrid: np.ndarray) -> np.ndarray:
        x = np.zeros(self.size)
        for node_id, offset in self.offsets.items():
            x[offset:offset + 6] = hybrid[node_id]
        return x


@dataclass
class CondensedSystem:
    """Sparse SPD matrix on free-node dofs plus right-hand side and cached local solvers."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofmap: DofMap
    network: Network
    space: PolynomialSpace
    rule: StabilizationRule
    factorizations: List[LocalSolverFactorization]
    blocks: List[CondensedBlock]
    loads: EdgeLoads = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.dofmap.size

    @property
    def p(self) -> int:
        return self.space.degree

    def __repr__(self) -> str:
        return f"CondensedSystem(dofs={self.size}, nnz={self.matrix.nnz}, p={self.p})"


@dataclass
class GlobalSolution:
    """Nodal hybrid values (including Dirichlet data) and the recovered edgewise fields."""

    hybrid: np.ndarray
    edgewise: List[LocalSolution]
    system: CondensedSystem

    def nodal(self, node_id: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.hybrid[node_id, :3], self.hybrid[node_id, 3:]

    def edge_hybrid(self, edge_id: int) -> np.ndarray:
        k, l = self.system.network.edges[edge_id].nodes
        return np.concatenate([self.hybrid[k], self.hybrid[l]])

    def trace_mismatch(self) -> float:
        """max over edge endpoints of |u_e(n) - u_n| + |r_e(n) - r_n|."""
        worst = 0.0
        for edge, solution in zip(self.system.network.edges, self.edgewise):
            for which, node_id in enumerate(edge.nodes):
                gap = (np.linalg.norm(solution.endpoint("u", which) - self.hybrid[node_id, :3])
                       + np.linalg.norm(solution.endpoint("r", which) - self.hybrid[node_id, 3:]))
                worst = max(worst, float(gap))
        return worst

    def flux_balance_residual(self) -> Dict[int, float]:
        """Per free node: |sum of numerical force fluxes - f_n| + |sum of moment fluxes - g_n|."""
        net = self.system.network
        totals = {node_id: np.zeros(6) for node_id in net.free_nodes}
        for fact, solution in zip(self.system.factorizations, self.edgewise):
            edge = fact.edge
            fluxes = numerical_fluxes(fact, solution, self.edge_hybrid(edge.id))
            for which, node_id in enumerate(edge.nodes):
                if node_id in totals:
                    totals[node_id] += fluxes[6 * which:6 * which + 6]
        residual = {}
        for node_id, total in totals.items():
            node = net.nodes[node_id]
            residual[node_id] = float(np.linalg.norm(total[:3] - node.force)
                                      + np.linalg.norm(total[3:] - node.moment))
        return residual

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": i, "u": self.hybrid[i, :3].tolist(), "r": self.hybrid[i, 3:].tolist()}
                      for i in range(self.hybrid.shape[0])],
            "edges": [{"id": e, **s.to_dict()} for e, s in enumerate(self.edgewise)],
        }


def _edge_blocks(net: Network, space: PolynomialSpace, rule: StabilizationRule, loads: EdgeLoads,
                 threads: int) -> List[Tuple[LocalSolverFactorization, CondensedBlock]]:
    def work(edge):
        fact = assemble_local_solver(edge, space, rule.tau(edge.length))
        f_e, g_e = loads.get(edge.id, (None, None))
        return fact, condense(fact, f_e, g_e)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, net.edges))
    return [work(edge) for edge in net.edges]


def assemble(net: Network, p: int, rule: StabilizationRule, loads: Optional[EdgeLoads] = None,
             threads: int = 1) -> CondensedSystem:
    """Assemble K_ff x = -b - K_fd d - f_n on the free nodes.

    Args:
        net: validated network; Dirichlet data and point loads are read from its nodes
        p: polynomial degree of the local spaces
        rule: stabilization tau_e = c * h_e**s
        loads: distributed edge loads keyed by edge id
        threads: workers for the per-edge local solves
    """
    loads = dict(loads or {})
    space = PolynomialSpace(p)
    rule.check_advisory(e.length for e in net.edges)
    dofmap = DofMap(net)
    pairs = _edge_blocks(net, space, rule, loads, threads)

    rows, cols, vals = [], [], []
    rhs = np.zeros(dofmap.size)
    # scatter by edge id, then local index
    for fact, block in pairs:
        edge = fact.edge
        dofs = dofmap.edge_dofs(edge.nodes)
        free = dofs >= 0
        fixed = ~free
        if free.any():
            sub = block.matrix[np.ix_(free, free)]
            r, c = np.meshgrid(dofs[free], dofs[free], indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(sub.ravel())
            lifted = block.load[free]
            if fixed.any():
                lifted = lifted + block.matrix[np.ix_(free, fixed)] @ dofmap.edge_prescribed(edge.nodes)[fixed]
            np.subtract.at(rhs, dofs[free], lifted)

    for node_id, offset in dofmap.offsets.items():
        node = net.nodes[node_id]
        rhs[offset:offset + 3] -= node.force
        rhs[offset + 3:offset + 6] -= node.moment

    n = dofmap.size
    if rows:
        matrix = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(n, n)).tocsr()
    else:
        matrix = sp.csr_matrix((n, n))
    matrix.sum_duplicates()
    _check_symmetric(matrix)

    system = CondensedSystem(matrix=matrix, rhs=rhs, dofmap=dofmap, network=net, space=space, rule=rule,
                             factorizations=[f for f, _ in pairs], blocks=[b for _, b in pairs], loads=loads)
    logger.info(f"Assembled condensed system: {n} dofs, {matrix.nnz} nonzeros (p={p}, "
                f"s={rule.s}, c={rule.c:g})")
    return system


def assemble_unconstrained(net: Network, p: int, rule: StabilizationRule, threads: int = 1) -> sp.csr_matrix:
    """Condensed matrix over all 6N nodal dofs, Dirichlet conditions ignored."""
    space = PolynomialSpace(p)
    pairs = _edge_blocks(net, space, rule, {}, threads)
    rows, cols, vals = [], [], []
    for fact, block in pairs:
        k, l = fact.edge.nodes
        dofs = np.concatenate([6 * k + np.arange(6), 6 * l + np.arange(6)])
        r, c = np.meshgrid(dofs, dofs, indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(block.matrix.ravel())
    n = 6 * net.num_nodes
    matrix = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(n, n)).tocsr()
    matrix.sum_duplicates()
    return matrix


def _check_symmetric(matrix: sp.csr_matrix) -> None:
    if matrix.shape[0] == 0:
        return
    scale = sparse_norm(matrix)
    asymmetry = sparse_norm(matrix - matrix.T)
    if asymmetry > SYMMETRY_TOL * max(scale, 1.0):
        raise InternalConsistencyError(f"assembled matrix asymmetric ({asymmetry:.3e} vs {scale:.3e})")


def apply(system: CondensedSystem, x) -> np.ndarray:
    """y = A x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (system.size,):
        raise DimensionError(f"expected vector of length {system.size}, got shape {x.shape}")
    return system.matrix @ x


def recover(system: CondensedSystem, x, loads: Optional[EdgeLoads] = None) -> GlobalSolution:
    """Merge x with the Dirichlet data and recompute every edge's local solution."""
    x = np.asarray(x, dtype=float)
    if x.shape != (system.size,):
        raise DimensionError(f"expected vector of length {system.size}, got shape {x.shape}")
    loads = system.loads if loads is None else loads
    net = system.network
    hybrid = system.dofmap.expand(x, net.num_nodes)
    edgewise = []
    for fact in system.factorizations:
        k, l = fact.edge.nodes
        f_e, g_e = loads.get(fact.edge_id, (None, None))
        edgewise.append(local_solve(fact, np.concatenate([hybrid[k], hybrid[l]]), f_e, g_e))
    logger.debug(f"Recovered {len(edgewise)} edge solutions")
    return GlobalSolution(hybrid=hybrid, edgewise=edgewise, system=system)


def flux_form(system: CondensedSystem, first: np.ndarray, second: np.ndarray) -> float:
    """Edge-by-edge bilinear form -sum_e sum_n (numerical fluxes of first) . second, zero loads.

    Both arguments are per-node (N, 6) hybrid values.
    """
    total = 0.0
    for fact in system.factorizations:
        k, l = fact.edge.nodes
        a = np.concatenate([first[k], first[l]])
        b = np.concatenate([second[k], second[l]])
        fluxes = numerical_fluxes(fact, local_solve(fact, a), a)
        total -= float(fluxes @ b)
    return total
