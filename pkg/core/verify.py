"""Manufactured-solution harness on the cross network: sources, L2 errors, convergence and p-sweeps."""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from core.assembly import CondensedSystem, EdgeLoads, GlobalSolution, assemble, recover
from core.beam_local import FieldCallback, gauss_rule
from core.config import SolverConfig, StabilizationRule
from core.errors import InternalConsistencyError
from core.network import Edge, Network, cross_network, refine_uniform
from core.solver import DENSE_DIRECT_LIMIT, SolveReport, direct_solve, make_preconditioner, pcg

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
FD_TOL = 1e-6
FD_POINTS = 5
STUDY_TOL = 1e-12

VectorField = Callable[[np.ndarray], np.ndarray]
TensorField = Callable[[np.ndarray], np.ndarray]


@dataclass
class ExactSolution:
    """Smooth global fields u, r with Jacobians J[c, a] = d u_c / d X_a and Hessians H[c, a, b]."""

    u: VectorField
    r: VectorField
    jac_u: TensorField
    jac_r: TensorField
    hess_u: TensorField
    hess_r: TensorField
    name: str = "exact"


def cross_solution() -> ExactSolution:
    """u = (0, cos pi y, cos pi x), r = (0, sin pi x, sin pi y)."""
    pi = math.pi

    def u(X):
        return np.array([0.0, math.cos(pi * X[1]), math.cos(pi * X[0])])

    def r(X):
        return np.array([0.0, math.sin(pi * X[0]), math.sin(pi * X[1])])

    def jac_u(X):
        J = np.zeros((3, 3))
        J[1, 1] = -pi * math.sin(pi * X[1])
        J[2, 0] = -pi * math.sin(pi * X[0])
        return J

    def jac_r(X):
        J = np.zeros((3, 3))
        J[1, 0] = pi * math.cos(pi * X[0])
        J[2, 1] = pi * math.cos(pi * X[1])
        return J

    def hess_u(X):
        H = np.zeros((3, 3, 3))
        H[1, 1, 1] = -pi ** 2 * math.cos(pi * X[1])
        H[2, 0, 0] = -pi ** 2 * math.cos(pi * X[0])
        return H

    def hess_r(X):
        H = np.zeros((3, 3, 3))
        H[1, 0, 0] = -pi ** 2 * math.sin(pi * X[0])
        H[2, 1, 1] = -pi ** 2 * math.sin(pi * X[1])
        return H

    return ExactSolution(u=u, r=r, jac_u=jac_u, jac_r=jac_r, hess_u=hess_u, hess_r=hess_r, name="cross")


def translation_solution(t) -> ExactSolution:
    """Rigid translation u = t, r = 0."""
    t = np.asarray(t, dtype=float)
    zero = np.zeros(3)
    return ExactSolution(u=lambda X: t.copy(), r=lambda X: zero.copy(), jac_u=lambda X: np.zeros((3, 3)),
                         jac_r=lambda X: np.zeros((3, 3)), hess_u=lambda X: np.zeros((3, 3, 3)),
                         hess_r=lambda X: np.zeros((3, 3, 3)), name="translation")


def _origin(net: Network, edge: Edge) -> np.ndarray:
    return net.nodes[edge.nodes[0]].position


def _coefficients(edge: Edge, x: float) -> Tuple[np.ndarray, np.ndarray]:
    c_n, c_m = edge.local_coefficients(x)
    t = edge.frame
    return t @ np.diag(c_n) @ t.T, t @ np.diag(c_m) @ t.T


def exact_duals(exact: ExactSolution, net: Network, edge: Edge) -> Tuple[FieldCallback, FieldCallback]:
    """n_e = -C_n (du/dx + i x r) and m_e = -C_m dr/dx along the edge, arc length x."""
    origin, i = _origin(net, edge), edge.tangent

    def n(x):
        X = origin + x * i
        c_n, _ = _coefficients(edge, x)
        return -c_n @ (exact.jac_u(X) @ i + np.cross(i, exact.r(X)))

    def m(x):
        X = origin + x * i
        _, c_m = _coefficients(edge, x)
        return -c_m @ (exact.jac_r(X) @ i)

    return n, m


def exact_primals(exact: ExactSolution, net: Network, edge: Edge) -> Tuple[FieldCallback, FieldCallback]:
    origin, i = _origin(net, edge), edge.tangent
    return (lambda x: exact.u(origin + x * i)), (lambda x: exact.r(origin + x * i))


def derive_sources(exact: ExactSolution, net: Network, edge: Edge,
                   check: bool = True) -> Tuple[FieldCallback, FieldCallback]:
    """Closed-form f_e = dn/dx and g_e = dm/dx + i x n for a constant-coefficient edge.

    With check, both are compared with central differences of n_e, m_e (and n_e with the
    constitutive law applied to differenced u) at seeded points.
    """
    if not edge.is_constant:
        raise ValueError(f"edge {edge.id}: closed-form sources need constant coefficients")
    origin, i = _origin(net, edge), edge.tangent
    c_n, c_m = edge.global_coefficients()
    n, m = exact_duals(exact, net, edge)

    def f(x):
        X = origin + x * i
        return -c_n @ (np.einsum("cab,a,b->c", exact.hess_u(X), i, i) + np.cross(i, exact.jac_r(X) @ i))

    def g(x):
        X = origin + x * i
        return -c_m @ np.einsum("cab,a,b->c", exact.hess_r(X), i, i) + np.cross(i, n(x))

    if check:
        _check_sources(exact, edge, origin, n, m, f, g)
    return f, g


def _check_sources(exact, edge, origin, n, m, f, g) -> None:
    h, i, step = edge.length, edge.tangent, FD_STEP
    c_n, _ = edge.global_coefficients()
    rng = np.random.default_rng(edge.id)
    for x in rng.uniform(step, h - step, FD_POINTS):
        dn = (n(x + step) - n(x - step)) / (2 * step)
        dm = (m(x + step) - m(x - step)) / (2 * step)
        du = (exact.u(origin + (x + step) * i) - exact.u(origin + (x - step) * i)) / (2 * step)
        checks = (("f", f(x), dn), ("g", g(x), dm + np.cross(i, n(x))),
                  ("n", n(x), -c_n @ (du + np.cross(i, exact.r(origin + x * i)))))
        for name, closed, differenced in checks:
            gap = float(np.max(np.abs(closed - differenced)))
            if gap > FD_TOL * max(1.0, float(np.max(np.abs(closed)))):
                raise InternalConsistencyError(
                    f"source {name} disagrees with finite differences by {gap:.3e} at x={x:.6g}", edge.id)


def manufactured_problem(net: Network, exact: ExactSolution, check: bool = True) -> Tuple[Network, EdgeLoads]:
    """Impose exact traces at the Dirichlet nodes, point loads sum_e n_e nu_e at free nodes,
    and the derived distributed loads on every edge."""
    data = {node_id: (exact.u(net.nodes[node_id].position), exact.r(net.nodes[node_id].position))
            for node_id in net.dirichlet_nodes}
    point = {node_id: [np.zeros(3), np.zeros(3)] for node_id in net.free_nodes}
    loads: EdgeLoads = {}
    for edge in net.edges:
        loads[edge.id] = derive_sources(exact, net, edge, check=check)
        n, m = exact_duals(exact, net, edge)
        for which, node_id in enumerate(edge.nodes):
            if node_id in point:
                x = 0.0 if which == 0 else edge.length
                nu = net.normal(edge, node_id)
                point[node_id][0] = point[node_id][0] + nu * n(x)
                point[node_id][1] = point[node_id][1] + nu * m(x)
    problem = net.with_dirichlet(data).with_loads({k: tuple(v) for k, v in point.items()})
    return problem, loads


def l2_errors(solution: GlobalSolution, exact: ExactSolution) -> Tuple[float, float]:
    """(sum_e |u - u_h|^2 + |r - r_h|^2)^1/2 and the same for (n, m), Gauss rule with p + 4 points."""
    net = solution.system.network
    nodes, weights = gauss_rule(solution.system.p + 4)
    primal = dual = 0.0
    for edge, local in zip(net.edges, solution.edgewise):
        h = edge.length
        xs = h * nodes
        u, r = exact_primals(exact, net, edge)
        n, m = exact_duals(exact, net, edge)
        w = weights * h
        for name, func, acc in (("u", u, "p"), ("r", r, "p"), ("n", n, "d"), ("m", m, "d")):
            exact_values = np.array([func(x) for x in xs]).T
            squared = float(np.sum(w * np.sum((exact_values - local.evaluate(name, xs)) ** 2, axis=0)))
            if acc == "p":
                primal += squared
            else:
                dual += squared
    return math.sqrt(primal), math.sqrt(dual)


def solve_system(system: CondensedSystem, config: Optional[SolverConfig] = None,
                 direct_limit: int = DENSE_DIRECT_LIMIT) -> Tuple[np.ndarray, SolveReport]:
    """Direct solve for small systems, PCG with the configured preconditioner otherwise."""
    if system.size <= direct_limit:
        report = SolveReport(converged=True)
        return direct_solve(system), report
    config = config or SolverConfig(tol=STUDY_TOL)
    precond, _ = make_preconditioner(system, system.network, config)
    return pcg(system, precond, tol=config.tol, maxit=config.maxit, flexible=config.flexible)


def solve_manufactured(net: Network, exact: ExactSolution, p: int, rule: StabilizationRule,
                       config: Optional[SolverConfig] = None,
                       threads: int = 1) -> Tuple[GlobalSolution, SolveReport]:
    problem, loads = manufactured_problem(net, exact)
    system = assemble(problem, p, rule, loads, threads=threads)
    x, report = solve_system(system, config)
    return recover(system, x), report


class ConvergenceRecord(BaseModel):
    level: int
    h_max: float
    dofs: int
    err_primal: float
    err_dual: float
    eoc_primal: Optional[float] = None
    eoc_dual: Optional[float] = None
    iterations: int = 0

    def row(self) -> list:
        return [self.level, self.h_max, self.err_primal, self.err_dual,
                "" if self.eoc_primal is None else self.eoc_primal,
                "" if self.eoc_dual is None else self.eoc_dual]


def _eoc(previous: float, current: float) -> Optional[float]:
    if previous <= 0.0 or current <= 0.0:
        return None
    return math.log2(previous / current)


def convergence_study(p: int, s: int, levels: int, c: float = 1.0, base: Optional[Network] = None,
                      exact: Optional[ExactSolution] = None, config: Optional[SolverConfig] = None,
                      threads: int = 1) -> List[ConvergenceRecord]:
    """Errors and EOC = log2(err_{k-1} / err_k) on levels k = 0 .. levels - 1 of uniform refinement."""
    if p < 1:
        raise ValueError(f"convergence studies need p >= 1, got {p}")
    if levels < 3:
        raise ValueError(f"convergence studies need at least 3 levels, got {levels}")
    base = base or cross_network()
    exact = exact or cross_solution()
    rule = StabilizationRule(s=s, c=c)
    records: List[ConvergenceRecord] = []
    for k in range(levels):
        net = refine_uniform(base, k)
        solution, report = solve_manufactured(net, exact, p, rule, config, threads)
        err_primal, err_dual = l2_errors(solution, exact)
        record = ConvergenceRecord(level=k, h_max=net.h_max, dofs=solution.system.size, err_primal=err_primal,
                                   err_dual=err_dual, iterations=report.iterations)
        if records:
            record.eoc_primal = _eoc(records[-1].err_primal, err_primal)
            record.eoc_dual = _eoc(records[-1].err_dual, err_dual)
        records.append(record)
        logger.info(f"p={p} s={s} level {k}: h={net.h_max:.4g} primal={err_primal:.4e} dual={err_dual:.4e} "
                    f"eoc=({record.eoc_primal}, {record.eoc_dual})")
    return records


def asymptotic_eoc(records: Sequence[ConvergenceRecord], which: str = "primal") -> float:
    """Mean of the last two EOC increments."""
    values = [getattr(r, f"eoc_{which}") for r in records if getattr(r, f"eoc_{which}") is not None]
    if len(values) < 2:
        raise ValueError("asymptotic EOC needs at least two increments")
    return 0.5 * (values[-1] + values[-2])


class PSweepRecord(BaseModel):
    level: int
    p: int
    h_max: float
    err_primal: float
    err_dual: float
    ratio_primal: Optional[float] = None
    ratio_dual: Optional[float] = None

    def row(self) -> list:
        return [self.level, self.p, self.h_max, self.err_primal, self.err_dual,
                "" if self.ratio_primal is None else self.ratio_primal,
                "" if self.ratio_dual is None else self.ratio_dual]


def p_sweep(level: int, p_range: Sequence[int], s: int = 0, c: float = 1.0, base: Optional[Network] = None,
            exact: Optional[ExactSolution] = None, threads: int = 1) -> List[PSweepRecord]:
    """Errors at a fixed refinement level for each degree; ratio = err(p) / err(p - 1)."""
    degrees = list(p_range)
    if not degrees or min(degrees) < 1 or max(degrees) > 10:
        raise ValueError(f"degrees must lie within 1..10, got {degrees}")
    base = base or cross_network()
    exact = exact or cross_solution()
    net = refine_uniform(base, level)
    rule = StabilizationRule(s=s, c=c)
    records: List[PSweepRecord] = []
    for p in degrees:
        solution, _ = solve_manufactured(net, exact, p, rule, threads=threads)
        err_primal, err_dual = l2_errors(solution, exact)
        record = PSweepRecord(level=level, p=p, h_max=net.h_max, err_primal=err_primal, err_dual=err_dual)
        if records:
            record.ratio_primal = err_primal / records[-1].err_primal
            record.ratio_dual = err_dual / records[-1].err_dual
        records.append(record)
        logger.info(f"level {level} p={p}: primal={err_primal:.4e} dual={err_dual:.4e}")
    return records
