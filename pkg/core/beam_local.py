"""Per-edge HDG machinery: Legendre basis, quadrature, local solver, static condensation,
HDG projection and the closed-form constant-coefficient beam solution."""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from numpy.polynomial import legendre
from scipy.linalg import block_diag, lu_factor, lu_solve

from core.errors import InternalConsistencyError
from core.network import Edge

logger = logging.getLogger(__name__)

# x -> 3-vector in the global frame, x the arc length from the edge's first node
FieldCallback = Callable[[float], np.ndarray]

SYMMETRY_TOL = 1e-11
PIVOT_TOL = 1e-14

# i_hat x v for the local tangent i_hat = (1, 0, 0)
CROSS_I = np.array([[0.0, 0.0, 0.0],
                    [0.0, 0.0, -1.0],
                    [0.0, 1.0, 0.0]])

FIELDS = ("n", "m", "u", "r")


def legendre_values(p: int, t) -> np.ndarray:
    """Orthonormal Legendre polynomials on [0, 1]: array (p + 1, len(t))."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    scale = np.sqrt(2.0 * np.arange(p + 1) + 1.0)
    return (legendre.legvander(2.0 * t - 1.0, p) * scale).T


def legendre_derivatives(p: int, t) -> np.ndarray:
    """d/dt of legendre_values: array (p + 1, len(t))."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros((p + 1, t.size))
    for i in range(1, p + 1):
        coeffs = np.zeros(i + 1)
        coeffs[i] = 1.0
        out[i] = 2.0 * math.sqrt(2.0 * i + 1.0) * legendre.legval(2.0 * t - 1.0, legendre.legder(coeffs))
    return out


def gauss_rule(points: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = legendre.leggauss(points)
    return 0.5 * (x + 1.0), 0.5 * w


class PolynomialSpace:
    """Componentwise polynomials of degree p on an edge, orthonormal Legendre basis."""

    def __init__(self, degree: int, load_points: Optional[int] = None):
        if degree < 0:
            raise ValueError(f"polynomial degree must be nonnegative, got {degree}")
        if degree == 0:
            logger.warning("Polynomial degree 0 is experimental: convergence order is at most 1")
        self.degree = degree
        self.quad_points = degree + 2
        self.nodes, self.weights = gauss_rule(self.quad_points)
        self.load_points = load_points or 2 * degree + 4
        self.load_nodes, self.load_weights = gauss_rule(self.load_points)
        p = degree
        self.values = legendre_values(p, self.nodes)
        self.load_values = legendre_values(p, self.load_nodes)
        self.reference_mass = (self.values * self.weights) @ self.values.T
        self.reference_derivative = (self.values * self.weights) @ legendre_derivatives(p, self.nodes).T
        self.left = legendre_values(p, 0.0)[:, 0]
        self.right = legendre_values(p, 1.0)[:, 0]

    @property
    def size(self) -> int:
        return self.degree + 1

    def __repr__(self) -> str:
        return f"PolynomialSpace(p={self.degree})"


@dataclass
class PolynomialField:
    """3-vector polynomial on [0, h]; coeffs (3, p + 1) in the orthonormal basis of L2(0, h)."""

    coeffs: np.ndarray
    length: float

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    def __call__(self, x) -> np.ndarray:
        """Values at arc lengths x: array (3, len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        basis = legendre_values(self.degree, x / self.length) / math.sqrt(self.length)
        return self.coeffs @ basis

    def derivative(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        basis = legendre_derivatives(self.degree, x / self.length) / self.length ** 1.5
        return self.coeffs @ basis

    def rotated(self, q: np.ndarray) -> "PolynomialField":
        return PolynomialField(q @ self.coeffs, self.length)


@dataclass
class LocalSolution:
    """Polynomial fields (u, r, n, m) of one edge, coefficients in the global frame."""

    coeff_u: np.ndarray
    coeff_r: np.ndarray
    coeff_n: np.ndarray
    coeff_m: np.ndarray
    length: float

    @property
    def degree(self) -> int:
        return self.coeff_u.shape[1] - 1

    def field(self, name: str) -> PolynomialField:
        return PolynomialField(getattr(self, f"coeff_{name}"), self.length)

    def evaluate(self, name: str, x) -> np.ndarray:
        return self.field(name)(x)

    def endpoint(self, name: str, which: int) -> np.ndarray:
        """Value at the first (0) or second (1) endpoint."""
        return self.field(name)(0.0 if which == 0 else self.length)[:, 0]

    def __add__(self, other: "LocalSolution") -> "LocalSolution":
        return LocalSolution(self.coeff_u + other.coeff_u, self.coeff_r + other.coeff_r,
                             self.coeff_n + other.coeff_n, self.coeff_m + other.coeff_m, self.length)

    def norm(self) -> float:
        return float(math.sqrt(sum(np.sum(c ** 2) for c in (self.coeff_u, self.coeff_r,
                                                             self.coeff_n, self.coeff_m))))

    def to_dict(self) -> dict:
        return {"degree": self.degree, "length": self.length,
                **{name: getattr(self, f"coeff_{name}").tolist() for name in ("u", "r", "n", "m")}}


@dataclass
class LocalSolverFactorization:
    """Factorized HDG local system of one edge and its unit-hybrid solutions."""

    edge: Edge
    space: PolynomialSpace
    tau: float
    matrix: np.ndarray
    lu: tuple
    boundary_rhs: np.ndarray
    boundary_solutions: np.ndarray

    @property
    def edge_id(self) -> int:
        return self.edge.id

    @property
    def p(self) -> int:
        return self.space.degree

    @property
    def frame_blocks(self) -> np.ndarray:
        """12x12 block-diagonal change of basis, local -> global for (u0, r0, u1, r1)."""
        return np.kron(np.eye(4), self.edge.frame)


@dataclass
class CondensedBlock:
    """Nodal 12x12 block and load vector of one edge, ordered (u0, r0, u1, r1) per endpoint."""

    matrix: np.ndarray
    load: np.ndarray
    edge_id: int


# ---------------------------------------------------------------------------
# Local solver
# ---------------------------------------------------------------------------

def _weighted_masses(edge: Edge, space: PolynomialSpace) -> Tuple[np.ndarray, np.ndarray]:
    """Block-diagonal (C_n^-1 phi_j, phi_i) and (C_m^-1 phi_j, phi_i) on [0, h]."""
    if edge.is_constant:
        c_n, c_m = edge.material.c_n, edge.material.c_m
        return (np.kron(np.diag(1.0 / c_n), space.reference_mass),
                np.kron(np.diag(1.0 / c_m), space.reference_mass))
    h = edge.length
    samples = [edge.local_coefficients(h * t) for t in space.load_nodes]
    inv_n = np.array([1.0 / s[0] for s in samples])
    inv_m = np.array([1.0 / s[1] for s in samples])
    phi = space.load_values
    blocks_n = [(phi * (space.load_weights * inv_n[:, c])) @ phi.T for c in range(3)]
    blocks_m = [(phi * (space.load_weights * inv_m[:, c])) @ phi.T for c in range(3)]
    return block_diag(*blocks_n), block_diag(*blocks_m)


def assemble_local_solver(edge: Edge, space: PolynomialSpace, tau: float) -> LocalSolverFactorization:
    """Assemble and LU-factorize the discrete local solver in local coordinates.

    Unknown layout is (n, m, u, r), each 3 components of p + 1 coefficients; the basis is
    orthonormal on [0, h_e]. Rows are the four tested equations in the same order.
    """
    if not tau > 0.0:
        raise ValueError(f"stabilization must be positive, got {tau}")
    h = edge.length
    size = space.size
    eye3 = np.eye(3)
    mass = space.reference_mass
    deriv = space.reference_derivative / h  # deriv[i, j] = (phi_j', phi_i)
    e0 = space.left / math.sqrt(h)
    e1 = space.right / math.sqrt(h)
    traces = np.outer(e0, e0) + np.outer(e1, e1)
    mass_n, mass_m = _weighted_masses(edge, space)

    b = 3 * size
    matrix = np.zeros((4 * b, 4 * b))
    n_, m_, u_, r_ = (slice(k * b, (k + 1) * b) for k in range(4))
    matrix[n_, n_] = -mass_n
    matrix[n_, u_] = np.kron(eye3, deriv.T)
    matrix[n_, r_] = -np.kron(CROSS_I, mass)
    matrix[m_, m_] = -mass_m
    matrix[m_, r_] = np.kron(eye3, deriv.T)
    matrix[u_, n_] = np.kron(eye3, deriv)
    matrix[u_, u_] = tau * np.kron(eye3, traces)
    matrix[r_, n_] = np.kron(CROSS_I, mass)
    matrix[r_, m_] = np.kron(eye3, deriv)
    matrix[r_, r_] = tau * np.kron(eye3, traces)

    # hybrid data ordered (lambda_0, phi_0, lambda_1, phi_1), local coordinates
    boundary_rhs = np.zeros((4 * b, 12))
    for a in range(3):
        rows = slice(a * size, (a + 1) * size)
        boundary_rhs[n_][rows, a] = -e0
        boundary_rhs[n_][rows, 6 + a] = e1
        boundary_rhs[m_][rows, 3 + a] = -e0
        boundary_rhs[m_][rows, 9 + a] = e1
        boundary_rhs[u_][rows, a] = tau * e0
        boundary_rhs[u_][rows, 6 + a] = tau * e1
        boundary_rhs[r_][rows, 3 + a] = tau * e0
        boundary_rhs[r_][rows, 9 + a] = tau * e1

    lu = lu_factor(matrix, check_finite=True)
    pivots = np.abs(np.diag(lu[0]))
    if pivots.min() <= PIVOT_TOL * pivots.max():
        raise InternalConsistencyError(f"singular local solver (p={space.degree}, tau={tau:g})", edge.id)
    boundary_solutions = lu_solve(lu, boundary_rhs)
    return LocalSolverFactorization(edge=edge, space=space, tau=tau, matrix=matrix, lu=lu,
                                    boundary_rhs=boundary_rhs, boundary_solutions=boundary_solutions)


def load_vector(fact: LocalSolverFactorization, f_e: Optional[FieldCallback],
                g_e: Optional[FieldCallback]) -> np.ndarray:
    """Right-hand side contribution (f, v) and (g, w) with the load quadrature rule."""
    space = fact.space
    h = fact.edge.length
    b = 3 * space.size
    rhs = np.zeros(4 * b)
    frame_t = fact.edge.frame.T
    phi = space.load_values / math.sqrt(h)
    weights = space.load_weights * h
    for offset, source in ((2 * b, f_e), (3 * b, g_e)):
        if source is None:
            continue
        samples = np.array([frame_t @ np.asarray(source(h * t), dtype=float) for t in space.load_nodes])
        moments = (phi * weights) @ samples  # (p + 1, 3)
        rhs[offset:offset + b] = moments.T.reshape(-1)
    return rhs


def _to_solution(fact: LocalSolverFactorization, z: np.ndarray) -> LocalSolution:
    size = fact.space.size
    t = fact.edge.frame
    blocks = [z[k * 3 * size:(k + 1) * 3 * size].reshape(3, size) for k in range(4)]
    coeff_n, coeff_m, coeff_u, coeff_r = (t @ blk for blk in blocks)
    return LocalSolution(coeff_u=coeff_u, coeff_r=coeff_r, coeff_n=coeff_n, coeff_m=coeff_m,
                         length=fact.edge.length)


def _local_hybrid(fact: LocalSolverFactorization, hybrid: np.ndarray) -> np.ndarray:
    return fact.frame_blocks.T @ np.asarray(hybrid, dtype=float)


def local_solve(fact: LocalSolverFactorization, hybrid, f_e: Optional[FieldCallback] = None,
                g_e: Optional[FieldCallback] = None) -> LocalSolution:
    """Discrete local solution for global hybrid data (u0, r0, u1, r1) and distributed loads."""
    hybrid = np.asarray(hybrid, dtype=float)
    if hybrid.shape != (12,):
        raise ValueError(f"hybrid data must have 12 entries, got shape {hybrid.shape}")
    z = fact.boundary_solutions @ _local_hybrid(fact, hybrid)
    if f_e is not None or g_e is not None:
        z = z + lu_solve(fact.lu, load_vector(fact, f_e, g_e))
    return _to_solution(fact, z)


def numerical_fluxes(fact: LocalSolverFactorization, solution: LocalSolution, hybrid) -> np.ndarray:
    """Global numerical fluxes n nu + tau (u - u_n) and m nu + tau (r - r_n) at both endpoints."""
    hybrid = np.asarray(hybrid, dtype=float)
    out = np.zeros(12)
    for which, nu in ((0, -1.0), (1, 1.0)):
        base = 6 * which
        out[base:base + 3] = (nu * solution.endpoint("n", which)
                              + fact.tau * (solution.endpoint("u", which) - hybrid[base:base + 3]))
        out[base + 3:base + 6] = (nu * solution.endpoint("m", which)
                                  + fact.tau * (solution.endpoint("r", which) - hybrid[base + 3:base + 6]))
    return out


def _local_fluxes(fact: LocalSolverFactorization, z: np.ndarray, hybrid_local: np.ndarray) -> np.ndarray:
    """Same as numerical_fluxes, for a raw local-coordinate unknown vector."""
    size = fact.space.size
    h = fact.edge.length
    ends = (fact.space.left / math.sqrt(h), fact.space.right / math.sqrt(h))
    blocks = [z[k * 3 * size:(k + 1) * 3 * size].reshape(3, size) for k in range(4)]
    n, m, u, r = blocks
    out = np.zeros(12)
    for which, nu in ((0, -1.0), (1, 1.0)):
        e = ends[which]
        base = 6 * which
        out[base:base + 3] = nu * (n @ e) + fact.tau * (u @ e - hybrid_local[base:base + 3])
        out[base + 3:base + 6] = nu * (m @ e) + fact.tau * (r @ e - hybrid_local[base + 3:base + 6])
    return out


def condense(fact: LocalSolverFactorization, f_e: Optional[FieldCallback] = None,
             g_e: Optional[FieldCallback] = None) -> CondensedBlock:
    """Static condensation: K_e[:, j] = -(numerical fluxes) of the unit hybrid solve j.

    The load vector is the same trace map applied to the zero-hybrid loaded solve.
    """
    local = np.zeros((12, 12))
    for j in range(12):
        unit = np.zeros(12)
        unit[j] = 1.0
        local[:, j] = -_local_fluxes(fact, fact.boundary_solutions[:, j], unit)
    scale = np.linalg.norm(local)
    asymmetry = np.linalg.norm(local - local.T)
    if asymmetry > SYMMETRY_TOL * max(scale, 1.0):
        raise InternalConsistencyError(f"condensed block asymmetric ({asymmetry:.3e} vs {scale:.3e})",
                                       fact.edge_id)
    local = 0.5 * (local + local.T)
    rotation = fact.frame_blocks
    matrix = rotation @ local @ rotation.T
    load = np.zeros(12)
    if f_e is not None or g_e is not None:
        z = lu_solve(fact.lu, load_vector(fact, f_e, g_e))
        load = rotation @ -_local_fluxes(fact, z, np.zeros(12))
    return CondensedBlock(matrix=matrix, load=load, edge_id=fact.edge_id)


# ---------------------------------------------------------------------------
# Closed-form constant-coefficient solution
# ---------------------------------------------------------------------------

def _analytic_constants(edge: Edge, hybrid_local: np.ndarray):
    """Integration constants c, d of the homogeneous local beam equations."""
    if not edge.is_constant:
        raise ValueError(f"edge {edge.id}: closed-form solution requires constant materials")
    h = edge.length
    c_n, c_m = edge.material.c_n, edge.material.c_m
    lam1, phi1, lam2, phi2 = hybrid_local[0:3], hybrid_local[3:6], hybrid_local[6:9], hybrid_local[9:12]
    lam_d, phi_d, phi_s = lam2 - lam1, phi2 - phi1, phi1 + phi2
    d_diag = 1.0 + (h ** 2 / 12.0) * np.array([0.0, c_n[1] / c_m[2], c_n[2] / c_m[1]])
    stretch = c_n * lam_d / d_diag
    tilt = c_n * (CROSS_I @ phi_s) / d_diag
    c = stretch / h + 0.5 * tilt
    d = c_m * phi_d / h + 0.5 * (CROSS_I @ stretch) + (h / 4.0) * (CROSS_I @ tilt)
    return c, d


def _analytic_fields(edge: Edge, hybrid_local: np.ndarray):
    c, d = _analytic_constants(edge, hybrid_local)
    inv_n, inv_m = 1.0 / edge.material.c_n, 1.0 / edge.material.c_m
    lam1, phi1 = hybrid_local[0:3], hybrid_local[3:6]
    ic = CROSS_I @ c

    def u(x):
        return ((CROSS_I @ (inv_m * ic)) * x ** 3 / 6.0 - (CROSS_I @ (inv_m * d)) * x ** 2 / 2.0
                - (CROSS_I @ phi1) * x + inv_n * c * x + lam1)

    def r(x):
        return -0.5 * (inv_m * ic) * x ** 2 + (inv_m * d) * x + phi1

    def n(x):
        return -c

    def m(x):
        return ic * x - d

    return {"u": u, "r": r, "n": n, "m": m}


def project_field(func: Callable[[float], np.ndarray], length: float, p: int,
                  points: Optional[int] = None) -> np.ndarray:
    """L2(0, h) projection of a 3-vector function onto degree p; returns coeffs (3, p + 1)."""
    nodes, weights = gauss_rule(points or p + 4)
    phi = legendre_values(p, nodes) / math.sqrt(length)
    samples = np.array([np.asarray(func(length * t), dtype=float) for t in nodes])  # (q, 3)
    return ((phi * (weights * length)) @ samples).T


def analytic_local_solution(edge: Edge, hybrid) -> LocalSolution:
    """Exact solution of the homogeneous constant-coefficient beam equations, degree 3."""
    rotation = np.kron(np.eye(4), edge.frame)
    fields = _analytic_fields(edge, rotation.T @ np.asarray(hybrid, dtype=float))
    coeffs = {name: edge.frame @ project_field(fields[name], edge.length, 3) for name in fields}
    return LocalSolution(coeff_u=coeffs["u"], coeff_r=coeffs["r"], coeff_n=coeffs["n"],
                         coeff_m=coeffs["m"], length=edge.length)


def analytic_flux_block(edge: Edge) -> CondensedBlock:
    """Exact condensed block: columns are -(n nu, m nu) at both endpoints for unit hybrid data."""
    h = edge.length
    local = np.zeros((12, 12))
    for j in range(12):
        unit = np.zeros(12)
        unit[j] = 1.0
        c, d = _analytic_constants(edge, unit)
        n_value = -c
        local[0:3, j] = n_value                        # -(n(0) * -1)
        local[3:6, j] = -d                             # -(m(0) * -1) = m(0)
        local[6:9, j] = -n_value                       # -(n(h) * +1)
        local[9:12, j] = -((CROSS_I @ c) * h - d)      # -(m(h) * +1)
    local = 0.5 * (local + local.T)
    rotation = np.kron(np.eye(4), edge.frame)
    return CondensedBlock(matrix=rotation @ local @ rotation.T, load=np.zeros(12), edge_id=edge.id)


# ---------------------------------------------------------------------------
# HDG projection
# ---------------------------------------------------------------------------

def hdg_projection(u_exact: FieldCallback, n_exact: FieldCallback, edge: Edge, space: PolynomialSpace,
                   tau: float) -> Tuple[PolynomialField, PolynomialField]:
    """Projection (Pi_1, Pi_2) onto degree p matching moments of degree p - 1 and both endpoint
    fluxes Pi_2 nu + tau Pi_1 = n nu + tau u."""
    if not tau > 0.0:
        raise ValueError(f"stabilization must be positive, got {tau}")
    p = space.degree
    h = edge.length
    size = p + 1
    moments_u = project_field(u_exact, h, p, space.load_points)
    moments_n = project_field(n_exact, h, p, space.load_points)
    e0 = space.left / math.sqrt(h)
    e1 = space.right / math.sqrt(h)

    system = np.zeros((2 * size, 2 * size))
    for i in range(p):
        system[i, i] = 1.0
        system[p + i, size + i] = 1.0
    system[2 * p, :size] = tau * e0
    system[2 * p, size:] = -e0
    system[2 * p + 1, :size] = tau * e1
    system[2 * p + 1, size:] = e1

    u0, u1 = np.asarray(u_exact(0.0), float), np.asarray(u_exact(h), float)
    n0, n1 = np.asarray(n_exact(0.0), float), np.asarray(n_exact(h), float)
    rhs = np.zeros((2 * size, 3))
    rhs[:p] = moments_u[:, :p].T
    rhs[p:2 * p] = moments_n[:, :p].T
    rhs[2 * p] = -n0 + tau * u0
    rhs[2 * p + 1] = n1 + tau * u1
    try:
        solution = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as e:
        raise InternalConsistencyError(f"singular projection system (p={p}, tau={tau:g})", edge.id) from e
    return (PolynomialField(solution[:size].T.copy(), h), PolynomialField(solution[size:].T.copy(), h))
