"""PCG and the two-level overlapping additive Schwarz preconditioner on an artificial Cartesian grid."""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh, qr
from scipy.sparse.linalg import ArpackNoConvergence, eigsh, splu

from core.assembly import CondensedSystem
from core.config import SolverConfig
from core.errors import BreakdownError, ConvergenceError, DimensionError, SolverConfigurationError
from core.network import Network, graph_laplacian
from utils.progress_tracker import ProgressTracker

logger = logging.getLogger(__name__)

BOX_MARGIN = 1e-9
WEIGHT_CUTOFF = 1e-6
RANK_TOL = 1e-10
DENSE_DIRECT_LIMIT = 3000
DENSE_EIGEN_LIMIT = 600

Preconditioner = Callable[[np.ndarray], np.ndarray]


@dataclass
class CoarseGrid:
    """Axis-aligned box split into nx * ny * nz cells with trilinear vertex basis functions."""

    lower: np.ndarray
    upper: np.ndarray
    cells: Tuple[int, int, int]

    @classmethod
    def around(cls, positions: np.ndarray, cells: Tuple[int, int, int], margin: float = BOX_MARGIN) -> "CoarseGrid":
        """Bounding box of the positions, inflated so that it strictly contains all of them."""
        if min(cells) < 1:
            raise SolverConfigurationError(f"grid cell counts must be positive, got {cells}")
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        lower, upper = positions.min(axis=0), positions.max(axis=0)
        diameter = float(np.max(upper - lower)) or 1.0
        pad = np.maximum(margin * (upper - lower), margin * diameter)
        return cls(lower=lower - pad, upper=upper + pad, cells=tuple(int(c) for c in cells))

    @property
    def vertex_counts(self) -> Tuple[int, int, int]:
        return tuple(c + 1 for c in self.cells)

    @property
    def num_vertices(self) -> int:
        nx, ny, nz = self.vertex_counts
        return nx * ny * nz

    def vertex_index(self, ix: int, iy: int, iz: int) -> int:
        nx, ny, _ = self.vertex_counts
        return ix + nx * (iy + ny * iz)

    def vertex(self, index: int) -> np.ndarray:
        nx, ny, _ = self.vertex_counts
        ijk = np.array([index % nx, (index // nx) % ny, index // (nx * ny)], dtype=float)
        return self.lower + ijk * (self.upper - self.lower) / np.array(self.cells, dtype=float)

    def contains(self, point) -> bool:
        point = np.asarray(point, dtype=float)
        return bool(np.all(point >= self.lower) and np.all(point <= self.upper))

    def basis_values(self, point) -> Dict[int, float]:
        """Nonzero trilinear basis values at point, keyed by vertex index."""
        point = np.asarray(point, dtype=float)
        if not self.contains(point):
            raise SolverConfigurationError(f"point {point.tolist()} lies outside the coarse grid")
        cells = np.array(self.cells)
        t = (point - self.lower) / (self.upper - self.lower) * cells
        base = np.minimum(np.floor(t).astype(int), cells - 1)
        frac = t - base
        values = {}
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = ((frac[0] if dx else 1.0 - frac[0])
                         * (frac[1] if dy else 1.0 - frac[1])
                         * (frac[2] if dz else 1.0 - frac[2]))
                    if w > 0.0:
                        index = self.vertex_index(base[0] + dx, base[1] + dy, base[2] + dz)
                        values[index] = values.get(index, 0.0) + w
        return values


def trilinear_weights(grid: CoarseGrid, positions: np.ndarray, cutoff: float = WEIGHT_CUTOFF) -> np.ndarray:
    """Dense (N, m) matrix of basis values; weights at or below cutoff are dropped and rows renormalized."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    weights = np.zeros((positions.shape[0], grid.num_vertices))
    for row, point in enumerate(positions):
        for index, value in grid.basis_values(point).items():
            weights[row, index] = value
    weights[weights <= cutoff] = 0.0
    weights /= weights.sum(axis=1, keepdims=True)
    return weights


def _independent_columns(matrix: np.ndarray) -> np.ndarray:
    """Indices of a maximal linearly independent set of columns, in ascending order."""
    if matrix.shape[1] == 0 or not np.any(matrix):
        return np.zeros(0, dtype=int)
    _, r, pivots = qr(matrix, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > RANK_TOL * diag[0]))
    return np.sort(pivots[:rank])


def build_coarse_interpolation(net: Network, grid: CoarseGrid, policy: str = "strict") -> sp.csr_matrix:
    """R0: coarse-to-fine interpolation on free dofs, the scalar weights repeated for 6 components.

    Columns of coarse vertices whose support holds a Dirichlet node are dropped under "strict".
    Linearly dependent columns (flat networks in a one-cell-thick grid) are removed.
    """
    if policy not in ("strict", "free"):
        raise SolverConfigurationError(f"unknown coarse Dirichlet policy '{policy}'")
    weights = trilinear_weights(grid, net.positions)
    mask = net.dirichlet_mask
    columns = np.arange(grid.num_vertices)
    if policy == "strict" and mask.any():
        touched = np.any(weights[mask] > 0.0, axis=0)
        columns = columns[~touched]
    free_weights = weights[~mask][:, columns]
    kept = columns[_independent_columns(free_weights)]
    scalar = weights[~mask][:, kept]
    logger.debug(f"Coarse space: {kept.size} of {grid.num_vertices} vertices kept (policy={policy})")
    return sp.kron(sp.csr_matrix(scalar), sp.identity(6), format="csr")


def _inner_cg(matrix, rhs: np.ndarray, rtol: float, maxit: int = 1000) -> np.ndarray:
    """Unpreconditioned CG from a zero initial guess, relative residual rtol."""
    x = np.zeros_like(rhs)
    r = rhs.copy()
    norm0 = np.linalg.norm(r)
    if norm0 == 0.0:
        return x
    p = r.copy()
    rr = r @ r
    for _ in range(maxit):
        ap = matrix @ p
        alpha = rr / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        rr_new = r @ r
        if math.sqrt(rr_new) <= rtol * norm0:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


@dataclass
class SchwarzSetup:
    """Factorized coarse Galerkin matrix and subdomain blocks of the two-level preconditioner."""

    grid: CoarseGrid
    r0: sp.csr_matrix
    coarse_factor: Optional[tuple]
    subdomains: List[np.ndarray]
    local_matrices: List[Optional[sp.csc_matrix]]
    local_factors: List[object]
    size: int
    mode: str = "schwarz"
    inner_tolerance: Optional[float] = None
    threads: int = 1
    jacobi: Optional[np.ndarray] = None

    @property
    def num_subdomains(self) -> int:
        return len(self.subdomains)

    @property
    def coarse_dimension(self) -> int:
        return self.r0.shape[1]

    def covered(self) -> np.ndarray:
        """Number of subdomains containing each dof."""
        counts = np.zeros(self.size, dtype=int)
        for dofs in self.subdomains:
            counts[dofs] += 1
        return counts


def build_schwarz(system: CondensedSystem, net: Network, grid: CoarseGrid, policy: str = "strict",
                  inner_tolerance: Optional[float] = None, mode: str = "schwarz",
                  threads: int = 1) -> SchwarzSetup:
    """Factorize R0^T A R0 and the principal submatrices A_ii of every subdomain U_i = supp(phi_i)."""
    if mode not in ("coarse", "local", "schwarz"):
        raise SolverConfigurationError(f"unknown preconditioner mode '{mode}'")
    matrix = system.matrix.tocsr()
    size = system.size
    r0 = build_coarse_interpolation(net, grid, policy)

    coarse_factor = None
    if mode in ("coarse", "schwarz"):
        if r0.shape[1] == 0:
            raise SolverConfigurationError(
                f"coarse space is empty after '{policy}' Dirichlet filtering on grid {grid.cells}")
        coarse = (r0.T @ matrix @ r0).toarray()
        try:
            coarse_factor = cho_factor(0.5 * (coarse + coarse.T))
        except LinAlgError as e:
            raise SolverConfigurationError(
                f"coarse matrix is not positive definite on grid {grid.cells} (policy={policy})") from e

    jacobi = None
    if mode == "coarse":
        # P0 alone is singular; point Jacobi on the fine dofs makes the coarse-only mode definite
        jacobi = 1.0 / matrix.diagonal()

    weights = trilinear_weights(grid, net.positions)
    free = net.free_nodes
    subdomains, local_matrices, local_factors = [], [], []
    for index in range(grid.num_vertices):
        nodes = [k for k, node_id in enumerate(free) if weights[node_id, index] > 0.0]
        dofs = (6 * np.repeat(nodes, 6) + np.tile(np.arange(6), len(nodes))).astype(int)
        subdomains.append(dofs)
        if mode == "coarse" or dofs.size == 0:
            local_matrices.append(None)
            local_factors.append(None)
            continue
        block = matrix[dofs][:, dofs].tocsc()
        local_matrices.append(block)
        local_factors.append(splu(block) if inner_tolerance is None else None)

    setup = SchwarzSetup(grid=grid, r0=r0, coarse_factor=coarse_factor, subdomains=subdomains,
                         local_matrices=local_matrices, local_factors=local_factors, size=size, mode=mode,
                         inner_tolerance=inner_tolerance, threads=threads, jacobi=jacobi)
    nonempty = sum(1 for d in subdomains if d.size)
    logger.info(f"Schwarz setup ({mode}): coarse dimension {setup.coarse_dimension}, "
                f"{nonempty}/{grid.num_vertices} nonempty subdomains")
    return setup


def apply_preconditioner(setup: SchwarzSetup, r) -> np.ndarray:
    """z = R0 A0^-1 R0^T r + sum_i E_i A_ii^-1 E_i^T r, summed coarse first then by subdomain index.

    The "coarse" mode replaces the subdomain sum by diag(A)^-1 r.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (setup.size,):
        raise DimensionError(f"expected vector of length {setup.size}, got shape {r.shape}")

    def local(i: int) -> Optional[np.ndarray]:
        block = setup.local_matrices[i]
        if block is None:
            return None
        dofs = setup.subdomains[i]
        if setup.local_factors[i] is not None:
            return setup.local_factors[i].solve(r[dofs])
        return _inner_cg(block, r[dofs], setup.inner_tolerance)

    z = np.zeros(setup.size)
    if setup.coarse_factor is not None:
        z += setup.r0 @ cho_solve(setup.coarse_factor, setup.r0.T @ r)
    if setup.mode == "coarse":
        return z + setup.jacobi * r
    indices = range(setup.num_subdomains)
    if setup.threads > 1:
        with ThreadPoolExecutor(max_workers=setup.threads) as pool:
            parts = list(pool.map(local, indices))
    else:
        parts = [local(i) for i in indices]
    for dofs, part in zip(setup.subdomains, parts):
        if part is not None:
            z[dofs] += part
    return z


def make_preconditioner(system: CondensedSystem, net: Network,
                        config: SolverConfig) -> Tuple[Optional[Preconditioner], Optional[SchwarzSetup]]:
    """Preconditioner callable for config.precond; None for unpreconditioned CG or an empty system."""
    if config.precond == "none":
        return None, None
    if system.size == 0:
        logger.info("No free dofs: solution is fixed by the Dirichlet data, skipping the preconditioner")
        return None, None
    grid = CoarseGrid.around(net.positions, config.grid)
    setup = build_schwarz(system, net, grid, policy=config.coarse_policy,
                          inner_tolerance=config.inner_tolerance, mode=config.precond, threads=config.threads)
    return (lambda r: apply_preconditioner(setup, r)), setup


@dataclass
class SolveReport:
    """PCG outcome: relative B-norm residuals per iteration, plain residuals and phase timings (ms)."""

    iterations: int = 0
    residual_history: List[float] = field(default_factory=list)
    plain_history: List[float] = field(default_factory=list)
    converged: bool = False
    timings: Dict[str, float] = field(default_factory=dict)
    directions: List[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else 0.0

    def rows(self) -> List[Tuple[int, float, float]]:
        return [(k, b, plain) for k, (b, plain) in enumerate(zip(self.residual_history, self.plain_history))]


def _operator(system: Union[CondensedSystem, sp.spmatrix, np.ndarray]):
    return system.matrix if isinstance(system, CondensedSystem) else system


def pcg(system: Union[CondensedSystem, sp.spmatrix, np.ndarray], preconditioner: Optional[Preconditioner] = None,
        tol: float = 1e-10, maxit: int = 10000, flexible: bool = False, rhs: Optional[np.ndarray] = None,
        x0: Optional[np.ndarray] = None, record_directions: bool = False) -> Tuple[np.ndarray, SolveReport]:
    """Preconditioned conjugate gradients.

    Converged when sqrt(r_k . B r_k) / sqrt(r_0 . B r_0) <= tol; the plain relative residual is
    recorded alongside. The flexible variant uses the Polak-Ribiere coefficient so that an
    iteration-dependent preconditioner (inexact subdomain solves) is admissible.
    Exceeding maxit is reported through SolveReport.converged, not raised.
    """
    matrix = _operator(system)
    b = np.asarray(system.rhs if rhs is None and isinstance(system, CondensedSystem) else rhs, dtype=float)
    n = matrix.shape[0]
    if b.shape != (n,):
        raise DimensionError(f"expected right-hand side of length {n}, got shape {b.shape}")
    precond = preconditioner or (lambda v: v.copy())
    report = SolveReport()
    tracker = ProgressTracker("pcg")
    start = time.perf_counter()

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b - matrix @ x
    if not np.any(r):
        report.residual_history.append(0.0)
        report.plain_history.append(0.0)
        report.converged = True
        report.timings["solve"] = 1000.0 * (time.perf_counter() - start)
        logger.info("PCG: zero initial residual, nothing to do")
        return x, report

    z = precond(r)
    rz = float(r @ z)
    if rz <= 0.0:
        raise BreakdownError(f"preconditioner is not positive definite (r.Br = {rz:.3e})")
    rz0, plain0 = rz, float(np.linalg.norm(r))
    report.residual_history.append(1.0)
    report.plain_history.append(1.0)
    p = z.copy()

    for k in range(1, maxit + 1):
        ap = matrix @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            raise BreakdownError(f"nonpositive curvature p.Ap = {pap:.3e} at iteration {k}")
        if record_directions:
            report.directions.append(p.copy())
        alpha = rz / pap
        x += alpha * p
        r_new = r - alpha * ap
        z_new = precond(r_new)
        rz_new = float(r_new @ z_new)
        if rz_new < 0.0:
            raise BreakdownError(f"preconditioner is not positive definite at iteration {k}")
        relative = math.sqrt(rz_new / rz0)
        report.residual_history.append(relative)
        report.plain_history.append(float(np.linalg.norm(r_new)) / plain0)
        report.iterations = k
        tracker.tick(k, relative)
        if relative <= tol:
            report.converged = True
            break
        beta = float(z_new @ (r_new - r)) / rz if flexible else rz_new / rz
        p = z_new + beta * p
        r, z, rz = r_new, z_new, rz_new

    report.timings["solve"] = 1000.0 * (time.perf_counter() - start)
    if report.converged:
        logger.info(f"PCG converged in {report.iterations} iterations "
                    f"(residual {report.final_residual:.3e}, plain {report.plain_history[-1]:.3e})")
    else:
        logger.warning(f"PCG did not converge in {maxit} iterations (residual {report.final_residual:.3e})")
    return x, report


def direct_solve(system: CondensedSystem, rhs: Optional[np.ndarray] = None) -> np.ndarray:
    """Cholesky solve for small systems, sparse LU otherwise."""
    b = system.rhs if rhs is None else np.asarray(rhs, dtype=float)
    if system.size == 0:
        return np.zeros(0)
    if system.size <= DENSE_DIRECT_LIMIT:
        try:
            return cho_solve(cho_factor(system.matrix.toarray()), b)
        except LinAlgError as e:
            raise BreakdownError("condensed matrix is not positive definite") from e
    return splu(system.matrix.tocsc()).solve(b)


def spectral_equivalence_report(system: CondensedSystem, net: Optional[Network] = None) -> Tuple[float, float]:
    """Extreme eigenvalues (theta_max, theta_min) of A x = theta (L_ff (x) I_6) x on the free dofs."""
    net = net or system.network
    free = np.array(net.free_nodes, dtype=int)
    laplacian = graph_laplacian(net).tocsr()[free][:, free]
    pencil = sp.kron(laplacian, sp.identity(6), format="csc")
    matrix = system.matrix.tocsc()
    if system.size <= DENSE_EIGEN_LIMIT:
        values = eigh(matrix.toarray(), pencil.toarray(), eigvals_only=True)
        theta_max, theta_min = float(values[-1]), float(values[0])
    else:
        try:
            theta_max = float(eigsh(matrix, k=1, M=pencil, which="LA", return_eigenvectors=False)[0])
            theta_min = float(eigsh(matrix, k=1, M=pencil, sigma=0.0, which="LM",
                                    return_eigenvectors=False)[0])
        except ArpackNoConvergence as e:
            raise ConvergenceError("Lanczos iteration for the spectral report did not converge") from e
    logger.info(f"Spectral report: theta_max={theta_max:.6g}, theta_min={theta_min:.6g}, "
                f"ratio={theta_max / theta_min:.6g}")
    return theta_max, theta_min
