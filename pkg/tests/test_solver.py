import numpy as np
import pytest
import scipy.sparse as sp
from numpy.testing import assert_allclose
from scipy.sparse.linalg import splu

from conftest import random_network
from core.assembly import assemble, recover
from core.config import SolverConfig, StabilizationRule
from core.errors import BreakdownError, DimensionError, SolverConfigurationError
from core.network import DIRICHLET, Network, Node, cross_network, make_edge, refine_uniform
from core.solver import (CoarseGrid, SchwarzSetup, apply_preconditioner, build_coarse_interpolation, build_schwarz,
                         direct_solve, make_preconditioner, pcg, spectral_equivalence_report, trilinear_weights)
from core.verify import cross_solution, manufactured_problem

RULE = StabilizationRule()


def manufactured_cross(k: int, p: int = 3):
    net, loads = manufactured_problem(refine_uniform(cross_network(), k), cross_solution())
    return net, assemble(net, p, RULE, loads)


def unit_grid(cells=(2, 2, 2)) -> CoarseGrid:
    return CoarseGrid(lower=np.zeros(3), upper=np.ones(3), cells=cells)


class TestCoarseGrid:
    def test_vertex_is_cardinal(self):
        grid = unit_grid()
        values = grid.basis_values([0.5, 0.0, 1.0])
        assert values == {grid.vertex_index(1, 0, 2): pytest.approx(1.0)}

    def test_cell_center_gets_eighths(self):
        values = unit_grid().basis_values([0.25, 0.25, 0.75])
        assert len(values) == 8
        assert_allclose(list(values.values()), 0.125)

    def test_partition_of_unity(self, rng):
        grid = unit_grid((3, 2, 4))
        for point in rng.uniform(0.0, 1.0, (20, 3)):
            assert sum(grid.basis_values(point).values()) == pytest.approx(1.0)

    def test_outside_point(self):
        with pytest.raises(SolverConfigurationError):
            unit_grid().basis_values([1.5, 0.5, 0.5])

    def test_around_contains_flat_network(self, cross):
        grid = CoarseGrid.around(cross.positions, (2, 2, 1))
        assert all(grid.contains(p) for p in cross.positions)
        assert grid.num_vertices == 18
        assert grid.upper[2] > 0.0 > grid.lower[2]

    def test_vertex_coordinates(self):
        grid = unit_grid((2, 4, 1))
        assert_allclose(grid.vertex(grid.vertex_index(1, 3, 1)), [0.5, 0.75, 1.0])


class TestCoarseInterpolation:
    def test_weights_renormalized(self, cross):
        grid = CoarseGrid.around(cross.positions, (2, 2, 1))
        weights = trilinear_weights(grid, refine_uniform(cross, 2).positions)
        assert_allclose(weights.sum(axis=1), 1.0)
        assert weights[weights > 0].min() > 1e-6

    def test_strict_policy_drops_dirichlet_supports(self, cross):
        net = refine_uniform(cross, 2)
        grid = CoarseGrid.around(net.positions, (2, 2, 1))
        strict = build_coarse_interpolation(net, grid, "strict")
        free = build_coarse_interpolation(net, grid, "free")
        assert strict.shape[0] == free.shape[0] == 6 * len(net.free_nodes)
        assert 0 < strict.shape[1] < free.shape[1]
        assert strict.shape[1] % 6 == 0

    def test_columns_linearly_independent(self, cross):
        net = refine_uniform(cross, 2)
        grid = CoarseGrid.around(net.positions, (2, 2, 1))
        r0 = build_coarse_interpolation(net, grid, "free").toarray()
        assert np.linalg.matrix_rank(r0) == r0.shape[1]

    def test_unknown_policy(self, cross):
        with pytest.raises(SolverConfigurationError):
            build_coarse_interpolation(cross, CoarseGrid.around(cross.positions, (1, 1, 1)), "loose")


class TestBuildSchwarz:
    def test_subdomains_cover_free_dofs(self):
        net, system = manufactured_cross(2)
        grid = CoarseGrid.around(net.positions, (2, 2, 1))
        setup = build_schwarz(system, net, grid)
        assert setup.num_subdomains == grid.num_vertices
        assert setup.covered().min() >= 1

    def test_empty_strict_coarse_space(self, cross):
        system = assemble(cross, 2, RULE)
        grid = CoarseGrid.around(cross.positions, (1, 1, 1))
        with pytest.raises(SolverConfigurationError):
            build_schwarz(system, cross, grid, policy="strict")

    def test_single_cell_free_policy_is_spd(self, rng):
        net, system = manufactured_cross(1)
        setup = build_schwarz(system, net, CoarseGrid.around(net.positions, (1, 1, 1)), policy="free")
        dense = np.column_stack([apply_preconditioner(setup, e) for e in np.eye(system.size)])
        assert_allclose(dense, dense.T, atol=1e-10 * np.abs(dense).max())
        assert np.linalg.eigvalsh(0.5 * (dense + dense.T)).min() > 0.0


class TestApplyPreconditioner:
    @pytest.fixture
    def setup(self):
        net, system = manufactured_cross(2)
        return build_schwarz(system, net, CoarseGrid.around(net.positions, (2, 2, 1)))

    def test_zero(self, setup):
        assert not np.any(apply_preconditioner(setup, np.zeros(setup.size)))

    def test_symmetric_positive_linear(self, setup, rng):
        r, s = rng.normal(size=setup.size), rng.normal(size=setup.size)
        br, bs = apply_preconditioner(setup, r), apply_preconditioner(setup, s)
        assert br @ s == pytest.approx(r @ bs, rel=1e-8)
        assert br @ r > 0.0
        combined = apply_preconditioner(setup, 2.5 * r + s)
        assert np.linalg.norm(combined - (2.5 * br + bs)) <= 1e-9 * np.linalg.norm(combined)

    def test_dimension_mismatch(self, setup):
        with pytest.raises(DimensionError):
            apply_preconditioner(setup, np.zeros(setup.size + 1))


class TestPcg:
    def test_diagonal_system_identity_preconditioner(self):
        matrix = sp.diags([2.0, 5.0]).tocsr()
        x, report = pcg(matrix, None, tol=1e-14, rhs=np.array([1.0, 1.0]))
        assert report.converged
        assert report.iterations <= 2
        assert_allclose(x, [0.5, 0.2])

    def test_zero_rhs(self, cross):
        system = assemble(refine_uniform(cross, 1), 2, RULE)
        x, report = pcg(system)
        assert report.iterations == 0 and report.converged
        assert not np.any(x)

    def test_schwarz_matches_direct(self):
        net, system = manufactured_cross(2)
        precond, _ = make_preconditioner(system, net, SolverConfig(grid="2,2,1"))
        x, report = pcg(system, precond, tol=1e-10)
        reference = direct_solve(system)
        assert report.converged
        assert report.final_residual <= 1e-10
        assert np.linalg.norm(x - reference) <= 1e-8 * np.linalg.norm(reference)

    def test_search_directions_a_orthogonal(self):
        net, system = manufactured_cross(2)
        precond, _ = make_preconditioner(system, net, SolverConfig())
        _, report = pcg(system, precond, tol=1e-12, record_directions=True)
        directions = report.directions[:10]
        for i, p_i in enumerate(directions):
            ap_i = system.matrix @ p_i
            for p_j in directions[:i]:
                scale = np.sqrt((p_j @ (system.matrix @ p_j)) * (p_i @ ap_i))
                assert abs(p_j @ ap_i) <= 1e-6 * scale

    def test_exact_single_subdomain_converges_immediately(self):
        net, system = manufactured_cross(2)
        everything = np.arange(system.size)
        block = system.matrix.tocsc()
        setup = SchwarzSetup(grid=CoarseGrid.around(net.positions, (1, 1, 1)), r0=sp.csr_matrix((system.size, 0)),
                             coarse_factor=None, subdomains=[everything], local_matrices=[block],
                             local_factors=[splu(block)], size=system.size, mode="local")
        _, report = pcg(system, lambda r: apply_preconditioner(setup, r), tol=1e-10)
        assert report.iterations <= 3

    def test_inexact_local_solves_with_flexible_pcg(self):
        net, system = manufactured_cross(2)
        config = SolverConfig(local_solver="cg:1e-3")
        assert config.flexible
        precond, setup = make_preconditioner(system, net, config)
        assert setup.inner_tolerance == pytest.approx(1e-3)
        x, report = pcg(system, precond, tol=1e-10, flexible=config.flexible)
        assert report.converged
        reference = direct_solve(system)
        assert np.linalg.norm(x - reference) <= 1e-7 * np.linalg.norm(reference)

    def test_maxit_reports_nonconvergence(self):
        _, system = manufactured_cross(2)
        _, report = pcg(system, None, tol=1e-14, maxit=3)
        assert not report.converged
        assert report.iterations == 3
        assert len(report.residual_history) == 4

    def test_indefinite_operator_breaks_down(self):
        matrix = sp.diags([1.0, -1.0]).tocsr()
        with pytest.raises(BreakdownError):
            pcg(matrix, None, rhs=np.array([1.0, 2.0]))

    @pytest.mark.parametrize("threads", [1, 3])
    def test_threaded_preconditioner_is_deterministic(self, threads):
        net, system = manufactured_cross(2)
        results = []
        for _ in range(2):
            precond, _ = make_preconditioner(system, net, SolverConfig(threads=threads))
            results.append(pcg(system, precond, tol=1e-10)[0])
        assert np.array_equal(results[0], results[1])

    def test_matches_direct_on_random_networks(self, rng):
        for draw in range(4):
            net = random_network(rng, 20, 6, num_dirichlet=2, loaded=True)
            system = assemble(net, 2, RULE)
            assert system.size <= 500
            precond, _ = make_preconditioner(system, net, SolverConfig(grid=(2, 2, 2), coarse_policy="free"))
            x, report = pcg(system, precond, tol=1e-12)
            reference = direct_solve(system)
            assert np.linalg.norm(x - reference) <= 1e-8 * np.linalg.norm(reference)

    @pytest.mark.parametrize("mode", ["none", "coarse", "local", "schwarz"])
    def test_every_mode_converges(self, mode):
        net, system = manufactured_cross(2)
        precond, _ = make_preconditioner(system, net, SolverConfig(precond=mode))
        x, report = pcg(system, precond, tol=1e-10)
        assert report.converged
        assert_allclose(x, direct_solve(system), rtol=1e-6, atol=1e-8)

    @pytest.mark.parametrize("mode", ["none", "coarse", "local", "schwarz"])
    def test_all_dirichlet_network_needs_no_preconditioner(self, mode):
        nodes = [Node(id=0, position=np.zeros(3), kind=DIRICHLET, dirichlet_u=np.zeros(3), dirichlet_r=np.zeros(3)),
                 Node(id=1, position=np.array([2.0, 0.0, 0.0]), kind=DIRICHLET,
                      dirichlet_u=np.array([0.1, 0.0, 0.0]), dirichlet_r=np.zeros(3))]
        net = Network(nodes, [make_edge(0, nodes, 0, 1)])
        system = assemble(net, 2, RULE)
        assert system.size == 0
        precond, setup = make_preconditioner(system, net, SolverConfig(precond=mode))
        assert precond is None and setup is None
        x, report = pcg(system, precond)
        assert report.converged and report.iterations == 0
        stretch = recover(system, x).edgewise[0]
        assert_allclose(stretch.endpoint("u", 1), [0.1, 0.0, 0.0], atol=1e-12)
        assert_allclose(stretch.endpoint("n", 0), [-0.05, 0.0, 0.0], atol=1e-12)

    def test_coarse_mode_adds_jacobi_to_galerkin_projection(self, rng):
        net, system = manufactured_cross(2)
        _, setup = make_preconditioner(system, net, SolverConfig(precond="coarse"))
        target = setup.r0 @ rng.normal(size=setup.coarse_dimension)
        r = system.matrix @ target
        z = apply_preconditioner(setup, r) - r / system.matrix.diagonal()
        assert np.linalg.norm(z - target) <= 1e-8 * np.linalg.norm(target)


class TestSpectralEquivalence:
    def test_positive_bounds(self, cross):
        system = assemble(refine_uniform(cross, 1), 2, RULE)
        theta_max, theta_min = spectral_equivalence_report(system)
        assert theta_max >= theta_min > 0.0

    def test_material_scaling(self, cross):
        net = refine_uniform(cross, 1)
        theta = spectral_equivalence_report(assemble(net, 2, RULE))
        # tau is scaled along with the material so the condensed operator scales linearly
        scaled = spectral_equivalence_report(assemble(net.with_material(4.0), 2, StabilizationRule(c=4.0)))
        assert_allclose(scaled, 4.0 * np.array(theta), rtol=1e-8)

    @pytest.mark.slow
    def test_ratio_stable_under_refinement(self, cross):
        ratios = []
        for k in range(4):
            theta_max, theta_min = spectral_equivalence_report(assemble(refine_uniform(cross, k), 3, RULE))
            ratios.append(theta_max / theta_min)
        assert max(ratios) / min(ratios) < 2.0


@pytest.mark.slow
def test_two_level_iterations_uniform_under_refinement():
    schwarz, plain = [], []
    for k in range(2, 6):
        net, system = manufactured_cross(k)
        precond, _ = make_preconditioner(system, net, SolverConfig(grid="2,2,1"))
        schwarz.append(pcg(system, precond, tol=1e-10)[1].iterations)
        if k == 5:
            plain.append(pcg(system, None, tol=1e-10)[1].iterations)
    assert max(schwarz) / min(schwarz) < 2.0
    assert plain[0] >= 3 * schwarz[-1]
