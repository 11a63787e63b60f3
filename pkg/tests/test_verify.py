import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_network, segment
from core.config import StabilizationRule
from core.errors import InternalConsistencyError
from core.network import cross_network, refine_uniform, rotate_network
from core.verify import (ExactSolution, asymptotic_eoc, convergence_study, cross_solution, derive_sources,
                         exact_duals, l2_errors, manufactured_problem, p_sweep, solve_manufactured,
                         translation_solution)

PI = math.pi


def rotated(exact: ExactSolution, q: np.ndarray) -> ExactSolution:
    """The exact fields of a scene rotated by q."""
    return ExactSolution(
        u=lambda X: q @ exact.u(q.T @ X),
        r=lambda X: q @ exact.r(q.T @ X),
        jac_u=lambda X: q @ exact.jac_u(q.T @ X) @ q.T,
        jac_r=lambda X: q @ exact.jac_r(q.T @ X) @ q.T,
        hess_u=lambda X: np.einsum("cd,def,ae,bf->cab", q, exact.hess_u(q.T @ X), q, q),
        hess_r=lambda X: np.einsum("cd,def,ae,bf->cab", q, exact.hess_r(q.T @ X), q, q),
        name=f"rotated {exact.name}",
    )


class TestDeriveSources:
    def test_x_aligned_edge(self):
        net = segment()
        edge = net.edges[0]
        f, g = derive_sources(cross_solution(), net, edge)
        n, _ = exact_duals(cross_solution(), net, edge)
        for x in (0.1, 0.37, 0.8):
            s, c = math.sin(PI * x), math.cos(PI * x)
            assert_allclose(n(x), [0.0, 0.0, (PI - 1.0) * s], atol=1e-13)
            assert_allclose(f(x), [0.0, 0.0, PI * (PI - 1.0) * c], atol=1e-12)
            assert_allclose(g(x), [0.0, (PI ** 2 - PI + 1.0) * s, 0.0], atol=1e-12)

    def test_translation_has_no_sources(self, rng):
        net = random_network(rng, 6, 2)
        exact = translation_solution([1.0, -2.0, 0.5])
        for edge in net.edges:
            f, g = derive_sources(exact, net, edge)
            assert not np.any(f(0.5 * edge.length))
            assert not np.any(g(0.5 * edge.length))

    def test_wrong_jacobian_is_caught(self):
        net = segment()
        broken = replace(cross_solution(), jac_u=lambda X: np.zeros((3, 3)))
        with pytest.raises(InternalConsistencyError) as info:
            derive_sources(broken, net, net.edges[0])
        assert info.value.edge_id == 0

    def test_checks_every_cross_edge(self):
        net = refine_uniform(cross_network(), 2)
        for edge in net.edges:
            derive_sources(cross_solution(), net, edge)


class TestManufacturedProblem:
    def test_tips_carry_exact_traces(self):
        exact = cross_solution()
        net, _ = manufactured_problem(refine_uniform(cross_network(), 1), exact)
        solution, _ = solve_manufactured(net, exact, 2, StabilizationRule())
        for node_id in net.dirichlet_nodes:
            position = net.nodes[node_id].position
            assert np.array_equal(solution.hybrid[node_id, :3], exact.u(position))
            assert np.array_equal(solution.hybrid[node_id, 3:], exact.r(position))

    def test_center_loads_cancel(self):
        net, _ = manufactured_problem(cross_network(), cross_solution())
        center = net.nodes[4]
        # opposite arms carry equal and opposite end fluxes at the center
        assert_allclose(center.force, 0.0, atol=1e-14)
        assert_allclose(center.moment, 0.0, atol=1e-14)


class TestL2Errors:
    def test_translation_is_exact(self, rng):
        exact = translation_solution([0.3, -1.2, 0.7])
        net = random_network(rng, 12, 3, num_dirichlet=2)
        solution, _ = solve_manufactured(net, exact, 2, StabilizationRule())
        primal, dual = l2_errors(solution, exact)
        assert primal < 1e-9
        assert dual < 1e-9

    def test_rotation_invariance(self, rng):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        q *= np.sign(np.linalg.det(q))
        net = refine_uniform(cross_network(), 1)
        exact = cross_solution()
        reference = l2_errors(solve_manufactured(net, exact, 2, StabilizationRule())[0], exact)
        turned = rotated(exact, q)
        errors = l2_errors(solve_manufactured(rotate_network(net, q), turned, 2, StabilizationRule())[0], turned)
        assert_allclose(errors, reference, rtol=1e-8)

    def test_errors_decrease_under_refinement(self):
        exact = cross_solution()
        errors = [l2_errors(solve_manufactured(refine_uniform(cross_network(), k), exact, 2,
                                               StabilizationRule())[0], exact) for k in (1, 2, 3)]
        assert errors[0][0] > errors[1][0] > errors[2][0] > 0.0
        assert errors[0][1] > errors[1][1] > errors[2][1] > 0.0


class TestConvergenceStudy:
    def test_linear_elements_converge(self):
        records = convergence_study(1, 0, 4)
        assert [r.level for r in records] == [0, 1, 2, 3]
        assert records[0].eoc_primal is None
        assert records[-1].eoc_primal >= 1.0
        assert records[-1].h_max == pytest.approx(0.125)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            convergence_study(0, 0, 3)
        with pytest.raises(ValueError):
            convergence_study(1, 0, 2)

    def test_asymptotic_eoc_averages_last_two(self):
        records = convergence_study(1, 0, 4)
        expected = 0.5 * (records[-1].eoc_dual + records[-2].eoc_dual)
        assert asymptotic_eoc(records, "dual") == pytest.approx(expected)
        with pytest.raises(ValueError):
            asymptotic_eoc(records[:2])

    @pytest.mark.slow
    @pytest.mark.parametrize("p", [1, 2])
    @pytest.mark.parametrize("s", [-1, 0, 1])
    def test_rates_match_theory(self, p, s):
        records = convergence_study(p, s, 6)
        assert records[-1].eoc_primal == pytest.approx(p + 1 - max(s, 0), abs=0.15)
        assert records[-1].eoc_dual == pytest.approx(p + 1 - abs(s), abs=0.15)


class TestPSweep:
    def test_rejects_degrees_out_of_range(self):
        with pytest.raises(ValueError):
            p_sweep(1, [0, 1])
        with pytest.raises(ValueError):
            p_sweep(1, [9, 10, 11])
        with pytest.raises(ValueError):
            p_sweep(1, [])

    def test_ratios(self):
        records = p_sweep(1, [1, 2, 3])
        assert records[0].ratio_primal is None
        assert all(r.ratio_primal < 1.0 for r in records[1:])
        assert records[2].err_primal == pytest.approx(records[1].err_primal * records[2].ratio_primal)

    @pytest.mark.slow
    def test_exponential_decay_until_plateau(self):
        plateau = 1e-11
        records = p_sweep(2, range(1, 9))
        errors = [r.err_primal for r in records]
        for previous, current in zip(errors, errors[1:]):
            if previous > plateau:
                assert current < previous
        assert errors[-1] < 1e-9
        # above the roundoff floor, log-error against p bends down or stays straight
        logs = [math.log10(e) for e in errors if e > 1e-9]
        steps = np.diff(logs)
        for earlier, later in zip(steps, steps[1:]):
            assert later <= earlier + 0.25
