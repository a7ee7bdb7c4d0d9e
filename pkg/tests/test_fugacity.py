"""Service rates, Gibbs objective, capacity LP, fugacity solvers."""

import math

import numpy as np
import pytest

from pgd_csma import (
    DimensionError,
    FugacityVector,
    InapplicableError,
    IntentRule,
    InterferenceGraph,
    ParameterError,
    capacity_check,
    enumerate_feasible,
    fixed_point_fugacities,
    fugacity_bounds_report,
    gibbs_gradient,
    gibbs_objective,
    matrix_stationary,
    product_form_stationary,
    service_rate_identity_residual,
    service_rates,
    solve_fugacities,
    transition_matrix,
)
from conftest import random_graph


class TestServiceRates:
    def test_path3_unit_fugacity(self, path3_space, unit_fug):
        rates = service_rates(path3_space, unit_fug)
        np.testing.assert_allclose(rates.s, [0.4, 0.2, 0.4], atol=1e-15)
        np.testing.assert_allclose(rates.p0, [0.8, 0.4, 0.8], atol=1e-15)

    def test_identity_residual_zero(self, path3_space):
        fug = FugacityVector(np.array([0.3, 2.0, 0.9]))
        assert service_rate_identity_residual(path3_space, fug) < 1e-14

    def test_p0_from_transition_chain(self, path3, path3_space, half_intent):
        # independent route: stationary vector of the transition matrix,
        # then sum mass over schedules whose N(v) is silent
        fug = FugacityVector(np.array([0.6, 1.4, 0.8]))
        P = transition_matrix(path3, path3_space, fug, half_intent)
        pi = matrix_stationary(P)
        rates = service_rates(path3_space, fug)
        for v in range(3):
            nbr = path3.neighbor_masks[v]
            s_v = sum(pi[i] for i, m in enumerate(path3_space.masks) if m >> v & 1)
            p0_v = sum(pi[i] for i, m in enumerate(path3_space.masks) if not m & nbr)
            assert rates.s[v] == pytest.approx(s_v, abs=1e-12)
            assert rates.p0[v] == pytest.approx(p0_v, abs=1e-12)


class TestGibbsObjective:
    def test_value_at_zero(self, path3_space):
        nu = np.array([0.2, 0.1, 0.2])
        # r = 0 gives Z = K, so F(0) = -log K
        assert gibbs_objective(path3_space, np.zeros(3), nu) == pytest.approx(
            -math.log(5)
        )

    def test_gradient_is_nu_minus_service(self, path3_space):
        r = np.array([0.3, -0.8, 1.1])
        nu = np.array([0.25, 0.15, 0.3])
        grad = gibbs_gradient(path3_space, r, nu)
        rates = service_rates(path3_space, FugacityVector(np.exp(r)))
        np.testing.assert_allclose(grad, nu - rates.s, atol=1e-14)

    @pytest.mark.parametrize("seed", range(4))
    def test_gradient_matches_central_differences(self, seed):
        rng = np.random.default_rng(4400 + seed)
        n = int(rng.integers(2, 7))
        g = random_graph(rng, n, 0.5)
        space = enumerate_feasible(g)
        r = rng.normal(0.0, 1.0, size=n)
        nu = rng.uniform(0.05, 0.2, size=n)
        grad = gibbs_gradient(space, r, nu)
        h = 1e-6
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            fd = (gibbs_objective(space, r + e, nu)
                  - gibbs_objective(space, r - e, nu)) / (2 * h)
            assert grad[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)


class TestCapacityCheck:
    def test_interior_point(self, path3_space):
        res = capacity_check(path3_space, np.array([0.5, 0.0, 0.5]))
        assert res.member and res.interior
        assert res.margin == pytest.approx(0.25, abs=1e-9)
        assert bool(res)

    def test_boundary_point(self, path3_space):
        res = capacity_check(path3_space, np.array([0.5, 0.5, 0.5]))
        assert res.member and not res.interior
        assert res.margin == pytest.approx(0.0, abs=1e-9)

    def test_outside_point(self, path3_space):
        res = capacity_check(path3_space, np.array([0.6, 0.5, 0.6]))
        assert not res.member and not res.interior
        assert res.margin == pytest.approx(-0.05, abs=1e-9)
        assert not bool(res)

    def test_rho_scaling(self, path3_space):
        nu = np.array([0.3, 0.2, 0.3])
        full = capacity_check(path3_space, nu, rho=1.0)
        assert full.interior and full.margin == pytest.approx(0.25, abs=1e-9)
        half = capacity_check(path3_space, nu, rho=0.5)
        assert half.member and not half.interior
        assert half.margin == pytest.approx(0.0, abs=1e-9)

    def test_strict_flag_changes_bool(self, path3_space):
        nu = np.array([0.5, 0.5, 0.5])
        assert bool(capacity_check(path3_space, nu))
        assert not capacity_check(path3_space, nu, strict=True).interior

    def test_parameter_validation(self, path3_space):
        with pytest.raises(ParameterError):
            capacity_check(path3_space, np.array([-0.1, 0.0, 0.0]))
        with pytest.raises(ParameterError):
            capacity_check(path3_space, np.array([0.1, 0.1, 0.1]), rho=0.0)
        with pytest.raises(DimensionError):
            capacity_check(path3_space, np.array([0.1, 0.1]))


class TestSolveFugacities:
    def test_single_link_closed_form(self):
        # s = lam/(1+lam), so nu = 0.3 inverts to lam = 3/7; the start
        # point is already exact and the solver must not move
        g = InterferenceGraph.path(1)
        space = enumerate_feasible(g)
        sol = solve_fugacities(space, np.array([0.3]))
        assert sol.converged
        assert sol.iterations == 0
        assert sol.fug.values[0] == pytest.approx(3.0 / 7.0, abs=1e-9)
        assert sol.method == "projected_gradient_ascent"

    def test_complete_graph_closed_form(self):
        # on a complete graph s_i = lam_i/(1+sum lam), inverted by
        # lam_i = nu_i/(1-sum nu)
        g = InterferenceGraph.complete(4)
        space = enumerate_feasible(g)
        nu = np.array([0.1, 0.2, 0.15, 0.05])
        sol = solve_fugacities(space, nu)
        expect = nu / (1.0 - nu.sum())
        np.testing.assert_allclose(sol.fug.values, expect, atol=1e-7)
        rates = service_rates(space, sol.fug)
        np.testing.assert_allclose(rates.s, nu, atol=1e-8)

    def test_frozen_path3_instance(self, path3_space):
        # s = (0.3, 0.2, 0.3) is met exactly by lam = (0.6, 0.64, 0.6)
        sol = solve_fugacities(path3_space, np.array([0.3, 0.2, 0.3]))
        np.testing.assert_allclose(sol.fug.values, [0.6, 0.64, 0.6], atol=1e-7)

    def test_gradient_vanishes_at_solution(self, path3_space):
        nu = np.array([0.25, 0.12, 0.2])
        sol = solve_fugacities(path3_space, nu)
        grad = gibbs_gradient(path3_space, sol.r, nu)
        assert np.max(np.abs(grad)) <= 1e-8
        assert sol.grad_norm <= 1e-8

    def test_agrees_with_fixed_point_oracle(self, path3_space):
        nu = np.array([0.28, 0.17, 0.22])
        a = solve_fugacities(path3_space, nu)
        b = fixed_point_fugacities(path3_space, nu)
        assert b.method == "damped_fixed_point"
        assert b.converged
        np.testing.assert_allclose(a.fug.values, b.fug.values, atol=1e-6)

    def test_deterministic(self, path3_space):
        nu = np.array([0.28, 0.17, 0.22])
        a = solve_fugacities(path3_space, nu)
        b = solve_fugacities(path3_space, nu)
        np.testing.assert_array_equal(a.fug.values, b.fug.values)
        assert a.iterations == b.iterations

    def test_rejects_rates_outside_unit_interval(self, path3_space):
        with pytest.raises(InapplicableError, match="strictly in"):
            solve_fugacities(path3_space, np.array([0.3, 0.0, 0.3]))
        with pytest.raises(InapplicableError, match="strictly in"):
            solve_fugacities(path3_space, np.array([0.3, 1.0, 0.3]))

    def test_rejects_infeasible_rates(self, path3_space):
        with pytest.raises(InapplicableError, match="LP margin"):
            solve_fugacities(path3_space, np.array([0.6, 0.5, 0.6]))

    def test_rejects_boundary_rates(self, path3_space):
        with pytest.raises(InapplicableError, match="capacity region"):
            solve_fugacities(path3_space, np.array([0.5, 0.5, 0.5]))


class TestFixedPoint:
    def test_single_link(self):
        g = InterferenceGraph.path(1)
        space = enumerate_feasible(g)
        sol = fixed_point_fugacities(space, np.array([0.3]))
        assert sol.iterations == 0  # the start point already solves it
        assert sol.fug.values[0] == pytest.approx(3.0 / 7.0, abs=1e-9)

    def test_damping_validation(self, path3_space):
        with pytest.raises(ParameterError, match="damping"):
            fixed_point_fugacities(path3_space, np.array([0.2, 0.1, 0.2]),
                                   damping=0.0)


class TestBoundsReport:
    def test_complete_graph_bounds(self):
        g = InterferenceGraph.complete(3)
        space = enumerate_feasible(g)
        nu = np.full(3, 0.2)
        rep = fugacity_bounds_report(space, nu, rho=0.8, nu_min=0.2)
        assert rep.chi == 1
        assert rep.rho_ok  # chi = 1 admits any rho <= 1
        assert rep.interior
        assert rep.upper_bound == pytest.approx(4.0)
        np.testing.assert_allclose(rep.lam, 0.5, atol=1e-7)
        assert rep.upper_ok
        assert rep.lower_ok

    def test_path3_respects_quarter_load(self, path3_space):
        # chi = 2 on the path, so the guarantee needs rho <= 1/2
        nu = np.array([0.1, 0.05, 0.1])
        rep = fugacity_bounds_report(path3_space, nu, rho=0.5)
        assert rep.chi == 2
        assert rep.rho_ok
        assert rep.upper_bound == pytest.approx(1.0)
        assert rep.upper_ok
        assert rep.lower_ok is None

    def test_rho_condition_reported_not_enforced(self, path3_space):
        nu = np.array([0.3, 0.2, 0.3])
        rep = fugacity_bounds_report(path3_space, nu, rho=0.9)
        assert not rep.rho_ok
        assert rep.lam.shape == (3,)

    def test_nu_min_must_lower_bound_rates(self, path3_space):
        with pytest.raises(ParameterError, match="nu_min"):
            fugacity_bounds_report(path3_space, np.array([0.2, 0.1, 0.2]),
                                   rho=0.5, nu_min=0.15)


@pytest.mark.parametrize("seed", range(5))
def test_solver_roundtrip_random_instances(seed):
    rng = np.random.default_rng(4700 + seed)
    n = int(rng.integers(2, 7))
    g = random_graph(rng, n, 0.5)
    space = enumerate_feasible(g)
    # rates safely inside the region: scale a random mixture of schedules
    weights = rng.dirichlet(np.ones(space.size))
    nu = 0.6 * weights @ space.member_matrix()
    nu = np.clip(nu, 0.02, 0.9)
    if not capacity_check(space, nu).interior:
        pytest.skip("sampled target landed on the boundary")
    sol = solve_fugacities(space, nu)
    rates = service_rates(space, sol.fug)
    np.testing.assert_allclose(rates.s, nu, atol=1e-8)
