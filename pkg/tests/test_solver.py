import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coed import linalg
from coed.criteria import (
    Constraint,
    Criterion,
    Design,
    Problem,
    constraint_values,
    lagrangian_sensitivity,
    objective_value,
)
from coed.errors import Infeasible
from coed.model import CandidateSpace
from coed.solver import SolverTolerances, kkt_floor, max_reach, phase1_feasible, solve_lp, solve_saddle

from conftest import a_bound_problem, idx, indicator_problem


def random_space(rng, n, d, channel=True):
    info = []
    for _ in range(n):
        G = rng.standard_normal((1, d))
        info.append(linalg.pack(G.T @ G))
    scalars = {"u": rng.uniform(-1, 1, n)} if channel else {}
    return CandidateSpace(np.arange(n, dtype=float), np.array(info), scalars)


def assert_saddle(problem, sp, subspace, tol=1e-7):
    psi = lagrangian_sensitivity(problem, sp.design, sp.lam, subspace)
    assert np.min(psi) >= -tol
    np.testing.assert_allclose(lagrangian_sensitivity(problem, sp.design, sp.lam, sp.design.indices), 0.0, atol=tol)
    vals = constraint_values(problem, sp.design)
    mask = problem.inequality_mask
    assert np.all(vals[mask] <= 1e-9)
    np.testing.assert_allclose(vals[~mask], 0.0, atol=1e-9)
    assert np.all(sp.lam[mask] >= 0)
    np.testing.assert_allclose(sp.lam[mask] * vals[mask], 0.0, atol=1e-7)


class TestUnconstrained:
    def test_two_point_d_optimal(self, exp_space):
        sub = idx(exp_space, -1.0, 0.0)
        sp = solve_saddle(Problem(exp_space), sub)
        np.testing.assert_allclose(sp.design.weights, [0.5, 0.5], atol=1e-9)
        assert objective_value(Problem(exp_space), sp.design) == pytest.approx(6 + math.log(4), abs=1e-9)

    def test_single_point(self):
        space = CandidateSpace([[0.0]], [linalg.pack(np.eye(2))])
        sp = solve_saddle(Problem(space), [0])
        assert sp.design.weights.tolist() == [1.0]

    def test_warm_start_agrees(self, exp_space):
        problem = Problem(exp_space)
        sub = idx(exp_space, -1.0, -0.5, 0.0, 0.5, 1.0)
        cold = solve_saddle(problem, sub)
        warm = solve_saddle(problem, sub, start=Design.uniform(exp_space, idx(exp_space, -1.0, 1.0)))
        assert objective_value(problem, warm.design) == pytest.approx(objective_value(problem, cold.design), abs=1e-9)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_beats_random_designs(self, seed):
        rng = np.random.default_rng(seed)
        space = random_space(rng, 8, 3, channel=False)
        problem = Problem(space, Criterion(["D", "A"][seed % 2]))
        sp = solve_saddle(problem, np.arange(8))
        assert_saddle(problem, sp, np.arange(8))
        best = objective_value(problem, sp.design)
        for w in rng.dirichlet(np.ones(8), 1000):
            assert objective_value(problem, Design(space, np.arange(8), w)) >= best - 1e-9

    def test_monotone_in_subspace(self, exp_space):
        problem = Problem(exp_space)
        small = solve_saddle(problem, idx(exp_space, -1.0, 0.0))
        big = solve_saddle(problem, idx(exp_space, -1.0, 0.0, 0.5, 1.0))
        assert objective_value(problem, big.design) <= objective_value(problem, small.design) + 1e-12


class TestConstrained:
    def test_indicator_subspace_weights(self, exp_space):
        problem = indicator_problem(exp_space)
        sub = idx(exp_space, -1.0, 0.0, 0.679, 1.0)
        sp = solve_saddle(problem, sub)
        np.testing.assert_allclose(sp.design.weights, [0.5846, 0.3154, 0.0285, 0.0715], atol=0.01)
        assert_saddle(problem, sp, sub)

    def test_a_bound_subspace(self, exp_space):
        problem = a_bound_problem(exp_space)
        sub = idx(exp_space, -1.0, 0.0, 1.0)
        sp = solve_saddle(problem, sub)
        assert_saddle(problem, sp, sub)
        # the moment constraint is active
        assert constraint_values(problem, sp.design)[0] == pytest.approx(0.0, abs=1e-9)
        assert sp.lam[0] > 0

    def test_infeasible_subspace(self, exp_space):
        with pytest.raises(Infeasible):
            solve_saddle(a_bound_problem(exp_space), idx(exp_space, -1.0, 0.0))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_random_affine_constraint(self, seed):
        rng = np.random.default_rng(seed)
        space = random_space(rng, 8, 2)
        u = space.channel("u")
        # a bound strictly inside the reachable range keeps the problem feasible
        bound = float(np.quantile(u, 0.4))
        problem = Problem(space, Criterion("D"), (Constraint("u_bound", "integral", channel="u", offset=-bound),))
        try:
            sp = solve_saddle(problem, np.arange(8))
        except Infeasible:
            # every nonsingular design may violate the bound
            return
        assert_saddle(problem, sp, np.arange(8))
        best = objective_value(problem, sp.design)
        for w in rng.dirichlet(np.ones(8), 1000):
            if w @ u <= bound:
                assert objective_value(problem, Design(space, np.arange(8), w)) >= best - 1e-9


class TestPhase1:
    def test_a_bound_infeasible_on_two_points(self, exp_space):
        with pytest.raises(Infeasible):
            phase1_feasible(a_bound_problem(exp_space), idx(exp_space, -1.0, 0.0))

    def test_a_bound_feasible_on_three_points(self, exp_space):
        problem = a_bound_problem(exp_space)
        d = phase1_feasible(problem, idx(exp_space, -1.0, 0.0, 1.0))
        vals = constraint_values(problem, d)
        assert vals[0] <= -1e-6
        assert vals[1] == pytest.approx(0.0, abs=1e-9)

    def test_reference_start_is_feasible(self, exp_space):
        problem = a_bound_problem(exp_space)
        d = Design(exp_space, idx(exp_space, -1.0, 0.0, 1.0), [21 / 40, 18 / 40, 1 / 40])
        vals = constraint_values(problem, d)
        assert vals[0] < 0
        assert vals[1] == pytest.approx(0.0, abs=1e-15)


class TestLp:
    def test_picks_minimum(self):
        res = solve_lp([3.0, 1.0, 2.0])
        np.testing.assert_allclose(res.weights, [0, 1, 0], atol=1e-12)
        assert res.optimum == pytest.approx(1.0)

    def test_equality(self):
        res = solve_lp([0.0, 0.0, 1.0], A_eq=[[-1.0, 0.0, 1.0]], b_eq=[0.0])
        assert res.optimum == pytest.approx(0.0, abs=1e-12)
        assert res.weights[1] == pytest.approx(1.0)

    def test_infeasible(self):
        with pytest.raises(Infeasible):
            solve_lp([1.0, 1.0], A_eq=[[1.0, 1.0]], b_eq=[2.0])

    def test_max_reach(self):
        G = np.array([[-1.0, 0.0, 1.0]])
        assert max_reach(G, np.array([1.0])) == pytest.approx(1.0)
        assert max_reach(np.array([[1.0, 2.0]]), np.array([-1.0])) == pytest.approx(-1.0)
        assert max_reach(np.array([[1.0, 2.0], [1.0, 1.0]]), np.array([1.0, 0.0])) == -math.inf


class TestTolerances:
    def test_validation(self):
        with pytest.raises(ValueError):
            SolverTolerances(weight_floor=-1.0)
        with pytest.raises(ValueError):
            SolverTolerances(max_iter=0)

    def test_kkt_floor_tracks_conditioning(self):
        rng = np.random.default_rng(0)
        Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        well = (Q * [1.0, 2.0, 5.0]) @ Q.T
        assert kkt_floor(well, 1e-8) == 1e-8
        bad = (Q * [1.0, 1e-6, 1e6]) @ Q.T
        assert kkt_floor(bad, 1e-8) > 1e-8
