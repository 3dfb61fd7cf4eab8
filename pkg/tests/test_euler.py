"""Tests for the outer corrector solver, corner compatibility, and decay fits."""

import numpy as np
import pytest

from blexp.errors import InvariantError
from blexp.euler import (
    BackgroundShear,
    EulerCorrectorProblem,
    check_corner_compatibility,
    fit_decay_rate,
    make_wellprepared_data,
    solve_euler_layer,
)
from blexp.grids import Grid1D, Grid2D, ScalarField2D
from blexp.operators import derivative_matrix, diff

L = 0.1


def grid(nx=33, nY=96, Ymax=40.0):
    return Grid2D(Grid1D.uniform(L, nx), Grid1D.tanh_clustered(Ymax, nY, 2.0))


def gentle_wall(x, amp=0.3):
    return amp / np.sqrt(2.0 * (0.1 * x + 1.0))


@pytest.fixture(scope="module")
def shear():
    return BackgroundShear(base=1.0, delta=0.2)


class TestSolve:
    def test_zero_data_zero_solution(self, shear):
        g = grid()
        Y = g.y.nodes
        prob = EulerCorrectorProblem(
            g, shear, None, wall=np.zeros(g.x.n),
            side0=np.zeros(g.y.n), sideL=np.zeros(g.y.n),
            inflow_u=0.5 * np.exp(-Y),
        )
        sol = solve_euler_layer(prob)
        assert sol.v.max_abs() == 0.0
        assert np.max(np.abs(sol.u.values - prob.inflow_u[None, :])) == 0.0

    def test_manufactured_solution_order(self, shear):
        def run(nx, nY):
            g = grid(nx, nY)
            X, Y = g.meshgrid()
            vstar = np.exp(-Y) * (1.2 + np.sin(np.pi * X / L))
            v_xx = -np.exp(-Y) * (np.pi / L) ** 2 * np.sin(np.pi * X / L)
            F = shear.u(Y) * (v_xx + vstar) + shear.uYY(Y) * vstar
            prob = EulerCorrectorProblem(
                g, shear, ScalarField2D(g, F), wall=vstar[:, 0],
                side0=vstar[0], sideL=vstar[-1], inflow_u=np.exp(-Y[0]),
            )
            return np.max(np.abs(solve_euler_layer(prob).v.values - vstar))

        errs = [run(17, 48), run(33, 96), run(65, 192)]
        order = np.polyfit(np.log([1 / 48, 1 / 96, 1 / 192]), np.log(errs), 1)[0]
        assert order >= 1.9

    def test_constant_shear_fine_grid_oracle(self):
        # u0e = 1: pure Laplacian; compare against a nested 3x-refined
        # oracle at the shared nodes.  The wall trace touches zero cubically
        # at both ends so the data are corner-compatible to order 2.
        const = BackgroundShear(base=1.0, delta=0.0)

        def solve_on(nx, nY):
            g = Grid2D(Grid1D.uniform(L, nx), Grid1D.tanh_clustered(12.0, nY, 4.0))
            xi = g.x.nodes / L
            wall = 0.4 * 64.0 * xi**3 * (1 - xi) ** 3
            prob = EulerCorrectorProblem(
                g, const, None, wall=wall,
                side0=np.zeros(nY), sideL=np.zeros(nY),
                inflow_u=np.zeros(nY),
            )
            return solve_euler_layer(prob)

        coarse = solve_on(129, 176)
        fine = solve_on(3 * 128 + 1, 3 * 175 + 1)
        vals_f = fine.v.values[::3, ::3]
        assert vals_f.shape == coarse.v.values.shape
        scale = np.max(np.abs(vals_f))
        assert np.max(np.abs(coarse.v.values - vals_f)) < 1e-6 * scale

    def test_interior_residual_small(self, shear):
        g = grid()
        prob = make_wellprepared_data(g, shear, None, gentle_wall(g.x.nodes))
        sol = solve_euler_layer(prob)
        assert sol.residual_inf < 1e-9

    def test_divergence_free_recovery(self, shear):
        g = grid(65, 192)
        prob = make_wellprepared_data(g, shear, None, gentle_wall(g.x.nodes))
        sol = solve_euler_layer(prob)
        div = diff(sol.u, "x", 1).values + diff(sol.v, "y", 1).values
        assert np.max(np.abs(div[1:-1, 1:-1])) < 5e-6

    def test_maximum_principle_sanity(self, shear):
        g = grid()
        prob = make_wellprepared_data(g, shear, None, gentle_wall(g.x.nodes))
        sol = solve_euler_layer(prob)
        inner = sol.v.values[1:-1, 1:-1]
        edges = np.concatenate(
            [sol.v.values[0], sol.v.values[-1], sol.v.values[:, 0], sol.v.values[:, -1]]
        )
        assert inner.max() <= edges.max() + 1e-7
        assert inner.min() >= edges.min() - 1e-7

    def test_sign_changing_shear_rejected(self):
        with pytest.raises(InvariantError):
            BackgroundShear(base=1.0, delta=-1.5)

    def test_decay_report(self, shear):
        g = grid()
        prob = make_wellprepared_data(g, shear, None, gentle_wall(g.x.nodes),
                                      decay_class="exp", decay_rate=2.0)
        sol = solve_euler_layer(prob)
        rep = sol.decay_report(n0=2.0)
        assert rep["pass"]


class TestCornerCompatibility:
    def test_generator_data_pass(self, shear):
        g = grid()
        prob = make_wellprepared_data(g, shear, None, gentle_wall(g.x.nodes))
        rep = check_corner_compatibility(prob)
        assert rep["corner_00"] < 1e-10 and rep["corner_L0"] < 1e-10
        assert rep["pass"]

    def test_perturbation_shifts_mismatch_linearly(self, shear):
        g = grid()
        prob = make_wellprepared_data(g, shear, None, gentle_wall(g.x.nodes))
        base = check_corner_compatibility(prob)["corner_00"]
        # add a profile whose discrete wall curvature is exactly one
        DYY = derivative_matrix(g.y, 2, window=5)
        Y = g.y.nodes
        bump = 0.5 * Y**2 * np.exp(-2 * Y)
        bump = bump / float((DYY @ bump)[0])
        pert = EulerCorrectorProblem(
            g, prob.shear, None, prob.wall, prob.side0 + bump, prob.sideL,
            prob.inflow_u,
        )
        shifted = check_corner_compatibility(pert)["corner_00"]
        assert abs(shifted - (base + 1.0)) < 1e-9 or abs(shifted - abs(base - 1.0)) < 1e-9

    def test_zero_data_pass(self, shear):
        g = grid()
        prob = EulerCorrectorProblem(
            g, shear, None, wall=np.zeros(g.x.n),
            side0=np.zeros(g.y.n), sideL=np.zeros(g.y.n),
            inflow_u=np.zeros(g.y.n),
        )
        assert check_corner_compatibility(prob)["pass"]

    def test_side_closeness_small(self, shear):
        g = grid()
        prob = make_wellprepared_data(g, shear, None, gentle_wall(g.x.nodes))
        assert prob.side_closeness() < 10 * L


class TestDecayFit:
    def test_power_law(self):
        Y = np.linspace(0.0, 40.0, 400)
        rate, status = fit_decay_rate(np.where(Y > 0, Y, 1.0) ** -3.0, Y, "poly")
        assert status == "ok"
        assert abs(rate - 3.0) < 0.05

    def test_exponential(self):
        Y = np.linspace(0.0, 40.0, 400)
        rate, status = fit_decay_rate(np.exp(-2.0 * Y), Y, "exp")
        assert status == "ok"
        assert abs(rate - 2.0) < 0.05

    def test_noise_floor_indeterminate(self):
        Y = np.linspace(0.0, 40.0, 400)
        rng = np.random.default_rng(7)
        trace = np.where(Y < 5, 1.0, 0.0) + 1e-250 * rng.standard_normal(Y.size)
        rate, status = fit_decay_rate(trace, Y, "exp")
        assert status == "indeterminate"
