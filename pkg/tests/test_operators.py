"""Tests for grids, differential/integral operators, weights, cutoffs, and
the banded BVP solver."""

import numpy as np
import pytest

from blexp.errors import InvariantError, StencilError
from blexp.grids import Grid1D, Grid2D, ScalarField2D
from blexp.operators import (
    CutoffSpec,
    Weight,
    assemble_ode_operator,
    delta_eps,
    diff,
    integrate_x,
    integrate_y,
    solve_banded_bvp,
    tail_integral_y,
    trapz_weights,
)

L = 0.1
RNG = np.random.default_rng(20240801)


def make_grid(nx=33, ny=80, ymax=10.0):
    return Grid2D(Grid1D.uniform(L, nx), Grid1D.tanh_clustered(ymax, ny, 3.0))


def fit_order(hs, errs):
    return np.polyfit(np.log(hs), np.log(errs), 1)[0]


class TestDiff:
    def test_polynomial_exactness_y2(self):
        f = ScalarField2D.from_function(make_grid(), lambda X, Y: Y**2)
        d2 = diff(f, "y", 2)
        assert np.max(np.abs(d2.values - 2.0)) < 1e-9

    def test_constant_all_orders(self):
        # exact zero up to roundoff amplified by the 1/h^k stencil scale
        from blexp.operators import derivative_matrix

        g = make_grid()
        f = ScalarField2D.from_function(g, lambda X, Y: 0 * X + 3.7)
        for axis in ("x", "y"):
            grid1 = g.x if axis == "x" else g.y
            for order in (1, 2, 3, 4):
                D = derivative_matrix(grid1, order)
                scale = np.max(np.abs(D).sum(axis=1))
                assert diff(f, axis, order).max_abs() < 3.7 * scale * 1e-13

    def test_first_derivative_refinement_order(self):
        errs, hs = [], []
        for ny in (40, 80, 160):
            g = make_grid(nx=ny, ny=ny)
            f = ScalarField2D.from_function(g, lambda X, Y: np.sin(np.pi * X / L))
            dx = diff(f, "x", 1)
            exact = (np.pi / L) * np.cos(np.pi * g.x.nodes / L)
            errs.append(np.max(np.abs(dx.values - exact[:, None])))
            hs.append(L / (ny - 1))
        assert fit_order(hs, errs) >= 1.9

    def test_linearity(self):
        g = make_grid()
        f1 = ScalarField2D.from_function(g, lambda X, Y: np.sin(X / L) * np.exp(-Y))
        f2 = ScalarField2D.from_function(g, lambda X, Y: np.cos(X / L) * Y * np.exp(-Y))
        a, b = 2.5, -1.25
        combo = f1.with_values(a * f1.values + b * f2.values)
        lhs = diff(combo, "y", 3).values
        rhs = a * diff(f1, "y", 3).values + b * diff(f2, "y", 3).values
        assert np.max(np.abs(lhs - rhs)) < 1e-6 * max(1, np.max(np.abs(rhs)))

    def test_too_few_nodes_raises(self):
        g = Grid2D(Grid1D.uniform(L, 8), Grid1D.uniform(1.0, 8))
        f = ScalarField2D.zeros(g)
        with pytest.raises(StencilError):
            diff(f, "x", 4, window=12)


class TestDeltaEps:
    def test_y2_anisotropic(self):
        f = ScalarField2D.from_function(make_grid(), lambda X, Y: Y**2)
        for eps in (0.0, 1e-2, 0.7):
            assert np.max(np.abs(delta_eps(f, eps).values - 2.0)) < 1e-7

    def test_analytic_formula(self):
        g = make_grid(nx=65, ny=120)
        f = ScalarField2D.from_function(g, lambda X, Y: np.sin(np.pi * X / L) * Y**2)
        eps = 0.01
        got = delta_eps(f, eps)
        X, Y = g.meshgrid()
        exact = 2 * np.sin(np.pi * X / L) - eps * (np.pi / L) ** 2 * np.sin(np.pi * X / L) * Y**2
        scale = np.max(np.abs(exact))
        assert np.max(np.abs(got.values - exact)) < 2e-4 * scale

    def test_eps_zero_is_yy(self):
        g = make_grid()
        f = ScalarField2D.from_function(g, lambda X, Y: np.exp(-Y) * (1 + X))
        assert np.array_equal(delta_eps(f, 0.0).values, diff(f, "y", 2).values)

    def test_refinement_order(self):
        errs, hs = [], []
        for ny in (60, 120, 240):
            g = Grid2D(Grid1D.uniform(L, ny), Grid1D.tanh_clustered(8.0, ny, 3.0))
            f = ScalarField2D.from_function(g, lambda X, Y: np.sin(np.pi * X / L) * np.exp(-Y))
            X, Y = g.meshgrid()
            exact = np.exp(-Y) * np.sin(np.pi * X / L) * (1 - 0.01 * (np.pi / L) ** 2)
            errs.append(np.max(np.abs(delta_eps(f, 0.01).values - exact)))
            hs.append(1.0 / ny)
        assert fit_order(hs, errs) >= 1.9


class TestIntegrals:
    def test_constant(self):
        g = make_grid()
        f = ScalarField2D.from_function(g, lambda X, Y: np.ones_like(X))
        X, _ = g.meshgrid()
        assert np.max(np.abs(integrate_x(f).values - X)) < 1e-14

    def test_linear_exact_and_vanishes_at_inflow(self):
        g = make_grid()
        f = ScalarField2D.from_function(g, lambda X, Y: 2 * X)
        ix = integrate_x(f)
        X, _ = g.meshgrid()
        assert np.max(np.abs(ix.values - X**2)) < 1e-12
        assert np.all(ix.values[0] == 0.0)

    def test_integrate_then_diff(self):
        g = make_grid(nx=81)
        f = ScalarField2D.from_function(g, lambda X, Y: np.sin(6 * X / L) * np.exp(-Y))
        back = integrate_x(diff(f, "x", 1))
        expected = f.values - f.values[0][None, :]
        assert np.max(np.abs(back.values - expected)) < 5e-3 * np.max(np.abs(expected))

    def test_tail_integral(self):
        g = make_grid(ny=200, ymax=30.0)
        f = ScalarField2D.from_function(g, lambda X, Y: np.exp(-Y))
        tail = tail_integral_y(f)
        _, Y = g.meshgrid()
        exact = np.exp(-Y) - np.exp(-30.0)
        assert np.max(np.abs(tail.values - exact)) < 2e-4

    def test_trapz_weights_sum(self):
        nodes = Grid1D.tanh_clustered(5.0, 40, 2.0).nodes
        assert abs(trapz_weights(nodes).sum() - 5.0) < 1e-14


class TestWeightsAndCutoff:
    def test_positive_and_w0_geq_one(self):
        y = np.linspace(0, 200, 400)
        for w in (Weight("unit"), Weight("w0", m=5, eps=1e-3), Weight("exp", N=0.5), Weight("poly", m=3, eps=1e-2)):
            assert np.all(w(y) > 0)
        assert np.all(Weight("w0", m=7, eps=1e-4)(y) >= 1.0)

    def test_cutoff_partition_and_support(self):
        chi = CutoffSpec(scale=1.0)
        y = np.linspace(0, 3, 301)
        assert np.max(np.abs(chi(y) + (1 - chi(y)) - 1.0)) == 0.0
        assert np.all(chi(y) >= 0) and np.all(chi(y) <= 1)
        assert np.all(chi(y[y < 1.0]) == 1.0)
        assert np.all(chi(y[y > 2.0]) == 0.0)
        assert chi(0.0) == 1.0 and chi(2.0) == 0.0
        assert np.all(chi(y, deriv=1) <= 0)

    def test_cutoff_scale(self):
        chi = CutoffSpec(scale=10.0)
        assert chi(9.9) == 1.0 and chi(20.1) == 0.0
        # chain rule: d/dy chi(y/s) = chi'(t)/s
        y = np.linspace(10, 20, 11)
        assert np.allclose(chi.deriv_y(y, 1), chi(y, 1) / 10.0)


class TestBandedBVP:
    def test_trivial_zero(self):
        g = Grid1D.uniform(10.0, 101)
        r = solve_banded_bvp(
            g, (0, 0, 0, 0, 1.0), 0.0,
            [("left", 0, 0.0), ("left", 1, 0.0), ("right", 1, 0.0), ("right", 2, 0.0)],
        )
        assert np.max(np.abs(r.solution)) == 0.0

    def test_manufactured_fourth_order(self):
        # v'''' - v'' = F with v = y^2 e^{-y}
        errs, hs = [], []
        for n in (101, 201, 401):
            g = Grid1D.uniform(25.0, n)
            y = g.nodes
            v = y**2 * np.exp(-y)
            F = (12 - 8 * y + y**2) * np.exp(-y) - (2 - 4 * y + y**2) * np.exp(-y)
            r = solve_banded_bvp(
                g, (0, 0, -1.0, 0, 1.0), F,
                [("left", 0, 0.0), ("left", 1, 0.0), ("right", 1, 0.0), ("right", 2, 0.0)],
                window=7,
            )
            errs.append(np.max(np.abs(r.solution - v)))
            hs.append(25.0 / (n - 1))
        assert errs[-1] < 1e-4
        assert fit_order(hs, errs) >= 1.9

    def test_model_operator_annihilates_basis(self):
        # constant-coefficient model: v'''' - u v''; characteristic roots
        # 0, 0, +sqrt(u), -sqrt(u) give the basis {1, y, e^{ry}, e^{-ry}}
        u_inf = 1.7
        r = np.sqrt(u_inf)
        g = Grid1D.uniform(8.0, 400)
        A = assemble_ode_operator(g, (0, 0, -u_inf, 0, 1.0), window=9)
        y = g.nodes
        interior = slice(4, -4)
        for sol, scale in (
            (np.ones_like(y), 1.0),
            (y, 1.0),
            (np.exp(r * y), np.exp(r * y)),
            (np.exp(-r * y), 1.0),
        ):
            res = (A @ sol)[interior] / np.asarray(scale * np.ones_like(y))[interior]
            assert np.max(np.abs(res)) < 1e-5

    def test_singular_matrix_raises(self):
        from blexp.errors import SolverError

        g = Grid1D.uniform(1.0, 32)
        # a0 = a1 = ... = a4 = 0 -> zero operator, singular
        with pytest.raises(SolverError):
            solve_banded_bvp(
                g, (0, 0, 0, 0, 0), 1.0,
                [("left", 0, 0.0), ("left", 1, 0.0), ("right", 1, 0.0), ("right", 2, 0.0)],
            )


class TestFieldSerialization:
    def test_csv_round_trip_bit_exact(self, tmp_path):
        g = make_grid(nx=12, ny=14)
        f = ScalarField2D(g, RNG.standard_normal(g.shape), name="probe")
        p = tmp_path / "f.csv"
        f.to_csv(p)
        back = ScalarField2D.from_csv(p, name="probe")
        assert np.array_equal(back.values, f.values)
        assert np.array_equal(back.grid.x.nodes, g.x.nodes)
        assert np.array_equal(back.grid.y.nodes, g.y.nodes)

    def test_envelope_round_trip_bit_exact(self):
        g = make_grid(nx=9, ny=11)
        f = ScalarField2D(g, RNG.standard_normal(g.shape), name="blob")
        back = ScalarField2D.from_envelope(f.to_envelope())
        assert np.array_equal(back.values, f.values)
        assert back.name == "blob"
        assert back.grid == f.grid

    def test_shape_mismatch_raises(self):
        g = make_grid(nx=9, ny=11)
        with pytest.raises(InvariantError):
            ScalarField2D(g, np.zeros((9, 10)))


class TestConfig:
    def test_round_trip(self):
        from blexp.config import ExpansionConfig, emit_config, parse_config

        cfg = ExpansionConfig(eps=3e-4, nx=33, dns_method="krylov")
        assert parse_config(emit_config(cfg)) == cfg

    def test_invariants(self):
        from blexp.config import ExpansionConfig

        with pytest.raises(InvariantError):
            ExpansionConfig(eps=-1.0)
        with pytest.raises(InvariantError):
            ExpansionConfig(theta=0.0)
        with pytest.raises(InvariantError):
            ExpansionConfig(sigma=1.5)

    def test_admissible_flag(self):
        from blexp.config import ExpansionConfig

        assert ExpansionConfig(eps=1e-3, domain_length=0.1).admissible()
        assert not ExpansionConfig(eps=0.2, domain_length=0.1).admissible()
