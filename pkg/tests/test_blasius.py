"""Tests for the self-similar leading layer and its rescaling family."""

import time

import numpy as np
import pytest

from blexp.blasius import (
    WALL_SHEAR_REFERENCE,
    make_leading_layer,
    prandtl_residual,
    residual_fields,
    solve_blasius,
)
from blexp.errors import ExtrapolationError
from blexp.grids import Grid1D, Grid2D

L = 0.1


@pytest.fixture(scope="module")
def profile():
    return solve_blasius(eta_max=20.0, ode_step=1e-3, shoot_tol=1e-8)


def bl_grid(nx=49, ny=192, ymax=20.0):
    return Grid2D(Grid1D.uniform(L, nx), Grid1D.tanh_clustered(ymax, ny, 3.0))


class TestSimilaritySolve:
    def test_wall_shear_matches_oracle(self, profile):
        # frozen from the one-shot scaling-identity integration at step 1e-5
        assert abs(profile.wall_shear - WALL_SHEAR_REFERENCE) < 1e-4
        assert abs(profile.wall_shear - WALL_SHEAR_REFERENCE) < 1e-6

    def test_runtime_budget(self):
        t0 = time.time()
        solve_blasius(eta_max=20.0, ode_step=1e-3, shoot_tol=1e-8)
        assert time.time() - t0 < 5.0

    def test_imposed_wall_values_exact(self, profile):
        assert profile.f[0] == 0.0
        assert profile.fp[0] == 0.0

    def test_far_field_slope(self, profile):
        assert abs(profile.fp[-1] - 1.0) <= 1e-6

    def test_structural_bounds_at_all_nodes(self, profile):
        assert np.all(profile.fp >= -1e-12)
        assert np.all(profile.fp <= 1.0 + 1e-7)
        assert np.all(profile.fpp >= -1e-12)
        assert profile.wall_shear > 0
        fppp = -profile.f * profile.fpp
        assert np.all(fppp <= 1e-12)

    def test_linear_growth(self, profile):
        assert abs(profile.f[-1] / profile.eta_max - 1.0) <= 5.0 / profile.eta_max

    def test_gaussian_tail(self, profile):
        tail = profile.eta >= 5.0
        C = profile.fpp[tail][0] * np.exp(profile.eta[tail][0] ** 2 / 4)
        assert np.all(profile.fpp[tail] <= 1.01 * C * np.exp(-profile.eta[tail] ** 2 / 4) + 1e-200)

    def test_fpp_monotone_beyond_one(self, profile):
        sel = profile.eta >= 1.0
        assert np.all(np.diff(profile.fpp[sel]) <= 1e-12)

    def test_widened_bracket(self):
        pr = solve_blasius(eta_max=12.0, ode_step=2e-3, shoot_tol=1e-7, bracket=(0.9, 1.0))
        assert abs(pr.wall_shear - WALL_SHEAR_REFERENCE) < 1e-5


class TestLeadingLayer:
    def test_origin_values(self, profile):
        lay = make_leading_layer(profile, bl_grid(), lam=1.0, sigma=1.0, x0=1.0)
        assert lay.ubar.values[0, 0] == 0.0
        assert lay.vbar.values[0, 0] == 0.0

    def test_unrescaled_residual_small(self, profile):
        lay = make_leading_layer(profile, bl_grid(), lam=1.0, sigma=1.0, x0=1.0)
        assert prandtl_residual(lay).max_abs() < 5e-5

    def test_rescaling_equals_offset_shift(self, profile):
        # lam^2 = sigma: the rescaled pair is the base profile with offset
        # x0 / lam^2 (= 4 here)
        g = bl_grid()
        lam = 0.5
        lay_a = make_leading_layer(profile, g, lam=lam, sigma=lam**2, x0=1.0)
        lay_b = make_leading_layer(profile, g, lam=1.0, sigma=1.0, x0=1.0 / lam**2)
        assert np.max(np.abs(lay_a.ubar.values - lay_b.ubar.values)) < 1e-12
        assert np.max(np.abs(lay_a.vbar.values - lay_b.vbar.values)) < 1e-12

    def test_scaling_closure(self, profile):
        # every admissible rescaling keeps the momentum residual at the
        # stencil level
        g = bl_grid()
        for lam, sigma in [(0.316227766, 0.1), (0.5, 0.25), (0.6, 0.3), (0.9, 0.8), (1.0, 1.0)]:
            lay = make_leading_layer(profile, g, lam=lam, sigma=sigma, x0=1.0)
            assert prandtl_residual(lay).max_abs() < 2e-4

    def test_residual_refinement_order(self, profile):
        errs, hs = [], []
        for nx, ny in [(25, 96), (49, 192), (97, 384)]:
            g = bl_grid(nx=nx, ny=ny)
            lay = make_leading_layer(profile, g, lam=0.8, sigma=0.5, x0=1.0)
            errs.append(prandtl_residual(lay).max_abs())
            hs.append(1.0 / ny)
        order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert order >= 1.9

    def test_perturbation_sensitivity(self, profile):
        g = bl_grid()
        lay = make_leading_layer(profile, g, lam=0.8, sigma=0.5, x0=1.0)
        base = prandtl_residual(lay).max_abs()
        _, Y = g.meshgrid()
        u_pert = lay.ubar.with_values(lay.ubar.values + 0.1 * Y * np.exp(-Y))
        pert = residual_fields(u_pert, lay.vbar).max_abs()
        assert pert > 10 * base

    def test_zero_fields_zero_residual(self, profile):
        g = bl_grid()
        from blexp.grids import ScalarField2D

        z = ScalarField2D.zeros(g)
        assert residual_fields(z, z).max_abs() == 0.0

    def test_wall_curvature_vanishes(self, profile):
        lay = make_leading_layer(profile, bl_grid(), lam=0.316227766, sigma=0.1, x0=1.0)
        d2, d3 = lay.wall_curvature_residuals()
        assert d2 < 1e-6 and d3 < 1e-4

    def test_extrapolation_error_mode(self, profile):
        g = bl_grid(ymax=50.0)
        with pytest.raises(ExtrapolationError):
            make_leading_layer(profile, g, lam=1.0, sigma=1.0, x0=1.0, tail="error")

    def test_decaying_variants(self, profile):
        lay = make_leading_layer(profile, bl_grid(ymax=30.0, ny=256), lam=0.316227766, sigma=0.1, x0=1.0)
        u0p = lay.u_decaying()
        v0p = lay.v_decaying()
        assert np.max(np.abs(u0p.values[:, -1])) < 1e-6
        assert np.max(np.abs(v0p.values[:, -1])) < 1e-6
        # wall trace of v0_p is minus the displacement flux
        assert np.allclose(v0p.values[:, 0], -lay.vbar_far())

    def test_analytic_y_derivatives_match_fd(self, profile):
        from blexp.operators import diff

        lay = make_leading_layer(profile, bl_grid(ny=256), lam=0.6, sigma=0.3, x0=1.0)
        for k in (1, 2):
            fd = diff(lay.ubar, "y", k).values
            an = lay.deriv_y("u", k)
            assert np.max(np.abs(fd - an)) < 5e-5 * max(1.0, np.max(np.abs(an)))
            fdv = diff(lay.vbar, "y", k).values
            anv = lay.deriv_y("v", k)
            assert np.max(np.abs(fdv - anv)) < 5e-5 * max(1.0, np.max(np.abs(anv)))
