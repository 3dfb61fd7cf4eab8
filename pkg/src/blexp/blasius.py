"""Self-similar leading boundary layer: the flat-plate similarity ODE
f''' + f f'' = 0, its two-parameter rescaling family, and residual checks.

The similarity profile is computed once by shooting (bisection on f''(0),
fixed-step RK4) and cached as dense tables.  A leading layer on a 2D grid is
then an evaluation of the rescaled profile

    u(x, y) = (lam^2/sigma) f'(eta),
    v(x, y) = lam (eta f'(eta) - f(eta)) / S,   eta = lam y / S,

with S = sqrt(2 (sigma x + x0)); the factor 2 matches the f''' + f f'' = 0
normalization of the similarity ODE (with f''' + f f''/2 = 0 it would be
absent),

which solves the zero-pressure-gradient wall-layer momentum equation for any
admissible (lam, sigma).
"""

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ExtrapolationError, InvariantError, SolverError
from .grids import ScalarField2D
from .operators import diff

#: value of f''(0) frozen from the one-shot scaling-identity oracle
#: (integrate with f''(0)=1 at RK4 step 1e-5, then f''(0) = g'(inf)^{-3/2})
WALL_SHEAR_REFERENCE = 0.469599988361


def _rk4_shoot(s, h, eta_max, record=False):
    """Integrate f''' = -f f'' from 0 to eta_max with f''(0) = s."""
    f, fp, fpp = 0.0, 0.0, float(s)
    n = int(round(eta_max / h))
    if record:
        F = np.empty(n + 1)
        FP = np.empty(n + 1)
        FPP = np.empty(n + 1)
        F[0], FP[0], FPP[0] = f, fp, fpp
    for i in range(n):
        k1f, k1p, k1q = fp, fpp, -f * fpp
        f2, p2, q2 = f + 0.5 * h * k1f, fp + 0.5 * h * k1p, fpp + 0.5 * h * k1q
        k2f, k2p, k2q = p2, q2, -f2 * q2
        f3, p3, q3 = f + 0.5 * h * k2f, fp + 0.5 * h * k2p, fpp + 0.5 * h * k2q
        k3f, k3p, k3q = p3, q3, -f3 * q3
        f4, p4, q4 = f + h * k3f, fp + h * k3p, fpp + h * k3q
        k4f, k4p, k4q = p4, q4, -f4 * q4
        f += h * (k1f + 2 * k2f + 2 * k3f + k4f) / 6.0
        fp += h * (k1p + 2 * k2p + 2 * k3p + k4p) / 6.0
        fpp += h * (k1q + 2 * k2q + 2 * k3q + k4q) / 6.0
        if record:
            F[i + 1], FP[i + 1], FPP[i + 1] = f, fp, fpp
    if record:
        return F, FP, FPP
    return fp


class BlasiusProfile:
    """Similarity profile tables on a uniform eta grid.

    Attributes
    ----------
    eta : nodes of the similarity variable.
    f, fp, fpp : sampled f, f', f''.
    wall_shear : the shooting value f''(0).
    displacement : lim (eta - f(eta)), the far-field offset of f.
    """

    def __init__(self, eta, f, fp, fpp, wall_shear, shoot_tol):
        self.eta = eta
        self.f = f
        self.fp = fp
        self.fpp = fpp
        self.wall_shear = float(wall_shear)
        self.shoot_tol = float(shoot_tol)
        self.eta_max = float(eta[-1])
        self.displacement = float(eta[-1] - f[-1])
        self._splines = {
            0: CubicSpline(eta, f),
            1: CubicSpline(eta, fp),
            2: CubicSpline(eta, fpp),
        }
        self._check_invariants()

    def _check_invariants(self):
        tol = 100 * self.shoot_tol
        if self.f[0] != 0.0 or self.fp[0] != 0.0:
            raise InvariantError("wall values of f, f' must vanish exactly")
        if abs(self.fp[-1] - 1.0) > tol:
            raise InvariantError("f' does not reach 1 at the far boundary")
        if np.any(self.fp < -1e-12) or np.any(self.fp > 1.0 + 10 * self.shoot_tol):
            raise InvariantError("monotone bound 0 <= f' <= 1 violated")
        if np.any(self.fpp < -1e-12):
            raise InvariantError("convexity bound f'' >= 0 violated")
        if not self.wall_shear > 0:
            raise InvariantError("wall shear f''(0) must be positive")
        fppp = -self.f * self.fpp
        if np.any(fppp > 1e-12):
            raise InvariantError("f''' <= 0 violated")
        if abs(self.f[-1] / self.eta_max - 1.0) > 5.0 / self.eta_max:
            raise InvariantError("linear growth f/eta -> 1 violated")
        # Gaussian tail: f'' <= C exp(-eta^2/4) beyond eta = 5, with C
        # anchored at eta = 5
        tail = self.eta >= 5.0
        if np.any(tail):
            i0 = np.argmax(tail)
            C = self.fpp[i0] * np.exp(self.eta[i0] ** 2 / 4.0) + 1e-30
            bound = 1.001 * C * np.exp(-self.eta[tail] ** 2 / 4.0) + 1e-250
            if np.any(self.fpp[tail] > bound):
                raise InvariantError("Gaussian tail bound on f'' violated")

    def evaluate(self, eta, deriv=0, tail="asymptotic"):
        """f^(deriv)(eta) for deriv in 0..6.

        Beyond the sampled range the profile is linear to Gaussian accuracy:
        f = eta - displacement, f' = 1, higher derivatives 0.  Pass
        tail='error' to forbid evaluation there.
        """
        eta = np.asarray(eta, dtype=float)
        if np.any(eta < 0):
            raise ExtrapolationError("similarity variable must be nonnegative")
        out_of_range = eta > self.eta_max
        if np.any(out_of_range) and tail == "error":
            raise ExtrapolationError(
                f"eta up to {float(np.max(eta)):.3g} exceeds table range {self.eta_max:g}"
            )
        ein = np.minimum(eta, self.eta_max)
        if deriv <= 2:
            vals = self._splines[deriv](ein)
        else:
            vals = self._high_deriv(ein, deriv)
        if np.any(out_of_range):
            if deriv == 0:
                vals = np.where(out_of_range, eta - self.displacement, vals)
            elif deriv == 1:
                vals = np.where(out_of_range, 1.0, vals)
            else:
                vals = np.where(out_of_range, 0.0, vals)
        return vals

    def _high_deriv(self, eta, k):
        # recursion from the ODE: f''' = -f f''
        f = self._splines[0](eta)
        f1 = self._splines[1](eta)
        f2 = self._splines[2](eta)
        f3 = -f * f2
        if k == 3:
            return f3
        f4 = -(f1 * f2 + f * f3)
        if k == 4:
            return f4
        f5 = -(f2 * f2 + 2.0 * f1 * f3 + f * f4)
        if k == 5:
            return f5
        f6 = -(4.0 * f2 * f3 + 3.0 * f1 * f4 + f * f5)
        if k == 6:
            return f6
        raise ValueError("derivatives supported up to order 6")


def solve_blasius(eta_max=20.0, ode_step=1e-3, shoot_tol=1e-8, bracket=(0.1, 1.0)):
    """Shooting solve of the similarity ODE.

    Bisection on the wall shear s = f''(0) until |f'(eta_max) - 1| < shoot_tol,
    each evaluation a fixed-step RK4 integration.  The bracket widens
    automatically if it does not straddle the target.
    """
    if eta_max < 10.0:
        raise SolverError("eta_max must be at least 10 for a meaningful far field")
    lo, hi = bracket
    phi = lambda s: _rk4_shoot(s, ode_step, eta_max) - 1.0
    flo, fhi = phi(lo), phi(hi)
    grow = 0
    while flo * fhi > 0:
        lo, hi = max(lo / 2.0, 1e-6), hi * 2.0
        flo, fhi = phi(lo), phi(hi)
        grow += 1
        if grow > 12:
            raise SolverError("could not bracket the wall shear value")
    while hi - lo > 1e-15:
        mid = 0.5 * (lo + hi)
        fm = phi(mid)
        if abs(fm) < shoot_tol:
            lo = hi = mid
            break
        if flo * fm <= 0:
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
    s = 0.5 * (lo + hi)
    if abs(phi(s)) > shoot_tol:
        raise SolverError("bisection stalled before reaching the shoot tolerance")
    F, FP, FPP = _rk4_shoot(s, ode_step, eta_max, record=True)
    n = F.size
    eta = np.linspace(0.0, eta_max, n)
    return BlasiusProfile(eta, F, FP, FPP, wall_shear=s, shoot_tol=shoot_tol)


class LeadingLayer:
    """The rescaled self-similar wall layer sampled on a 2D grid.

    Stores the non-decaying pair (ubar, vbar) that solves the wall-layer
    momentum equation, plus analytic derivative tables.  The decaying
    variants used in the expansion are

        u_p = ubar - lam^2/sigma          (vanishes at y = inf),
        v_p = vbar - vbar(x, inf)         (vanishes at y = inf),

    with v_p's wall trace equal to minus the far-field displacement flux.
    """

    def __init__(self, profile, grid, lam, sigma, x0, tail="asymptotic"):
        if sigma <= 0 or sigma > 1 or lam <= 0 or x0 <= 0:
            raise InvariantError("need 0 < sigma <= 1, lam > 0, x0 > 0")
        self.profile = profile
        self.grid = grid
        self.lam = float(lam)
        self.sigma = float(sigma)
        self.x0 = float(x0)
        self.tail = tail
        X, Y = grid.meshgrid()
        self._X, self._Y = X, Y
        self._s = np.sqrt(2.0 * (sigma * X + x0))
        self._eta = lam * Y / self._s
        self.u_far = lam**2 / sigma
        self.ubar = ScalarField2D(grid, self.u_far * profile.evaluate(self._eta, 1, tail=tail), name="ubar0_p")
        vb = (lam / self._s) * (
            self._eta * profile.evaluate(self._eta, 1, tail=tail)
            - profile.evaluate(self._eta, 0, tail=tail)
        )
        self.vbar = ScalarField2D(grid, vb, name="vbar0_p")
        self._cache = {}
        self._check_invariants()

    # displacement flux vbar(x, inf) = lam * displacement / s(x)
    def vbar_far(self, x=None):
        x = self.grid.x.nodes if x is None else np.asarray(x, dtype=float)
        return self.lam * self.profile.displacement / np.sqrt(2.0 * (self.sigma * x + self.x0))

    def u_decaying(self):
        return self.ubar.with_values(self.ubar.values - self.u_far, name="u0_p")

    def v_decaying(self):
        return self.vbar.with_values(
            self.vbar.values - self.vbar_far()[:, None], name="v0_p"
        )

    def deriv_y(self, which, k):
        """Analytic pure-y derivative table, k in 0..4."""
        key = (which, k)
        if key in self._cache:
            return self._cache[key]
        lam, s, eta, pr = self.lam, self._s, self._eta, self.profile
        if which == "u":
            vals = self.u_far * pr.evaluate(eta, k + 1, tail=self.tail) * (lam / s) ** k
        elif which == "v":
            if k == 0:
                vals = self.vbar.values
            else:
                vals = (lam ** (k + 1) / s ** (k + 1)) * (
                    (k - 1) * pr.evaluate(eta, k, tail=self.tail)
                    + eta * pr.evaluate(eta, k + 1, tail=self.tail)
                )
        else:
            raise ValueError(which)
        self._cache[key] = vals
        return vals

    def deriv(self, which, dx, dy):
        """Mixed derivative: analytic in y, finite differences in x."""
        from .operators import diff_values

        vals = self.deriv_y(which, dy)
        for _ in range(dx):
            vals = diff_values(vals, self.grid.x, 1, axis=0)
        return vals

    def _check_invariants(self):
        interior = self.ubar.values[:, 1:]
        if np.any(interior <= 0):
            raise InvariantError("leading-layer u must be positive off the wall")
        uy0 = self.deriv_y("u", 1)[:, 0]
        if np.any(uy0 <= 0):
            raise InvariantError("wall shear of the leading layer must be positive")

    def wall_curvature_residuals(self):
        """FD values of u_yy and u_yyy on the wall (both vanish analytically)."""
        d2 = diff(self.ubar, "y", 2).values[:, 0]
        d3 = diff(self.ubar, "y", 3).values[:, 0]
        return float(np.max(np.abs(d2))), float(np.max(np.abs(d3)))


def make_leading_layer(profile, grid, lam, sigma, x0, tail="asymptotic"):
    """Sample the rescaled profile on the grid (cubic interpolation in eta)."""
    if tail == "error":
        X, Y = grid.meshgrid()
        eta = lam * Y / np.sqrt(2.0 * (sigma * X + x0))
        if float(np.max(eta)) > profile.eta_max:
            raise ExtrapolationError(
                f"grid needs eta up to {float(np.max(eta)):.3g} "
                f"but the profile is tabulated to {profile.eta_max:g}"
            )
    return LeadingLayer(profile, grid, lam, sigma, x0, tail=tail)


def residual_fields(u, v):
    """u u_x + v u_y - u_yy for an arbitrary sampled pair, via grid FD."""
    res = u.values * diff(u, "x", 1).values + v.values * diff(u, "y", 1).values - diff(u, "y", 2).values
    return u.with_values(res, name="prandtl_residual")


def prandtl_residual(layer):
    """Pointwise residual of the wall-layer momentum equation with zero
    pressure gradient, evaluated on the layer's own samples."""
    return residual_fields(layer.ubar, layer.vbar)
