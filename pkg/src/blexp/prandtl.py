"""Wall-layer correctors: homogenization, the regularized quotient march,
inflow-trace reconstruction, and the cut-off final layer.

The linearized wall-layer system for a corrector pair (u_p, v_p) around the
base layer (ubar, vbar) is

    ubar u_px + u_p ubar_x + vbar u_py + v_p ubar_y - u_pyy = f,
    u_px + v_py = 0,    u_p(x,0) = -(outer trace),   v_p initial data given.

Three transformations make it solvable by a stable march:
  1. a wall lift through a mean-zero profile psi moves the inhomogeneous
     wall value into the forcing (u = u_p - beta psi, beta = u_p(x,0));
  2. the y-derivative of the system is recast in the quotient q = v/ubar,
     turning the transport into the divergence-form d_xy(ubar^2 q_y);
  3. ubar is shifted by theta > 0 to remove the wall degeneracy of the
     quotient; theta-sensitivity is reported rather than taking a limit.

The march is backward-difference in x (first order), with a banded
fourth-order solve in y at each station.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .errors import InvariantError, SolverError, TruncationError
from .grids import ScalarField2D
from .operators import (
    CutoffSpec,
    boundary_derivative_row,
    derivative_matrix,
    diff,
    integrate_x,
    integrate_y,
    trapz_weights,
)

_D4_WINDOW = 7
_D_WINDOW = 5


# ---------------------------------------------------------------------------
# wall lift profile


def psi_profile(y):
    """Wall-lift profile: psi(0) = 1, integral_0^inf psi = 0, both exact,
    and psi'(0) = psi''(0) = 0.

    The two extra flat derivatives matter: the lift injects -beta psi'' into
    the forcing, and any wall curvature of psi lands where the base profile
    degenerates, driving an O(log(1/theta)) displacement response at every
    order."""
    y = np.asarray(y, dtype=float)
    return (1.0 + 2.0 * y + 2.0 * y**2 - 4.0 * y**3) * np.exp(-2.0 * y)


def psi_profile_d1(y):
    y = np.asarray(y, dtype=float)
    return (-16.0 * y**2 + 8.0 * y**3) * np.exp(-2.0 * y)


def psi_profile_d2(y):
    y = np.asarray(y, dtype=float)
    return (-32.0 * y + 56.0 * y**2 - 16.0 * y**3) * np.exp(-2.0 * y)


def psi_tail_integral(y):
    """I_psi(y) = integral_y^inf psi = -y (1 + 2y + 2y^2) e^{-2y}."""
    y = np.asarray(y, dtype=float)
    return -y * (1.0 + 2.0 * y + 2.0 * y**2) * np.exp(-2.0 * y)


def homogenize_layer(base, wall_value, grid):
    """Forcing induced by lifting the wall value through psi.

    wall_value is beta(x) = u_p(x, 0) (minus the outer trace).  With the
    substitution u = u_p - beta psi, v = v_p - beta' I_psi the system keeps
    its form with forcing g1 = f + G,

        G = -[ubar beta' psi + ubar_x beta psi + vbar beta psi'
              + ubar_y beta' I_psi - beta psi''].

    Returns (G, transform, inverse) where the transforms map nodal (u, v)
    pairs both ways.
    """
    x = grid.x.nodes
    y = grid.y.nodes
    beta = np.asarray(wall_value, dtype=float)
    Dx1 = derivative_matrix(grid.x, 1, window=_D_WINDOW)
    beta_x = Dx1 @ beta
    psi = psi_profile(y)[None, :]
    psi1 = psi_profile_d1(y)[None, :]
    psi2 = psi_profile_d2(y)[None, :]
    Ipsi = psi_tail_integral(y)[None, :]
    quad = trapz_weights(y)
    if abs(float(np.sum(psi_profile(y) * quad))) > 1e-3:
        raise InvariantError("psi loses its zero mean on this grid; extend y_max")

    ub = base.deriv("u", 0, 0)
    ubx = base.deriv("u", 1, 0)
    uby = base.deriv("u", 0, 1)
    vb = base.deriv("v", 0, 0)
    bcol = beta[:, None]
    bxcol = beta_x[:, None]
    G = -(ub * bxcol * psi + ubx * bcol * psi + vb * bcol * psi1
          + uby * bxcol * Ipsi - bcol * psi2)

    def to_homogeneous(u_p, v_p):
        return u_p - bcol * psi, v_p - bxcol * Ipsi

    def from_homogeneous(u, v):
        return u + bcol * psi, v + bxcol * Ipsi

    return ScalarField2D(grid, G, name="wall_lift_forcing"), to_homogeneous, from_homogeneous


# ---------------------------------------------------------------------------
# inflow trace reconstruction


class TraceReconstruction:
    """Solution of the second-order inflow-trace ODE by variation of
    parameters on the two-solution basis (u_par, growing companion)."""

    def __init__(self, y, u0, wronskian, companion, growth_coeff, wall_gap):
        self.y = y
        self.u0 = u0
        self.wronskian = wronskian
        self.companion = companion
        self.growth_coeff = growth_coeff
        self.wall_gap = wall_gap


def _companion_solution(y, u_par, v_par_interp):
    """Second homogeneous solution of  w'' = v_par w' - v_par' w,
    normalized so the Wronskian with u_par is u_par(1)^2 at y = 1."""
    from scipy.interpolate import CubicSpline

    vp = v_par_interp

    def rhs(t, w):
        return [w[1], vp(t, 0) * w[1] - vp(t, 1) * w[0]]

    u_par_s = CubicSpline(y, u_par)
    u1 = float(u_par_s(1.0))
    out = np.empty_like(y)
    fwd = solve_ivp(rhs, (1.0, y[-1]), [0.0, u1], t_eval=y[y >= 1.0],
                    rtol=1e-10, atol=1e-12, method="RK45")
    if not fwd.success:
        raise SolverError("companion integration failed (forward)")
    back = solve_ivp(rhs, (1.0, y[0]), [0.0, u1], t_eval=y[y < 1.0][::-1],
                     rtol=1e-10, atol=1e-12, method="RK45")
    if not back.success:
        raise SolverError("companion integration failed (backward)")
    out[y >= 1.0] = fwd.y[0]
    out[y < 1.0] = back.y[0][::-1]
    return out


def reconstruct_u0(y, u_par, v_par, v_par_y, rhs, ue_wall0, wall_tol=1e-4):
    """Bounded solution of  -w'' + v_par w' - v_par' w = rhs  with
    w(0) = -ue_wall0 and w(inf) = 0.

    The growing companion mode is removed; the resulting wall value is then
    fixed by the data (the integral condition), so a mismatch with
    -ue_wall0 beyond wall_tol raises SolverError.  The remaining free
    multiple of u_par is used to zero the far-field limit.
    """
    from scipy.interpolate import CubicSpline

    y = np.asarray(y, dtype=float)
    quad_cum = lambda f: np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(y))])
    v_spline = CubicSpline(y, v_par)

    def vp(t, d):
        return float(v_spline(t, d)) if d else float(v_spline(t))

    u2 = _companion_solution(y, u_par, lambda t, d: vp(t, d))
    # Wronskian: W = u1 u2' - u2 u1' = u1(1)^2 exp(int_1^y v_par)
    Iv = quad_cum(v_par)
    Iv1 = float(CubicSpline(y, Iv)(1.0))
    u1_at_1 = float(CubicSpline(y, u_par)(1.0))
    W = u1_at_1**2 * np.exp(Iv - Iv1)

    g = -np.asarray(rhs, dtype=float)  # w'' - v w' + v' w = g
    u1 = u_par
    c1_int = quad_cum(u2 * g / W)   # int_0^y u2 g / W
    c2_int = quad_cum(u1 * g / W)   # int_0^y u1 g / W
    u_part = -u1 * c1_int + u2 * c2_int
    # remove the growing mode: coefficient of u2 must cancel at infinity
    beta_growth = -c2_int[-1]
    w = u_part + beta_growth * u2
    gap = abs(w[0] - (-float(ue_wall0)))
    scale = max(1.0, float(np.max(np.abs(w))), abs(float(ue_wall0)))
    if gap > wall_tol * scale:
        raise SolverError(
            f"integral condition violated: reconstructed wall value "
            f"{w[0]:.6g} vs required {-float(ue_wall0):.6g} (gap {gap:.2e})"
        )
    # kill the far-field constant with the bounded homogeneous mode u_par
    u_far = u_par[-1]
    if abs(u_far) < 1e-14:
        raise SolverError("base trace vanishes at the far field")
    alpha = -w[-1] / u_far
    w = w + alpha * u_par
    return TraceReconstruction(y, w, W, u2, beta_growth, gap)


# ---------------------------------------------------------------------------
# problem container and compatibility checks


class PrandtlCorrectorProblem:
    """Everything one corrector march needs.

    base        : leading layer (coefficients and derivatives).
    grid        : (x, y) grid of the march.
    forcing     : f^(i) field (same grid).
    outer_trace : phi(x) = outer tangential corrector at the wall, so the
                  wall condition is u_p(x,0) = -phi(x).
    initial_v   : vbar-data at x = 0 (before homogenization).
    theta       : wall regularization.
    """

    def __init__(self, base, grid, forcing, outer_trace, initial_v, theta,
                 order=1, compat_tol=1e-7, trace_wall_tol=None):
        self.base = base
        self.grid = grid
        self.forcing = forcing
        self.outer_trace = np.asarray(outer_trace, dtype=float)
        self.initial_v = np.asarray(initial_v, dtype=float)
        self.theta = float(theta)
        self.order = order
        self.compat_tol = compat_tol
        self.trace_wall_tol = trace_wall_tol
        if self.theta <= 0:
            raise InvariantError("theta must be positive")
        beta = -self.outer_trace
        self.beta = beta
        G, self.to_hom, self.from_hom = homogenize_layer(base, beta, grid)
        self.lift_forcing = G
        self.g1 = ScalarField2D(grid, forcing.values + G.values, name="g1")
        Dx1 = derivative_matrix(grid.x, 1, window=_D_WINDOW)
        beta_x0 = float((Dx1 @ beta)[0])
        self.initial_v_hom = self.initial_v - beta_x0 * psi_tail_integral(grid.y.nodes)

    def base_traces(self):
        """(u_par, v_par, v_par_y) at x = 0."""
        u_par = self.base.deriv("u", 0, 0)[0]
        v_par = self.base.deriv("v", 0, 0)[0]
        v_par_y = self.base.deriv("v", 0, 1)[0]
        return u_par, v_par, v_par_y

    def trace_rhs(self):
        """f - r at x = 0, the inflow-trace ODE forcing."""
        u_par, v_par, _ = self.base_traces()
        y = self.grid.y.nodes
        Dy1 = derivative_matrix(self.grid.y, 1, window=_D_WINDOW)
        r = self.initial_v * (self.base.deriv("u", 0, 1)[0]) - u_par * (Dy1 @ self.initial_v)
        return self.forcing.values[0] - r

    def reconstruct_trace(self):
        u_par, v_par, v_par_y = self.base_traces()
        tol = self.trace_wall_tol
        if tol is None:
            tol = max(1e-5, 100 * self.compat_tol)
        return reconstruct_u0(
            self.grid.y.nodes, u_par, v_par, v_par_y,
            self.trace_rhs(), ue_wall0=self.outer_trace[0], wall_tol=tol,
        )


def wall_derivative_row(grid, order, spacing=0.04, npts=None):
    """Boundary derivative stencil on subsampled nodes.

    Wall values of 3rd/4th derivatives on a clustered grid amplify roundoff
    by (1/h)^order ~ 1e11; sampling at ~`spacing` instead keeps the noise
    floor near 1e-8 at the cost of a (larger but still small) truncation
    term.  Used consistently by the compatibility checker and the data
    generator, so generated data satisfy the checked functional exactly.
    """
    from .operators import fornberg_weights

    if npts is None:
        npts = order + 4
    y = grid.nodes
    targets = spacing * np.arange(npts)
    idx = np.unique(np.searchsorted(y, targets))
    while idx.size < npts:
        extra = idx[-1] + max(1, (idx[-1] - idx[-2]) if idx.size > 1 else 1)
        idx = np.append(idx, min(extra, y.size - 1))
        idx = np.unique(idx)
    w = fornberg_weights(y[0], y[idx], order)[order]
    row = np.zeros(y.size)
    row[idx] = w
    return row


def check_compatibility(problem):
    """Residuals of the corner conditions the march needs.

    Conditions on the homogenized initial data V0 := initial_v_hom:
      order 0 : V0(0) = 0 and V0'(0) = 0   (wall values of v, v_y),
      order 1 : V0'''(0) = d_x g1(0,0),
      order 2 : V0''''(0) = d_xy g1(0,0),
    plus the inflow integral condition (reported as the wall-value gap of
    the reconstructed trace).  Also returns the march seeds: the initial
    quotient f0 and the first-order trace f1 = q_x|_{x=0} estimated from
    the equation.
    """
    g = problem.grid
    y = g.y.nodes
    V0 = problem.initial_v_hom
    row3 = wall_derivative_row(g.y, 3)
    row4 = wall_derivative_row(g.y, 4)
    row1 = boundary_derivative_row(g.y, 1, "left", window=_D_WINDOW)
    g1y = diff(problem.g1, "y", 1).values
    Dx1 = derivative_matrix(g.x, 1, window=_D_WINDOW)
    dx_g1_00 = float((Dx1 @ problem.g1.values[:, 0])[0])
    dxy_g1_00 = float((Dx1 @ g1y[:, 0])[0])
    res = {
        "wall_value": abs(float(V0[0])),
        "wall_slope": abs(float(row1 @ V0)),
        "compat_1": abs(float(row3 @ V0) - dx_g1_00),
        "compat_2": abs(float(row4 @ V0) - dxy_g1_00),
    }
    try:
        trace = problem.reconstruct_trace()
        res["integral_condition"] = trace.wall_gap
    except SolverError as exc:
        res["integral_condition"] = float("inf")
        res["integral_condition_error"] = str(exc)
    scale = 1.0 + float(np.max(np.abs(problem.g1.values)))
    res["pass"] = bool(
        max(res["wall_value"], res["wall_slope"]) <= problem.compat_tol * scale
        and max(res["compat_1"], res["compat_2"]) <= 1e4 * problem.compat_tol * scale
        and res["integral_condition"] <= 1e-3
    )
    # march seeds
    ub0 = problem.base.deriv("u", 0, 0)[0] + problem.theta
    f0 = V0 / ub0
    res["seed_f0"] = f0
    res["seed_f1"] = _first_order_seed(problem, f0)
    return res


def _first_order_seed(problem, f0):
    """q_x at the inflow from the tail-integrated equation (diagnostic)."""
    g = problem.grid
    y = g.y.nodes
    Dy1 = derivative_matrix(g.y, 1, window=_D_WINDOW)
    Dy3 = derivative_matrix(g.y, 3, window=_D4_WINDOW)
    Dx1 = derivative_matrix(g.x, 1, window=_D_WINDOW)
    ub = problem.base.deriv("u", 0, 0)[0] + problem.theta
    ubx = problem.base.deriv("u", 1, 0)[0]
    vb = problem.base.deriv("v", 0, 0)[0]
    vby = problem.base.deriv("v", 0, 1)[0]
    vbx = problem.base.deriv("v", 1, 0)[0]
    vbxy = problem.base.deriv("v", 1, 1)[0]
    V0 = problem.initial_v_hom
    v_y = Dy1 @ V0
    v_yy = Dy1 @ v_y
    v_yyy = Dy3 @ V0
    try:
        u0 = problem.reconstruct_trace().u0 - problem.beta[0] * psi_profile(y)
    except SolverError:
        u0 = np.zeros_like(y)
    dx_g1 = (Dx1 @ problem.g1.values)[0]
    q_y = Dy1 @ f0
    expr = dx_g1 - v_yyy + 2.0 * ub * ubx * q_y - vbx * (Dy1 @ u0) + vb * v_yy - v_y * vby + u0 * vbxy
    u2q_xy = -expr
    qxy = u2q_xy / np.maximum(ub**2, 1e-12)
    w = trapz_weights(y)
    return np.concatenate([[0.0], np.cumsum(0.5 * (qxy[1:] + qxy[:-1]) * np.diff(y))])


# ---------------------------------------------------------------------------
# the march


class PrandtlCorrectorSolution:
    def __init__(self, problem, q, v, u, u_p, v_p, trace, residuals):
        self.problem = problem
        self.q = q                 # quotient field (nx, ny)
        self.v = v                 # homogenized normal velocity
        self.u = u                 # homogenized tangential velocity
        self.u_p = u_p             # wall-layer corrector pair
        self.v_p = v_p
        self.trace = trace         # TraceReconstruction at x = 0
        self.residuals = residuals

    def layer_norms(self):
        """Discrete layer regularity summary: weighted L2-in-y sups over x."""
        g = self.problem.grid
        wq = trapz_weights(g.y.nodes)
        ub = self.problem.base.deriv("u", 0, 0) + self.problem.theta
        Dy1 = derivative_matrix(g.y, 1, window=_D_WINDOW)
        Dy3 = derivative_matrix(g.y, 3, window=_D4_WINDOW)
        q_y = (Dy1 @ self.q.values.T).T
        v_yyy = (Dy3 @ self.v.values.T).T
        l2 = lambda F: float(np.max(np.sqrt(np.sum(F**2 * wq[None, :], axis=1))))
        return {
            "uq_y": l2(ub * q_y),
            "sqrtu_v_yyy": l2(np.sqrt(np.abs(ub)) * v_yyy),
            "q_sup": float(np.max(np.abs(self.q.values))),
        }


def solve_quotient_march(problem):
    """Backward-difference march of the theta-regularized quotient system.

    At each station the fourth-order operator in y

        -(1/dx) d_y(ub^2 q') + d_y^4(ub q) + [transport terms](ub q)

    is solved with q(0) = q'(0) = 0 and far-field q' = q'' = 0; the normal
    velocity is v = ub q and the tangential one u = u0 - I_x[v_y].
    """
    g = problem.grid
    x = g.x.nodes
    y = g.y.nodes
    nx, ny = x.size, y.size
    theta = problem.theta

    trace = problem.reconstruct_trace()
    u0_hom = trace.u0 - problem.beta[0] * psi_profile(y)

    Dy1 = derivative_matrix(g.y, 1, window=_D_WINDOW)
    Dy3 = derivative_matrix(g.y, 3, window=_D4_WINDOW)
    Dy4 = derivative_matrix(g.y, 4, window=_D4_WINDOW)
    I = sp.identity(ny, format="csr")

    ub_all = problem.base.deriv("u", 0, 0) + theta
    if np.any(ub_all <= 0):
        raise SolverError("regularized base profile must be positive")
    vb_all = problem.base.deriv("v", 0, 0)
    vbx_all = problem.base.deriv("v", 1, 0)
    vbyy_all = problem.base.deriv("v", 0, 2)
    vbxyy_all = problem.base.deriv("v", 1, 2)
    g1y = diff(problem.g1, "y", 1).values

    u0h_yy = (derivative_matrix(g.y, 2, window=_D_WINDOW) @ u0_hom)

    bc_rows = [0, 1, ny - 2, ny - 1]
    row_qp0 = boundary_derivative_row(g.y, 1, "left", window=_D_WINDOW)
    row_qp1 = boundary_derivative_row(g.y, 1, "right", window=_D_WINDOW)
    row_qp2 = boundary_derivative_row(g.y, 2, "right", window=_D_WINDOW)

    q = np.empty((nx, ny))
    v = np.empty((nx, ny))
    q[0] = problem.initial_v_hom / ub_all[0]
    v[0] = problem.initial_v_hom
    I_vy = np.zeros(ny)        # running integral of v_y up to previous station
    I_vyyy = np.zeros(ny)
    vy_prev = Dy1 @ v[0]
    vyyy_prev = Dy3 @ v[0]
    station_residuals = []

    for k in range(1, nx):
        dx = x[k] - x[k - 1]
        ub = ub_all[k]
        Ub = sp.diags(ub)
        mass = -(1.0 / dx) * (Dy1 @ sp.diags(ub_all[k] ** 2) @ Dy1)
        stiff = Dy4 @ Ub
        lam_impl = (
            sp.diags(vbxyy_all[k] * (0.5 * dx)) @ (Dy1 @ Ub)
            + sp.diags(vbyy_all[k]) @ (Dy1 @ Ub)
            - sp.diags(vbx_all[k] * (0.5 * dx)) @ (Dy3 @ Ub)
            - sp.diags(vb_all[k]) @ (Dy3 @ Ub)
        )
        A = (mass + stiff + lam_impl).tolil()

        U_term = -vbxyy_all[k] * u0_hom + vbx_all[k] * u0h_yy
        lam_lag = vbxyy_all[k] * (I_vy + 0.5 * dx * vy_prev) - vbx_all[k] * (
            I_vyyy + 0.5 * dx * vyyy_prev
        )
        gx = (g1y[k] - g1y[k - 1]) / dx
        rhs = gx - U_term - lam_lag - (1.0 / dx) * (Dy1 @ (ub_all[k - 1] ** 2 * (Dy1 @ q[k - 1])))

        for slot, row in zip(bc_rows, (None, row_qp0, row_qp2, row_qp1)):
            if row is None:
                A.rows[slot] = [0]
                A.data[slot] = [1.0]
            else:
                nz = np.nonzero(row)[0]
                A.rows[slot] = list(nz)
                A.data[slot] = list(row[nz])
            rhs[slot] = 0.0

        A = A.tocsc()
        try:
            qk = spla.splu(A).solve(rhs)
        except RuntimeError as exc:
            raise SolverError(f"march station {k} singular") from exc
        if not np.all(np.isfinite(qk)):
            raise SolverError(f"march station {k} produced non-finite values")
        q[k] = qk
        v[k] = ub * qk
        res = A @ qk - rhs
        station_residuals.append(float(np.max(np.abs(res))))

        vy_k = Dy1 @ v[k]
        vyyy_k = Dy3 @ v[k]
        I_vy = I_vy + 0.5 * dx * (vy_k + vy_prev)
        I_vyyy = I_vyyy + 0.5 * dx * (vyyy_k + vyyy_prev)
        vy_prev, vyyy_prev = vy_k, vyyy_k

    q_f = ScalarField2D(g, q, name="quotient")
    v_f = ScalarField2D(g, v, name="v_hom")
    vy_vals = diff(v_f, "y", 1).values.copy()
    vy_vals[:, 0] = 0.0  # exact: v(x,0) = v_y(x,0) = 0 by the march BCs
    vy = ScalarField2D(g, vy_vals)
    u_vals = u0_hom[None, :] - integrate_x(vy).values
    u_f = ScalarField2D(g, u_vals, name="u_hom")
    u_p_vals, v_p_vals = problem.from_hom(u_vals, v)
    u_p = ScalarField2D(g, u_p_vals, name=f"u{problem.order}_p")
    v_p = ScalarField2D(g, v_p_vals, name=f"v{problem.order}_p")

    residuals = {
        "station_sup": max(station_residuals) if station_residuals else 0.0,
        "velocity_equation": _velocity_equation_residual(problem, u_p, v_p),
    }
    return PrandtlCorrectorSolution(problem, q_f, v_f, u_f, u_p, v_p, trace, residuals)


def _velocity_equation_residual(problem, u_p, v_p, wall_fraction=0.1):
    """Sup residual of the original velocity-form system via grid FD.

    The quotient march satisfies the y-differentiated system; translating
    its residual back to velocity form divides by the degenerate base
    profile, so the metric is only meaningful where ubar is bounded below.
    The sup is taken over ubar >= wall_fraction * ubar(inf).
    """
    b = problem.base
    res = (
        b.deriv("u", 0, 0) * diff(u_p, "x", 1).values
        + u_p.values * b.deriv("u", 1, 0)
        + b.deriv("v", 0, 0) * diff(u_p, "y", 1).values
        + v_p.values * b.deriv("u", 0, 1)
        - diff(u_p, "y", 2).values
        - problem.forcing.values
    )
    mask = b.deriv("u", 0, 0) >= wall_fraction * b.u_far
    mask[0, :] = False
    mask[:, -2:] = False
    return float(np.max(np.abs(res[mask])))


# ---------------------------------------------------------------------------
# final layer cutoff


def build_final_layer(u_p, v_p, forcing, eps):
    """Apply the scale-1/sqrt(eps) cutoff to the last wall layer.

    Returns (u_cut, v_cut, error_terms) where the cut pair is

        u^n = chi u_p + sqrt(eps) chi' I_y[u_p],   v^n = chi v_p,

    with chi = chi(sqrt(eps) y), and error_terms is the ledger of the
    residual the cutoff introduces into the layer equation:

        E = -(1-chi) f + [-ub se' v_p + ub_x se' I + 2 vb se' u_p
             + vb e'' I - 3 se' u_py - 3 e'' u_p - e''' I],

    with se' = sqrt(eps) chi'(sqrt(eps) y) etc. denoting true y-derivatives
    of the cutoff, and I = I_y[u_p].  Each entry is returned separately so
    its magnitude can be audited; their sum equals the direct residual of
    the cut pair up to the march's x-discretization error.
    """
    grid = u_p.grid
    y = grid.y.nodes
    se = np.sqrt(eps)
    if y[-1] * se < 2.0:
        raise TruncationError(
            f"grid reaches y_max = {y[-1]:.3g} < 2/sqrt(eps) = {2.0 / se:.3g}"
        )
    chi = CutoffSpec(scale=1.0 / se)
    c0 = chi(y)[None, :]
    c1 = chi.deriv_y(y, 1)[None, :]
    c2 = chi.deriv_y(y, 2)[None, :]
    c3 = chi.deriv_y(y, 3)[None, :]

    Iu = integrate_y(u_p).values
    u_cut = ScalarField2D(grid, c0 * u_p.values + c1 * Iu, name="u_final")
    v_cut = ScalarField2D(grid, c0 * v_p.values, name="v_final")
    return u_cut, v_cut, {"chi": chi, "I_u": Iu, "c": (c0, c1, c2, c3)}


def final_layer_error_terms(base, u_p, v_p, forcing, eps):
    """Term-by-term ledger of the cutoff error E (see build_final_layer)."""
    grid = u_p.grid
    y = grid.y.nodes
    se = np.sqrt(eps)
    chi = CutoffSpec(scale=1.0 / se)
    c0 = chi(y)[None, :]
    c1 = chi.deriv_y(y, 1)[None, :]
    c2 = chi.deriv_y(y, 2)[None, :]
    c3 = chi.deriv_y(y, 3)[None, :]
    Iu = integrate_y(u_p).values
    ub = base.deriv("u", 0, 0)
    ubx = base.deriv("u", 1, 0)
    uby = base.deriv("u", 0, 1)
    vb = base.deriv("v", 0, 0)
    u_py = diff(u_p, "y", 1).values
    terms = {
        "uncut_forcing": -(1.0 - c0) * forcing.values,
        "transport_v": -ub * c1 * v_p.values,
        "transport_ux": ubx * c1 * Iu,
        "transport_uy": 2.0 * vb * c1 * u_p.values,
        "diffusion_mixed": vb * c2 * Iu,
        "diffusion_uy": -3.0 * c1 * u_py,
        "diffusion_u": -3.0 * c2 * u_p.values,
        "diffusion_I": -c3 * Iu,
    }
    total = sum(terms.values())
    return terms, ScalarField2D(grid, total, name="cutoff_error")


def final_layer_direct_residual(base, u_cut, v_cut, forcing):
    """Residual of the cut pair in the layer equation (FD x-derivative)."""
    res = (
        base.deriv("u", 0, 0) * diff(u_cut, "x", 1).values
        + u_cut.values * base.deriv("u", 1, 0)
        + base.deriv("v", 0, 0) * diff(u_cut, "y", 1).values
        + v_cut.values * base.deriv("u", 0, 1)
        - diff(u_cut, "y", 2).values
        - forcing.values
    )
    return ScalarField2D(u_cut.grid, res, name="cutoff_residual_direct")


# ---------------------------------------------------------------------------
# initial data generation


class _FrozenBase:
    """x-independent coefficient wrapper: the inflow column of a base
    layer, broadcast over a spin-up grid."""

    def __init__(self, base, grid):
        self.grid = grid
        self._base = base
        self.u_far = base.u_far

    def deriv(self, which, dx, dy):
        if dx > 0:
            return np.zeros(self.grid.shape)
        col = self._base.deriv(which, 0, dy)[0]
        return np.broadcast_to(col, self.grid.shape).copy()


def make_initial_data(problem_args, amp=0.05):
    """Construct march initial data satisfying the corner and integral
    conditions, prepared by an upstream spin-up march.

    problem_args: dict with keys base, grid, forcing, outer_trace, theta,
    order, and optionally spin_up (an upstream march length).  The raw
    entry shape is

        V0 = u_par * Q + amp * u_par (1 - e^{-y}),

    where Q(y) = -int_0^y ramp * f(0,.) / u_par^2 cancels the inflow-trace
    forcing away from the wall (without this the reconstructed trace scales
    like the forcing times the squared layer width and the march answers
    with a large displacement transient).

    With spin_up > 0 the shape is marched through an upstream domain whose
    inputs continue the true ones with two matched derivatives; the
    integral condition is then solved THROUGH that (affine) march using a
    smooth mass-carrying shape, so no fresh bump perturbs the prepared
    profile, and only the three corner conditions -- already small on the
    slice -- are repaired by local bumps at the wall.
    """
    base = problem_args["base"]
    grid = problem_args["grid"]
    y = grid.y.nodes

    u_par = base.deriv("u", 0, 0)[0]
    shape = amp * u_par * (1.0 - np.exp(-y))

    spin_up = problem_args.get("spin_up", 0.0)
    if spin_up > 0.0:
        # the corner conditions are inherited from the preparation march at
        # the level of the upstream/true system mismatch (~1e-3); enforcing
        # them exactly with wall bumps would re-excite the very startup
        # transient the preparation removes, so only the integral condition
        # (which the march cannot repair) is solved exactly, through the
        # march so the adjustment stays on a trajectory.
        fargs = _frozen_args(problem_args, spin_up)
        mass_shape = u_par * (1.0 - np.exp(-y))
        slice0 = _spin_up_slice(fargs, shape)
        slice1 = _spin_up_slice(fargs, shape + mass_shape)
        g0 = _integral_gap(problem_args, slice0)
        g1 = _integral_gap(problem_args, slice1)
        if not np.isfinite(g0) or not np.isfinite(g1) or g1 == g0:
            raise SolverError("integral-condition secant failed in data preparation")
        c = -g0 / (g1 - g0)
        data = slice0 + c * (slice1 - slice0)
        return PrandtlCorrectorProblem(
            problem_args["base"], grid, problem_args["forcing"],
            problem_args["outer_trace"], data, problem_args["theta"],
            order=problem_args.get("order", 1),
        )
    return _corner_fix(problem_args, shape)


def _integral_gap(problem_args, data):
    """Signed wall-value defect of the reconstructed inflow trace."""
    prob = PrandtlCorrectorProblem(
        problem_args["base"], problem_args["grid"], problem_args["forcing"],
        problem_args["outer_trace"], data, problem_args["theta"],
        order=problem_args.get("order", 1), trace_wall_tol=np.inf,
    )
    u_par, v_par, v_par_y = prob.base_traces()
    try:
        tr = reconstruct_u0(prob.grid.y.nodes, u_par, v_par, v_par_y,
                            prob.trace_rhs(), ue_wall0=prob.outer_trace[0],
                            wall_tol=np.inf)
    except SolverError:
        return np.inf
    return float(tr.u0[0] + float(prob.outer_trace[0]))


def _corner_fix(problem_args, data):
    """Zero the wall slope, the two corner conditions, and the integral
    condition jointly: three local wall bumps plus one smooth mass-carrying
    shape, solved as a 4x4 linear system (all functionals are affine in the
    data).  Returns the problem built on the adjusted data."""
    base = problem_args["base"]
    grid = problem_args["grid"]
    y = grid.y.nodes
    u_par = base.deriv("u", 0, 0)[0]
    shapes = [
        y**3 * np.exp(-y),
        y**4 * np.exp(-y),
        y * np.exp(-2.0 * y),
        u_par * (1.0 - np.exp(-y)),
    ]

    def problem_for(d):
        return PrandtlCorrectorProblem(
            base, grid, problem_args["forcing"], problem_args["outer_trace"],
            d, problem_args["theta"], order=problem_args.get("order", 1),
            trace_wall_tol=np.inf,
        )

    row1 = boundary_derivative_row(grid.y, 1, "left", window=_D_WINDOW)
    row3 = wall_derivative_row(grid.y, 3)
    row4 = wall_derivative_row(grid.y, 4)

    def residuals(d):
        prob = problem_for(d)
        g1y = diff(prob.g1, "y", 1).values
        Dx1 = derivative_matrix(grid.x, 1, window=_D_WINDOW)
        t1 = float((Dx1 @ prob.g1.values[:, 0])[0])
        t2 = float((Dx1 @ g1y[:, 0])[0])
        V0 = prob.initial_v_hom
        return np.array([
            float(row1 @ V0),
            float(row3 @ V0) - t1,
            float(row4 @ V0) - t2,
            _integral_gap(problem_args, d),
        ])

    base_res = residuals(data)
    cols = [residuals(data + b) - base_res for b in shapes]
    M = np.column_stack(cols)
    try:
        coeffs = np.linalg.solve(M, -base_res)
    except np.linalg.LinAlgError as exc:
        raise SolverError("data adjustment system singular") from exc
    fixed = data + sum(c * b for c, b in zip(coeffs, shapes))
    return problem_for(fixed)


def _frozen_args(problem_args, length):
    """Problem args for the upstream preparation march on [-length, 0].

    The march inputs continue the true ones with two matched derivatives
    (the base layer extends exactly; the outer trace and forcing
    quadratically), so the true march restarts from the slice without a
    low-order derivative jump in its inputs -- a jump would re-excite the
    startup transient the spin-up exists to absorb.
    """
    from .grids import Grid1D, Grid2D

    base = problem_args["base"]
    grid = problem_args["grid"]
    stations = (grid.x.n - 1) / grid.x.nodes[-1]
    nxs = max(9, int(round(length * stations)) + 1)
    sp_grid = Grid2D(Grid1D.uniform(length, nxs), grid.y)
    shift = (sp_grid.x.nodes - length)[:, None]

    if hasattr(base, "profile"):
        from .blasius import LeadingLayer

        base_sp = LeadingLayer(base.profile, sp_grid, base.lam, base.sigma,
                               base.x0 - base.sigma * length, tail=base.tail)
    else:
        base_sp = _FrozenBase(base, sp_grid)

    Dx1 = derivative_matrix(grid.x, 1, window=_D_WINDOW)
    Dx2 = derivative_matrix(grid.x, 2, window=_D_WINDOW)
    f_vals = problem_args["forcing"].values
    f0 = f_vals[0]
    f0_x = (Dx1 @ f_vals)[0]
    f0_xx = (Dx2 @ f_vals)[0]
    f_sp = ScalarField2D(
        sp_grid, f0[None, :] + shift * f0_x[None, :] + 0.5 * shift**2 * f0_xx[None, :]
    )
    outer = np.asarray(problem_args["outer_trace"], dtype=float)
    outer_x0 = float((Dx1 @ outer)[0])
    outer_xx0 = float((Dx2 @ outer)[0])
    outer_sp = outer[0] + shift[:, 0] * outer_x0 + 0.5 * shift[:, 0] ** 2 * outer_xx0
    return dict(base=base_sp, grid=sp_grid, forcing=f_sp, outer_trace=outer_sp,
                theta=problem_args["theta"], order=problem_args.get("order", 1))


def _spin_up_slice(frozen_args, data):
    prob = PrandtlCorrectorProblem(
        frozen_args["base"], frozen_args["grid"], frozen_args["forcing"],
        frozen_args["outer_trace"], data, frozen_args["theta"],
        order=frozen_args["order"], trace_wall_tol=np.inf,
    )
    sol = solve_quotient_march(prob)
    return sol.v_p.values[-1]


def _linear_fix(problem_args, shape, propagate):
    """Solve the 4-parameter data adjustment through the (affine) map
    `propagate`, returning the propagated raw data whose problem satisfies
    the wall-slope, corner, and integral conditions."""
    base = problem_args["base"]
    grid = problem_args["grid"]
    y = grid.y.nodes
    basis = [
        y**3 * np.exp(-y),
        y**4 * np.exp(-y),
        y**2 * np.exp(-2.0 * y),
        y * np.exp(-2.0 * y),
    ]

    def problem_for(data):
        return PrandtlCorrectorProblem(
            base, grid, problem_args["forcing"], problem_args["outer_trace"],
            data, problem_args["theta"], order=problem_args.get("order", 1),
            trace_wall_tol=np.inf,
        )

    row1 = boundary_derivative_row(grid.y, 1, "left", window=_D_WINDOW)
    row3 = wall_derivative_row(grid.y, 3)
    row4 = wall_derivative_row(grid.y, 4)

    def constraints(data):
        prob = problem_for(data)
        g1y = diff(prob.g1, "y", 1).values
        Dx1 = derivative_matrix(grid.x, 1, window=_D_WINDOW)
        t1 = float((Dx1 @ prob.g1.values[:, 0])[0])
        t2 = float((Dx1 @ g1y[:, 0])[0])
        V0 = prob.initial_v_hom
        u_par_, v_par_, v_par_y_ = prob.base_traces()
        try:
            tr = reconstruct_u0(y, u_par_, v_par_, v_par_y_, prob.trace_rhs(),
                                ue_wall0=prob.outer_trace[0], wall_tol=np.inf)
            gap = tr.u0[0] + float(prob.outer_trace[0])
        except SolverError:
            gap = np.inf
        return np.array([
            float(row1 @ V0),
            float(row3 @ V0) - t1,
            float(row4 @ V0) - t2,
            gap,
        ])

    slices = [propagate(shape)]
    for b in basis:
        slices.append(propagate(shape + b))
    base_res = constraints(slices[0])
    cols = [constraints(s_) - base_res for s_ in slices[1:]]
    M = np.column_stack(cols)
    try:
        coeffs = np.linalg.solve(M, -base_res)
    except np.linalg.LinAlgError as exc:
        raise SolverError("initial-data adjustment system singular") from exc
    data = slices[0] + sum(c * (s_ - slices[0]) for c, s_ in zip(coeffs, slices[1:]))
    return data


def _beta_x0(problem_args):
    grid = problem_args["grid"]
    Dx1 = derivative_matrix(grid.x, 1, window=_D_WINDOW)
    beta = -np.asarray(problem_args["outer_trace"], dtype=float)
    return float((Dx1 @ beta)[0])
