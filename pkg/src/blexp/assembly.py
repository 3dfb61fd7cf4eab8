"""Layer bookkeeping, the forcing-term catalogs, partial-sum assembly, and
the remainder forcing.

Conventions used throughout (s = sqrt(eps)):
  * wall-layer (fast) fields live on (x, y) grids; outer fields on (x, Y)
    grids with Y = s y.  Outer fields entering a wall-layer formula are
    evaluated at Y = s y by cubic interpolation, written `@` in comments.
  * all sums that end below their start index are empty (so low orders
    drop whole groups of terms);
  * every forcing evaluation emits a ledger mapping term keys to fields so
    multilinearity and magnitudes can be audited term by term;
  * external forcing hooks default to zero and are flagged in the ledger.
"""

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DependencyError, InvariantError, TruncationError
from .grids import Grid2D, ScalarField2D
from .operators import (
    derivative_matrix,
    diff_values,
    tail_integral_y,
    trapz_weights,
)


class LayerProfile:
    """One corrector layer: sampled (u, v) on its native grid plus cached
    derivative/interpolation machinery.

    kind is 'prandtl' (fast variable) or 'euler' (unscaled variable).  The
    stored fields are the decaying representatives entering the expansion;
    wall traces are therefore generally nonzero.
    """

    def __init__(self, kind, order, grid, u, v, analytic=None):
        if kind not in ("prandtl", "euler"):
            raise InvariantError(kind)
        self.kind = kind
        self.order = order
        self.grid = grid
        self.u = u
        self.v = v
        self.analytic = analytic  # optional closed-form derivative source
        self._native = {}
        self._splines = {}

    # -- native-grid derivative tables --------------------------------------

    def native(self, which, dx=0, dy=0):
        """d^dx_x d^dy_(native normal) of the component on the native grid."""
        key = (which, dx, dy)
        if key in self._native:
            return self._native[key]
        if self.analytic is not None:
            vals = self.analytic(which, dx, dy)
        else:
            vals = (self.u if which == "u" else self.v).values
            for _ in range(dy):
                vals = diff_values(vals, self.grid.y, 1, axis=1)
            for _ in range(dx):
                vals = diff_values(vals, self.grid.x, 1, axis=0)
        self._native[key] = vals
        return vals

    def _spline(self, which, dx, dy):
        key = (which, dx, dy)
        if key not in self._splines:
            vals = self.native(which, dx, dy)
            self._splines[key] = CubicSpline(self.grid.y.nodes, vals, axis=1)
        return self._splines[key]

    def sample(self, y_target, eps, which="u", dx=0, dy=0):
        """Evaluate on the requested normal coordinates of a wall-layer grid.

        For outer layers the native coordinate is Y = sqrt(eps) * y; the
        derivative orders dx, dy always refer to native variables (so outer
        dy means d/dY).  Points beyond the native range use zero for
        decaying wall-layer fields and the far value for outer fields.
        """
        y_target = np.asarray(y_target, dtype=float)
        coord = np.sqrt(eps) * y_target if self.kind == "euler" else y_target
        ymax = self.grid.y.nodes[-1]
        spline = self._spline(which, dx, dy)
        inside = coord <= ymax
        out = spline(np.minimum(coord, ymax))
        if not np.all(inside):
            if self.kind == "euler":
                far = self.native(which, dx, dy)[:, -1]
                out[:, ~inside] = far[:, None]
            else:
                out[:, ~inside] = 0.0
        return out

    def wall_trace(self, which="v", dx=0, dy=0):
        return self.native(which, dx, dy)[:, 0]

    def far_trace(self, which="u", dx=0, dy=0):
        return self.native(which, dx, dy)[:, -1]


class ShearLayer(LayerProfile):
    """Order-0 outer layer: the prescribed shear (u0e(Y), 0)."""

    def __init__(self, shear, grid):
        X, Y = grid.meshgrid()
        u = ScalarField2D(grid, np.broadcast_to(shear.u(grid.y.nodes), grid.shape).copy(), name="u0_e")
        v = ScalarField2D.zeros(grid, name="v0_e")
        self.shear = shear

        def analytic(which, dx, dy):
            if which == "v" or dx > 0:
                return np.zeros(grid.shape)
            y = grid.y.nodes
            if dy == 0:
                vals = shear.u(y)
            elif dy == 1:
                vals = shear.uY(y)
            elif dy == 2:
                vals = shear.uYY(y)
            else:
                # derivatives of base * (1 + delta(1 - e^{-Y})) alternate sign
                vals = shear.base * shear.delta * (-1.0) ** (dy + 1) * np.exp(-y)
            return np.broadcast_to(vals, grid.shape).copy()

        super().__init__("euler", 0, grid, u, v, analytic=analytic)


class LeadingWallLayer(LayerProfile):
    """Order-0 wall layer: decaying representatives of the self-similar
    leading profile, with analytic derivative tables."""

    def __init__(self, leading):
        grid = leading.grid
        u = leading.u_decaying()
        v = leading.v_decaying()
        self.leading = leading

        def analytic(which, dx, dy):
            if dx == 0 and dy == 0:
                return (u if which == "u" else v).values
            vals = leading.deriv(which, dx, dy)
            if which == "v" and dy == 0:
                # subtract derivatives of the x-dependent far shift
                shift = leading.vbar_far()
                Dx = derivative_matrix(grid.x, 1)
                for _ in range(dx):
                    shift = Dx @ shift
                vals = vals - shift[:, None]
            return vals

        super().__init__("prandtl", 0, grid, u, v, analytic=analytic)


class LayerSet:
    """All solved layers of one expansion, keyed by (kind, order)."""

    def __init__(self, eps, n_layers):
        self.eps = float(eps)
        self.n = int(n_layers)
        self._layers = {}

    def add(self, layer):
        self._layers[(layer.kind, layer.order)] = layer

    def get(self, kind, order):
        key = (kind, order)
        if key not in self._layers:
            raise DependencyError(f"layer {key} has not been solved yet")
        return self._layers[key]

    def has(self, kind, order):
        return (kind, order) in self._layers

    def s(self):
        return np.sqrt(self.eps)

    # -- partial sums on a wall-layer grid ----------------------------------

    def psum(self, kind, comp, j_lo, j_hi, y_target, dx=0, dy=0, weight_shift=0):
        """sum_{j=j_lo}^{j_hi} s^{j+weight_shift} * (d^dx_x d^dy layer_j comp)
        evaluated at the wall-layer coordinates y_target."""
        s = self.s()
        out = 0.0
        for j in range(j_lo, j_hi + 1):
            lay = self.get(kind, j)
            out = out + s ** (j + weight_shift) * lay.sample(y_target, self.eps, comp, dx, dy)
        if isinstance(out, float):
            return None
        return out


def _zeros_ledger(grid, keys):
    return {k: np.zeros(grid.shape) for k in keys}


def regularize_inflow_columns(values, grid, n_fix=3, n_fit=5):
    """Replace the first n_fix x-columns by a quadratic extrapolation from
    the following n_fit stations.

    Forcing catalogs differentiate elliptic corrector fields in x; at the
    inflow corner those derivatives carry weak corner layers (the data are
    well-prepared only to order 2), producing single-column spikes that
    would otherwise be handed to the next march and its data generator.
    """
    x = grid.x.nodes
    vals = np.array(values)
    fit_idx = np.arange(n_fix, n_fix + n_fit)
    coeffs = np.polyfit(x[fit_idx], vals[fit_idx], 2)
    for k in range(n_fix):
        vals[k] = coeffs[0] * x[k] ** 2 + coeffs[1] * x[k] + coeffs[2]
    return vals


# ---------------------------------------------------------------------------
# outer forcing catalog


def euler_forcing(i, layers, grid, g_ext_u=None, g_ext_v=None):
    """Forcing pair (f1, f2) of the order-i outer problem, with ledger.

    Order 1 carries no forcing: every sum is empty and each explicit term
    references an order-0 corrector absent from the hierarchy.  The
    vorticity forcing is F = d_Y f1 - d_x f2.
    """
    if i < 1:
        raise InvariantError("outer forcing is defined for i >= 1")
    if i == 1:
        zero = np.zeros(grid.shape)
        ledger = {"empty_sum_convention": zero}
        return ScalarField2D(grid, zero, name="f1_E1"), ScalarField2D(grid, zero, name="f1_E2"), ledger

    s = layers.s()
    em1 = layers.get("euler", i - 1)
    if em1.grid is not grid and em1.grid != grid:
        raise InvariantError("outer forcing must be evaluated on the outer grid")
    nx, nY = grid.shape
    ledger = {}

    def sum_e(comp, dx, dy, j_hi, shift):
        out = np.zeros(grid.shape)
        for j in range(1, j_hi + 1):
            out += s ** (j + shift) * layers.get("euler", j).native(comp, dx, dy)
        return out

    def sum_p_inf(j_hi, shift):
        # sum over outer-evaluated wall-layer plateaus u^j_p(x, inf): the
        # decaying representatives make these vanish up to truncation
        out = np.zeros(nx)
        for j in range(1, j_hi + 1):
            out += s ** (j + shift) * layers.get("prandtl", j).far_trace("u")
        return out

    u_em1_x = em1.native("u", 1, 0)
    u_em1 = em1.native("u", 0, 0)
    u_em1_Y = em1.native("u", 0, 1)
    v_em1 = em1.native("v", 0, 0)
    pm1_inf = layers.get("prandtl", i - 1).far_trace("u")[:, None]

    ledger["A1"] = u_em1_x * (
        sum_e("u", 0, 0, i - 2, -1)
        + sum_p_inf(i - 2, -1)[:, None]
    )
    ledger["A2"] = u_em1 * sum_e("u", 1, 0, i - 2, -1)
    ledger["A3"] = s ** (i - 2) * ((u_em1 + pm1_inf) * u_em1_x + v_em1 * u_em1_Y)
    ledger["A4"] = u_em1_Y * sum_e("v", 0, 0, i - 2, -1)
    ledger["A5"] = v_em1 * sum_e("u", 0, 1, i - 2, -1)
    ledger["A6"] = -s * (em1.native("u", 2, 0) + em1.native("u", 0, 2))
    ledger["A7_ext"] = -g_ext_u.values if g_ext_u is not None else np.zeros(grid.shape)

    f1 = -sum(ledger[k] for k in ("A1", "A2", "A3", "A4", "A5", "A6", "A7_ext"))

    ledger["B1"] = em1.native("v", 0, 1) * sum_e("v", 0, 0, i - 2, -1)
    ledger["B2"] = v_em1 * sum_e("v", 0, 1, i - 2, -1)
    ledger["B3"] = s ** (i - 2) * (v_em1 * em1.native("v", 0, 1) + u_em1 * em1.native("v", 1, 0))
    ledger["B4"] = (u_em1 + pm1_inf) * sum_e("v", 1, 0, i - 2, -1)
    ledger["B5"] = em1.native("v", 1, 0) * (
        sum_e("u", 0, 0, i - 2, -1) + sum_p_inf(i - 2, -1)[:, None]
    )
    ledger["B6"] = -s * (em1.native("v", 2, 0) + em1.native("v", 0, 2))
    ledger["B7_ext"] = -g_ext_v.values if g_ext_v is not None else np.zeros(grid.shape)

    f2 = -sum(ledger[k] for k in ("B1", "B2", "B3", "B4", "B5", "B6", "B7_ext"))
    return (
        ScalarField2D(grid, f1, name=f"f{i}_E1"),
        ScalarField2D(grid, f2, name=f"f{i}_E2"),
        ledger,
    )


def euler_vorticity_forcing(i, layers, grid, **kw):
    """F^(i) = d_Y f1 - d_x f2 on the outer grid."""
    f1, f2, ledger = euler_forcing(i, layers, grid, **kw)
    F = diff_values(f1.values, grid.y, 1, axis=1) - diff_values(f2.values, grid.x, 1, axis=0)
    return ScalarField2D(grid, F, name=f"F{i}"), ledger


# ---------------------------------------------------------------------------
# wall-layer forcing catalog


def prandtl_forcing(i, layers, grid, g_ext_u=None, g_ext_v=None):
    """Forcing f^(i) of the order-i wall-layer march on the given grid.

    i = 1 uses the reduced first-order list (only the terms of exact order
    s survive; the remaining products are deferred to f^(2)); i >= 2 uses
    the full catalog, including the far-tail transported integrals.
    """
    eps = layers.eps
    s = layers.s()
    x = grid.x.nodes
    y = grid.y.nodes
    ny = y.size
    X, Y = grid.meshgrid()
    ledger = {}

    p0 = layers.get("prandtl", 0)
    e0 = layers.get("euler", 0)
    u0e_wall = e0.shear.u(0.0)
    u0e_Y_wall = e0.shear.uY(0.0)

    if i == 1:
        e1 = layers.get("euler", 1)
        u0p = p0.sample(y, eps, "u", 0, 0)
        u0px = p0.sample(y, eps, "u", 1, 0)
        u0py = p0.sample(y, eps, "u", 0, 1)
        v0p = p0.sample(y, eps, "v", 0, 0)
        ledger["L1"] = -u0p * e1.wall_trace("u", dx=1)[:, None]
        ledger["L2"] = -u0px * e1.wall_trace("u")[:, None]
        ledger["L3"] = -u0e_Y_wall * Y * u0px
        ledger["L4"] = -v0p * u0e_Y_wall
        ledger["L5"] = -e1.wall_trace("v", dy=1)[:, None] * Y * u0py
        ledger["L6_ext"] = g_ext_u.values if g_ext_u is not None else np.zeros(grid.shape)
        total = sum(ledger.values())
        return ScalarField2D(grid, total, name="f_p1"), ledger

    if i < 2:
        raise InvariantError("wall-layer forcing needs i >= 1")

    ei = layers.get("euler", i)
    pm1 = layers.get("prandtl", i - 1)

    def E(j, comp, dx=0, dY=0):
        return layers.get("euler", j).sample(y, eps, comp, dx, dY)

    def P(j, comp, dx=0, dy=0):
        return layers.get("prandtl", j).sample(y, eps, comp, dx, dy)

    def p_far(j):
        return layers.get("prandtl", j).far_trace("u")[:, None]

    # partial sums on this grid (wall-layer coordinates)
    def sum_j(f, lo, hi):
        out = np.zeros(grid.shape)
        for j in range(lo, hi + 1):
            out += f(j)
        return out

    u0py = P(0, "u", 0, 1)
    u0px = P(0, "u", 1, 0)
    um1 = P(i - 1, "u")
    um1x = P(i - 1, "u", 1, 0)
    um1y = P(i - 1, "u", 0, 1)
    vm1 = P(i - 1, "v")

    ledger["P1"] = s * P(i - 1, "u", 2, 0)
    ledger["P2"] = (1 / s) * (E(i, "v") - layers.get("euler", i).wall_trace("v")[:, None]) * u0py
    ledger["P3"] = (1 / s) * (E(0, "u") - u0e_wall) * um1x
    ledger["P4"] = (1 / s) * sum_j(lambda j: s**j * P(j, "u", 1, 0), 1, i - 1) * um1
    ledger["P5"] = (1 / s) * sum_j(lambda j: s**j * E(j, "u", 1, 0), 1, i - 1) * (um1 - p_far(i - 1))
    ledger["P6"] = (1 / s) * vm1 * (
        sum_j(lambda j: s ** (j + 1) * E(j, "u", 0, 1), 0, i - 1)
        + sum_j(lambda j: s**j * P(j, "u", 0, 1), 1, i - 2)
    )
    ledger["P7"] = um1x * sum_j(lambda j: s ** (j - 1) * (E(j, "u") + P(j, "u")), 1, i - 1)
    ledger["P8"] = (1 / s) * (
        sum_j(lambda j: s ** (j - 1) * E(j, "v"), 2, i - 1)
        + sum_j(lambda j: s**j * P(j, "v"), 1, i - 2)
    ) * um1y
    ledger["P9"] = (1 / s) * (E(1, "v") - layers.get("euler", 1).wall_trace("v")[:, None]) * um1y
    ledger["P10"] = s * E(i, "u", 0, 1) * sum_j(lambda j: s**j * P(j, "v"), 0, i - 1)
    ledger["P11"] = E(i, "v") * sum_j(lambda j: s ** (j - 1) * P(j, "u", 0, 1), 1, i - 1)
    ledger["P12"] = E(i, "u", 1, 0) * sum_j(lambda j: s**j * (P(j, "u") - p_far(j)), 0, i - 1)
    ledger["P13"] = E(i, "u") * sum_j(lambda j: s**j * P(j, "u", 1, 0), 0, i - 1)

    # transported far-tail integrals: integrate d_x{...} from y to infinity
    vsm1_E = sum_j(lambda j: s ** (j - 1) * E(j, "v"), 1, i - 1)
    vsm1_P = sum_j(lambda j: s**j * P(j, "v"), 0, i - 2)
    vsm1 = vsm1_E + vsm1_P
    vsm1_y = sum_j(lambda j: s**j * E(j, "v", 0, 1), 1, i - 1) + sum_j(
        lambda j: s**j * P(j, "v", 0, 1), 0, i - 2
    )
    vsm1_E_x = sum_j(lambda j: s ** (j - 1) * E(j, "v", 1, 0), 1, i - 1)
    vsm1_P_x = sum_j(lambda j: s**j * P(j, "v", 1, 0), 0, i - 2)
    usm1 = sum_j(lambda j: s**j * E(j, "u"), 0, i - 1) + sum_j(
        lambda j: s**j * P(j, "u"), 0, i - 2
    )
    braced = (
        eps * E(i, "u") * sum_j(lambda j: s**j * P(j, "v", 1, 0), 0, i - 1)
        + s * E(i, "v", 1, 0) * sum_j(lambda j: s**j * (P(j, "u") - p_far(j)), 0, i - 1)
        + eps * E(i, "v", 0, 1) * sum_j(lambda j: s**j * P(j, "v"), 0, i - 1)
        + s * E(i, "v") * sum_j(lambda j: s**j * P(j, "v", 0, 1), 0, i - 1)
        + s * vsm1 * P(i - 1, "v", 0, 1)
        + s * vsm1_y * vm1
        + s * vsm1_E_x * (um1 - p_far(i - 1))
        + s * vsm1_P_x * um1
        + s * usm1 * P(i - 1, "v", 1, 0)
        + s * (P(i - 1, "v", 0, 2) + eps * P(i - 1, "v", 2, 0))
        + s**i * (um1 * P(i - 1, "v", 1, 0) + vm1 * P(i - 1, "v", 0, 1))
    )
    if g_ext_v is not None:
        braced = braced + eps * g_ext_v.values
    braced_x = diff_values(braced, grid.x, 1, axis=0)
    ledger["P14_tail"] = tail_integral_y(ScalarField2D(grid, braced_x)).values
    ledger["P15_ext"] = -g_ext_u.values if g_ext_u is not None else np.zeros(grid.shape)

    total = -sum(ledger.values())
    return ScalarField2D(grid, total, name=f"f_p{i}"), ledger


# ---------------------------------------------------------------------------
# partial-sum assembly


class AssembledProfile:
    """The expansion's partial sums on a common wall-layer grid.

    Carries u_s, v_s, their outer/wall splitting, and the derivative tables
    the remainder solves need.  All fields are plain arrays on `grid`.
    """

    def __init__(self, grid, layers, split_E, split_P):
        self.grid = grid
        self.layers = layers
        self.eps = layers.eps
        self.u_E, self.v_E = split_E
        self.u_P, self.v_P = split_P
        self.u_s = self.u_E + self.u_P
        self.v_s = self.v_E + self.v_P
        self._deriv_cache = {}

    def deriv(self, which, dx=0, dy=0):
        key = (which, dx, dy)
        if key not in self._deriv_cache:
            vals = self.u_s if which == "u" else self.v_s
            for _ in range(dy):
                vals = diff_values(vals, self.grid.y, 1, axis=1)
            for _ in range(dx):
                vals = diff_values(vals, self.grid.x, 1, axis=0)
            self._deriv_cache[key] = vals
        return self._deriv_cache[key]

    def trace0(self, which, dx=0, dy=0):
        """x = 0 trace of a derivative table."""
        return self.deriv(which, dx, dy)[0]

    def wall_shear(self):
        """d_y u_s at the wall, minimum over x (positivity diagnostic)."""
        return float(np.min(self.deriv("u", 0, 1)[:, 0]))

    def sup_norms(self):
        return {
            "u_s": float(np.max(np.abs(self.u_s))),
            "v_s": float(np.max(np.abs(self.v_s))),
            "u_s_wall": float(np.max(np.abs(self.u_s[:, 0]))),
            "v_s_wall": float(np.max(np.abs(self.v_s[:, 0]))),
        }


def assemble(layers, grid):
    """Sum the layers with their sqrt(eps)^i weights on the target grid.

    u_s = sum_i s^i (u^i_e@ + u^i_p),      i = 0..n,
    v_s = v^0_p + v^1_e@ + sum_{i=1}^{n-1} s^i (v^i_p + v^{i+1}_e@) + s^n v^n_p,
    and the outer/wall splitting is stored separately (their sum equals the
    total exactly at nodes).
    """
    eps = layers.eps
    n = layers.n
    s = layers.s()
    y = grid.y.nodes
    u_E = np.zeros(grid.shape)
    u_P = np.zeros(grid.shape)
    v_E = np.zeros(grid.shape)
    v_P = np.zeros(grid.shape)
    for i_ in range(0, n + 1):
        if layers.has("euler", i_):
            u_E += s**i_ * layers.get("euler", i_).sample(y, eps, "u")
            if i_ >= 1:
                v_E += s ** (i_ - 1) * layers.get("euler", i_).sample(y, eps, "v")
        if layers.has("prandtl", i_):
            u_P += s**i_ * layers.get("prandtl", i_).sample(y, eps, "u")
            v_P += s**i_ * layers.get("prandtl", i_).sample(y, eps, "v")
    return AssembledProfile(grid, layers, (u_E, v_E), (u_P, v_P))


# ---------------------------------------------------------------------------
# remainder forcing


def remainder_forcing(layers, grid, cutoff_error, config, g1_ledger_hook=None):
    """The next-order residual pair (f_next, g_next) and the remainder
    forcing F_R = eps^{-N0} (d_y f_next - eps d_x g_next), with ledger.

    cutoff_error: the term-sum field E of the final-layer cutoff, sampled
    on `grid`.  The ledger keys follow the two catalogs (F1..F14, G1..G14);
    the G13 sum starts at j = 1 because the j = 0 product is the final
    outer layer's own transport, already absorbed by its equation.
    """
    eps = layers.eps
    s = layers.s()
    n = layers.n
    y = grid.y.nodes
    ledger = {}

    def E(j, comp, dx=0, dY=0):
        return layers.get("euler", j).sample(y, eps, comp, dx, dY)

    def P(j, comp, dx=0, dy=0):
        return layers.get("prandtl", j).sample(y, eps, comp, dx, dy)

    def p_far(j):
        return layers.get("prandtl", j).far_trace("u")[:, None]

    def sum_j(f, lo, hi):
        out = np.zeros(grid.shape)
        for j in range(lo, hi + 1):
            out += f(j)
        return out

    un = P(n, "u")
    unx = P(n, "u", 1, 0)
    uny = P(n, "u", 0, 1)
    vn = P(n, "v")
    u0py = P(0, "u", 0, 1)
    u0e_wall = layers.get("euler", 0).shear.u(0.0)

    # -- f_next -------------------------------------------------------------
    ledger["F1"] = s**n * eps * P(n, "u", 2, 0)
    ledger["F2"] = s**n * vn * (
        sum_j(lambda j: s ** (j + 1) * E(j, "u", 0, 1), 0, n)
        + sum_j(lambda j: s**j * P(j, "u", 0, 1), 1, n - 1)
    )
    ledger["F3"] = s**n * (E(0, "u") - u0e_wall) * unx
    ledger["F4"] = s**n * unx * sum_j(lambda j: s**j * (E(j, "u") + P(j, "u")), 1, n)
    ledger["F5"] = s**n * (
        sum_j(lambda j: s**j * E(j, "u", 1, 0), 1, n)
        + sum_j(lambda j: s**j * P(j, "u", 1, 0), 1, n - 1)
    ) * un
    ledger["F6"] = s**n * (
        sum_j(lambda j: s ** (j - 1) * E(j, "v"), 2, n)
        + sum_j(lambda j: s**j * P(j, "v"), 1, n - 1)
    ) * uny
    ledger["F7"] = s**n * (E(1, "v") - layers.get("euler", 1).wall_trace("v")[:, None]) * uny
    ledger["F8"] = s**n * cutoff_error
    ledger["F9"] = s ** (n + 2) * (E(n, "u", 2, 0) + E(n, "u", 0, 2))
    ledger["F10"] = s**n * E(n, "u", 1, 0) * sum_j(lambda j: s**j * E(j, "u"), 1, n - 1)
    ledger["F11"] = s**n * E(n, "u") * sum_j(lambda j: s**j * E(j, "u", 1, 0), 1, n - 1)
    ledger["F12"] = s ** (2 * n) * (E(n, "u") * E(n, "u", 1, 0) + E(n, "v") * E(n, "u", 0, 1))
    ledger["F13"] = s ** (n + 1) * E(n, "u", 0, 1) * sum_j(lambda j: s ** (j - 1) * E(j, "v"), 1, n - 1)
    ledger["F14"] = s ** (n - 1) * E(n, "v") * sum_j(lambda j: s ** (j + 1) * E(j, "u", 0, 1), 1, n - 1)
    f_keys = [k for k in ledger if k.startswith("F")]
    f_next = sum(ledger[k] for k in f_keys)

    # -- g_next -------------------------------------------------------------
    v_s_full = sum_j(lambda j: s ** (j - 1) * E(j, "v"), 1, n) + sum_j(
        lambda j: s**j * P(j, "v"), 0, n
    )
    v_s_full_y = sum_j(lambda j: s**j * E(j, "v", 0, 1), 1, n) + sum_j(
        lambda j: s**j * P(j, "v", 0, 1), 0, n
    )
    v_s_full_x = sum_j(lambda j: s ** (j - 1) * E(j, "v", 1, 0), 1, n) + sum_j(
        lambda j: s**j * P(j, "v", 1, 0), 0, n
    )
    u_s_full = sum_j(lambda j: s**j * (E(j, "u") + P(j, "u")), 0, n)

    ledger["G1"] = s**n * v_s_full * P(n, "v", 0, 1)
    ledger["G2"] = s**n * v_s_full_y * vn
    ledger["G3"] = s**n * v_s_full_x * un
    ledger["G4"] = s**n * u_s_full * P(n, "v", 1, 0)
    ledger["G5"] = -(s**n) * (P(n, "v", 0, 2) + eps * P(n, "v", 2, 0))
    ledger["G6"] = s ** (2 * n) * un * P(n, "v", 1, 0)
    ledger["G7"] = s ** (2 * n) * vn * P(n, "v", 0, 1)
    ledger["G8"] = s**n * E(n, "v", 0, 1) * sum_j(lambda j: s ** (j - 1) * E(j, "v"), 1, n - 1)
    ledger["G9"] = s ** (n - 1) * E(n, "v") * sum_j(lambda j: s**j * E(j, "v", 0, 1), 1, n - 1)
    ledger["G10"] = s ** (2 * n - 1) * E(n, "v") * E(n, "v", 0, 1)
    ledger["G11"] = s ** (2 * n - 1) * E(n, "u") * E(n, "v", 1, 0)
    ledger["G12"] = s**n * E(n, "u") * sum_j(lambda j: s ** (j - 1) * E(j, "v", 1, 0), 1, n - 1)
    ledger["G13"] = s ** (n - 1) * E(n, "v", 1, 0) * sum_j(lambda j: s**j * E(j, "u"), 1, n - 1)
    ledger["G14"] = s ** (n + 1) * (E(n, "v", 2, 0) + E(n, "v", 0, 2))
    g_keys = [k for k in ledger if k.startswith("G")]
    g_next = sum(ledger[k] for k in g_keys)

    f_field = ScalarField2D(grid, f_next, name="residual_u_next")
    g_field = ScalarField2D(grid, g_next, name="residual_v_next")
    FR = eps ** (-config.n0) * (
        diff_values(f_next, grid.y, 1, axis=1) - eps * diff_values(g_next, grid.x, 1, axis=0)
    )
    FR_field = ScalarField2D(grid, FR, name="remainder_forcing")
    return f_field, g_field, FR_field, ledger


def remainder_forcing_norms(FR_field, config):
    """|| F_R|_{x=0} w0 ||_{L2_y}  and  || d_x F_R w0 ||_{L2} / sqrt(eps)."""
    grid = FR_field.grid
    eps = config.eps
    y = grid.y.nodes
    w0 = (1.0 + y) * (1.0 + np.sqrt(eps) * y) ** config.weight_m
    wy = trapz_weights(y)
    wx = trapz_weights(grid.x.nodes)
    trace_norm = float(np.sqrt(np.sum((FR_field.values[0] * w0) ** 2 * wy)))
    FR_x = diff_values(FR_field.values, grid.x, 1, axis=0)
    body = (FR_x * w0[None, :]) ** 2 * wy[None, :] * wx[:, None]
    dx_norm = float(np.sqrt(np.sum(body))) / np.sqrt(eps)
    return {"trace": trace_norm, "dx_over_sqrt_eps": dx_norm, "total": trace_norm + dx_norm}


def ledger_totals(ledger):
    return {k: float(np.max(np.abs(v))) for k, v in ledger.items()}
