"""Discrete differential and integral operators on stretched grids.

Finite-difference weights come from Fornberg's interpolation algorithm, so
arbitrary derivative orders and nonuniform node sets are handled uniformly.
Interior stencils are (near-)centered windows; boundary stencils are
one-sided windows of the same size, which keeps the formal accuracy order
equal to ``window - order`` everywhere.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import cumulative_trapezoid

from .errors import SolverError, StencilError
from .grids import ScalarField2D


def fornberg_weights(x0, nodes, order):
    """Weights of derivatives 0..order at x0 from the given nodes.

    Returns an array c of shape (order+1, len(nodes)) such that
    f^(m)(x0) ~= sum_j c[m, j] f(nodes[j]).
    """
    nodes = np.asarray(nodes, dtype=float)
    n = nodes.size
    c = np.zeros((order + 1, n))
    c1 = 1.0
    c4 = nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def derivative_matrix(grid, order, window=None):
    """Sparse matrix applying d^order/dx^order on the grid's nodes.

    window is the stencil size (default order + 3, giving formal accuracy
    >= 3); windows are centered in the interior and shifted one-sided at the
    boundaries.  Matrices are cached on the grid.
    """
    if window is None:
        window = order + 3
    key = (order, window)
    cached = grid._diff_cache.get(key)
    if cached is not None:
        return cached
    x = grid.nodes
    n = x.size
    if window > n:
        raise StencilError(
            f"grid with {n} nodes too small for window {window} (order {order})"
        )
    rows, cols, data = [], [], []
    for i in range(n):
        lo = min(max(i - window // 2, 0), n - window)
        idx = np.arange(lo, lo + window)
        w = fornberg_weights(x[i], x[idx], order)[order]
        rows.extend([i] * window)
        cols.extend(idx.tolist())
        data.extend(w.tolist())
    mat = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    grid._diff_cache[key] = mat
    return mat


def boundary_derivative_row(grid, order, side, window=None):
    """Stencil (as a dense row) of d^order at the first or last node."""
    if window is None:
        window = order + 3
    x = grid.nodes
    if window > x.size:
        raise StencilError("grid too small for boundary stencil")
    if side == "left":
        idx = np.arange(window)
        x0 = x[0]
    elif side == "right":
        idx = np.arange(x.size - window, x.size)
        x0 = x[-1]
    else:
        raise ValueError(side)
    w = fornberg_weights(x0, x[idx], order)[order]
    row = np.zeros(x.size)
    row[idx] = w
    return row


def diff(field, axis, order, window=None):
    """Partial derivative of a ScalarField2D along 'x' or 'y'.

    Centered interior stencils, one-sided boundary stencils, exact on
    polynomials up to degree window-1.
    """
    if order < 1 or order > 4:
        raise StencilError("derivative order must be in 1..4")
    grid1 = field.grid.x if axis == "x" else field.grid.y
    if grid1.n < order + 4:
        raise StencilError(f"need at least {order + 4} nodes along {axis}")
    D = derivative_matrix(grid1, order, window=window)
    if axis == "x":
        out = D @ field.values
    else:
        out = (D @ field.values.T).T
    return field.with_values(out, name=None)


def diff_values(values, grid1, order, axis, window=None):
    """diff() on a plain array; axis 0 is x, axis 1 is y."""
    D = derivative_matrix(grid1, order, window=window)
    if axis == 0:
        return D @ values
    return (D @ values.T).T


def delta_eps(field, eps, window=None):
    """Scaled Laplacian f_yy + eps * f_xx."""
    out = diff(field, "y", 2, window=window).values
    if eps != 0.0:
        out = out + eps * diff(field, "x", 2, window=window).values
    return field.with_values(out)


def delta_eps_squared(field, eps, window=None):
    """Composition delta_eps(delta_eps(f))."""
    return delta_eps(delta_eps(field, eps, window=window), eps, window=window)


def integrate_x(field):
    """Cumulative trapezoidal integral from 0 to x; vanishes on {x = 0}."""
    vals = cumulative_trapezoid(field.values, field.grid.x.nodes, axis=0, initial=0.0)
    return field.with_values(vals)


def integrate_y(field):
    """Cumulative trapezoidal integral from 0 to y."""
    vals = cumulative_trapezoid(field.values, field.grid.y.nodes, axis=1, initial=0.0)
    return field.with_values(vals)


def tail_integral_y(field):
    """Reversed cumulative trapezoid: (x, y) -> integral_y^{ymax} f dy'."""
    cum = cumulative_trapezoid(field.values, field.grid.y.nodes, axis=1, initial=0.0)
    vals = cum[:, -1][:, None] - cum
    return field.with_values(vals)


def trapz_weights(nodes):
    """Trapezoidal quadrature weights for an increasing 1D node set."""
    nodes = np.asarray(nodes)
    w = np.zeros_like(nodes)
    d = np.diff(nodes)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


# ---------------------------------------------------------------------------
# weights and cutoffs


class Weight:
    """Positive weight function of y used in the norm diagnostics.

    kind: 'unit' | 'w0' | 'exp' | 'poly'.
      unit : 1
      w0   : (1 + y) * (1 + sqrt(eps) y)^m
      exp  : exp(N y)
      poly : (1 + sqrt(eps) y)^m
    """

    def __init__(self, kind="unit", m=5, N=1.0, eps=0.0):
        if kind not in ("unit", "w0", "exp", "poly"):
            raise ValueError(kind)
        self.kind = kind
        self.m = m
        self.N = N
        self.eps = eps

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "unit":
            return np.ones_like(y)
        if self.kind == "w0":
            return (1.0 + y) * (1.0 + np.sqrt(self.eps) * y) ** self.m
        if self.kind == "exp":
            return np.exp(self.N * y)
        return (1.0 + np.sqrt(self.eps) * y) ** self.m

    def label(self):
        if self.kind == "w0":
            return f"w0(m={self.m})"
        if self.kind == "exp":
            return f"exp({self.N:g}y)"
        if self.kind == "poly":
            return f"<Y>^{self.m}"
        return "1"


def _smoothstep(s):
    """C^2 quintic smoothstep on [0, 1]."""
    return 6.0 * s**5 - 15.0 * s**4 + 10.0 * s**3


def _smoothstep_d1(s):
    return 30.0 * s**4 - 60.0 * s**3 + 30.0 * s**2


def _smoothstep_d2(s):
    return 120.0 * s**3 - 180.0 * s**2 + 60.0 * s


def _smoothstep_d3(s):
    return 360.0 * s**2 - 360.0 * s + 60.0


class CutoffSpec:
    """Monotone cutoff: chi = 1 on [0, 1), 0 on (2, inf), quintic in between.

    Evaluations are of chi(y / scale) and its y-derivatives.
    """

    def __init__(self, scale=1.0):
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.scale = scale

    def _eval(self, t, deriv):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        if deriv == 0:
            out = np.where(t < 1.0, 1.0, 0.0)
        mid = (t >= 1.0) & (t <= 2.0)
        s = np.clip(t - 1.0, 0.0, 1.0)
        if deriv == 0:
            out = np.where(mid, 1.0 - _smoothstep(s), out)
        elif deriv == 1:
            out = np.where(mid, -_smoothstep_d1(s), out)
        elif deriv == 2:
            out = np.where(mid, -_smoothstep_d2(s), out)
        elif deriv == 3:
            out = np.where(mid, -_smoothstep_d3(s), out)
        else:
            raise ValueError("cutoff derivatives supported up to order 3")
        return out

    def __call__(self, y, deriv=0):
        """chi^(deriv)(y / scale) -- note: derivative in the scaled argument,
        so d/dy chi(y/scale) = self(y, 1) / scale."""
        return self._eval(np.asarray(y, dtype=float) / self.scale, deriv)

    def deriv_y(self, y, order=1):
        """Actual y-derivative of chi(y / scale), chain rule included."""
        return self._eval(np.asarray(y, dtype=float) / self.scale, order) / (
            self.scale**order
        )


# ---------------------------------------------------------------------------
# banded two-point boundary value solver


class BVPResult:
    def __init__(self, solution, residual_inf, grid):
        self.solution = solution
        self.residual_inf = residual_inf
        self.grid = grid


def assemble_ode_operator(grid, coeffs, window=None):
    """Sparse operator sum_k diag(a_k) D^k for a linear ODE on the grid.

    coeffs: sequence (a0, a1, a2, a3, a4); each entry a scalar, an array of
    nodal values, or None (treated as zero).
    """
    n = grid.n
    A = sp.csr_matrix((n, n))
    for k, a in enumerate(coeffs):
        if a is None:
            continue
        a_arr = np.broadcast_to(np.asarray(a, dtype=float), (n,))
        if not np.any(a_arr):
            continue
        Dk = sp.identity(n, format="csr") if k == 0 else derivative_matrix(grid, k, window=window)
        A = A + sp.diags(a_arr) @ Dk
    return A.tocsr()


def solve_banded_bvp(grid, coeffs, rhs, bcs, window=None, refine=2):
    """Direct solve of a 4th-order (or lower) linear ODE BVP on a Grid1D.

    Parameters
    ----------
    coeffs : (a0..a4) nodal coefficient arrays or scalars.
    rhs    : nodal right-hand side.
    bcs    : four (side, order, value) triples; side in {'left','right'},
             order is the derivative order of the condition.  Far-field
             decay is expressed as ('right', 1, 0.0) and ('right', 2, 0.0).
    refine : iterative refinement sweeps with a long-double residual,
             reducing the effect of the fourth-order operator's conditioning.

    Returns BVPResult with the interior equation residual (inf norm).
    """
    n = grid.n
    rhs = np.broadcast_to(np.asarray(rhs, dtype=float), (n,)).copy()
    A = assemble_ode_operator(grid, coeffs, window=window).tolil()
    b = rhs.copy()

    left_rows = [i for i, bc in enumerate(bcs) if bc[0] == "left"]
    right_rows = [i for i, bc in enumerate(bcs) if bc[0] == "right"]
    if len(left_rows) + len(right_rows) != 4:
        raise SolverError("need exactly four boundary conditions")
    row_slots = {"left": [0, 1], "right": [n - 1, n - 2]}
    used = {"left": 0, "right": 0}
    interior_mask = np.ones(n, dtype=bool)
    for side, order, value in bcs:
        slot = row_slots[side][used[side]]
        used[side] += 1
        if order == 0:
            row = np.zeros(n)
            row[0 if side == "left" else n - 1] = 1.0
        else:
            row = boundary_derivative_row(grid, order, side, window=window)
        A.rows[slot] = list(np.nonzero(row)[0])
        A.data[slot] = list(row[np.nonzero(row)[0]])
        b[slot] = value
        interior_mask[slot] = False

    A = A.tocsc()
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        cond = np.linalg.cond(A.toarray()) if n <= 2500 else np.inf
        raise SolverError(f"singular BVP matrix (cond~{cond:.2e})") from exc
    v = lu.solve(b)
    # iterative refinement with extended-precision residual
    if refine:
        A_ld = A.astype(np.longdouble)
        b_ld = b.astype(np.longdouble)
        for _ in range(refine):
            r = b_ld - A_ld @ v.astype(np.longdouble)
            dv = lu.solve(np.asarray(r, dtype=float))
            v = v + dv
    res = A @ v - b
    residual_inf = float(np.max(np.abs(res[interior_mask])))
    return BVPResult(v, residual_inf, grid)
