"""Tensor-product grids and nodal scalar fields.

Grids are 1D node sets (uniform or tanh-clustered toward the origin) combined
into 2D tensor products.  A ScalarField2D is a plain array of nodal values
tied to its grid; every differential operator in the package acts on these.
All objects are immutable after construction and safe to share across
threads.
"""

import json

import numpy as np

from .errors import InvariantError


class Grid1D:
    """Strictly increasing 1D nodes starting at 0, with a stretching tag.

    Parameters
    ----------
    nodes : array_like
        Strictly increasing coordinates, ``nodes[0] == 0``.
    kind : str
        Stretching descriptor, ``"uniform"``, ``"tanh"`` or ``"custom"``.
    """

    def __init__(self, nodes, kind="custom"):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 8:
            raise InvariantError("Grid1D needs at least 8 nodes")
        if nodes[0] != 0.0:
            raise InvariantError("Grid1D must start at 0")
        if not np.all(np.diff(nodes) > 0):
            raise InvariantError("Grid1D nodes must be strictly increasing")
        self.nodes = nodes
        self.nodes.flags.writeable = False
        self.kind = kind
        self._diff_cache = {}

    @classmethod
    def uniform(cls, xmax, n):
        return cls(np.linspace(0.0, xmax, n), kind="uniform")

    @classmethod
    def tanh_clustered(cls, xmax, n, beta=3.0):
        """Nodes clustered toward 0:  x(t) = xmax*(1 - tanh(b(1-t))/tanh(b))."""
        t = np.linspace(0.0, 1.0, n)
        x = xmax * (1.0 - np.tanh(beta * (1.0 - t)) / np.tanh(beta))
        x[0] = 0.0
        x[-1] = xmax
        return cls(x, kind="tanh")

    @property
    def n(self):
        return self.nodes.size

    @property
    def xmax(self):
        return float(self.nodes[-1])

    def spacing_min(self):
        return float(np.min(np.diff(self.nodes)))

    def __len__(self):
        return self.nodes.size

    def __eq__(self, other):
        return (
            isinstance(other, Grid1D)
            and self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
        )

    def __repr__(self):
        return f"Grid1D(n={self.n}, xmax={self.xmax:g}, kind={self.kind!r})"


class Grid2D:
    """Tensor product of an x-grid on [0, L] and a y-grid on [0, y_max]."""

    def __init__(self, x_grid, y_grid):
        self.x = x_grid
        self.y = y_grid

    @property
    def shape(self):
        return (self.x.n, self.y.n)

    @property
    def size(self):
        return self.x.n * self.y.n

    def meshgrid(self):
        """Return (X, Y) arrays of shape (nx, ny)."""
        return np.meshgrid(self.x.nodes, self.y.nodes, indexing="ij")

    def __eq__(self, other):
        return isinstance(other, Grid2D) and self.x == other.x and self.y == other.y

    def __repr__(self):
        return f"Grid2D({self.x!r}, {self.y!r})"


class ScalarField2D:
    """Nodal values on a Grid2D; values[i, j] = f(x_i, y_j)."""

    def __init__(self, grid, values, name=None):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise InvariantError(
                f"field shape {values.shape} does not match grid {grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InvariantError(f"non-finite values in field {name!r}")
        self.grid = grid
        self.values = values
        self.values.flags.writeable = False
        self.name = name

    @classmethod
    def from_function(cls, grid, fn, name=None):
        X, Y = grid.meshgrid()
        return cls(grid, fn(X, Y), name=name)

    @classmethod
    def zeros(cls, grid, name=None):
        return cls(grid, np.zeros(grid.shape), name=name)

    def with_values(self, values, name=None):
        return ScalarField2D(self.grid, values, name=name or self.name)

    def __add__(self, other):
        if isinstance(other, ScalarField2D):
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + other)

    def __sub__(self, other):
        if isinstance(other, ScalarField2D):
            return self.with_values(self.values - other.values)
        return self.with_values(self.values - other)

    def __mul__(self, other):
        if isinstance(other, ScalarField2D):
            return self.with_values(self.values * other.values)
        return self.with_values(self.values * other)

    __rmul__ = __mul__

    def max_abs(self):
        return float(np.max(np.abs(self.values)))

    # -- serialization -----------------------------------------------------

    def to_csv(self, path):
        """Write (x, y, value) rows; floats printed with repr for round-trip."""
        with open(path, "w") as fh:
            fh.write("x,y,value\n")
            xs = self.grid.x.nodes
            ys = self.grid.y.nodes
            for i in range(xs.size):
                for j in range(ys.size):
                    fh.write(
                        f"{float(xs[i])!r},{float(ys[j])!r},{float(self.values[i, j])!r}\n"
                    )

    @classmethod
    def from_csv(cls, path, name=None):
        xs, ys, vs = [], [], []
        with open(path) as fh:
            header = fh.readline()
            assert header.strip() == "x,y,value"
            for line in fh:
                a, b, c = line.strip().split(",")
                xs.append(float(a))
                ys.append(float(b))
                vs.append(float(c))
        x_nodes = np.array(sorted(set(xs)))
        y_nodes = np.array(sorted(set(ys)))
        grid = Grid2D(Grid1D(x_nodes), Grid1D(y_nodes))
        values = np.array(vs).reshape(x_nodes.size, y_nodes.size)
        return cls(grid, values, name=name)

    def to_envelope(self):
        """Structured-text (JSON) envelope {grid, values, name}."""
        return json.dumps(
            {
                "grid": {
                    "x": {"kind": self.grid.x.kind, "nodes": self.grid.x.nodes.tolist()},
                    "y": {"kind": self.grid.y.kind, "nodes": self.grid.y.nodes.tolist()},
                },
                "values": self.values.tolist(),
                "name": self.name,
            }
        )

    @classmethod
    def from_envelope(cls, text):
        obj = json.loads(text)
        gx = Grid1D(np.array(obj["grid"]["x"]["nodes"]), kind=obj["grid"]["x"]["kind"])
        gy = Grid1D(np.array(obj["grid"]["y"]["nodes"]), kind=obj["grid"]["y"]["kind"])
        return cls(Grid2D(gx, gy), np.array(obj["values"]), name=obj["name"])

    def __repr__(self):
        return f"ScalarField2D(name={self.name!r}, shape={self.values.shape})"
