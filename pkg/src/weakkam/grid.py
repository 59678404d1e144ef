"""Periodic scalar fields on a uniform torus grid.

A GridFunction stores values at theta = (i1/n, ..., id/n) and evaluates
anywhere on [0,1)^d by piecewise-multilinear interpolation with periodic
wrap, so every instance is a continuous, 1-periodic function per axis.
"""

import json

import numpy as np

__all__ = ["GridFunction", "wrap_torus", "nearest_image"]


def wrap_torus(theta):
    """Reduce torus coordinates to [0, 1) componentwise."""
    return np.asarray(theta, dtype=float) % 1.0


def nearest_image(delta):
    """Shortest displacement on the torus, componentwise in [-1/2, 1/2)."""
    d = np.asarray(delta, dtype=float)
    return d - np.floor(d + 0.5)


class GridFunction:
    """Scalar field sampled on an n^d uniform grid over T^d = [0,1)^d."""

    def __init__(self, values, dim=None):
        values = np.asarray(values, dtype=float)
        if dim is None:
            dim = values.ndim
        if values.ndim != dim:
            raise ValueError(f"values must have {dim} axes, got {values.ndim}")
        n = values.shape[0]
        if any(s != n for s in values.shape):
            raise ValueError(f"grid must be square, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must all be finite")
        self.n = n
        self.dim = dim
        self.values = values

    # ------------------------------------------------------------------
    @property
    def h(self):
        """Grid spacing 1/n."""
        return 1.0 / self.n

    @classmethod
    def zeros(cls, n, dim=1):
        return cls(np.zeros((n,) * dim), dim=dim)

    @classmethod
    def from_callable(cls, f, n, dim=1):
        """Sample f on the grid; f must accept (..., dim) coordinate arrays."""
        pts = cls.zeros(n, dim).grid_coords()
        vals = np.asarray(f(pts), dtype=float).reshape((n,) * dim)
        return cls(vals, dim=dim)

    def axis(self):
        """The 1-d coordinate array (0, 1/n, ..., (n-1)/n)."""
        return np.arange(self.n) / self.n

    def grid_coords(self):
        """All grid points as an array of shape (n,)*dim + (dim,)."""
        axes = np.meshgrid(*([self.axis()] * self.dim), indexing="ij")
        return np.stack(axes, axis=-1)

    def copy(self):
        return GridFunction(self.values.copy(), dim=self.dim)

    def mean(self):
        return float(self.values.mean())

    def max_abs(self):
        return float(np.max(np.abs(self.values)))

    # ------------------------------------------------------------------
    def __call__(self, theta):
        """Multilinear periodic interpolation at torus points theta.

        theta has shape (..., dim); for dim == 1 a bare scalar or a plain
        (...,) array of coordinates is also accepted.
        """
        th = np.asarray(theta, dtype=float)
        if self.dim == 1:
            th = th.reshape(th.shape + (1,)) if (th.ndim == 0 or th.shape[-1] != 1) else th
        if th.shape[-1] != self.dim:
            raise ValueError(f"expected trailing axis of size {self.dim}")
        x = (th % 1.0) * self.n
        i0 = np.floor(x).astype(int) % self.n
        f = x - np.floor(x)
        out = np.zeros(th.shape[:-1])
        for corner in range(2**self.dim):
            idx = []
            w = np.ones(th.shape[:-1])
            for k in range(self.dim):
                bit = (corner >> k) & 1
                idx.append((i0[..., k] + bit) % self.n)
                w = w * (f[..., k] if bit else (1.0 - f[..., k]))
            out += w * self.values[tuple(idx)]
        return out

    def __add__(self, other):
        other_vals = other.values if isinstance(other, GridFunction) else other
        return GridFunction(self.values + other_vals, dim=self.dim)

    def __sub__(self, other):
        other_vals = other.values if isinstance(other, GridFunction) else other
        return GridFunction(self.values - other_vals, dim=self.dim)

    def __neg__(self):
        return GridFunction(-self.values, dim=self.dim)

    # ------------------------------------------------------------------
    # File format: first line a JSON header {n, d, c, lambda, alpha},
    # then one value per line at 17 significant digits (bit-exact for
    # IEEE doubles on round trip).
    def save(self, path, c=None, lam=0.0, alpha=0.0):
        if c is None:
            c = [0.0] * self.dim
        c = list(np.atleast_1d(np.asarray(c, dtype=float)))
        header = {"n": self.n, "d": self.dim, "c": c, "lambda": float(lam), "alpha": float(alpha)}
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for v in self.values.ravel(order="C"):
                fh.write("%.17g\n" % v)

    @classmethod
    def load(cls, path):
        """Read a saved grid file; returns (GridFunction, header dict)."""
        with open(path) as fh:
            header = json.loads(fh.readline())
            vals = np.array([float(line) for line in fh if line.strip()])
        n, d = int(header["n"]), int(header["d"])
        return cls(vals.reshape((n,) * d), dim=d), header
