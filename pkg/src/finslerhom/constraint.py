"""1-periodic Lipschitz constraint functions and the built-in catalog.

Every constraint is a scalar function on R^m (m = 2 or 3) that is
1-periodic in each coordinate.  Evaluation is vectorised: points have
shape (..., m), values shape (...).  Arguments are reduced modulo the
unit cell before any arithmetic, so periodicity holds exactly in
floating point.
"""

from __future__ import annotations

import csv
import numpy as np

FD_STEP = 1e-6          # central-difference step for the gradient fallback
_KINK_TOL = 1e-12       # below this distance a point counts as "on" a kink


class UnsupportedKind(ValueError):
    """Unknown catalog id or parameters."""


def _reduce(x):
    x = np.asarray(x, dtype=float)
    return x - np.floor(x)


def _nearest_lattice(y):
    # round-half-down: at ties the smaller lattice point wins, which makes
    # subgradients at kinks come from the lexicographically smallest region
    return np.ceil(y - 0.5)


class PeriodicConstraint:
    """A 1-periodic Lipschitz function phi: R^m -> R.

    Parameters
    ----------
    dim : int
        Domain dimension m (2 or 3).
    kind : str
        Catalog tag, e.g. "sin-product"; "grid-sampled" for tabulated data.
    fn : callable
        Vectorised evaluation on points already reduced to [0,1)^m.
    grad_fn : callable or None
        Vectorised analytic gradient on reduced points; None switches
        `gradient` to central finite differences with step ``FD_STEP``.
    lipschitz_estimate : float
        Upper bound for the Lipschitz constant over one cell.
    connected_level_hints : tuple of float
        Levels whose sets are expected to carry the unbounded component;
        used to seed the level scan of the metric assembly.
    params : dict
        Construction parameters, kept for reporting/serialisation.
    exact_network : PeriodicGraph or None
        For kinds whose distinguished level set is known exactly as a
        periodic graph (synthesised networks), the graph itself.
    """

    def __init__(self, dim, kind, fn, grad_fn=None, lipschitz_estimate=0.0,
                 connected_level_hints=(), params=None, exact_network=None):
        self.dim = int(dim)
        self.kind = str(kind)
        self._fn = fn
        self._grad_fn = grad_fn
        self.lipschitz_estimate = float(lipschitz_estimate)
        self.connected_level_hints = tuple(float(z) for z in connected_level_hints)
        self.params = dict(params or {})
        self.exact_network = exact_network

    @property
    def analytic_gradient(self):
        return self._grad_fn is not None

    def __repr__(self):
        return f"PeriodicConstraint(kind={self.kind!r}, dim={self.dim})"

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected points in R^{self.dim}, got shape {x.shape}")
        return np.asarray(self._fn(_reduce(x)), dtype=float)

    __call__ = eval

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected points in R^{self.dim}, got shape {x.shape}")
        y = _reduce(x)
        if self._grad_fn is not None:
            return np.asarray(self._grad_fn(y), dtype=float)
        g = np.empty_like(y)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = FD_STEP
            g[..., k] = (self.eval(y + e) - self.eval(y - e)) / (2.0 * FD_STEP)
        return g

    def image_range(self, resolution):
        """[min, max] of phi over the uniform ``resolution^m`` node grid.

        Nodes sit at i/resolution, so doubling the resolution refines the
        same grid and the interval can only widen.
        """
        resolution = int(resolution)
        if resolution < 8:
            raise ValueError("resolution must be >= 8")
        axes = [np.arange(resolution) / resolution] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack(mesh, axis=-1)
        lo, hi = np.inf, -np.inf
        # chunk over the first axis to bound memory for 3d grids
        for block in np.array_split(pts, max(1, pts.shape[0] // 64 + 1), axis=0):
            vals = self.eval(block)
            lo = min(lo, float(vals.min()))
            hi = max(hi, float(vals.max()))
        return (lo, hi)


# ----------------------------------------------------------------------------
# catalog kinds

def sin_product():
    """phi(x, y) = sin(2 pi x) sin(2 pi y); zero set is the half-integer grid."""
    two_pi = 2.0 * np.pi

    def fn(y):
        return np.sin(two_pi * y[..., 0]) * np.sin(two_pi * y[..., 1])

    def grad(y):
        sx, cx = np.sin(two_pi * y[..., 0]), np.cos(two_pi * y[..., 0])
        sy, cy = np.sin(two_pi * y[..., 1]), np.cos(two_pi * y[..., 1])
        return np.stack([two_pi * cx * sy, two_pi * sx * cy], axis=-1)

    return PeriodicConstraint(2, "sin-product", fn, grad,
                              lipschitz_estimate=two_pi,
                              connected_level_hints=(0.0,))


def dist_to_lattice_2d():
    """phi(x, y) = dist((x, y), Z^2); the level 1/2 is the touching-circle net."""

    def fn(y):
        d = y - _nearest_lattice(y)
        return np.sqrt(np.sum(d * d, axis=-1))

    def grad(y):
        d = y - _nearest_lattice(y)
        r = np.sqrt(np.sum(d * d, axis=-1))
        safe = np.maximum(r, _KINK_TOL)
        g = d / safe[..., None]
        # at a lattice point pick the limit from the all-coordinates-below region
        diag = np.full(y.shape[-1], -1.0 / np.sqrt(y.shape[-1]))
        return np.where((r <= _KINK_TOL)[..., None], diag, g)

    return PeriodicConstraint(2, "dist-z2", fn, grad,
                              lipschitz_estimate=1.0,
                              connected_level_hints=(0.5,))


def face_network_3d():
    """phi = min_i dist^2(x_i, Z): squared distance to the integer-coordinate planes."""

    def fn(y):
        d = y - _nearest_lattice(y)
        return np.min(d * d, axis=-1)

    def grad(y):
        d = y - _nearest_lattice(y)
        sq = d * d
        idx = np.argmin(sq, axis=-1)
        g = np.zeros_like(d)
        np.put_along_axis(g, idx[..., None], 2.0 * np.take_along_axis(d, idx[..., None], -1), -1)
        return g

    return PeriodicConstraint(3, "face-network-3d", fn, grad,
                              lipschitz_estimate=1.0,
                              connected_level_hints=(0.0,))


def dist_to_lattice_3d():
    """phi = dist^2((x, y, z), Z^3); the level 1/4 is the touching-sphere net."""

    def fn(y):
        d = y - _nearest_lattice(y)
        return np.sum(d * d, axis=-1)

    def grad(y):
        d = y - _nearest_lattice(y)
        return 2.0 * d

    return PeriodicConstraint(3, "dist-z3", fn, grad,
                              lipschitz_estimate=np.sqrt(3.0),
                              connected_level_hints=(0.25,))


def sheared_sine(g, g_prime, params=None):
    """phi(x, y) = sin(2 pi (x - g(y))) for a 1-periodic shear profile g.

    ``g`` and ``g_prime`` must be vectorised on [0, 1).  Level sets are the
    sheared vertical curves x = g(y) + const; every component is unbounded
    with vertical period 1.
    """
    two_pi = 2.0 * np.pi
    params = dict(params or {})
    slope = float(params.get("max_slope", np.max(np.abs(g_prime(np.linspace(0, 1, 2049))))))

    def fn(y):
        return np.sin(two_pi * (y[..., 0] - g(y[..., 1])))

    def grad(y):
        c = np.cos(two_pi * (y[..., 0] - g(y[..., 1])))
        return np.stack([two_pi * c, -two_pi * c * g_prime(y[..., 1])], axis=-1)

    lip = two_pi * np.sqrt(1.0 + slope * slope)
    return PeriodicConstraint(2, "sheared-sine", fn, grad,
                              lipschitz_estimate=lip,
                              connected_level_hints=(0.0,),
                              params=params)


def zero_constraint(dim=2):
    """phi identically 0: the unconstrained (Euclidean) reference case."""

    def fn(y):
        return np.zeros(y.shape[:-1])

    def grad(y):
        return np.zeros_like(y)

    return PeriodicConstraint(dim, "zero", fn, grad,
                              lipschitz_estimate=0.0,
                              connected_level_hints=(0.0,))


def synth_network_constraint(graph):
    """Squared distance to a periodic network graph (its own zero level set)."""
    segs = []
    for e in graph.edges:
        poly = np.asarray(e.polyline, dtype=float)
        for a, b in zip(poly[:-1], poly[1:]):
            segs.append((a, b))
    a = np.array([s[0] for s in segs])
    b = np.array([s[1] for s in segs])
    ab = b - a
    den = np.maximum(np.sum(ab * ab, axis=-1), 1e-30)
    shifts = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)
    a_t = (a[None, :, :] + shifts[:, None, :]).reshape(-1, 2)
    ab_t = np.tile(ab, (9, 1))
    den_t = np.tile(den, 9)

    def dist2(y):
        flat = y.reshape(-1, 2)
        out = np.empty(flat.shape[0])
        for i, p in enumerate(flat):
            t = np.clip(np.sum((p - a_t) * ab_t, axis=-1) / den_t, 0.0, 1.0)
            proj = a_t + t[:, None] * ab_t
            d = p - proj
            out[i] = np.min(np.sum(d * d, axis=-1))
        return out.reshape(y.shape[:-1])

    # |grad dist^2| = 2 dist <= 2 * (half cell diagonal)
    return PeriodicConstraint(2, "synth-network", dist2, None,
                              lipschitz_estimate=np.sqrt(2.0),
                              connected_level_hints=(0.0,),
                              exact_network=graph)


def grid_sampled(values, source=None):
    """Tabulated constraint with multilinear periodic interpolation.

    ``values`` holds node samples on the uniform grid i/N per axis,
    shape (N,) * m.  Interpolation is periodic across the seam, which
    preserves 1-periodicity exactly.
    """
    values = np.asarray(values, dtype=float)
    m = values.ndim
    n = values.shape[0]
    if any(s != n for s in values.shape):
        raise ValueError("grid must be square/cubic")

    def fn(y):
        t = y * n
        i0 = np.floor(t).astype(int) % n
        frac = t - np.floor(t)
        out = np.zeros(y.shape[:-1])
        for corner in range(1 << m):
            idx = []
            w = np.ones(y.shape[:-1])
            for k in range(m):
                if corner >> k & 1:
                    idx.append((i0[..., k] + 1) % n)
                    w = w * frac[..., k]
                else:
                    idx.append(i0[..., k])
                    w = w * (1.0 - frac[..., k])
            out = out + w * values[tuple(idx)]
        return out

    span = float(values.max() - values.min())
    lip = span * n * np.sqrt(m)  # coarse bound from per-cell variation
    return PeriodicConstraint(m, "grid-sampled", fn, None,
                              lipschitz_estimate=lip,
                              params={"resolution": n, "source": source})


def grid_sample_of(phi, resolution):
    """Tabulate an existing constraint on an N^m node grid."""
    axes = [np.arange(resolution) / resolution] * phi.dim
    mesh = np.meshgrid(*axes, indexing="ij")
    values = phi.eval(np.stack(mesh, axis=-1))
    sampled = grid_sampled(values, source=phi.kind)
    sampled.lipschitz_estimate = phi.lipschitz_estimate
    sampled.connected_level_hints = phi.connected_level_hints
    return sampled


def load_grid_file(path):
    """Read a tabulated constraint from disk.

    ``.npy`` files hold the node array directly.  CSV files start with a
    header line ``m,resolution`` followed by the C-order flattened values,
    one per line.
    """
    path = str(path)
    if path.endswith(".npy"):
        return grid_sampled(np.load(path), source=path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    m, n = (int(v) for v in rows[0][:2])
    flat = np.array([float(r[0]) for r in rows[1:]], dtype=float)
    if flat.size != n ** m:
        raise ValueError(f"expected {n ** m} values, found {flat.size}")
    return grid_sampled(flat.reshape((n,) * m), source=path)


def _make_sheared_sine(**params):
    from . import synthesis
    return synthesis.build_degenerate(params.get("k", 4.0),
                                      params.get("profile", "sawtooth"))


def _make_synth_network(**params):
    from . import synthesis
    spec = params.get("spec")
    if spec is None:
        raise UnsupportedKind("synth-network needs a ball spec (spec=...)")
    graph = synthesis.build_network(spec, wiggle=params.get("wiggle", "triangle"))
    return synth_network_constraint(graph)


def _make_grid_sampled(**params):
    path = params.get("path")
    if path is None:
        raise UnsupportedKind("grid-sampled needs a file (path=...)")
    return load_grid_file(path)


CATALOG = {
    "sin-product": lambda **p: sin_product(),
    "dist-z2": lambda **p: dist_to_lattice_2d(),
    "face-network-3d": lambda **p: face_network_3d(),
    "dist-z3": lambda **p: dist_to_lattice_3d(),
    "sheared-sine": _make_sheared_sine,
    "synth-network": _make_synth_network,
    "grid-sampled": _make_grid_sampled,
    "zero": lambda **p: zero_constraint(int(p.get("dim", 2))),
}


def make(kind, **params):
    """Instantiate a catalog constraint by its string id."""
    try:
        factory = CATALOG[kind]
    except KeyError:
        raise UnsupportedKind(f"unknown constraint kind {kind!r}") from None
    return factory(**params)
