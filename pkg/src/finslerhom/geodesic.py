"""Shortest paths on lifted periodic graphs and the scaled energy densities.

The minimal Dirichlet energy of a time-T curve pinned near 0 and T*w on a
level-set network reduces, by constant-speed reparameterisation, to
(geodesic length)^2 / T^2.  This module computes those geodesic lengths by
running Dijkstra on a finite window of the universal cover: every lifted
vertex is a (cell offset, vertex) pair inside an axis-aligned box around
the two endpoint balls.  A virtual super-source tied to all admissible
start vertices makes the min-over-both-balls a single-source problem, and
one Dijkstra tree serves a whole schedule of horizon times T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _scipy_dijkstra

from .graphs import PeriodicGraph, classify_components
from .levelset import admissible_grid_graph

_SUPER_EPS = 1e-300      # pseudo-zero weight: keeps super-source arcs out of sums
_MAX_LIFTED_NODES = 6_000_000

DEFAULT_T_SCHEDULE = (10.0, 20.0, 40.0, 80.0)


class EmptyAdmissibleSet(RuntimeError):
    """No lifted vertex lies inside an endpoint ball."""


class UnreachableDirection(RuntimeError):
    """Every horizon in the schedule has an empty or disconnected problem."""


# ----------------------------------------------------------------------------
# compiled arrays + lifted window


def _compiled(g: PeriodicGraph):
    cache = getattr(g, "_compiled_cache", None)
    if cache is not None:
        return cache
    E = g.num_edges
    tails = np.empty(2 * E, dtype=np.int64)
    heads = np.empty(2 * E, dtype=np.int64)
    shifts = np.zeros((2 * E, g.dim), dtype=np.int64)
    lengths = np.empty(2 * E, dtype=float)
    for i, e in enumerate(g.edges):
        tails[2 * i], heads[2 * i] = e.tail, e.head
        shifts[2 * i] = e.shift
        lengths[2 * i] = e.length
        tails[2 * i + 1], heads[2 * i + 1] = e.head, e.tail
        shifts[2 * i + 1] = [-s for s in e.shift]
        lengths[2 * i + 1] = e.length
    cache = (tails, heads, shifts, lengths)
    g._compiled_cache = cache
    return cache


def _default_margin(dim, span):
    if dim == 2:
        return 8.0 + 0.05 * span
    return 2.0 + 0.02 * span


class _LiftedWindow:
    """All lifted copies of a periodic graph inside an integer cell box."""

    def __init__(self, g, lo, hi):
        self.g = g
        self.lo = np.asarray(lo, dtype=np.int64)
        self.hi = np.asarray(hi, dtype=np.int64)
        self.dims = self.hi - self.lo + 1
        self.nv = g.num_vertices
        self.n_cells = int(np.prod(self.dims))
        if self.n_cells * self.nv > _MAX_LIFTED_NODES:
            raise MemoryError(f"lifted window too large: {self.n_cells * self.nv} nodes")
        self.n = self.n_cells * self.nv + 1      # +1 = super source
        self.super = self.n - 1
        rev = np.cumprod(self.dims[::-1])[::-1]
        self._strides = np.append(rev[1:], 1).astype(np.int64)

        tails, heads, shifts, lengths = _compiled(g)
        cell_lin = np.arange(self.n_cells, dtype=np.int64)
        cell = self._unravel(cell_lin)                       # (C, m)
        head_cell = cell[:, None, :] + shifts[None, :, :]    # (C, 2E, m)
        inside = np.all((head_cell >= self.lo) & (head_cell <= self.hi), axis=-1)
        rows = cell_lin[:, None] * self.nv + tails[None, :]
        cols = (head_cell - self.lo) @ self._strides * self.nv + heads[None, :]
        data = np.broadcast_to(lengths[None, :], rows.shape)
        mask = inside.ravel()
        self._rows = rows.ravel()[mask]
        self._cols = cols.ravel()[mask]
        self._data = np.ascontiguousarray(data.reshape(-1)[mask])

    def _unravel(self, lin):
        out = np.empty((lin.size, len(self.dims)), dtype=np.int64)
        rem = lin
        for k, s in enumerate(self._strides):
            out[:, k] = rem // s
            rem = rem - out[:, k] * s
        return out + self.lo

    def node(self, cell, vertex):
        cell = np.asarray(cell, dtype=np.int64)
        return int((cell - self.lo) @ self._strides) * self.nv + int(vertex)

    def split(self, row):
        cell_lin, vertex = divmod(int(row), self.nv)
        cell = self._unravel(np.array([cell_lin], dtype=np.int64))[0]
        return cell, vertex

    def position(self, row):
        cell, vertex = self.split(row)
        return self.g.vertices[vertex] + cell

    def ball_nodes(self, center, radius):
        """Lifted node rows within ``radius`` of ``center``."""
        center = np.asarray(center, dtype=float)
        lo = np.maximum(np.floor(center - radius - 1).astype(np.int64), self.lo)
        hi = np.minimum(np.ceil(center + radius).astype(np.int64), self.hi)
        if np.any(lo > hi):
            return np.empty(0, dtype=np.int64), np.empty((0, self.g.dim))
        ranges = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        cells = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, self.g.dim)
        pos = self.g.vertices[None, :, :] + cells[:, None, :].astype(float)
        ok = np.linalg.norm(pos - center, axis=-1) <= radius + 1e-12
        rows = ((cells - self.lo) @ self._strides)[:, None] * self.nv + np.arange(self.nv)[None, :]
        return rows[ok].astype(np.int64), pos[ok]

    def solve(self, source_rows, return_predecessors=False):
        rows = np.concatenate([self._rows, np.full(len(source_rows), self.super, dtype=np.int64)])
        cols = np.concatenate([self._cols, np.asarray(source_rows, dtype=np.int64)])
        data = np.concatenate([self._data, np.full(len(source_rows), _SUPER_EPS)])
        # parallel lifted edges must take the minimum, not the CSR duplicate sum
        order = np.lexsort((cols, rows))
        rows, cols, data = rows[order], cols[order], data[order]
        keys = rows * self.n + cols
        first = np.ones(len(keys), dtype=bool)
        first[1:] = keys[1:] != keys[:-1]
        starts = np.flatnonzero(first)
        data = np.minimum.reduceat(data, starts)
        rows, cols = rows[starts], cols[starts]
        mat = csr_matrix((data, (rows, cols)), shape=(self.n, self.n))
        out = _scipy_dijkstra(mat, directed=True, indices=self.super,
                              return_predecessors=return_predecessors)
        if return_predecessors:
            return out
        return out


@dataclass
class GeodesicPath:
    length: float
    rows: list                  # lifted node rows along the path
    points: np.ndarray          # unfolded polyline through the universal cover
    start: np.ndarray
    end: np.ndarray


def _window_for(g, c0, c1, margin):
    c0 = np.asarray(c0, dtype=float)
    c1 = np.asarray(c1, dtype=float)
    lo = np.floor(np.minimum(c0, c1) - margin).astype(np.int64)
    hi = np.ceil(np.maximum(c0, c1) + margin).astype(np.int64)
    return _LiftedWindow(g, lo, hi)


def _reconstruct(win, predecessors, row):
    rows = [row]
    while predecessors[rows[-1]] >= 0 and rows[-1] != win.super:
        rows.append(int(predecessors[rows[-1]]))
    rows.reverse()
    if rows and rows[0] == win.super:
        rows = rows[1:]
    pts = [win.position(rows[0])]
    adj = {}
    for i, e in enumerate(win.g.edges):
        adj.setdefault((e.tail, e.head, e.shift), []).append((e.length, i, True))
        adj.setdefault((e.head, e.tail, tuple(-s for s in e.shift)), []).append((e.length, i, False))
    for a, b in zip(rows[:-1], rows[1:]):
        ca, va = win.split(a)
        cb, vb = win.split(b)
        key = (va, vb, tuple(int(x) for x in (cb - ca)))
        cands = sorted(adj.get(key, []))
        if not cands:
            pts.append(win.position(b))
            continue
        _, ei, fwd = cands[0]
        e = win.g.edges[ei]
        poly = e.polyline if fwd else e.reversed_polyline()
        base = ca.astype(float)
        for p in poly[1:]:
            pts.append(p + base)
    pts = np.asarray(pts)
    return GeodesicPath(0.0, rows, pts, pts[0], pts[-1])


def min_path_length(g: PeriodicGraph, source_ball, target_ball, margin=None,
                    return_path=False):
    """Minimal graph-path length between two balls of lifted vertices.

    ``source_ball``/``target_ball`` are (center, radius) pairs.  Returns
    +inf when the balls are connected to no common component inside the
    search window even after one window enlargement.  Raises
    :class:`EmptyAdmissibleSet` when a ball contains no lifted vertex.
    """
    if g.num_vertices == 0:
        raise EmptyAdmissibleSet("graph has no vertices")
    c0, r0 = source_ball
    c1, r1 = target_ball
    c0 = np.asarray(c0, dtype=float)
    c1 = np.asarray(c1, dtype=float)
    span = float(np.linalg.norm(c1 - c0))
    if margin is None:
        margin = _default_margin(g.dim, span)
    for attempt in range(2):
        win = _window_for(g, c0, c1, margin * (2.0 if attempt else 1.0))
        src, _ = win.ball_nodes(c0, r0)
        tgt, _ = win.ball_nodes(c1, r1)
        if len(src) == 0 or len(tgt) == 0:
            raise EmptyAdmissibleSet("a ball contains no lifted vertex")
        if return_path:
            dist, pred = win.solve(src, return_predecessors=True)
        else:
            dist = win.solve(src)
        best = tgt[np.argmin(dist[tgt])]
        L = float(dist[best])
        if L < 1e-200:
            L = 0.0
        if math.isfinite(L):
            if return_path:
                path = _reconstruct(win, pred, int(best))
                path.length = L
                return L, path
            return L
    return math.inf


def graph_distance(g: PeriodicGraph, u, v, shift, margin=None):
    """Distance in the universal cover from vertex u to vertex v + shift."""
    shift = np.asarray(shift, dtype=int)
    c0 = g.vertices[u]
    c1 = g.vertices[v] + shift
    span = float(np.linalg.norm(c1 - c0))
    if margin is None:
        margin = _default_margin(g.dim, span)
    win = _window_for(g, c0, c1, margin)
    dist = win.solve([win.node(np.zeros(g.dim, dtype=int), u)])
    return float(dist[win.node(shift, v)])


# ----------------------------------------------------------------------------
# energy densities


def _ball_radius(dim):
    return math.sqrt(dim)


def psi_T_z(g: PeriodicGraph, w, T, margin=None):
    """Scaled minimal Dirichlet energy (length^2 / T^2) on the level network."""
    w = np.asarray(w, dtype=float)
    if T <= 0:
        raise ValueError("T must be positive")
    r = _ball_radius(g.dim)
    try:
        L = min_path_length(g, (np.zeros(g.dim), r), (T * w, r), margin=margin)
    except EmptyAdmissibleSet:
        return math.inf
    if not math.isfinite(L):
        return math.inf
    return (L / T) ** 2


def schedule_lengths(g: PeriodicGraph, w, T_schedule, margin=None):
    """Geodesic lengths to balls at T*w for every T, from one Dijkstra tree."""
    w = np.asarray(w, dtype=float)
    Ts = sorted(float(T) for T in T_schedule)
    if not Ts or Ts[0] <= 0:
        raise ValueError("T schedule must be positive and nonempty")
    r = _ball_radius(g.dim)
    span = Ts[-1] * float(np.linalg.norm(w))
    if margin is None:
        margin = _default_margin(g.dim, span)
    out = {}
    for attempt in range(2):
        m = margin * (2.0 if attempt else 1.0)
        win = _window_for(g, np.zeros(g.dim), Ts[-1] * w, m)
        src, _ = win.ball_nodes(np.zeros(g.dim), r)
        if len(src) == 0:
            raise EmptyAdmissibleSet("no lifted vertex near the origin")
        dist = win.solve(src)
        out = {}
        for T in Ts:
            tgt, _ = win.ball_nodes(T * w, r)
            if len(tgt) == 0:
                out[T] = math.inf
                continue
            L = float(np.min(dist[tgt]))
            out[T] = 0.0 if L < 1e-200 else L
        if math.isfinite(out[Ts[-1]]):
            break
    return out


@dataclass
class StableNormResult:
    value: float                 # sqrt(psi_T) at the largest reachable horizon
    error_bound: float           # junction-cost residual C1 / T_max
    psi_by_T: list               # [(T, psi_T)] over the schedule
    extrapolated: float          # 1/T-extrapolated limit of sqrt(psi_T)
    length_constant: float
    envelope_ok: bool


def stable_norm(g: PeriodicGraph, w, T_schedule=DEFAULT_T_SCHEDULE,
                length_constant=None, margin=None):
    """Stable-norm estimate along direction w with an explicit 1/T residual.

    The raw estimate is sqrt(psi_T) at the largest horizon; since the
    endpoint balls contribute an O(1) length offset, sqrt(psi_T) is affine
    in 1/T to leading order and a least-squares fit over the schedule gives
    the extrapolated limit.
    """
    w = np.asarray(w, dtype=float)
    if not np.any(w):
        raise ValueError("stable norm needs w != 0")
    lengths = schedule_lengths(g, w, T_schedule, margin=margin)
    psi_by_T = [(T, (L / T) ** 2 if math.isfinite(L) else math.inf)
                for T, L in sorted(lengths.items())]
    finite = [(T, psi) for T, psi in psi_by_T if math.isfinite(psi)]
    if not finite:
        raise UnreachableDirection(f"direction {w} unreachable for every T in the schedule")
    T_max, psi_max = finite[-1]
    value = math.sqrt(psi_max)
    norm_w = float(np.linalg.norm(w))
    if length_constant is None:
        length_constant = max(1.0, max(math.sqrt(p) / norm_w for _, p in finite))
    c1 = (4.0 * math.sqrt(g.dim) + norm_w) ** 2 * length_constant ** 2
    error_bound = c1 / T_max

    # fit sqrt(psi_T) = A + B/T over the large horizons only: the smallest
    # ones still feel the endpoint balls nonlinearly and drag the line
    tail = [(T, p) for T, p in finite if T >= T_max / 4.0 - 1e-12]
    if len(tail) < 2:
        tail = finite
    if len(tail) >= 2:
        inv_T = np.array([1.0 / T for T, _ in tail])
        s = np.array([math.sqrt(p) for _, p in tail])
        A = np.vstack([np.ones_like(inv_T), inv_T]).T
        coef, *_ = np.linalg.lstsq(A, s, rcond=None)
        extrapolated = float(coef[0])
    else:
        extrapolated = value
    extrapolated = max(extrapolated, norm_w)   # geodesics are no shorter than chords

    envelope_ok = all(extrapolated ** 2 <= psi + c1 / T + 1e-9 for T, psi in finite)
    return StableNormResult(value, error_bound, psi_by_T, extrapolated,
                            length_constant, envelope_ok)


def _direction_in_span(w, generators, tol=1e-9):
    if not generators:
        return False
    G = np.asarray(generators, dtype=float)
    x, *_ = np.linalg.lstsq(G.T, w, rcond=None)
    return float(np.linalg.norm(G.T @ x - w)) <= tol * max(1.0, float(np.linalg.norm(w)))


def psi_hom_z(g: PeriodicGraph, w, T_schedule=DEFAULT_T_SCHEDULE, report=None,
              extrapolate=True, margin=None):
    """Homogenized energy density of one level network in direction w.

    Returns 0 at w = 0 and +inf when no unbounded component can move in
    direction w (certified by the translation lattice of the components,
    without running a search).
    """
    w = np.asarray(w, dtype=float)
    if not np.any(w):
        return 0.0
    if report is None:
        report = classify_components(g)
    reachable = any(_direction_in_span(w, comp.generators)
                    for comp in report.unbounded_components())
    if not reachable:
        return math.inf
    try:
        res = stable_norm(g, w, T_schedule=T_schedule, margin=margin)
    except (UnreachableDirection, EmptyAdmissibleSet):
        return math.inf
    s = res.extrapolated if extrapolate else res.value
    return s * s


def psi_T_zc(phi, z, c, w, T, grid_resolution, margin=None):
    """Scaled minimal energy under the relaxed constraint |phi - z| <= c.

    Discretised as a shortest path on the admissible periodic grid graph.
    """
    g = admissible_grid_graph(phi, z, c, grid_resolution)
    if g.num_vertices == 0:
        return math.inf
    try:
        return psi_T_z(g, w, T, margin=margin)
    except EmptyAdmissibleSet:
        return math.inf


def free_space_psi_T(w, T, dim):
    """psi_T for the unconstrained plane (phi identically zero): exact."""
    w = np.asarray(w, dtype=float)
    L = max(T * float(np.linalg.norm(w)) - 2.0 * _ball_radius(dim), 0.0)
    return (L / T) ** 2


@dataclass
class DirectionalMetricSample:
    direction: np.ndarray
    level: float
    psi_T_values: list           # [(T, psi_T)]
    psi_hom_value: float
    error_bound: float
    raw_value: float = math.nan  # sqrt(psi) at the largest horizon, unextrapolated

    def check_bounds(self, tol=1e-9):
        ok = True
        for T, psi in self.psi_T_values:
            if math.isfinite(psi) and math.isfinite(self.psi_hom_value):
                ok = ok and self.psi_hom_value <= psi + self.error_bound * (
                    max(t for t, _ in self.psi_T_values) / T) + tol
        return ok


def sample_direction(g: PeriodicGraph, w, T_schedule=DEFAULT_T_SCHEDULE, report=None,
                     extrapolate=True, margin=None):
    """One directional stable-norm measurement, packaged with its residual."""
    w = np.asarray(w, dtype=float)
    level = g.level_value if g.level_value is not None else math.nan
    if report is None:
        report = classify_components(g)
    if not np.any(w):
        return DirectionalMetricSample(w, level, [], 0.0, 0.0, 0.0)
    reachable = any(_direction_in_span(w, comp.generators)
                    for comp in report.unbounded_components())
    if not reachable:
        return DirectionalMetricSample(w, level, [], math.inf, math.inf)
    try:
        res = stable_norm(g, w, T_schedule=T_schedule, margin=margin)
    except (UnreachableDirection, EmptyAdmissibleSet):
        return DirectionalMetricSample(w, level, [], math.inf, math.inf)
    s = res.extrapolated if extrapolate else res.value
    return DirectionalMetricSample(w, level, res.psi_by_T, s * s,
                                   res.error_bound, res.value)
