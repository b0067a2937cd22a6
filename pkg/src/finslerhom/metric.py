"""Assembly of the homogenized metric from per-level directional samples.

The homogenized density is the convex envelope of the pointwise minimum of
the per-level densities over all admissible levels.  For nonnegative
2-homogeneous functions that envelope is realised geometrically: take the
union of the per-level unit balls {w : psi^z(w) <= 1}, form its convex
hull, and read the result back as the squared gauge of the hull.  The
metric object keeps the sampled values, the hull, and the provenance of
every hull vertex so that recovery sequences can decompose a direction
into hull-vertex pieces.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull

from . import geodesic, levelset
from .constraint import PeriodicConstraint
from .geodesic import DEFAULT_T_SCHEDULE, DirectionalMetricSample
from .graphs import classify_components, simplify

_PARALLEL_TOL = 1e-9

# a denser horizon ladder costs nothing extra (one Dijkstra tree serves all
# target times) and steadies the 1/T extrapolation of every sample
ASSEMBLY_T_SCHEDULE = (10.0, 20.0, 30.0, 40.0, 55.0, 80.0)


class NoAdmissibleLevel(RuntimeError):
    """No scanned level carries an unbounded component: the metric is degenerate everywhere."""


def direction_grid_2d(n):
    """n unit directions, uniform in angle, with coordinate axes hit exactly."""
    angles = 2.0 * np.pi * np.arange(n) / n
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    for k in range(n):
        if (4 * k) % n == 0:  # multiples of 90 degrees
            dirs[k] = np.rint(dirs[k])
    return dirs


def direction_grid_3d(n):
    """Symmetrised Fibonacci sphere with ~n points."""
    half = max(4, n // 2)
    i = np.arange(half) + 0.5
    phi = np.arccos(1 - i / half)          # upper hemisphere
    theta = np.pi * (1 + 5 ** 0.5) * i
    pts = np.stack([np.cos(theta) * np.sin(phi),
                    np.sin(theta) * np.sin(phi),
                    np.cos(phi)], axis=-1)
    return np.concatenate([pts, -pts], axis=0)


def direction_grid(dim, n):
    return direction_grid_2d(n) if dim == 2 else direction_grid_3d(n)


@dataclass
class HomogenizedMetric:
    dim: int
    levels_used: list
    directions: np.ndarray
    directional_samples: dict            # level -> [DirectionalMetricSample]
    raw_min: np.ndarray                  # pointwise min over levels, per direction
    ball_vertices: np.ndarray            # (k, m); empty for the everywhere-degenerate case
    ball_vertex_levels: list             # level that realised each hull vertex
    ball_kind: str                       # "full" | "segment" | "point"
    degenerate_subspace: np.ndarray | None = None
    formula_conjectural: bool = False
    _facet_normals: np.ndarray | None = field(default=None, repr=False)
    _facet_offsets: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.ball_kind == "full":
            self._build_facets()

    def _build_facets(self):
        V = self.ball_vertices
        if self.dim == 2:
            normals, offsets = [], []
            k = len(V)
            for i in range(k):
                a, b = V[i], V[(i + 1) % k]
                e = b - a
                n = np.array([e[1], -e[0]])   # outward for ccw polygons
                h = float(n @ a)
                if h < 0:
                    n, h = -n, -h
                normals.append(n)
                offsets.append(h)
            self._facet_normals = np.asarray(normals)
            self._facet_offsets = np.asarray(offsets)
        else:
            hull = ConvexHull(V)
            self._facet_normals = hull.equations[:, :-1]
            self._facet_offsets = -hull.equations[:, -1]

    def gauge(self, w):
        """Minkowski gauge of the unit ball at w (1-homogeneous)."""
        w = np.asarray(w, dtype=float)
        if not np.any(w):
            return 0.0
        if self.ball_kind == "point":
            return math.inf
        if self.ball_kind == "segment":
            d = self.degenerate_subspace
            radius = float(np.max(np.abs(self.ball_vertices @ d)))
            proj = float(w @ d)
            resid = w - proj * d
            if np.linalg.norm(resid) > _PARALLEL_TOL * np.linalg.norm(w):
                return math.inf
            return abs(proj) / radius
        vals = (self._facet_normals @ w) / self._facet_offsets
        return float(np.max(vals))

    def query(self, w):
        """Squared gauge: the homogenized energy density at w."""
        g = self.gauge(w)
        if not math.isfinite(g):
            return math.inf
        return g * g


def query_metric(metric: HomogenizedMetric, w):
    return metric.query(np.asarray(w, dtype=float))


def export_ball(metric: HomogenizedMetric):
    """JSON-ready record of the unit ball {w : psi(w) <= 1}."""
    return {
        "dim": metric.dim,
        "kind": metric.ball_kind,
        "vertices": [list(map(float, v)) for v in metric.ball_vertices],
        "degenerate_subspace": (None if metric.degenerate_subspace is None
                                else list(map(float, metric.degenerate_subspace))),
        "formula_conjectural": metric.formula_conjectural,
    }


def metric_to_json_dict(metric: HomogenizedMetric):
    return {
        "dim": metric.dim,
        "levels_used": [float(z) for z in metric.levels_used],
        "directions": [list(map(float, d)) for d in metric.directions],
        "psi_values": {
            repr(float(z)): [float(s.psi_hom_value) if math.isfinite(s.psi_hom_value) else None
                             for s in samples]
            for z, samples in metric.directional_samples.items()
        },
        "psi_min": [float(v) if math.isfinite(v) else None for v in metric.raw_min],
        "ball": export_ball(metric),
    }


# ----------------------------------------------------------------------------
# ball construction


def _ball_from_points(dim, points, levels):
    """Hull of sample points, classified as full-dimensional, segment or point."""
    if len(points) == 0:
        return np.zeros((0, dim)), [], "point", None
    P = np.asarray(points, dtype=float)
    sym = np.concatenate([P, -P], axis=0)
    sym_levels = list(levels) + list(levels)
    rank = np.linalg.matrix_rank(sym, tol=1e-9)
    if rank == 0:
        return np.zeros((0, dim)), [], "point", None
    if rank == 1:
        i = int(np.argmax(np.linalg.norm(sym, axis=1)))
        d = sym[i] / np.linalg.norm(sym[i])
        verts = np.stack([sym[i], -sym[i]])
        return verts, [sym_levels[i], sym_levels[i]], "segment", d
    if rank < dim:
        raise NotImplementedError("ball flat in an intermediate subspace")
    hull = ConvexHull(sym)
    idx = list(hull.vertices)  # ccw in 2d
    return sym[idx], [sym_levels[i] for i in idx], "full", None


def _assemble_from_level_graphs(dim, level_graphs, directions, T_schedule,
                                extrapolate, margin, threads, conjectural=False):
    """Sample every (level, direction) pair and convexify."""
    samples = {}
    reports = {z: classify_components(g) for z, g in level_graphs}

    def run_level(zg):
        z, g = zg
        rep = reports[z]
        return z, [geodesic.sample_direction(g, w, T_schedule=T_schedule, report=rep,
                                             extrapolate=extrapolate, margin=margin)
                   for w in directions]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for z, row in pool.map(run_level, level_graphs):
                samples[z] = row
    else:
        for zg in level_graphs:
            z, row = run_level(zg)
            samples[z] = row

    D = len(directions)
    raw_min = np.full(D, math.inf)
    best_level = [None] * D
    for z, row in samples.items():
        for i, s in enumerate(row):
            if s.psi_hom_value < raw_min[i]:
                raw_min[i] = s.psi_hom_value
                best_level[i] = z

    points, levels = [], []
    for i, w in enumerate(directions):
        v = raw_min[i]
        if math.isfinite(v) and v > 0:
            points.append(np.asarray(w) / math.sqrt(v))
            levels.append(best_level[i])
    verts, vert_levels, kind, subspace = _ball_from_points(dim, points, levels)
    return HomogenizedMetric(
        dim=dim,
        levels_used=[z for z, _ in level_graphs],
        directions=np.asarray(directions, dtype=float),
        directional_samples=samples,
        raw_min=raw_min,
        ball_vertices=verts,
        ball_vertex_levels=vert_levels,
        ball_kind=kind,
        degenerate_subspace=subspace,
        formula_conjectural=conjectural,
    )


def assemble_metric_from_graph(graph, directions=64, T_schedule=ASSEMBLY_T_SCHEDULE,
                               extrapolate=True, margin=None, threads=1):
    """Metric carried by a single periodic network (its own level set)."""
    dirs = direction_grid(graph.dim, directions)
    z = graph.level_value if graph.level_value is not None else 0.0
    return _assemble_from_level_graphs(graph.dim, [(z, graph)], dirs, T_schedule,
                                       extrapolate, margin, threads)


def _euclidean_metric(dim, directions, T_schedule):
    dirs = direction_grid(dim, directions)
    samples = {0.0: [DirectionalMetricSample(w, 0.0,
                                             [(T, geodesic.free_space_psi_T(w, T, dim))
                                              for T in T_schedule],
                                             1.0, 0.0, raw_value=None)
                     for w in dirs]}
    raw_min = np.ones(len(dirs))
    verts, vert_levels, kind, subspace = _ball_from_points(
        dim, [np.asarray(w) for w in dirs], [0.0] * len(dirs))
    return HomogenizedMetric(dim, [0.0], np.asarray(dirs), samples, raw_min,
                             verts, vert_levels, kind, subspace)


def scan_levels(phi: PeriodicConstraint, resolution, num_scan=32):
    """Candidate levels: a uniform scan of the image plus the catalog hints.

    Levels within one Lipschitz grid step of the image extremes are
    unresolvable at the extraction pitch and are dropped (the hints are
    kept regardless).
    """
    lo, hi = phi.image_range(max(64, resolution))
    guard = phi.lipschitz_estimate / max(resolution, 64)
    zs = [z for z in np.linspace(lo, hi, num_scan)
          if lo + guard <= z <= hi - guard or lo == hi]
    zs.extend(z for z in phi.connected_level_hints if lo - 1e-12 <= z <= hi + 1e-12)
    out = []
    for z in sorted(zs):
        if not out or abs(z - out[-1]) > 1e-12:
            out.append(float(z))
    return out


def assemble_metric(phi: PeriodicConstraint, level_candidates=None, directions=64,
                    resolution=128, T_schedule=ASSEMBLY_T_SCHEDULE, extrapolate=True,
                    margin=None, threads=1, network_params=None):
    """Full pipeline: discover admissible levels, sample, convexify.

    Levels are retained when their set has exactly one unbounded component.
    If no level qualifies but some level is made of unbounded rank-1
    components sharing a single line (the sheared family), the metric is
    degenerate along that line.  Levels with several independent unbounded
    components are still computed but the result is flagged conjectural.
    """
    network_params = dict(network_params or {})
    if phi.kind == "zero":
        return _euclidean_metric(phi.dim, directions, T_schedule)

    if phi.kind == "dist-z2":
        # the touching-circle level is known in closed form; contour extraction
        # loses O(sqrt(h)) of arc length at the tangencies
        g = levelset.circle_network_2d(points_per_arc=network_params.get("points_per_arc", 64))
        return assemble_metric_from_graph(g, directions, T_schedule, extrapolate,
                                          margin, threads)
    if phi.kind == "face-network-3d":
        g = levelset.face_network_graph(pitch=network_params.get("pitch", 1 / 8))
        return assemble_metric_from_graph(g, directions, T_schedule, extrapolate,
                                          margin, threads)
    if phi.kind == "dist-z3":
        g = levelset.sphere_network_graph(n_polar=network_params.get("n_polar", 12),
                                          n_azimuth=network_params.get("n_azimuth", 24))
        return assemble_metric_from_graph(g, directions, T_schedule, extrapolate,
                                          margin, threads)
    if phi.exact_network is not None:
        g = phi.exact_network
        return assemble_metric_from_graph(g, directions, T_schedule, extrapolate,
                                          margin, threads)

    if phi.dim != 2:
        raise NotImplementedError("generic level scans are 2d; 3d kinds use exact networks")

    if level_candidates is None:
        level_candidates = scan_levels(phi, resolution)

    unique, fallback = [], []
    for z in level_candidates:
        try:
            g = simplify(levelset.extract_level_graph(phi, z, resolution))
        except levelset.LevelOutOfRange:
            continue
        if g.num_vertices == 0:
            continue
        rep = classify_components(g)
        if rep.num_unbounded == 1:
            unique.append((z, g))
        elif rep.num_unbounded > 1:
            fallback.append((z, g, rep))

    dirs = direction_grid(phi.dim, directions)
    if unique:
        return _assemble_from_level_graphs(phi.dim, unique, dirs, T_schedule,
                                           extrapolate, margin, threads)
    if not fallback:
        raise NoAdmissibleLevel("no scanned level has an unbounded component")

    # sheared family: many unbounded components, all repeating along one line
    lines = []
    for _, _, rep in fallback:
        for comp in rep.unbounded_components():
            if comp.translation_rank != 1:
                lines.append(None)
            else:
                g0 = np.asarray(comp.generators[0], dtype=float)
                lines.append(g0 / np.linalg.norm(g0))
    one_line = all(l is not None for l in lines) and all(
        abs(abs(l @ lines[0]) - 1.0) < 1e-9 for l in lines)
    level_graphs = [(z, g) for z, g, _ in fallback]
    return _assemble_from_level_graphs(phi.dim, level_graphs, dirs, T_schedule,
                                       extrapolate, margin, threads,
                                       conjectural=not one_line)


# ----------------------------------------------------------------------------
# Caratheodory decomposition over hull vertices


def caratheodory_pieces(metric: HomogenizedMetric, w):
    """Decompose w over ball vertices: sum(lambda_i * w_i) = w with
    sum(lambda_i) = 1 and query(w) = sum(lambda_i * psi^{z_i}(w_i)).

    Each piece is (lambda_i, w_i, level_i).  Vertices of the hull satisfy
    psi^{z_i}(vertex) = 1, so w_i = gauge(w) * vertex_i works out exactly.
    """
    w = np.asarray(w, dtype=float)
    if not np.any(w):
        return []
    g = metric.gauge(w)
    if not math.isfinite(g):
        raise ValueError("w outside the domain of the metric")
    if metric.ball_kind == "segment":
        d = metric.degenerate_subspace
        i = int(np.argmax(metric.ball_vertices @ d * np.sign(w @ d)))
        return [(1.0, g * metric.ball_vertices[i], metric.ball_vertex_levels[i])]
    if metric.dim != 2:
        raise NotImplementedError("piecewise decomposition implemented for 2d metrics")
    x = w / g  # on the hull boundary
    V = metric.ball_vertices
    k = len(V)
    for i in range(k):
        a, b = V[i], V[(i + 1) % k]
        M = np.stack([a, b], axis=-1)
        det = np.linalg.det(M)
        if abs(det) < 1e-14:
            continue
        ab = np.linalg.solve(M, x)
        if np.all(ab >= -1e-9):
            mu = float(ab[0] / max(ab[0] + ab[1], 1e-30))
            pieces = []
            if mu > 1e-9:
                pieces.append((mu, g * a, metric.ball_vertex_levels[i]))
            if 1.0 - mu > 1e-9:
                pieces.append((1.0 - mu, g * b, metric.ball_vertex_levels[(i + 1) % k]))
            return pieces
    raise RuntimeError("no hull edge crosses the ray; ball may be degenerate")
