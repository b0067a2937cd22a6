"""Level sets of periodic constraints as periodic graphs.

2D level sets come from a periodic marching-squares pass; 3D networks
(coordinate-plane and touching-sphere geometries) are built by exact
constructors, since generic marching cubes is out of scope.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .constraint import PeriodicConstraint, UnsupportedKind
from .graphs import Edge, PeriodicGraph


class LevelOutOfRange(ValueError):
    """Requested level lies outside the sampled image of the constraint."""


class DegenerateLevel(UserWarning):
    """The level passes exactly through sample nodes; values were nudged."""


# ----------------------------------------------------------------------------
# periodic marching squares


def extract_level_graph(phi: PeriodicConstraint, z, resolution):
    """Isocontour of phi = z on a periodic ``resolution^2`` grid.

    Sample nodes sit at cell centres ((i+1/2)/N, (j+1/2)/N) so that the
    catalog's critical levels (which run along coordinate lines) fall
    between nodes instead of on them.  Crossings found on the seam edges
    get integer shifts.  Where the level genuinely crosses itself (four
    alternating corner signs and a centre value at the level) a junction
    vertex is inserted at the cell centre and joined to all four edge
    crossings, which keeps self-intersecting levels connected.
    """
    N = int(resolution)
    if N < 16:
        raise ValueError("resolution must be >= 16")
    if phi.dim != 2:
        raise UnsupportedKind("contour extraction is 2d; 3d levels come from exact constructors")
    z = float(z)
    lo, hi = phi.image_range(max(64, N))
    pad = 1e-9 * max(hi - lo, 1.0)
    if not (lo - pad <= z <= hi + pad):
        raise LevelOutOfRange(f"z={z} outside image range [{lo}, {hi}]")

    h = 1.0 / N
    coords = (np.arange(N) + 0.5) * h
    grid = np.stack(np.meshgrid(coords, coords, indexing="ij"), axis=-1)
    V = phi.eval(grid) - z  # V[i, j] at ((i+1/2)h, (j+1/2)h)
    span = max(float(V.max() - V.min()), 1e-30)
    ztol = 1e-9 * span

    exact = np.abs(V) <= 1e-12 * span
    if exact.any():
        warnings.warn("level passes through grid nodes; nudging node values",
                      DegenerateLevel)
        V = np.where(exact, 1e-9 * span, V)

    pos = V > 0.0
    cross_h = pos != np.roll(pos, -1, axis=0)  # edge (i,j)-(i+1,j)
    cross_v = pos != np.roll(pos, -1, axis=1)  # edge (i,j)-(i,j+1)

    verts = {}
    positions = []

    def vertex(key, unwrapped):
        if key in verts:
            return verts[key]
        idx = len(positions)
        verts[key] = idx
        positions.append(unwrapped - np.floor(unwrapped))
        return idx

    def h_cross(i, j):
        """Crossing on the horizontal edge (i,j)-(i+1,j); returns (key, local position)."""
        ic, jc = i % N, j % N
        va, vb = V[ic, jc], V[(ic + 1) % N, jc]
        t = va / (va - vb)
        local = np.array([(i + 0.5 + t) * h, (j + 0.5) * h])
        return ("h", ic, jc), local

    def v_cross(i, j):
        ic, jc = i % N, j % N
        va, vb = V[ic, jc], V[ic, (jc + 1) % N]
        t = va / (va - vb)
        local = np.array([(i + 0.5) * h, (j + 0.5 + t) * h])
        return ("v", ic, jc), local

    edges = []

    def add_edge(key_a, loc_a, key_b, loc_b):
        ia = vertex(key_a, loc_a)
        ib = vertex(key_b, loc_b)
        shift = np.rint((loc_b - positions[ib]) - (loc_a - positions[ia])).astype(int)
        poly = np.array([positions[ia], positions[ia] + (loc_b - loc_a)])
        edges.append(Edge(ia, ib, tuple(shift), float(np.linalg.norm(loc_b - loc_a)), poly))

    cell_mask = (cross_h | cross_v
                 | np.roll(cross_h, -1, axis=1)   # top edge of cell (i,j)
                 | np.roll(cross_v, -1, axis=0))  # right edge
    for i, j in np.argwhere(cell_mask):
        crossings = []
        if cross_h[i, j]:
            crossings.append(h_cross(i, j))
        if cross_v[(i + 1) % N, j]:
            crossings.append(v_cross(i + 1, j))
        if cross_h[i, (j + 1) % N]:
            crossings.append(h_cross(i, j + 1))
        if cross_v[i, j]:
            crossings.append(v_cross(i, j))
        if len(crossings) == 2:
            (ka, la), (kb, lb) = crossings
            add_edge(ka, la, kb, lb)
        elif len(crossings) == 4:
            centre_pt = np.array([(i + 1.0) * h, (j + 1.0) * h])
            vc = float(phi.eval(centre_pt) - z)
            if abs(vc) <= ztol:
                # the level crosses itself here: join all four rays at a junction
                ck = ("c", int(i), int(j))
                ci = vertex(ck, centre_pt)
                for key, loc in crossings:
                    ia = ci
                    ib = vertex(key, loc)
                    shift = np.rint((loc - positions[ib]) - (centre_pt - positions[ia])).astype(int)
                    poly = np.array([positions[ia], positions[ia] + (loc - centre_pt)])
                    edges.append(Edge(ia, ib, tuple(shift),
                                      float(np.linalg.norm(loc - centre_pt)), poly))
            else:
                bottom, right, top, left = crossings
                same_as_a = (vc > 0) == bool(pos[i, j])
                if same_as_a:
                    # corners b and d are cut off
                    add_edge(*bottom, *right)
                    add_edge(*top, *left)
                else:
                    add_edge(*bottom, *left)
                    add_edge(*top, *right)

    if not positions:
        return PeriodicGraph(2, np.zeros((0, 2)), [], level_value=z)
    g = PeriodicGraph(2, np.asarray(positions), edges, level_value=z)
    return _weld_tangencies(g, phi, z, h)


def _weld_tangencies(g, phi, z, h):
    """Repair sub-pixel tangencies of the level set.

    Where the level touches itself tangentially (touching circles, cusped
    saddles) the contour strands pinch below the grid scale and marching
    squares separates sheets that the true level connects.  A weld joins
    two vertices when (a) they are within the tangency capture scale
    ~sqrt(2h), (b) the straight segment between them stays inside the tube
    |phi - z| <= 2 Lip h, and (c) the connection genuinely changes the
    covering-space topology: different components, or a cycle shift outside
    the lattice the component already generates.  Per topology class only
    the closest pair is welded, so no in-sheet shortcuts are introduced.
    """
    from scipy.spatial import cKDTree

    from .graphs import _integer_lattice_basis, classify_components

    n = g.num_vertices
    if n == 0:
        return g
    radius = 1.25 * math.sqrt(2.0 * h)

    report = classify_components(g)
    comp = np.full(n, -1, dtype=int)
    lattices = []
    for ci, info in enumerate(report.components):
        for v in info.vertex_ids:
            comp[v] = ci
        lattices.append([list(map(int, row)) for row in info.generators])

    def lattice_contains(basis, vec):
        c = list(map(int, vec))
        for row in basis:
            lead = next(i for i, x in enumerate(row) if x != 0)
            if c[lead] != 0:
                if c[lead] % row[lead] != 0:
                    return False
                q = c[lead] // row[lead]
                c = [a - q * b for a, b in zip(c, row)]
        return not any(c)

    # integer potentials from a BFS per component
    adj = g.adjacency()
    potential = np.zeros((n, g.dim), dtype=int)
    seen = np.zeros(n, dtype=bool)
    neighbours = [set() for _ in range(n)]
    for e in g.edges:
        neighbours[e.tail].add(e.head)
        neighbours[e.head].add(e.tail)
    for root in range(n):
        if seen[root]:
            continue
        seen[root] = True
        stack = [root]
        while stack:
            u = stack.pop()
            for ei, fwd in adj[u]:
                e = g.edges[ei]
                v = e.head if fwd else e.tail
                s = np.asarray(e.shift, dtype=int) * (1 if fwd else -1)
                if not seen[v]:
                    seen[v] = True
                    potential[v] = potential[u] + s
                    stack.append(v)

    tree = cKDTree(g.vertices)
    candidates = {}
    for shift in np.ndindex(*([3] * g.dim)):
        k = np.asarray(shift) - 1
        other = cKDTree(g.vertices + k[None, :].astype(float))
        for u, vs in enumerate(tree.query_ball_tree(other, radius)):
            for v in vs:
                if u == v and not k.any():
                    continue
                if v in neighbours[u] or (neighbours[u] & neighbours[v]):
                    continue
                if comp[u] == comp[v]:
                    # the weld edge (u -> v, shift k) closes a cycle of class
                    # pi_u + k - pi_v; skip it when the component's lattice
                    # already realises that class (pure shortcut)
                    cycle = tuple(potential[u] + k - potential[v])
                    if lattice_contains(lattices[comp[u]], cycle):
                        continue
                    cycle_key = min(cycle, tuple(-x for x in cycle))
                else:
                    cycle_key = None
                a = g.vertices[u]
                b = g.vertices[v] + k
                ts = np.linspace(0.0, 1.0, 7)[:, None]
                seg = a[None, :] * (1 - ts) + b[None, :] * ts
                # tube gate scaled by the local slope: a kink-type tangency
                # keeps |grad phi| of order one across the pinch, whereas two
                # distinct strands flanking a ridge see a vanishing gradient
                grad_floor = float(np.min(np.linalg.norm(phi.gradient(seg), axis=-1)))
                if np.max(np.abs(phi.eval(seg) - z)) > 2.0 * h * grad_floor:
                    continue
                key = (min(comp[u], comp[v]), max(comp[u], comp[v]), cycle_key)
                d = float(np.linalg.norm(b - a))
                prev = candidates.get(key)
                if prev is None or d < prev[0]:
                    candidates[key] = (d, u, v, tuple(int(x) for x in k))

    if not candidates:
        return g
    edges = list(g.edges)
    for d, u, v, kk in candidates.values():
        poly = np.array([g.vertices[u], g.vertices[v] + np.asarray(kk, dtype=float)])
        edges.append(Edge(u, v, kk, d, poly))
    return PeriodicGraph(2, g.vertices, edges, level_value=z)


# ----------------------------------------------------------------------------
# exact constructors


def grid_lattice_2d():
    """The unit grid Z e1 + Z e2 as a one-vertex quotient graph."""
    v = np.zeros((1, 2))
    edges = [
        Edge(0, 0, (1, 0), 1.0, np.array([[0.0, 0.0], [1.0, 0.0]])),
        Edge(0, 0, (0, 1), 1.0, np.array([[0.0, 0.0], [0.0, 1.0]])),
    ]
    return PeriodicGraph(2, v, edges, level_value=0.0)


def circle_network_2d(points_per_arc=64):
    """Touching circles of radius 1/2 around Z^2, with touch-point vertices.

    One circle per cell in the quotient; the two touch points (1/2, 0) and
    (0, 1/2) are shared with the horizontally and vertically neighbouring
    circles, which is what carries the network's connectivity.  Arcs are
    dense polylines; lengths are their chordal lengths.
    """
    verts = np.array([[0.5, 0.0], [0.0, 0.5]])
    # quarter arcs of the circle around (0,0), between consecutive touch points
    # going counterclockwise: (1/2,0) -> (0,1/2) -> (-1/2,0) -> (0,-1/2) -> back
    stops = [(0, (0, 0)), (1, (0, 0)), (0, (-1, 0)), (1, (0, -1)), (0, (0, 0))]
    edges = []
    for (va, sa), (vb, sb) in zip(stops[:-1], stops[1:]):
        pa = verts[va] + np.asarray(sa, dtype=float)
        pb = verts[vb] + np.asarray(sb, dtype=float)
        th_a = math.atan2(pa[1], pa[0])
        th_b = math.atan2(pb[1], pb[0])
        while th_b <= th_a:
            th_b += 2 * math.pi
        ang = np.linspace(th_a, th_b, points_per_arc + 1)
        poly = 0.5 * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        poly[0], poly[-1] = pa, pb
        # re-anchor the polyline at the canonical tail position
        poly = poly - pa[None, :] + verts[va][None, :]
        shift = np.rint((pb - pa) - (verts[vb] - verts[va])).astype(int)
        length = float(np.sum(np.linalg.norm(np.diff(poly, axis=0), axis=1)))
        edges.append(Edge(va, vb, tuple(shift), length, poly))
    return PeriodicGraph(2, verts, edges, level_value=0.5)


def face_network_graph(pitch=1 / 8):
    """The union of all integer-coordinate planes in R^3 as a portal graph.

    Vertices sample the three axis lines (where two coordinate planes meet)
    at the given pitch.  Within each unit square of a plane every pair of
    boundary portal nodes is joined by a straight in-plane segment of exact
    Euclidean length, so shortest paths bend only where the true geodesics
    can bend and the only discretisation error is endpoint snapping on the
    portal lines.
    """
    P = int(round(1.0 / pitch))
    if P < 2:
        raise ValueError("pitch too coarse")
    # vertex ids: axis a in {0,1,2} holds points (q/P) * e_a; q = 0 is shared
    def vid(axis, q):
        q = q % P
        if q == 0:
            return 0
        return 1 + axis * (P - 1) + (q - 1)

    n = 1 + 3 * (P - 1)
    verts = np.zeros((n, 3))
    for axis in range(3):
        for q in range(1, P):
            verts[vid(axis, q), axis] = q / P

    def vpos(axis, q, extra_shift):
        base = np.zeros(3)
        base[axis] = (q % P) / P
        return base + extra_shift, np.array([(q // P) if False else 0] * 3)

    edges = []

    def add(axis_a, qa, shift_a, axis_b, qb, shift_b):
        ta, hb = vid(axis_a, qa % P), vid(axis_b, qb % P)
        pa = np.zeros(3)
        pa[axis_a] = (qa % P) / P
        pb = np.zeros(3)
        pb[axis_b] = (qb % P) / P
        a = pa + shift_a
        b = pb + shift_b
        if ta == hb and not np.asarray(shift_b - shift_a, dtype=int).any():
            return
        shift = np.asarray(shift_b - shift_a, dtype=int)
        length = float(np.linalg.norm(b - a))
        poly = np.array([pa, pa + (b - a)])
        edges.append(Edge(ta, hb, tuple(shift), length, poly))

    zero = np.zeros(3, dtype=int)
    eye = np.eye(3, dtype=int)
    # consecutive nodes along each axis line (with wrap shift)
    for axis in range(3):
        for q in range(P):
            add(axis, q, zero, axis, q + 1, eye[axis] if q + 1 == P else zero)
    # per coordinate plane: complete connections between its four boundary lines
    # plane spanned by axes (a, b): lines a-axis at b=0/1 and b-axis at a=0/1
    for a in range(3):
        for b in range(a + 1, 3):
            instances = [(a, zero), (a, eye[b]), (b, zero), (b, eye[a])]
            for i1 in range(len(instances)):
                for i2 in range(i1 + 1, len(instances)):
                    ax1, s1 = instances[i1]
                    ax2, s2 = instances[i2]
                    for q1 in range(P):
                        for q2 in range(P):
                            add(ax1, q1, s1, ax2, q2, s2)
    g = PeriodicGraph(3, verts, edges, level_value=0.0, is_surface_mesh=True)
    return g


def sphere_network_graph(n_polar=12, n_azimuth=24):
    """Touching spheres of radius 1/2 around Z^3 as one quotient sphere mesh.

    A latitude/longitude mesh (with both quad diagonals) keeps the three
    coordinate great circles as exact edge paths; the six axis points where
    neighbouring spheres touch collapse pairwise under the mod-1 quotient,
    which is precisely what joins the spheres into one network.
    """
    if n_polar % 2 or n_azimuth % 4:
        raise ValueError("need even polar count and azimuth divisible by 4")
    rings = []
    pts = [np.array([0.0, 0.0, 0.5])]  # north pole
    for k in range(1, n_polar):
        theta = np.pi * k / n_polar
        ring = []
        for l in range(n_azimuth):
            ph = 2 * np.pi * l / n_azimuth
            p = 0.5 * np.array([np.sin(theta) * np.cos(ph),
                                np.sin(theta) * np.sin(ph),
                                np.cos(theta)])
            ring.append(len(pts))
            pts.append(p)
        rings.append(ring)
    south = len(pts)
    pts.append(np.array([0.0, 0.0, -0.5]))
    pts = np.asarray(pts)

    # canonicalise mod 1 and merge coincident quotient positions
    canon = pts - np.floor(pts + 1e-9)
    canon[np.abs(canon - 1.0) < 1e-9] = 0.0
    keymap = {}
    remap = np.zeros(len(pts), dtype=int)
    verts = []
    offsets = np.zeros((len(pts), 3), dtype=int)
    for i, (p, c) in enumerate(zip(pts, canon)):
        key = tuple(np.round(c, 9))
        if key not in keymap:
            keymap[key] = len(verts)
            verts.append(c)
        remap[i] = keymap[key]
        offsets[i] = np.rint(p - c).astype(int)
    verts = np.asarray(verts)

    pair_set = set()
    edges = []

    def add(i, j):
        a, b = remap[i], remap[j]
        shift = tuple(int(s) for s in offsets[j] - offsets[i])
        if a == b and not any(shift):
            return
        sig = (a, b, shift) if (a, b, shift) <= (b, a, tuple(-s for s in shift)) \
            else (b, a, tuple(-s for s in shift))
        if sig in pair_set:
            return
        pair_set.add(sig)
        pa = verts[a]
        delta = pts[j] - pts[i]
        edges.append(Edge(a, b, shift, float(np.linalg.norm(delta)),
                          np.array([pa, pa + delta])))

    for l in range(n_azimuth):
        add(0, rings[0][l])                      # pole fans
        add(south, rings[-1][l])
    for k, ring in enumerate(rings):
        for l in range(n_azimuth):
            add(ring[l], ring[(l + 1) % n_azimuth])
        if k + 1 < len(rings):
            nxt = rings[k + 1]
            for l in range(n_azimuth):
                add(ring[l], nxt[l])
                add(ring[l], nxt[(l + 1) % n_azimuth])   # quad diagonals
                add(ring[(l + 1) % n_azimuth], nxt[l])
    return PeriodicGraph(3, verts, edges, level_value=0.25, is_surface_mesh=True)


def exact_network_graph(kind, **params):
    """Exact periodic network by catalog tag."""
    if kind == "GridLattice2D":
        return grid_lattice_2d()
    if kind == "CircleNetwork2D":
        return circle_network_2d(points_per_arc=params.get("points_per_arc", 64))
    if kind == "FaceNetwork3D":
        return face_network_graph(pitch=params.get("pitch", 1 / 8))
    if kind == "SphereNetwork3D":
        return sphere_network_graph(n_polar=params.get("n_polar", 12),
                                    n_azimuth=params.get("n_azimuth", 24))
    if kind == "SynthNetwork":
        graph = params.get("graph")
        if graph is None:
            raise UnsupportedKind("SynthNetwork needs graph=...")
        return graph
    raise UnsupportedKind(f"no exact constructor for {kind!r}")


# ----------------------------------------------------------------------------
# tube graphs for the relaxed constraint |phi - z| <= c


def admissible_grid_graph(phi: PeriodicConstraint, z, c, resolution):
    """Periodic grid graph on nodes with |phi - z| <= c.

    Nodes sit at i/resolution with 8-neighbour (2d) or full 26-neighbour
    (3d) connectivity; edges require both endpoints admissible.
    """
    N = int(resolution)
    if N < 32:
        raise ValueError("grid resolution must be >= 32")
    if c <= 0:
        raise ValueError("tube width c must be positive")
    h = 1.0 / N
    axes = [np.arange(N) * h] * phi.dim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    ok = np.abs(phi.eval(grid) - z) <= c
    idx = -np.ones(ok.shape, dtype=int)
    sel = np.argwhere(ok)
    for i, cell in enumerate(sel):
        idx[tuple(cell)] = i
    verts = sel * h
    edges = []
    m = phi.dim
    steps = [s for s in np.ndindex(*([3] * m))]
    for step in steps:
        d = np.array(step) - 1
        if not d.any():
            continue
        if tuple(d) < tuple(-d):
            continue  # undirected: keep one orientation
        length = float(np.linalg.norm(d)) * h
        for i, cell in enumerate(sel):
            nb = cell + d
            shift = nb // N
            nb_mod = nb % N
            j = idx[tuple(nb_mod)]
            if j < 0:
                continue
            a = verts[i]
            b = verts[j] + shift * 1.0
            edges.append(Edge(int(i), int(j), tuple(int(s) for s in shift),
                              length, np.array([a, b])))
    if len(verts) == 0:
        return PeriodicGraph(phi.dim, np.zeros((0, phi.dim)), [], level_value=z)
    return PeriodicGraph(phi.dim, verts, edges, level_value=z)
