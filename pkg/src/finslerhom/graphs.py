"""Periodic geometric graphs on the unit torus.

A :class:`PeriodicGraph` stores one fundamental cell of a Z^m-periodic
network: vertices live in [0,1)^m and every edge carries an integer
*shift*, meaning it connects ``vertices[tail]`` to ``vertices[head] + shift``
in the universal cover.  Edges are undirected; traversing one backwards
negates its shift.  Connectivity of the infinite network is read off the
quotient graph together with the lattice generated by cycle shifts: a
component is unbounded exactly when that lattice has rank >= 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class NoUnboundedComponent(RuntimeError):
    """The graph has no component reaching infinitely far."""


@dataclass
class Edge:
    tail: int
    head: int
    shift: tuple
    length: float
    polyline: np.ndarray  # (k, m), runs from vertices[tail] to vertices[head] + shift

    def reversed_polyline(self):
        shift = np.asarray(self.shift, dtype=float)
        return self.polyline[::-1] - shift[None, :]


@dataclass
class PeriodicGraph:
    dim: int
    vertices: np.ndarray          # (n, m) positions in [0,1)^m
    edges: list = field(default_factory=list)
    level_value: float | None = None
    is_surface_mesh: bool = False

    def __post_init__(self):
        self.vertices = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        fixed = []
        for e in self.edges:
            if not isinstance(e, Edge):
                tail, head, shift, length, poly = e
                e = Edge(int(tail), int(head), tuple(int(s) for s in shift),
                         float(length), np.asarray(poly, dtype=float))
            else:
                e.shift = tuple(int(s) for s in e.shift)
                e.polyline = np.asarray(e.polyline, dtype=float)
            fixed.append(e)
        self.edges = fixed

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_edges(self):
        return len(self.edges)

    def validate(self, tol=1e-9):
        """Check the structural invariants; raises AssertionError on failure."""
        for e in self.edges:
            a = self.vertices[e.tail]
            b = self.vertices[e.head] + np.asarray(e.shift, dtype=float)
            assert np.linalg.norm(e.polyline[0] - a) <= tol, "polyline start off tail"
            assert np.linalg.norm(e.polyline[-1] - b) <= tol, "polyline end off head+shift"
            chord = float(np.linalg.norm(b - a))
            assert e.length >= chord - tol, "edge shorter than its chord"
            arc = float(np.sum(np.linalg.norm(np.diff(e.polyline, axis=0), axis=1)))
            assert abs(arc - e.length) <= max(tol, 1e-9 * max(arc, 1.0)), "length != polyline arc length"
        return True

    def adjacency(self):
        """vertex -> list of (edge index, forward flag)."""
        adj = [[] for _ in range(self.num_vertices)]
        for i, e in enumerate(self.edges):
            adj[e.tail].append((i, True))
            adj[e.head].append((i, False))
        return adj

    def total_length(self):
        return float(sum(e.length for e in self.edges))

    def translated(self, offset):
        """Same network with all vertices moved by ``offset`` (mod 1)."""
        offset = np.asarray(offset, dtype=float)
        new_pos = self.vertices + offset[None, :]
        base = np.floor(new_pos).astype(int)
        new_pos = new_pos - base
        edges = []
        for e in self.edges:
            shift = np.asarray(e.shift, dtype=int) + base[e.tail] - base[e.head]
            poly = e.polyline + offset[None, :] - base[e.tail][None, :]
            edges.append(Edge(e.tail, e.head, tuple(shift), e.length, poly))
        return PeriodicGraph(self.dim, new_pos, edges, self.level_value, self.is_surface_mesh)

    def relabeled(self, perm):
        """Same network with vertex i renamed perm[i]."""
        perm = list(perm)
        inv = [0] * len(perm)
        for i, p in enumerate(perm):
            inv[p] = i
        verts = self.vertices[inv]
        edges = [Edge(perm[e.tail], perm[e.head], e.shift, e.length, e.polyline)
                 for e in self.edges]
        return PeriodicGraph(self.dim, verts, edges, self.level_value, self.is_surface_mesh)

    # -- serialisation ------------------------------------------------------

    def to_json_dict(self):
        return {
            "dim": self.dim,
            "level_value": self.level_value,
            "is_surface_mesh": self.is_surface_mesh,
            "vertices": [list(map(float, v)) for v in self.vertices],
            "edges": [
                {
                    "tail": e.tail,
                    "head": e.head,
                    "shift": list(e.shift),
                    "length": e.length,
                    "polyline": [list(map(float, p)) for p in e.polyline],
                }
                for e in self.edges
            ],
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_json_dict(), sort_keys=True, **kwargs)

    @classmethod
    def from_json_dict(cls, data):
        edges = [
            Edge(int(e["tail"]), int(e["head"]), tuple(int(s) for s in e["shift"]),
                 float(e["length"]), np.asarray(e["polyline"], dtype=float))
            for e in data["edges"]
        ]
        return cls(int(data["dim"]), np.asarray(data["vertices"], dtype=float),
                   edges, data.get("level_value"), bool(data.get("is_surface_mesh", False)))

    @classmethod
    def from_json(cls, text):
        return cls.from_json_dict(json.loads(text))


# ----------------------------------------------------------------------------
# component classification


def _integer_lattice_basis(rows):
    """Rank and a generating set of the integer lattice spanned by ``rows``.

    Plain integer Gaussian elimination with gcd pivoting; inputs are small
    shift vectors so exact python ints are fine.
    """
    work = [list(map(int, r)) for r in rows if any(int(v) for v in r)]
    if not work:
        return 0, []
    m = len(work[0])
    basis = []
    col = 0
    while work and col < m:
        live = [r for r in work if r[col] != 0]
        if not live:
            col += 1
            continue
        while True:
            live.sort(key=lambda r: abs(r[col]))
            pivot = live[0]
            done = True
            for r in live[1:]:
                q = r[col] // pivot[col]
                if q != 0:
                    for k in range(m):
                        r[k] -= q * pivot[k]
                    done = False
            live = [r for r in live if r[col] != 0]
            if done or len(live) <= 1:
                break
        pivot = live[0]
        basis.append(list(pivot))
        work = [r for r in work if r is not pivot and any(r)]
        for r in work:
            if r[col] != 0:
                q = r[col] // pivot[col]
                for k in range(m):
                    r[k] -= q * pivot[k]
        work = [r for r in work if any(r)]
        col += 1
    return len(basis), basis


@dataclass
class ComponentInfo:
    vertex_ids: list
    translation_rank: int
    generators: list  # integer shift vectors spanning the cycle lattice

    @property
    def unbounded(self):
        return self.translation_rank >= 1


@dataclass
class ComponentReport:
    components: list
    num_unbounded: int
    satisfies_non_degenerate: bool
    length_constant_estimate: float  # +inf when nothing is unbounded, nan when not estimated

    def unbounded_components(self):
        return [c for c in self.components if c.unbounded]


def classify_components(g: PeriodicGraph, estimate_length_pairs=0, rng=None):
    """Connected components of the quotient graph with their shift lattices.

    For each component a spanning tree assigns every vertex an integer
    potential; each non-tree edge then contributes the net shift around its
    fundamental cycle.  The rank of the lattice those cycle shifts generate
    is the number of independent directions in which the component repeats,
    so rank >= 1 means unbounded.
    """
    n = g.num_vertices
    adj = g.adjacency()
    seen = [False] * n
    components = []
    for root in range(n):
        if seen[root]:
            continue
        seen[root] = True
        potential = {root: np.zeros(g.dim, dtype=int)}
        order = [root]
        stack = [root]
        cycles = []
        while stack:
            u = stack.pop()
            for ei, forward in adj[u]:
                e = g.edges[ei]
                v = e.head if forward else e.tail
                s = np.asarray(e.shift, dtype=int)
                if not forward:
                    s = -s
                if v not in potential:
                    potential[v] = potential[u] + s
                    seen[v] = True
                    order.append(v)
                    stack.append(v)
                else:
                    cyc = potential[u] + s - potential[v]
                    if cyc.any():
                        cycles.append(tuple(cyc))
        rank, basis = _integer_lattice_basis(sorted(set(cycles)))
        components.append(ComponentInfo(sorted(order), rank, basis))

    num_unbounded = sum(1 for c in components if c.unbounded)
    length_estimate = math.inf if num_unbounded == 0 else math.nan
    if num_unbounded > 0 and estimate_length_pairs > 0:
        length_estimate = estimate_length_constant(g, estimate_length_pairs, rng=rng)
    return ComponentReport(
        components=components,
        num_unbounded=num_unbounded,
        satisfies_non_degenerate=(num_unbounded == 1),
        length_constant_estimate=length_estimate,
    )


def estimate_length_constant(g: PeriodicGraph, num_pairs, rng=None, report=None):
    """Monte-Carlo lower estimate of the detour constant of an unbounded component.

    Samples vertex pairs (x, y + shift) at Euclidean distance >= 1 inside the
    same unbounded component and returns the largest observed ratio of graph
    distance to straight-line distance.
    """
    from .geodesic import graph_distance  # local import keeps module layering simple

    rng = np.random.default_rng(rng)
    if report is None:
        report = classify_components(g)
    unbounded = report.unbounded_components()
    if not unbounded:
        raise NoUnboundedComponent("length constant needs an unbounded component")
    comp = max(unbounded, key=lambda c: len(c.vertex_ids))
    verts = comp.vertex_ids
    gens = [np.asarray(v, dtype=int) for v in comp.generators]
    worst = 1.0
    for _ in range(int(num_pairs)):
        u = verts[rng.integers(len(verts))]
        v = verts[rng.integers(len(verts))]
        shift = np.zeros(g.dim, dtype=int)
        for gen in gens:
            shift = shift + int(rng.integers(-3, 4)) * gen
        delta = g.vertices[v] + shift - g.vertices[u]
        dist = float(np.linalg.norm(delta))
        if dist < 1.0:
            continue
        d = graph_distance(g, u, v, shift)
        if math.isfinite(d):
            worst = max(worst, d / dist)
    return worst


# ----------------------------------------------------------------------------
# simplification


def simplify(g: PeriodicGraph, max_edge_length=0.4):
    """Contract chains of degree-2 vertices into single edges.

    Geodesic computations only need junction vertices, so chains between
    junctions are merged (polylines and lengths preserved verbatim), but a
    chain is cut whenever it exceeds ``max_edge_length``: endpoint balls
    must keep enough admissible vertices along every strand.  Components
    that are pure cycles keep at least one anchor so their cycle shift
    (and hence the translation rank) survives.  Surface meshes are
    returned untouched.
    """
    if g.is_surface_mesh or g.num_edges == 0:
        return g
    adj = g.adjacency()
    degree = [len(a) for a in adj]
    anchor = [d != 2 for d in degree]

    # pure cycles have no natural anchor: pin the smallest vertex id of each
    comp_seen = [False] * g.num_vertices
    for root in range(g.num_vertices):
        if comp_seen[root] or degree[root] == 0:
            continue
        stack, comp = [root], [root]
        comp_seen[root] = True
        has_anchor = anchor[root]
        while stack:
            u = stack.pop()
            for ei, fwd in adj[u]:
                e = g.edges[ei]
                v = e.head if fwd else e.tail
                if not comp_seen[v]:
                    comp_seen[v] = True
                    comp.append(v)
                    stack.append(v)
            has_anchor = has_anchor or anchor[u]
        if not has_anchor:
            anchor[min(comp)] = True

    # mark extra anchors so no contracted edge exceeds max_edge_length
    used = [False] * g.num_edges
    for start in range(g.num_vertices):
        if not anchor[start]:
            continue
        for ei0, fwd0 in adj[start]:
            if used[ei0]:
                continue
            ei, fwd = ei0, fwd0
            running = 0.0
            while True:
                e = g.edges[ei]
                used[ei] = True
                running += e.length
                v = e.head if fwd else e.tail
                if anchor[v]:
                    break
                if running >= max_edge_length:
                    anchor[v] = True
                    running = 0.0
                nxt = [(j, f) for j, f in adj[v] if j != ei]
                if len(nxt) != 1:
                    anchor[v] = True
                    break
                ei, fwd = nxt[0]

    keep = [i for i in range(g.num_vertices) if anchor[i] or degree[i] == 0]
    new_id = {v: i for i, v in enumerate(keep)}
    used = [False] * g.num_edges
    new_edges = []

    def walk(start, ei, fwd):
        """Follow a chain from anchor ``start`` through edge ``ei``."""
        parts = []
        total = 0.0
        shift = np.zeros(g.dim, dtype=int)
        while True:
            e = g.edges[ei]
            used[ei] = True
            poly = e.polyline if fwd else e.reversed_polyline()
            parts.append(poly + shift[None, :].astype(float))
            total += e.length
            v = e.head if fwd else e.tail
            s = np.asarray(e.shift, dtype=int) if fwd else -np.asarray(e.shift, dtype=int)
            shift = shift + s
            if anchor[v]:
                return v, shift, total, parts
            nxt = [(j, f) for j, f in adj[v] if j != ei]
            if len(nxt) != 1:  # parallel chain meeting itself; stop here
                return v, shift, total, parts
            ei, fwd = nxt[0]

    for start in range(g.num_vertices):
        if not anchor[start]:
            continue
        for ei, fwd in adj[start]:
            if used[ei]:
                continue
            end, shift, total, parts = walk(start, ei, fwd)
            pts = [parts[0][0]]
            for seg in parts:
                for p in seg[1:]:
                    pts.append(p)
            poly = np.asarray(pts)
            new_edges.append(Edge(new_id[start], new_id[end], tuple(int(s) for s in shift),
                                  total, poly))
    out = PeriodicGraph(g.dim, g.vertices[keep], new_edges, g.level_value, g.is_surface_mesh)
    return out
