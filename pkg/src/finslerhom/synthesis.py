"""Constructing periodic constraints that realise prescribed Finsler metrics.

Two families cover all symmetric 2-homogeneous convex targets bounded below
by the Euclidean metric:

* metrics finite on a single line only: shear the vertical sine constraint
  by a periodic profile g whose graph has per-period arc length sqrt(k);
* metrics finite everywhere: approximate the unit ball by a symmetric
  polygon with rational vertex directions, lay the corresponding periodic
  network of lines, and lengthen every segment by a wiggle so that running
  along direction nu_i costs exactly psi(nu_i) per unit.

The wiggle keeps endpoints and replaces a straight segment of length L by a
zigzag of total length L * sqrt(psi); its amplitude is capped by a third of
the segment's clearance so no new crossings appear.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.integrate import quad
from scipy.spatial import ConvexHull

from . import constraint as _constraint
from .graphs import Edge, PeriodicGraph


class InfeasibleK(ValueError):
    """Degenerate targets need k >= 1 (arc length never beats the chord)."""


class TolTooTight(ValueError):
    """Rationalisation would need denominators beyond the feasible cell size."""


class ClearanceViolation(RuntimeError):
    """A required wiggle cannot fit between neighbouring network branches."""


_DENOMINATOR_CAP = 10_000


# ----------------------------------------------------------------------------
# degenerate family


def build_degenerate(k, profile="sawtooth"):
    """Sheared-sine constraint whose vertical energy density is k.

    The level curves are x = g(y) + const; one vertical period has arc
    length integral(sqrt(1 + g'^2)) = sqrt(k), so the stable norm along
    (0,1) is sqrt(k) and every horizontal direction is unreachable.
    """
    k = float(k)
    if k < 1.0:
        raise InfeasibleK(f"need k >= 1, got {k}")

    if profile == "sawtooth":
        s = math.sqrt(k - 1.0)

        def g(y):
            yy = y - np.floor(y)
            return s * np.where(yy < 0.5, yy, 1.0 - yy)

        def gp(y):
            yy = y - np.floor(y)
            return np.where(yy < 0.5, s, -s)

        max_slope = s
    elif profile == "sine":
        target = math.sqrt(k)

        def arclen(A):
            val, _ = quad(lambda u: math.sqrt(1.0 + (2 * math.pi * A * math.cos(2 * math.pi * u)) ** 2),
                          0.0, 1.0, limit=200)
            return val

        lo, hi = 0.0, 1.0
        while arclen(hi) < target:
            hi *= 2.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if arclen(mid) < target:
                lo = mid
            else:
                hi = mid
        A = 0.5 * (lo + hi)

        def g(y):
            return A * np.sin(2 * np.pi * y)

        def gp(y):
            return 2 * np.pi * A * np.cos(2 * np.pi * y)

        max_slope = 2 * math.pi * A
    else:
        raise ValueError(f"unknown profile {profile!r}")

    return _constraint.sheared_sine(g, gp, params={"k": k, "profile": profile,
                                                   "max_slope": max_slope})


# ----------------------------------------------------------------------------
# ball specifications


def _lcm_fraction(values):
    num = 1
    den = 0
    for f in values:
        num = num * f.numerator // math.gcd(num, f.numerator)
        den = math.gcd(den, f.denominator) if den else f.denominator
    return Fraction(num, den if den else 1)


@dataclass
class FinslerBallSpec:
    """Symmetric polygon ball with rational vertex certificates.

    Vertex i sits at V_i = z_i / t_i for a primitive integer direction z_i
    and a positive rational t_i, so t_i * V_i = z_i holds exactly.  The
    target density at the unit direction nu_i = z_i/|z_i| is
    psi(nu_i) = 1/|V_i|^2 = t_i^2/|z_i|^2.
    """
    directions: list            # primitive integer 2-vectors z_i
    t_values: list              # Fractions t_i > 0
    tol: float = 0.05
    hausdorff: float | None = None

    def __post_init__(self):
        self.directions = [np.asarray(z, dtype=int) for z in self.directions]
        self.t_values = [Fraction(t) for t in self.t_values]
        if len(self.directions) != len(self.t_values):
            raise ValueError("directions and t values must pair up")
        for z, t in zip(self.directions, self.t_values):
            if t <= 0:
                raise ValueError("t must be positive")
            if t * t < Fraction(int(z @ z)):
                raise ValueError("vertex outside the unit disc (t < |z|)")

    @property
    def n(self):
        return len(self.directions)

    @property
    def vertices(self):
        return np.array([z / float(t) for z, t in zip(self.directions, self.t_values)])

    @property
    def full_vertices(self):
        V = self.vertices
        return np.concatenate([V, -V], axis=0)

    @property
    def unit_directions(self):
        return np.array([z / np.linalg.norm(z) for z in self.directions])

    @property
    def target_values(self):
        return [float(Fraction(t * t, int(z @ z)))
                for z, t in zip(self.directions, self.t_values)]

    @property
    def cell_size(self):
        return _lcm_fraction(self.t_values)

    def gauge_sq(self, w):
        """Squared gauge of conv(+-V_i): the metric this spec prescribes."""
        w = np.asarray(w, dtype=float)
        if not np.any(w):
            return 0.0
        hull = ConvexHull(self.full_vertices)
        normals = hull.equations[:, :-1]
        offsets = -hull.equations[:, -1]
        g = float(np.max(normals @ w / offsets))
        return g * g

    def to_json_dict(self):
        return {
            "directions": [list(map(int, z)) for z in self.directions],
            "t": [f"{t.numerator}/{t.denominator}" for t in self.t_values],
            "tol": self.tol,
            "hausdorff": self.hausdorff,
        }

    @classmethod
    def from_json_dict(cls, data):
        ts = [Fraction(s) for s in data["t"]]
        return cls(data["directions"], ts, tol=float(data.get("tol", 0.05)),
                   hausdorff=data.get("hausdorff"))

    @classmethod
    def from_json(cls, text):
        return cls.from_json_dict(json.loads(text))


def _primitive_direction(theta, max_denominator):
    """Primitive integer vector approximating (cos theta, sin theta)."""
    c, s = math.cos(theta), math.sin(theta)
    if abs(c) < 1e-12:
        return np.array([0, 1])
    if abs(s) < 1e-12:
        return np.array([1, 0])
    frac = Fraction(s / c).limit_denominator(max_denominator)
    p, q = frac.denominator, frac.numerator  # direction (p, q) ~ (1, s/c)
    if c < 0:
        p, q = -p, -q
    g = math.gcd(abs(p), abs(q))
    return np.array([p // g, q // g])


def rationalize_ball(target_psi, N, tol):
    """Inscribe a 2N-vertex symmetric rational polygon in {psi <= 1}.

    ``target_psi`` maps a direction to its density value.  Vertex
    directions are continued-fraction roundings with denominator at most
    1/tol; radii are rounded down (t rounded up) so every vertex stays
    inside the target ball.  The realised polygon's Hausdorff distance to
    the target ball is measured and recorded.
    """
    if N < 2:
        raise ValueError("need at least two vertex directions")
    if tol <= 0:
        raise ValueError("tol must be positive")
    max_den = max(2, int(round(1.0 / tol)))
    t_den = 1
    while t_den < 8.0 / tol:
        t_den *= 2

    directions, ts = [], []
    for j in range(N):
        theta = math.pi * j / N
        z = _primitive_direction(theta, max_den)
        if any(np.array_equal(z, d) or np.array_equal(-z, d) for d in directions):
            continue
        nu = z / np.linalg.norm(z)
        psi = float(target_psi(nu))
        if not math.isfinite(psi) or psi <= 0:
            raise ValueError("target density must be finite and positive on the circle")
        radius = 1.0 / math.sqrt(psi)
        t_min = float(np.linalg.norm(z)) / radius
        t = Fraction(math.ceil(t_min * t_den), t_den)
        if t * t < Fraction(int(z @ z)):
            t = Fraction(math.ceil(math.sqrt(float(z @ z)) * t_den) + 1, t_den)
        if t.denominator > _DENOMINATOR_CAP:
            raise TolTooTight(f"t denominator {t.denominator} exceeds {_DENOMINATOR_CAP}")
        directions.append(z)
        ts.append(t)

    spec = FinslerBallSpec(directions, ts, tol=tol)
    tau = spec.cell_size
    if tau.numerator > _DENOMINATOR_CAP:
        raise TolTooTight(f"cell size lcm {tau} exceeds {_DENOMINATOR_CAP}")

    # measured gap between the polygon and the target ball, sampled densely
    worst = 0.0
    for theta in np.linspace(0, math.pi, 256, endpoint=False):
        nu = np.array([math.cos(theta), math.sin(theta)])
        r_target = 1.0 / math.sqrt(float(target_psi(nu)))
        gsq = spec.gauge_sq(nu)
        r_poly = 1.0 / math.sqrt(gsq) if gsq > 0 else 0.0
        worst = max(worst, abs(r_target - r_poly))
    spec.hausdorff = worst
    return spec


# ----------------------------------------------------------------------------
# network construction


def _family_intersections(spec):
    """Exact rational parameters where the quotient line loops cross.

    Family i is the loop t -> frac(t * z_i), t in [0,1).  Crossings with
    family j solve t z_i - s z_j = k over integer vectors k.
    """
    N = spec.n
    zs = [np.asarray(z, dtype=int) for z in spec.directions]
    params = [set() for _ in range(N)]
    for i in range(N):
        params[i].add(Fraction(0))  # all loops pass through the origin
        for j in range(N):
            if i == j:
                continue
            zi, zj = zs[i], zs[j]
            D = int(zi[0] * (-zj[1]) - zi[1] * (-zj[0]))  # det [zi, -zj]
            if D == 0:
                continue
            span = abs(zi[0]) + abs(zj[0]) + 1
            span_y = abs(zi[1]) + abs(zj[1]) + 1
            for k0 in range(-span, span + 1):
                for k1 in range(-span_y, span_y + 1):
                    t = Fraction(k0 * (-zj[1]) - k1 * (-zj[0]), D)
                    s = Fraction(zi[0] * k1 - zi[1] * k0, D)
                    if 0 <= t < 1 and 0 <= s < 1:
                        params[i].add(t)
    return [sorted(p) for p in params]


def _zigzag(a, b, ratio, teeth, margin=0.25):
    """Polyline from a to b with arc length ratio * |b - a|.

    The detour is a zigzag confined to the middle window of the segment;
    the first and last ``margin`` fractions stay on the original line so
    that wiggles of edges meeting at a sharp angle cannot collide near the
    shared endpoint, however small that angle is.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    L = float(np.linalg.norm(b - a))
    u = (b - a) / L
    n = np.array([-u[1], u[0]])
    Lw = (1.0 - 2.0 * margin) * L
    ratio_w = ((ratio - 1.0) * L + Lw) / Lw   # arc-length ratio inside the window
    amp = (Lw / (2 * teeth)) * math.sqrt(max(ratio_w * ratio_w - 1.0, 0.0))
    w0 = a + margin * L * u
    pts = [a, w0]
    for j in range(1, 2 * teeth):
        p = w0 + (j / (2 * teeth)) * Lw * u
        if j % 2 == 1:
            p = p + ((-1) ** ((j - 1) // 2)) * amp * n
        pts.append(p)
    pts.append(a + (1.0 - margin) * L * u)
    pts.append(b)
    return np.asarray(pts), amp


def _arc_detour(a, b, ratio, samples=33, margin=0.25):
    """Polyline from a to b with a circular-arc detour in the middle window.

    The arc's *chordal* length is solved so the whole polyline has length
    exactly ratio * |b - a|; like the zigzag, the outer ``margin`` fractions
    stay on the original line.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    L = float(np.linalg.norm(b - a))
    if ratio <= 1.0 + 1e-15:
        return np.asarray([a, b]), 0.0
    u = (b - a) / L
    w0 = a + margin * L * u
    w1 = a + (1.0 - margin) * L * u
    Lw = (1.0 - 2.0 * margin) * L
    ratio_w = ((ratio - 1.0) * L + Lw) / Lw
    n_seg = samples - 1

    def chordal(theta):
        return n_seg * math.sin(theta / (2 * n_seg)) / math.sin(theta / 2)

    lo, hi = 1e-9, 2 * math.pi - 1e-9
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chordal(mid) < ratio_w:
            lo = mid
        else:
            hi = mid
    theta = 0.5 * (lo + hi)
    R = Lw / (2 * math.sin(theta / 2))
    nrm = np.array([-u[1], u[0]])
    centre = 0.5 * (w0 + w1) - R * math.cos(theta / 2) * nrm
    phi0 = math.atan2(*(w0 - centre)[::-1])
    phi1 = math.atan2(*(w1 - centre)[::-1])
    while phi1 <= phi0:
        phi1 += 2 * math.pi
    angles = np.linspace(phi0, phi1, samples)
    pts = centre[None, :] + R * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    pts[0], pts[-1] = w0, w1
    sagitta = R * (1 - math.cos(theta / 2))
    out = np.concatenate([[a], pts, [b]], axis=0)
    return out, sagitta


def _segments_distance(p, segs):
    """Distance from point p to a stack of segments (A, B)."""
    A, B = segs
    ab = B - A
    den = np.maximum(np.sum(ab * ab, axis=-1), 1e-30)
    t = np.clip(np.sum((p - A) * ab, axis=-1) / den, 0.0, 1.0)
    proj = A + t[:, None] * ab
    return float(np.min(np.linalg.norm(p - proj, axis=-1)))


def build_network(spec: FinslerBallSpec, wiggle="triangle"):
    """Periodic wiggled-line network whose stable norm realises the spec.

    Lines through the integer lattice in every certificate direction are
    cut at mutual intersections; each straight piece of length L in
    direction nu_i becomes a detour of length L * sqrt(psi(nu_i)).
    """
    params = _family_intersections(spec)
    zs = [np.asarray(z, dtype=int) for z in spec.directions]
    targets = spec.target_values

    # exact vertex registry keyed by rational torus position
    vert_index = {}
    positions = []

    def vertex(frac_pos):
        key = (frac_pos[0], frac_pos[1])
        if key not in vert_index:
            vert_index[key] = len(positions)
            positions.append([float(frac_pos[0]), float(frac_pos[1])])
        return vert_index[key]

    raw_segments = []   # (tail, head, shift, A, B, family)
    for i, ts in enumerate(params):
        z = zs[i]
        pairs = list(zip(ts, ts[1:] + [ts[0] + 1]))
        for ta, tb in pairs:
            pa = (ta * z[0], ta * z[1])
            pb = (tb * z[0], tb * z[1])
            fa = (pa[0] - math.floor(pa[0]), pa[1] - math.floor(pa[1]))
            fb = (pb[0] - math.floor(pb[0]), pb[1] - math.floor(pb[1]))
            va, vb = vertex(fa), vertex(fb)
            A = np.array([float(fa[0]), float(fa[1])])
            B = A + (float(tb - ta)) * z.astype(float)
            shift = np.rint(B - np.array([float(fb[0]), float(fb[1])])).astype(int)
            raw_segments.append((va, vb, tuple(shift), A, B, i))

    # clearance: distance from each segment's interior to the other segments,
    # measured over the 3x3 tiling
    tiles = np.array([(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)], dtype=float)
    all_A = np.array([s[3] for s in raw_segments])
    all_B = np.array([s[4] for s in raw_segments])
    tiled_A = (all_A[None, :, :] + tiles[:, None, :]).reshape(-1, 2)
    tiled_B = (all_B[None, :, :] + tiles[:, None, :]).reshape(-1, 2)

    # initial teeth count per segment from the clearance rule, then escalate
    # any pair of wiggles that still crosses (each doubling halves amplitudes)
    teeth = []
    for idx, (va, vb, shift, A, B, fam) in enumerate(raw_segments):
        ratio = math.sqrt(targets[fam])
        if abs(ratio - 1.0) <= 1e-12:
            teeth.append(0)  # straight
            continue
        keep = np.ones(len(tiled_A), dtype=bool)
        keep[4 * len(raw_segments) + idx] = False  # own central copy
        others = (tiled_A[keep], tiled_B[keep])
        interior = [A + f * (B - A) for f in (0.25, 0.5, 0.75)]
        clearance = min(_segments_distance(p, others) for p in interior)
        cap = clearance / 3.0
        n = 1
        while n <= 64:
            _, amp = _zigzag(A, B, ratio, n)
            if amp <= cap + 1e-12:
                break
            n *= 2
        if n > 64:
            raise ClearanceViolation(
                f"segment {idx}: wiggle amplitude exceeds a third of clearance {clearance:.3g}")
        teeth.append(n)

    def realise():
        edges = []
        for idx, (va, vb, shift, A, B, fam) in enumerate(raw_segments):
            ratio = math.sqrt(targets[fam])
            if teeth[idx] == 0:
                poly = np.array([A, B])
            elif wiggle == "arc" and teeth[idx] == 1:
                poly, _ = _arc_detour(A, B, ratio)
            else:
                poly, _ = _zigzag(A, B, ratio, teeth[idx])
            length = float(np.sum(np.linalg.norm(np.diff(poly, axis=0), axis=1)))
            edges.append(Edge(va, vb, shift, length, poly))
        return PeriodicGraph(2, np.asarray(positions), edges, level_value=0.0)

    for _ in range(8):
        g = realise()
        bad = _crossing_pairs(g)
        if not bad:
            return g
        stuck = True
        for ei in set(i for pair in bad for i in pair):
            if 0 < teeth[ei] <= 64:
                teeth[ei] *= 2
                stuck = False
        if stuck:
            break
    raise ClearanceViolation(f"wiggles still cross after subdividing: pairs {sorted(bad)}")


def _crossing_pairs(g, tol=1e-12):
    """Pairs of edges whose wiggled polylines cross away from shared vertices."""
    owner, A, B = [], [], []
    for ei, e in enumerate(g.edges):
        poly = e.polyline
        owner.extend([ei] * (len(poly) - 1))
        A.extend(poly[:-1])
        B.extend(poly[1:])
    owner = np.asarray(owner)
    A = np.asarray(A)
    B = np.asarray(B)
    r = B - A
    bad = set()
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            off = np.array([di, dj], dtype=float)
            C = A + off
            qp = C[None, :, :] - A[:, None, :]              # (S, S, 2)
            den = r[:, None, 0] * r[None, :, 1] - r[:, None, 1] * r[None, :, 0]
            num_t = qp[:, :, 0] * r[None, :, 1] - qp[:, :, 1] * r[None, :, 0]
            num_u = qp[:, :, 0] * r[:, None, 1] - qp[:, :, 1] * r[:, None, 0]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = num_t / den
                u = num_u / den
            hit = ((np.abs(den) > tol) & (t > tol) & (t < 1 - tol)
                   & (u > tol) & (u < 1 - tol))
            if (di, dj) == (0, 0):
                hit &= owner[:, None] != owner[None, :]
            for i, j in zip(*np.nonzero(hit)):
                bad.add((min(owner[i], owner[j]), max(owner[i], owner[j])))
    return bad


# ----------------------------------------------------------------------------
# verification


@dataclass
class SynthesisReport:
    max_error: float
    vertex_upper_ok: bool      # computed <= target + slack at vertex directions
    global_lower_ok: bool      # computed >= target - slack everywhere
    per_direction: list        # (direction, computed, target)


def verify_synthesis(graph, spec: FinslerBallSpec, directions=64,
                     T_schedule=None, slack=0.05, margin=None, threads=1):
    """Compare the metric carried by the built network with the spec polygon.

    Returns the maximal |computed - target| over unit directions (the
    prescribed density is evaluated as the squared polygon gauge), plus
    flags for the two one-sided bounds that make the construction work:
    test curves along the wiggled lines give the upper bound at vertex
    directions, convexity gives the lower bound everywhere.
    """
    from . import metric as _metric
    if T_schedule is None:
        T_schedule = (10.0, 20.0, 40.0, 80.0)
    hom = _metric.assemble_metric_from_graph(graph, directions=directions,
                                             T_schedule=T_schedule, margin=margin,
                                             threads=threads)
    rows = []
    worst = 0.0
    for w in hom.directions:
        computed = hom.query(w)
        target = spec.gauge_sq(w)
        rows.append((np.asarray(w), computed, target))
        if math.isfinite(computed):
            worst = max(worst, abs(computed - target))
        else:
            worst = math.inf
    vertex_ok = True
    for nu, psi in zip(spec.unit_directions, spec.target_values):
        computed = hom.query(nu)
        vertex_ok = vertex_ok and computed <= psi * (1 + slack) + 1e-9
    lower_ok = all(c >= t * (1 - slack) - 1e-9 for _, c, t in rows if math.isfinite(c))
    return SynthesisReport(worst, vertex_ok, lower_ok, rows)


def random_ball_spec(rng, n_directions=3, radius_range=(0.55, 0.95), tol=0.05):
    """Seeded random symmetric rational ball spec inside the unit disc."""
    rng = np.random.default_rng(rng)
    pool = []
    for p in range(-3, 4):
        for q in range(-3, 4):
            if (p, q) == (0, 0) or math.gcd(abs(p), abs(q)) != 1:
                continue
            if (p, q) < (-p, -q):
                continue
            pool.append(np.array([p, q]))
    for _ in range(200):
        idx = rng.choice(len(pool), size=n_directions, replace=False)
        zs = [pool[i] for i in idx]
        ts = []
        for z in zs:
            r = float(rng.uniform(*radius_range))
            t = Fraction(math.ceil(float(np.linalg.norm(z)) / r * 64), 64)
            ts.append(t)
        spec = FinslerBallSpec(zs, ts, tol=tol)
        hull = ConvexHull(spec.full_vertices)
        if len(hull.vertices) == 2 * n_directions:
            return spec
    raise RuntimeError("could not sample a spec with all vertices extreme")
