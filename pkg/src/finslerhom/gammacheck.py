"""Numerical witnesses of the homogenization limit.

The penalized functional couples a Dirichlet term with a squared normal
velocity through the oscillating constraint:

    F(u) = int |u'|^2 + (delta/eps)^2 |grad phi(u/eps) . u'|^2 dt

on curves u: [0,1] -> R^m.  Descent on the discretised functional gives
local upper information; explicit multi-scale recovery curves built from
level-set geodesics give energies trending to the homogenized density.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from . import geodesic, levelset, metric as _metric
from .graphs import simplify


class DomainViolation(ValueError):
    """Recovery asked for a direction outside the domain of the metric."""


@dataclass
class DiscreteCurve:
    """Time-uniform polyline u_0 ... u_K on [0,1] with energy bookkeeping."""
    nodes: np.ndarray           # (K+1, m)
    epsilon: float
    delta: float

    def __post_init__(self):
        self.nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))

    @property
    def K(self):
        return self.nodes.shape[0] - 1

    @property
    def times(self):
        return np.arange(self.K + 1) / self.K


def dirichlet_energy(curve: DiscreteCurve):
    d = np.diff(curve.nodes, axis=0)
    return float(curve.K * np.sum(d * d))


def penalty_energy(phi, curve: DiscreteCurve):
    """(delta/eps)^2 * K * sum (grad phi(mid/eps) . delta_u)^2, midpoint rule."""
    eps, delta = curve.epsilon, curve.delta
    d = np.diff(curve.nodes, axis=0)
    mids = 0.5 * (curve.nodes[:-1] + curve.nodes[1:])
    g = phi.gradient(mids / eps)
    dots = np.sum(g * d, axis=-1)
    return float((delta / eps) ** 2 * curve.K * np.sum(dots * dots))


def energy_F_eps(phi, eps, delta, curve: DiscreteCurve):
    if eps <= 0 or delta <= 0:
        raise ValueError("eps and delta must be positive")
    if curve.K < 2:
        raise ValueError("need at least two segments")
    curve = DiscreteCurve(curve.nodes, eps, delta)
    return dirichlet_energy(curve) + penalty_energy(phi, curve)


def _energy_and_gradient(phi, eps, delta, nodes):
    """Total energy and its gradient w.r.t. every node.

    The only non-elementary term is the derivative of grad phi along the
    segment, obtained from a centered difference of the gradient field in
    the segment direction (exact for the quadratic part, second order
    otherwise).
    """
    K = nodes.shape[0] - 1
    beta = (delta / eps) ** 2
    d = np.diff(nodes, axis=0)
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    g = phi.gradient(mids / eps)
    dots = np.sum(g * d, axis=-1)
    energy = K * float(np.sum(d * d)) + beta * K * float(np.sum(dots * dots))

    grad = np.zeros_like(nodes)
    # dirichlet part
    grad[:-1] += -2.0 * K * d
    grad[1:] += 2.0 * K * d
    # penalty part: d(dots_j)/du_i = -+ g_j + (H_j d_j) / 2
    seg_norm = np.linalg.norm(d, axis=-1)
    tau = 1e-6 * eps / np.maximum(seg_norm, 1e-12)
    probe = tau[:, None] * d
    g_plus = phi.gradient((mids + probe) / eps)
    g_minus = phi.gradient((mids - probe) / eps)
    hd = (g_plus - g_minus) / (2.0 * tau[:, None])   # = H(mid/eps) d / eps
    coeff = 2.0 * beta * K * dots
    grad[:-1] += coeff[:, None] * (-g + 0.5 * hd)
    grad[1:] += coeff[:, None] * (g + 0.5 * hd)
    return energy, grad


@dataclass
class DescentResult:
    curve: DiscreteCurve
    energy: float
    converged: bool
    iterations: int
    initial_energy: float


def minimize_F_eps(phi, eps, delta, w, K, restarts=1, max_iter=100_000,
                   grad_tol_scale=1e-6, rng=None):
    """Backtracking gradient descent on the discretised functional.

    Boundary nodes are pinned to 0 and w.  Multi-start: the straight line
    plus random perturbations at the oscillation scale eps.  The returned
    energy is a local upper bound; non-convergence (iteration cap) is
    reported, not raised.
    """
    if K < 50:
        raise ValueError("need K >= 50")
    if restarts < 1:
        raise ValueError("need restarts >= 1")
    rng = np.random.default_rng(rng)
    w = np.asarray(w, dtype=float)
    straight = np.linspace(0.0, 1.0, K + 1)[:, None] * w[None, :]
    tol = grad_tol_scale * K
    best = None
    for trial in range(restarts):
        nodes = straight.copy()
        if trial > 0:
            nodes[1:-1] += eps * rng.normal(size=nodes[1:-1].shape)
        energy, grad = _energy_and_gradient(phi, eps, delta, nodes)
        initial = energy
        step = 1.0 / (4.0 * K * (1.0 + (delta / eps) ** 2 * phi.lipschitz_estimate ** 2 + 1.0))
        converged = False
        it = 0
        while it < max_iter:
            it += 1
            gnorm = float(np.linalg.norm(grad[1:-1]))
            if gnorm <= tol:
                converged = True
                break
            direction = np.zeros_like(nodes)
            direction[1:-1] = -grad[1:-1]
            accepted = False
            for _ in range(50):
                cand = nodes + step * direction
                e_new, g_new = _energy_and_gradient(phi, eps, delta, cand)
                if e_new <= energy - 1e-4 * step * gnorm * gnorm:
                    nodes, energy, grad = cand, e_new, g_new
                    step *= 1.8
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                converged = True  # no descent direction at float resolution
                break
        res = DescentResult(DiscreteCurve(nodes, eps, delta), energy, converged, it, initial)
        if best is None or res.energy < best.energy:
            best = res
    return best


# ----------------------------------------------------------------------------
# recovery sequences


def _level_graph_for(phi, z, resolution):
    if phi.kind == "zero":
        return None
    if phi.exact_network is not None:
        return phi.exact_network
    return simplify(levelset.extract_level_graph(phi, z, resolution))


def build_recovery_sequence(phi, hom_metric, w, eps, delta, resolution=128,
                            nodes_per_eps=10.0, node_cap=50_000, level_graphs=None):
    """Explicit multi-scale curve whose energy witnesses the upper bound.

    The direction w is decomposed over ball vertices; each piece follows a
    level-set geodesic over a horizon T = delta^(1/3)/eps, and pieces are
    joined by short junction geodesics on the level network (straight
    segments when the levels differ).  One period is traversed at constant
    speed, extended periodically, rescaled by eps, and sampled with at
    least ``nodes_per_eps`` nodes per oscillation period.
    """
    w = np.asarray(w, dtype=float)
    if eps <= 0 or delta <= 0:
        raise ValueError("eps and delta must be positive")
    K_nodes = int(min(node_cap, max(200, math.ceil(nodes_per_eps / eps))))

    if phi.kind == "zero" or not np.any(w):
        nodes = np.linspace(0.0, 1.0, K_nodes + 1)[:, None] * w[None, :]
        return DiscreteCurve(nodes, eps, delta)

    psi_w = hom_metric.query(w)
    if not math.isfinite(psi_w):
        raise DomainViolation(f"direction {w} is outside the metric domain")

    T = delta ** (1.0 / 3.0) / eps
    pieces = _metric.caratheodory_pieces(hom_metric, w)
    if level_graphs is None:
        level_graphs = {}
    for _, _, z in pieces:
        if z not in level_graphs:
            level_graphs[z] = _level_graph_for(phi, z, resolution)

    r = math.sqrt(phi.dim)
    polylines = []
    levels = []
    for lam, w_i, z in pieces:
        g = level_graphs[z]
        L, path = geodesic.min_path_length(
            g, (np.zeros(phi.dim), r), (lam * T * np.asarray(w_i), r), return_path=True)
        if not math.isfinite(L):
            raise DomainViolation("piece geodesic unreachable; metric and level disagree")
        polylines.append(path.points)
        levels.append(z)

    def junction_points(level_a, level_b, a, b):
        if np.linalg.norm(b - a) <= 1e-9:
            return None
        if level_a == level_b:
            _, jp = geodesic.min_path_length(
                level_graphs[level_a], (a, 1e-6), (b, 1e-6), return_path=True)
            return jp.points
        return np.stack([a, b])

    # chain pieces with junctions, shifting each piece by an integer offset
    chained = [polylines[0]]
    cur_end = polylines[0][-1]
    for i in range(1, len(pieces)):
        off = np.rint(cur_end - polylines[i][0])
        jp = junction_points(levels[i - 1], levels[i], cur_end, polylines[i][0] + off)
        if jp is not None:
            chained.append(jp)
        chained.append(polylines[i] + off[None, :])
        cur_end = polylines[i][-1] + off
    drift = np.rint(cur_end - polylines[0][0])
    jp = junction_points(levels[-1], levels[0], cur_end, polylines[0][0] + drift)
    if jp is not None:
        chained.append(jp)

    points = [chained[0][0]]
    for seg in chained:
        for p in seg:
            if np.linalg.norm(p - points[-1]) > 1e-12:
                points.append(p)
    points = np.asarray(points)

    seg_len = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    L_period = float(cum[-1])

    def eval_cover(s):
        """Position along the periodically extended curve at time s (speed L/T)."""
        period, local = np.divmod(s, T)
        arc = local / T * L_period
        out = np.empty((len(s), phi.dim))
        for k in range(phi.dim):
            out[:, k] = np.interp(arc, cum, points[:, k])
        return out + period[:, None] * drift[None, :]

    t = np.arange(K_nodes + 1) / K_nodes
    nodes = eps * eval_cover(t / eps)
    nodes = nodes - nodes[0][None, :]
    return DiscreteCurve(nodes, eps, delta)


# ----------------------------------------------------------------------------
# trend tables


@dataclass
class TrendRow:
    eps: float
    delta: float
    recovery_energy: float
    descent_energy: float
    psi_hom: float


@dataclass
class TrendTable:
    rows: list
    nonincreasing: bool

    def to_csv(self):
        buf = io.StringIO()
        buf.write("eps,delta,recovery_energy,descent_energy,psi_hom\n")
        for r in self.rows:
            buf.write(f"{r.eps!r},{r.delta!r},{r.recovery_energy!r},"
                      f"{r.descent_energy!r},{r.psi_hom!r}\n")
        return buf.getvalue()


def gamma_trend(phi, hom_metric, w, eps_list, alpha=2.0 / 3.0, K_descent=400,
                restarts=2, max_iter=400, resolution=128, rng=None,
                nodes_per_eps=10.0, noise_tol=0.02):
    """Recovery and descent energies across a decreasing epsilon schedule.

    delta follows the rule delta = eps^alpha; alpha < 1 keeps the
    amplitude large relative to the period so the constraint stays active.
    The recovery column is checked to be nonincreasing up to the given
    noise tolerance.
    """
    eps_list = list(eps_list)
    if len(eps_list) < 3 or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("need at least three decreasing eps values")
    w = np.asarray(w, dtype=float)
    psi = hom_metric.query(w)
    rng = np.random.default_rng(rng)
    graphs = {}
    rows = []
    for eps in eps_list:
        delta = eps ** alpha
        rec = build_recovery_sequence(phi, hom_metric, w, eps, delta,
                                      resolution=resolution, level_graphs=graphs,
                                      nodes_per_eps=nodes_per_eps)
        rec_energy = energy_F_eps(phi, eps, delta, rec)
        des = minimize_F_eps(phi, eps, delta, w, K=K_descent, restarts=restarts,
                             max_iter=max_iter, rng=rng)
        rows.append(TrendRow(eps, delta, rec_energy, des.energy, psi))
    ok = all(b.recovery_energy <= a.recovery_energy * (1.0 + noise_tol)
             for a, b in zip(rows, rows[1:]))
    return TrendTable(rows, ok)
