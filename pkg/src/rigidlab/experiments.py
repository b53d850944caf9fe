"""Desk-scale studies: convergence of metric sequences, grid geodesics and rigidity runs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import kernels
from .errors import ConfigError, DimensionError, OutOfChartError
from .functionals import det_field, distortion_field, elastic_energy, quadrature_for, _source_data
from .geometry import ChartGrid, MetricField, euclidean, sphere_conformal, striped
from .maps import DiscreteMap
from .optimizer import OptimizerConfig, minimize
from .parallel import map_chunks


# ---------------------------------------------------------------------------
# convergence of metric sequences


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x`` (NaN if any ``y`` is zero)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.any(y <= 0):
        return float("nan")
    slope, _ = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope)


@dataclass
class ConvergenceReport:
    """Norms of the distortion and Jacobian defects along a metric sequence.

    ``rows`` holds one tuple per sequence index:
    ``(n, forward, inverse, det_forward, det_inverse)``.
    """

    p: float
    q: float
    rows: list
    slopes: dict = field(default_factory=dict)

    COLUMNS = ("n", "forward", "inverse", "det_forward", "det_inverse")

    def column(self, name) -> np.ndarray:
        k = self.COLUMNS.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)

    def row_for(self, n) -> dict:
        for r in self.rows:
            if r[0] == n:
                return dict(zip(self.COLUMNS, r))
        raise KeyError(n)

    def to_dict(self) -> dict:
        return {"p": self.p, "q": self.q,
                "rows": [dict(zip(self.COLUMNS, r)) for r in self.rows],
                "slopes": self.slopes}


def _lq_det_defect(f: DiscreteMap, g: MetricField, h: MetricField, q, quad_order):
    det, quad = det_field(f, g, h, quad_order=quad_order)
    _, _, vol = _source_data(g, quad)
    return float(np.dot(vol, np.abs(det - 1.0) ** q)) ** (1.0 / q)


def _lp_distortion(f: DiscreteMap, g: MetricField, h: MetricField, p, quad_order):
    return elastic_energy(f, g, h, p, quad_order=quad_order).energy ** (1.0 / p)


def _same_box(a: ChartGrid, b: ChartGrid) -> bool:
    return a.lower == b.lower and a.upper == b.upper


def pq_convergence_report(metric_sequence: Sequence[MetricField], maps: Sequence[DiscreteMap],
                          inverse_maps: Sequence[DiscreteMap], p=2.0, q=2.0, *,
                          base: Optional[MetricField] = None, ns=None,
                          quad_order=3) -> ConvergenceReport:
    """The four norms of a candidate sequence ``F_n : (M, g) -> (M, g_n)``.

    For each ``n``: ``||dist(dF_n, SO)||_{L^p(g)}``,
    ``||dist(dF_n^-1, SO)||_{L^p(g_n)}``, ``||Det dF_n - 1||_{L^q(g)}`` and
    ``||Det dF_n^-1 - 1||_{L^q(g_n)}``.  The inverse maps are data supplied
    by the caller, not computed.  ``ns`` defaults to the ``n`` recorded in
    each metric's spec; slopes are fitted on ``log n``.
    """
    if not (len(metric_sequence) == len(maps) == len(inverse_maps)):
        raise ConfigError("metric, map and inverse-map sequences must have equal length")
    if ns is None:
        try:
            ns = [m.spec["n"] for m in metric_sequence]
        except KeyError:
            raise ConfigError("pass ns= for metrics without an 'n' parameter") from None
    if len(ns) != len(maps):
        raise ConfigError("ns must match the sequence length")
    rows = []
    for n, gn, F, Finv in zip(ns, metric_sequence, maps, inverse_maps):
        g = base if base is not None else euclidean(F.source)
        if not (_same_box(F.source, g.chart) and _same_box(Finv.source, gn.chart)):
            raise DimensionError("maps must live on the base chart and on each metric's chart")
        fwd = _lp_distortion(F, g, gn, p, quad_order)
        inv = _lp_distortion(Finv, gn, g, p, quad_order)
        dfw = _lq_det_defect(F, g, gn, q, quad_order)
        dinv = _lq_det_defect(Finv, gn, g, q, quad_order)
        rows.append((n, fwd, inv, dfw, dinv))
    report = ConvergenceReport(float(p), float(q), rows)
    nvals = [r[0] for r in rows]
    for name in ConvergenceReport.COLUMNS[1:]:
        report.slopes[name] = loglog_slope(nvals, report.column(name))
    return report


def striped_sequence(ns, eps=0.1, sigma="default", nodes=9):
    """Striped metrics on the unit square with identity maps and inverses.

    ``sigma="default"`` uses the builtin default ``(1/n^2)/4``; a number
    fixes it for all ``n``.  The identity is affine, so a coarse grid
    represents it exactly; the stripes are resolved by the quadrature.
    """
    chart = ChartGrid.box(nodes)
    metrics, fwd, inv = [], [], []
    for n in ns:
        s = None if sigma == "default" else float(sigma)
        gn = striped(chart, n, eps, s)
        metrics.append(gn)
        fwd.append(DiscreteMap.identity(chart))
        inv.append(DiscreteMap.identity(gn.chart))
    return metrics, fwd, inv


# ---------------------------------------------------------------------------
# graph geodesics


def _node_index(chart: ChartGrid, nodes, point):
    pt = np.asarray(point, dtype=float)
    if pt.shape != (2,) or not chart.contains(pt[None, :])[0]:
        raise OutOfChartError(f"endpoint {point} outside the chart")
    h = chart.extent / (np.array(nodes) - 1)
    ij = np.rint((pt - np.array(chart.lower)) / h).astype(int)
    ij = np.clip(ij, 0, np.array(nodes) - 1)
    return int(ij[0] * nodes[1] + ij[1])


def _edge_weights(field: MetricField, nodes, offset, step):
    """Weights of all edges ``(i, j) -> (i, j) + step`` starting at rows/cols ``offset``."""
    chart = field.chart
    h = chart.extent / (np.array(nodes) - 1)
    di, dj = step
    ni = nodes[0] - abs(di)
    nj = nodes[1] - abs(dj)
    vec = np.array([di, dj], dtype=float) * h
    length = float(np.hypot(*vec))
    u = vec / length
    lo = np.array(chart.lower)

    def work(sl):
        k = np.arange(sl.start, sl.stop)
        i, j = k // nj + offset[0], k % nj + offset[1]
        mid = lo + (np.stack([i, j], axis=-1) + 0.5 * np.array([di, dj])) * h
        G = field.metric(mid, check=False)
        return length * np.sqrt(np.einsum("a,pab,b->p", u, G, u))

    out = np.concatenate(map_chunks(work, ni * nj))
    return out.reshape(ni, nj)


def graph_geodesic(field: MetricField, a, b, resolution=256) -> float:
    """Shortest-path distance between two chart points on an 8-neighbour grid.

    The grid has ``resolution`` cells per axis over the field's chart; each
    edge costs its Euclidean length times ``sqrt(u^t g u)`` at its midpoint,
    ``u`` the unit edge direction.  Endpoints snap to the nearest node.
    """
    if field.dim != 2:
        raise DimensionError("graph geodesics are implemented in two dimensions")
    resolution = int(resolution)
    if resolution < 16:
        raise ConfigError("resolution must be at least 16")
    nodes = (resolution + 1, resolution + 1)
    src = _node_index(field.chart, nodes, a)
    dst = _node_index(field.chart, nodes, b)
    if src == dst:
        return 0.0
    wE = _edge_weights(field, nodes, (0, 0), (1, 0))
    wN = _edge_weights(field, nodes, (0, 0), (0, 1))
    wNE = _edge_weights(field, nodes, (0, 0), (1, 1))
    # (i+1, j) -- (i, j+1): midpoint as for the NE edge of the same cell
    wNW = _edge_weights(field, nodes, (1, 0), (-1, 1))
    return float(kernels.grid_dijkstra(wE, wN, wNE, wNW, src, dst))


# ---------------------------------------------------------------------------
# rigidity experiments


def rigid_fit(points, values):
    """Best orientation-preserving rigid motion ``x -> R x + c`` in the least-squares sense.

    Returns ``(R, c, sup_residual)``.
    """
    X = np.asarray(points, dtype=float).reshape(-1, points.shape[-1])
    Y = np.asarray(values, dtype=float).reshape(X.shape)
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    U, _, Vt = np.linalg.svd((Y - my).T @ (X - mx))
    D = np.eye(X.shape[1])
    D[-1, -1] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ D @ Vt
    c = my - R @ mx
    res = np.max(np.abs(X @ R.T + c - Y))
    return R, c, float(res)


def _profile(delta, b):
    """``dist^2`` of ``diag(b, delta / b)`` from SO(2) (signed smaller singular value)."""
    a = np.abs(delta) / b
    sgn = np.where(delta < 0, -1.0, 1.0)
    small, large = np.minimum(a, b), np.maximum(a, b)
    return (large - 1.0) ** 2 + (sgn * small - 1.0) ** 2


def reflection_energy_bound(area=1.0, mean_det=-1.0, span=200.0, samples=4001,
                            max_slope=1.8) -> float:
    """Lower bound for the p=2 energy of flat 2-D maps with prescribed mean Jacobian.

    ``m(delta) = min {dist^2(A, SO(2)) : det A = delta}`` bounds the density
    from below; by Jensen the energy is at least ``area * m**(mean_det)``
    where ``m**`` is the convex envelope of ``m``.  The envelope is evaluated
    numerically over ``|delta| <= span`` as a supremum of supporting lines.
    Beyond the span ``m`` grows with slope above ``2 - 2/sqrt(span)``; line
    slopes are capped at ``max_slope`` below that, so truncating the range
    does not inflate the bound.
    """
    deltas = np.concatenate([-np.geomspace(span, 1e-6, samples // 2), [0.0],
                             np.geomspace(1e-6, span, samples // 2)])
    bs = np.geomspace(1e-3, 1e3, 4001)
    m = np.array([np.min(_profile(dl, bs)) for dl in deltas])
    best = -np.inf
    for lam in np.linspace(-max_slope, max_slope, 721):
        best = max(best, float(np.min(m - lam * (deltas - mean_det))))
    return area * best


def _perturbed(f: DiscreteMap, amplitude, seed) -> DiscreteMap:
    rng = np.random.default_rng(seed)
    vals = np.array(f.values)
    free = f.free_mask()
    vals[free] += amplitude * rng.uniform(-1.0, 1.0, size=vals[free].shape)
    return f.with_values(vals)


BOUNDARIES = ("identity", "rotated", "reflected")


def boundary_map(kind, angle=0.3):
    """The affine map a flat run pins its boundary to."""
    if kind == "identity":
        return lambda x: np.array(x, dtype=float)
    if kind == "rotated":
        c, s = np.cos(angle), np.sin(angle)
        R = np.array([[c, -s], [s, c]])
        return lambda x: (x - 0.5) @ R.T + 0.5
    if kind == "reflected":
        return lambda x: np.stack([1.0 - x[:, 0], x[:, 1]], axis=-1)
    raise ConfigError(f"boundary must be one of {BOUNDARIES}")


def rigidity_flat_run(cfg: Optional[dict] = None) -> dict:
    """Minimize flat-to-flat energy from a perturbed start with pinned boundary.

    Config keys: ``nodes`` (list of grid sizes), ``seeds``, ``amplitude``,
    ``boundary`` (identity, rotated or reflected), ``angle``, ``p`` and
    ``optimizer`` (an :class:`OptimizerConfig` dict).
    """
    cfg = dict(cfg or {})
    nodes = list(cfg.get("nodes", [17]))
    seeds = list(cfg.get("seeds", [0]))
    amplitude = float(cfg.get("amplitude", 0.05))
    kind = cfg.get("boundary", "identity")
    p = float(cfg.get("p", 2.0))
    ocfg = OptimizerConfig.from_dict(cfg.get("optimizer", {"max_iters": 3000}))
    fn = boundary_map(kind, float(cfg.get("angle", 0.3)))
    target = euclidean(ChartGrid.box(3, -1.0, 2.0))
    runs = []
    for n in nodes:
        chart = ChartGrid.box(n)
        g = euclidean(chart)
        exact = DiscreteMap.from_function(chart, fn)
        for seed in seeds:
            f0 = _perturbed(exact, amplitude, seed)
            f, trace = minimize(f0, g, target, p, ocfg)
            _, _, rigid = rigid_fit(chart.node_coords(), f.values)
            runs.append({
                "nodes": n, "seed": seed, "energy": trace.final_energy,
                "iterations": trace.iterations, "reason": trace.reason,
                "sup_to_boundary_map": float(np.max(np.abs(f.values - exact.values))),
                "sup_to_rigid_motion": rigid,
                "max_distortion": float(np.max(distortion_field(f, g, target)[0])),
            })
    report = {"boundary": kind, "p": p, "amplitude": amplitude, "runs": runs,
              "note": "best found; no global-minimality claim"}
    if kind == "reflected":
        report["energy_lower_bound"] = reflection_energy_bound()
    return report


def best_scaling(g: MetricField, target: MetricField, p=2.0) -> float:
    """Scale ``s`` minimizing the energy of ``x -> s x`` (the pinned boundary of sphere runs)."""
    chart = g.chart

    def energy(s):
        return elastic_energy(DiscreteMap.from_function(chart, lambda x: s * x), g, target, p).energy

    res = minimize_scalar(energy, bounds=(0.1, 10.0), method="bounded", options={"xatol": 1e-10})
    return float(res.x)


def sphere_to_plane_energy(side, nodes, radius=1.0, p=2.0, ocfg: Optional[OptimizerConfig] = None):
    """Minimized energy of a spherical cap (square chart of the given side) into the plane."""
    half = 0.5 * float(side)
    chart = ChartGrid.box(nodes, -half, half)
    g = sphere_conformal(chart, radius)
    target = euclidean(ChartGrid.box(3, -4.0 * radius, 4.0 * radius))
    s = best_scaling(g, target, p)
    f0 = DiscreteMap.from_function(chart, lambda x: s * x)
    f, trace = minimize(f0, g, target, p, ocfg or OptimizerConfig(max_iters=3000))
    return {"side": float(side), "nodes": int(nodes), "scale": s,
            "initial_energy": trace.energy[0], "energy": trace.final_energy,
            "iterations": trace.iterations, "reason": trace.reason}


def rigidity_sphere_run(cfg: Optional[dict] = None) -> dict:
    """Minimize cap-to-plane energies at several resolutions and cap sizes.

    Config keys: ``side`` (0.8), ``radius`` (1), ``p`` (2), ``nodes``
    (at least three resolutions), ``sweep_sides`` and ``sweep_nodes``.
    """
    cfg = dict(cfg or {})
    side = float(cfg.get("side", 0.8))
    radius = float(cfg.get("radius", 1.0))
    p = float(cfg.get("p", 2.0))
    nodes = list(cfg.get("nodes", [9, 17, 33]))
    if len(nodes) < 3:
        raise ConfigError("sphere runs need at least three resolutions")
    ocfg = OptimizerConfig.from_dict(cfg.get("optimizer", {"max_iters": 3000}))
    levels = [sphere_to_plane_energy(side, n, radius, p, ocfg) for n in nodes]
    energies = [lv["energy"] for lv in levels]
    sweep_nodes = int(cfg.get("sweep_nodes", nodes[0]))
    sides = list(cfg.get("sweep_sides", [side, 0.6 * side, 0.4 * side]))
    sweep = [sphere_to_plane_energy(s, sweep_nodes, radius, p, ocfg) for s in sides]
    sweep_e = [s["energy"] for s in sweep]
    order = np.argsort(sides)
    monotone = bool(np.all(np.diff(np.asarray(sweep_e)[order]) > 0))
    return {"side": side, "radius": radius, "p": p, "levels": levels,
            "energies": energies, "all_positive": bool(min(energies) > 0),
            "ratio_finest_coarsest": energies[-1] / energies[0],
            "sweep": sweep, "sweep_monotone": monotone,
            "note": "best found; no global-minimality claim"}
