"""Single-chart Riemannian manifolds: grids, quadrature and metric fields.

A manifold is a rectangular box in chart coordinates (:class:`ChartGrid`)
carrying a metric-matrix-valued function (:class:`MetricField`).  Metric
functions are vectorized: they take points of shape ``(n, d)`` and return
matrices of shape ``(n, d, d)``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .algebra import check_metric
from .errors import ConfigError, DomainError, OutOfChartError

DOMAIN_RTOL = 1e-12


@dataclass(frozen=True)
class ChartGrid:
    """Uniform tensor-product grid on the box ``[lower, upper]``.

    Nodes are numbered in C order over their multi-index (axis 0 slowest).
    """

    lower: tuple
    upper: tuple
    nodes: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        nodes = tuple(int(v) for v in np.atleast_1d(self.nodes))
        if not (len(lower) == len(upper) == len(nodes)):
            raise ConfigError("lower, upper and nodes must have the same length")
        if len(lower) not in (1, 2, 3):
            raise ConfigError(f"unsupported dimension {len(lower)}")
        if any(u <= l for l, u in zip(lower, upper)):
            raise ConfigError("upper must exceed lower componentwise")
        if any(n < 2 for n in nodes):
            raise ConfigError("need at least 2 nodes per axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def box(cls, nodes, lower=None, upper=None, dim=2):
        """Grid on ``[lower, upper]`` (default unit box) with ``nodes`` per axis."""
        nodes = tuple(np.broadcast_to(np.atleast_1d(nodes), (dim,)))
        lower = (0.0,) * dim if lower is None else tuple(np.broadcast_to(lower, (dim,)))
        upper = (1.0,) * dim if upper is None else tuple(np.broadcast_to(upper, (dim,)))
        return cls(lower, upper, nodes)

    @property
    def dim(self) -> int:
        return len(self.nodes)

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / (np.array(self.nodes) - 1)

    @property
    def cells(self) -> tuple:
        return tuple(n - 1 for n in self.nodes)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def extent(self) -> np.ndarray:
        return np.array(self.upper) - np.array(self.lower)

    def axes(self):
        return [np.linspace(l, u, n) for l, u, n in zip(self.lower, self.upper, self.nodes)]

    def node_coords(self) -> np.ndarray:
        """Node coordinates, shape ``nodes + (d,)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def cell_centers(self) -> np.ndarray:
        """Cell centers, shape ``cells + (d,)``."""
        mids = [0.5 * (a[1:] + a[:-1]) for a in self.axes()]
        return np.stack(np.meshgrid(*mids, indexing="ij"), axis=-1)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.nodes, dtype=bool)
        for k in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[k] = 0
            mask[tuple(sl)] = True
            sl[k] = -1
            mask[tuple(sl)] = True
        return mask

    def contains(self, points, tol=DOMAIN_RTOL) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        slack = tol * np.maximum(1.0, self.extent)
        lo = np.array(self.lower) - slack
        hi = np.array(self.upper) + slack
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def clip(self, points) -> np.ndarray:
        return np.clip(points, self.lower, self.upper)

    def refined(self) -> "ChartGrid":
        """Dyadic refinement: every cell split in two along each axis."""
        return ChartGrid(self.lower, self.upper, tuple(2 * n - 1 for n in self.nodes))

    def with_nodes(self, nodes) -> "ChartGrid":
        return ChartGrid.box(nodes, self.lower, self.upper, self.dim)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "nodes": list(self.nodes)}

    @classmethod
    def from_dict(cls, data) -> "ChartGrid":
        try:
            return cls(tuple(data["lower"]), tuple(data["upper"]), tuple(data["nodes"]))
        except KeyError as exc:
            raise ConfigError(f"grid descriptor missing {exc}") from None


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True, eq=False)
class Quadrature:
    """Tensor-product Gauss rule on the cells of a grid, with Q1 shape data.

    Each cell may be split at axis-aligned ``breaks`` so that piecewise-smooth
    integrands with jumps on those lines are integrated without smearing.

    Attributes
    ----------
    points : (n, d) physical quadrature points
    weights : (n,) Euclidean ``dx`` weights
    local : (n, d) cell-local coordinates in ``[0, 1]^d``
    cell : (n,) flat cell index (C order over cell multi-index)
    corners : (n, 2**d) flat node indices of the containing cell
    shape : (n, 2**d) multilinear shape-function values
    dshape : (n, 2**d, d) shape-function gradients in chart coordinates
    """

    grid: ChartGrid
    order: int
    points: np.ndarray
    weights: np.ndarray
    local: np.ndarray
    cell: np.ndarray
    corners: np.ndarray
    shape: np.ndarray
    dshape: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def interpolate(self, nodal):
        """Values of a Q1 nodal field at the quadrature points.

        ``nodal`` has shape ``grid.nodes + (m,)``; returns ``(n, m)``.
        """
        flat = np.asarray(nodal).reshape(self.grid.n_nodes, -1)
        return np.einsum("pc,pcm->pm", self.shape, flat[self.corners])

    def gradient(self, nodal):
        """Chart gradient of a Q1 nodal field: ``(n, m, d)`` with ``[p, m, i] = d_i u^m``."""
        flat = np.asarray(nodal).reshape(self.grid.n_nodes, -1)
        return np.einsum("pcm,pci->pmi", flat[self.corners], self.dshape)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def _axis_rule(a, order, breaks):
    """1-D composite Gauss rule on the cells of axis coordinates ``a``."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    brk = np.unique(np.asarray(breaks, dtype=float)) if breaks is not None else np.empty(0)
    cells, loc, wts = [], [], []
    for c in range(len(a) - 1):
        lo, hi = a[c], a[c + 1]
        h = hi - lo
        tol = 1e-12 * h
        inner = brk[(brk > lo + tol) & (brk < hi - tol)]
        edges = np.concatenate([[lo], inner, [hi]])
        for s0, s1 in zip(edges[:-1], edges[1:]):
            pts = s0 + (s1 - s0) * x
            cells.append(np.full(order, c))
            loc.append((pts - lo) / h)
            wts.append((s1 - s0) * w)
    return np.concatenate(cells), np.concatenate(loc), np.concatenate(wts)


@functools.lru_cache(maxsize=32)
def _quadrature_cached(grid: ChartGrid, order: int, breaks) -> Quadrature:
    d = grid.dim
    h = grid.spacing
    axes = grid.axes()
    rules = [_axis_rule(axes[k], order, None if breaks is None else breaks[k]) for k in range(d)]
    counts = [len(r[0]) for r in rules]
    mesh = np.meshgrid(*[np.arange(n) for n in counts], indexing="ij")
    sel = [m.ravel() for m in mesh]
    cidx = np.stack([rules[k][0][sel[k]] for k in range(d)], axis=-1)
    local = np.stack([rules[k][1][sel[k]] for k in range(d)], axis=-1)
    weights = np.prod(np.stack([rules[k][2][sel[k]] for k in range(d)], axis=-1), axis=-1)
    points = np.array(grid.lower) + (cidx + local) * h
    cell = np.ravel_multi_index(tuple(cidx.T), grid.cells)

    offsets = np.array(list(np.ndindex(*(2,) * d)))  # (2**d, d)
    corner_multi = cidx[:, None, :] + offsets[None, :, :]
    corners = np.ravel_multi_index(tuple(np.moveaxis(corner_multi, -1, 0)), grid.nodes)
    # per-axis linear factors: value and derivative for the low (0) and high (1) node
    val = np.where(offsets[None, :, :] == 1, local[:, None, :], 1.0 - local[:, None, :])
    der = np.where(offsets[None, :, :] == 1, 1.0, -1.0) / h
    shape = np.prod(val, axis=-1)
    dshape = np.empty(val.shape)
    for k in range(d):
        others = np.prod(np.delete(val, k, axis=-1), axis=-1) if d > 1 else 1.0
        dshape[..., k] = der[..., k] * others
    q = Quadrature(grid, order, points, weights, local, cell, corners, shape, dshape)
    for arr in (points, weights, local, cell, corners, shape, dshape):
        arr.setflags(write=False)
    return q


def build_quadrature(grid: ChartGrid, order: int = 2, breaks=None) -> Quadrature:
    """Gauss rule with ``order`` points per axis per (sub)cell; cached."""
    if order not in (1, 2, 3):
        raise ConfigError("quadrature order must be 1, 2 or 3")
    if breaks is not None:
        breaks = tuple(tuple(float(b) for b in np.atleast_1d(bk)) for bk in breaks)
    return _quadrature_cached(grid, order, breaks)


def merge_breaks(*fields):
    """Union of the per-axis break lines of several fields (``None`` if none have any)."""
    found = [f.breaks for f in fields if f is not None and f.breaks is not None]
    if not found:
        return None
    d = len(found[0])
    return tuple(tuple(sorted(set().union(*[set(b[k]) for b in found]))) for k in range(d))


# ---------------------------------------------------------------------------
# metric fields


@dataclass(frozen=True, eq=False)
class MetricField:
    """A Riemannian metric on a single chart.

    Parameters
    ----------
    chart : ChartGrid
        Domain (and default discretization) of the chart.
    metric_fn : callable
        ``(n, d) -> (n, d, d)`` SPD matrices.
    christoffel_fn : callable, optional
        ``(n, d) -> (n, d, d, d)`` with ``[:, k, i, j] = Gamma^k_ij``.  When
        absent, central finite differences of ``metric_fn`` are used.
    label : str
    breaks : tuple of per-axis sequences, optional
        Lines where the metric may jump or change form; quadratures split cells there.
    constant : bool
        True when the metric does not depend on the point.
    spec : dict, optional
        Builtin tag and parameters, used for reports and configs.
    """

    chart: ChartGrid
    metric_fn: Callable
    christoffel_fn: Optional[Callable] = None
    label: str = ""
    breaks: Optional[tuple] = None
    constant: bool = False
    spec: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.chart.dim

    def _points(self, x, check):
        pts = np.asarray(x, dtype=float)
        if pts.shape[-1] != self.dim:
            raise DomainError(f"points must have {self.dim} coordinates")
        pts = pts.reshape(-1, self.dim)
        if check and not np.all(self.chart.contains(pts)):
            raise OutOfChartError(f"point outside the chart of metric {self.label!r}")
        return pts

    def metric(self, x, check=True) -> np.ndarray:
        """Metric matrices at points ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        pts = self._points(x, check)
        return self.metric_fn(pts).reshape(x.shape[:-1] + (self.dim, self.dim))

    def christoffel(self, x, check=True) -> np.ndarray:
        """Christoffel symbols ``[..., k, i, j] = Gamma^k_ij``."""
        x = np.asarray(x, dtype=float)
        pts = self._points(x, check)
        if self.christoffel_fn is not None:
            gam = self.christoffel_fn(pts)
        else:
            gam = fd_christoffel(self.metric_fn, pts, 0.5 * self.chart.spacing, self.chart)
        gam = 0.5 * (gam + np.swapaxes(gam, -1, -2))
        return gam.reshape(x.shape[:-1] + (self.dim,) * 3)

    def sqrt_det(self, x, check=True) -> np.ndarray:
        return np.sqrt(np.linalg.det(self.metric(x, check)))

    def validate(self, order=2):
        """Check SPD-ness at the Gauss points of the chart."""
        q = build_quadrature(self.chart, order, self.breaks)
        check_metric(self.metric(q.points))
        return self


def fd_christoffel(metric_fn, pts, step, chart=None):
    """Levi-Civita symbols from central differences of the metric.

    ``Gamma^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)``.
    """
    pts = np.asarray(pts, dtype=float)
    n, d = pts.shape
    step = np.broadcast_to(np.asarray(step, dtype=float), (d,))
    if chart is not None:
        lo = np.array(chart.lower)
        hi = np.array(chart.upper)
        slack = DOMAIN_RTOL * np.maximum(1.0, chart.extent)
        if np.any(pts - step < lo - slack) or np.any(pts + step > hi + slack):
            raise OutOfChartError("finite-difference stencil leaves the chart")
    dg = np.empty((n, d, d, d))  # [p, l, i, j] = d_l g_ij
    for l in range(d):
        e = np.zeros(d)
        e[l] = step[l]
        dg[:, l] = (metric_fn(pts + e) - metric_fn(pts - e)) / (2.0 * step[l])
    g_inv = np.linalg.inv(metric_fn(pts))
    # T[p, l, i, j] = d_i g_jl + d_j g_il - d_l g_ij
    T = np.einsum("pijl->plij", dg) + np.einsum("pjil->plij", dg) - dg
    return 0.5 * np.einsum("pkl,plij->pkij", g_inv, T)


def conformal_christoffel(grad_phi):
    """Christoffels of ``e^{2 phi} delta``: ``d_ik phi_j + d_jk phi_i - d_ij phi_k``."""
    grad_phi = np.asarray(grad_phi, dtype=float)
    n, d = grad_phi.shape
    eye = np.eye(d)
    return (
        np.einsum("ik,pj->pkij", eye, grad_phi)
        + np.einsum("jk,pi->pkij", eye, grad_phi)
        - np.einsum("ij,pk->pkij", eye, grad_phi)
    )


def _identity_metric(d):
    def fn(pts):
        return np.broadcast_to(np.eye(d), (pts.shape[0], d, d)).copy()

    return fn


def _zero_christoffel(d):
    def fn(pts):
        return np.zeros((pts.shape[0], d, d, d))

    return fn


def euclidean(chart: ChartGrid, label="euclidean") -> MetricField:
    """The flat metric ``delta_ij``."""
    d = chart.dim
    return MetricField(chart, _identity_metric(d), _zero_christoffel(d), label,
                       constant=True, spec={"tag": "euclidean"})


def flat_torus_cell(chart: Optional[ChartGrid] = None, nodes=17) -> MetricField:
    """Flat metric on a fundamental cell (default the unit square)."""
    chart = chart or ChartGrid.box(nodes)
    d = chart.dim
    return MetricField(chart, _identity_metric(d), _zero_christoffel(d), "flat_torus_cell",
                       constant=True, spec={"tag": "flat_torus_cell"})


def sphere_conformal(chart: ChartGrid, radius=1.0) -> MetricField:
    """Round sphere of radius ``R`` in stereographic coordinates.

    ``g = 4 R^4 / (R^2 + |x|^2)^2 * delta``; Gauss curvature ``1/R^2`` in 2-D.
    The chart origin is the south pole; ``|x| = R`` is the equator.
    """
    R = float(radius)
    if R <= 0:
        raise ConfigError("radius must be positive")
    d = chart.dim

    def metric_fn(pts):
        lam = 4.0 * R**4 / (R * R + np.sum(pts * pts, axis=-1)) ** 2
        return lam[:, None, None] * np.eye(d)

    def christoffel_fn(pts):
        grad_phi = -2.0 * pts / (R * R + np.sum(pts * pts, axis=-1))[:, None]
        return conformal_christoffel(grad_phi)

    f = MetricField(chart, metric_fn, christoffel_fn, f"sphere_conformal(R={R:g})",
                    spec={"tag": "sphere_conformal", "radius": R})
    return f.validate()


# C^2 bump kernel (35/32)(1 - t^2)^3 on [-1, 1] and its antiderivative
def _bump(t):
    t = np.clip(t, -1.0, 1.0)
    return 35.0 / 32.0 * (1.0 - t * t) ** 3


def _bump_cdf(t):
    t = np.clip(t, -1.0, 1.0)
    t2 = t * t
    return 0.5 + 35.0 / 32.0 * t * (1.0 - t2 + t2 * t2 * 0.6 - t2 * t2 * t2 / 7.0)


class _Stripes:
    """1-D stripe indicator: width ``w`` around every multiple of ``1/n``, mollified by ``sigma``."""

    def __init__(self, n, sigma):
        self.n = int(n)
        self.w = 1.0 / self.n**2
        self.sigma = float(sigma)
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if self.sigma + 0.5 * self.w > 0.5 / self.n:
            raise ConfigError("mollification width too large: stripes would overlap")

    def offset(self, x):
        return x - np.round(x * self.n) / self.n

    def value(self, x):
        u = self.offset(x)
        if self.sigma == 0.0:
            return (np.abs(u) < 0.5 * self.w).astype(float)
        s = self.sigma
        return _bump_cdf((u + 0.5 * self.w) / s) - _bump_cdf((u - 0.5 * self.w) / s)

    def derivative(self, x):
        if self.sigma == 0.0:
            raise DomainError("the unmollified striped metric is not differentiable")
        u = self.offset(x)
        s = self.sigma
        return (_bump((u + 0.5 * self.w) / s) - _bump((u - 0.5 * self.w) / s)) / s

    def edges(self, lo, hi):
        """Lines where the stripe profile changes form (jumps, or ends of a transition layer)."""
        k = np.arange(math.floor(lo * self.n) - 1, math.ceil(hi * self.n) + 2)
        half = 0.5 * self.w
        offs = [-half, half] if self.sigma == 0.0 else \
            [-half - self.sigma, -half + self.sigma, half - self.sigma, half + self.sigma]
        e = np.concatenate([k / self.n + o for o in offs])
        return tuple(sorted(set(float(v) for v in e if lo < v < hi)))


def striped(chart: ChartGrid, n: int, eps=0.1, sigma=None) -> MetricField:
    """Metric ``eps * delta`` on stripes of width ``1/n^2``, ``delta`` elsewhere.

    Stripes are centred on every multiple of ``1/n`` along each axis, so the
    unit square holds ``n - 1`` interior stripes plus half stripes on both
    sides, for a per-axis measure of exactly ``1/n``.  With ``sigma > 0`` the
    stripe indicators are convolved with a C^2 bump of half-width ``sigma``
    (default: a quarter of the stripe width); with ``sigma = 0`` the metric
    is discontinuous.  Either way the field carries break lines (stripe
    edges, or the ends of each transition layer) so that quadratures can be
    aligned with the stripes.
    """
    n = int(n)
    if n < 1:
        raise ConfigError("n must be positive")
    eps = float(eps)
    if eps <= 0:
        raise ConfigError("eps must be positive")
    if sigma is None:
        sigma = 0.25 / n**2
    stripes = _Stripes(n, sigma)
    d = chart.dim

    def factor(pts):
        outside = np.prod(1.0 - stripes.value(pts), axis=-1)
        return 1.0 - (1.0 - eps) * (1.0 - outside)

    def metric_fn(pts):
        return factor(pts)[:, None, None] * np.eye(d)

    christoffel_fn = None
    breaks = tuple(stripes.edges(l, u) for l, u in zip(chart.lower, chart.upper))
    if stripes.sigma > 0:
        def christoffel_fn(pts):
            s = stripes.value(pts)
            ds = stripes.derivative(pts)
            grad_chi = np.empty_like(pts)
            for k in range(d):
                grad_chi[:, k] = ds[:, k] * np.prod(np.delete(1.0 - s, k, axis=-1), axis=-1)
            grad_phi = -(1.0 - eps) * grad_chi / (2.0 * factor(pts))[:, None]
            return conformal_christoffel(grad_phi)
    else:
        def christoffel_fn(pts):
            raise DomainError("the unmollified striped metric is not differentiable")

    f = MetricField(chart, metric_fn, christoffel_fn,
                    f"striped(n={n},eps={eps:g},sigma={stripes.sigma:g})",
                    breaks=breaks,
                    spec={"tag": "striped", "n": n, "eps": eps, "sigma": stripes.sigma})
    return f.validate()


BUILTINS = {
    "euclidean": euclidean,
    "flat_torus_cell": flat_torus_cell,
    "sphere_conformal": sphere_conformal,
    "striped": striped,
}


def builtin_metric(tag: str, chart: ChartGrid, **params) -> MetricField:
    """Construct a builtin metric by tag, as used in config files."""
    try:
        ctor = BUILTINS[tag]
    except KeyError:
        raise ConfigError(f"unknown metric tag {tag!r}; known: {sorted(BUILTINS)}") from None
    try:
        if tag == "flat_torus_cell":
            return ctor(chart)
        return ctor(chart, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for metric {tag!r}: {exc}") from None


# ---------------------------------------------------------------------------
# spec-level point operations


def metric_at(field: MetricField, x) -> np.ndarray:
    """Metric matrix at a single point."""
    return field.metric(np.asarray(x, dtype=float)[None, :])[0]


def christoffel_at(field: MetricField, x) -> np.ndarray:
    """``Gamma[k, i, j]`` at a single point."""
    return field.christoffel(np.asarray(x, dtype=float)[None, :])[0]


def total_volume(field: MetricField, quad_order: int = 2, grid: Optional[ChartGrid] = None) -> float:
    """``int sqrt(det g) dx`` over the chart by tensor-product Gauss quadrature."""
    q = build_quadrature(grid or field.chart, quad_order, field.breaks)
    return q.integrate(field.sqrt_det(q.points))
