"""Residuals of the intrinsic (strong) and extrinsic (weak) Piola identities.

For a smooth map ``f`` the cofactor field of ``df`` is divergence free with
respect to the pulled-back connection.  Tested against a section ``xi`` that
vanishes on the boundary this gives

    strong:  int <Cof df, nabla xi> dVol_g = 0
    weak:    int <d iota . Cof df, d xi> dVol_g = int <tr_g A(Cof df, df), xi> dVol_g

where ``iota`` embeds the target isometrically and ``A`` is its second
fundamental form (normal valued; for the round sphere of radius ``R``,
``A(u, v) = h(u, v) iota / R^2``).  The discrete residuals below vanish up to
quadrature and interpolation error, which is what the refinement studies
measure.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .algebra import matrix_cofactor, volume_ratio
from .errors import ConfigError, DimensionError
from .geometry import ChartGrid, MetricField, Quadrature, euclidean, sphere_conformal
from .maps import DiscreteMap, evaluate, target_points
from .functionals import quadrature_for
from .parallel import map_chunks


# ---------------------------------------------------------------------------
# test sections


@dataclass(frozen=True, eq=False)
class TestSection:
    """A vector-valued test field on a source grid, zero on the boundary.

    Two representations are supported:

    * nodal: Q1 nodal values of shape ``grid.nodes + (ncomp,)``;
    * analytic: a finite sum ``sum_k c_k prod_i sin(k_i pi xhat_i)`` with
      ``xhat`` the chart coordinates rescaled to ``[0, 1]``.  Every mode
      vanishes on the boundary of the box, so no envelope is needed.
    """

    __test__ = False  # keep pytest from collecting this class

    grid: ChartGrid
    ncomp: int
    nodal: Optional[np.ndarray] = None
    modes: Optional[np.ndarray] = None
    coeffs: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.nodal is None) == (self.modes is None):
            raise ConfigError("give either nodal values or sine modes")
        if self.nodal is not None:
            vals = np.array(self.nodal, dtype=float).reshape(self.grid.nodes + (self.ncomp,))
            vals[self.grid.boundary_mask()] = 0.0
            vals.setflags(write=False)
            object.__setattr__(self, "nodal", vals)
        else:
            modes = np.array(self.modes, dtype=float).reshape(-1, self.grid.dim)
            coeffs = np.array(self.coeffs, dtype=float).reshape(len(modes), self.ncomp)
            if np.any(modes != np.round(modes)) or np.any(modes < 1):
                raise ConfigError("sine modes must be positive integers")
            object.__setattr__(self, "modes", modes)
            object.__setattr__(self, "coeffs", coeffs)

    @property
    def is_nodal(self) -> bool:
        return self.nodal is not None

    @classmethod
    def random(cls, grid: ChartGrid, ncomp: int, seed=0, n_modes=4, max_k=3):
        """Random smooth section: a few low sine modes with decaying amplitudes."""
        rng = np.random.default_rng(seed)
        modes = rng.integers(1, max_k + 1, size=(n_modes, grid.dim))
        amp = 1.0 / np.sum(modes * modes, axis=1)
        coeffs = rng.standard_normal((n_modes, ncomp)) * amp[:, None]
        return cls(grid, ncomp, modes=modes, coeffs=coeffs)

    @classmethod
    def random_nodal(cls, grid: ChartGrid, ncomp: int, seed=0):
        rng = np.random.default_rng(seed)
        return cls(grid, ncomp, nodal=rng.standard_normal(grid.nodes + (ncomp,)))

    def _unit(self, x):
        lo = np.array(self.grid.lower)
        return (x - lo) / self.grid.extent

    def eval_points(self, x):
        """Values ``(n, ncomp)`` and gradients ``(n, ncomp, d)`` of the analytic form."""
        if self.is_nodal:
            raise ConfigError("pointwise evaluation needs an analytic section")
        u = np.pi * self._unit(np.asarray(x, dtype=float))
        arg = u[:, None, :] * self.modes[None, :, :]
        s, c = np.sin(arg), np.cos(arg)
        prod = np.prod(s, axis=-1)
        val = prod @ self.coeffs
        d = self.grid.dim
        grad = np.empty((u.shape[0], self.ncomp, d))
        for i in range(d):
            others = np.prod(np.delete(s, i, axis=-1), axis=-1) if d > 1 else 1.0
            dk = c[..., i] * others * (np.pi * self.modes[:, i] / self.grid.extent[i])
            grad[:, :, i] = dk @ self.coeffs
        return val, grad

    def at(self, quad: Quadrature, sl=slice(None)):
        """Values and chart gradients at (a slice of) the quadrature points."""
        if quad.grid != self.grid:
            raise DimensionError("quadrature grid does not match the section's grid")
        if not self.is_nodal:
            return self.eval_points(quad.points[sl])
        flat = self.nodal.reshape(self.grid.n_nodes, self.ncomp)[quad.corners[sl]]
        val = np.einsum("pc,pcm->pm", quad.shape[sl], flat)
        grad = np.einsum("pcm,pci->pmi", flat, quad.dshape[sl])
        return val, grad

    def to_nodal(self, grid: Optional[ChartGrid] = None) -> "TestSection":
        """Sample onto the nodes of ``grid`` (boundary set to exactly zero)."""
        grid = grid or self.grid
        if self.is_nodal:
            if grid != self.grid:
                raise ConfigError("nodal sections cannot be resampled")
            return self
        val, _ = TestSection(grid, self.ncomp, modes=self.modes, coeffs=self.coeffs) \
            .eval_points(grid.node_coords().reshape(-1, grid.dim))
        return TestSection(grid, self.ncomp, nodal=val)

    def on(self, grid: ChartGrid) -> "TestSection":
        """The same analytic section on another grid over the same box."""
        if self.is_nodal:
            raise ConfigError("nodal sections are tied to their grid")
        return TestSection(grid, self.ncomp, modes=self.modes, coeffs=self.coeffs)

    def scaled(self, a) -> "TestSection":
        if self.is_nodal:
            return TestSection(self.grid, self.ncomp, nodal=a * self.nodal)
        return TestSection(self.grid, self.ncomp, modes=self.modes, coeffs=a * self.coeffs)

    def __add__(self, other: "TestSection") -> "TestSection":
        if other.grid != self.grid or other.ncomp != self.ncomp or other.is_nodal != self.is_nodal:
            raise ConfigError("sections must share grid, size and representation")
        if self.is_nodal:
            return TestSection(self.grid, self.ncomp, nodal=self.nodal + other.nodal)
        return TestSection(self.grid, self.ncomp,
                           modes=np.concatenate([self.modes, other.modes]),
                           coeffs=np.concatenate([self.coeffs, other.coeffs]))


# ---------------------------------------------------------------------------
# embeddings


class SphereEmbedding:
    """Inverse stereographic projection onto the sphere of radius ``R`` in R^3.

    ``iota(x) = (2 R^2 x, R (|x|^2 - R^2)) / (|x|^2 + R^2)``, so the chart
    origin is the south pole and the induced metric is the conformal metric
    ``4 R^4 / (R^2 + |x|^2)^2 delta`` of :func:`geometry.sphere_conformal`.
    """

    ambient_dim = 3
    dim = 2

    def __init__(self, radius=1.0):
        self.radius = float(radius)
        if self.radius <= 0:
            raise ConfigError("radius must be positive")

    def _pts(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != 2:
            raise DimensionError("sphere charts are two-dimensional")
        return y

    def iota(self, y):
        y = self._pts(y)
        R = self.radius
        r2 = np.sum(y * y, axis=-1)
        den = r2 + R * R
        return np.concatenate([2 * R * R * y, (R * (r2 - R * R))[..., None]], axis=-1) / den[..., None]

    def d_iota(self, y):
        """``(..., 3, 2)`` Jacobian of ``iota``."""
        y = self._pts(y)
        R = self.radius
        den = (np.sum(y * y, axis=-1) + R * R)[..., None, None]
        J = np.empty(y.shape[:-1] + (3, 2))
        J[..., :2, :] = 2 * R * R * (np.eye(2) / den - 2 * y[..., :, None] * y[..., None, :] / den**2)
        J[..., 2, :] = 4 * R**3 * y / den[..., 0] ** 2
        return J

    def metric(self, y):
        y = self._pts(y)
        R = self.radius
        lam = 4 * R**4 / (R * R + np.sum(y * y, axis=-1)) ** 2
        return lam[..., None, None] * np.eye(2)

    def normal(self, y):
        """Outward unit normal ``iota / R``."""
        return self.iota(y) / self.radius

    def second_fundamental(self, u, v, y):
        """``A(u, v) = h(u, v) iota(y) / R^2`` for chart vectors ``u, v`` at ``y``."""
        H = self.metric(y)
        huv = np.einsum("...a,...ab,...b->...", np.asarray(u, float), H, np.asarray(v, float))
        return huv[..., None] * self.iota(y) / self.radius**2


class PlaneEmbedding:
    """The identity embedding of a flat chart into its own Euclidean space (``A = 0``)."""

    def __init__(self, dim=2):
        self.dim = self.ambient_dim = int(dim)

    def iota(self, y):
        return np.array(y, dtype=float)

    def d_iota(self, y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(np.eye(self.dim), y.shape[:-1] + (self.dim, self.dim)).copy()

    def metric(self, y):
        return self.d_iota(y)

    def second_fundamental(self, u, v, y):
        return np.zeros(np.asarray(y).shape[:-1] + (self.ambient_dim,))


# ---------------------------------------------------------------------------
# residuals


def _cof(Df, G, H):
    """Intrinsic cofactor ``sqrt(det H / det G) H^-1 cof(Df) G`` for stacks."""
    s = volume_ratio(G, H)[:, None, None]
    return s * np.linalg.solve(H, matrix_cofactor(Df) @ G)


def _check_section(xi: TestSection, f: DiscreteMap, ncomp: int):
    if xi.grid != f.source:
        raise DimensionError("test section and map live on different grids")
    if xi.ncomp != ncomp:
        raise DimensionError(f"test section needs {ncomp} components, has {xi.ncomp}")


def strong_piola_residual(f: DiscreteMap, xi: TestSection, g: MetricField, h: MetricField,
                          *, quad_order=2) -> float:
    """Quadrature value of ``int (Cof df)_i^a g^ij h_ab (d_j xi^b + d_j f^c Gamma^b_cd xi^d) dVol_g``.

    ``xi`` holds components in the target chart along ``f``.  The Christoffel
    symbols of ``h`` are evaluated at the mapped points.
    """
    _check_section(xi, f, f.dim)
    quad = quadrature_for(f, g, h, quad_order)
    y, Df = evaluate(f, quad)
    target_points(y, h)
    G = g.metric(quad.points)
    vol = quad.weights * np.sqrt(np.linalg.det(G))

    def work(sl):
        H = h.metric(y[sl])
        Gs = G[sl]
        C = _cof(Df[sl], Gs, H)
        val, grad = xi.at(quad, sl)
        cov = grad
        if not h.constant:
            gam = h.christoffel(y[sl])
            cov = grad + np.einsum("pcj,pbcd,pd->pbj", Df[sl], gam, val)
        dens = np.einsum("pai,pij,pab,pbj->p", C, np.linalg.inv(Gs), H, cov)
        return float(np.dot(vol[sl], dens))

    total = 0.0
    for part in map_chunks(work, quad.size):
        total += part
    return total


def weak_piola_residual(f: DiscreteMap, xi: TestSection, g: MetricField, emb, use_cof=True,
                        *, quad_order=2):
    """Both sides of the weak Piola identity for a target embedded by ``emb``.

    Returns ``(lhs, rhs)`` with

        lhs = int g^ij  d iota(Cof df)_i . d_j xi  dVol_g
        rhs = int g^ij  A((Cof df)_i, d_j f) . xi   dVol_g

    ``xi`` holds ambient components.  With ``use_cof=False`` the cofactor is
    replaced by ``df`` itself, which turns the identity into the weak
    harmonic-map equation (true for isometric immersions).
    """
    _check_section(xi, f, emb.ambient_dim)
    if f.dim != emb.dim:
        raise DimensionError("map and embedding dimensions differ")
    quad = quadrature_for(f, g, None, quad_order)
    y, Df = evaluate(f, quad)
    G = g.metric(quad.points)
    vol = quad.weights * np.sqrt(np.linalg.det(G))
    d = f.dim

    def work(sl):
        ys, Dfs, Gs = y[sl], Df[sl], G[sl]
        H = emb.metric(ys)
        C = _cof(Dfs, Gs, H) if use_cof else Dfs
        Ginv = np.linalg.inv(Gs)
        val, grad = xi.at(quad, sl)
        P = emb.d_iota(ys) @ C  # (n, D, d)
        lhs = np.einsum("pai,pij,paj->p", P, Ginv, grad)
        trA = np.zeros_like(val)
        for i in range(d):
            for j in range(d):
                trA += Ginv[:, i, j, None] * emb.second_fundamental(C[:, :, i], Dfs[:, :, j], ys)
        rhs = np.einsum("pa,pa->p", trA, val)
        return float(np.dot(vol[sl], lhs)), float(np.dot(vol[sl], rhs))

    lhs = rhs = 0.0
    for a, b in map_chunks(work, quad.size):
        lhs += a
        rhs += b
    return lhs, rhs


# ---------------------------------------------------------------------------
# refinement studies


def refinement_order(hs, residuals) -> float:
    """Least-squares slope of ``log|residual|`` against ``log h``."""
    hs = np.asarray(hs, dtype=float)
    res = np.abs(np.asarray(residuals, dtype=float))
    if hs.size < 3:
        raise ConfigError("an order estimate needs at least three levels")
    if np.any(res <= 0):
        return float("inf")
    slope, _ = np.polyfit(np.log(hs), np.log(res), 1)
    return float(slope)


@dataclass
class RefinementStudy:
    """Residuals over dyadic levels with pairwise and fitted orders."""

    label: str
    cells: list
    h: list
    residual: list

    @property
    def order(self) -> float:
        return refinement_order(self.h, self.residual)

    def local_orders(self):
        out = [float("nan")]
        for k in range(1, len(self.h)):
            r0, r1 = abs(self.residual[k - 1]), abs(self.residual[k])
            if r0 > 0 and r1 > 0:
                out.append(float(np.log(r0 / r1) / np.log(self.h[k - 1] / self.h[k])))
            else:
                out.append(float("nan"))
        return out

    def rows(self):
        """CSV rows ``(level, h, residual, order)``; the order column is pairwise."""
        return [(k, self.h[k], self.residual[k], o)
                for k, o in enumerate(self.local_orders())]


def run_refinement(label, cells, case) -> RefinementStudy:
    """Evaluate ``case(n_cells) -> residual`` over a list of cell counts."""
    res = [float(case(n)) for n in cells]
    return RefinementStudy(label, list(cells), [1.0 / n for n in cells], res)


# ---------------------------------------------------------------------------
# standard cases

STANDARD_CASES = ("affine_flat", "smooth_flat", "sphere_strong", "weak_cof", "weak_harmonic")


def _smooth_flat_map(grid):
    return DiscreteMap.from_function(grid, lambda x: np.stack(
        [x[:, 0] + 0.1 * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]), x[:, 1]], axis=-1))


def sphere_rotation(radius=1.0, angle=0.3):
    """A rotation of the sphere about the first ambient axis, in stereographic coordinates."""
    emb = SphereEmbedding(radius)
    c, s = np.cos(angle), np.sin(angle)
    Q = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])

    def fn(x):
        q = emb.iota(x) @ Q.T
        return radius * q[:, :2] / (radius - q[:, 2:3])
    return fn


def standard_case(case, cells, seed=0):
    """Residual of one named Piola case on a grid with ``cells`` cells per axis."""
    if case in ("affine_flat", "smooth_flat", "sphere_strong", "weak_cof"):
        grid = ChartGrid.box(cells + 1)
    elif case == "weak_harmonic":
        grid = ChartGrid.box(cells + 1, -0.4, 0.4)
    else:
        raise ConfigError(f"unknown piola case {case!r}; known: {STANDARD_CASES}")
    if case == "affine_flat":
        rng = np.random.default_rng(seed)
        A = np.eye(2) + 0.3 * rng.standard_normal((2, 2))
        b = rng.standard_normal(2)
        f = DiscreteMap.from_function(grid, lambda x: x @ A.T + b)
        xi = TestSection.random_nodal(grid, 2, seed)
        target = euclidean(ChartGrid.box(2, -10.0, 10.0))
        return strong_piola_residual(f, xi, euclidean(grid), target)
    if case == "smooth_flat":
        xi = TestSection.random(grid, 2, seed)
        return strong_piola_residual(_smooth_flat_map(grid), xi, euclidean(grid), euclidean(grid))
    if case == "sphere_strong":
        xi = TestSection.random(grid, 2, seed)
        h = sphere_conformal(ChartGrid.box(3, -2.0, 2.0), 1.0)
        return strong_piola_residual(_smooth_flat_map(grid), xi, euclidean(grid), h)
    emb = SphereEmbedding(1.0)
    xi = TestSection.random(grid, 3, seed)
    if case == "weak_cof":
        lhs, rhs = weak_piola_residual(_smooth_flat_map(grid), xi, euclidean(grid), emb, True)
    else:
        f = DiscreteMap.from_function(grid, sphere_rotation())
        lhs, rhs = weak_piola_residual(f, xi, sphere_conformal(grid, 1.0), emb, False)
    return lhs - rhs
