"""Discrete maps between charts and the pointwise quantities built from them.

Maps are continuous and multilinear on each grid cell (bilinear in 2-D);
their differentials and all energies are evaluated at Gauss points.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .algebra import dist_to_so
from .errors import ConfigError, DimensionError, OutOfChartError
from .geometry import ChartGrid, MetricField, Quadrature

MAP_FORMAT = "rigidlab.map/1"


@dataclass(frozen=True, eq=False)
class DiscreteMap:
    """Nodal values of a map from a source grid into target-chart coordinates.

    Parameters
    ----------
    source : ChartGrid
    values : ndarray, shape ``source.nodes + (d,)``
    boundary_mask : ndarray of bool, shape ``source.nodes``
        True for nodes that optimizers must keep fixed.
    """

    source: ChartGrid
    values: np.ndarray
    boundary_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        shape = self.source.nodes + (self.source.dim,)
        if vals.shape != shape:
            if vals.size != np.prod(shape):
                raise DimensionError(f"values must have shape {shape}, got {vals.shape}")
            vals = vals.reshape(shape)
        if not np.all(np.isfinite(vals)):
            raise ConfigError("map values must be finite")
        if self.boundary_mask is None:
            mask = self.source.boundary_mask()
        else:
            mask = np.array(self.boundary_mask, dtype=bool).reshape(self.source.nodes)
        vals.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "boundary_mask", mask)

    @property
    def dim(self) -> int:
        return self.source.dim

    @classmethod
    def from_function(cls, grid: ChartGrid, fn, boundary_mask=None) -> "DiscreteMap":
        """Sample ``fn`` (``(n, d) -> (n, d)``) at the nodes of ``grid``."""
        x = grid.node_coords().reshape(-1, grid.dim)
        vals = np.asarray(fn(x), dtype=float).reshape(grid.nodes + (grid.dim,))
        return cls(grid, vals, boundary_mask)

    @classmethod
    def identity(cls, grid: ChartGrid, boundary_mask=None) -> "DiscreteMap":
        return cls(grid, grid.node_coords(), boundary_mask)

    def with_values(self, values) -> "DiscreteMap":
        return DiscreteMap(self.source, np.asarray(values).reshape(self.values.shape),
                           self.boundary_mask)

    def free_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    def to_dict(self) -> dict:
        return {
            "format": MAP_FORMAT,
            "grid": self.source.to_dict(),
            "values": self.values.ravel().tolist(),
            "boundary_mask": self.boundary_mask.ravel().astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, data) -> "DiscreteMap":
        if data.get("format", MAP_FORMAT) != MAP_FORMAT:
            raise ConfigError(f"unsupported map format {data.get('format')!r}")
        grid = ChartGrid.from_dict(data["grid"])
        mask = data.get("boundary_mask")
        return cls(grid, np.asarray(data["values"], dtype=float),
                   None if mask is None else np.asarray(mask, dtype=bool))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DiscreteMap":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class QuadPointJet:
    """Everything needed to evaluate a pointwise density at one (or many) Gauss points."""

    x: np.ndarray
    weight: np.ndarray
    G: np.ndarray
    Hf: np.ndarray
    Df: np.ndarray


def evaluate(f: DiscreteMap, quad: Quadrature):
    """Mapped points and differentials at the quadrature points.

    Returns
    -------
    y : (n, d) values ``f(x)``
    Df : (n, d, d) with ``Df[p, alpha, i] = d_i f^alpha``
    """
    if quad.grid != f.source:
        raise DimensionError("quadrature grid does not match the map's source grid")
    return quad.interpolate(f.values), quad.gradient(f.values)


def target_points(y, h: MetricField, clamp=False):
    """Check (or clamp) mapped points against the target chart.

    Returns the points to evaluate ``h`` at and how many were clamped.
    """
    inside = h.chart.contains(y)
    n_out = int(np.count_nonzero(~inside))
    if n_out == 0:
        return y, 0
    if not clamp:
        raise OutOfChartError(f"{n_out} mapped points fall outside the chart of {h.label!r}")
    return h.chart.clip(y), n_out


def _local_shape(grid: ChartGrid, local):
    local = np.asarray(local, dtype=float)
    if local.shape != (grid.dim,) or np.any(local < 0) or np.any(local > 1):
        raise DimensionError("local coordinates must lie in [0, 1]^d")
    offsets = np.array(list(np.ndindex(*(2,) * grid.dim)))
    val = np.where(offsets == 1, local, 1.0 - local)
    der = np.where(offsets == 1, 1.0, -1.0) / grid.spacing
    shape = np.prod(val, axis=-1)
    dshape = np.empty(val.shape)
    for k in range(grid.dim):
        dshape[:, k] = der[:, k] * np.prod(np.delete(val, k, axis=-1), axis=-1)
    return offsets, shape, dshape


def _cell_corner_values(f: DiscreteMap, cell):
    cell = tuple(int(c) for c in np.atleast_1d(cell))
    if len(cell) != f.dim or any(not 0 <= c < n for c, n in zip(cell, f.source.cells)):
        raise DimensionError(f"invalid cell index {cell}")
    offsets = np.array(list(np.ndindex(*(2,) * f.dim)))
    return np.stack([f.values[tuple(np.add(cell, o))] for o in offsets])


def point_at(f: DiscreteMap, cell, gauss_point) -> tuple:
    """Source point ``x`` and value ``f(x)`` at local coordinates of a cell."""
    _, shape, _ = _local_shape(f.source, gauss_point)
    corner_vals = _cell_corner_values(f, cell)
    x = np.array(f.source.lower) + (np.asarray(cell) + np.asarray(gauss_point)) * f.source.spacing
    return x, shape @ corner_vals


def differential_at(f: DiscreteMap, cell, gauss_point) -> np.ndarray:
    """Differential ``d_i f^alpha`` at local coordinates ``gauss_point`` in ``cell``.

    Exact for nodal values sampled from an affine map.
    """
    _, _, dshape = _local_shape(f.source, gauss_point)
    corner_vals = _cell_corner_values(f, cell)
    return np.einsum("ca,ci->ai", corner_vals, dshape)


def pullback_metric(Df, Hf) -> np.ndarray:
    """``(f*h)_ij = d_i f^a d_j f^b h_ab`` for stacks of differentials."""
    return np.swapaxes(Df, -1, -2) @ Hf @ Df


def pullback_metric_at(f: DiscreteMap, h: MetricField, cell, gauss_point) -> np.ndarray:
    _, y = point_at(f, cell, gauss_point)
    y, _ = target_points(y[None, :], h)
    Df = differential_at(f, cell, gauss_point)
    return pullback_metric(Df, h.metric(y)[0])


def jet_at(f: DiscreteMap, g: MetricField, h: MetricField, cell, gauss_point,
           weight=1.0) -> QuadPointJet:
    x, y = point_at(f, cell, gauss_point)
    y, _ = target_points(y[None, :], h)
    G = g.metric(x[None, :])[0]
    return QuadPointJet(x, weight * np.sqrt(np.linalg.det(G)), G, h.metric(y)[0],
                        differential_at(f, cell, gauss_point))


def jets(f: DiscreteMap, g: MetricField, h: MetricField, quad: Quadrature, clamp=False):
    """Batched jets at all quadrature points, plus the clamped-point count."""
    y, Df = evaluate(f, quad)
    y, n_clamped = target_points(y, h, clamp)
    G = g.metric(quad.points)
    w = quad.weights * np.sqrt(np.linalg.det(G))
    return QuadPointJet(quad.points, w, G, h.metric(y, check=not clamp), Df), n_clamped


def pointwise_distortion(jet: QuadPointJet):
    """``dist(df, SO(g, f*h))`` at the jet's point(s)."""
    return dist_to_so(jet.Df, jet.G, jet.Hf)


def refine(f: DiscreteMap) -> DiscreteMap:
    """Dyadic refinement by multilinear interpolation; coarse nodes are kept exactly."""
    vals = f.values
    mask = f.boundary_mask
    standard = np.array_equal(mask, f.source.boundary_mask())
    for axis in range(f.dim):
        n = vals.shape[axis]
        shape = list(vals.shape)
        shape[axis] = 2 * n - 1
        out = np.empty(shape)
        mout = np.empty(shape[: f.dim], dtype=bool)
        even = [slice(None)] * vals.ndim
        odd = [slice(None)] * vals.ndim
        lo = [slice(None)] * vals.ndim
        hi = [slice(None)] * vals.ndim
        even[axis], odd[axis] = slice(0, None, 2), slice(1, None, 2)
        lo[axis], hi[axis] = slice(0, -1), slice(1, None)
        out[tuple(even)] = vals
        out[tuple(odd)] = 0.5 * (vals[tuple(lo)] + vals[tuple(hi)])
        k = f.dim
        mout[tuple(even[:k])] = mask
        mout[tuple(odd[:k])] = mask[tuple(lo[:k])] & mask[tuple(hi[:k])]
        vals, mask = out, mout
    grid = f.source.refined()
    if standard:
        mask = grid.boundary_mask()
    return DiscreteMap(grid, vals, mask)
