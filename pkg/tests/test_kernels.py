import importlib

import numpy as np
import pytest
from scipy.sparse.csgraph import dijkstra as sp_dijkstra
from scipy.sparse import coo_matrix

from rigidlab import _pykernels, kernels
from rigidlab.algebra import nearest_rotation, so_distance

try:
    from rigidlab import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = [pytest.param(_pykernels, id="python"),
            pytest.param(_ckernels, id="cython",
                         marks=pytest.mark.skipif(_ckernels is None, reason="extension not built"))]


@pytest.mark.parametrize("mod", BACKENDS)
def test_so_residual_2d_against_svd(mod, rng):
    B = rng.standard_normal((500, 2, 2)) * rng.uniform(0.1, 3.0, (500, 1, 1))
    dist, R = mod.so_residual_2d(B)
    assert np.allclose(dist, so_distance(B), atol=1e-12)
    assert np.allclose(np.linalg.det(R), 1.0, atol=1e-12)
    assert np.allclose(R @ np.swapaxes(R, 1, 2), np.eye(2), atol=1e-12)
    safe = np.hypot(B[:, 0, 0] + B[:, 1, 1], B[:, 1, 0] - B[:, 0, 1]) > 1e-6
    assert np.allclose(R[safe], nearest_rotation(B[safe]), atol=1e-10)


@pytest.mark.parametrize("mod", BACKENDS)
def test_so_residual_2d_degenerate(mod):
    B = np.array([np.zeros((2, 2)), np.diag([1.0, -1.0]), np.eye(2)])
    dist, R = mod.so_residual_2d(B)
    assert np.allclose(R[0], np.eye(2)) and np.allclose(R[1], np.eye(2))
    assert dist[0] == pytest.approx(np.sqrt(2.0))
    assert dist[1] == pytest.approx(2.0)
    assert dist[2] == 0.0


def _random_weights(rng, nx, ny):
    return [rng.uniform(0.5, 1.5, s) for s in ((nx - 1, ny), (nx, ny - 1), (nx - 1, ny - 1), (nx - 1, ny - 1))]


def _reference_dijkstra(w, nx, ny, src, dst):
    """Build the 8-neighbour graph edge by edge, independently of the kernels."""
    rows, cols, vals = [], [], []
    wE, wN, wNE, wNW = w
    node = lambda i, j: i * ny + j  # noqa: E731
    for i in range(nx):
        for j in range(ny):
            if i + 1 < nx:
                rows.append(node(i, j)); cols.append(node(i + 1, j)); vals.append(wE[i, j])
            if j + 1 < ny:
                rows.append(node(i, j)); cols.append(node(i, j + 1)); vals.append(wN[i, j])
            if i + 1 < nx and j + 1 < ny:
                rows.append(node(i, j)); cols.append(node(i + 1, j + 1)); vals.append(wNE[i, j])
                rows.append(node(i + 1, j)); cols.append(node(i, j + 1)); vals.append(wNW[i, j])
    g = coo_matrix((vals, (rows, cols)), shape=(nx * ny, nx * ny)).tocsr()
    return sp_dijkstra(g, directed=False, indices=src)[dst]


@pytest.mark.parametrize("mod", BACKENDS)
def test_grid_dijkstra_matches_reference(mod, rng):
    nx, ny = 13, 9
    w = _random_weights(rng, nx, ny)
    for src, dst in [(0, nx * ny - 1), (5, 77), (ny - 1, (nx - 1) * ny)]:
        ref = _reference_dijkstra(w, nx, ny, src, dst)
        assert mod.grid_dijkstra(*w, src, dst) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("mod", BACKENDS)
def test_grid_dijkstra_uniform(mod):
    n = 11
    h = 0.1
    w = [np.full((n - 1, n), h), np.full((n, n - 1), h),
         np.full((n - 1, n - 1), h * np.sqrt(2)), np.full((n - 1, n - 1), h * np.sqrt(2))]
    assert mod.grid_dijkstra(*w, 0, n * n - 1) == pytest.approx(np.sqrt(2.0), abs=1e-12)
    assert mod.grid_dijkstra(*w, 0, (n - 1) * n) == pytest.approx(1.0, abs=1e-12)
    assert mod.grid_dijkstra(*w, 7, 7) == 0.0


@pytest.mark.skipif(_ckernels is None, reason="extension not built")
def test_backends_agree(rng):
    B = rng.standard_normal((2000, 2, 2))
    d0, R0 = _pykernels.so_residual_2d(B)
    d1, R1 = _ckernels.so_residual_2d(B)
    assert np.allclose(d0, d1, rtol=1e-14, atol=1e-15)
    assert np.allclose(R0, R1, atol=1e-15)
    w = _random_weights(rng, 40, 40)
    assert _pykernels.grid_dijkstra(*w, 0, 1599) == pytest.approx(_ckernels.grid_dijkstra(*w, 0, 1599), rel=1e-14)


def test_so_residual_general_dims(rng):
    for d in (2, 3):
        B = rng.standard_normal((300, d, d))
        dist, R = kernels.so_residual(B)
        assert np.allclose(dist, so_distance(B), atol=1e-10)
        assert np.allclose(np.linalg.det(R), 1.0)


def test_pure_python_switch(monkeypatch):
    monkeypatch.setenv("RIGIDLAB_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
        assert mod.so_residual_2d is _pykernels.so_residual_2d
    finally:
        monkeypatch.delenv("RIGIDLAB_PURE_PYTHON")
        importlib.reload(kernels)
    if _ckernels is not None:
        assert kernels.BACKEND == "cython"
