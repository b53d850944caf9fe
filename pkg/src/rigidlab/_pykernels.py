"""Pure numpy/scipy implementations of the hot kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors them loop by loop.
"""
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra


def so_residual_2d(B):
    """Distance to SO(2) and a nearest rotation for a stack of 2x2 matrices.

    The nearest rotation maximizes ``tr(R^t B)``; its angle is
    ``atan2(B10 - B01, B00 + B11)``.  When both arguments vanish (scaled
    reflections, including 0) every rotation is equally close and the
    identity is returned.

    Parameters
    ----------
    B : ndarray, shape (n, 2, 2)

    Returns
    -------
    dist : ndarray, shape (n,)
    R : ndarray, shape (n, 2, 2)
    """
    B = np.ascontiguousarray(B, dtype=float)
    s = B[:, 0, 0] + B[:, 1, 1]
    t = B[:, 1, 0] - B[:, 0, 1]
    m = np.hypot(s, t)
    safe = m > 0.0
    c = np.where(safe, s / np.where(safe, m, 1.0), 1.0)
    sn = np.where(safe, t / np.where(safe, m, 1.0), 0.0)
    R = np.empty_like(B)
    R[:, 0, 0] = c
    R[:, 0, 1] = -sn
    R[:, 1, 0] = sn
    R[:, 1, 1] = c
    D = B - R
    dist = np.sqrt(np.einsum("nij,nij->n", D, D))
    return dist, R


def _grid_edges(nx, ny, wE, wN, wNE, wNW):
    idx = np.arange(nx * ny).reshape(nx, ny)
    rows = [idx[:-1, :], idx[:, :-1], idx[:-1, :-1], idx[1:, :-1]]
    cols = [idx[1:, :], idx[:, 1:], idx[1:, 1:], idx[:-1, 1:]]
    data = [wE, wN, wNE, wNW]
    r = np.concatenate([a.ravel() for a in rows])
    c = np.concatenate([a.ravel() for a in cols])
    w = np.concatenate([np.asarray(a, dtype=float).ravel() for a in data])
    return r, c, w


def grid_dijkstra(wE, wN, wNE, wNW, src, dst):
    """Shortest-path length between two nodes of an 8-neighbour grid graph.

    Node ``(i, j)`` has flat index ``i * ny + j``.  Edge weights:

    - ``wE[i, j]``  for ``(i, j) -- (i+1, j)``
    - ``wN[i, j]``  for ``(i, j) -- (i, j+1)``
    - ``wNE[i, j]`` for ``(i, j) -- (i+1, j+1)``
    - ``wNW[i, j]`` for ``(i+1, j) -- (i, j+1)``
    """
    nx, ny = wN.shape[0], wE.shape[1]
    r, c, w = _grid_edges(nx, ny, wE, wN, wNE, wNW)
    # explicit zeros would be dropped by the sparse format
    w = np.maximum(w, np.finfo(float).tiny)
    graph = coo_matrix((w, (r, c)), shape=(nx * ny, nx * ny)).tocsr()
    dist = dijkstra(graph, directed=False, indices=int(src))
    return float(dist[int(dst)])
