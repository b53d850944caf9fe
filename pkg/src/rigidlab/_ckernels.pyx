# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, hypot, INFINITY
from libc.stdlib cimport malloc, realloc, free

cnp.import_array()


def so_residual_2d(B):
    """Distance to SO(2) and a nearest rotation for a stack of 2x2 matrices."""
    cdef double[:, :, ::1] b = np.ascontiguousarray(B, dtype=np.float64)
    cdef Py_ssize_t n = b.shape[0], k
    dist_arr = np.empty(n, dtype=np.float64)
    R_arr = np.empty((n, 2, 2), dtype=np.float64)
    cdef double[::1] dist = dist_arr
    cdef double[:, :, ::1] R = R_arr
    cdef double s, t, m, c, sn, d00, d01, d10, d11
    with nogil:
        for k in range(n):
            s = b[k, 0, 0] + b[k, 1, 1]
            t = b[k, 1, 0] - b[k, 0, 1]
            m = hypot(s, t)
            if m > 0.0:
                c = s / m
                sn = t / m
            else:
                c = 1.0
                sn = 0.0
            R[k, 0, 0] = c
            R[k, 0, 1] = -sn
            R[k, 1, 0] = sn
            R[k, 1, 1] = c
            d00 = b[k, 0, 0] - c
            d01 = b[k, 0, 1] + sn
            d10 = b[k, 1, 0] - sn
            d11 = b[k, 1, 1] - c
            dist[k] = sqrt(d00 * d00 + d01 * d01 + d10 * d10 + d11 * d11)
    return dist_arr, R_arr


cdef struct HeapItem:
    double key
    Py_ssize_t node


cdef struct Heap:
    HeapItem* items
    Py_ssize_t size
    Py_ssize_t cap


cdef int heap_push(Heap* h, double key, Py_ssize_t node) nogil:
    cdef Py_ssize_t i, parent
    cdef HeapItem tmp
    cdef HeapItem* grown
    if h.size == h.cap:
        grown = <HeapItem*> realloc(h.items, 2 * h.cap * sizeof(HeapItem))
        if grown == NULL:
            return -1
        h.items = grown
        h.cap *= 2
    i = h.size
    h.size += 1
    h.items[i].key = key
    h.items[i].node = node
    while i > 0:
        parent = (i - 1) // 2
        if h.items[parent].key <= h.items[i].key:
            break
        tmp = h.items[parent]
        h.items[parent] = h.items[i]
        h.items[i] = tmp
        i = parent
    return 0


cdef HeapItem heap_pop(Heap* h) nogil:
    cdef HeapItem top = h.items[0]
    cdef HeapItem tmp
    cdef Py_ssize_t i = 0, child
    h.size -= 1
    h.items[0] = h.items[h.size]
    while True:
        child = 2 * i + 1
        if child >= h.size:
            break
        if child + 1 < h.size and h.items[child + 1].key < h.items[child].key:
            child += 1
        if h.items[i].key <= h.items[child].key:
            break
        tmp = h.items[child]
        h.items[child] = h.items[i]
        h.items[i] = tmp
        i = child
    return top


def grid_dijkstra(wE, wN, wNE, wNW, Py_ssize_t src, Py_ssize_t dst):
    """Shortest-path length between two nodes of an 8-neighbour grid graph.

    Same edge layout as ``_pykernels.grid_dijkstra``; stops as soon as ``dst``
    is settled.
    """
    cdef double[:, ::1] e = np.ascontiguousarray(wE, dtype=np.float64)
    cdef double[:, ::1] nn = np.ascontiguousarray(wN, dtype=np.float64)
    cdef double[:, ::1] ne = np.ascontiguousarray(wNE, dtype=np.float64)
    cdef double[:, ::1] nw = np.ascontiguousarray(wNW, dtype=np.float64)
    cdef Py_ssize_t nx = nn.shape[0], ny = e.shape[1]
    cdef Py_ssize_t total = nx * ny
    if not (0 <= src < total and 0 <= dst < total):
        raise IndexError("node index out of range")
    dist_arr = np.full(total, np.inf)
    done_arr = np.zeros(total, dtype=np.uint8)
    cdef double[::1] dist = dist_arr
    cdef unsigned char[::1] done = done_arr
    cdef Heap h
    h.cap = 1024
    h.size = 0
    h.items = <HeapItem*> malloc(h.cap * sizeof(HeapItem))
    if h.items == NULL:
        raise MemoryError()
    cdef HeapItem top
    cdef Py_ssize_t u, i, j, v
    cdef double du, alt, w
    cdef int k, err = 0
    cdef Py_ssize_t[8] nbr
    cdef double[8] wt
    cdef int nnb
    dist[src] = 0.0
    heap_push(&h, 0.0, src)
    with nogil:
        while h.size > 0:
            top = heap_pop(&h)
            u = top.node
            if done[u]:
                continue
            done[u] = 1
            if u == dst:
                break
            du = dist[u]
            i = u // ny
            j = u - i * ny
            nnb = 0
            if i + 1 < nx:
                nbr[nnb] = u + ny; wt[nnb] = e[i, j]; nnb += 1
                if j + 1 < ny:
                    nbr[nnb] = u + ny + 1; wt[nnb] = ne[i, j]; nnb += 1
                if j > 0:
                    nbr[nnb] = u + ny - 1; wt[nnb] = nw[i, j - 1]; nnb += 1
            if i > 0:
                nbr[nnb] = u - ny; wt[nnb] = e[i - 1, j]; nnb += 1
                if j > 0:
                    nbr[nnb] = u - ny - 1; wt[nnb] = ne[i - 1, j - 1]; nnb += 1
                if j + 1 < ny:
                    nbr[nnb] = u - ny + 1; wt[nnb] = nw[i - 1, j]; nnb += 1
            if j + 1 < ny:
                nbr[nnb] = u + 1; wt[nnb] = nn[i, j]; nnb += 1
            if j > 0:
                nbr[nnb] = u - 1; wt[nnb] = nn[i, j - 1]; nnb += 1
            for k in range(nnb):
                v = nbr[k]
                if done[v]:
                    continue
                alt = du + wt[k]
                if alt < dist[v]:
                    dist[v] = alt
                    if heap_push(&h, alt, v) != 0:
                        err = 1
                        break
            if err:
                break
    free(h.items)
    if err:
        raise MemoryError()
    return float(dist[dst])
