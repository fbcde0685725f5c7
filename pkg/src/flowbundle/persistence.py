"""Vietoris-Rips persistent cohomology over a prime field, with cocycles.

Dimension-0 classes come from a union-find pass over the edges. Higher
dimensions use coboundary (cohomology) reduction with clearing: columns are
the d-simplices in decreasing filtration order, rows their (d+1)-cofacets,
and the pivot of a column is its cofacet appearing earliest in the forward
filtration. The combination of original columns accumulated while reducing is
exactly a representative cocycle of the class, valid in every complex below
the death scale; dimension-1 representatives are returned for use by the
circular-coordinates solver.

Filtration order is (diameter, lexicographic vertex tuple), which fixes all
tie-breaking deterministically.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange, types
from numba.typed import Dict
from scipy.spatial.distance import pdist, squareform

from .errors import NotPrime, TooLarge

MAX_POINTS_DIM2 = 1200
DEFAULT_PRIME = 47


# -- result types ---------------------------------------------------------------

@dataclass
class PersistenceDiagram:
    """Multiset of (dim, birth, death) points; death may be inf.

    Points are ordered by dimension, then decreasing persistence, then birth.
    """

    dims: np.ndarray
    births: np.ndarray
    deaths: np.ndarray

    def __len__(self) -> int:
        return len(self.dims)

    def in_dim(self, dim: int) -> np.ndarray:
        return np.nonzero(self.dims == dim)[0]

    def betti_at_scale(self, s: float):
        """(beta_0, beta_1, beta_2) of the complex at scale s: birth <= s < death."""
        alive = (self.births <= s) & (s < self.deaths)
        return tuple(int(np.sum(alive & (self.dims == d))) for d in range(3))

    def to_csv(self) -> str:
        lines = ["dim,birth,death"]
        for d, b, dd in zip(self.dims, self.births, self.deaths):
            dstr = "inf" if np.isinf(dd) else f"{dd:.17g}"
            lines.append(f"{int(d)},{b:.17g},{dstr}")
        return "\n".join(lines) + "\n"


@dataclass
class Cocycle:
    """Representative 1-cocycle: value coeffs[i] (mod prime) on oriented edge
    edges[i] = (a, b) with a < b, valid in the Rips complex at any scale below
    the class death."""

    dim: int
    edges: np.ndarray   # (k, 2) int
    coeffs: np.ndarray  # (k,) int in [1, prime)
    birth: float
    prime: int


@dataclass
class RipsResult:
    diagram: PersistenceDiagram
    cocycles: list  # Cocycle per dim-1 diagram point, same order
    max_scale: float
    prime: int


def is_prime(p: int) -> bool:
    if p < 2:
        return False
    i = 2
    while i * i <= p:
        if p % i == 0:
            return False
        i += 1
    return True


def enclosing_radius(dist: np.ndarray) -> float:
    """min over points of the max distance to any other point.

    Beyond this scale the complex is a cone, so every class has died.
    """
    return float(np.min(np.max(dist, axis=1)))


# -- numba kernels ----------------------------------------------------------------

@njit(cache=True)
def _union_find_dim0(n, edge_a, edge_b):
    """Merge flags per forward-sorted edge: True where the edge joins components."""
    parent = np.arange(n)
    merges = np.zeros(len(edge_a), dtype=np.bool_)
    for e in range(len(edge_a)):
        ra = edge_a[e]
        while parent[ra] != ra:
            parent[ra] = parent[parent[ra]]
            ra = parent[ra]
        rb = edge_b[e]
        while parent[rb] != rb:
            parent[rb] = parent[parent[rb]]
            rb = parent[rb]
        if ra != rb:
            # deterministic: larger root attaches under smaller
            if ra < rb:
                parent[rb] = ra
            else:
                parent[ra] = rb
            merges[e] = True
    return merges


@njit(cache=True, inline="always")
def _modinv(a, p):
    # extended Euclid; a in [1, p)
    t, newt = 0, 1
    r, newr = p, a
    while newr != 0:
        q = r // newr
        t, newt = newt, t - q * newt
        r, newr = newr, r - q * newr
    if t < 0:
        t += p
    return t


@njit(cache=True, inline="always")
def _pack_insert(verts, w, n):
    """Base-n key of sorted(verts + [w]) and the insertion position of w."""
    key = np.int64(0)
    pos = 0
    inserted = False
    for i in range(verts.shape[0]):
        v = np.int64(verts[i])
        if not inserted and w < v:
            key = key * n + w
            inserted = True
        if not inserted:
            pos += 1
        key = key * n + v
    if not inserted:
        key = key * n + w
    return key, pos


@njit(cache=True, parallel=True)
def _bulk_min_cofacet(dist, col_verts, col_diam, max_scale):
    """Per column, the earliest cofacet in filtration order: min (diameter, key).

    This is the hot loop of the whole reduction (columns x points work), so it
    runs in parallel and defers key packing to diameter ties.
    """
    n = dist.shape[0]
    C, dv = col_verts.shape
    keys = np.full(C, -1, dtype=np.int64)
    diams = np.full(C, np.inf)
    for c in prange(C):
        base = col_diam[c]
        best_d = np.inf
        best_w = -1
        for w in range(n):
            member = False
            for i in range(dv):
                if col_verts[c, i] == w:
                    member = True
                    break
            if member:
                continue
            dmax = base
            for i in range(dv):
                dd = dist[w, col_verts[c, i]]
                if dd > dmax:
                    dmax = dd
            if dmax > max_scale:
                continue
            if dmax < best_d:
                best_d = dmax
                best_w = w
            elif dmax == best_d and best_w != -1:
                k_new, _ = _pack_insert(col_verts[c], w, n)
                k_old, _ = _pack_insert(col_verts[c], best_w, n)
                if k_new < k_old:
                    best_w = w
        if best_w != -1:
            key, _ = _pack_insert(col_verts[c], best_w, n)
            keys[c] = key
            diams[c] = best_d
    return keys, diams


@njit(cache=True, inline="always")
def _heap_push(hd, hk, hc, size, d, k, c):
    i = size
    hd[i] = d
    hk[i] = k
    hc[i] = c
    while i > 0:
        parent = (i - 1) >> 1
        if hd[parent] > hd[i] or (hd[parent] == hd[i] and hk[parent] > hk[i]):
            hd[parent], hd[i] = hd[i], hd[parent]
            hk[parent], hk[i] = hk[i], hk[parent]
            hc[parent], hc[i] = hc[i], hc[parent]
            i = parent
        else:
            break
    return size + 1


@njit(cache=True, inline="always")
def _heap_pop(hd, hk, hc, size):
    last = size - 1
    hd[0], hd[last] = hd[last], hd[0]
    hk[0], hk[last] = hk[last], hk[0]
    hc[0], hc[last] = hc[last], hc[0]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= last:
            break
        right = left + 1
        child = left
        if right < last and (hd[right] < hd[left] or
                             (hd[right] == hd[left] and hk[right] < hk[left])):
            child = right
        if hd[child] < hd[i] or (hd[child] == hd[i] and hk[child] < hk[i]):
            hd[child], hd[i] = hd[i], hd[child]
            hk[child], hk[i] = hk[i], hk[child]
            hc[child], hc[i] = hc[i], hc[child]
            i = child
        else:
            break
    return last


@njit(cache=True)
def _reduce_dimension(dist, col_verts, col_diam, cleared, max_scale, p,
                      first_keys, first_diams):
    """Coboundary reduction of one dimension's columns (reverse filtration order).

    first_keys/first_diams hold each column's precomputed minimal cofacet.
    Returns per-column status (0 skipped, 1 paired, 2 essential), death
    diameters, V-column storage (the representative cocycles), and the claimed
    pivot keys (the next dimension's cleared simplices).
    """
    n = dist.shape[0]
    C, dv = col_verts.shape

    status = np.zeros(C, dtype=np.int8)
    death = np.full(C, np.inf)
    vptr = np.full(C, -1, dtype=np.int64)  # -1: implicit V = [self]
    vlen = np.zeros(C, dtype=np.int64)

    pivot_owner = Dict.empty(key_type=types.int64, value_type=types.int64)
    slot_col = np.full(C + 1, -1, dtype=np.int64)
    slot_pivcoef = np.zeros(C + 1, dtype=np.int64)
    claimed = np.empty(C + 1, dtype=np.int64)
    n_slots = 0

    # explicit V storage, grown by doubling
    ve_items = np.empty(1024, dtype=np.int64)
    ve_coeffs = np.empty(1024, dtype=np.int64)
    ve_size = 0
    ve_start = np.full(C + 1, -1, dtype=np.int64)
    ve_nnz = np.zeros(C + 1, dtype=np.int64)

    for ci in range(C - 1, -1, -1):
        if cleared[ci]:
            continue
        best_key = first_keys[ci]
        best_diam = first_diams[ci]
        if best_key == np.int64(-1):
            status[ci] = 2
            continue
        if best_key not in pivot_owner:
            slot = n_slots
            n_slots += 1
            pivot_owner[best_key] = slot
            slot_col[slot] = ci
            slot_pivcoef[slot] = _pivot_sign_single(col_verts[ci], best_key, n, p)
            claimed[slot] = best_key
            status[ci] = 1
            death[ci] = best_diam
            continue

        # slow path: working column as a lazy min-heap of (diam, key, coeff)
        hd = np.empty(4 * n, dtype=np.float64)
        hk = np.empty(4 * n, dtype=np.int64)
        hc = np.empty(4 * n, dtype=np.int64)
        hsize = 0
        vdict = Dict.empty(key_type=types.int64, value_type=types.int64)
        vdict[np.int64(ci)] = np.int64(1)
        hd, hk, hc, hsize = _push_cofacets(hd, hk, hc, hsize, dist,
                                           col_verts[ci], np.int64(1),
                                           max_scale, n, p)
        while True:
            # pop the minimal group, combining coefficients mod p
            if hsize == 0:
                status[ci] = 2
                break
            pdiam = hd[0]
            pkey = hk[0]
            pcoef = np.int64(0)
            while hsize > 0 and hd[0] == pdiam and hk[0] == pkey:
                pcoef = (pcoef + hc[0]) % p
                hsize = _heap_pop(hd, hk, hc, hsize)
            if pcoef == 0:
                continue
            if pkey not in pivot_owner:
                slot = n_slots
                n_slots += 1
                pivot_owner[pkey] = slot
                slot_col[slot] = ci
                slot_pivcoef[slot] = pcoef
                claimed[slot] = pkey
                status[ci] = 1
                death[ci] = pdiam
                break
            owner = pivot_owner[pkey]
            lam = ((p - pcoef) * _modinv(slot_pivcoef[owner], p)) % p
            # push the pivot group back; the owner's column re-adds it with
            # the opposite coefficient, so the group cancels lazily
            if hsize + 1 > hd.shape[0]:
                hd = _grow_f(hd)
                hk = _grow(hk)
                hc = _grow(hc)
            hsize = _heap_push(hd, hk, hc, hsize, pdiam, pkey, pcoef)
            if ve_start[owner] == -1:
                oc = slot_col[owner]
                key = np.int64(oc)
                if key in vdict:
                    vdict[key] = (vdict[key] + lam) % p
                else:
                    vdict[key] = lam
                hd, hk, hc, hsize = _push_cofacets(hd, hk, hc, hsize, dist,
                                                   col_verts[oc], lam,
                                                   max_scale, n, p)
            else:
                s0 = ve_start[owner]
                for q in range(ve_nnz[owner]):
                    co = ve_items[s0 + q]
                    cf = (lam * ve_coeffs[s0 + q]) % p
                    if cf == 0:
                        continue
                    if co in vdict:
                        vdict[co] = (vdict[co] + cf) % p
                    else:
                        vdict[co] = cf
                    hd, hk, hc, hsize = _push_cofacets(hd, hk, hc, hsize, dist,
                                                       col_verts[co], cf,
                                                       max_scale, n, p)
        # store explicit V for this column (paired or essential)
        nnz = 0
        for k in vdict:
            if vdict[k] != 0:
                nnz += 1
        while ve_size + nnz > ve_items.shape[0]:
            ve_items = _grow(ve_items)
            ve_coeffs = _grow(ve_coeffs)
        keys_arr = np.empty(len(vdict), dtype=np.int64)
        kk = 0
        for k in vdict:
            keys_arr[kk] = k
            kk += 1
        keys_arr = np.sort(keys_arr)
        if status[ci] == 1:
            slot = n_slots - 1
            ve_start[slot] = ve_size
            ve_nnz[slot] = nnz
        vptr[ci] = ve_size
        vlen[ci] = nnz
        for q in range(keys_arr.shape[0]):
            k = keys_arr[q]
            if vdict[k] != 0:
                ve_items[ve_size] = k
                ve_coeffs[ve_size] = vdict[k]
                ve_size += 1

    return (status, death, vptr, vlen, ve_items[:ve_size], ve_coeffs[:ve_size],
            claimed[:n_slots])


@njit(cache=True, inline="always")
def _pivot_sign_single(verts, key, n, p):
    """Coefficient (mod p) of delta(sigma) at the cofacet with the given key."""
    # unpack cofacet, find the vertex not in sigma, sign = parity of its position
    dv = verts.shape[0]
    vs = np.empty(dv + 1, dtype=np.int64)
    k = key
    for i in range(dv, -1, -1):
        vs[i] = k % n
        k //= n
    pos = -1
    for i in range(dv + 1):
        found = False
        for j in range(dv):
            if verts[j] == vs[i]:
                found = True
                break
        if not found:
            pos = i
            break
    if pos % 2 == 0:
        return np.int64(1)
    return np.int64(p - 1)


@njit(cache=True)
def _grow(arr):
    out = np.empty(arr.shape[0] * 2, dtype=arr.dtype)
    out[:arr.shape[0]] = arr
    return out


@njit(cache=True)
def _grow_f(arr):
    out = np.empty(arr.shape[0] * 2, dtype=np.float64)
    out[:arr.shape[0]] = arr
    return out


@njit(cache=True)
def _push_cofacets(hd, hk, hc, hsize, dist, verts, scalar, max_scale, n, p):
    """Push scalar * delta(simplex) onto the working-column heap."""
    dv = verts.shape[0]
    base = 0.0
    for i in range(dv):
        for j in range(i + 1, dv):
            dd = dist[verts[i], verts[j]]
            if dd > base:
                base = dd
    for w in range(n):
        member = False
        for i in range(dv):
            if verts[i] == w:
                member = True
                break
        if member:
            continue
        dmax = base
        for i in range(dv):
            dd = dist[w, verts[i]]
            if dd > dmax:
                dmax = dd
        if dmax > max_scale:
            continue
        key, pos = _pack_insert(verts, w, n)
        coeff = scalar if pos % 2 == 0 else (p - scalar) % p
        if coeff == 0:
            continue
        if hsize + 1 > hd.shape[0]:
            hd = _grow_f(hd)
            hk = _grow(hk)
            hc = _grow(hc)
        hsize = _heap_push(hd, hk, hc, hsize, dmax, key, coeff)
    return hd, hk, hc, hsize


@njit(cache=True)
def _count_triangles(dist, max_scale):
    n = dist.shape[0]
    c = 0
    for i in range(n):
        for j in range(i + 1, n):
            if dist[i, j] > max_scale:
                continue
            for k in range(j + 1, n):
                if dist[i, k] <= max_scale and dist[j, k] <= max_scale:
                    c += 1
    return c


@njit(cache=True)
def _fill_triangles(dist, max_scale, verts, diam):
    n = dist.shape[0]
    idx = 0
    for i in range(n):
        for j in range(i + 1, n):
            dij = dist[i, j]
            if dij > max_scale:
                continue
            for k in range(j + 1, n):
                dik = dist[i, k]
                djk = dist[j, k]
                if dik <= max_scale and djk <= max_scale:
                    verts[idx, 0] = i
                    verts[idx, 1] = j
                    verts[idx, 2] = k
                    d = dij
                    if dik > d:
                        d = dik
                    if djk > d:
                        d = djk
                    diam[idx] = d
                    idx += 1
    return idx


# -- orchestration ----------------------------------------------------------------

def _forward_sort(verts, diam):
    keys = tuple(verts[:, i] for i in range(verts.shape[1] - 1, -1, -1)) + (diam,)
    order = np.lexsort(keys)
    return verts[order], diam[order]


def rips_persistence(points=None, dist=None, max_dim: int = 1,
                     max_scale: float | None = None,
                     prime: int = DEFAULT_PRIME) -> RipsResult:
    """Persistence diagram of the Rips filtration, with dim-1 cocycles.

    Either a point cloud or a full distance matrix may be given. max_scale
    defaults to the enclosing radius. Guards: prime must be prime, and point
    sets above 1200 are rejected for max_dim >= 2.
    """
    if not is_prime(prime):
        raise NotPrime(f"{prime} is not prime")
    if dist is None:
        points = np.asarray(points, dtype=float)
        if points.ndim != 2:
            raise ValueError("points must be 2-D")
        dist = squareform(pdist(points)) if points.shape[0] > 1 else np.zeros((1, 1))
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if n == 0:
        raise ValueError("empty point set")
    if max_dim >= 2 and n > MAX_POINTS_DIM2:
        raise TooLarge(f"{n} points exceeds the {MAX_POINTS_DIM2} guard for max_dim >= 2")
    if max_scale is None:
        max_scale = enclosing_radius(dist) if n > 1 else 0.0
    max_scale = float(max_scale)

    dims, births, deaths = [], [], []
    cocycle_per_point = []

    # edges, forward filtration order
    iu, ju = np.triu_indices(n, k=1)
    ediam = dist[iu, ju]
    keep = ediam <= max_scale
    everts = np.stack([iu[keep], ju[keep]], axis=1).astype(np.int64)
    ediam = ediam[keep]
    everts, ediam = _forward_sort(everts, ediam)

    merges = _union_find_dim0(n, everts[:, 0], everts[:, 1]) if len(ediam) else \
        np.zeros(0, dtype=bool)
    for e in np.nonzero(merges)[0]:
        if ediam[e] > 0.0:
            dims.append(0)
            births.append(0.0)
            deaths.append(float(ediam[e]))
            cocycle_per_point.append(None)
    n_components = n - int(np.sum(merges))
    for _ in range(n_components):
        dims.append(0)
        births.append(0.0)
        deaths.append(np.inf)
        cocycle_per_point.append(None)

    claimed_from_d1 = np.empty(0, dtype=np.int64)
    if max_dim >= 1 and len(ediam):
        fk, fd = _bulk_min_cofacet(dist, everts, ediam, max_scale)
        status, death, vptr, vlen, ve_items, ve_coeffs, claimed_from_d1 = _reduce_dimension(
            dist, everts, ediam, merges, max_scale, prime, fk, fd)
        for ci in range(len(status)):
            if status[ci] == 0:
                continue
            b = float(ediam[ci])
            dth = float(death[ci]) if status[ci] == 1 else np.inf
            if dth <= b:
                continue
            dims.append(1)
            births.append(b)
            deaths.append(dth)
            cocycle_per_point.append(_extract_cocycle(
                ci, vptr, vlen, ve_items, ve_coeffs, everts, b, prime))

    if max_dim >= 2 and len(ediam):
        nt = _count_triangles(dist, max_scale)
        tverts = np.empty((nt, 3), dtype=np.int64)
        tdiam = np.empty(nt)
        _fill_triangles(dist, max_scale, tverts, tdiam)
        tverts, tdiam = _forward_sort(tverts, tdiam)
        tkeys = (tverts[:, 0] * n + tverts[:, 1]) * n + tverts[:, 2]
        cleared = np.isin(tkeys, claimed_from_d1)
        fk2, fd2 = _bulk_min_cofacet(dist, tverts, tdiam, max_scale)
        status2, death2, _, _, _, _, _ = _reduce_dimension(
            dist, tverts, tdiam, cleared, max_scale, prime, fk2, fd2)
        for ci in range(len(status2)):
            if status2[ci] == 0:
                continue
            b = float(tdiam[ci])
            dth = float(death2[ci]) if status2[ci] == 1 else np.inf
            if dth <= b:
                continue
            dims.append(2)
            births.append(b)
            deaths.append(dth)
            cocycle_per_point.append(None)

    dims = np.asarray(dims, dtype=int)
    births = np.asarray(births, dtype=float)
    deaths = np.asarray(deaths, dtype=float)
    pers = np.where(np.isinf(deaths), np.inf, deaths - births)
    order = np.lexsort((births, -pers, dims))
    diagram = PersistenceDiagram(dims[order], births[order], deaths[order])
    cocycles = [cocycle_per_point[i] for i in order if dims[i] == 1]
    return RipsResult(diagram=diagram, cocycles=cocycles,
                      max_scale=max_scale, prime=prime)


def _extract_cocycle(ci, vptr, vlen, ve_items, ve_coeffs, everts, birth, prime):
    if vptr[ci] == -1:
        idxs = np.array([ci])
        cfs = np.array([1])
    else:
        lo = int(vptr[ci])
        hi = lo + int(vlen[ci])
        idxs = ve_items[lo:hi]
        cfs = ve_coeffs[lo:hi]
    keep = cfs % prime != 0
    return Cocycle(dim=1, edges=everts[idxs[keep]].copy(),
                   coeffs=(cfs[keep] % prime).astype(int),
                   birth=birth, prime=prime)


def betti_at_scale(diagram: PersistenceDiagram, s: float):
    """Convenience wrapper for the Betti signature at a single scale."""
    if s < 0:
        raise ValueError("scale must be >= 0")
    return diagram.betti_at_scale(s)
