"""The 3x3 flow-patch vector space: grid layout, contrast form, DCT basis, features.

A flow patch is an 18-vector (u1..u9, v1..v9). Pixel i (1-based) sits at
grid position row = (i-1) % 3, col = (i-1) // 3, i.e. the patch matrix is
stored column-major:

    (u1,v1) (u4,v4) (u7,v7)
    (u2,v2) (u5,v5) (u8,v8)
    (u3,v3) (u6,v6) (u9,v9)

Every consumer of pixel geometry (the D matrix, .flo sampling, step-edge
masks) must go through GRID_ROWS / GRID_COLS so the convention has a single
source of truth.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateSpectrumWarning, Undirectional, ZeroContrast

GRID_SIDE = 3
N_PIXELS = GRID_SIDE * GRID_SIDE

#: row/col of 0-based pixel index a: column-major layout.
GRID_ROWS = np.arange(N_PIXELS) % GRID_SIDE
GRID_COLS = np.arange(N_PIXELS) // GRID_SIDE

ZERO_CONTRAST_EPS = 1e-12
UNDIRECTIONAL_EPS = 1e-9


def grid_adjacent_pairs(side: int = GRID_SIDE):
    """The (rook-)adjacent pixel index pairs of a side x side grid.

    Column-major indexing; for the 3x3 grid this yields the 12 edges of the
    grid graph.
    """
    rows = np.arange(side * side) % side
    cols = np.arange(side * side) // side
    pairs = []
    for a in range(side * side):
        for b in range(a + 1, side * side):
            if abs(rows[a] - rows[b]) + abs(cols[a] - cols[b]) == 1:
                pairs.append((a, b))
    return pairs


def build_d_matrix(side: int = GRID_SIDE) -> np.ndarray:
    """Graph Laplacian of the grid graph: x^T D x = sum over adjacent (x_i - x_j)^2."""
    n = side * side
    d = np.zeros((n, n))
    for a, b in grid_adjacent_pairs(side):
        d[a, a] += 1.0
        d[a, b] -= 1.0
        d[b, a] -= 1.0
        d[b, b] += 1.0
    return d


@lru_cache(maxsize=None)
def d_matrix() -> np.ndarray:
    m = build_d_matrix()
    m.setflags(write=False)
    return m


def split_uv(patch: np.ndarray):
    """Split (..., 18) patches into u and v components of shape (..., 9)."""
    patch = np.asarray(patch, dtype=float)
    return patch[..., :N_PIXELS], patch[..., N_PIXELS:]


def contrast_norm(patch: np.ndarray) -> np.ndarray:
    """Contrast norm sqrt(u^T D u + v^T D v); zero iff u and v are constant."""
    u, v = split_uv(patch)
    d = d_matrix()
    q = np.einsum("...i,ij,...j->...", u, d, u) + np.einsum("...i,ij,...j->...", v, d, v)
    return np.sqrt(np.maximum(q, 0.0))


def mean_flow(patch: np.ndarray) -> np.ndarray:
    """Per-patch mean (u, v), shape (..., 2)."""
    u, v = split_uv(patch)
    return np.stack([u.mean(axis=-1), v.mean(axis=-1)], axis=-1)


def normalize_patch(patch: np.ndarray):
    """Mean-center and contrast-normalize one patch.

    Returns (normalized, mean_flow, contrast) such that
    contrast * normalized + mean_flow (per component) reconstructs the input.

    Raises ZeroContrast when the contrast norm is <= 1e-12.
    """
    patch = np.asarray(patch, dtype=float)
    c = float(contrast_norm(patch))
    if c <= ZERO_CONTRAST_EPS:
        raise ZeroContrast(f"contrast norm {c:.3e} <= {ZERO_CONTRAST_EPS}")
    m = mean_flow(patch)
    centered = patch - np.repeat(m, N_PIXELS)
    return centered / c, m, c


def normalize_patches(patches: np.ndarray):
    """Vectorized normalize_patch over an (n, 18) array.

    Returns (normalized (n,18), means (n,2), contrasts (n,)). Raises
    ZeroContrast if any row is constant.
    """
    patches = np.asarray(patches, dtype=float)
    c = contrast_norm(patches)
    if np.any(c <= ZERO_CONTRAST_EPS):
        bad = int(np.argmin(c))
        raise ZeroContrast(f"record {bad} has contrast norm {c[bad]:.3e}")
    m = mean_flow(patches)
    centered = patches - np.repeat(m, N_PIXELS, axis=-1)
    return centered / c[:, None], m, c


# -- DCT basis ----------------------------------------------------------------

# 1-D factors over a 3-point axis. LIN is the (sign-flipped) frequency-1
# DCT-II pattern, oriented so values increase with the coordinate; QUAD is the
# frequency-2 pattern. Products of factors are eigenvectors of the grid
# Laplacian (path eigenvalues 0, 1, 3).
_CONST = np.ones(3)
_LIN = np.array([-1.0, 0.0, 1.0])
_QUAD = np.array([1.0, -2.0, 1.0])

# (col factor, row factor) per basis vector, in display order: horizontal
# then vertical linear gradients, horizontal then vertical quadratics, then
# the mixed patterns by increasing Laplacian eigenvalue.
_PATTERN_FACTORS = [
    (_LIN, _CONST),   # e1: increases left-to-right, constant in columns
    (_CONST, _LIN),   # e2: increases top-to-bottom
    (_QUAD, _CONST),  # e3: horizontal quadratic
    (_CONST, _QUAD),  # e4: vertical quadratic
    (_LIN, _LIN),     # e5: saddle
    (_QUAD, _LIN),    # e6
    (_LIN, _QUAD),    # e7
    (_QUAD, _QUAD),   # e8
]


def _analytic_patterns() -> np.ndarray:
    pats = np.empty((8, N_PIXELS))
    for k, (fc, fr) in enumerate(_PATTERN_FACTORS):
        pats[k] = fc[GRID_COLS] * fr[GRID_ROWS]
    return pats


@dataclass(frozen=True)
class DCTBasis:
    """D-orthonormal eigenbasis of the contrast form.

    range_patches[i] is the 9-vector e_{i+1}; flow_u / flow_v are the 18-vector
    embeddings with the pattern in the u (resp. v) block and zeros elsewhere.
    """

    range_patches: np.ndarray  # (8, 9)
    flow_u: np.ndarray         # (8, 18)
    flow_v: np.ndarray         # (8, 18)
    eigenvalues: np.ndarray    # (8,) D-eigenvalue of each range patch

    def flow_vector(self, index: int, component: str) -> np.ndarray:
        """e_{index}^u or e_{index}^v with 1-based index as in the figures."""
        block = self.flow_u if component == "u" else self.flow_v
        return block[index - 1]


def build_dct_basis() -> DCTBasis:
    """Construct the mean-centered, contrast-normalized DCT basis.

    D is eigendecomposed; within each eigenspace the analytic patterns are
    projected and re-orthonormalized under the D inner product (D has repeated
    eigenvalues, so raw eigenvectors are not unique), and signs are fixed by
    positive correlation with the analytic pattern.
    """
    d = d_matrix()
    evals, evecs = np.linalg.eigh(d)
    patterns = _analytic_patterns()

    # Group eigenvalues (0, 1, 2, 3, 4, 6 for the 3x3 grid).
    groups = []
    start = 0
    for i in range(1, len(evals) + 1):
        if i == len(evals) or evals[i] - evals[start] > 1e-8:
            groups.append((evals[start:i].mean(), evecs[:, start:i]))
            start = i

    range_patches = np.empty((8, N_PIXELS))
    basis_evals = np.empty(8)
    for space_val, space in groups:
        if space_val < 1e-8:
            continue  # constant vector: contrast norm 0, excluded
        members = [k for k, (fc, fr) in enumerate(_PATTERN_FACTORS)
                   if abs(_pattern_eigenvalue(fc, fr) - space_val) < 1e-8]
        prev = []
        for k in members:
            vec = space @ (space.T @ patterns[k])
            for q in prev:
                vec = vec - (q @ d @ vec) * q
            vec = vec / np.sqrt(vec @ d @ vec)
            if np.dot(vec, patterns[k]) < 0:
                vec = -vec
            prev.append(vec)
            range_patches[k] = vec
            basis_evals[k] = space_val

    flow_u = np.zeros((8, 2 * N_PIXELS))
    flow_v = np.zeros((8, 2 * N_PIXELS))
    flow_u[:, :N_PIXELS] = range_patches
    flow_v[:, N_PIXELS:] = range_patches
    for arr in (range_patches, flow_u, flow_v, basis_evals):
        arr.setflags(write=False)
    return DCTBasis(range_patches, flow_u, flow_v, basis_evals)


def _pattern_eigenvalue(fc, fr) -> float:
    path = {id(_CONST): 0.0, id(_LIN): 1.0, id(_QUAD): 3.0}
    return path[id(fc)] + path[id(fr)]


@lru_cache(maxsize=None)
def dct_basis() -> DCTBasis:
    return build_dct_basis()


# -- feature maps -------------------------------------------------------------

def flow_gram(patch: np.ndarray) -> np.ndarray:
    """A_x^T A_x for the 9x2 matrix A_x whose rows are the flow vectors."""
    u, v = split_uv(patch)
    uu = np.sum(u * u, axis=-1)
    vv = np.sum(v * v, axis=-1)
    uv = np.sum(u * v, axis=-1)
    g = np.empty(np.shape(uu) + (2, 2))
    g[..., 0, 0] = uu
    g[..., 0, 1] = uv
    g[..., 1, 0] = uv
    g[..., 1, 1] = vv
    return g


def _gram_eigen(patch):
    """Eigenvalues (max, min) and gap of the 2x2 flow Gram matrix, closed form."""
    g = flow_gram(patch)
    a, b, c = g[..., 0, 0], g[..., 0, 1], g[..., 1, 1]
    gap = np.sqrt((a - c) ** 2 + 4.0 * b**2)
    lmax = 0.5 * (a + c + gap)
    lmin = 0.5 * (a + c - gap)
    return a, b, c, lmax, lmin, gap


def predominant_direction(patch: np.ndarray) -> float:
    """Angle in [0, pi) of the dominant flow axis.

    Raises Undirectional when the Gram eigenvalues agree to relative 1e-9;
    such a patch has no meaningful direction.
    """
    a, b, c, lmax, _, gap = _gram_eigen(patch)
    if gap <= UNDIRECTIONAL_EPS * max(lmax, 0.0) or lmax <= 0.0:
        raise Undirectional(f"eigenvalue gap {gap:.3e} below threshold")
    theta = 0.5 * np.arctan2(2.0 * b, a - c)
    return float(np.mod(theta, np.pi))


def predominant_directions(patches: np.ndarray) -> np.ndarray:
    """Vectorized predominant_direction; undirectional rows come back as NaN."""
    a, b, c, lmax, _, gap = _gram_eigen(patches)
    theta = np.mod(0.5 * np.arctan2(2.0 * b, a - c), np.pi)
    bad = (gap <= UNDIRECTIONAL_EPS * np.maximum(lmax, 0.0)) | (lmax <= 0.0)
    return np.where(bad, np.nan, theta)


def directionality(patch: np.ndarray):
    """Normalized eigenvalue gap |l1 - l2| / max(l1, l2) in [0, 1].

    1 for rank-one (perfectly aligned) patches, 0 for isotropic ones.
    Vectorizes over leading axes.
    """
    _, _, _, lmax, _, gap = _gram_eigen(patch)
    out = np.divide(gap, lmax, out=np.zeros_like(np.asarray(gap, dtype=float)),
                    where=lmax > 0)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def plane_projection(patch: np.ndarray, theta: float) -> np.ndarray:
    """Euclidean projection onto the direction-theta plane.

    The plane is spanned by cos(theta) e1^u + sin(theta) e1^v and
    cos(theta) e2^u + sin(theta) e2^v; a fiber of the torus at direction
    theta projects to the unit circle here.
    """
    basis = dct_basis()
    ax1 = np.cos(theta) * basis.flow_u[0] + np.sin(theta) * basis.flow_v[0]
    ax2 = np.cos(theta) * basis.flow_u[1] + np.sin(theta) * basis.flow_v[1]
    patch = np.asarray(patch, dtype=float)
    return np.stack([patch @ ax1, patch @ ax2], axis=-1)


def pca_project(points: np.ndarray, dim: int) -> np.ndarray:
    """Project onto the top-dim principal axes of the mean-centered set.

    Axes are ordered by decreasing variance with a deterministic sign
    (first nonzero loading positive). Warns DegenerateSpectrumWarning when
    the dim-th and (dim+1)-th singular values coincide within 1e-12, in
    which case the axes are not unique but output is still produced.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if not 1 <= dim <= min(points.shape):
        raise ValueError(f"dim must be in 1..{min(points.shape)}, got {dim}")
    if n < dim:
        raise ValueError("need at least `dim` points")
    centered = points - points.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    if dim < len(svals) and abs(svals[dim - 1] - svals[dim]) <= 1e-12:
        warnings.warn("principal axes are not unique at the requested dim",
                      DegenerateSpectrumWarning)
    axes = vt[:dim]
    for i in range(dim):
        nz = np.nonzero(np.abs(axes[i]) > 1e-12)[0]
        if nz.size and axes[i, nz[0]] < 0:
            axes[i] = -axes[i]
    return centered @ axes.T


# -- metrics ------------------------------------------------------------------

def to_dct_coords(patches: np.ndarray) -> np.ndarray:
    """Coefficients of mean-zero patches against the flow DCT basis (D inner product).

    Euclidean distance between coefficient vectors equals the D-metric
    distance between the patches.
    """
    basis = dct_basis()
    d = d_matrix()
    dd = np.zeros((2 * N_PIXELS, 2 * N_PIXELS))
    dd[:N_PIXELS, :N_PIXELS] = d
    dd[N_PIXELS:, N_PIXELS:] = d
    frame = np.vstack([basis.flow_u, basis.flow_v])  # (16, 18)
    return np.asarray(patches, dtype=float) @ dd @ frame.T


def patch_coordinates(patches: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """Coordinates whose Euclidean distances realize the chosen patch metric."""
    if metric == "euclidean":
        return np.asarray(patches, dtype=float)
    if metric == "dmetric":
        return to_dct_coords(patches)
    raise ValueError(f"unknown metric {metric!r}")
