"""Discrete approximate circle-bundle inference over a circle base.

The base is RP^1 (period pi) for the predominant-direction map, or S^1
(period 2 pi) for the lifted-direction analysis of the step-edge circles.
Stages: cover the base with N equally spaced arcs; compute per-arc circular
coordinates; estimate O(2) transition matrices by Procrustes alignment on
overlaps; read off the orientation (Stiefel-Whitney) class from the
transition determinants; if it is a coboundary, synchronize the charts
spectrally and glue a global fiber coordinate with a partition of unity and
weighted Karcher means.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import patch_core
from .angles import circ_dist, signed_circ_diff, wrap
from .errors import (
    AntipodalDegenerate,
    BadParams,
    DataError,
    EmptyFiberWarning,
    SignAmbiguous,
    SpectralGapWarning,
    ThinOverlap,
    TooFewPairs,
)

MIN_FIBER_SIZE = 30


@dataclass(frozen=True)
class CircleCover:
    """N equally spaced arcs on a circle of circumference `period`.

    Landmark j sits at j * period / N; each arc has angular radius
    (period / (2 N)) (1 + c). For 0 < c <= 1/2 adjacent arcs overlap, no
    three arcs share a point, and the nerve is the N-cycle; this is asserted
    at build time.
    """

    n_sets: int
    overlap: float
    period: float
    landmarks: np.ndarray
    radius: float

    @property
    def nerve_edges(self) -> list:
        n = self.n_sets
        return [(j, (j + 1) % n) for j in range(n)]

    def membership(self, angles: np.ndarray) -> list:
        """Per cover set, the indices of angles strictly inside the arc."""
        angles = np.asarray(angles, dtype=float)
        return [np.nonzero(circ_dist(angles, l, self.period) < self.radius)[0]
                for l in self.landmarks]


def build_cover(n_sets: int, overlap: float, period: float = np.pi) -> CircleCover:
    """Equally spaced arc cover of the base circle; nerve must be the N-cycle."""
    if n_sets < 3:
        raise BadParams("need at least 3 cover sets")
    if not 0 < overlap <= 0.5:
        raise BadParams("overlap constant must be in (0, 1/2]")
    landmarks = np.arange(n_sets) * period / n_sets
    radius = (period / (2 * n_sets)) * (1 + overlap)
    cover = CircleCover(n_sets, overlap, period, landmarks, radius)
    # nerve shape check: adjacent arcs overlap, non-adjacent do not
    for j in range(n_sets):
        for k in range(j + 1, n_sets):
            gap = circ_dist(landmarks[j], landmarks[k], period)
            overlapping = gap < 2 * radius
            adjacent = (k - j) % n_sets in (1, n_sets - 1)
            if overlapping != adjacent:
                raise BadParams("cover parameters do not produce a cycle nerve")
    return cover


def assign_fibers(base_angles: np.ndarray, cover: CircleCover):
    """X_j = indices with base angle inside arc j; NaN angles are dropped.

    Returns (fibers, n_dropped). Warns EmptyFiberWarning for arcs with fewer
    than 30 points.
    """
    base_angles = np.asarray(base_angles, dtype=float)
    valid = ~np.isnan(base_angles)
    n_dropped = int(np.sum(~valid))
    fibers = []
    for l in cover.landmarks:
        inside = valid & (circ_dist(np.where(valid, base_angles, 0.0), l,
                                    cover.period) < cover.radius)
        fibers.append(np.nonzero(inside)[0])
    for j, f in enumerate(fibers):
        if len(f) < MIN_FIBER_SIZE:
            warnings.warn(f"cover set {j} has only {len(f)} points",
                          EmptyFiberWarning)
    return fibers, n_dropped


# -- Procrustes and the transition cocycle --------------------------------------

def procrustes_o2(pairs_a: np.ndarray, pairs_b: np.ndarray) -> np.ndarray:
    """Orthogonal 2x2 matrix minimizing sum |a_i - Omega b_i|^2.

    Both the best rotation and the best reflection are computed from the
    cross-covariance SVD; the lower-residual one wins, ties going to the
    rotation.
    """
    a = np.asarray(pairs_a, dtype=float)
    b = np.asarray(pairs_b, dtype=float)
    if a.shape[0] < 2:
        raise TooFewPairs("need at least 2 matched pairs")
    m = a.T @ b
    u, _, vt = np.linalg.svd(m)
    det = np.linalg.det(u @ vt)
    rot = u @ np.diag([1.0, np.sign(det) if det != 0 else 1.0]) @ vt
    ref = u @ np.diag([1.0, -np.sign(det) if det != 0 else -1.0]) @ vt
    res_rot = np.sum((a - b @ rot.T) ** 2)
    res_ref = np.sum((a - b @ ref.T) ** 2)
    return rot if res_rot <= res_ref else ref


def angles_to_vectors(angles: np.ndarray) -> np.ndarray:
    return np.stack([np.cos(angles), np.sin(angles)], axis=-1)


@dataclass
class TransitionCocycle:
    """Per-nerve-edge orthogonal transition estimates and alignment errors."""

    edges: list                  # [(j, k)]
    omegas: np.ndarray           # (E, 2, 2)
    errors: np.ndarray           # (E,) mean squared angular residual
    overlap_sizes: np.ndarray    # (E,)

    def omega(self, j: int, k: int) -> np.ndarray:
        for idx, (a, b) in enumerate(self.edges):
            if (a, b) == (j, k):
                return self.omegas[idx]
            if (a, b) == (k, j):
                return self.omegas[idx].T
        raise KeyError((j, k))


def transition_cocycle(fibers, local_angles, cover: CircleCover) -> TransitionCocycle:
    """Procrustes-align the local circle coordinates on every nerve overlap.

    local_angles[j] maps global point index -> angle for points of fiber j
    (a dict or full-length array with values on X_j).
    """
    edges, omegas, errors, sizes = [], [], [], []
    for j, k in cover.nerve_edges:
        shared = np.intersect1d(fibers[j], fibers[k])
        if len(shared) < 2:
            raise ThinOverlap(f"overlap of sets {j},{k} has {len(shared)} points")
        fa = angles_to_vectors(local_angles[j][shared])
        fb = angles_to_vectors(local_angles[k][shared])
        om = procrustes_o2(fa, fb)
        resid = fa - fb @ om.T
        # mean squared angular misalignment on the overlap
        dots = np.clip(1.0 - 0.5 * np.sum(resid**2, axis=1), -1.0, 1.0)
        err = float(np.mean(np.arccos(dots) ** 2))
        edges.append((j, k))
        omegas.append(om)
        errors.append(err)
        sizes.append(len(shared))
    return TransitionCocycle(edges, np.array(omegas), np.array(errors),
                             np.array(sizes, dtype=int))


# -- orientation class -----------------------------------------------------------

@dataclass
class OrientationClass:
    """Edge signs det(Omega_jk) and, when they form a coboundary, a potential."""

    edges: list
    signs: np.ndarray            # (E,) of +-1
    potential: np.ndarray | None  # (N,) of +-1, or None

    @property
    def is_coboundary(self) -> bool:
        return self.potential is not None

    @property
    def cycle_product(self) -> int:
        return int(np.prod(self.signs))


def orientation_class(cocycle: TransitionCocycle, n_vertices: int) -> OrientationClass:
    """Check whether the determinant signs are a simplicial coboundary.

    A potential is propagated over a spanning tree (tau_root = +1) and then
    verified on the remaining edges; NotCoboundary is reported by a None
    potential, not an exception.
    """
    signs = np.array([1 if np.linalg.det(om) > 0 else -1
                      for om in cocycle.omegas], dtype=int)
    adj = {v: [] for v in range(n_vertices)}
    for idx, (j, k) in enumerate(cocycle.edges):
        adj[j].append((k, idx))
        adj[k].append((j, idx))
    tau = np.zeros(n_vertices, dtype=int)
    tau[0] = 1
    stack = [0]
    tree_edges = set()
    while stack:
        v = stack.pop()
        for w, idx in adj[v]:
            if tau[w] == 0:
                tau[w] = signs[idx] * tau[v]
                tree_edges.add(idx)
                stack.append(w)
    if np.any(tau == 0):
        raise BadParams("nerve is not connected")
    for idx, (j, k) in enumerate(cocycle.edges):
        if idx not in tree_edges and signs[idx] != tau[j] * tau[k]:
            return OrientationClass(cocycle.edges, signs, None)
    return OrientationClass(cocycle.edges, signs, tau)


# -- synchronization --------------------------------------------------------------

def rotation_angle(om: np.ndarray) -> float:
    """Angle of a rotation matrix (the nearest rotation if om reflects slightly)."""
    return float(np.arctan2(om[1, 0] - om[0, 1], om[0, 0] + om[1, 1]))


def synchronize(cocycle: TransitionCocycle, potential: np.ndarray):
    """Spectral synchronization: frames mu_j in O(2) with Omega_jk ~ mu_j^T mu_k.

    The potential's reflections are exact data: chart k's coordinates are
    conjugated by diag(1, -1) wherever tau_k = -1, reducing to an SO(2)
    problem solved by the top eigenvector of the Hermitian phase matrix.
    Returns (mus, residual), residual = max_edge ||Omega_jk - mu_j^T mu_k||_F.
    """
    n = len(potential)
    flip = np.diag([1.0, -1.0])
    h = np.zeros((n, n), dtype=complex)
    for idx, (j, k) in enumerate(cocycle.edges):
        om = cocycle.omegas[idx]
        cj = flip if potential[j] < 0 else np.eye(2)
        ck = flip if potential[k] < 0 else np.eye(2)
        rot = cj @ om @ ck
        ang = rotation_angle(rot)  # ~ phi_k - phi_j
        h[j, k] = np.exp(-1j * ang)
        h[k, j] = np.exp(1j * ang)
    evals, evecs = np.linalg.eigh(h)
    if len(evals) >= 2 and evals[-1] - evals[-2] < 1e-6:
        warnings.warn("synchronization eigenvalue gap is numerically degenerate",
                      SpectralGapWarning)
    v = evecs[:, -1]
    v = v * np.exp(-1j * np.angle(v[0]))
    phis = np.angle(v)
    mus = np.empty((n, 2, 2))
    for j in range(n):
        c, s = np.cos(phis[j]), np.sin(phis[j])
        rj = np.array([[c, -s], [s, c]])
        mus[j] = rj @ (flip if potential[j] < 0 else np.eye(2))
    residual = 0.0
    for idx, (j, k) in enumerate(cocycle.edges):
        residual = max(residual, float(np.linalg.norm(
            cocycle.omegas[idx] - mus[j].T @ mus[k])))
    return mus, residual


# -- Karcher mean -----------------------------------------------------------------

def karcher_mean_s1(angles, weights) -> float:
    """Weighted Riemannian center of mass on the circle.

    Initialized at the weighted extrinsic mean direction and refined by at
    most 50 gradient steps to gradient norm < 1e-10. Raises
    AntipodalDegenerate when the extrinsic mean vector (normalized weights)
    has norm below 1e-9.
    """
    angles = np.asarray(angles, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("weights must be nonnegative with positive sum")
    w = weights / weights.sum()
    cx = float(np.sum(w * np.cos(angles)))
    sx = float(np.sum(w * np.sin(angles)))
    if np.hypot(cx, sx) < 1e-9:
        raise AntipodalDegenerate("weighted angles are antipodally balanced")
    y = np.arctan2(sx, cx)
    for _ in range(50):
        grad = float(np.sum(w * signed_circ_diff(angles, y)))
        y = y + grad
        if abs(grad) < 1e-10:
            break
    return float(wrap(y))


# -- global trivialization ---------------------------------------------------------

@dataclass
class GlobalTrivialization:
    """Per-point (base angle, fiber angle) plus synchronization frames."""

    point_indices: np.ndarray    # indices with a defined coordinate
    base: np.ndarray             # base angle per listed point
    fiber: np.ndarray            # glued fiber angle per listed point
    frames: np.ndarray           # (N, 2, 2) synchronization frames
    chart_disagreement: np.ndarray  # per listed point, max angle gap across charts
    n_degenerate: int

    def to_csv(self) -> str:
        lines = ["point_index,base_angle,fiber_angle"]
        for i, b, f in zip(self.point_indices, self.base, self.fiber):
            lines.append(f"{int(i)},{b:.17g},{f:.17g}")
        return "\n".join(lines) + "\n"


def apply_frame(mu: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Angles of mu applied to (cos a, sin a)."""
    vecs = angles_to_vectors(angles) @ mu.T
    return np.mod(np.arctan2(vecs[..., 1], vecs[..., 0]), 2 * np.pi)


def global_trivialization(base_angles, cover: CircleCover, fibers, local_angles,
                          mus) -> GlobalTrivialization:
    """Glue the synchronized chart coordinates into one fiber coordinate.

    Each point's fiber angle is the weighted Karcher mean of its aligned
    chart values mu_k f_k(x), weighted by the tent partition of unity at its
    base angle. Antipodally degenerate points fall back to the first
    positive-weight chart value (counted, not fatal).
    """
    base_angles = np.asarray(base_angles, dtype=float)
    n = len(base_angles)
    aligned = np.full((cover.n_sets, n), np.nan)
    for j in range(cover.n_sets):
        idx = fibers[j]
        aligned[j, idx] = apply_frame(mus[j], local_angles[j][idx])
    listed = np.nonzero(np.any(~np.isnan(aligned), axis=0))[0]
    fiber_angle = np.empty(len(listed))
    disagreement = np.zeros(len(listed))
    n_degenerate = 0
    for out_i, x in enumerate(listed):
        charts = np.nonzero(~np.isnan(aligned[:, x]))[0]
        vals = aligned[charts, x]
        phi = np.maximum(0.0, cover.radius - circ_dist(
            base_angles[x], cover.landmarks[charts], cover.period))
        if phi.sum() <= 0:
            phi = np.ones_like(phi)
        if len(charts) > 1:
            disagreement[out_i] = float(np.max(circ_dist(vals[:, None], vals[None, :])))
        try:
            fiber_angle[out_i] = karcher_mean_s1(vals, phi)
        except AntipodalDegenerate:
            n_degenerate += 1
            fiber_angle[out_i] = vals[np.argmax(phi > 0)]
    return GlobalTrivialization(
        point_indices=listed,
        base=wrap(base_angles[listed], cover.period),
        fiber=fiber_angle,
        frames=np.asarray(mus),
        chart_disagreement=disagreement,
        n_degenerate=n_degenerate,
    )


# -- end-to-end pipeline -------------------------------------------------------------

@dataclass
class BundlePipelineResult:
    cover: CircleCover
    fibers: list
    n_dropped: int
    local_coords: list              # CircularCoordinates per cover set
    local_angles: list              # full-length angle arrays (NaN off-fiber)
    cocycle: TransitionCocycle
    orientation: OrientationClass
    frames: np.ndarray | None = None
    sync_residual: float | None = None
    trivialization: GlobalTrivialization | None = None

    @property
    def orientable(self) -> bool:
        return self.orientation.is_coboundary


def run_bundle_pipeline(points, base_angles, n_sets: int = 16, overlap: float = 0.5,
                        period: float = np.pi, n_landmarks: int | None = None,
                        prime: int = 47, threads: int = 1) -> BundlePipelineResult:
    """Cover, local coordinates, transitions, orientation, synchronization, gluing.

    Synchronization and gluing run only in the orientable case; the
    NotCoboundary outcome is reported through the orientation field.

    n_landmarks defaults to min(60, fiber size): sparse fibers get dense
    landmarks, which keeps the per-fiber coordinates reliable.
    """
    from .circular_coords import circular_coordinates

    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    cover = build_cover(n_sets, overlap, period)
    fibers, n_dropped = assign_fibers(base_angles, cover)
    for j, f in enumerate(fibers):
        if len(f) < 8:
            raise DataError(
                f"cover set {j} has {len(f)} points; too few for local "
                f"circular coordinates ({n_dropped} records had no base angle)")

    def fiber_coords(j):
        m = n_landmarks if n_landmarks is not None else min(60, len(fibers[j]))
        return circular_coordinates(points=points[fibers[j]],
                                    n_landmarks=m, prime=prime)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as ex:
            local_coords = list(ex.map(fiber_coords, range(n_sets)))
    else:
        local_coords = [fiber_coords(j) for j in range(n_sets)]

    local_angles = []
    for j in range(n_sets):
        arr = np.full(n, np.nan)
        arr[fibers[j]] = local_coords[j].values
        local_angles.append(arr)

    cocycle = transition_cocycle(fibers, local_angles, cover)
    orientation = orientation_class(cocycle, n_sets)
    result = BundlePipelineResult(cover, fibers, n_dropped, local_coords,
                                  local_angles, cocycle, orientation)
    if orientation.is_coboundary:
        mus, residual = synchronize(cocycle, orientation.potential)
        result.frames = mus
        result.sync_residual = residual
        result.trivialization = global_trivialization(
            base_angles, cover, fibers, local_angles, mus)
    return result


# -- lifted direction ---------------------------------------------------------------

def lifted_direction(patch: np.ndarray) -> float:
    """Dominant flow direction as a full angle in [0, 2 pi).

    The predominant-direction axis is sign-resolved by the third moment of
    the flow components along it: sign(sum <(u_i, v_i), v>^3). For two-valued
    zero-mean patches (the step-edge regime, directionality > 0.5) the third
    moment never vanishes.
    """
    theta = patch_core.predominant_direction(patch)
    v = np.array([np.cos(theta), np.sin(theta)])
    u, w = patch_core.split_uv(patch)
    proj = u * v[0] + w * v[1]
    moment = float(np.sum(proj**3))
    if abs(moment) < 1e-12:
        raise SignAmbiguous("third moment too small to resolve orientation")
    return float(theta if moment > 0 else wrap(theta + np.pi))


def lifted_directions(patches: np.ndarray) -> np.ndarray:
    """Vectorized lifted_direction; ambiguous rows come back NaN."""
    theta = patch_core.predominant_directions(patches)
    u, w = patch_core.split_uv(patches)
    proj = u * np.cos(theta)[..., None] + w * np.sin(theta)[..., None]
    moment = np.sum(proj**3, axis=-1)
    out = np.where(moment > 0, theta, wrap(theta + np.pi))
    return np.where(np.isnan(theta) | (np.abs(moment) < 1e-12), np.nan, out)
