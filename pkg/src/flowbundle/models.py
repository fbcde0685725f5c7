"""Closed-form model spaces for high-contrast flow patches, plus noisy samplers.

The flow torus is the image of

    F(alpha, theta) = cos(theta) (cos(alpha) e1^u + sin(alpha) e2^u)
                    + sin(theta) (cos(alpha) e1^v + sin(alpha) e2^v)

a double cover with F(alpha + pi, theta + pi) = F(alpha, theta); theta is the
direction of camera motion and alpha the step-edge orientation. The extended
model mixes each torus patch with its inward unit normal
F_perp(alpha, theta) = F(alpha + pi/2, theta - pi/2) in proportions controlled
by the directionality r, collapsing onto a single limit circle as r -> 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import flow_io, patch_core
from .errors import CountMismatch, DomainError

MODEL_IDS = {
    "torus": 1,
    "extended": 2,
    "limitCircle": 3,
    "quadratic": 4,
    "stepEdgeCircles": 5,
    "kleinControl": 6,
}


def _four_frame(i: int, j: int):
    """(e_i^u, e_j^u, e_i^v, e_j^v) rows as a (4, 18) array, 1-based i, j."""
    b = patch_core.dct_basis()
    return np.stack([b.flow_u[i - 1], b.flow_u[j - 1],
                     b.flow_v[i - 1], b.flow_v[j - 1]])


def _torus_combo(alpha, theta, frame) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    theta = np.asarray(theta, dtype=float)
    ca, sa = np.cos(alpha), np.sin(alpha)
    ct, st = np.cos(theta), np.sin(theta)
    coeffs = np.stack([ct * ca, ct * sa, st * ca, st * sa], axis=-1)
    return coeffs @ frame


def torus_patch(alpha, theta) -> np.ndarray:
    """Flow-torus patch; broadcasts over arrays of angles."""
    return _torus_combo(alpha, theta, _four_frame(1, 2))


def torus_embedding(omega, theta) -> np.ndarray:
    """G(omega, theta) = F(omega - theta, theta).

    Injective for omega in [0, 2pi) and theta in [0, pi): the reparametrized
    torus is S^1 x RP^1 (in theta, the map is pi-periodic).
    """
    omega = np.asarray(omega, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return torus_patch(omega - theta, theta)


def perp_patch(alpha, theta) -> np.ndarray:
    """Inward unit normal to the torus at F(alpha, theta): F(alpha + pi/2, theta - pi/2)."""
    return torus_patch(np.asarray(alpha, dtype=float) + np.pi / 2.0,
                       np.asarray(theta, dtype=float) - np.pi / 2.0)


def tau_of_r(r):
    """Mixing angle tau(r) = arccos((2 - r)^(-1/2)); tau(1) = 0, tau(0+) = pi/4."""
    r = np.asarray(r, dtype=float)
    return np.arccos(1.0 / np.sqrt(2.0 - r))


def extended_patch(r, alpha, theta) -> np.ndarray:
    """Extended-model patch cos(tau) F + sin(tau) F_perp.

    Has mean 0, contrast norm 1, predominant direction theta (mod pi) and
    directionality exactly r. Raises DomainError unless 0 < r <= 1.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or np.any(r > 1):
        raise DomainError("r must lie in (0, 1]")
    t = tau_of_r(r)[..., None]
    return np.cos(t) * torus_patch(alpha, theta) + np.sin(t) * perp_patch(alpha, theta)


def limit_circle_patch(phi) -> np.ndarray:
    """The r -> 0 limit of the extended model; depends only on phi = alpha + theta."""
    b = patch_core.dct_basis()
    axis1 = (b.flow_u[0] - b.flow_v[1]) / np.sqrt(2.0)
    axis2 = (b.flow_u[1] + b.flow_v[0]) / np.sqrt(2.0)
    phi = np.asarray(phi, dtype=float)
    return np.cos(phi)[..., None] * axis1 + np.sin(phi)[..., None] * axis2


def quadratic_patch(s, t) -> np.ndarray:
    """Quadratic-gradient analogue of the torus, built on e3/e4."""
    return _torus_combo(s, t, _four_frame(3, 4))


# -- binary step edges --------------------------------------------------------

@dataclass(frozen=True)
class StepEdgePatch:
    """One of the 56 binary step-edge range patches.

    id runs 1..56 in increasing order of the mask's bit code
    (bit i = pixel i in grid order); normalized is the mean-centered,
    contrast-normalized signed version of the mask.
    """

    id: int
    mask: np.ndarray        # (9,) of 0/1
    normalized: np.ndarray  # (9,) mean 0, D-norm 1

    @property
    def code(self) -> int:
        return int(np.dot(self.mask, 1 << np.arange(9)))


@lru_cache(maxsize=None)
def enumerate_step_edge_patches() -> tuple:
    """All binary step-edge masks, by half-plane sweep over a dense grid.

    Masks are [cos(phi) col + sin(phi) row > b] for phi stepping by pi/720 and
    b stepping by 1/100 across the projection range; constant masks are
    dropped. Exactly 56 distinct masks must remain (CountMismatch otherwise),
    and the set is closed under complement.
    """
    rows, cols = patch_core.GRID_ROWS, patch_core.GRID_COLS
    codes = set()
    weights = 1 << np.arange(9)
    for phi in np.arange(0.0, 2.0 * np.pi, np.pi / 720.0):
        proj = np.cos(phi) * cols + np.sin(phi) * rows
        bs = np.arange(proj.min(), proj.max() + 1e-9, 0.01)
        masks = proj[None, :] > bs[:, None]
        codes.update(int(c) for c in masks @ weights)
    codes.discard(0)
    codes.discard(511)
    if len(codes) != 56:
        raise CountMismatch(f"expected 56 step-edge masks, found {len(codes)}")
    d = patch_core.d_matrix()
    out = []
    for i, code in enumerate(sorted(codes), start=1):
        mask = (code >> np.arange(9)) & 1
        centered = mask - mask.mean()
        normalized = centered / np.sqrt(centered @ d @ centered)
        out.append(StepEdgePatch(i, mask.astype(np.uint8), normalized))
    return tuple(out)


def complement_edge(edge: StepEdgePatch) -> StepEdgePatch:
    """The step edge whose mask is the complement of the given one."""
    catalog = enumerate_step_edge_patches()
    target = 511 - edge.code
    by_code = {e.code: e for e in catalog}
    return by_code[target]


def complement_pairs() -> list:
    """The 28 unordered complement pairs, each as (edge, complement) with edge.id lower."""
    catalog = enumerate_step_edge_patches()
    pairs = []
    seen = set()
    for e in catalog:
        if e.id in seen:
            continue
        c = complement_edge(e)
        seen.update({e.id, c.id})
        pairs.append((e, c))
    return pairs


def step_edge_flow_patch(edge: StepEdgePatch, direction) -> np.ndarray:
    """Camera translation along `direction` applied to a binary range patch.

    u_i = mask_i * n_x, v_i = mask_i * n_y, then contrast-normalized. The
    result has directionality 1 and predominant direction angle(n) mod pi;
    negating the direction gives the complement edge's patch.
    """
    nx, ny = float(direction[0]), float(direction[1])
    mask = edge.mask.astype(float)
    raw = np.concatenate([mask * nx, mask * ny])
    normalized, _, _ = patch_core.normalize_patch(raw)
    return normalized


# -- synthetic samplers --------------------------------------------------------

@dataclass
class SyntheticSample:
    """A sampled model dataset plus per-record generator parameters."""

    dataset: flow_io.PatchDataset
    ground_truth: dict
    noise_sigma: float
    model: str


def klein_point(alpha, theta) -> np.ndarray:
    """Klein-bottle point in R^4 embedded in the first coordinates of R^18.

    ((2 + cos a) cos t, (2 + cos a) sin t, sin a cos(t/2), sin a sin(t/2)) / 3;
    the circle bundle over the theta circle (atan2 of the first two
    coordinates) is non-orientable.
    """
    alpha = np.asarray(alpha, dtype=float)
    theta = np.asarray(theta, dtype=float)
    pts = np.zeros(np.broadcast(alpha, theta).shape + (18,))
    pts[..., 0] = (2.0 + np.cos(alpha)) * np.cos(theta)
    pts[..., 1] = (2.0 + np.cos(alpha)) * np.sin(theta)
    pts[..., 2] = np.sin(alpha) * np.cos(theta / 2.0)
    pts[..., 3] = np.sin(alpha) * np.sin(theta / 2.0)
    return pts / 3.0


def klein_base_angle(points: np.ndarray) -> np.ndarray:
    """Feature map for the Klein control: atan2 of the first two coordinates."""
    points = np.asarray(points, dtype=float)
    return np.mod(np.arctan2(points[..., 1], points[..., 0]), 2.0 * np.pi)


def sample_model(model: str, n: int, sigma: float, seed: int,
                 edge_pair: int | None = None) -> SyntheticSample:
    """Draw n noisy samples from a model space.

    Parameters are uniform; isotropic Gaussian noise sigma is added in R^18
    and the patches re-normalized onto the contrast ellipsoid. The Klein
    control is the exception: its points are not flow patches, and radial
    renormalization would collapse its fibers onto arcs, so it keeps its raw
    geometry (noise only).

    stepEdgeCircles: edge_pair selects one of the 28 complement-pair circles;
    when None the records cycle through all 28, directions uniform.
    """
    if model not in MODEL_IDS:
        raise DomainError(f"unknown model {model!r}")
    if n < 1:
        raise DomainError("n must be >= 1")
    if sigma < 0:
        raise DomainError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    gt = {}
    if model == "torus":
        alpha = rng.uniform(0, 2 * np.pi, n)
        theta = rng.uniform(0, 2 * np.pi, n)
        pts = torus_patch(alpha, theta)
        gt = {"alpha": alpha, "theta": theta}
    elif model == "extended":
        # uniform on (0, 1]
        r = 1.0 - rng.uniform(0, 1, n)
        alpha = rng.uniform(0, 2 * np.pi, n)
        theta = rng.uniform(0, 2 * np.pi, n)
        pts = extended_patch(r, alpha, theta)
        gt = {"r": r, "alpha": alpha, "theta": theta}
    elif model == "limitCircle":
        phi = rng.uniform(0, 2 * np.pi, n)
        pts = limit_circle_patch(phi)
        gt = {"phi": phi}
    elif model == "quadratic":
        s = rng.uniform(0, 2 * np.pi, n)
        t = rng.uniform(0, 2 * np.pi, n)
        pts = quadratic_patch(s, t)
        gt = {"s": s, "t": t}
    elif model == "stepEdgeCircles":
        pairs = complement_pairs()
        if edge_pair is not None:
            pair_idx = np.full(n, int(edge_pair))
        else:
            pair_idx = np.arange(n) % len(pairs)
        direction = rng.uniform(0, 2 * np.pi, n)
        pts = np.empty((n, 18))
        edge_ids = np.empty(n, dtype=int)
        for i in range(n):
            edge = pairs[pair_idx[i]][0]
            pts[i] = step_edge_flow_patch(
                edge, (np.cos(direction[i]), np.sin(direction[i])))
            edge_ids[i] = edge.id
        gt = {"pair": pair_idx, "edge_id": edge_ids, "direction": direction}
    else:  # kleinControl
        alpha = rng.uniform(0, 2 * np.pi, n)
        theta = rng.uniform(0, 2 * np.pi, n)
        pts = klein_point(alpha, theta)
        gt = {"alpha": alpha, "theta": theta}

    if sigma > 0:
        pts = pts + rng.normal(0.0, sigma, pts.shape)

    if model == "kleinControl":
        ds = flow_io.make_dataset(
            pts, frames=np.full(n, MODEL_IDS[model]),
            seed=seed, normalized=False,
            provenance=[f"synthetic(model={model}, n={n}, sigma={sigma}, seed={seed})"])
    else:
        normalized, means, contrast = patch_core.normalize_patches(pts)
        ds = flow_io.make_dataset(
            normalized, frames=np.full(n, MODEL_IDS[model]),
            contrast=contrast, means=means, seed=seed, normalized=True,
            provenance=[f"synthetic(model={model}, n={n}, sigma={sigma}, seed={seed})"])
    return SyntheticSample(dataset=ds, ground_truth=gt, noise_sigma=sigma, model=model)
