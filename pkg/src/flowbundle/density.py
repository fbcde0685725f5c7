"""k-NN density estimation and dense-core-subset extraction X(k, q)."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from . import flow_io, patch_core
from .errors import KTooLarge


def knn_distances(points: np.ndarray, k: int) -> np.ndarray:
    """Exact Euclidean distance from each point to its k-th nearest other point.

    The query point itself is excluded; duplicate points count as neighbors
    at distance zero. Uses a k-d tree (exact) with a brute-force path for
    small inputs.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if not 0 < k < n:
        raise KTooLarge(f"k must satisfy 0 < k < {n}, got {k}")
    if n <= 64:
        d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
        return np.sort(d, axis=1)[:, k]
    tree = cKDTree(points)
    # k+1 nearest including self (distance 0 ranks first among ties).
    dists, _ = tree.query(points, k=k + 1, workers=-1)
    return dists[:, k]


def dataset_knn_distances(ds: flow_io.PatchDataset, k: int,
                          metric: str = "euclidean") -> np.ndarray:
    return knn_distances(patch_core.patch_coordinates(ds.patches, metric), k)


def core_subset(ds: flow_io.PatchDataset, k: int, q: float,
                metric: str = "euclidean") -> flow_io.PatchDataset:
    """X(k, q): the top q percent of records by the density proxy 1 / rho_k.

    Nearest-rank percentile with ties kept, matching the contrast filter rule.
    """
    if not 0 < q <= 100:
        raise ValueError("q must be in (0, 100]")
    rho = dataset_knn_distances(ds, k, metric=metric)
    with np.errstate(divide="ignore"):
        dens = 1.0 / rho
    threshold = flow_io.nearest_rank_threshold(dens, q)
    keep = np.nonzero(dens >= threshold)[0]
    return ds.subset(keep, note=f"core_subset(k={k}, q={q})")


def density_csv(rho: np.ndarray) -> str:
    """CSV of (record index, rho_k, density rank); rank 0 is the densest record."""
    order = np.argsort(np.argsort(rho, kind="stable"), kind="stable")
    lines = ["index,rho_k,rank"]
    for i, (r, rk) in enumerate(zip(rho, order)):
        lines.append(f"{i},{r:.17g},{int(rk)}")
    return "\n".join(lines) + "\n"
