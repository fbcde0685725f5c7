"""Sparse circular coordinates from a persistent cohomology class.

Pipeline: greedy max-min landmarks; Rips persistent cohomology of the
landmark set over Z_p; lift the chosen class's representative cocycle to
integer coefficients; harmonically smooth it by least squares over the
landmark graph at a scale inside the persistence interval; then extend to
every data point with a partition of unity over landmark balls. The integer
corrections make the chart values agree mod 2 pi, so the result is a genuine
circle-valued map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import LiftFailure, NoClass
from .persistence import DEFAULT_PRIME, rips_persistence

SMOOTHING_FRACTION = 0.4  # scale = birth + fraction * (death - birth)


@dataclass
class CircularCoordinates:
    """Angles in [0, 2 pi) per input point, plus the construction's metadata."""

    values: np.ndarray        # (n,)
    landmarks: np.ndarray     # indices into the input points
    coverage_radius: float
    class_persistence: float
    birth: float
    death: float
    prime: int

    def to_csv(self) -> str:
        lines = ["point_index,angle"]
        for i, a in enumerate(self.values):
            lines.append(f"{i},{a:.17g}")
        return "\n".join(lines) + "\n"


def maxmin_landmarks(dist_to_all, n_landmarks: int) -> np.ndarray:
    """Greedy max-min (farthest point) landmark indices, seeded at index 0."""
    n = dist_to_all.shape[0]
    chosen = np.empty(n_landmarks, dtype=int)
    chosen[0] = 0
    d = dist_to_all[0].copy()
    for i in range(1, n_landmarks):
        idx = int(np.argmax(d))
        chosen[i] = idx
        np.minimum(d, dist_to_all[idx], out=d)
    return chosen


def default_landmark_count(n: int) -> int:
    return max(8, min(60, n // 5))


def circular_coordinates(points=None, dist=None, n_landmarks: int | None = None,
                         class_index: int = 0,
                         prime: int = DEFAULT_PRIME) -> CircularCoordinates:
    """Circle-valued coordinate representing a 1-dimensional cohomology class.

    class_index selects among dim-1 classes ordered by decreasing persistence
    (0 = most prominent). Raises NoClass if the index is out of range or the
    class has death/birth ratio <= 1, and LiftFailure if the integer lift of
    the Z_p cocycle is not a cocycle over the integers.
    """
    if dist is None:
        points = np.asarray(points, dtype=float)
        dist = squareform(pdist(points)) if points.shape[0] > 1 else np.zeros((1, 1))
    dist = np.asarray(dist, dtype=float)
    n = dist.shape[0]
    if n_landmarks is None:
        n_landmarks = default_landmark_count(n)
    if n_landmarks < 8:
        raise ValueError("need at least 8 landmarks")
    n_landmarks = min(n_landmarks, n)

    land = maxmin_landmarks(dist, n_landmarks)
    dl = dist[np.ix_(land, land)]
    res = rips_persistence(dist=dl, max_dim=1, prime=prime)
    diag = res.diagram
    ones = diag.in_dim(1)
    if class_index < 0 or class_index >= len(ones):
        raise NoClass(f"class index {class_index} out of range ({len(ones)} classes)")
    pt = ones[class_index]
    birth = float(diag.births[pt])
    death = float(diag.deaths[pt])
    effective_death = min(death, res.max_scale)
    if birth <= 0 or effective_death / birth <= 1.0:
        raise NoClass("selected class has death/birth ratio <= 1")
    cocycle = res.cocycles[class_index]

    scale = birth + SMOOTHING_FRACTION * (effective_death - birth)

    # integer lift of the Z_p cocycle
    coeffs = cocycle.coeffs.astype(np.int64)
    coeffs = np.where(coeffs > (prime - 1) // 2, coeffs - prime, coeffs)

    # landmark graph at the smoothing scale
    ia, ja = np.nonzero(np.triu(dl <= scale, k=1))
    eta = np.zeros(len(ia))
    pos = {(int(a), int(b)): idx for idx, (a, b) in enumerate(zip(ia, ja))}
    for (a, b), c in zip(cocycle.edges, coeffs):
        key = (int(a), int(b))
        if key in pos:
            eta[pos[key]] = c
    _check_integer_cocycle(dl, scale, pos, eta)

    # harmonic smoothing: min || eta - delta0 z ||_2
    m = n_landmarks
    delta0 = np.zeros((len(ia), m))
    delta0[np.arange(len(ia)), ja] = 1.0
    delta0[np.arange(len(ia)), ia] = -1.0
    z, *_ = np.linalg.lstsq(delta0, eta, rcond=None)
    theta = eta - (z[ja] - z[ia])  # real cocycle cohomologous to eta

    theta_lookup = np.zeros((m, m))
    for idx, (a, b) in enumerate(zip(ia, ja)):
        theta_lookup[a, b] = theta[idx]
        theta_lookup[b, a] = -theta[idx]
    edge_ok = dl <= scale

    # extend over the data with a partition of unity on landmark balls
    r_cov = scale / 2.0
    dland = dist[land]  # (m, n)
    nearest = np.argmin(dland, axis=0)
    values = np.empty(n)
    for x in range(n):
        j = int(nearest[x])
        phi = np.maximum(0.0, r_cov - dland[:, x])
        if phi[j] <= 0:
            # x lies outside every ball; fall back to its nearest chart alone
            values[x] = z[j] % 1.0
            continue
        phi /= phi.sum()
        corr = 0.0
        for k in np.nonzero(phi)[0]:
            if k == j:
                continue
            if edge_ok[k, j]:
                corr += phi[k] * theta_lookup[k, j]
        values[x] = (z[j] + corr) % 1.0
    return CircularCoordinates(
        values=2.0 * np.pi * values,
        landmarks=land,
        coverage_radius=r_cov,
        class_persistence=death - birth,
        birth=birth,
        death=death,
        prime=prime,
    )


def _check_integer_cocycle(dl, scale, pos, eta):
    """delta(eta) must vanish over the integers on every triangle at the scale."""
    m = dl.shape[0]
    adj = dl <= scale

    def val(a, b):
        if a < b:
            return eta[pos[(a, b)]] if (a, b) in pos else 0.0
        return -eta[pos[(b, a)]] if (b, a) in pos else 0.0

    for i in range(m):
        for j in range(i + 1, m):
            if not adj[i, j]:
                continue
            for k in range(j + 1, m):
                if adj[i, k] and adj[j, k]:
                    if abs(val(i, j) + val(j, k) - val(i, k)) > 1e-9:
                        raise LiftFailure(
                            "integer lift is not a cocycle; try another prime")
