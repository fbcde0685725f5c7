"""Angle arithmetic on the circle and on the projective line.

Angles on a circle of circumference ``period`` live in [0, period); the
projective line RP^1 is the period-pi case. All functions broadcast over
numpy arrays.
"""
from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap(theta, period: float = TWO_PI):
    """Reduce angles into [0, period)."""
    return np.mod(theta, period)


def circ_dist(a, b, period: float = TWO_PI):
    """Shortest arc distance on a circle of the given circumference."""
    d = np.abs(np.mod(a - b, period))
    return np.minimum(d, period - d)


def signed_circ_diff(a, b, period: float = TWO_PI):
    """Signed difference a - b wrapped into [-period/2, period/2)."""
    return np.mod(a - b + period / 2.0, period) - period / 2.0


def projective_dist(a, b):
    """Distance between lines through the origin, as angles mod pi."""
    return circ_dist(a, b, period=np.pi)


def circular_mean(angles, weights=None):
    """Extrinsic (resultant-vector) mean direction of angles in radians."""
    angles = np.asarray(angles, dtype=float)
    if weights is None:
        weights = np.ones_like(angles)
    weights = np.asarray(weights, dtype=float)
    c = float(np.sum(weights * np.cos(angles)))
    s = float(np.sum(weights * np.sin(angles)))
    return float(np.arctan2(s, c)) % TWO_PI


def resultant_length(angles, weights=None):
    """Norm of the weighted mean resultant vector (weights normalized to 1)."""
    angles = np.asarray(angles, dtype=float)
    if weights is None:
        weights = np.ones_like(angles)
    weights = np.asarray(weights, dtype=float)
    total = float(np.sum(weights))
    if total <= 0:
        return 0.0
    c = float(np.sum(weights * np.cos(angles))) / total
    s = float(np.sum(weights * np.sin(angles))) / total
    return float(np.hypot(c, s))


def circular_correlation(a, b) -> float:
    """How well one circular variable tracks another, up to rotation/reflection.

    max over the sign s of |mean exp(i (a - s b))|: exactly 1 when a = s b + c,
    about exp(-sigma^2 / 2) under angular noise of spread sigma, and O(1/sqrt n)
    for unrelated uniform angles. Unlike moment-based circular correlation
    coefficients it stays meaningful when the marginals are uniform on the
    circle, which is the typical case for recovered coordinates.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    same = np.abs(np.mean(np.exp(1j * (a - b))))
    flip = np.abs(np.mean(np.exp(1j * (a + b))))
    return float(max(same, flip))
