import numpy as np
import pytest
from scipy.spatial.distance import pdist, squareform

from flowbundle.errors import NotPrime, TooLarge
from flowbundle.persistence import (
    PersistenceDiagram,
    betti_at_scale,
    enclosing_radius,
    rips_persistence,
)

from oracles import bottleneck_distance, brute_diagram, diagram_points, diagrams_equal


def test_single_point():
    res = rips_persistence(points=np.zeros((1, 3)))
    assert diagram_points(res) == [(0, 0.0, np.inf)]


def test_unit_square():
    # hand-computed: square cycle born at edge length 1, filled by the
    # diagonals at sqrt(2); three merge edges of length 1
    pts = np.array([[0.0, 0], [1, 0], [0, 1], [1, 1]])
    res = rips_persistence(points=pts, max_dim=1, max_scale=2.0)
    got = diagram_points(res)
    want = [(0, 0.0, 1.0)] * 3 + [(0, 0.0, np.inf), (1, 1.0, np.sqrt(2.0))]
    assert diagrams_equal(got, sorted(want))


def test_betti_at_scale_square():
    pts = np.array([[0.0, 0], [1, 0], [0, 1], [1, 1]])
    res = rips_persistence(points=pts, max_dim=2, max_scale=2.0)
    assert betti_at_scale(res.diagram, 0.0) == (4, 0, 0)
    assert betti_at_scale(res.diagram, 1.2) == (1, 1, 0)
    assert betti_at_scale(res.diagram, 1.9) == (1, 0, 0)
    with pytest.raises(ValueError):
        betti_at_scale(res.diagram, -1.0)


def test_circle_12_frozen():
    t = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    pts = np.stack([np.cos(t), np.sin(t)], axis=1)
    res = rips_persistence(points=pts, max_dim=1, max_scale=2.0)
    ones = res.diagram.in_dim(1)
    assert len(ones) == 1
    i = ones[0]
    assert res.diagram.births[i] == pytest.approx(2 * np.sin(np.pi / 12), abs=1e-12)
    assert res.diagram.deaths[i] == pytest.approx(np.sqrt(3.0), abs=1e-12)


def test_cocycle_pairs_with_generating_cycle():
    t = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    pts = np.stack([np.cos(t), np.sin(t)], axis=1)
    res = rips_persistence(points=pts, max_dim=1, max_scale=2.0)
    cocycle = res.cocycles[0]
    p = cocycle.prime
    lifted = {(int(a), int(b)): int(c) for (a, b), c in
              zip(cocycle.edges, cocycle.coeffs)}

    def value(a, b):  # oriented evaluation
        if (a, b) in lifted:
            return lifted[(a, b)]
        if (b, a) in lifted:
            return -lifted[(b, a)]
        return 0

    total = sum(value(i, (i + 1) % 12) for i in range(12)) % p
    assert total != 0


def test_matches_brute_force_reduction(rng):
    for trial in range(8):
        n = int(rng.integers(5, 11))
        pts = rng.normal(size=(n, 3))
        dist = squareform(pdist(pts))
        ms = enclosing_radius(dist)
        for p in (2, 47):
            want = brute_diagram(dist, 2, ms, p)
            got = diagram_points(rips_persistence(dist=dist, max_dim=2,
                                                  max_scale=ms, prime=p))
            assert diagrams_equal(want, got)


def test_field_independence(rng):
    for _ in range(4):
        pts = rng.normal(size=(40, 4))
        d2 = diagram_points(rips_persistence(points=pts, max_dim=1, prime=2))
        d47 = diagram_points(rips_persistence(points=pts, max_dim=1, prime=47))
        assert diagrams_equal(d2, d47)


def test_permutation_invariance(rng):
    pts = rng.normal(size=(30, 3))
    perm = rng.permutation(30)
    a = diagram_points(rips_persistence(points=pts, max_dim=1))
    b = diagram_points(rips_persistence(points=pts[perm], max_dim=1))
    assert diagrams_equal(a, b, tol=1e-10)


def test_stability_smoke(rng):
    pts = rng.normal(size=(25, 3))
    delta = 0.01
    moved = pts + rng.uniform(-delta, delta, pts.shape) / np.sqrt(3)
    scale = 2.5
    a = rips_persistence(points=pts, max_dim=1, max_scale=scale)
    b = rips_persistence(points=moved, max_dim=1, max_scale=scale)
    for dim in (0, 1):
        da = [(a.diagram.births[i], a.diagram.deaths[i])
              for i in a.diagram.in_dim(dim)]
        db = [(b.diagram.births[i], b.diagram.deaths[i])
              for i in b.diagram.in_dim(dim)]
        assert bottleneck_distance(da, db) <= 2 * delta + 1e-12


def test_deterministic_ordering(rng):
    pts = rng.normal(size=(40, 3))
    res = rips_persistence(points=pts, max_dim=1)
    d = res.diagram
    assert np.all(np.diff(d.dims) >= 0)
    pers = np.where(np.isinf(d.deaths), np.inf, d.deaths - d.births)
    for dim in (0, 1):
        idx = d.in_dim(dim)
        assert np.all(np.diff(pers[idx]) <= 1e-15)
    assert len(res.cocycles) == len(d.in_dim(1))


def test_guards():
    with pytest.raises(NotPrime):
        rips_persistence(points=np.zeros((3, 2)), prime=46)
    with pytest.raises(TooLarge):
        rips_persistence(dist=np.zeros((1300, 1300)), max_dim=2)


def test_default_max_scale_is_enclosing_radius(rng):
    pts = rng.normal(size=(20, 3))
    dist = squareform(pdist(pts))
    res = rips_persistence(points=pts, max_dim=1)
    assert res.max_scale == pytest.approx(enclosing_radius(dist), abs=1e-12)
    # exactly one infinite dim-0 class at the enclosing radius
    d = res.diagram
    inf0 = [i for i in d.in_dim(0) if np.isinf(d.deaths[i])]
    assert len(inf0) == 1


def test_diagram_csv_roundtrip():
    diag = PersistenceDiagram(np.array([0, 1]), np.array([0.0, 0.5]),
                              np.array([np.inf, 1.25]))
    csv = diag.to_csv()
    assert csv.splitlines()[0] == "dim,birth,death"
    assert "inf" in csv.splitlines()[1]
    assert "1.25" in csv.splitlines()[2]
