"""Mapper-style cluster graph over the fiberwise decomposition.

Per cover set, DBSCAN splits the fiber into local clusters; the cluster
graph G joins local clusters of nerve-adjacent fibers that share data
points, weighted by |intersection| / max(sizes). Connected components of G
are the global clusters; deleting light edges gives the filtration G^(t).
Secondary components are matched against the binary step-edge catalog.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import models, patch_core
from .circular_coords import maxmin_landmarks
from .errors import PoorMatch, TooSmall

DBSCAN_EPS = 0.3
DBSCAN_MIN_PTS = 5


def dbscan(points: np.ndarray, eps: float = DBSCAN_EPS,
           min_pts: int = DBSCAN_MIN_PTS) -> np.ndarray:
    """Deterministic DBSCAN labels; -1 marks noise.

    Neighborhoods are closed balls (d <= eps) counting the point itself.
    Seeds are processed in input order and expansion queues are ordered by
    point index, so border points always join the first cluster that claims
    them.
    """
    points = np.asarray(points, dtype=float)
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be > 0 and min_pts >= 1")
    n = points.shape[0]
    tree = cKDTree(points)
    neighbors = [np.sort(np.asarray(nb, dtype=int))
                 for nb in tree.query_ball_point(points, eps)]
    labels = np.full(n, -2, dtype=int)  # -2 unvisited, -1 noise
    cluster = -1
    for i in range(n):
        if labels[i] != -2:
            continue
        if len(neighbors[i]) < min_pts:
            labels[i] = -1
            continue
        cluster += 1
        labels[i] = cluster
        queue = list(neighbors[i])
        qi = 0
        while qi < len(queue):
            q = queue[qi]
            qi += 1
            if labels[q] == -1:
                labels[q] = cluster  # border point claimed
            if labels[q] != -2:
                continue
            labels[q] = cluster
            if len(neighbors[q]) >= min_pts:
                queue.extend(neighbors[q])
    return labels


@dataclass(frozen=True)
class LocalCluster:
    fiber: int
    label: int
    members: np.ndarray  # global record indices

    @property
    def key(self):
        return (self.fiber, self.label)


@dataclass
class ClusterGraph:
    nodes: list                         # LocalCluster
    edges: list                         # (node_idx_a, node_idx_b)
    weights: np.ndarray                 # (E,)
    node_index: dict = field(default_factory=dict)

    def __post_init__(self):
        self.node_index = {c.key: i for i, c in enumerate(self.nodes)}


def build_cluster_graph(fibers, labels_per_fiber, nerve_edges) -> ClusterGraph:
    """Nodes are per-fiber DBSCAN clusters; edges join intersecting clusters
    of nerve-adjacent fibers, weighted by |A and B| / max(|A|, |B|)."""
    nodes = []
    for j, (fib, labels) in enumerate(zip(fibers, labels_per_fiber)):
        labels = np.asarray(labels)
        for s in sorted(set(labels[labels >= 0])):
            nodes.append(LocalCluster(j, int(s), np.asarray(fib)[labels == s]))
    graph = ClusterGraph(nodes, [], np.empty(0))
    member_sets = [set(c.members.tolist()) for c in nodes]
    by_fiber = {}
    for i, c in enumerate(nodes):
        by_fiber.setdefault(c.fiber, []).append(i)
    edges, weights = [], []
    for j, k in nerve_edges:
        for a in by_fiber.get(j, []):
            for b in by_fiber.get(k, []):
                inter = len(member_sets[a] & member_sets[b])
                if inter > 0:
                    edges.append((a, b))
                    weights.append(inter / max(len(member_sets[a]),
                                               len(member_sets[b])))
    graph.edges = edges
    graph.weights = np.asarray(weights)
    return graph


def _components(n_nodes: int, edges) -> np.ndarray:
    parent = np.arange(n_nodes)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return np.array([find(i) for i in range(n_nodes)])


def global_clusters(graph: ClusterGraph, n_records: int):
    """Connected components of G, as (per-record component id, per-node id).

    Components are numbered 0, 1, ... by decreasing total record count;
    records in no cluster keep id -1.
    """
    roots = _components(len(graph.nodes), graph.edges)
    comp_members = {}
    for i, c in enumerate(graph.nodes):
        comp_members.setdefault(roots[i], set()).update(c.members.tolist())
    order = sorted(comp_members, key=lambda r: (-len(comp_members[r]), r))
    comp_id = {r: i for i, r in enumerate(order)}
    record_comp = np.full(n_records, -1, dtype=int)
    for r, members in comp_members.items():
        record_comp[list(members)] = comp_id[r]
    node_comp = np.array([comp_id[roots[i]] for i in range(len(graph.nodes))])
    return record_comp, node_comp


def filtration_components(graph: ClusterGraph, t: float) -> int:
    """Number of components of G^(t): edges of weight <= t are deleted."""
    if t < 0:
        raise ValueError("t must be >= 0")
    keep = [e for e, w in zip(graph.edges, graph.weights) if w > t]
    roots = _components(len(graph.nodes), keep)
    return len(set(roots.tolist()))


# -- step-edge identification -----------------------------------------------------

def step_edge_catalog(n_directions: int = 64):
    """All (edge, direction) flow patches on a direction grid.

    Returns (patches (56 * n_directions, 18), edge_ids, direction_angles).
    """
    edges = models.enumerate_step_edge_patches()
    angles = np.arange(n_directions) * 2 * np.pi / n_directions
    patches = np.empty((len(edges) * n_directions, 18))
    edge_ids = np.empty(len(edges) * n_directions, dtype=int)
    out_angles = np.empty(len(edges) * n_directions)
    row = 0
    for e in edges:
        for a in angles:
            patches[row] = models.step_edge_flow_patch(e, (np.cos(a), np.sin(a)))
            edge_ids[row] = e.id
            out_angles[row] = a
            row += 1
    return patches, edge_ids, out_angles


@dataclass
class StepEdgeMatch:
    edge_id: int
    direction: float
    distance: float
    antipodal_edge_id: int
    antipodal_direction: float


def match_step_edge(member_patches: np.ndarray, catalog, orientation: int = 1,
                    max_distance: float = 0.5) -> StepEdgeMatch:
    """Identify a local cluster with a binary step-edge flow patch.

    The cluster mean is renormalized and compared with every catalog patch
    whose direction lies in the half circle around the cluster's own
    predominant axis, oriented by `orientation`. The opposite orientation's
    identification (the complement edge, antipodal direction) is reported
    alongside. Raises PoorMatch above max_distance.
    """
    patches_cat, edge_ids, angles = catalog
    mean = np.asarray(member_patches, dtype=float).mean(axis=0)
    mean, _, _ = patch_core.normalize_patch(mean)
    axis = patch_core.predominant_direction(mean)
    ref = axis if orientation >= 0 else axis + np.pi
    half = np.cos(angles - ref) > 0
    d = np.linalg.norm(patches_cat[half] - mean, axis=1)
    best = int(np.argmin(d))
    if d[best] > max_distance:
        raise PoorMatch(f"best catalog distance {d[best]:.3f} > {max_distance}")
    eid = int(edge_ids[half][best])
    ang = float(angles[half][best])
    comp = models.complement_edge(models.enumerate_step_edge_patches()[eid - 1]).id
    return StepEdgeMatch(edge_id=eid, direction=ang, distance=float(d[best]),
                         antipodal_edge_id=comp,
                         antipodal_direction=float((ang + np.pi) % (2 * np.pi)))


def quadratic_catalog(n_grid: int = 64):
    """Quadratic-gradient patches P(s, t) on an n_grid x n_grid parameter grid."""
    s = np.arange(n_grid) * 2 * np.pi / n_grid
    ss, tt = np.meshgrid(s, s, indexing="ij")
    return models.quadratic_patch(ss.ravel(), tt.ravel())


def nearest_quadratic_distance(member_patches: np.ndarray,
                               catalog: np.ndarray | None = None) -> float:
    """Distance from the renormalized cluster mean to the quadratic family.

    Outlier clusters that fail the step-edge match are reported with this
    distance; a small value flags a quadratic-gradient cluster.
    """
    if catalog is None:
        catalog = quadratic_catalog()
    mean = np.asarray(member_patches, dtype=float).mean(axis=0)
    mean, _, _ = patch_core.normalize_patch(mean)
    return float(np.min(np.linalg.norm(catalog - mean, axis=1)))


# -- per-component circular analysis -----------------------------------------------

@dataclass
class ComponentAnalysis:
    indices: np.ndarray           # record indices analyzed (subsample)
    diagram: object               # PersistenceDiagram
    coords: object                # CircularCoordinates or None
    outcome: str                  # "circle" or "no_class"


def component_circular_analysis(points: np.ndarray, min_size: int = 40,
                                max_points: int = 500, prime: int = 47,
                                min_ratio: float = 2.0) -> ComponentAnalysis:
    """Rips persistence (dim <= 1) plus circular coordinates for one component.

    Components are subsampled to max_points by max-min. A dim-1 class is
    considered usable when death/birth >= min_ratio; otherwise the outcome is
    "no_class" (the circle-fragment case), with the diagram still returned.
    """
    from .circular_coords import circular_coordinates
    from .persistence import rips_persistence

    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n < min_size:
        raise TooSmall(f"component has {n} < {min_size} points")
    if n > max_points:
        from scipy.spatial.distance import pdist, squareform
        d = squareform(pdist(points))
        sub = maxmin_landmarks(d, max_points)
    else:
        sub = np.arange(n)
    res = rips_persistence(points=points[sub], max_dim=1, prime=prime)
    diag = res.diagram
    ones = diag.in_dim(1)
    usable = False
    if len(ones):
        b = diag.births[ones[0]]
        dth = min(float(diag.deaths[ones[0]]), res.max_scale)
        usable = b > 0 and dth / b >= min_ratio
    if not usable:
        return ComponentAnalysis(sub, diag, None, "no_class")
    coords = circular_coordinates(points=points[sub], prime=prime)
    return ComponentAnalysis(sub, diag, coords, "circle")
