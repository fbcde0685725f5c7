"""Topological models for 3x3 optical-flow patches.

Library + CLI for discovering and verifying low-dimensional structure in
spaces of high-contrast optical-flow patches: the flow torus and its
3-manifold extension, circle-bundle inference over the predominant-direction
map, and the binary step-edge circles found by cluster-graph analysis.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    angles,
    bundle,
    circular_coords,
    cluster_graph,
    density,
    errors,
    flow_io,
    models,
    patch_core,
    persistence,
)
