"""Occlusion-level stratification of the instances of one frame.

Level 1 holds instances no other instance occludes; every other instance sits
one level behind its deepest occluder. Background occlusion never raises a
level.
"""

import logging
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np

import config
from src.errors import StratifyError
from src.flow_types import InstanceMaskSet, OcclusionGraph
from src.structured_logger import StructuredLogger
from src.utils import validate_same_shape

logger = logging.getLogger(__name__)
structured_logger = StructuredLogger(__name__)

Edge = Tuple[int, int]
# A visible-winner raster, per-instance amodal depth rasters, or explicit (front, behind) pairs
OcclusionEvidence = Union[np.ndarray, Mapping[int, np.ndarray], Iterable[Edge]]


def occlusion_edges(instances: InstanceMaskSet, depth_order: OcclusionEvidence) -> Dict[Edge, int]:
    """
    Collect occlusion edges with the pixel count supporting each.

    Edge (a, b) exists iff the amodal masks of a and b overlap at some pixel
    where a is strictly in front of b.

    Args:
        instances: Objects of the frame
        depth_order: Occlusion evidence, one of
            - 2-D integer raster naming the visible instance per pixel (0 = background)
            - mapping instance id -> amodal depth raster (inf where absent)
            - iterable of explicit (front, behind) pairs

    Returns:
        Dict[Edge, int]: (front, behind) -> overlap pixels where front is in front
    """
    by_id = instances.by_id()
    ids = sorted(by_id)
    edges: Dict[Edge, int] = {}

    if isinstance(depth_order, np.ndarray):
        winner = depth_order
        if instances.instances:
            validate_same_shape(winner, instances.instances[0].amodal_mask, names=["winner", "masks"])
        for a in ids:
            front = winner == a
            for b in ids:
                if a == b:
                    continue
                count = int(np.count_nonzero(front & by_id[b].amodal_mask))
                if count:
                    edges[(a, b)] = count
    elif isinstance(depth_order, Mapping):
        for a in ids:
            for b in ids:
                if a >= b:
                    continue
                overlap = by_id[a].amodal_mask & by_id[b].amodal_mask
                if not overlap.any():
                    continue
                da, db = depth_order[a][overlap], depth_order[b][overlap]
                # Exactly equal depths create no edge
                a_front = int(np.count_nonzero(da < db))
                b_front = int(np.count_nonzero(db < da))
                if a_front:
                    edges[(a, b)] = a_front
                if b_front:
                    edges[(b, a)] = b_front
    else:
        for a, b in depth_order:
            if a == b or a not in by_id or b not in by_id:
                continue
            count = int(np.count_nonzero(by_id[a].amodal_mask & by_id[b].amodal_mask))
            if count:
                edges[(a, b)] = count
    return edges


def find_cycle(nodes: Iterable[int], edges: Iterable[Edge]) -> Optional[List[int]]:
    """
    Return one directed cycle as a node list, or None when the graph is acyclic.

    Nodes and successors are visited in ascending order so the result is deterministic.
    """
    successors: Dict[int, List[int]] = {n: [] for n in nodes}
    for a, b in edges:
        successors.setdefault(a, []).append(b)
        successors.setdefault(b, [])
    for n in successors:
        successors[n].sort()

    state: Dict[int, int] = {}  # 1 = on stack, 2 = done
    for root in sorted(successors):
        if state.get(root):
            continue
        path = [root]
        iters = [iter(successors[root])]
        state[root] = 1
        while path:
            nxt = next(iters[-1], None)
            if nxt is None:
                state[path.pop()] = 2
                iters.pop()
            elif state.get(nxt) == 1:
                return path[path.index(nxt):]
            elif not state.get(nxt):
                state[nxt] = 1
                path.append(nxt)
                iters.append(iter(successors[nxt]))
    return None


def _break_cycles(edges: Dict[Edge, int], nodes: List[int], depths: Dict[int, Optional[float]]) -> Dict[Edge, int]:
    """Delete, per cycle, the edge with the least overlap until the graph is acyclic."""
    edges = dict(edges)

    def deletion_key(edge: Edge):
        front, behind = edge
        df, db = depths.get(front), depths.get(behind)
        # On equal overlap, drop the edge that puts the farther instance in front
        contradicts_depth = df is not None and db is not None and df > db
        return (edges[edge], 0 if contradicts_depth else 1, edge)

    for _ in range(len(edges) + 1):
        cycle = find_cycle(nodes, edges)
        if cycle is None:
            return edges
        cycle_edges = list(zip(cycle, cycle[1:] + cycle[:1]))
        victim = min(cycle_edges, key=deletion_key)
        logger.warning(f"Occlusion cycle {cycle}: removing edge {victim} ({edges[victim]} px)")
        if config.ENABLE_STRUCTURED_LOGGING:
            structured_logger.log_stratify_cycle_broken(
                cycle=cycle, removed_edge=victim, overlap_pixels=edges[victim]
            )
        del edges[victim]

    cycle = find_cycle(nodes, edges)
    raise StratifyError(cycle or [])


def longest_path_levels(nodes: Iterable[int], edges: Iterable[Edge]) -> Dict[int, int]:
    """
    Layer an acyclic occlusion graph: level = 1 + max level of occluders, 1 if none.

    Raises:
        StratifyError: If the graph still contains a cycle
    """
    nodes = sorted(set(nodes))
    edges = list(edges)
    occluders: Dict[int, List[int]] = {n: [] for n in nodes}
    indegree = {n: 0 for n in nodes}
    successors: Dict[int, List[int]] = {n: [] for n in nodes}
    for a, b in edges:
        occluders[b].append(a)
        successors[a].append(b)
        indegree[b] += 1

    levels: Dict[int, int] = {}
    ready = [n for n in nodes if indegree[n] == 0]
    while ready:
        ready.sort()
        node = ready.pop(0)
        levels[node] = 1 + max((levels[o] for o in occluders[node]), default=0)
        for nxt in successors[node]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                ready.append(nxt)

    if len(levels) != len(nodes):
        raise StratifyError(find_cycle(nodes, edges) or sorted(set(nodes) - set(levels)))
    return levels


def stratify(instances: InstanceMaskSet, depth_order: OcclusionEvidence) -> OcclusionGraph:
    """
    Assign every instance an occlusion level.

    Args:
        instances: Objects of one frame
        depth_order: Occlusion evidence (see occlusion_edges)

    Returns:
        OcclusionGraph: Acyclic graph with levels; no edge joins two same-level instances

    Raises:
        StratifyError: If an occlusion cycle survives resolution
    """
    nodes = sorted(instances.ids)
    depths = {inst.instance_id: inst.mean_depth for inst in instances}
    edges = _break_cycles(occlusion_edges(instances, depth_order), nodes, depths)
    levels = longest_path_levels(nodes, edges)

    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_stratify_done(levels=levels, edge_count=len(edges))
    return OcclusionGraph(nodes=tuple(nodes), edges=frozenset(edges), levels=levels)
