"""Vessel tree structure and its construction from skeletons.

A tree is a directed graph rooted at its origin (the ``source`` node).
Every edge runs parent to child and stores its centerline as an 8-connected
pixel polyline together with its arc length; every node stores its distance
to the origin along those centerlines.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import networkx as nx
import numpy as np
from scipy import ndimage

from tracer.errors import InvalidArgumentError
from tracer.raster import (
    Point,
    connected_components,
    dilate,
    line_points,
    neighbours_of,
    node_type_map,
    polyline_length,
    rasterize_polyline,
)

logger = logging.getLogger(__name__)

SOURCE = "source"
BIFURCATION = "bifurcation"
ENDPOINT = "endpoint"
NODE_KINDS = (SOURCE, BIFURCATION, ENDPOINT)


class VesselTree:
    """Rooted tree of source, bifurcation and endpoint nodes."""

    def __init__(self, tree_id: str, origin: Point):
        self.tree_id = tree_id
        self.graph = nx.DiGraph()
        self._next_id = 0
        self.origin = self.add_node(SOURCE, origin)
        self.graph.nodes[self.origin]["dist"] = 0.0

    # -- construction -------------------------------------------------

    def add_node(self, kind: str, position: Point, node_id: Optional[int] = None) -> int:
        if kind not in NODE_KINDS:
            raise InvalidArgumentError(f"Unknown node kind: {kind}")
        if node_id is None:
            node_id = self._next_id
        self._next_id = max(self._next_id, node_id + 1)
        self.graph.add_node(node_id, kind=kind, pos=(int(position[0]), int(position[1])), dist=0.0)
        return node_id

    def add_edge(self, parent: int, child: int, polyline: Sequence[Point]) -> None:
        """Join ``parent`` to ``child`` along ``polyline`` and set the child's distance."""
        pixels = rasterize_polyline([tuple(p) for p in polyline])
        arc = polyline_length(pixels)
        if arc <= 0:
            raise InvalidArgumentError(f"Edge {parent}->{child} has zero length")
        self.graph.add_edge(parent, child, polyline=pixels, arc_length=arc)
        self.graph.nodes[child]["dist"] = self.distance(parent) + arc

    def remove_node(self, node: int) -> None:
        self.graph.remove_node(node)

    def copy(self) -> "VesselTree":
        clone = VesselTree.__new__(VesselTree)
        clone.tree_id = self.tree_id
        clone.origin = self.origin
        clone._next_id = self._next_id
        clone.graph = nx.DiGraph()
        for node, data in self.graph.nodes(data=True):
            clone.graph.add_node(node, **data)
        for parent, child, data in self.graph.edges(data=True):
            clone.graph.add_edge(parent, child, polyline=list(data["polyline"]), arc_length=data["arc_length"])
        return clone

    # -- queries ------------------------------------------------------

    @property
    def node_count(self) -> int:
        return self.graph.number_of_nodes()

    def kind(self, node: int) -> str:
        return self.graph.nodes[node]["kind"]

    def position(self, node: int) -> Point:
        return self.graph.nodes[node]["pos"]

    def distance(self, node: int) -> float:
        return self.graph.nodes[node]["dist"]

    def nodes_of_kind(self, kind: str) -> list[int]:
        return sorted(n for n, k in self.graph.nodes(data="kind") if k == kind)

    def endpoints(self) -> list[int]:
        return self.nodes_of_kind(ENDPOINT)

    def bifurcations(self) -> list[int]:
        return self.nodes_of_kind(BIFURCATION)

    def census(self) -> dict[str, int]:
        return {kind: len(self.nodes_of_kind(kind)) for kind in NODE_KINDS}

    def parent(self, node: int) -> Optional[int]:
        predecessors = list(self.graph.predecessors(node))
        return predecessors[0] if predecessors else None

    def edge_polyline(self, parent: int, child: int) -> list[Point]:
        return self.graph.edges[parent, child]["polyline"]

    def max_distance(self) -> float:
        return max(self.distance(n) for n in self.graph.nodes)

    def nearest_node(self, point: Point) -> tuple[int, float]:
        """Node closest to ``point`` (ties by smaller id) and its distance."""
        best, best_distance = None, float("inf")
        for node in sorted(self.graph.nodes):
            x, y = self.position(node)
            distance = float(np.hypot(x - point[0], y - point[1]))
            if distance < best_distance:
                best, best_distance = node, distance
        return best, best_distance

    def path_to_origin(self, node: int) -> list[Point]:
        """Centerline pixels from ``node`` back to the origin."""
        path = [self.position(node)]
        current = node
        while (parent := self.parent(current)) is not None:
            polyline = self.edge_polyline(parent, current)
            path.extend(reversed(polyline[:-1]))
            current = parent
        return path

    def pixel_index(self) -> dict[Point, tuple[int, int, int]]:
        """Map each centerline pixel to (parent, child, index) of an edge holding it."""
        index: dict[Point, tuple[int, int, int]] = {}
        for parent, child in sorted(self.graph.edges):
            for i, pixel in enumerate(self.edge_polyline(parent, child)):
                index.setdefault(pixel, (parent, child, i))
        return index

    def skeleton_mask(self, shape: Sequence[int]) -> np.ndarray:
        mask = np.zeros(shape[:2], dtype=bool)
        for pixel in self._all_pixels():
            x, y = pixel
            if 0 <= y < mask.shape[0] and 0 <= x < mask.shape[1]:
                mask[y, x] = True
        return mask

    def distance_raster(self, shape: Sequence[int]) -> np.ndarray:
        """Arc distance to the origin on centerline pixels, NaN elsewhere."""
        raster = np.full(shape[:2], np.nan)
        ox, oy = self.position(self.origin)
        raster[oy, ox] = 0.0
        for parent, child in sorted(self.graph.edges):
            polyline = self.edge_polyline(parent, child)
            steps = np.sqrt((np.diff(np.asarray(polyline, dtype=float), axis=0) ** 2).sum(axis=1))
            arc = self.distance(parent) + np.concatenate([[0.0], np.cumsum(steps)])
            for (x, y), value in zip(polyline, arc):
                if np.isnan(raster[y, x]) or value < raster[y, x]:
                    raster[y, x] = value
        return raster

    def _all_pixels(self) -> Iterable[Point]:
        yield self.position(self.origin)
        for _, _, polyline in self.graph.edges(data="polyline"):
            yield from polyline

    # -- validity -----------------------------------------------------

    def problems(self) -> list[str]:
        """Violated structural invariants, empty when the tree is valid."""
        issues = []
        if not nx.is_arborescence(self.graph):
            issues.append("graph is not a single rooted tree")
        elif self.graph.in_degree(self.origin) != 0:
            issues.append("origin is not the root")
        if self.kind(self.origin) != SOURCE:
            issues.append("origin is not a source node")
        for node, kind in self.graph.nodes(data="kind"):
            if kind == SOURCE and node != self.origin:
                issues.append(f"node {node} is a second source")
            if kind == ENDPOINT and self.graph.degree(node) != 1:
                issues.append(f"endpoint {node} has degree {self.graph.degree(node)}")
            if kind == BIFURCATION and self.graph.out_degree(node) < 2:
                issues.append(f"bifurcation {node} has fewer than two children")
            if node != self.origin and self.graph.out_degree(node) == 0 and kind != ENDPOINT:
                issues.append(f"leaf {node} is not an endpoint")
        for parent, child, arc in self.graph.edges(data="arc_length"):
            if arc <= 0:
                issues.append(f"edge {parent}->{child} has non-positive length")
        return issues

    def is_valid(self) -> bool:
        return not self.problems()

    # -- serialization ------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "tree_id": self.tree_id,
            "origin": list(self.position(self.origin)),
            "nodes": [
                {
                    "id": node,
                    "kind": self.kind(node),
                    "pos": list(self.position(node)),
                    "dist_to_origin": self.distance(node),
                }
                for node in sorted(self.graph.nodes)
            ],
            "edges": [
                {
                    "parent": parent,
                    "child": child,
                    "polyline": [list(p) for p in self.edge_polyline(parent, child)],
                    "arc_length": self.graph.edges[parent, child]["arc_length"],
                }
                for parent, child in sorted(self.graph.edges)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VesselTree":
        tree = cls.__new__(cls)
        tree.tree_id = data["tree_id"]
        tree.graph = nx.DiGraph()
        tree._next_id = 0
        tree.origin = None
        for node in data["nodes"]:
            node_id = tree.add_node(node["kind"], tuple(node["pos"]), node_id=int(node["id"]))
            tree.graph.nodes[node_id]["dist"] = float(node["dist_to_origin"])
            if node["kind"] == SOURCE:
                tree.origin = node_id
        if tree.origin is None:
            raise InvalidArgumentError("Tree has no source node")
        for edge in data["edges"]:
            tree.graph.add_edge(
                int(edge["parent"]),
                int(edge["child"]),
                polyline=[tuple(p) for p in edge["polyline"]],
                arc_length=float(edge["arc_length"]),
            )
        return tree


@dataclass
class _Branch:
    """Centerline run from a start pixel to an endpoint or junction."""

    polyline: list[Point]
    end_kind: str
    children: list["_Branch"] = field(default_factory=list)
    open: bool = False

    @property
    def length(self) -> float:
        return polyline_length(self.polyline)


class SkeletonWalker:
    """Walk a skeleton from a root pixel and collect its branching structure.

    Node-type values drive the walk: an endpoint (2) stops a branch, a
    connection (3) continues it and a bifurcation (4 or more) records a
    junction.  Adjacent bifurcation pixels form one junction.  Terminal
    branches shorter than ``min_branch_length`` that end away from the
    frontier are spurs and are dropped; junctions left with a single child
    are dissolved into a plain centerline.
    """

    def __init__(
        self,
        skeleton: np.ndarray,
        frontier: Optional[np.ndarray] = None,
        min_branch_length: float = 10.0,
        junction_merge_length: float = 3.0,
    ):
        self.skeleton = np.asarray(skeleton, dtype=bool)
        self.values = node_type_map(self.skeleton)
        self.frontier = (
            np.zeros_like(self.skeleton) if frontier is None else np.asarray(frontier, dtype=bool)
        )
        self.min_branch_length = min_branch_length
        self.junction_merge_length = junction_merge_length
        self.visited = np.zeros_like(self.skeleton)

    def _on(self, pixel: Point) -> bool:
        return bool(self.skeleton[pixel[1], pixel[0]])

    def _unvisited_neighbours(self, pixel: Point) -> list[Point]:
        return [
            n
            for n in neighbours_of(pixel, self.skeleton.shape)
            if self._on(n) and not self.visited[n[1], n[0]]
        ]

    def _mark(self, pixel: Point) -> None:
        self.visited[pixel[1], pixel[0]] = True

    def is_open(self, pixel: Point) -> bool:
        return bool(self.frontier[pixel[1], pixel[0]])

    def _junction(self, pixel: Point) -> tuple[Point, list[Point]]:
        """Collect the junction around ``pixel``; return its representative and exits."""
        cluster = [pixel]
        self._mark(pixel)
        queue = [pixel]
        while queue:
            current = queue.pop()
            for n in self._unvisited_neighbours(current):
                if self.values[n[1], n[0]] >= 4:
                    self._mark(n)
                    cluster.append(n)
                    queue.append(n)
        cx = np.mean([p[0] for p in cluster])
        cy = np.mean([p[1] for p in cluster])
        representative = min(cluster, key=lambda p: ((p[0] - cx) ** 2 + (p[1] - cy) ** 2, p[1], p[0]))
        exits: list[Point] = []
        for member in sorted(cluster, key=lambda p: (p[1], p[0])):
            for n in self._unvisited_neighbours(member):
                if n not in exits:
                    exits.append(n)
        return representative, exits

    def _follow(self, start: Point, first: Point) -> _Branch:
        polyline = [start, first]
        self._mark(first)
        current = first
        while True:
            if self.values[current[1], current[0]] >= 4:
                representative, exits = self._junction(current)
                if representative != polyline[-1]:
                    polyline.append(representative)
                children = [
                    self._follow(representative, e)
                    for e in exits
                    if not self.visited[e[1], e[0]]
                ]
                return self._resolve(polyline, children)
            following = self._unvisited_neighbours(current)
            if not following:
                return _Branch(polyline, ENDPOINT, [], open=self.is_open(current))
            current = following[0]
            self._mark(current)
            polyline.append(current)

    def _is_spur(self, branch: _Branch) -> bool:
        return (
            branch.end_kind == ENDPOINT
            and not branch.open
            and branch.length < self.min_branch_length
        )

    def _settle(self, children: list[_Branch]) -> list[_Branch]:
        """Drop spurs and absorb junctions sitting right next to their parent."""
        settled: list[_Branch] = []
        for child in children:
            if self._is_spur(child):
                continue
            if child.end_kind == BIFURCATION and child.length <= self.junction_merge_length:
                for grandchild in child.children:
                    settled.append(
                        _Branch(
                            child.polyline + grandchild.polyline[1:],
                            grandchild.end_kind,
                            grandchild.children,
                            grandchild.open,
                        )
                    )
                continue
            settled.append(child)
        return settled

    def _resolve(self, polyline: list[Point], children: list[_Branch]) -> _Branch:
        children = self._settle(children)
        end = polyline[-1]
        if not children:
            return _Branch(polyline, ENDPOINT, [], open=self.is_open(end))
        if len(children) == 1:
            only = children[0]
            return _Branch(polyline + only.polyline[1:], only.end_kind, only.children, only.open)
        return _Branch(polyline, BIFURCATION, children)

    def walk(self, root: Point) -> list[_Branch]:
        """Branches leaving ``root``; the root itself becomes the parent node."""
        if not self._on(root):
            raise InvalidArgumentError(f"Root {root} is not on the skeleton")
        if self.values[root[1], root[0]] >= 4:
            _, exits = self._junction(root)
        else:
            self._mark(root)
            exits = self._unvisited_neighbours(root)
        branches = [self._follow(root, e) for e in exits if not self.visited[e[1], e[0]]]
        return self._settle(branches)


def _attach_branch(tree: VesselTree, parent: int, branch: _Branch, prefix: Sequence[Point] = ()) -> list[int]:
    """Add ``branch`` below ``parent``; return the endpoint ids created."""
    polyline = list(prefix) + (branch.polyline[1:] if prefix else branch.polyline)
    node = tree.add_node(branch.end_kind, branch.polyline[-1])
    tree.add_edge(parent, node, polyline)
    created = [node] if branch.end_kind == ENDPOINT else []
    for child in branch.children:
        created.extend(_attach_branch(tree, node, child))
    return created


def build_tree(
    skeleton: np.ndarray,
    origin: Point,
    tree_id: str = "tree",
    frontier: Optional[np.ndarray] = None,
    min_branch_length: float = 10.0,
) -> VesselTree:
    """Build the tree of the skeleton component reachable from ``origin``."""
    tree = VesselTree(tree_id, origin)
    walker = SkeletonWalker(skeleton, frontier, min_branch_length)
    for branch in walker.walk(origin):
        _attach_branch(tree, tree.origin, branch)
    logger.debug(f"Built tree {tree_id}: {tree.census()}")
    return tree


def _graft(tree: VesselTree, anchor: Point, attach: Point, branch: _Branch, extension_reach: float) -> list[int]:
    """Connect ``branch`` (starting at ``attach``) to the tree pixel ``anchor``.

    An anchor close to the tip of an endpoint edge extends that edge and
    retires the endpoint; an anchor on a node hangs the branch from it; any
    other anchor splits its edge at a new bifurcation.
    """
    located = tree.pixel_index().get(anchor)
    if located is None:
        # origin-only tree, or an anchor the tree no longer holds
        if anchor != tree.position(tree.origin):
            raise InvalidArgumentError(f"Anchor {anchor} is not on tree {tree.tree_id}")
        return _attach_branch(tree, tree.origin, branch, prefix=line_points(anchor, attach))
    parent, child, i = located
    polyline = tree.edge_polyline(parent, child)
    bridge = line_points(anchor, attach)
    tail = polyline_length(polyline[i:])

    if tree.kind(child) == ENDPOINT and tail <= extension_reach:
        tree.remove_node(child)
        return _attach_branch(tree, parent, branch, prefix=polyline[: i + 1] + bridge[1:])
    if i == 0:
        return _attach_branch(tree, parent, branch, prefix=bridge)
    if i == len(polyline) - 1:
        return _attach_branch(tree, child, branch, prefix=bridge)

    junction = tree.add_node(BIFURCATION, anchor)
    tree.graph.remove_edge(parent, child)
    tree.add_edge(parent, junction, polyline[: i + 1])
    tree.graph.add_edge(
        junction,
        child,
        polyline=polyline[i:],
        arc_length=polyline_length(polyline[i:]),
    )
    return _attach_branch(tree, junction, branch, prefix=bridge)


def extend_tree(
    tree: VesselTree,
    skeleton: np.ndarray,
    frontier: Optional[np.ndarray] = None,
    min_branch_length: float = 10.0,
    attach_radius: int = 3,
) -> list[int]:
    """Graft skeleton pixels lying beyond the current centerlines onto ``tree``.

    Skeleton pixels within ``attach_radius`` of existing centerlines are
    considered already represented.  Each remaining component that touches
    that band is walked from its pixel nearest to the tree and grafted.
    Returns the ids of endpoints created.
    """
    skeleton = np.asarray(skeleton, dtype=bool)
    shape = skeleton.shape
    centerline = tree.skeleton_mask(shape)
    band = dilate(centerline, attach_radius)
    fresh = skeleton & ~band
    if not fresh.any():
        return []

    labels, count = connected_components(fresh)
    touching = dilate(band, 1) & fresh

    created: list[int] = []
    stale = True
    for component in range(1, count + 1):
        members = labels == component
        contact = members & touching
        if not contact.any():
            continue
        if stale:
            # a graft may retire an endpoint and drop its tail pixels
            centerline = tree.skeleton_mask(shape)
            distance, (near_y, near_x) = ndimage.distance_transform_edt(~centerline, return_indices=True)
            stale = False
        ys, xs = np.nonzero(contact)
        pick = np.lexsort((xs, ys, distance[ys, xs]))[0]
        attach = (int(xs[pick]), int(ys[pick]))
        anchor = (int(near_x[attach[1], attach[0]]), int(near_y[attach[1], attach[0]]))

        walker = SkeletonWalker(members, frontier, min_branch_length)
        children = walker.walk(attach)
        if not children:
            root = _Branch([attach], ENDPOINT, [], open=walker.is_open(attach))
        elif len(children) == 1:
            root = children[0]
        else:
            root = _Branch([attach], BIFURCATION, children)

        reach = polyline_length(line_points(anchor, attach)) + root.length
        if root.end_kind == ENDPOINT and not root.open and reach < min_branch_length:
            continue
        created.extend(_graft(tree, anchor, attach, root, extension_reach=attach_radius + 2))
        stale = True

    if created:
        logger.debug(f"Tree {tree.tree_id} grew {len(created)} endpoint(s)")
    return created
