"""CAD database plus the hierarchical search structure over it.

The tree's first level discretizes the up-axis rotation into evenly spaced
bins; below each bin the class's models are organized by agglomerative
clustering (average linkage over symmetric chamfer of canonical surface
samples), flattened to a fixed branching factor. Leaves are single models,
cluster nodes carry a medoid representative.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.cluster.hierarchy import linkage, to_tree

from .geometry import GeometryError, TriMesh, normalize_to_unit_box, sample_surface
from .meshio import load_obj
from .metrics import SpatialIndex

CANONICAL_SAMPLE_COUNT = 5000
TREE_SCHEMA_VERSION = 1
_SAMPLE_SEED_SALT = 0x5EED


class TreeFormatError(ValueError):
    """Malformed or invariant-violating serialized tree."""


def canonical_sample_seed(model_id: str) -> int:
    return zlib.crc32(model_id.encode("utf-8")) ^ _SAMPLE_SEED_SALT


@dataclass(frozen=True)
class CadModel:
    """Database entry: canonical mesh (unit box at origin) plus cached samples."""

    id: str
    class_label: str
    mesh: TriMesh
    samples: np.ndarray

    @staticmethod
    def from_mesh(model_id: str, class_label: str, mesh: TriMesh) -> "CadModel":
        canonical = normalize_to_unit_box(mesh)
        pts = sample_surface(canonical, CANONICAL_SAMPLE_COUNT, canonical_sample_seed(model_id))
        return CadModel(id=model_id, class_label=class_label, mesh=canonical, samples=pts.points)


class CadDatabase:
    """Models indexed by id and class; meshes are normalized on load."""

    def __init__(self, models: list[CadModel]):
        self.models: dict[str, CadModel] = {}
        for m in models:
            if m.id in self.models:
                raise GeometryError(f"duplicate model id {m.id!r}")
            self.models[m.id] = m

    def __len__(self) -> int:
        return len(self.models)

    def __contains__(self, model_id: str) -> bool:
        return model_id in self.models

    def get(self, model_id: str) -> CadModel:
        if model_id not in self.models:
            raise KeyError(f"unknown model id {model_id!r}")
        return self.models[model_id]

    def by_class(self, class_label: str) -> list[CadModel]:
        return [m for m in self.models.values() if m.class_label == class_label]

    @property
    def classes(self) -> list[str]:
        return sorted({m.class_label for m in self.models.values()})

    @staticmethod
    def load_manifest(path: str | Path) -> "CadDatabase":
        path = Path(path)
        entries = json.loads(path.read_text())
        models = []
        for e in entries:
            mesh = load_obj(path.parent / e["mesh_path"])
            models.append(CadModel.from_mesh(e["id"], e["class"], mesh))
        return CadDatabase(models)


def pairwise_chamfer_matrix(samples: list[np.ndarray]) -> np.ndarray:
    """Symmetric-chamfer distance matrix between canonical sample sets."""
    n = len(samples)
    indices = [SpatialIndex(s) for s in samples]
    mat = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = indices[j].nearest_sq_dist(samples[i]).mean()
            d += indices[i].nearest_sq_dist(samples[j]).mean()
            mat[i, j] = mat[j, i] = d
    return mat


@dataclass
class TreeNode:
    kind: str  # root | pose_bin | cluster | leaf
    children: list["TreeNode"] = field(default_factory=list)
    rotation_offset: float = 0.0
    representative: str | None = None
    cad_id: str | None = None
    index: int = -1  # preorder position, assigned on build/load

    def leaf_ids(self) -> list[str]:
        if self.kind == "leaf":
            return [self.cad_id]
        out: list[str] = []
        for c in self.children:
            out.extend(c.leaf_ids())
        return out


class ShapeTree:
    def __init__(self, class_label: str, pose_bins: int, branching: int, root: TreeNode):
        self.class_label = class_label
        self.pose_bins = pose_bins
        self.branching = branching
        self.root = root
        self.nodes: list[TreeNode] = []
        self._parent: dict[int, TreeNode] = {}
        self._index_nodes()

    def _index_nodes(self):
        self.nodes = []

        def visit(node: TreeNode, parent: TreeNode | None):
            node.index = len(self.nodes)
            self.nodes.append(node)
            if parent is not None:
                self._parent[node.index] = parent
            for c in node.children:
                visit(c, node)

        visit(self.root, None)

    def parent_of(self, node: TreeNode) -> TreeNode | None:
        return self._parent.get(node.index)

    @property
    def num_leaves(self) -> int:
        return sum(1 for n in self.nodes if n.kind == "leaf")

    def leaf_paths(self) -> list[list[TreeNode]]:
        """Every root-to-leaf path, in tree order."""
        paths: list[list[TreeNode]] = []

        def walk(node: TreeNode, prefix: list[TreeNode]):
            cur = prefix + [node]
            if node.kind == "leaf":
                paths.append(cur)
            for c in node.children:
                walk(c, cur)

        walk(self.root, [])
        return paths

    def path_candidate(self, path: list[TreeNode]) -> tuple[str, float]:
        """(cad_id, rotation_offset) encoded by a root-to-leaf path."""
        if not path or path[0] is not self.root:
            raise GeometryError("path must start at the tree root")
        for a, b in zip(path, path[1:]):
            if b not in a.children:
                raise GeometryError("path nodes are not parent/child")
        if path[-1].kind != "leaf":
            raise GeometryError("path must end at a leaf")
        offset = 0.0
        for node in path:
            if node.kind == "pose_bin":
                offset = node.rotation_offset
        return path[-1].cad_id, offset

    def cluster_siblings(self, cad_id: str) -> set[str]:
        """Members of the deepest cluster containing the model's leaf."""
        for node in self.nodes:
            if node.kind == "leaf" and node.cad_id == cad_id:
                parent = self.parent_of(node)
                if parent is not None and parent.kind == "cluster":
                    return set(parent.leaf_ids())
                return {cad_id}
        raise KeyError(f"model {cad_id!r} not in tree")


# a subtree is left whole when its merge is this much tighter than the splits
# already made at the node; keeps near-duplicate groups in one cluster
_SPLIT_STOP_RATIO = 0.5


def _split_groups(cluster_node, branching: int):
    """Split a binary dendrogram node into up to `branching` subtrees.

    The loosest merge breaks first. Splitting stops early when the next
    candidate merge is much tighter than the ones already broken, so tight
    shape groups survive as single clusters instead of being scattered just
    to fill the branching factor.
    """
    groups = [cluster_node]
    min_split = None
    while len(groups) < branching:
        candidates = [g for g in groups if not g.is_leaf()]
        if not candidates:
            break
        # highest merge distance first, pre-order id breaks ties deterministically
        best = max(candidates, key=lambda g: (g.dist, -g.id))
        if min_split is not None and best.dist < _SPLIT_STOP_RATIO * min_split:
            break
        min_split = best.dist if min_split is None else min(min_split, best.dist)
        groups.remove(best)
        groups.extend([best.get_left(), best.get_right()])
    groups.sort(key=lambda g: min(g.pre_order()))
    return groups


def _medoid(member_idx: list[int], dist: np.ndarray, models: list[CadModel]) -> str:
    sums = dist[np.ix_(member_idx, member_idx)].sum(axis=1)
    return models[member_idx[int(np.argmin(sums))]].id


def build_tree(
    models: list[CadModel],
    class_label: str,
    pose_bins: int = 4,
    branching: int = 4,
    max_depth: int = 6,
    chamfer_matrix: np.ndarray | None = None,
) -> ShapeTree:
    """Build the search tree for one class.

    Deterministic given model order. ``chamfer_matrix`` may be passed to
    reuse a precomputed distance matrix (tests, repeated builds).
    """
    models = [m for m in models if m.class_label == class_label]
    if not models:
        raise GeometryError(f"no models of class {class_label!r}")
    if pose_bins < 1:
        raise GeometryError("pose_bins must be >= 1")
    if branching < 2:
        raise GeometryError("branching must be >= 2")
    dist = chamfer_matrix
    if dist is None:
        dist = pairwise_chamfer_matrix([m.samples for m in models])

    def leaf_for(i: int) -> TreeNode:
        return TreeNode(kind="leaf", cad_id=models[i].id)

    def build_cluster(dendro, depth: int) -> TreeNode:
        member_idx = dendro.pre_order()
        if dendro.is_leaf():
            return leaf_for(dendro.id)
        node = TreeNode(kind="cluster", representative=_medoid(member_idx, dist, models))
        if depth >= max_depth:
            # depth cap: attach members directly, branching factor be damned
            node.children = [leaf_for(i) for i in sorted(member_idx)]
            return node
        node.children = [build_cluster(g, depth + 1) for g in _split_groups(dendro, branching)]
        return node

    if len(models) == 1:
        bin_children = lambda: [leaf_for(0)]  # noqa: E731
    else:
        condensed = dist[np.triu_indices(len(models), k=1)]
        dendro = to_tree(linkage(condensed, method="average"))
        top_groups = _split_groups(dendro, branching)
        bin_children = lambda: [build_cluster(g, 1) for g in top_groups]  # noqa: E731

    root = TreeNode(kind="root")
    for b in range(pose_bins):
        bin_node = TreeNode(kind="pose_bin", rotation_offset=2.0 * math.pi * b / pose_bins)
        bin_node.children = bin_children()
        root.children.append(bin_node)
    return ShapeTree(class_label=class_label, pose_bins=pose_bins, branching=branching, root=root)


def _node_to_json(node: TreeNode) -> dict:
    out: dict = {"kind": node.kind}
    if node.kind == "pose_bin":
        out["rotation_offset"] = node.rotation_offset
    elif node.kind == "cluster":
        out["representative"] = node.representative
    elif node.kind == "leaf":
        out["cad_id"] = node.cad_id
        return out
    out["children"] = [_node_to_json(c) for c in node.children]
    return out


def save_tree(tree: ShapeTree, path: str | Path) -> None:
    doc = {
        "schema_version": TREE_SCHEMA_VERSION,
        "class_label": tree.class_label,
        "pose_bins": tree.pose_bins,
        "branching": tree.branching,
        "root": _node_to_json(tree.root),
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _node_from_json(doc: dict, path: str) -> TreeNode:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise TreeFormatError(f"{path}: node object with 'kind' expected")
    kind = doc["kind"]
    if kind == "leaf":
        if not isinstance(doc.get("cad_id"), str):
            raise TreeFormatError(f"{path}: leaf needs a string cad_id")
        return TreeNode(kind="leaf", cad_id=doc["cad_id"])
    if kind not in ("root", "pose_bin", "cluster"):
        raise TreeFormatError(f"{path}: unknown node kind {kind!r}")
    children_doc = doc.get("children")
    if not isinstance(children_doc, list) or not children_doc:
        raise TreeFormatError(f"{path}: {kind} node needs non-empty children")
    node = TreeNode(kind=kind)
    if kind == "pose_bin":
        node.rotation_offset = float(doc.get("rotation_offset", 0.0))
    if kind == "cluster":
        rep = doc.get("representative")
        if not isinstance(rep, str):
            raise TreeFormatError(f"{path}: cluster needs a representative id")
        node.representative = rep
    node.children = [
        _node_from_json(c, f"{path}.children[{i}]") for i, c in enumerate(children_doc)
    ]
    return node


def load_tree(path: str | Path) -> ShapeTree:
    """Load and validate a serialized tree.

    Checks: schema version, structural shape, per-bin leaf sets identical and
    duplicate-free, cluster representatives drawn from their own members.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise TreeFormatError(f"{path}: invalid JSON at offset {e.pos}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise TreeFormatError(f"{path}: top-level object expected")
    version = doc.get("schema_version")
    if version != TREE_SCHEMA_VERSION:
        raise TreeFormatError(f"{path}: unsupported schema_version {version!r}")
    for key in ("class_label", "pose_bins", "branching", "root"):
        if key not in doc:
            raise TreeFormatError(f"{path}: missing field {key!r}")
    root = _node_from_json(doc["root"], "root")
    if root.kind != "root":
        raise TreeFormatError(f"{path}: root node must have kind 'root'")
    tree = ShapeTree(
        class_label=doc["class_label"],
        pose_bins=int(doc["pose_bins"]),
        branching=int(doc["branching"]),
        root=root,
    )
    _validate_tree(tree, str(path))
    return tree


def _validate_tree(tree: ShapeTree, where: str) -> None:
    bins = tree.root.children
    if len(bins) != tree.pose_bins or any(b.kind != "pose_bin" for b in bins):
        raise TreeFormatError(f"{where}: root must hold exactly pose_bins pose-bin nodes")
    leaf_sets = []
    for bi, bin_node in enumerate(bins):
        ids = bin_node.leaf_ids()
        if len(ids) != len(set(ids)):
            dup = sorted({i for i in ids if ids.count(i) > 1})[0]
            raise TreeFormatError(
                f"{where}: root.children[{bi}]: duplicate leaf id {dup!r} in pose-bin subtree"
            )
        leaf_sets.append(set(ids))
    if any(s != leaf_sets[0] for s in leaf_sets[1:]):
        raise TreeFormatError(f"{where}: pose-bin subtrees disagree on the model set")

    def check_clusters(node: TreeNode, path: str):
        if node.kind == "cluster":
            members = set(node.leaf_ids())
            if node.representative not in members:
                raise TreeFormatError(
                    f"{where}: {path}: representative {node.representative!r} not a member"
                )
        for i, c in enumerate(node.children):
            check_clusters(c, f"{path}.children[{i}]")

    check_clusters(tree.root, "root")
