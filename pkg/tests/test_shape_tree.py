import json
import math

import numpy as np
import pytest

from cadalign.geometry import GeometryError, TriMesh
from cadalign.shape_tree import (
    CadDatabase,
    CadModel,
    TreeFormatError,
    build_tree,
    load_tree,
    pairwise_chamfer_matrix,
    save_tree,
)
from cadalign.synth import box_mesh, l_bracket_mesh, make_models, write_database
from oracles import brute_chamfer_symmetric


def jittered_models(base_meshes, label, seed=0, noise=0.004):
    """Models in tight shape families: one base mesh per entry, tiny jitter.

    Families must differ in canonical (unit-box normalized) form; plain boxes
    of different sizes all normalize to the same cube.
    """
    rng = np.random.default_rng(seed)
    models = []
    for i, mesh in enumerate(base_meshes):
        mesh = TriMesh(mesh.vertices + noise * rng.standard_normal(mesh.vertices.shape), mesh.triangles)
        models.append(CadModel.from_mesh(f"{label}_{i}", label, mesh))
    return models


class TestCadModel:
    def test_canonical_frame(self, chair_models):
        for m in chair_models[:3]:
            lo, hi = m.mesh.bounds()
            assert np.allclose(lo, -0.5, atol=1e-9)
            assert np.allclose(hi, 0.5, atol=1e-9)
            assert len(m.samples) == 5000

    def test_duplicate_id_rejected(self, chair_models):
        with pytest.raises(GeometryError, match="duplicate"):
            CadDatabase(list(chair_models) + [chair_models[0]])

    def test_manifest_round_trip(self, tmp_path, chair_models):
        manifest = write_database(chair_models[:3], tmp_path)
        db = CadDatabase.load_manifest(manifest)
        assert len(db) == 3
        for m in chair_models[:3]:
            again = db.get(m.id)
            assert again.class_label == m.class_label
            assert np.allclose(again.mesh.vertices, m.mesh.vertices, atol=1e-12)


class TestBuildTree:
    def test_single_model_pose_bins(self, chair_models):
        tree = build_tree(chair_models[:1], "chair", pose_bins=4)
        assert len(tree.root.children) == 4
        for k, bin_node in enumerate(tree.root.children):
            assert bin_node.kind == "pose_bin"
            assert bin_node.rotation_offset == pytest.approx(k * math.pi / 2)
            assert len(bin_node.children) == 1
            assert bin_node.children[0].kind == "leaf"

    def test_two_family_split(self):
        # 4 near-duplicates of shape A + 4 of shape B: the first split must
        # separate the families (checked against the exact chamfer matrix)
        models = jittered_models([box_mesh()] * 4 + [l_bracket_mesh()] * 4, "box", seed=5)
        tree = build_tree(models, "box", pose_bins=1, branching=2)
        top = tree.root.children[0].children
        assert len(top) == 2
        groups = [set(c.leaf_ids()) for c in top]
        a_ids = {m.id for m in models[:4]}
        b_ids = {m.id for m in models[4:]}
        assert {frozenset(a_ids), frozenset(b_ids)} == {frozenset(g) for g in groups}

    def test_leaf_partition_per_bin(self, chair_tree, chair_models):
        all_ids = {m.id for m in chair_models}
        for bin_node in chair_tree.root.children:
            ids = bin_node.leaf_ids()
            assert len(ids) == len(set(ids))
            assert set(ids) == all_ids

    def test_medoid_is_brute_force_argmin(self, chair_models):
        dist = pairwise_chamfer_matrix([m.samples for m in chair_models])
        tree = build_tree(chair_models, "chair", chamfer_matrix=dist)
        ids = [m.id for m in chair_models]
        pos = {mid: i for i, mid in enumerate(ids)}
        for node in tree.nodes:
            if node.kind != "cluster":
                continue
            members = [pos[i] for i in node.leaf_ids()]
            if len(members) > 16:
                continue
            sums = dist[np.ix_(members, members)].sum(axis=1)
            best = ids[members[int(np.argmin(sums))]]
            assert node.representative == best

    def test_monotone_depth_tendency(self):
        # deeper clusters tend to hold closer shapes; measured over a pool of
        # random mixed-shape databases (it is a tendency, not a theorem)
        good = total = 0
        for seed in (7, 11, 23, 42):
            models = make_models({"chair": 8, "bookshelf": 4, "sofa": 4}, seed=seed)
            models = [
                CadModel(id=m.id, class_label="all", mesh=m.mesh, samples=m.samples)
                for m in models
            ]
            dist = pairwise_chamfer_matrix([m.samples for m in models])
            tree = build_tree(models, "all", pose_bins=1, branching=4, chamfer_matrix=dist)
            pos = {m.id: i for i, m in enumerate(models)}
            for path in tree.leaf_paths():
                leaf = path[-1]
                reps = [n.representative for n in path if n.kind == "cluster"]
                ds = [dist[pos[leaf.cad_id], pos[r]] for r in reps]
                for shallow, deep in zip(ds, ds[1:]):
                    total += 1
                    good += deep <= shallow + 1e-12
        assert total > 0
        assert good / total >= 0.9

    def test_deterministic_bytes(self, tmp_path, chair_models):
        t1 = build_tree(chair_models, "chair")
        t2 = build_tree(chair_models, "chair")
        save_tree(t1, tmp_path / "a.json")
        save_tree(t2, tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_branching_respected(self, chair_tree):
        for node in chair_tree.nodes:
            if node.kind in ("pose_bin", "cluster"):
                assert len(node.children) <= chair_tree.branching

    def test_chamfer_matrix_matches_oracle(self, chair_models):
        sub = chair_models[:4]
        mat = pairwise_chamfer_matrix([m.samples for m in sub])
        for i in range(4):
            for j in range(4):
                ref = brute_chamfer_symmetric(sub[i].samples, sub[j].samples) if i != j else 0.0
                assert mat[i, j] == pytest.approx(ref, abs=1e-12)

    def test_empty_class_rejected(self, chair_models):
        with pytest.raises(GeometryError):
            build_tree(chair_models, "sofa")


class TestPaths:
    def test_path_candidate(self, chair_tree):
        for path in chair_tree.leaf_paths():
            cad_id, offset = chair_tree.path_candidate(path)
            assert cad_id == path[-1].cad_id
            ks = [n.rotation_offset for n in path if n.kind == "pose_bin"]
            assert offset == ks[0]

    def test_bin_offsets_evenly_spaced(self, chair_tree):
        offsets = sorted({n.rotation_offset for n in chair_tree.nodes if n.kind == "pose_bin"})
        assert np.allclose(offsets, [k * math.pi / 2 for k in range(4)])

    def test_non_leaf_terminal_rejected(self, chair_tree):
        path = chair_tree.leaf_paths()[0]
        with pytest.raises(GeometryError, match="leaf"):
            chair_tree.path_candidate(path[:-1])

    def test_disconnected_path_rejected(self, chair_tree):
        paths = chair_tree.leaf_paths()
        frankenstein = paths[0][:-1] + [paths[-1][-1]]
        with pytest.raises(GeometryError):
            chair_tree.path_candidate(frankenstein)

    def test_cluster_siblings(self, chair_tree, chair_models):
        for m in chair_models:
            siblings = chair_tree.cluster_siblings(m.id)
            assert m.id in siblings


class TestSerialization:
    def test_round_trip(self, tmp_path, chair_tree):
        path = tmp_path / "tree.json"
        save_tree(chair_tree, path)
        again = load_tree(path)
        assert again.class_label == chair_tree.class_label
        assert again.pose_bins == chair_tree.pose_bins
        save_tree(again, tmp_path / "tree2.json")
        assert (tmp_path / "tree2.json").read_bytes() == path.read_bytes()

    def test_truncated_file_names_offset(self, tmp_path, chair_tree):
        path = tmp_path / "tree.json"
        save_tree(chair_tree, path)
        path.write_text(path.read_text()[:100])
        with pytest.raises(TreeFormatError, match="offset"):
            load_tree(path)

    def test_duplicate_leaf_rejected(self, tmp_path, chair_tree):
        path = tmp_path / "tree.json"
        save_tree(chair_tree, path)
        doc = json.loads(path.read_text())
        bin0 = doc["root"]["children"][0]

        def first_leaf(node):
            if node["kind"] == "leaf":
                return node
            return first_leaf(node["children"][0])

        def last_leaf(node):
            if node["kind"] == "leaf":
                return node
            return last_leaf(node["children"][-1])

        first_leaf(bin0)["cad_id"] = last_leaf(bin0)["cad_id"]
        path.write_text(json.dumps(doc))
        with pytest.raises(TreeFormatError, match="duplicate leaf"):
            load_tree(path)

    def test_bad_schema_version(self, tmp_path, chair_tree):
        path = tmp_path / "tree.json"
        save_tree(chair_tree, path)
        doc = json.loads(path.read_text())
        doc["schema_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(TreeFormatError, match="schema_version"):
            load_tree(path)

    def test_representative_must_be_member(self, tmp_path, chair_tree):
        path = tmp_path / "tree.json"
        save_tree(chair_tree, path)
        doc = json.loads(path.read_text())

        def first_cluster(node):
            if node["kind"] == "cluster":
                return node
            for c in node.get("children", []):
                found = first_cluster(c)
                if found:
                    return found
            return None

        cluster = first_cluster(doc["root"])
        if cluster is None:
            pytest.skip("tree has no cluster nodes")
        cluster["representative"] = "nonexistent_model"
        path.write_text(json.dumps(doc))
        with pytest.raises(TreeFormatError, match="not a member"):
            load_tree(path)

    def test_error_names_node_path(self, tmp_path, chair_tree):
        path = tmp_path / "tree.json"
        save_tree(chair_tree, path)
        doc = json.loads(path.read_text())
        doc["root"]["children"][1]["children"] = []
        path.write_text(json.dumps(doc))
        with pytest.raises(TreeFormatError, match=r"root\.children\[1\]"):
            load_tree(path)


def test_make_models_variants_cluster_together():
    models = make_models({"chair": 2}, seed=4, variants_per_family=3)
    assert len(models) == 6
    tree = build_tree(models, "chair", pose_bins=1, branching=2)
    top = tree.root.children[0].children
    families = [{m.id for m in models if m.id.startswith(f"chair_{k:02d}")} for k in range(2)]
    groups = [set(c.leaf_ids()) for c in top]
    assert {frozenset(f) for f in families} == {frozenset(g) for g in groups}
