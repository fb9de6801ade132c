import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cadalign.geometry import (
    GeometryError,
    OrientedBox,
    PointCloud,
    Pose9D,
    TriMesh,
    apply_pose,
    canonicalize_rotvec,
    compose_up_rotation,
    normalize_to_unit_box,
    oriented_bbox,
    rotz,
    sample_surface,
    transform_points,
)
from oracles import max_distance_to_mesh

UNIT_TRI = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


def cube_mesh(side=1.0, center=(0.5, 0.5, 0.5)):
    from cadalign.synth import box

    verts, tris = box(center, (side, side, side))
    return TriMesh(verts, tris)


class TestTriMesh:
    def test_rejects_out_of_range_index(self):
        with pytest.raises(GeometryError):
            TriMesh([[0, 0, 0], [1, 0, 0]], [[0, 1, 2]])

    def test_rejects_repeated_index(self):
        with pytest.raises(GeometryError):
            TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 1]])

    def test_area(self):
        assert UNIT_TRI.area() == pytest.approx(0.5)


class TestPose:
    def test_identity_is_identity(self, rng):
        mesh = TriMesh(rng.random((50, 3)), [[0, 1, 2]])
        out = apply_pose(mesh, Pose9D.identity())
        assert np.max(np.abs(out.vertices - mesh.vertices)) < 1e-12

    def test_pure_translation(self):
        pose = Pose9D([1, 0, 0], [0, 0, 0], [1, 1, 1])
        out = transform_points(np.zeros((1, 3)), pose)
        assert np.allclose(out, [[1, 0, 0]], atol=1e-15)

    def test_scale_then_rotate(self):
        # hand computation of R(pi/2 about z) @ (2 * (1,0,0)) = (0,2,0),
        # cross-checked against the matrix product
        pose = Pose9D([0, 0, 0], [0, 0, math.pi / 2], [2, 2, 2])
        out = transform_points(np.array([[1.0, 0.0, 0.0]]), pose)
        assert np.allclose(out, [[0, 2, 0]], atol=1e-12)
        oracle = (pose.rotation_matrix() @ (np.array([2.0, 2.0, 2.0]) * [1, 0, 0]))[None]
        assert np.allclose(out, oracle, atol=1e-15)

    def test_scale_must_be_positive(self):
        with pytest.raises(GeometryError):
            Pose9D([0, 0, 0], [0, 0, 0], [1, 0, 1])

    def test_rigid_composition(self, rng):
        mesh = TriMesh(rng.random((30, 3)), [[0, 1, 2]])
        a = Pose9D(rng.random(3), rng.random(3), [1, 1, 1])
        b = Pose9D(rng.random(3), rng.random(3), [1, 1, 1])
        two_step = apply_pose(apply_pose(mesh, a), b)
        m = b.matrix() @ a.matrix()
        direct = mesh.vertices @ m[:3, :3].T + m[:3, 3]
        assert np.max(np.abs(two_step.vertices - direct)) < 1e-9

    @given(st.floats(-20, 20), st.floats(-20, 20), st.floats(-20, 20))
    @settings(max_examples=50, deadline=None)
    def test_canonical_rotvec_angle_range(self, x, y, z):
        r = canonicalize_rotvec(np.array([x, y, z]))
        assert np.linalg.norm(r) <= math.pi + 1e-9

    def test_canonical_preserves_rotation(self, rng):
        for _ in range(20):
            v = rng.normal(size=3) * 4
            a = Pose9D([0, 0, 0], v, [1, 1, 1]).rotation_matrix()
            b = Pose9D([0, 0, 0], canonicalize_rotvec(v), [1, 1, 1]).rotation_matrix()
            assert np.allclose(a, b, atol=1e-9)

    def test_vector_round_trip(self):
        pose = Pose9D([0.1, -2, 3], [0.2, 0.1, -0.3], [0.5, 2.0, 1.5])
        again = Pose9D.from_vector(pose.as_vector())
        assert np.allclose(again.translation, pose.translation)
        assert np.allclose(again.scale, pose.scale)

    def test_compose_up_rotation_quarter_swaps_scale(self, rng):
        pose = Pose9D([1, 2, 3], [0, 0, 0.3], [2, 1, 0.5])
        q = compose_up_rotation(pose, math.pi / 2)
        v = rng.random((10, 3)) - 0.5
        ref = transform_points(v @ rotz(math.pi / 2).T, pose)
        assert np.allclose(transform_points(v, q), ref, atol=1e-12)
        # four quarter turns come back to the start
        r = pose
        for _ in range(4):
            r = compose_up_rotation(r, math.pi / 2)
        assert np.allclose(r.rotation, pose.rotation, atol=1e-9)
        assert np.allclose(r.scale, pose.scale)


class TestSampleSurface:
    def test_single_triangle_in_plane(self):
        pts = sample_surface(UNIT_TRI, 1000, seed=7).points
        assert np.abs(pts[:, 2]).max() < 1e-9
        assert max_distance_to_mesh(pts, UNIT_TRI.vertices, UNIT_TRI.triangles) < 1e-9

    def test_area_weighting(self):
        # two triangles, area ratio 3:1
        mesh = TriMesh(
            [[0, 0, 0], [3, 0, 0], [0, 2, 0], [10, 0, 0], [11, 0, 0], [10, 2, 0]],
            [[0, 1, 2], [3, 4, 5]],
        )
        pts = sample_surface(mesh, 100000, seed=3).points
        big = (pts[:, 0] < 5).sum()
        ratio = big / (len(pts) - big)
        assert abs(ratio - 3.0) / 3.0 < 0.03

    def test_paper_count(self):
        assert len(sample_surface(cube_mesh(), 2048, seed=0)) == 2048

    def test_deterministic_and_on_surface(self):
        mesh = cube_mesh()
        a = sample_surface(mesh, 500, seed=42).points
        b = sample_surface(mesh, 500, seed=42).points
        assert np.array_equal(a, b)
        assert max_distance_to_mesh(a, mesh.vertices, mesh.triangles) < 1e-9

    def test_degenerate_surface(self):
        flat = TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
        with pytest.raises(GeometryError, match="degenerate surface"):
            sample_surface(flat, 10, seed=0)


class TestOrientedBbox:
    def test_axis_aligned_cube_corners(self):
        corners = [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)]
        box = oriented_bbox(PointCloud(corners))
        assert np.allclose(box.center, [0.5, 0.5, 0.5], atol=1e-9)
        assert np.allclose(np.sort(box.extents), [0.5, 0.5, 0.5], atol=1e-9)

    def test_rotation_invariant_extents(self, rng):
        pts = rng.random((200, 3)) * [2.0, 1.0, 0.5]
        base = oriented_bbox(PointCloud(pts))
        rot = rotz(math.radians(30.0))
        moved = oriented_bbox(PointCloud(pts @ rot.T))
        assert np.allclose(np.sort(moved.extents), np.sort(base.extents), atol=1e-9)
        assert abs(moved.volume() - base.volume()) / base.volume() < 1e-6

    def test_single_point(self):
        box = oriented_bbox(PointCloud([[1.0, 2.0, 3.0]]))
        assert np.allclose(box.center, [1, 2, 3])
        assert np.allclose(box.extents, 0)

    def test_contains_all_points(self, rng):
        pts = rng.normal(size=(300, 3)) * [3, 1, 0.2]
        box = oriented_bbox(PointCloud(pts))
        local = (pts - 0) @ box.axes - box.center @ box.axes
        assert np.all(np.abs(local) <= box.extents + 1e-6)

    def test_axes_right_handed(self, rng):
        for _ in range(10):
            pts = rng.normal(size=(50, 3))
            box = oriented_bbox(PointCloud(pts))
            assert abs(np.linalg.det(box.axes) - 1.0) < 1e-6

    def test_empty_rejected(self):
        with pytest.raises(GeometryError):
            oriented_bbox(PointCloud(np.zeros((0, 3))))


def test_normalize_to_unit_box():
    mesh = cube_mesh(side=3.0, center=(5, 5, 5))
    out = normalize_to_unit_box(mesh)
    lo, hi = out.bounds()
    assert np.allclose(lo, -0.5) and np.allclose(hi, 0.5)


def test_oriented_box_is_frozen():
    box = OrientedBox(np.zeros(3), np.eye(3), np.ones(3))
    with pytest.raises(ValueError):
        box.center[0] = 1.0
