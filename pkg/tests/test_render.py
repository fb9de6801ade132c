import numpy as np
import pytest

from cadalign.geometry import GeometryError, TriMesh
from cadalign.render import (
    CameraView,
    RenderOutput,
    backproject,
    build_observations,
    load_depth_pgm,
    look_at,
    rasterize,
    save_depth_pgm,
)
from cadalign.synth import box_mesh
from oracles import max_distance_to_mesh


def canonical_view(width=192, height=144, f=120.0, depth=None):
    return CameraView(
        fx=f, fy=f, cx=width / 2, cy=height / 2,
        width=width, height=height, extrinsics=np.eye(4), depth=depth,
    )


def quad_at(z, half=0.5):
    return TriMesh(
        [[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]],
        [[0, 1, 2], [0, 2, 3]],
    )


class TestRasterize:
    def test_planar_depth_exact(self):
        out = rasterize(quad_at(2.0), canonical_view())
        assert out.silhouette.sum() > 100
        assert np.all(out.depth[out.silhouette] == 2.0)

    def test_empty_mesh(self):
        empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        out = rasterize(empty, canonical_view())
        assert not out.silhouette.any()
        assert np.all(out.depth == 0)

    def test_zbuffer_keeps_nearest(self):
        near, far = quad_at(1.0), quad_at(2.0)
        both = TriMesh(
            np.vstack([near.vertices, far.vertices]),
            np.vstack([near.triangles, far.triangles + 4]),
        )
        out = rasterize(both, canonical_view())
        overlap = rasterize(near, canonical_view()).silhouette
        assert np.all(out.depth[overlap] == 1.0)

    def test_mesh_behind_camera_empty(self):
        out = rasterize(quad_at(-2.0), canonical_view())
        assert not out.silhouette.any()

    def test_partially_behind_camera_clipped(self):
        # a long triangle crossing the camera plane must still raster the front part
        mesh = TriMesh([[0, -0.2, -1.0], [0, 0.2, -1.0], [0.4, 0.0, 3.0]], [[0, 1, 2]])
        out = rasterize(mesh, canonical_view())
        assert out.silhouette.any()
        assert out.depth[out.silhouette].min() > 0

    def test_silhouette_depth_consistency(self, rng):
        verts = rng.random((30, 3)) + [0, 0, 1.0]
        tris = rng.integers(0, 30, (40, 3))
        ok = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
        out = rasterize(TriMesh(verts, tris[ok]), canonical_view())
        assert np.array_equal(out.silhouette, out.depth > 0)

    def test_translation_along_axis_shifts_depth(self):
        view = canonical_view()
        base = rasterize(quad_at(2.0), view)
        moved = rasterize(quad_at(2.7), view)
        common = base.silhouette & moved.silhouette
        assert common.any()
        delta = moved.depth[common] - base.depth[common]
        assert np.allclose(delta, 0.7, atol=1e-6)

    def test_fast_path_matches_reference(self, rng):
        view = canonical_view(width=96, height=80)
        for _ in range(10):
            verts = rng.random((25, 3)) * 2 + [-1, -1, 0.2]
            tris = rng.integers(0, 25, (30, 3))
            ok = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
            mesh = TriMesh(verts, tris[ok])
            fast = rasterize(mesh, view, use_fast_path=True)
            ref = rasterize(mesh, view, use_fast_path=False)
            assert np.array_equal(fast.depth, ref.depth)

    def test_resolution_consistency_convex(self):
        lo = rasterize(box_mesh((0.8, 0.8, 0.8)), canonical_view(96, 72, f=60, depth=None))
        hi = rasterize(box_mesh((0.8, 0.8, 0.8)), canonical_view(192, 144, f=120, depth=None))
        # box centered at origin is split by the camera plane; push it forward
        lo = rasterize(
            TriMesh(box_mesh((0.8, 0.8, 0.8)).vertices + [0, 0, 2.5], box_mesh((0.8, 0.8, 0.8)).triangles),
            canonical_view(96, 72, f=60),
        )
        hi = rasterize(
            TriMesh(box_mesh((0.8, 0.8, 0.8)).vertices + [0, 0, 2.5], box_mesh((0.8, 0.8, 0.8)).triangles),
            canonical_view(192, 144, f=120),
        )
        ratio = hi.silhouette.sum() / (4.0 * lo.silhouette.sum())
        assert 0.95 < ratio < 1.05


class TestBackproject:
    def test_principal_point_ray(self):
        depth = np.zeros((144, 192))
        depth[72, 96] = 3.0  # the principal pixel (cy, cx)
        view = canonical_view(depth=depth)
        pts = backproject(view).points
        assert np.allclose(pts, [[0, 0, 3.0]], atol=1e-12)

    def test_round_trip_points_on_surface(self):
        mesh = TriMesh(box_mesh((0.6, 0.7, 0.8)).vertices + [0, 0, 2.0], box_mesh((1, 1, 1)).triangles)
        view = canonical_view()
        out = rasterize(mesh, view)
        pts = backproject(canonical_view(depth=out.depth)).points
        assert len(pts) > 200
        assert max_distance_to_mesh(pts[::7], mesh.vertices, mesh.triangles) < 1e-6

    def test_missing_depth(self):
        with pytest.raises(GeometryError):
            backproject(canonical_view())

    def test_all_zero_depth_gives_empty_cloud(self):
        view = canonical_view(depth=np.zeros((144, 192)))
        assert len(backproject(view)) == 0

    def test_world_frame_round_trip(self):
        eye = np.array([2.0, -3.0, 1.5])
        ext = look_at(eye, np.zeros(3))
        mesh = box_mesh((0.5, 0.5, 0.5))
        view = CameraView(fx=100, fy=100, cx=64, cy=48, width=128, height=96, extrinsics=ext)
        out = rasterize(mesh, view)
        assert out.silhouette.any()
        wview = CameraView(
            fx=100, fy=100, cx=64, cy=48, width=128, height=96, extrinsics=ext, depth=out.depth
        )
        pts = backproject(wview).points
        assert max_distance_to_mesh(pts[::11], mesh.vertices, mesh.triangles) < 1e-6


class TestObservations:
    def test_sensor_depth_preferred(self):
        depth = np.zeros((144, 192))
        depth[10:20, 10:20] = 1.0
        view = canonical_view(depth=depth)
        obs = build_observations([view])
        assert obs[0].target.silhouette.sum() == 100

    def test_partial_mesh_fallback(self):
        view = canonical_view()
        obs = build_observations([view], partial_mesh=quad_at(2.0))
        assert obs[0].target.silhouette.any()

    def test_invisible_everywhere_rejected(self):
        view = canonical_view(depth=np.zeros((144, 192)))
        with pytest.raises(GeometryError, match="no observations"):
            build_observations([view, view])

    def test_mixed_visibility_ok(self):
        depth = np.zeros((144, 192))
        depth[5, 5] = 2.0
        seen = canonical_view(depth=depth)
        unseen = canonical_view(depth=np.zeros((144, 192)))
        obs = build_observations([seen, unseen])
        assert obs[0].target.silhouette.any()
        assert not obs[1].target.silhouette.any()


class TestDepthPgm:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        depth = np.round(rng.random((40, 60)) * 5000) / 1000.0  # mm-quantized meters
        path = tmp_path / "d.pgm"
        save_depth_pgm(depth, path)
        again = load_depth_pgm(path)
        assert np.array_equal(again, depth)
        # writing what we read reproduces the file byte for byte
        save_depth_pgm(again, tmp_path / "d2.pgm")
        assert (tmp_path / "d2.pgm").read_bytes() == path.read_bytes()

    def test_scale_comment_respected(self, tmp_path):
        depth = np.array([[0.02, 0.04]])
        path = tmp_path / "d.pgm"
        save_depth_pgm(depth, path, units_per_meter=100.0)
        assert np.array_equal(load_depth_pgm(path), depth)

    def test_truncated_payload(self, tmp_path):
        depth = np.ones((10, 10))
        path = tmp_path / "d.pgm"
        save_depth_pgm(depth, path)
        data = path.read_bytes()
        path.write_bytes(data[:-20])
        with pytest.raises(GeometryError, match="truncated"):
            load_depth_pgm(path)

    def test_out_of_range(self, tmp_path):
        with pytest.raises(GeometryError, match="16-bit"):
            save_depth_pgm(np.array([[100.0]]), tmp_path / "d.pgm")


def test_render_output_invariant():
    out = RenderOutput(np.array([[0.0, 1.5], [2.0, 0.0]]))
    assert np.array_equal(out.silhouette, [[False, True], [True, False]])
