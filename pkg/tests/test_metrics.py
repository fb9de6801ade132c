import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cadalign.geometry import GeometryError, PointCloud, Pose9D, transform_points
from cadalign.metrics import (
    ChamferDirection,
    EmdMode,
    chamfer,
    emd,
)
from oracles import brute_chamfer_a_to_b, brute_emd


def clouds(rng, n, m, scale=1.0):
    return PointCloud(rng.random((n, 3)) * scale), PointCloud(rng.random((m, 3)) * scale)


class TestChamfer:
    def test_identical_clouds_zero(self, rng):
        a = PointCloud(rng.random((40, 3)))
        for direction in ChamferDirection:
            assert chamfer(a, a, direction).value == 0.0

    def test_hand_computed_directions(self):
        a = PointCloud([[0, 0, 0]])
        b = PointCloud([[1, 0, 0], [3, 0, 0]])
        assert chamfer(a, b, ChamferDirection.A_TO_B).value == pytest.approx(1.0)
        assert chamfer(a, b, ChamferDirection.B_TO_A).value == pytest.approx(5.0)
        assert chamfer(a, b, ChamferDirection.SYMMETRIC).value == pytest.approx(6.0)

    def test_matches_brute_force_bitwise(self, rng):
        # acceptance-grade check lives in test_acceptance; this is the smoke version
        for _ in range(20):
            a, b = clouds(rng, int(rng.integers(1, 120)), int(rng.integers(1, 120)))
            fast = chamfer(a, b, ChamferDirection.A_TO_B).value
            assert abs(fast - brute_chamfer_a_to_b(a.points, b.points)) < 1e-12

    def test_symmetric_in_arguments(self, rng):
        a, b = clouds(rng, 50, 70)
        ab = chamfer(a, b, ChamferDirection.SYMMETRIC).value
        ba = chamfer(b, a, ChamferDirection.SYMMETRIC).value
        assert ab == pytest.approx(ba, abs=1e-15)

    def test_adding_targets_never_increases(self, rng):
        a, b = clouds(rng, 60, 40)
        base = chamfer(a, b, ChamferDirection.A_TO_B).value
        extra = PointCloud(np.vstack([b.points, rng.random((25, 3))]))
        assert chamfer(a, extra, ChamferDirection.A_TO_B).value <= base + 1e-15

    def test_rigid_invariance(self, rng):
        a, b = clouds(rng, 50, 50)
        pose = Pose9D(rng.random(3), rng.random(3), [1, 1, 1])
        a2 = PointCloud(transform_points(a.points, pose))
        b2 = PointCloud(transform_points(b.points, pose))
        ref = chamfer(a, b, ChamferDirection.SYMMETRIC).value
        moved = chamfer(a2, b2, ChamferDirection.SYMMETRIC).value
        assert moved == pytest.approx(ref, rel=1e-9)

    def test_empty_rejected(self):
        a = PointCloud(np.zeros((0, 3)))
        b = PointCloud([[0, 0, 0]])
        with pytest.raises(GeometryError):
            chamfer(a, b, ChamferDirection.A_TO_B)


class TestEmd:
    def test_identical_zero(self, rng):
        a = PointCloud(rng.random((16, 3)))
        assert emd(a, a).value == 0.0
        assert emd(a, a, EmdMode.APPROXIMATE).value == 0.0

    def test_single_pair(self):
        a = PointCloud([[0, 0, 0]])
        b = PointCloud([[1, 0, 0]])
        assert emd(a, b).value == pytest.approx(1.0)

    def test_two_point_matching(self):
        a = PointCloud([[0, 0, 0], [2, 0, 0]])
        b = PointCloud([[1, 0, 0], [3, 0, 0]])
        # matching 0->1, 2->3 gives mean (1+1)/2; the crossing matchings cost more
        assert emd(a, b).value == pytest.approx(1.0)

    def test_matches_permutation_oracle(self, rng):
        for _ in range(15):
            n = int(rng.integers(2, 7))
            a = PointCloud(rng.random((n, 3)))
            b = PointCloud(rng.random((n, 3)))
            assert emd(a, b).value == pytest.approx(brute_emd(a.points, b.points), abs=1e-12)

    def test_approximate_close_to_exact(self, rng):
        for _ in range(10):
            n = int(rng.integers(8, 120))
            a = PointCloud(rng.random((n, 3)))
            b = PointCloud(rng.random((n, 3)))
            exact = emd(a, b).value
            approx = emd(a, b, EmdMode.APPROXIMATE).value
            assert approx >= exact - 1e-9  # feasible matching can't beat the optimum
            assert approx <= exact * 1.02 + 1e-12

    def test_size_mismatch(self):
        with pytest.raises(GeometryError, match="equal sizes"):
            emd(PointCloud([[0, 0, 0]]), PointCloud([[0, 0, 0], [1, 1, 1]]))

    def test_exact_size_cap(self, rng):
        a = PointCloud(rng.random((1025, 3)))
        b = PointCloud(rng.random((1025, 3)))
        with pytest.raises(GeometryError, match="approximate"):
            emd(a, b, EmdMode.EXACT_ASSIGNMENT)

    def test_rigid_invariance(self, rng):
        a = PointCloud(rng.random((30, 3)))
        b = PointCloud(rng.random((30, 3)))
        pose = Pose9D(rng.random(3), rng.random(3), [1, 1, 1])
        moved = emd(
            PointCloud(transform_points(a.points, pose)),
            PointCloud(transform_points(b.points, pose)),
        ).value
        assert moved == pytest.approx(emd(a, b).value, rel=1e-9)


@given(st.integers(1, 40), st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_chamfer_nonnegative_and_zero_iff_covered(n, seed):
    rng = np.random.default_rng(seed)
    a = PointCloud(rng.random((n, 3)))
    v = chamfer(a, a, ChamferDirection.A_TO_B).value
    assert v == 0.0
    b = PointCloud(a.points + 0.5)
    assert chamfer(a, b, ChamferDirection.A_TO_B).value > 0.0
