import math

import numpy as np
import pytest

from pisac.geometry import (
    DiscPair,
    InvalidGeometryError,
    OrientedRect,
    Pose2,
    closest_points,
    dca_decompose,
    make_rect,
    min_disc_distance,
    penetration_axis,
    polytope_distance,
    rect_to_polytope,
    rotation,
    wrap_angle,
)


def random_rect(rng, span=10.0):
    hl = rng.uniform(0.5, 3.0)
    hw = rng.uniform(0.2, hl)
    pose = Pose2(rng.uniform(-span, span), rng.uniform(-span, span), rng.uniform(-4, 4))
    return OrientedRect(pose, hl, hw)


def boundary_samples(rect, n):
    """Dense, evenly spaced samples of a rectangle's boundary (oracle helper)."""
    corners = rect.corners()
    pts = []
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        t = np.linspace(0.0, 1.0, n, endpoint=False)[:, None]
        pts.append(a + t * (b - a))
    return np.vstack(pts)


def sampled_distance(r1, r2, n=1000):
    """Brute-force boundary-sampling distance oracle."""
    p1 = boundary_samples(r1, n)
    p2 = boundary_samples(r2, n)
    # chunked to bound memory
    best = math.inf
    for chunk in np.array_split(p1, 8):
        d = np.sqrt(((chunk[:, None, :] - p2[None, :, :]) ** 2).sum(axis=2))
        best = min(best, float(d.min()))
    return best


class TestWrapAngle:
    def test_interval(self):
        for t in [-7.0, -math.pi, 0.0, math.pi, 9.42, 100.0]:
            w = wrap_angle(t)
            assert -math.pi < w <= math.pi
            assert math.isclose(math.cos(w), math.cos(t), abs_tol=1e-12)
            assert math.isclose(math.sin(w), math.sin(t), abs_tol=1e-12)

    def test_pi_maps_to_pi(self):
        assert wrap_angle(math.pi) == math.pi
        assert wrap_angle(-math.pi) == math.pi


class TestRectToPolytope:
    def test_axis_aligned_unit_square(self):
        r = OrientedRect(Pose2(0, 0, 0), 0.5, 0.5)
        p = rect_to_polytope(r)
        # rows are +-identity in some order; b all 0.5
        assert np.allclose(np.sort(np.abs(p.A), axis=0), [[0, 0], [0, 0], [1, 1], [1, 1]])
        assert np.allclose(p.b, 0.5)

    def test_rotated_square_same_point_set(self):
        p = rect_to_polytope(OrientedRect(Pose2(0, 0, math.pi / 2), 0.5, 0.5))
        assert p.contains(np.array([0.49, 0.0]))
        assert not p.contains(np.array([0.51, 0.0]))

    def test_membership_matches_inverse_transform_oracle(self):
        # vehicle-sized rectangle, rotated pose
        r = OrientedRect(Pose2(409.2, 28.0, math.pi / 2), 4.694 / 2, 1.849 / 2)
        p = rect_to_polytope(r)
        rng = np.random.default_rng(7)
        # interior points generated in the body frame (independent oracle)
        body = rng.uniform(-1, 1, size=(10_000, 2)) * [r.half_length, r.half_width]
        world = body @ rotation(r.center.theta).T + r.center.position
        assert np.all(p.contains(world))

    def test_membership_halfspace_consistency(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            r = random_rect(rng)
            p = rect_to_polytope(r)
            pts = rng.uniform(-14, 14, size=(200, 2))
            assert np.array_equal(r.contains(pts, tol=1e-9), p.contains(pts, tol=1e-9))

    def test_invalid_extents(self):
        with pytest.raises(InvalidGeometryError):
            OrientedRect(Pose2(0, 0, 0), -1.0, 0.5)
        with pytest.raises(InvalidGeometryError):
            OrientedRect(Pose2(0, 0, 0), 0.5, 1.0)

    def test_make_rect_canonicalizes(self):
        r = make_rect(Pose2(1, 2, 0.3), 0.5, 1.5)
        assert r.half_length == 1.5 and r.half_width == 0.5
        # same point set as the swapped rectangle
        rng = np.random.default_rng(1)
        pts = rng.uniform(-2, 4, size=(500, 2))
        direct = np.abs((pts - [1, 2]) @ rotation(0.3)) <= [0.5, 1.5]
        assert np.array_equal(r.contains(pts), direct.all(axis=1))


class TestPolytopeDistance:
    def test_axis_aligned_gap(self):
        a = rect_to_polytope(OrientedRect(Pose2(0, 0, 0), 0.5, 0.5))
        b = rect_to_polytope(OrientedRect(Pose2(3, 0, 0), 0.5, 0.5))
        assert polytope_distance(a, b) == pytest.approx(2.0, abs=1e-12)

    def test_overlap_is_zero(self):
        a = rect_to_polytope(OrientedRect(Pose2(0, 0, 0), 0.5, 0.5))
        b = rect_to_polytope(OrientedRect(Pose2(0.5, 0, 0), 0.5, 0.5))
        assert polytope_distance(a, b) == 0.0

    def test_rotated_pair_matches_sampling_oracle(self):
        a = rect_to_polytope(OrientedRect(Pose2(0, 0, 0), 0.5, 0.5))
        b = rect_to_polytope(OrientedRect(Pose2(2, 2, math.pi / 4), 0.5, 0.5))
        r1 = OrientedRect(Pose2(0, 0, 0), 0.5, 0.5)
        r2 = OrientedRect(Pose2(2, 2, math.pi / 4), 0.5, 0.5)
        assert polytope_distance(a, b) == pytest.approx(sampled_distance(r1, r2), abs=1e-3)

    def test_random_pairs_match_sampling_oracle(self):
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 12:
            r1, r2 = random_rect(rng), random_rect(rng)
            d = polytope_distance(rect_to_polytope(r1), rect_to_polytope(r2))
            if d <= 1e-6:
                continue
            assert d == pytest.approx(sampled_distance(r1, r2), abs=2e-3)
            checked += 1

    def test_symmetry_translation_rotation(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            r1, r2 = random_rect(rng), random_rect(rng)
            d12 = polytope_distance(rect_to_polytope(r1), rect_to_polytope(r2))
            d21 = polytope_distance(rect_to_polytope(r2), rect_to_polytope(r1))
            assert d12 == pytest.approx(d21, abs=1e-12)
            assert d12 >= 0.0
            # rigid motion applied to both leaves distance unchanged
            shift = rng.uniform(-5, 5, size=2)
            ang = rng.uniform(-3, 3)
            rot = rotation(ang)

            def moved(r):
                c = rot @ r.center.position + shift
                return OrientedRect(
                    Pose2(c[0], c[1], r.center.theta + ang), r.half_length, r.half_width
                )

            dm = polytope_distance(rect_to_polytope(moved(r1)), rect_to_polytope(moved(r2)))
            assert dm == pytest.approx(d12, abs=1e-9)

    def test_closest_points_witness(self):
        a = rect_to_polytope(OrientedRect(Pose2(0, 0, 0), 1.0, 0.5))
        b = rect_to_polytope(OrientedRect(Pose2(4, 0.2, 0.3), 1.0, 0.4))
        d, pa, pb = closest_points(a, b)
        assert d == pytest.approx(np.linalg.norm(pa - pb), abs=1e-12)
        assert a.contains(pa, tol=1e-7) and b.contains(pb, tol=1e-7)

    def test_penetration_axis_overlap(self):
        a = rect_to_polytope(OrientedRect(Pose2(0, 0, 0), 1.0, 1.0))
        b = rect_to_polytope(OrientedRect(Pose2(1.5, 0, 0), 1.0, 1.0))
        margin, axis = penetration_axis(a, b)
        assert margin == pytest.approx(-0.5, abs=1e-12)
        assert abs(axis @ np.array([1.0, 0.0])) == pytest.approx(1.0, abs=1e-12)


class TestDiscDecomposition:
    def test_four_by_two_rect(self):
        d = dca_decompose(OrientedRect(Pose2(0, 0, 0), 2.0, 1.0))
        assert np.allclose(sorted(d.centers[:, 0]), [-1.0, 1.0])
        assert np.allclose(d.centers[:, 1], 0.0)
        assert d.radius == pytest.approx(math.sqrt(2.0), abs=1e-12)

    def test_square(self):
        d = dca_decompose(OrientedRect(Pose2(0, 0, 0), 1.0, 1.0))
        assert np.allclose(sorted(d.centers[:, 0]), [-0.5, 0.5])
        assert d.radius == pytest.approx(math.sqrt(1.25), abs=1e-12)

    def test_coverage_random_rects(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            r = random_rect(rng)
            d = dca_decompose(r)
            # uniform interior samples in the body frame
            body = rng.uniform(-1, 1, size=(10_000, 2)) * [r.half_length, r.half_width]
            world = body @ rotation(r.center.theta).T + r.center.position
            dist0 = np.linalg.norm(world - d.centers[0], axis=1)
            dist1 = np.linalg.norm(world - d.centers[1], axis=1)
            assert np.all(np.minimum(dist0, dist1) <= d.radius + 1e-9)

    def test_min_disc_distance_direct(self):
        a = DiscPair(np.array([[0.0, 0.0], [1.0, 0.0]]), 1.0)
        b = DiscPair(np.array([[6.0, 0.0], [9.0, 0.0]]), 1.0)
        assert min_disc_distance(a, b) == pytest.approx(3.0, abs=1e-12)

    def test_coincident_pairs(self):
        a = DiscPair(np.array([[0.0, 0.0], [1.0, 0.0]]), 0.7)
        assert min_disc_distance(a, a) == pytest.approx(-1.4, abs=1e-12)

    def test_conservative_vs_exact_distance(self):
        rng = np.random.default_rng(37)
        for _ in range(100):
            r1, r2 = random_rect(rng), random_rect(rng)
            lower = min_disc_distance(dca_decompose(r1), dca_decompose(r2))
            exact = polytope_distance(rect_to_polytope(r1), rect_to_polytope(r2))
            assert lower <= exact + 1e-9
