"""Rigid-body occupancy geometry.

Oriented rectangles with halfspace and vertex representations, exact
convex-polygon separation distance, and the conservative two-disc cover
used as a cheap distance surrogate by the power allocator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class InvalidGeometryError(ValueError):
    """Degenerate shape parameters (non-positive extents, empty sets)."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = (float(theta) + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if w == -math.pi else w


def rotation(theta: float) -> np.ndarray:
    """2x2 rotation matrix for a ccw angle."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2:
    """Planar pose (meters, meters, radians); heading wrapped to (-pi, pi]."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class OrientedRect:
    """Rectangle with the long axis along the heading of ``center``.

    ``half_length``/``half_width`` are half extents; full vehicle
    length/width are twice these.
    """

    center: Pose2
    half_length: float
    half_width: float

    def __post_init__(self):
        if not (self.half_length > 0.0 and self.half_width > 0.0):
            raise InvalidGeometryError("rectangle half-extents must be positive")
        if self.half_length < self.half_width:
            raise InvalidGeometryError(
                "long axis must be the heading axis (half_length >= half_width); "
                "use make_rect() to canonicalize"
            )

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit heading axis and unit lateral axis."""
        r = rotation(self.center.theta)
        return r[:, 0], r[:, 1]

    def corners(self) -> np.ndarray:
        """4x2 corner array, counter-clockwise."""
        u, v = self.axes
        c = self.center.position
        hl, hw = self.half_length, self.half_width
        return np.array(
            [
                c + hl * u + hw * v,
                c - hl * u + hw * v,
                c - hl * u - hw * v,
                c + hl * u - hw * v,
            ]
        )

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Membership test via the body-frame inverse transform."""
        pts = np.atleast_2d(points)
        rel = pts - self.center.position
        r = rotation(self.center.theta)
        body = rel @ r  # equals R^T applied to each row
        inside = (np.abs(body[:, 0]) <= self.half_length + tol) & (
            np.abs(body[:, 1]) <= self.half_width + tol
        )
        return inside if points.ndim > 1 else bool(inside[0])


def make_rect(center: Pose2, half_length: float, half_width: float) -> OrientedRect:
    """Build a rectangle, rotating the frame by pi/2 if the extents are swapped.

    Keeps the long-axis convention while representing the same point set,
    which matters when anisotropic inflation widens a rectangle past its
    length.
    """
    if half_length >= half_width:
        return OrientedRect(center, half_length, half_width)
    return OrientedRect(
        Pose2(center.x, center.y, center.theta + math.pi / 2.0), half_width, half_length
    )


@dataclass(frozen=True, eq=False)
class HalfspacePolytope:
    """Bounded intersection of four halfspaces {o : A o <= b}, rows unit-norm."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.A, dtype=float)
        bb = np.asarray(self.b, dtype=float)
        if a.shape != (4, 2) or bb.shape != (4,):
            raise InvalidGeometryError("expected 4x2 A and length-4 b")
        norms = np.linalg.norm(a, axis=1)
        if np.any(norms <= 0.0):
            raise InvalidGeometryError("zero normal row")
        object.__setattr__(self, "A", a / norms[:, None])
        object.__setattr__(self, "b", bb / norms)

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(points)
        ok = np.all(pts @ self.A.T <= self.b + tol, axis=1)
        return ok if points.ndim > 1 else bool(ok[0])

    def vertices(self) -> np.ndarray:
        """Vertex array (ccw) from pairwise facet intersections."""
        verts = []
        for i in range(4):
            for j in range(i + 1, 4):
                m = self.A[[i, j]]
                if abs(np.linalg.det(m)) < 1e-12:
                    continue
                v = np.linalg.solve(m, self.b[[i, j]])
                if np.all(self.A @ v <= self.b + 1e-9):
                    verts.append(v)
        if len(verts) < 3:
            raise InvalidGeometryError("polytope is empty or unbounded")
        pts = np.array(verts)
        # dedupe
        keep = []
        for p in pts:
            if not any(np.linalg.norm(p - q) < 1e-9 for q in keep):
                keep.append(p)
        pts = np.array(keep)
        centroid = pts.mean(axis=0)
        order = np.argsort(np.arctan2(pts[:, 1] - centroid[1], pts[:, 0] - centroid[0]))
        return pts[order]


def rect_to_polytope(r: OrientedRect) -> HalfspacePolytope:
    """Halfspace form of a rectangle; rows are the outward unit face normals."""
    u, v = r.axes
    c = r.center.position
    a = np.array([u, -u, v, -v])
    b = np.array(
        [
            u @ c + r.half_length,
            -(u @ c) + r.half_length,
            v @ c + r.half_width,
            -(v @ c) + r.half_width,
        ]
    )
    return HalfspacePolytope(a, b)


def _polys_intersect(vp: np.ndarray, vq: np.ndarray, axes: np.ndarray) -> bool:
    """Separating-axis test over the given candidate axes (face normals)."""
    pp = vp @ axes.T
    qq = vq @ axes.T
    return not bool(np.any((pp.max(axis=0) < qq.min(axis=0)) | (qq.max(axis=0) < pp.min(axis=0))))


def _verts_edge_min(verts_a: np.ndarray, verts_b: np.ndarray):
    """Closest (vertex of b, point on boundary of a) pair, vectorized."""
    a0 = verts_a
    a1 = np.roll(verts_a, -1, axis=0)
    d = a1 - a0
    denom = np.maximum((d * d).sum(axis=1), 1e-18)
    rel = verts_b[:, None, :] - a0[None, :, :]
    t = np.clip((rel * d[None, :, :]).sum(axis=2) / denom[None, :], 0.0, 1.0)
    proj = a0[None, :, :] + t[..., None] * d[None, :, :]
    diff = verts_b[:, None, :] - proj
    d2 = (diff * diff).sum(axis=2)
    i, j = np.unravel_index(int(np.argmin(d2)), d2.shape)
    return math.sqrt(float(d2[i, j])), proj[i, j], verts_b[i]


def closest_points_verts(
    vp: np.ndarray, vq: np.ndarray, axes: np.ndarray
) -> tuple[float, np.ndarray | None, np.ndarray | None]:
    """Vectorized exact distance between convex polygons given their vertices
    (ccw) and the stacked face normals of both."""
    if _polys_intersect(vp, vq, axes):
        return 0.0, None, None
    d1, on_p, from_q = _verts_edge_min(vp, vq)
    d2, on_q, from_p = _verts_edge_min(vq, vp)
    if d1 <= d2:
        return d1, on_p, from_q
    return d2, from_p, on_q


def closest_points(
    p: HalfspacePolytope, q: HalfspacePolytope
) -> tuple[float, np.ndarray | None, np.ndarray | None]:
    """Exact separation distance and a witness pair; (0, None, None) on overlap.

    Distance is the minimum over vertex-edge pairs of both polygons, taken
    after a separating-axis intersection test; exact for convex polygons.
    """
    return closest_points_verts(p.vertices(), q.vertices(), np.vstack([p.A, q.A]))


def polytope_distance(p: HalfspacePolytope, q: HalfspacePolytope) -> float:
    """Euclidean separation distance between two convex polytopes (0 if overlapping)."""
    return closest_points(p, q)[0]


def penetration_axis_verts(
    vp: np.ndarray, vq: np.ndarray, axes: np.ndarray
) -> tuple[float, np.ndarray]:
    """Largest separation margin over candidate axes (vectorized)."""
    full = np.vstack([axes, -axes])
    margins = (vq @ full.T).min(axis=0) - (vp @ full.T).max(axis=0)
    best = int(np.argmax(margins))
    return float(margins[best]), full[best]


def penetration_axis(p: HalfspacePolytope, q: HalfspacePolytope) -> tuple[float, np.ndarray]:
    """Largest separation margin over the face normals of both polytopes.

    Returns ``(margin, v)`` where ``margin = min_q v.y - max_p v.x``; for
    overlapping rectangles the maximizing margin is the (negative)
    penetration depth, since the Minkowski-sum face normals are drawn from
    the two rectangles' own face normals.
    """
    return penetration_axis_verts(p.vertices(), q.vertices(), np.vstack([p.A, q.A]))


def rect_geom(pose: np.ndarray, hl: float, hw: float):
    """(halfspace rows, offsets, ccw corners) of a rectangle at an (x, y, theta) pose."""
    x, y, th = float(pose[0]), float(pose[1]), float(pose[2])
    c, s = math.cos(th), math.sin(th)
    u = np.array([c, s])
    v = np.array([-s, c])
    ctr = np.array([x, y])
    a_mat = np.array([u, -u, v, -v])
    b_vec = np.array([u @ ctr + hl, -(u @ ctr) + hl, v @ ctr + hw, -(v @ ctr) + hw])
    verts = np.array(
        [ctr + hl * u + hw * v, ctr - hl * u + hw * v, ctr - hl * u - hw * v, ctr + hl * u - hw * v]
    )
    return a_mat, b_vec, verts


def signed_clearance_geom(g1, g2) -> float:
    """Separation distance when disjoint, negative penetration margin inside."""
    axes = np.vstack([g1[0], g2[0]])
    d = closest_points_verts(g1[2], g2[2], axes)[0]
    if d > 0.0:
        return d
    return penetration_axis_verts(g1[2], g2[2], axes)[0]


def _batched_vert_edge(verts_a: np.ndarray, verts_b: np.ndarray) -> np.ndarray:
    """Min squared distance from each batch's b-vertices to a-edges.

    verts_a: (n, 4, 2); verts_b: (n, 4, 2). Returns (n,) minima.
    """
    a0 = verts_a
    a1 = np.roll(verts_a, -1, axis=1)
    d = a1 - a0  # (n, 4, 2)
    denom = np.maximum((d * d).sum(axis=2), 1e-18)  # (n, 4)
    rel = verts_b[:, :, None, :] - a0[:, None, :, :]  # (n, 4b, 4a, 2)
    t = np.clip((rel * d[:, None, :, :]).sum(axis=3) / denom[:, None, :], 0.0, 1.0)
    proj = a0[:, None, :, :] + t[..., None] * d[:, None, :, :]
    diff = verts_b[:, :, None, :] - proj
    return (diff * diff).sum(axis=3).min(axis=(1, 2))


def batch_signed_clearance(
    poses: np.ndarray, hl: float, hw: float, ob_a: np.ndarray, ob_verts: np.ndarray
) -> np.ndarray:
    """Signed clearance of an ego rectangle swept over poses vs one obstacle.

    Positive values are exact separation distances; negative values are the
    penetration margin over the stacked face normals (exact for rectangles).
    """
    poses = np.atleast_2d(poses)
    n = poses.shape[0]
    c, s = np.cos(poses[:, 2]), np.sin(poses[:, 2])
    u = np.stack([c, s], axis=1)
    v = np.stack([-s, c], axis=1)
    ctr = poses[:, :2]
    ev_verts = np.stack(
        [
            ctr + hl * u + hw * v,
            ctr - hl * u + hw * v,
            ctr - hl * u - hw * v,
            ctr + hl * u - hw * v,
        ],
        axis=1,
    )  # (n, 4, 2)
    # candidate axes: ego u, v (per pose) and the obstacle's two distinct normals
    axes = np.stack([u, v, np.broadcast_to(ob_a[0], (n, 2)), np.broadcast_to(ob_a[2], (n, 2))], axis=1)
    proj_ev = np.einsum("nkd,nvd->nkv", axes, ev_verts)  # (n, 4, 4)
    proj_ob = np.einsum("nkd,vd->nkv", axes, ob_verts)
    lo_e, hi_e = proj_ev.min(axis=2), proj_ev.max(axis=2)
    lo_o, hi_o = proj_ob.min(axis=2), proj_ob.max(axis=2)
    margins = np.maximum(lo_o - hi_e, lo_e - hi_o)  # (n, 4) per-axis separation
    sat = margins.max(axis=1)  # > 0 iff disjoint; else negative penetration

    out = sat.copy()
    sep = sat > 0.0
    if sep.any():
        ev_sep = ev_verts[sep]
        ob_rep = np.broadcast_to(ob_verts, (int(sep.sum()), 4, 2))
        d2a = _batched_vert_edge(ev_sep, ob_rep)
        d2b = _batched_vert_edge(ob_rep, ev_sep)
        out[sep] = np.sqrt(np.minimum(d2a, d2b))
    return out


@dataclass(frozen=True, eq=False)
class DiscPair:
    """Two identical discs covering a rectangle; ``centers`` is 2x2."""

    centers: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=float).reshape(2, 2))
        if self.radius <= 0.0:
            raise InvalidGeometryError("disc radius must be positive")


def dca_decompose(r: OrientedRect) -> DiscPair:
    """Cover a rectangle by two identical discs.

    Each disc circumscribes one half of the rectangle split across the long
    axis: centers sit a quarter length from the center, and the radius is
    hypot(L/4, W/2).
    """
    u, _ = r.axes
    c = r.center.position
    offset = 0.5 * r.half_length  # = L/4 in full extents
    centers = np.array([c + offset * u, c - offset * u])
    radius = math.hypot(0.5 * r.half_length, r.half_width)
    return DiscPair(centers, radius)


def min_disc_distance(a: DiscPair, b: DiscPair) -> float:
    """Minimum center distance over the four pairings minus both radii.

    May be negative; underestimates the exact rectangle distance, which
    makes it a conservative clearance surrogate.
    """
    diffs = a.centers[:, None, :] - b.centers[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=2))
    return float(dists.min() - a.radius - b.radius)


def min_center_distance(a: DiscPair, b: DiscPair) -> float:
    """Minimum center distance over the four pairings (radii excluded)."""
    diffs = a.centers[:, None, :] - b.centers[None, :, :]
    return float(np.sqrt((diffs**2).sum(axis=2)).min())
