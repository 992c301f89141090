"""Sensing-uncertainty geometry.

Converts a power-dependent position covariance into deterministic safety
shapes: the chi-square confidence ellipse and the inflated rectangle /
disc-pair whose clearance implies the collision chance constraint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import DiscPair, OrientedRect, dca_decompose, make_rect
from .isac import CrbModel, InvalidPowerError, SensingCovariance


def chi2_quantile_2dof(prob: float) -> float:
    """Quantile of the chi-square distribution with 2 degrees of freedom.

    Closed form: -2 ln(1 - prob).
    """
    if not 0.0 < prob < 1.0:
        raise ValueError("probability must lie strictly inside (0, 1)")
    return -2.0 * math.log1p(-prob)


def chi2_cdf_2dof(x: float) -> float:
    """CDF of the 2-dof chi-square distribution (inverse of the quantile)."""
    return -math.expm1(-0.5 * x) if x > 0.0 else 0.0


@dataclass(frozen=True, eq=False)
class ConfidenceEllipse:
    """Elliptical region {x : (x - center)^T shape^-1 (x - center) <= 1}."""

    center: np.ndarray
    shape: np.ndarray

    def mahalanobis_sq(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points) - self.center
        sol = np.linalg.solve(self.shape, pts.T)
        return np.einsum("ij,ji->i", pts, sol)

    def contains(self, points: np.ndarray) -> np.ndarray:
        inside = self.mahalanobis_sq(points) <= 1.0
        return inside if np.ndim(points) > 1 else bool(inside[0])


def confidence_ellipse(
    mean: np.ndarray, cov: SensingCovariance | np.ndarray, risk_eps: float
) -> ConfidenceEllipse:
    """Ellipse containing a Gaussian sample with probability 1 - risk_eps.

    The quantile is taken at level (1 - risk_eps) so that clearance from
    the inflated set bounds the collision probability by risk_eps.
    """
    sigma = cov.sigma if isinstance(cov, SensingCovariance) else np.asarray(cov, dtype=float)
    if sigma.shape != (2, 2) or np.any(np.linalg.eigvalsh(sigma) <= 0.0):
        raise ValueError("covariance must be 2x2 symmetric positive definite")
    q = chi2_quantile_2dof(1.0 - risk_eps)
    return ConfidenceEllipse(center=np.asarray(mean, dtype=float).reshape(2), shape=q * sigma)


@dataclass(frozen=True, eq=False)
class InflatedObstacle:
    """Obstacle footprint enlarged by the sensing-confidence margin."""

    rect: OrientedRect
    discs: DiscPair
    power_used: float
    quantile: float


def inflation_margins(
    crb: CrbModel, p_k: float, risk_eps: float, heading: float
) -> tuple[float, float]:
    """Half-extent growth along the obstacle's body axes.

    Equals the support of the confidence ellipse along each body axis, so
    the inflated rectangle contains the Minkowski sum of the nominal
    rectangle and the ellipse. For axis-aligned obstacles this reduces to
    sqrt(q c11 / p) and sqrt(q c22 / p).
    """
    if p_k <= 0.0:
        raise InvalidPowerError("beam power must be positive")
    q = chi2_quantile_2dof(1.0 - risk_eps)
    var_x = crb.c11 / p_k
    var_y = crb.c22 / p_k
    c2, s2 = math.cos(heading) ** 2, math.sin(heading) ** 2
    d_len = math.sqrt(q * (var_x * c2 + var_y * s2))
    d_wid = math.sqrt(q * (var_x * s2 + var_y * c2))
    return d_len, d_wid


def inflate_obstacle(
    nominal: OrientedRect, crb: CrbModel, p_k: float, risk_eps: float
) -> InflatedObstacle:
    """Grow a rectangle (and its disc cover) by the confidence margin.

    The disc radius grows by sqrt(q (c11 + c22) / p), which covers the
    confidence ellipse in any direction, so the inflated disc pair also
    covers the inflated rectangle.
    """
    d_len, d_wid = inflation_margins(crb, p_k, risk_eps, nominal.center.theta)
    q = chi2_quantile_2dof(1.0 - risk_eps)
    rect = make_rect(nominal.center, nominal.half_length + d_len, nominal.half_width + d_wid)
    base = dca_decompose(nominal)
    radius = base.radius + math.sqrt(q * (crb.c11 + crb.c22) / p_k)
    return InflatedObstacle(
        rect=rect,
        discs=DiscPair(base.centers, radius),
        power_used=float(p_k),
        quantile=q,
    )


def disc_radius_inflation(crb: CrbModel, p_k: float, risk_eps: float) -> float:
    """Growth of the covering-disc radius at power p_k."""
    if p_k <= 0.0:
        raise InvalidPowerError("beam power must be positive")
    q = chi2_quantile_2dof(1.0 - risk_eps)
    return math.sqrt(q * (crb.c11 + crb.c22) / p_k)
