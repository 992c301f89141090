import math

import numpy as np
import pytest
import scipy.stats

from pisac.geometry import (
    OrientedRect,
    Pose2,
    dca_decompose,
    polytope_distance,
    rect_to_polytope,
    rotation,
)
from pisac.isac import CrbModel, InvalidPowerError
from pisac.uncertainty import (
    ConfidenceEllipse,
    chi2_cdf_2dof,
    chi2_quantile_2dof,
    confidence_ellipse,
    disc_radius_inflation,
    inflate_obstacle,
    inflation_margins,
)


def crb_of(c11, c22):
    return CrbModel(c11=c11, c22=c22, full_matrix=np.diag([c11, c22]))


class TestChi2Quantile:
    def test_known_values(self):
        assert chi2_quantile_2dof(1.0 - math.exp(-1.0)) == pytest.approx(2.0, abs=1e-12)
        assert chi2_quantile_2dof(0.95) == pytest.approx(5.991464547107982, abs=1e-9)
        assert chi2_quantile_2dof(1e-12) == pytest.approx(0.0, abs=1e-9)

    def test_matches_scipy(self):
        for p in [0.01, 0.1, 0.5, 0.9, 0.95, 0.999]:
            assert chi2_quantile_2dof(p) == pytest.approx(scipy.stats.chi2.ppf(p, df=2), rel=1e-12)

    def test_cdf_round_trip(self):
        for p in [0.001, 0.3, 0.5, 0.777, 0.99, 0.999999]:
            assert chi2_cdf_2dof(chi2_quantile_2dof(p)) == pytest.approx(p, abs=1e-12)

    def test_domain(self):
        for bad in [0.0, 1.0, -0.2, 1.5]:
            with pytest.raises(ValueError):
                chi2_quantile_2dof(bad)


class TestConfidenceEllipse:
    def test_isotropic_semi_axes(self):
        ell = confidence_ellipse(np.zeros(2), np.eye(2), risk_eps=math.exp(-1.0))
        # containment level 1 - e^-1 gives quantile 2, semi-axes sqrt(2)
        r = math.sqrt(2.0)
        assert ell.contains(np.array([r - 1e-9, 0.0]))
        assert not ell.contains(np.array([r + 1e-9, 0.0]))

    def test_diagonal_semi_axes(self):
        eps = 0.05
        q = chi2_quantile_2dof(1 - eps)
        ell = confidence_ellipse(np.zeros(2), np.diag([4.0, 1.0]), risk_eps=eps)
        assert ell.contains(np.array([2 * math.sqrt(q) - 1e-9, 0.0]))
        assert not ell.contains(np.array([2 * math.sqrt(q) + 1e-9, 0.0]))
        assert ell.contains(np.array([0.0, math.sqrt(q) - 1e-9]))
        assert not ell.contains(np.array([0.0, math.sqrt(q) + 1e-9]))

    def test_monte_carlo_containment(self):
        rng = np.random.default_rng(17)
        eps = 0.1
        sigma = np.diag([0.3, 2.0])
        mean = np.array([4.0, -1.0])
        ell = confidence_ellipse(mean, sigma, risk_eps=eps)
        samples = rng.multivariate_normal(mean, sigma, size=100_000)
        freq = ell.contains(samples).mean()
        assert freq == pytest.approx(1 - eps, abs=0.005)

    def test_degenerate_cov(self):
        with pytest.raises(ValueError):
            confidence_ellipse(np.zeros(2), np.diag([1.0, 0.0]), 0.05)


class TestInflation:
    def test_plug_in_formula(self):
        # quantile 4 corresponds to risk e^-2
        eps = math.exp(-2.0)
        rect = OrientedRect(Pose2(0, 0, 0), 1.0, 0.5)
        inf = inflate_obstacle(rect, crb_of(1.0, 1.0), p_k=4.0, risk_eps=eps)
        assert inf.quantile == pytest.approx(4.0, rel=1e-12)
        assert inf.rect.half_length == pytest.approx(2.0, rel=1e-12)
        assert inf.rect.half_width == pytest.approx(1.5, rel=1e-12)

    def test_high_power_limit(self):
        rect = OrientedRect(Pose2(3, 2, 0.7), 2.0, 1.0)
        inf = inflate_obstacle(rect, crb_of(2.0, 1.0), p_k=1e12, risk_eps=0.05)
        assert inf.rect.half_length == pytest.approx(rect.half_length, abs=1e-5)
        assert inf.rect.half_width == pytest.approx(rect.half_width, abs=1e-5)
        assert inf.discs.radius == pytest.approx(dca_decompose(rect).radius, abs=1e-5)

    def test_monotone_in_power_and_risk(self):
        crb = crb_of(3.0, 1.5)
        d1 = disc_radius_inflation(crb, 1.0, 0.05)
        d2 = disc_radius_inflation(crb, 4.0, 0.05)
        assert d2 < d1
        m_low = inflation_margins(crb, 2.0, 0.10, heading=0.3)
        m_high = inflation_margins(crb, 2.0, 0.01, heading=0.3)
        assert m_high[0] > m_low[0] and m_high[1] > m_low[1]

    def test_invalid_power(self):
        with pytest.raises(InvalidPowerError):
            inflate_obstacle(OrientedRect(Pose2(0, 0, 0), 1.0, 0.5), crb_of(1, 1), 0.0, 0.05)

    def test_minkowski_containment_monte_carlo(self):
        # rectangles placed at sampled true centers stay inside the inflated
        # rectangle for at least the confidence fraction of draws
        rng = np.random.default_rng(29)
        eps = 0.05
        for heading in [0.0, 0.4, -1.2]:
            rect = OrientedRect(Pose2(5.0, -2.0, heading), 2.347, 0.9245)
            crb = crb_of(0.8, 0.25)
            p = 4.0
            inf = inflate_obstacle(rect, crb, p, risk_eps=eps)
            sigma = np.array([crb.c11 / p, crb.c22 / p])
            shifts = rng.standard_normal((100_000, 2)) * np.sqrt(sigma)
            # shifted rectangle inside inflated rectangle iff every corner is
            corners = rect.corners()  # 4 x 2
            all_pts = corners[None, :, :] + shifts[:, None, :]
            inside = inf.rect.contains(all_pts.reshape(-1, 2)).reshape(-1, 4).all(axis=1)
            assert inside.mean() >= 1 - eps - 0.01

    def test_inflated_discs_cover_inflated_rect(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            hl = rng.uniform(0.6, 3.0)
            hw = rng.uniform(0.3, hl)
            rect = OrientedRect(
                Pose2(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3)), hl, hw
            )
            crb = crb_of(rng.uniform(0.1, 4.0), rng.uniform(0.1, 4.0))
            inf = inflate_obstacle(rect, crb, p_k=rng.uniform(0.5, 50.0), risk_eps=0.05)
            body = rng.uniform(-1, 1, size=(3000, 2)) * [
                inf.rect.half_length,
                inf.rect.half_width,
            ]
            world = body @ rotation(inf.rect.center.theta).T + inf.rect.center.position
            d0 = np.linalg.norm(world - inf.discs.centers[0], axis=1)
            d1 = np.linalg.norm(world - inf.discs.centers[1], axis=1)
            assert np.all(np.minimum(d0, d1) <= inf.discs.radius + 1e-9)


class TestSufficiency:
    def test_clearance_implies_chance_constraint(self):
        # whenever the inflated rectangle keeps the safety margin, the true
        # collision probability stays below the risk level
        rng = np.random.default_rng(41)
        eps = 0.05
        d_safe = 0.15
        ev = OrientedRect(Pose2(0.0, 0.0, 0.2), 2.347, 0.9245)
        ev_poly = rect_to_polytope(ev)
        checked = 0
        while checked < 5:
            crb = crb_of(rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0))
            p = rng.uniform(1.0, 8.0)
            center = Pose2(rng.uniform(3.0, 8.0), rng.uniform(-4.0, 4.0), rng.uniform(-3, 3))
            ov = OrientedRect(center, 2.347, 0.9245)
            inf = inflate_obstacle(ov, crb, p, risk_eps=eps)
            margin = polytope_distance(ev_poly, rect_to_polytope(inf.rect))
            if not d_safe <= margin <= d_safe + 0.3:
                continue
            checked += 1
            sigma = np.array([crb.c11 / p, crb.c22 / p])
            shifts = rng.standard_normal((20_000, 2)) * np.sqrt(sigma)
            viol = 0
            for s in shifts[:2_000]:
                moved = OrientedRect(
                    Pose2(center.x + s[0], center.y + s[1], center.theta), 2.347, 0.9245
                )
                if polytope_distance(ev_poly, rect_to_polytope(moved)) <= d_safe:
                    viol += 1
            assert viol / 2_000 <= eps + 0.02
