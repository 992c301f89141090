import math

import numpy as np
import pytest

from pisac.isac import (
    CrbModel,
    DegenerateGeometryError,
    InvalidPowerError,
    PolarState,
    RsuConfig,
    cartesian_from_polar,
    channel_gain,
    crb_matrix,
    effective_comm_gain,
    measurement_jacobian,
    measurement_mean,
    mle_sample,
    mle_sample_batch,
    noise_variances,
    polar_from_cartesian,
    polar_jacobian,
    power_budget_from_snr,
    reflection_coeff,
    sensing_covariance,
    sum_rate,
    unit_fim_polar,
)

RSU = RsuConfig(position=(380.0, 38.5))


class TestPolarConversion:
    def test_axis_cases(self):
        p = polar_from_cartesian(RSU.position + np.array([10.0, 0.0]), RSU)
        assert p.theta == pytest.approx(0.0, abs=1e-15)
        assert p.dist == pytest.approx(10.0, abs=1e-12)
        p = polar_from_cartesian(RSU.position + np.array([0.0, 5.0]), RSU)
        assert p.theta == pytest.approx(math.pi / 2, abs=1e-15)
        assert p.dist == pytest.approx(5.0, abs=1e-12)

    def test_vehicle_start_geometry(self):
        p = polar_from_cartesian(np.array([409.2, 28.0]), RSU)
        assert p.dist == pytest.approx(math.hypot(29.2, 10.5), abs=1e-9)
        assert p.theta == pytest.approx(math.atan2(-10.5, 29.2), abs=1e-12)

    def test_round_trip(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            pos = RSU.position + rng.uniform(-80, 80, size=2)
            if np.linalg.norm(pos - RSU.position) < 1.0:
                continue
            back = cartesian_from_polar(polar_from_cartesian(pos, RSU), RSU)
            assert np.allclose(back, pos, atol=1e-9)

    def test_degenerate(self):
        with pytest.raises(DegenerateGeometryError):
            polar_from_cartesian(RSU.position, RSU)


class TestLinkCoefficients:
    def test_channel_gain(self):
        assert channel_gain(PolarState(0.3, 10.0), RSU) == pytest.approx(0.01)
        assert channel_gain(PolarState(0.0, 1.0), RSU) == pytest.approx(1.0)
        rsu2 = RsuConfig(position=(0, 0), alpha_ref=2.0)
        assert channel_gain(PolarState(0.0, 4.0), rsu2) == pytest.approx(0.25)

    def test_reflection_coeff(self):
        beta = reflection_coeff(PolarState(0.1, 10.0), RSU)
        assert beta == pytest.approx(0.05 + 0.05j)
        assert abs(beta) ** 2 == pytest.approx(0.005)
        assert reflection_coeff(PolarState(0.1, 0.5), RSU) == pytest.approx(1 + 1j)
        # doubling distance quarters the reflected power
        b1 = abs(reflection_coeff(PolarState(0.0, 7.0), RSU)) ** 2
        b2 = abs(reflection_coeff(PolarState(0.0, 14.0), RSU)) ** 2
        assert b1 == pytest.approx(4.0 * b2)


class TestNoiseVariances:
    def test_angle_channel_value(self):
        var_theta, _ = noise_variances(PolarState(0.2, 20.0), 1.0, RSU)
        assert var_theta == pytest.approx(0.1, rel=1e-12)

    def test_power_scaling(self):
        v1 = noise_variances(PolarState(0.2, 20.0), 1.0, RSU)
        v2 = noise_variances(PolarState(0.2, 20.0), 2.0, RSU)
        assert v2[0] == pytest.approx(v1[0] / 2)
        assert v2[1] == pytest.approx(v1[1] / 2)

    def test_delay_channel_frozen_value(self):
        # |beta|^2 = 0.005 at d = 10 with the default cross section
        var_tau = noise_variances(PolarState(0.0, 10.0), 1.0, RSU)[1]
        expected = (6.7e-5) ** 2 / (10.0 * 4096.0 * 0.005)  # independent scalar evaluation
        assert var_tau == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(2.19189e-11, rel=1e-4)

    def test_invalid_power(self):
        with pytest.raises(InvalidPowerError):
            noise_variances(PolarState(0.0, 10.0), 0.0, RSU)


class TestJacobians:
    def test_polar_jacobian_finite_differences(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            pos = rng.uniform(-50, 50, size=2)
            if np.linalg.norm(pos) < 1.0:
                continue
            a = polar_jacobian(pos)
            eps = 1e-6
            fd = np.zeros((2, 2))
            for j in range(2):
                dp = np.zeros(2)
                dp[j] = eps
                hi = np.array([math.atan2(*(pos + dp)[::-1]), np.linalg.norm(pos + dp)])
                lo = np.array([math.atan2(*(pos - dp)[::-1]), np.linalg.norm(pos - dp)])
                fd[:, j] = (hi - lo) / (2 * eps)
            assert np.allclose(a, fd, rtol=1e-6, atol=1e-8)

    def test_measurement_jacobian_finite_differences(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            polar = PolarState(rng.uniform(-1.2, 1.2), rng.uniform(5.0, 80.0))
            u = measurement_jacobian(polar, RSU)
            eps_t, eps_d = 1e-7, 1e-5
            g_tp = measurement_mean(PolarState(polar.theta + eps_t, polar.dist), RSU)
            g_tm = measurement_mean(PolarState(polar.theta - eps_t, polar.dist), RSU)
            g_dp = measurement_mean(PolarState(polar.theta, polar.dist + eps_d), RSU)
            g_dm = measurement_mean(PolarState(polar.theta, polar.dist - eps_d), RSU)
            fd = np.stack([(g_tp - g_tm) / (2 * eps_t), (g_dp - g_dm) / (2 * eps_d)], axis=1)
            scale = np.abs(u).max()
            assert np.allclose(u, fd, atol=1e-6 * scale)


class TestCrb:
    def test_power_scaling_exact(self):
        polar = polar_from_cartesian(np.array([409.2, 28.0]), RSU)
        crb = crb_matrix(polar, RSU)
        for p in [0.5, 10.0, 6309.57]:
            cov = sensing_covariance(crb, p)
            assert np.allclose(np.diag(cov.sigma), [crb.c11 / p, crb.c22 / p], rtol=1e-15)

    def test_boresight_channel_coupling(self):
        # target on the array axis: x-error driven by the range channels,
        # y-error by the angle channel
        polar = PolarState(0.0, 30.0)
        j_w = unit_fim_polar(polar, RSU)
        assert abs(j_w[0, 1]) < 1e-9 * math.sqrt(j_w[0, 0] * j_w[1, 1])
        crb = crb_matrix(polar, RSU)
        assert crb.c11 == pytest.approx(1.0 / j_w[1, 1], rel=1e-9)
        assert crb.c22 == pytest.approx(polar.dist**2 / j_w[0, 0], rel=1e-9)

    def test_monotone_in_distance(self):
        dists = np.linspace(10.0, 90.0, 17)
        sums = []
        for d in dists:
            crb = crb_matrix(PolarState(0.35, float(d)), RSU)
            sums.append(crb.c11 + crb.c22)
        assert np.all(np.diff(sums) > 0.0)


class TestMleSampler:
    def test_zero_noise_recovers_truth(self):
        polar = polar_from_cartesian(np.array([409.2, 28.0]), RSU)
        est = mle_sample(polar, 100.0, RSU, rng=0, noise_scale=0.0)
        assert np.allclose(est, np.array([409.2, 28.0]), atol=1e-9)

    def test_deterministic_given_seed(self):
        polar = PolarState(0.4, 25.0)
        a = mle_sample_batch(polar, 50.0, RSU, 64, rng=123)
        b = mle_sample_batch(polar, 50.0, RSU, 64, rng=123)
        assert np.array_equal(a, b)

    def test_bias_and_efficiency(self):
        polar = polar_from_cartesian(np.array([409.2, 28.0]), RSU)
        p = power_budget_from_snr(38.0, RSU)
        crb = crb_matrix(polar, RSU)
        n = 10_000
        est = mle_sample_batch(polar, p, RSU, n, rng=0)
        err = est - np.array([409.2, 28.0])
        mse = (err**2).mean(axis=0)
        bound = np.array([crb.c11, crb.c22]) / p
        # bias below 3 standard errors per coordinate
        se = np.sqrt(bound / n)
        assert np.all(np.abs(err.mean(axis=0)) < 3 * se)
        # empirical MSE matches the bound within 30%, and is not below it
        # beyond 3-sigma Monte-Carlo fluctuation of a variance estimate
        mc_allowance = 3.0 * math.sqrt(2.0 / n)
        ratio = mse / bound
        assert np.all(ratio >= 1.0 - mc_allowance)
        assert np.all(ratio <= 1.3)
        # the off-diagonal error correlation follows the full bound matrix
        emp_cross = (err[:, 0] * err[:, 1]).mean()
        assert emp_cross == pytest.approx(crb.full_matrix[0, 1] / p, rel=0.15)

    def test_mse_shrinks_with_power(self):
        polar = PolarState(-0.3, 31.0)
        n = 4000
        e1 = mle_sample_batch(polar, 10.0, RSU, n, rng=5)
        e2 = mle_sample_batch(polar, 1000.0, RSU, n, rng=5)
        truth = cartesian_from_polar(polar, RSU)
        m1 = ((e1 - truth) ** 2).mean(axis=0)
        m2 = ((e2 - truth) ** 2).mean(axis=0)
        assert np.all(m1 / m2 == pytest.approx(100.0, rel=0.15))


class TestRates:
    def test_single_user_unit_snr(self):
        # pick a gain so that p * kappa_c^2 * g / sigma_c2 == 1
        g = 1.0 / RSU.kappa_c**2
        assert sum_rate(np.array([1.0]), np.array([g]), RSU) == pytest.approx(1.0)

    def test_zero_powers(self):
        assert sum_rate(np.zeros(3), np.ones(3), RSU) == 0.0

    def test_three_user_cross_check(self):
        gains = np.array([1.0, 2.0, 4.0]) / RSU.kappa_c**2
        powers = np.ones(3)
        expected = sum(math.log2(1.0 + float(s)) for s in [1.0, 2.0, 4.0])
        assert sum_rate(powers, gains, RSU) == pytest.approx(expected, rel=1e-12)

    def test_effective_comm_gain_definition(self):
        polar = PolarState(0.2, 20.0)
        g = effective_comm_gain(polar, RSU)
        assert g == pytest.approx(RSU.kappa_c**2 * (1.0 / 20.0**2) / RSU.sigma_c2, rel=1e-12)

    def test_power_budget_from_snr(self):
        assert power_budget_from_snr(30.0, RSU) == pytest.approx(1000.0, rel=1e-12)
