"""Physical-layer statistics of the roadside sensing/communication unit.

Line-of-sight channel and reflection coefficients, measurement-noise
variances of the angle/delay channels, Fisher information of the target
position and the error bound it induces, plus a Monte-Carlo
weighted-least-squares estimator used as the validation oracle for that
bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DegenerateGeometryError(ValueError):
    """Target coincides with the sensor position."""


class InvalidPowerError(ValueError):
    """Beam power must be strictly positive."""


class EstimationDegenerateError(RuntimeError):
    """Fisher information is singular (no usable measurement channels)."""


@dataclass(frozen=True, eq=False)
class RsuConfig:
    """Static parameters of the roadside unit and its link budget.

    Noise variances are unit powers; ``a1``/``a2`` are the delay/angle
    scaling factors of the post-matched-filter measurement channels and
    ``filter_gain`` the matched filtering gain.
    """

    position: np.ndarray
    n_tx: int = 64
    n_rx: int = 64
    sigma_r2: float = 1.0
    sigma_c2: float = 1.0
    filter_gain: float = 10.0
    a1: float = 6.7e-5
    a2: float = 1.0
    xi: complex = 1.0 + 1.0j
    alpha_ref: float = 1.0
    carrier_freq_hz: float = 5.9e9
    lightspeed: float = 3.0e8

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        if self.n_tx < 1 or self.n_rx < 1:
            raise ValueError("antenna counts must be >= 1")
        for name in ("sigma_r2", "sigma_c2", "filter_gain", "alpha_ref"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    @property
    def kappa_r(self) -> float:
        return math.sqrt(self.n_tx * self.n_rx)

    @property
    def kappa_c(self) -> float:
        return math.sqrt(self.n_tx)


@dataclass(frozen=True)
class PolarState:
    """Azimuth (rad) and range (m) of a target relative to the RSU."""

    theta: float
    dist: float

    def __post_init__(self):
        if self.dist <= 0.0:
            raise DegenerateGeometryError("range must be positive")


@dataclass(frozen=True, eq=False)
class CrbModel:
    """Unit-power position error bound; the bound at power p is full_matrix / p."""

    c11: float
    c22: float
    full_matrix: np.ndarray


@dataclass(frozen=True, eq=False)
class SensingCovariance:
    """Diagonal position covariance diag(c11/p, c22/p)."""

    sigma: np.ndarray


def polar_from_cartesian(ov_pos: np.ndarray, rsu: RsuConfig) -> PolarState:
    rel = np.asarray(ov_pos, dtype=float) - rsu.position
    d = float(np.linalg.norm(rel))
    if d <= 0.0:
        raise DegenerateGeometryError("target position coincides with the RSU")
    return PolarState(theta=float(math.atan2(rel[1], rel[0])), dist=d)


def cartesian_from_polar(polar: PolarState, rsu: RsuConfig) -> np.ndarray:
    return rsu.position + polar.dist * np.array([math.cos(polar.theta), math.sin(polar.theta)])


def channel_gain(polar: PolarState, rsu: RsuConfig) -> float:
    """|channel coefficient|^2 = (alpha_ref / d)^2; the carrier phase drops out."""
    return (rsu.alpha_ref / polar.dist) ** 2


def reflection_coeff(polar: PolarState, rsu: RsuConfig) -> complex:
    return rsu.xi / (2.0 * polar.dist)


def steering_vector(theta: float, n: int) -> np.ndarray:
    """Half-wavelength ULA response, phase-centered and unit-norm."""
    idx = np.arange(n) - (n - 1) / 2.0
    return np.exp(1j * math.pi * idx * math.sin(theta)) / math.sqrt(n)


def steering_vector_deriv(theta: float, n: int) -> np.ndarray:
    idx = np.arange(n) - (n - 1) / 2.0
    phase = np.exp(1j * math.pi * idx * math.sin(theta)) / math.sqrt(n)
    return 1j * math.pi * idx * math.cos(theta) * phase


def noise_variances(
    polar: PolarState, p_k: float, rsu: RsuConfig, delta_k: float = 1.0
) -> tuple[float, float]:
    """Per-element angle-channel and delay-channel noise variances at power p_k.

    Both scale as 1/p_k; the delay channel additionally divides by the
    round-trip array gain and reflection strength.
    """
    if p_k <= 0.0:
        raise InvalidPowerError("beam power must be positive")
    if delta_k <= 0.0:
        raise ValueError("beam gain must be positive")
    var_theta = rsu.a2**2 * rsu.sigma_r2 / (rsu.filter_gain * p_k)
    beta2 = abs(reflection_coeff(polar, rsu)) ** 2
    var_tau = rsu.a1**2 * rsu.sigma_r2 / (
        rsu.filter_gain * rsu.kappa_r**2 * beta2 * delta_k**2 * p_k
    )
    return var_theta, var_tau


def measurement_mean(polar: PolarState, rsu: RsuConfig, delta_k: float = 1.0) -> np.ndarray:
    """Noise-free measurement: reflected array snapshot stacked with the delay."""
    beta = reflection_coeff(polar, rsu)
    b = steering_vector(polar.theta, rsu.n_rx)
    g_angle = rsu.kappa_r * beta * delta_k * b
    g_delay = 2.0 * polar.dist / rsu.lightspeed
    return np.concatenate([g_angle, [g_delay]])


def measurement_jacobian(polar: PolarState, rsu: RsuConfig, delta_k: float = 1.0) -> np.ndarray:
    """d(measurement)/d(theta, d); the reflection coefficient carries the 1/d row."""
    beta = reflection_coeff(polar, rsu)
    b = steering_vector(polar.theta, rsu.n_rx)
    db = steering_vector_deriv(polar.theta, rsu.n_rx)
    col_theta = np.concatenate([rsu.kappa_r * beta * delta_k * db, [0.0]])
    col_d = np.concatenate(
        [rsu.kappa_r * (-beta / polar.dist) * delta_k * b, [2.0 / rsu.lightspeed]]
    )
    return np.stack([col_theta, col_d], axis=1)


def _unit_noise_diag(polar: PolarState, rsu: RsuConfig, delta_k: float) -> np.ndarray:
    """Measurement noise covariance diagonal at unit beam power."""
    var_theta, var_tau = noise_variances(polar, 1.0, rsu, delta_k)
    return np.concatenate([np.full(rsu.n_rx, var_theta), [var_tau]])


def unit_fim_polar(polar: PolarState, rsu: RsuConfig, delta_k: float = 1.0) -> np.ndarray:
    """Fisher information of (theta, d) at unit power: 2 Re(U^H Q^-1 U).

    The factor 2 Re(.) is the real-parameter information of a circular
    complex Gaussian measurement; the weighted least-squares estimator
    attains exactly this bound in the linearized model.
    """
    u = measurement_jacobian(polar, rsu, delta_k)
    q = _unit_noise_diag(polar, rsu, delta_k)
    return 2.0 * np.real(u.conj().T @ (u / q[:, None]))


def polar_jacobian(pos: np.ndarray) -> np.ndarray:
    """d(theta, d)/d(x, y) at a cartesian target position."""
    x, y = float(pos[0]), float(pos[1])
    r2 = x * x + y * y
    r = math.sqrt(r2)
    return np.array([[-y / r2, x / r2], [x / r, y / r]])


def crb_matrix(polar: PolarState, rsu: RsuConfig, delta_k: float = 1.0) -> CrbModel:
    """Unit-power position error bound from the polar Fisher information.

    Information about the position is A^T J_w A with A the polar-from-
    cartesian Jacobian; the bound matrix is its inverse and scales as 1/p.
    """
    j_w = unit_fim_polar(polar, rsu, delta_k)
    rel = cartesian_from_polar(polar, rsu) - rsu.position
    a = polar_jacobian(rel)
    j_s = a.T @ j_w @ a
    try:
        c = np.linalg.inv(j_s)
    except np.linalg.LinAlgError as exc:
        raise EstimationDegenerateError("singular Fisher information") from exc
    if not np.all(np.isfinite(c)) or c[0, 0] <= 0.0 or c[1, 1] <= 0.0:
        raise EstimationDegenerateError("degenerate Fisher information")
    c = 0.5 * (c + c.T)
    return CrbModel(c11=float(c[0, 0]), c22=float(c[1, 1]), full_matrix=c)


def sensing_covariance(crb: CrbModel, p_k: float) -> SensingCovariance:
    """Diagonal position covariance at power p_k."""
    if p_k <= 0.0:
        raise InvalidPowerError("beam power must be positive")
    return SensingCovariance(sigma=np.diag([crb.c11 / p_k, crb.c22 / p_k]))


def mle_sample_batch(
    polar_true: PolarState,
    p_k: float,
    rsu: RsuConfig,
    n: int,
    rng: int | np.random.Generator,
    delta_k: float = 1.0,
    noise_scale: float = 1.0,
) -> np.ndarray:
    """Draw n position estimates from the linearized weighted-least-squares
    estimator operating at the true state.

    Complex Gaussian noise with the angle/delay variances enters the
    linear measurement; the normal equations are solved for (theta, d) and
    mapped to cartesian coordinates. Deterministic given the seed.
    """
    if p_k <= 0.0:
        raise InvalidPowerError("beam power must be positive")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    u = measurement_jacobian(polar_true, rsu, delta_k)
    q = _unit_noise_diag(polar_true, rsu, delta_k) / p_k
    m = np.real(u.conj().T @ (u / q[:, None]))
    w_true = np.array([polar_true.theta, polar_true.dist])

    dim = rsu.n_rx + 1
    std = np.sqrt(q / 2.0) * noise_scale
    z = (gen.standard_normal((n, dim)) + 1j * gen.standard_normal((n, dim))) * std
    # rhs_j = Re(U^H Q^-1 (U w + z_j)) = M w + Re(U^H Q^-1 z_j)
    uq = (u.conj() / q[:, None]).T  # 2 x dim
    rhs = (m @ w_true)[:, None] + np.real(z @ uq.T).T  # 2 x n
    w_hat = np.linalg.solve(m, rhs)  # 2 x n
    theta_hat, d_hat = w_hat[0], w_hat[1]
    pos = np.stack([d_hat * np.cos(theta_hat), d_hat * np.sin(theta_hat)], axis=1)
    return rsu.position + pos


def mle_sample(
    polar_true: PolarState,
    p_k: float,
    rsu: RsuConfig,
    rng: int | np.random.Generator,
    delta_k: float = 1.0,
    noise_scale: float = 1.0,
) -> np.ndarray:
    """Single estimated position; see mle_sample_batch."""
    return mle_sample_batch(polar_true, p_k, rsu, 1, rng, delta_k, noise_scale)[0]


def effective_comm_gain(polar: PolarState, rsu: RsuConfig, delta_k: float = 1.0) -> float:
    """Downlink SNR per unit power: kappa_c^2 |alpha|^2 delta^2 / sigma_c2 (1/W)."""
    return rsu.kappa_c**2 * channel_gain(polar, rsu) * delta_k**2 / rsu.sigma_c2


def sum_rate(powers: np.ndarray, gains: np.ndarray, rsu: RsuConfig) -> float:
    """Downlink sum rate (bits/s/Hz) given |alpha_k|^2 delta_k^2 gains."""
    p = np.asarray(powers, dtype=float)
    g = np.asarray(gains, dtype=float)
    if np.any(p < 0.0):
        raise InvalidPowerError("powers must be nonnegative")
    return float(np.sum(np.log2(1.0 + p * rsu.kappa_c**2 * g / rsu.sigma_c2)))


def power_budget_from_snr(snr_db: float, rsu: RsuConfig) -> float:
    """Total transmit power for a given transmit SNR (P_sum / sigma_r2)."""
    return rsu.sigma_r2 * 10.0 ** (snr_db / 10.0)
