"""Receding-horizon motion planner.

Tracks a straight-line reference under linearized bicycle dynamics while
keeping a safety margin from rectangular obstacles. Clearance constraints
use the strong-dual form of the polytope separation distance; the
resulting problem is bi-convex and is solved by alternating between the
per-obstacle dual variables and a condensed control-space QP.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    HalfspacePolytope,
    OrientedRect,
    Pose2,
    batch_signed_clearance,
    closest_points_verts,
    penetration_axis_verts,
    polytope_distance,
    rect_geom,
    rect_to_polytope,
    rotation,
    signed_clearance_geom,
)
from .uncertainty import InflatedObstacle


class SingularSteeringError(ValueError):
    """Steering reference too close to +-pi/2 to linearize."""


class InfeasibleStartError(RuntimeError):
    """Initial state already overlaps a planning obstacle."""


@dataclass(frozen=True)
class DynamicsModel:
    """Kinematic bicycle with per-step control-delta limits.

    Controls are (speed m/s, steering rad); delta bounds apply between
    consecutive horizon steps.
    """

    wheelbase: float = 2.875
    dt: float = 0.1
    u_min: tuple[float, float] = (0.0, -0.6)
    u_max: tuple[float, float] = (10.0, 0.6)
    a_min: tuple[float, float] = (-1.0, -0.3)
    a_max: tuple[float, float] = (1.0, 0.3)

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if not (
            self.u_min[0] < self.u_max[0]
            and self.u_min[1] < self.u_max[1]
            and self.a_min[0] < self.a_max[0]
            and self.a_min[1] < self.a_max[1]
        ):
            raise ValueError("control bounds must be ordered")


def nonlinear_step(state: np.ndarray, control: np.ndarray, dyn: DynamicsModel) -> np.ndarray:
    """One step of the exact bicycle kinematics."""
    x, y, th = state
    v, psi = control
    return np.array(
        [
            x + dyn.dt * v * math.cos(th),
            y + dyn.dt * v * math.sin(th),
            th + dyn.dt * v * math.tan(psi) / dyn.wheelbase,
        ]
    )


def linearize_dynamics(
    ref_state: np.ndarray, ref_control: np.ndarray, dyn: DynamicsModel
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First-order expansion of the bicycle step about a reference point.

    Exact at the expansion point: A s + B u + c reproduces the nonlinear
    step there.
    """
    _, _, th = np.asarray(ref_state, dtype=float)
    v, psi = np.asarray(ref_control, dtype=float)
    if abs(psi) >= math.pi / 2 - 1e-3:
        raise SingularSteeringError("steering reference too close to +-pi/2")
    a = np.array(
        [
            [1.0, 0.0, -dyn.dt * v * math.sin(th)],
            [0.0, 1.0, dyn.dt * v * math.cos(th)],
            [0.0, 0.0, 1.0],
        ]
    )
    b = dyn.dt * np.array(
        [
            [math.cos(th), 0.0],
            [math.sin(th), 0.0],
            [math.tan(psi) / dyn.wheelbase, v / (dyn.wheelbase * math.cos(psi) ** 2)],
        ]
    )
    c = nonlinear_step(ref_state, ref_control, dyn) - a @ np.asarray(ref_state) - b @ np.asarray(
        ref_control
    )
    return a, b, c


@dataclass(frozen=True, eq=False)
class ReferencePath:
    """H+1 waypoints sampled along the start -> goal line."""

    waypoints: list[Pose2]

    def as_array(self) -> np.ndarray:
        return np.array([w.as_array() for w in self.waypoints])


def sample_reference(
    start: Pose2, goal: Pose2, speed: float, dynamics: DynamicsModel, horizon: int
) -> ReferencePath:
    """Waypoints spaced by speed*dt along the line, clamped at the goal."""
    delta = goal.position - start.position
    dist = float(np.linalg.norm(delta))
    if dist <= 1e-12:
        raise ValueError("start and goal coincide")
    heading = math.atan2(delta[1], delta[0])
    unit = delta / dist
    step = speed * dynamics.dt
    pts = []
    for i in range(horizon + 1):
        s = min(i * step, dist)
        p = start.position + s * unit
        pts.append(Pose2(p[0], p[1], heading))
    return ReferencePath(waypoints=pts)


@dataclass(eq=False)
class DualVars:
    """Per (obstacle, step) multipliers of the separation reformulation."""

    lam: np.ndarray  # (K, H+1, 4)
    mu: np.ndarray  # (K, H+1, 4)


@dataclass(eq=False)
class PlanResult:
    states: np.ndarray  # (H+1, 3); replays exactly under lin_* and controls
    controls: np.ndarray  # (H, 2)
    duals: DualVars
    tracking_cost: float
    min_clearance: float
    iterations: int
    converged: bool
    lin_a: np.ndarray  # (H, 3, 3)
    lin_b: np.ndarray  # (H, 3, 2)
    lin_c: np.ndarray  # (H, 3)
    merit_history: list = field(default_factory=list)

    def poses(self) -> list[Pose2]:
        return [Pose2(*s) for s in self.states]


@dataclass
class PlanConfig:
    max_iters: int = 100
    tol_traj: float = 1e-3
    trust_pos: float = 0.5
    trust_theta: float = 0.2
    prune_margin: float = 1.2
    slack_weight: float = 2500.0
    barrier_taus: tuple = (64.0, 1e4, 2.5e5)
    newton_cap: int = 20
    control_reg: float = 1e-9
    relax_infeasible_start: bool = False
    ev_half_length: float = 2.347
    ev_half_width: float = 0.9245


# ---------------------------------------------------------------------------
# dual construction and the stand-alone dual solver


def _axis_decompose(d_rows: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Nonnegative weights on the +-axis normal rows reproducing ``target``.

    Rows come ordered (u, -u, v, -v) from rect_to_polytope, so the
    projection on each axis splits into a positive/negative row weight.
    """
    lam = np.zeros(4)
    alpha = float(d_rows[0] @ target)
    beta = float(d_rows[2] @ target)
    if alpha >= 0.0:
        lam[0] = alpha
    else:
        lam[1] = -alpha
    if beta >= 0.0:
        lam[2] = beta
    else:
        lam[3] = -beta
    return lam


def _support_mu(w: np.ndarray) -> np.ndarray:
    """Minimal-cost mu with G^T mu = w for the origin-centered ego rectangle."""
    return np.array([max(w[0], 0.0), max(-w[0], 0.0), max(w[1], 0.0), max(-w[1], 0.0)])


_rect_geom = rect_geom


def _geom_distance(g1, g2) -> float:
    return closest_points_verts(g1[2], g2[2], np.vstack([g1[0], g2[0]]))[0]


def _duals_at_geom(pose: np.ndarray, ev_geom, ob_geom):
    """Optimal (margin, lambda, mu, v) of the dual separation problem.

    The separating direction v comes from the exact closest pair (or from
    the best face normal when overlapping); lambda and mu are recovered
    from the active supporting faces, which maximizes the dual margin.
    """
    axes = np.vstack([ev_geom[0], ob_geom[0]])
    dist, p_ev, p_ob = closest_points_verts(ev_geom[2], ob_geom[2], axes)
    if dist > 0.0:
        v = (p_ob - p_ev) / dist
        margin = dist
    else:
        margin, v = penetration_axis_verts(ev_geom[2], ob_geom[2], axes)
    lam = _axis_decompose(ob_geom[0], -v)
    w = rotation(pose[2]).T @ v
    mu = _support_mu(w)
    return margin, lam, mu, v


def dual_distance(
    ev_pose: Pose2, obstacle: HalfspacePolytope, ev_shape: HalfspacePolytope
) -> tuple[float, np.ndarray, np.ndarray, bool]:
    """Maximize the dual separation margin over feasible multipliers.

    Solves the small conic program (linear objective, nonnegativity, a
    norm bound and a rotation-coupling equality) by a log-barrier Newton
    method; by strong duality the optimum equals the geometric distance
    for disjoint sets. Returns (distance, lambda, mu, separated).
    """
    d_mat, b_vec = obstacle.A, obstacle.b
    g_mat, g_vec = ev_shape.A, ev_shape.b
    rot = rotation(ev_pose.theta)
    pos = ev_pose.position

    hl, hw = _ev_extents(ev_shape)
    ev_geom = _rect_geom(ev_pose.as_array(), hl, hw)
    if closest_points_verts(ev_geom[2], obstacle.vertices(), np.vstack([ev_geom[0], obstacle.A]))[0] == 0.0:
        return 0.0, np.zeros(4), np.zeros(4), False

    # objective: maximize lam^T (D p - b) - mu^T g
    c_lam = d_mat @ pos - b_vec
    c_mu = -g_vec
    s_mat = d_mat @ d_mat.T  # lam^T S lam = ||D^T lam||^2
    a_eq = np.hstack([rot.T @ d_mat.T, g_mat.T])  # 2 x 8

    x = np.full(8, 0.1)  # D and G rows pair up, so A_eq x = 0 here
    tau = 1.0
    while True:
        for _ in range(40):
            lam, mu = x[:4], x[4:]
            soc = 1.0 - float(lam @ s_mat @ lam)
            grad_obj = -np.concatenate([c_lam, c_mu])
            grad_bar = np.concatenate([-1.0 / lam + 2.0 * (s_mat @ lam) / soc, -1.0 / mu])
            grad = grad_obj + grad_bar / tau
            h = np.zeros((8, 8))
            h[:4, :4] = (
                np.diag(1.0 / lam**2)
                + 2.0 * s_mat / soc
                + 4.0 * np.outer(s_mat @ lam, s_mat @ lam) / soc**2
            )
            h[4:, 4:] = np.diag(1.0 / mu**2)
            h /= tau
            kkt = np.zeros((10, 10))
            kkt[:8, :8] = h
            kkt[:8, 8:] = a_eq.T
            kkt[8:, :8] = a_eq
            rhs = np.concatenate([-grad, np.zeros(2)])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                break
            step = sol[:8]
            decrement = float(-grad @ step)
            if decrement / 2.0 <= 1e-18:
                break

            def value(xv: np.ndarray) -> float:
                lv, mv = xv[:4], xv[4:]
                if np.any(lv <= 0.0) or np.any(mv <= 0.0):
                    return math.inf
                sv = 1.0 - float(lv @ s_mat @ lv)
                if sv <= 0.0:
                    return math.inf
                obj = -(c_lam @ lv + c_mu @ mv)
                return obj + (-np.log(lv).sum() - np.log(mv).sum() - math.log(sv)) / tau

            base = value(x)
            t = 1.0
            for _ in range(50):
                cand = x + t * step
                if value(cand) <= base - 1e-4 * t * decrement:
                    x = cand
                    break
                t *= 0.5
            else:
                break
        if tau >= 1e9:
            break
        tau = min(tau * 25.0, 1e9)

    lam, mu = x[:4], x[4:]
    dist = float(c_lam @ lam + c_mu @ mu)
    return dist, lam, mu, True


def _ev_extents(ev_shape: HalfspacePolytope) -> tuple[float, float]:
    """Half extents of an origin-centered rectangle polytope."""
    return float(ev_shape.b[0]), float(ev_shape.b[2])


def _ev_polytope(pose: Pose2 | np.ndarray, hl: float, hw: float) -> HalfspacePolytope:
    arr = pose.as_array() if isinstance(pose, Pose2) else np.asarray(pose, dtype=float)
    return rect_to_polytope(OrientedRect(Pose2(arr[0], arr[1], arr[2]), hl, hw))


def ev_shape_polytope(cfg: PlanConfig) -> HalfspacePolytope:
    """Origin-centered ego footprint in halfspace form."""
    return rect_to_polytope(OrientedRect(Pose2(0.0, 0.0, 0.0), cfg.ev_half_length, cfg.ev_half_width))


# ---------------------------------------------------------------------------
# condensed QP machinery


def _rollout_matrices(
    lin_a: np.ndarray, lin_b: np.ndarray, lin_c: np.ndarray, s0: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Affine map states = S u + T for the stacked horizon."""
    h = lin_a.shape[0]
    s_mat = np.zeros((h + 1, 3, 2 * h))
    t_vec = np.zeros((h + 1, 3))
    t_vec[0] = s0
    for t in range(h):
        s_mat[t + 1] = lin_a[t] @ s_mat[t]
        s_mat[t + 1][:, 2 * t : 2 * t + 2] += lin_b[t]
        t_vec[t + 1] = lin_a[t] @ t_vec[t] + lin_c[t]
    return s_mat.reshape(h + 1, 3, 2 * h), t_vec


def _solve_qp_barrier(
    p_mat: np.ndarray,
    q_vec: np.ndarray,
    g_mat: np.ndarray,
    h_vec: np.ndarray,
    x0: np.ndarray,
    taus: tuple,
    newton_cap: int,
) -> np.ndarray:
    """Minimize 0.5 x^T P x + q^T x subject to G x >= h from a strictly
    feasible start, by a primal log-barrier method."""
    x = x0.copy()
    for tau in taus:
        for _ in range(newton_cap):
            slack = g_mat @ x - h_vec
            grad = p_mat @ x + q_vec - (g_mat.T @ (1.0 / slack)) / tau
            hess = p_mat + (g_mat.T * (1.0 / slack**2)) @ g_mat / tau
            try:
                step = np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError:
                step = -grad
            decrement = float(-grad @ step)
            if decrement / 2.0 <= 1e-12:
                break
            g_step = g_mat @ step
            neg = g_step < 0.0
            alpha_max = 1.0
            if neg.any():
                alpha_max = min(1.0, 0.99 * float((slack[neg] / -g_step[neg]).min()))

            def value(xv: np.ndarray) -> float:
                s = g_mat @ xv - h_vec
                if np.any(s <= 0.0):
                    return math.inf
                return float(0.5 * xv @ p_mat @ xv + q_vec @ xv - np.log(s).sum() / tau)

            base = value(x)
            t = alpha_max
            accepted = False
            for _ in range(40):
                cand = x + t * step
                if value(cand) <= base - 1e-4 * t * decrement:
                    x = cand
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                break
    return x


def _interior_controls(
    u: np.ndarray, dyn: DynamicsModel, u_prev: np.ndarray | None, margin: float = 1e-6
) -> np.ndarray:
    """Project controls to the strict interior of box and delta bounds."""
    u = u.copy()
    lo = np.array(dyn.u_min) + margin
    hi = np.array(dyn.u_max) - margin
    a_lo = np.array(dyn.a_min) + margin
    a_hi = np.array(dyn.a_max) - margin
    prev = None if u_prev is None else np.asarray(u_prev, dtype=float)
    for t in range(u.shape[0]):
        lo_t, hi_t = lo.copy(), hi.copy()
        if prev is not None:
            lo_t = np.maximum(lo_t, prev + a_lo)
            hi_t = np.minimum(hi_t, prev + a_hi)
        u[t] = np.clip(u[t], lo_t, hi_t)
        prev = u[t]
    return u


# ---------------------------------------------------------------------------
# the alternating planner


def _obstacle_rects(obstacles) -> list[OrientedRect]:
    rects = []
    for ob in obstacles:
        rects.append(ob.rect if isinstance(ob, InflatedObstacle) else ob)
    return rects


def plan(
    reference: ReferencePath,
    obstacles,
    dynamics: DynamicsModel,
    d_safe: float,
    config: PlanConfig | None = None,
    initial_state: np.ndarray | None = None,
    u_prev: np.ndarray | None = None,
    warm_controls: np.ndarray | None = None,
) -> PlanResult:
    """Plan a horizon of controls tracking the reference around obstacles.

    Alternates between (i) exact per-(obstacle, step) dual multipliers at
    the current trajectory and (ii) a condensed control-space QP with the
    dual clearance rows linearized about that trajectory, accepting steps
    only when a tracking + clearance-violation merit does not increase
    (trust region shrinks otherwise).
    """
    cfg = config or PlanConfig()
    ref = reference.as_array()
    h = len(reference.waypoints) - 1
    s0 = np.asarray(initial_state, dtype=float) if initial_state is not None else ref[0].copy()

    rects = _obstacle_rects(obstacles)
    ob_geoms = [
        _rect_geom(
            np.array([r.center.x, r.center.y, r.center.theta]), r.half_length, r.half_width
        )
        for r in rects
    ]
    ov_centers = np.array([r.center.position for r in rects]).reshape(-1, 2)
    ov_circum = np.array([math.hypot(r.half_length, r.half_width) for r in rects])
    ev_circum = math.hypot(cfg.ev_half_length, cfg.ev_half_width)

    # contract check on the start pose
    if ob_geoms:
        start_geom = _rect_geom(s0, cfg.ev_half_length, cfg.ev_half_width)
        for geom in ob_geoms:
            if _geom_distance(start_geom, geom) == 0.0 and not cfg.relax_infeasible_start:
                raise InfeasibleStartError("initial state overlaps a planning obstacle")

    # reference-derived controls: segment speeds along the line, zero steer
    if warm_controls is not None:
        u = np.asarray(warm_controls, dtype=float).reshape(h, 2).copy()
    else:
        u = np.zeros((h, 2))
        for t in range(h):
            u[t, 0] = float(np.linalg.norm(ref[t + 1, :2] - ref[t, :2])) / dynamics.dt
    u = _interior_controls(u, dynamics, u_prev)

    n_u = 2 * h
    # adaptive trust region, capped at the configured box
    trust_pos = 0.4 * cfg.trust_pos
    trust_theta = 0.4 * cfg.trust_theta

    def rollout_nl(uv: np.ndarray) -> np.ndarray:
        out = np.zeros((h + 1, 3))
        out[0] = s0
        for t in range(h):
            out[t + 1] = nonlinear_step(out[t], uv[t], dynamics)
        return out

    def merit(uv: np.ndarray, kept: set[int]) -> float:
        states = rollout_nl(uv)
        track = float(((states - ref) ** 2).sum())
        viol = 0.0
        for k in kept:
            margins = batch_signed_clearance(
                states[1:], cfg.ev_half_length, cfg.ev_half_width, ob_geoms[k][0], ob_geoms[k][2]
            )
            viol += float(np.maximum(d_safe - margins, 0.0).sum())
        return track + cfg.slack_weight * viol

    lin_a = np.zeros((h, 3, 3))
    lin_b = np.zeros((h, 3, 2))
    lin_c = np.zeros((h, 3))
    qp_states = None
    final_lin = None
    merit_history = []
    converged_traj = False
    iterations = 0
    last_merit = None

    for it in range(cfg.max_iters):
        iterations = it + 1
        sbar = rollout_nl(u)
        for t in range(h):
            lin_a[t], lin_b[t], lin_c[t] = linearize_dynamics(sbar[t], u[t], dynamics)
        s_mat, t_vec = _rollout_matrices(lin_a, lin_b, lin_c, s0)

        # dual step: exact multipliers at the current trajectory. Each kept
        # pair carries (k, t, a_lam, lam_b, w0, dw) where w(theta) is the
        # ego-frame support direction, affine in theta after linearizing the
        # rotation: w(theta) ~= w0 + dw (theta - theta_bar).
        kept_rows = []
        kept_obs: set[int] = set()
        for k, geom in enumerate(ob_geoms):
            reach = d_safe + cfg.prune_margin + ov_circum[k] + ev_circum
            near = np.nonzero(
                np.linalg.norm(sbar[1:, :2] - ov_centers[k], axis=1) <= reach
            )[0]
            for t0 in near:
                t = int(t0) + 1
                ev_geom = _rect_geom(sbar[t], cfg.ev_half_length, cfg.ev_half_width)
                margin, lam, mu, v = _duals_at_geom(sbar[t], ev_geom, geom)
                kept_obs.add(k)
                a_lam = geom[0].T @ lam  # = -v
                w0 = -rotation(sbar[t, 2]).T @ a_lam
                dw = np.array([w0[1], -w0[0]])
                kept_rows.append((k, t, a_lam, float(lam @ geom[1]), w0, dw, sbar[t, 2]))

        n_s = len(kept_rows)
        # epigraph variables are needed only where a support component can
        # change sign within the heading trust box; elsewhere the support
        # value is affine in theta and folds into the margin row
        piece_sets = []
        z_index = {}
        for i, (_, _, _, _, w0, dw, _) in enumerate(kept_rows):
            s1 = (1.0,) if w0[0] > abs(dw[0]) * trust_theta + 1e-12 else (
                (-1.0,) if w0[0] < -abs(dw[0]) * trust_theta - 1e-12 else (1.0, -1.0)
            )
            s2 = (1.0,) if w0[1] > abs(dw[1]) * trust_theta + 1e-12 else (
                (-1.0,) if w0[1] < -abs(dw[1]) * trust_theta - 1e-12 else (1.0, -1.0)
            )
            piece_sets.append((s1, s2))
            if len(s1) > 1 or len(s2) > 1:
                z_index[i] = n_u + n_s + len(z_index)
        n_z = len(z_index)
        # variables: controls, clearance slacks, epigraph values
        n_x = n_u + n_s + n_z

        # objective: tracking over the stacked states plus linear slack cost
        s_flat = s_mat.reshape(3 * (h + 1), n_u)
        resid0 = (t_vec - ref).reshape(-1)
        p_mat = np.zeros((n_x, n_x))
        p_mat[:n_u, :n_u] = 2.0 * (s_flat.T @ s_flat) + cfg.control_reg * np.eye(n_u)
        q_vec = np.zeros(n_x)
        q_vec[n_u : n_u + n_s] = cfg.slack_weight
        q_vec[:n_u] = 2.0 * (s_flat.T @ resid0)

        rows, rhs = [], []

        def add_row(coeff_u: np.ndarray, bound: float, extra: dict | None = None):
            row = np.zeros(n_x)
            row[:n_u] = coeff_u
            if extra:
                for idx, val in extra.items():
                    row[idx] = val
            rows.append(row)
            rhs.append(bound)

        eye_u = np.eye(n_u)
        for t in range(h):
            for j in range(2):
                add_row(eye_u[2 * t + j], dynamics.u_min[j])
                add_row(-eye_u[2 * t + j], -dynamics.u_max[j])
        for t in range(h - 1):
            for j in range(2):
                diff = eye_u[2 * (t + 1) + j] - eye_u[2 * t + j]
                add_row(diff, dynamics.a_min[j])
                add_row(-diff, -dynamics.a_max[j])
        if u_prev is not None:
            for j in range(2):
                add_row(eye_u[j], float(u_prev[j]) + dynamics.a_min[j])
                add_row(-eye_u[j], -(float(u_prev[j]) + dynamics.a_max[j]))
        box = np.array([trust_pos, trust_pos, trust_theta])
        for t in range(1, h + 1):
            for j in range(3):
                add_row(s_mat[t, j], sbar[t, j] - box[j] - t_vec[t, j])
                add_row(-s_mat[t, j], -(sbar[t, j] + box[j] - t_vec[t, j]))
        hl, hw = cfg.ev_half_length, cfg.ev_half_width
        margin_row_ids = []
        for i, (k, t, a_lam, lam_b, w0, dw, th_bar) in enumerate(kept_rows):
            i_xi = n_u + i
            coeff_u = a_lam @ s_mat[t, :2]
            const = float(a_lam @ t_vec[t, :2])
            theta_row = s_mat[t, 2]
            theta_const = float(t_vec[t, 2])
            s1_set, s2_set = piece_sets[i]
            margin_row_ids.append(len(rows))
            if i not in z_index:
                # affine support: margin row carries the theta slope directly
                s1, s2 = s1_set[0], s2_set[0]
                slope = s1 * hl * dw[0] + s2 * hw * dw[1]
                inter = s1 * hl * (w0[0] - dw[0] * th_bar) + s2 * hw * (w0[1] - dw[1] * th_bar)
                add_row(
                    coeff_u - slope * theta_row,
                    d_safe + lam_b + inter - const + slope * theta_const,
                    {i_xi: 1.0},
                )
            else:
                i_z = z_index[i]
                # clearance: lam^T D p_t - lam^T b - z_i + xi_i >= d_safe
                add_row(coeff_u, d_safe + lam_b - const, {i_xi: 1.0, i_z: -1.0})
                # support epigraph: z_i >= s1 hl w1(theta) + s2 hw w2(theta)
                for s1 in s1_set:
                    for s2 in s2_set:
                        slope = s1 * hl * dw[0] + s2 * hw * dw[1]
                        inter = s1 * hl * (w0[0] - dw[0] * th_bar) + s2 * hw * (
                            w0[1] - dw[1] * th_bar
                        )
                        add_row(-slope * theta_row, inter + slope * theta_const, {i_z: 1.0})
            add_row(np.zeros(n_u), 0.0, {i_xi: 1.0})

        g_mat = np.array(rows) if rows else np.zeros((0, n_x))
        h_vec = np.array(rhs)

        # exact fast path: unconstrained tracking optimum, kept only if it
        # satisfies every row strictly (typical when obstacles are far)
        u_new = None
        x_new = None
        try:
            u_free = np.linalg.solve(
                p_mat[:n_u, :n_u], -q_vec[:n_u]
            )
        except np.linalg.LinAlgError:
            u_free = None
        if u_free is not None:
            x_free = np.zeros(n_x)
            x_free[:n_u] = u_free
            if np.all(g_mat @ x_free - h_vec >= 1e-9):
                u_new = u_free.reshape(h, 2)
                x_new = x_free

        if u_new is None:
            x0 = np.zeros(n_x)
            x0[:n_u] = u.reshape(-1)
            for i, (_, _, _, _, w0, _, _) in enumerate(kept_rows):
                if i in z_index:
                    x0[z_index[i]] = hl * abs(w0[0]) + hw * abs(w0[1]) + 1.0
            if n_s:
                slack = g_mat[margin_row_ids] @ x0 - h_vec[margin_row_ids]
                x0[n_u : n_u + n_s] = np.maximum(-slack, 0.0) + 1.0
            x_new = _solve_qp_barrier(
                p_mat, q_vec, g_mat, h_vec, x0, cfg.barrier_taus, cfg.newton_cap
            )
            u_new = x_new[:n_u].reshape(h, 2)

        m_old = merit(u, kept_obs) if last_merit is None else last_merit
        m_new = merit(u_new, kept_obs)
        accept = m_new <= m_old + 1e-9 * max(1.0, abs(m_old))
        merit_history.append((m_old, m_new, accept))
        # trust-region ratio: actual merit change vs the QP model's prediction
        track_const = float(resid0 @ resid0)
        qp_obj = float(0.5 * x_new @ p_mat @ x_new + q_vec @ x_new) + track_const
        pred_dec = max(m_old - qp_obj, 1e-12)
        ratio = (m_old - m_new) / pred_dec
        if accept:
            delta = float(np.abs(rollout_nl(u_new) - sbar).max())
            u = u_new
            last_merit = None  # kept set may change with the new trajectory
            qp_states = (s_flat @ x_new[:n_u]).reshape(h + 1, 3) + t_vec
            final_lin = (lin_a.copy(), lin_b.copy(), lin_c.copy())
            if ratio > 0.7:
                trust_pos = min(trust_pos * 1.6, cfg.trust_pos)
                trust_theta = min(trust_theta * 1.6, cfg.trust_theta)
            if delta < cfg.tol_traj:
                converged_traj = True
                break
        else:
            last_merit = m_old
            trust_pos *= 0.4
            trust_theta *= 0.4
            if trust_pos < 1e-4:
                break

    if qp_states is None:
        # no accepted step: fall back to the initial controls
        sbar = rollout_nl(u)
        for t in range(h):
            lin_a[t], lin_b[t], lin_c[t] = linearize_dynamics(sbar[t], u[t], dynamics)
        s_mat, t_vec = _rollout_matrices(lin_a, lin_b, lin_c, s0)
        qp_states = (s_mat.reshape(h + 1, 3, n_u) @ u.reshape(-1)).reshape(h + 1, 3) + t_vec
        final_lin = (lin_a.copy(), lin_b.copy(), lin_c.copy())
    lin_a, lin_b, lin_c = final_lin

    # final dual refresh at the returned states
    k_total = len(ob_geoms)
    duals = DualVars(lam=np.zeros((k_total, h + 1, 4)), mu=np.zeros((k_total, h + 1, 4)))
    min_clear = math.inf
    for k, geom in enumerate(ob_geoms):
        margins = batch_signed_clearance(
            qp_states, cfg.ev_half_length, cfg.ev_half_width, geom[0], geom[2]
        )
        min_clear = min(min_clear, float(margins[1:].min()))
        near = np.nonzero(
            np.linalg.norm(qp_states[:, :2] - ov_centers[k], axis=1)
            <= d_safe + cfg.prune_margin + ov_circum[k] + ev_circum
        )[0]
        for t in near:
            ev_geom = _rect_geom(qp_states[t], cfg.ev_half_length, cfg.ev_half_width)
            margin, lam, mu, _ = _duals_at_geom(qp_states[t], ev_geom, geom)
            duals.lam[k, t] = lam
            duals.mu[k, t] = mu
    if not ob_geoms:
        min_clear = math.inf

    tracking_cost = float(((qp_states - ref) ** 2).sum())
    converged = converged_traj and (not ob_geoms or min_clear >= d_safe - 1e-3)
    return PlanResult(
        states=qp_states,
        controls=u.copy(),
        duals=duals,
        tracking_cost=tracking_cost,
        min_clearance=float(min_clear),
        iterations=iterations,
        converged=converged,
        lin_a=lin_a,
        lin_b=lin_b,
        lin_c=lin_c,
        merit_history=merit_history,
    )


def plan_rda_baseline(
    reference: ReferencePath,
    estimated_rects: list[OrientedRect],
    dynamics: DynamicsModel,
    d_safe: float,
    config: PlanConfig | None = None,
    **kwargs,
) -> PlanResult:
    """Uncertainty-blind variant: plans against the nominal rectangles at the
    estimated centers, with no confidence inflation."""
    return plan(reference, estimated_rects, dynamics, d_safe, config, **kwargs)
