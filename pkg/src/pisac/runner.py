"""Closed-loop receding-horizon simulation.

Each control step draws fresh position estimates from the sensing model,
re-allocates beam powers by the configured method, inflates the obstacle
footprints (except for the uncertainty-blind baseline), plans, and applies
the first control through the exact bicycle dynamics. Collisions are
scored against ground-truth geometry only.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from .geometry import (
    OrientedRect,
    Pose2,
    dca_decompose,
    rect_geom,
    signed_clearance_geom,
)
from .isac import (
    RsuConfig,
    crb_matrix,
    effective_comm_gain,
    mle_sample_batch,
    polar_from_cartesian,
    power_budget_from_snr,
)
from .planner import (
    DynamicsModel,
    PlanConfig,
    nonlinear_step,
    plan,
    sample_reference,
)
from .power_alloc import (
    InfeasiblePaError,
    PaProblem,
    solve_crb_min,
    solve_mmf,
    solve_pisac,
    solve_srm,
)
from .uncertainty import inflate_obstacle

METHODS = ("pisac", "isac", "srm", "mmf", "rda")
FAILURE_REASONS = ("collision", "timeout", "stuck", "planner_failure")


@dataclass
class ObstacleSpec:
    pose: Pose2
    length: float = 4.694
    width: float = 1.849
    velocity: tuple[float, float] | None = None

    def rect_at(self, t: float) -> OrientedRect:
        if self.velocity is None:
            center = self.pose
        else:
            center = Pose2(
                self.pose.x + self.velocity[0] * t,
                self.pose.y + self.velocity[1] * t,
                self.pose.theta,
            )
        return OrientedRect(center, self.length / 2.0, self.width / 2.0)


@dataclass
class ScenarioConfig:
    rsu: RsuConfig
    start: Pose2
    goal: Pose2
    obstacles: list[ObstacleSpec]
    ev_length: float = 4.694
    ev_width: float = 1.849
    d_safe: float = 0.15
    risk_eps: float = 0.05
    rho: float | None = None  # None -> scale-normalized default per step
    r0_rate: float | None = None  # None -> 0.8 x equal-split rate per step
    snr_db: float = 38.0
    horizon: int = 20
    dt: float = 0.1
    ref_speed: float = 6.0
    method: str = "pisac"
    seed: int = 0
    max_sim_time: float = 40.0
    goal_tol: float = 1.5
    stuck_window: float = 5.0
    stuck_displacement: float = 0.5
    u_min: tuple[float, float] = (0.0, -0.6)
    u_max: tuple[float, float] = (10.0, 0.6)
    a_min: tuple[float, float] = (-1.0, -0.3)
    a_max: tuple[float, float] = (1.0, 0.3)
    wheelbase: float = 2.875
    pa_tau_final: float = 1e5
    pa_hinge_eps: float = 1e-4
    plan_max_iters: int = 100

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.obstacles:
            raise ValueError("at least one obstacle is required")
        if self.max_sim_time <= 0.0:
            raise ValueError("max_sim_time must be positive")

    def dynamics(self) -> DynamicsModel:
        return DynamicsModel(
            wheelbase=self.wheelbase,
            dt=self.dt,
            u_min=self.u_min,
            u_max=self.u_max,
            a_min=self.a_min,
            a_max=self.a_max,
        )

    def plan_config(self) -> PlanConfig:
        return PlanConfig(
            max_iters=self.plan_max_iters,
            relax_infeasible_start=True,
            ev_half_length=self.ev_length / 2.0,
            ev_half_width=self.ev_width / 2.0,
        )


@dataclass
class StepLog:
    step: int
    sim_time: float
    ev_pose: list
    est_positions: list
    crb_sums: list
    powers: list
    inflation_extents: list
    plan_cost: float
    plan_min_clearance: float
    plan_converged: bool
    plan_iterations: int
    replay_error: float
    bound_violation: float
    control: list
    sum_rate: float
    crb_trace: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, separators=(",", ":"))


@dataclass
class Metrics:
    avg_acc: float
    max_acc: float
    pass_time: float
    traj_length: float
    success: bool
    failure_reason: str | None
    sum_rate: float
    crb_trace: float


def _true_rects(config: ScenarioConfig, t: float) -> list[OrientedRect]:
    return [ob.rect_at(t) for ob in config.obstacles]


def _allocate(config, method, problem, p_warm):
    if method in ("pisac", "rda"):
        if method == "rda":
            # uncertainty-blind baseline: no planning-aware allocation either
            return problem.equal_split(), float("nan")
        sol = solve_pisac(
            problem, p0=p_warm, tau_final=config.pa_tau_final, hinge_eps=config.pa_hinge_eps
        )
    elif method == "isac":
        sol = solve_crb_min(problem, p0=p_warm, tau_final=config.pa_tau_final)
    elif method == "srm":
        sol = solve_srm(problem)
    elif method == "mmf":
        sol = solve_mmf(problem)
    else:
        raise ValueError(method)
    return sol.powers, sol.kkt_residual


def run_episode(config: ScenarioConfig) -> tuple[Metrics, list[StepLog]]:
    """Simulate one closed-loop episode; deterministic given config.seed."""
    rng = np.random.default_rng(config.seed)
    dyn = config.dynamics()
    plan_cfg = config.plan_config()
    k = len(config.obstacles)

    ev_state = config.start.as_array()
    u_applied = np.array([0.0, 0.0])
    powers = np.full(k, power_budget_from_snr(config.snr_db, config.rsu) / k)
    p_sum = power_budget_from_snr(config.snr_db, config.rsu)
    warm_controls = None

    logs: list[StepLog] = []
    positions = [ev_state[:2].copy()]
    speeds = [0.0]
    failure: str | None = None
    max_steps = int(round(config.max_sim_time / config.dt))
    stuck_steps = int(round(config.stuck_window / config.dt))

    for step in range(max_steps):
        sim_time = step * config.dt
        true_rects = _true_rects(config, sim_time)

        # sense: one fresh estimate per obstacle at last-step powers
        est_positions = np.zeros((k, 2))
        crbs = []
        gains = np.zeros(k)
        for i, rect in enumerate(true_rects):
            polar_true = polar_from_cartesian(rect.center.position, config.rsu)
            est_positions[i] = mle_sample_batch(polar_true, float(powers[i]), config.rsu, 1, rng)[0]
            polar_est = polar_from_cartesian(est_positions[i], config.rsu)
            crbs.append(crb_matrix(polar_est, config.rsu))
            gains[i] = effective_comm_gain(polar_est, config.rsu)

        est_rects = [
            OrientedRect(
                Pose2(est_positions[i][0], est_positions[i][1], true_rects[i].center.theta),
                config.obstacles[i].length / 2.0,
                config.obstacles[i].width / 2.0,
            )
            for i in range(k)
        ]

        # reference from the current state toward the goal
        try:
            reference = sample_reference(
                Pose2(*ev_state), config.goal, config.ref_speed, dyn, config.horizon
            )
        except ValueError:
            failure = "planner_failure"
            break

        # allocate power by the configured method
        crb_sums = np.array([c.c11 + c.c22 for c in crbs])
        rho = config.rho
        if rho is None:
            rho = 0.1 * config.d_safe * p_sum / float(crb_sums.sum())
        r0 = config.r0_rate
        try:
            if r0 is None:
                probe = PaProblem(
                    crbs=crbs,
                    ov_discs=[dca_decompose(r) for r in est_rects],
                    comm_gains=gains,
                    ev_discs=[
                        dca_decompose(
                            OrientedRect(w, config.ev_length / 2.0, config.ev_width / 2.0)
                        )
                        for w in reference.waypoints
                    ],
                    d_safe=config.d_safe,
                    risk_eps=config.risk_eps,
                    rho=rho,
                    p_sum=p_sum,
                    r0_rate=0.0,
                )
                r0 = 0.8 * probe.rate(probe.equal_split())
                problem = replace_r0(probe, r0)
            else:
                problem = PaProblem(
                    crbs=crbs,
                    ov_discs=[dca_decompose(r) for r in est_rects],
                    comm_gains=gains,
                    ev_discs=[
                        dca_decompose(
                            OrientedRect(w, config.ev_length / 2.0, config.ev_width / 2.0)
                        )
                        for w in reference.waypoints
                    ],
                    d_safe=config.d_safe,
                    risk_eps=config.risk_eps,
                    rho=rho,
                    p_sum=p_sum,
                    r0_rate=r0,
                )
            powers, _ = _allocate(config, config.method, problem, powers)
        except InfeasiblePaError:
            failure = "planner_failure"
            break

        # inflate (skipped for the uncertainty-blind baseline)
        if config.method == "rda":
            planning_obstacles = est_rects
        else:
            planning_obstacles = [
                inflate_obstacle(est_rects[i], crbs[i], float(powers[i]), config.risk_eps)
                for i in range(k)
            ]

        try:
            result = plan(
                reference,
                planning_obstacles,
                dyn,
                config.d_safe,
                plan_cfg,
                initial_state=ev_state,
                u_prev=u_applied,
                warm_controls=warm_controls,
            )
        except Exception:
            failure = "planner_failure"
            break

        u0 = result.controls[0].copy()

        # bookkeeping for the acceptance checks
        replay = result.states[0].copy()
        replay_err = 0.0
        for t in range(result.controls.shape[0]):
            replay = result.lin_a[t] @ replay + result.lin_b[t] @ result.controls[t] + result.lin_c[t]
            replay_err = max(replay_err, float(np.abs(replay - result.states[t + 1]).max()))
        lo = np.array(dyn.u_min)
        hi = np.array(dyn.u_max)
        bound_viol = max(
            float(np.maximum(lo - result.controls, 0.0).max()),
            float(np.maximum(result.controls - hi, 0.0).max()),
        )
        deltas = np.diff(result.controls, axis=0)
        if deltas.size:
            bound_viol = max(
                bound_viol,
                float(np.maximum(np.array(dyn.a_min) - deltas, 0.0).max()),
                float(np.maximum(deltas - np.array(dyn.a_max), 0.0).max()),
            )

        achieved_rate = problem.rate(powers)
        crb_trace = float((crb_sums / powers).sum())
        if config.method == "rda":
            infl_extents = [[r.half_length, r.half_width] for r in est_rects]
        else:
            infl_extents = [
                [o.rect.half_length, o.rect.half_width] for o in planning_obstacles
            ]
        logs.append(
            StepLog(
                step=step,
                sim_time=round(sim_time, 9),
                ev_pose=[float(v) for v in ev_state],
                est_positions=[[float(a) for a in p] for p in est_positions],
                crb_sums=[float(v) for v in crb_sums],
                powers=[float(v) for v in powers],
                inflation_extents=[[float(a) for a in e] for e in infl_extents],
                plan_cost=float(result.tracking_cost),
                plan_min_clearance=float(result.min_clearance),
                plan_converged=bool(result.converged),
                plan_iterations=int(result.iterations),
                replay_error=float(replay_err),
                bound_violation=float(bound_viol),
                control=[float(v) for v in u0],
                sum_rate=float(achieved_rate),
                crb_trace=crb_trace,
            )
        )

        # apply the first control through the exact dynamics
        ev_state = nonlinear_step(ev_state, u0, dyn)
        u_applied = u0
        warm_controls = np.vstack([result.controls[1:], result.controls[-1]])
        positions.append(ev_state[:2].copy())
        speeds.append(float(u0[0]))

        # ground-truth collision check
        ev_geom = rect_geom(ev_state, config.ev_length / 2.0, config.ev_width / 2.0)
        collided = False
        for rect in _true_rects(config, sim_time + config.dt):
            ob_geom = rect_geom(
                np.array([rect.center.x, rect.center.y, rect.center.theta]),
                rect.half_length,
                rect.half_width,
            )
            if signed_clearance_geom(ev_geom, ob_geom) <= 0.0:
                collided = True
                break
        if collided:
            failure = "collision"
            break

        if np.linalg.norm(ev_state[:2] - config.goal.position) <= config.goal_tol:
            break

        if len(positions) > stuck_steps:
            moved = np.linalg.norm(positions[-1] - positions[-1 - stuck_steps])
            if moved < config.stuck_displacement:
                failure = "stuck"
                break
    else:
        failure = "timeout"

    metrics = compute_metrics(logs, config, failure)
    return metrics, logs


def replace_r0(problem: PaProblem, r0: float) -> PaProblem:
    """Rebuild a PA problem with a different sum-rate threshold."""
    return PaProblem(
        crbs=problem.crbs,
        ov_discs=problem.ov_discs,
        comm_gains=problem.comm_gains,
        ev_discs=problem.ev_discs,
        d_safe=problem.d_safe,
        risk_eps=problem.risk_eps,
        rho=problem.rho,
        p_sum=problem.p_sum,
        r0_rate=r0,
        p_min=problem.p_min,
    )


def compute_metrics(
    logs: list[StepLog], config: ScenarioConfig, failure: str | None
) -> Metrics:
    """Aggregate an episode's logs into the summary row."""
    if not logs:
        return Metrics(
            avg_acc=float("nan"),
            max_acc=float("nan"),
            pass_time=float("nan"),
            traj_length=0.0,
            success=False,
            failure_reason=failure or "planner_failure",
            sum_rate=float("nan"),
            crb_trace=float("nan"),
        )
    positions = np.array([log.ev_pose[:2] for log in logs])
    speeds = np.concatenate([[0.0], [log.control[0] for log in logs]])
    # trajectory length includes the final applied step
    last = nonlinear_step(
        np.array(logs[-1].ev_pose), np.array(logs[-1].control), config.dynamics()
    )
    pts = np.vstack([positions, last[:2]])
    traj_length = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
    accs = np.abs(np.diff(speeds)) / config.dt
    success = failure is None
    return Metrics(
        avg_acc=float(accs.mean()) if accs.size else 0.0,
        max_acc=float(accs.max()) if accs.size else 0.0,
        pass_time=(len(logs) * config.dt) if success else float("nan"),
        traj_length=traj_length,
        success=success,
        failure_reason=failure,
        sum_rate=float(np.mean([log.sum_rate for log in logs])),
        crb_trace=float(np.mean([log.crb_trace for log in logs])),
    )


CSV_COLUMNS = [
    "method",
    "seed",
    "snr_db",
    "avg_acc",
    "max_acc",
    "pass_time",
    "traj_length",
    "success",
    "failure_reason",
    "sum_rate",
    "crb_trace",
]


def metrics_row(method: str, seed: int, snr_db: float, metrics: Metrics) -> dict:
    return {
        "method": method,
        "seed": seed,
        "snr_db": snr_db,
        "avg_acc": metrics.avg_acc,
        "max_acc": metrics.max_acc,
        "pass_time": metrics.pass_time,
        "traj_length": metrics.traj_length,
        "success": metrics.success,
        "failure_reason": metrics.failure_reason or "",
        "sum_rate": metrics.sum_rate,
        "crb_trace": metrics.crb_trace,
    }


def run_sweep(
    config: ScenarioConfig,
    methods: list[str],
    seeds: list[int],
    snr_list: list[float],
    log_sink=None,
) -> list[dict]:
    """Cross product of episodes; individual failures are recorded, never raised."""
    rows = []
    for snr in snr_list:
        for method in methods:
            for seed in seeds:
                episode_cfg = replace(config, method=method, seed=seed, snr_db=snr)
                metrics, logs = run_episode(episode_cfg)
                rows.append(metrics_row(method, seed, snr, metrics))
                if log_sink is not None:
                    log_sink(method, seed, snr, logs)
    return rows


def aggregate_rows(rows: list[dict]) -> dict:
    """Per (method, snr) means of the sweep columns plus success fraction."""
    out: dict = {}
    for row in rows:
        key = (row["method"], row["snr_db"])
        out.setdefault(key, []).append(row)
    agg = {}
    for key, group in out.items():
        succ = [r for r in group if r["success"]]
        agg[key] = {
            "episodes": len(group),
            "success_rate": len(succ) / len(group),
            "pass_time": float(np.mean([r["pass_time"] for r in succ])) if succ else float("nan"),
            "traj_length": (
                float(np.mean([r["traj_length"] for r in succ])) if succ else float("nan")
            ),
            "avg_acc": float(np.mean([r["avg_acc"] for r in succ])) if succ else float("nan"),
            "max_acc": float(np.mean([r["max_acc"] for r in succ])) if succ else float("nan"),
            "sum_rate": float(np.nanmean([r["sum_rate"] for r in group])),
            "crb_trace": float(np.nanmean([r["crb_trace"] for r in group])),
        }
    return agg


def write_metrics_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("avg_acc", "max_acc", "pass_time", "traj_length", "sum_rate", "crb_trace"):
                out[key] = repr(float(out[key]))
            out["success"] = "true" if out["success"] else "false"
            writer.writerow(out)


def write_episode_jsonl(logs: list[StepLog], path) -> None:
    with open(path, "w") as fh:
        for log in logs:
            fh.write(log.to_json())
            fh.write("\n")
