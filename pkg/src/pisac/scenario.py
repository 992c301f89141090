"""Scenario configuration: the shipped default and TOML/JSON file loading."""
from __future__ import annotations

import json
import math
from pathlib import Path

from .geometry import Pose2
from .isac import RsuConfig
from .runner import ObstacleSpec, ScenarioConfig

try:
    import tomllib  # Python 3.11+
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib


def default_scenario() -> ScenarioConfig:
    """Urban gap scenario: a parked row of cars across the road with one
    navigable opening near the reference line, plus off-path vehicles that
    attract power under the conventional allocation rules.

    Vehicle sizes, start/goal, RSU position, antenna counts, and the link
    budget constants follow the reference experiment; the exact parking
    pattern is repo-authored.
    """
    heading = math.pi / 2
    obstacles = [
        ObstacleSpec(pose=Pose2(403.0, 42.0, heading)),   # near the RSU, off path
        ObstacleSpec(pose=Pose2(400.3, 57.0, heading)),   # wall, west end
        ObstacleSpec(pose=Pose2(403.5, 57.0, heading)),
        ObstacleSpec(pose=Pose2(406.7, 57.0, heading)),   # west gap neighbor
        ObstacleSpec(pose=Pose2(412.05, 57.0, heading)),  # east gap neighbor
        ObstacleSpec(pose=Pose2(415.25, 57.0, heading)),  # wall, east end
        ObstacleSpec(pose=Pose2(414.0, 90.0, heading)),   # far north, off path
    ]
    return ScenarioConfig(
        rsu=RsuConfig(position=(380.0, 38.5)),
        start=Pose2(409.2, 28.0, heading),
        goal=Pose2(409.2, 113.0, heading),
        obstacles=obstacles,
    )


def _build_pose(values) -> Pose2:
    vals = list(values)
    if len(vals) == 2:
        vals.append(0.0)
    return Pose2(*[float(v) for v in vals])


def scenario_from_dict(data: dict) -> ScenarioConfig:
    base = default_scenario()

    rsu_data = data.get("rsu", {})
    rsu_kwargs = dict(position=base.rsu.position)
    for key in (
        "position",
        "n_tx",
        "n_rx",
        "sigma_r2",
        "sigma_c2",
        "filter_gain",
        "a1",
        "a2",
        "alpha_ref",
        "carrier_freq_hz",
        "lightspeed",
    ):
        if key in rsu_data:
            rsu_kwargs[key] = rsu_data[key]
    if "xi" in rsu_data:
        xi = rsu_data["xi"]
        rsu_kwargs["xi"] = complex(xi[0], xi[1]) if isinstance(xi, (list, tuple)) else complex(xi)
    rsu = RsuConfig(**rsu_kwargs)

    ego = data.get("ego", {})
    start = _build_pose(ego["start"]) if "start" in ego else base.start
    goal = _build_pose(ego["goal"]) if "goal" in ego else base.goal

    if "obstacles" in data:
        obstacles = []
        for ob in data["obstacles"]:
            obstacles.append(
                ObstacleSpec(
                    pose=_build_pose(ob["pose"]),
                    length=float(ob.get("length", 4.694)),
                    width=float(ob.get("width", 1.849)),
                    velocity=tuple(ob["velocity"]) if ob.get("velocity") else None,
                )
            )
    else:
        obstacles = base.obstacles

    planner = data.get("planner", {})
    isac = data.get("isac", {})
    sim = data.get("sim", {})
    solver = data.get("solver", {})

    kwargs = dict(
        rsu=rsu,
        start=start,
        goal=goal,
        obstacles=obstacles,
        ev_length=float(ego.get("length", base.ev_length)),
        ev_width=float(ego.get("width", base.ev_width)),
        ref_speed=float(ego.get("ref_speed", base.ref_speed)),
        d_safe=float(planner.get("d_safe", base.d_safe)),
        horizon=int(planner.get("horizon", base.horizon)),
        dt=float(planner.get("dt", base.dt)),
        risk_eps=float(isac.get("risk_eps", base.risk_eps)),
        snr_db=float(isac.get("snr_db", base.snr_db)),
        method=str(sim.get("method", base.method)),
        seed=int(sim.get("seed", base.seed)),
        max_sim_time=float(sim.get("max_sim_time", base.max_sim_time)),
        goal_tol=float(sim.get("goal_tol", base.goal_tol)),
        plan_max_iters=int(solver.get("plan_max_iters", base.plan_max_iters)),
        pa_tau_final=float(solver.get("pa_tau_final", base.pa_tau_final)),
        pa_hinge_eps=float(solver.get("pa_hinge_eps", base.pa_hinge_eps)),
    )
    if "rho" in isac:
        kwargs["rho"] = float(isac["rho"])
    if "r0_rate" in isac:
        kwargs["r0_rate"] = float(isac["r0_rate"])
    for key in ("u_min", "u_max", "a_min", "a_max"):
        if key in planner:
            kwargs[key] = tuple(float(v) for v in planner[key])
    if "wheelbase" in planner:
        kwargs["wheelbase"] = float(planner["wheelbase"])
    return ScenarioConfig(**kwargs)


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Read a TOML or JSON scenario file (format chosen by extension)."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        data = json.loads(path.read_text())
    else:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    return scenario_from_dict(data)
