"""Beam-power optimization.

The planning-aware allocator minimizes a corridor-shrinkage hinge cost
plus a sensing regularizer under sum-rate and budget constraints; three
conventional allocators (pure sensing, sum-rate water-filling, max-min
fairness) and a brute-force grid oracle serve as baselines and
validation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .geometry import DiscPair, min_center_distance
from .isac import CrbModel
from .uncertainty import chi2_quantile_2dof


class InfeasiblePaError(ValueError):
    """The allocation problem has no feasible point; names the binding constraint."""

    def __init__(self, message: str, binding: str):
        super().__init__(message)
        self.binding = binding


class UnsupportedProblemError(ValueError):
    """Raised by the grid oracle for problem sizes it cannot enumerate."""


@dataclass(eq=False)
class PaProblem:
    """Inputs of the inner power-allocation problem.

    ``ev_discs`` holds the ego disc pair at every reference waypoint;
    ``comm_gains`` are effective downlink SNRs per unit power (1/W).
    """

    crbs: list[CrbModel]
    ov_discs: list[DiscPair]
    comm_gains: np.ndarray
    ev_discs: list[DiscPair]
    d_safe: float
    risk_eps: float
    rho: float
    p_sum: float
    r0_rate: float
    p_min: float = 0.0

    # precomputed geometry, filled in __post_init__
    crb_sums: np.ndarray = field(init=False)
    eta: np.ndarray = field(init=False)
    base_margins: np.ndarray = field(init=False)

    def __post_init__(self):
        self.comm_gains = np.asarray(self.comm_gains, dtype=float)
        k = len(self.crbs)
        if not (k == len(self.ov_discs) == self.comm_gains.size):
            raise ValueError("per-obstacle inputs must have equal length")
        if self.p_sum <= 0.0:
            raise InfeasiblePaError("power budget must be positive", binding="budget")
        if np.any(self.comm_gains <= 0.0):
            raise ValueError("communication gains must be positive")
        if self.p_min <= 0.0:
            self.p_min = 1e-6 * self.p_sum
        if k * self.p_min >= self.p_sum:
            raise InfeasiblePaError("power floor exceeds the budget", binding="budget")

        q = chi2_quantile_2dof(1.0 - self.risk_eps)
        self.crb_sums = np.array([c.c11 + c.c22 for c in self.crbs])
        self.eta = np.sqrt(q * self.crb_sums)
        # base hinge offsets m[k, t]: hinge argument is m + eta_k p_k^-1/2
        t_len = len(self.ev_discs)
        margins = np.empty((k, t_len))
        for i, ov in enumerate(self.ov_discs):
            for t, ev in enumerate(self.ev_discs):
                gap = min_center_distance(ov, ev) - ov.radius - ev.radius
                margins[i, t] = self.d_safe - gap
        self.base_margins = margins

        if self.rate(self.equal_split() * (1.0 - 1e-9)) <= self.r0_rate:
            raise InfeasiblePaError(
                "sum-rate threshold infeasible at the uniform split", binding="sum_rate"
            )

    @property
    def n_beams(self) -> int:
        return len(self.crbs)

    def equal_split(self) -> np.ndarray:
        return np.full(self.n_beams, self.p_sum / self.n_beams)

    def rate(self, powers: np.ndarray) -> float:
        return float(np.sum(np.log2(1.0 + self.comm_gains * np.asarray(powers, dtype=float))))

    def rate_grad(self, powers: np.ndarray) -> np.ndarray:
        return self.comm_gains / ((1.0 + self.comm_gains * powers) * math.log(2.0))


@dataclass(frozen=True, eq=False)
class PowerAllocation:
    """Solver output; ``objective`` is the scheme's own cost at the optimum."""

    powers: np.ndarray
    objective: float
    rate: float
    kkt_residual: float


def shrinkage_cost(powers: np.ndarray, problem: PaProblem) -> float:
    """Exact hinge cost of corridor shrinkage along the reference waypoints."""
    p = np.asarray(powers, dtype=float)
    x = problem.base_margins + problem.eta[:, None] / np.sqrt(p)[:, None]
    return float(np.maximum(x, 0.0).sum())


def crb_regularizer(powers: np.ndarray, problem: PaProblem, rho: float | None = None) -> float:
    """Sensing regularizer rho * sum_k (c11 + c22) / p_k."""
    r = problem.rho if rho is None else rho
    return float(r * np.sum(problem.crb_sums / np.asarray(powers, dtype=float)))


def _hinge_smooth(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Smoothed max(x, 0) with first and second derivatives."""
    r = np.sqrt(x * x + eps * eps)
    val = 0.5 * (x + r)
    d1 = 0.5 * (1.0 + x / r)
    d2 = 0.5 * eps * eps / (r * r * r)
    return val, d1, d2


def _objective_terms(
    problem: PaProblem, p: np.ndarray, rho: float, use_hinge: bool, eps: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Smoothed objective with gradient and (diagonal) Hessian."""
    f = rho * float(np.sum(problem.crb_sums / p))
    grad = -rho * problem.crb_sums / p**2
    hess = 2.0 * rho * problem.crb_sums / p**3
    if use_hinge:
        inv_sqrt = 1.0 / np.sqrt(p)
        x = problem.base_margins + problem.eta[:, None] * inv_sqrt[:, None]
        val, d1, d2 = _hinge_smooth(x, eps)
        dxdp = -0.5 * problem.eta * p**-1.5
        d2xdp2 = 0.75 * problem.eta * p**-2.5
        f += float(val.sum())
        grad = grad + d1.sum(axis=1) * dxdp
        hess = hess + d2.sum(axis=1) * dxdp**2 + d1.sum(axis=1) * d2xdp2
    return f, grad, hess


def _solve_barrier(
    problem: PaProblem,
    rho: float,
    use_hinge: bool,
    hinge_eps: float = 1e-6,
    tau_final: float = 1e8,
    p0: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Interior-point minimization restricted to the budget face.

    All supported objectives decrease in each beam power, so an optimum
    lies on sum(p) = p_sum; Newton steps solve the equality-constrained
    KKT system while log barriers keep p > p_min and rate(p) > r0. Hinge
    smoothing is tightened by continuation after the barrier sweep so
    Newton stays in its quadratic basin near hinge kinks.
    """
    k = problem.n_beams
    use_rate = problem.r0_rate > 0.0
    ones = np.ones(k)

    def feasible_on_face(pv: np.ndarray) -> bool:
        if np.any(pv <= problem.p_min):
            return False
        if use_rate and problem.rate(pv) <= problem.r0_rate:
            return False
        return True

    def barrier_value(pv: np.ndarray, tau: float, eps: float) -> float:
        if not feasible_on_face(pv):
            return math.inf
        f, _, _ = _objective_terms(problem, pv, rho, use_hinge, eps)
        val = f - np.log(pv - problem.p_min).sum() / tau
        if use_rate:
            val -= math.log(problem.rate(pv) - problem.r0_rate) / tau
        return val

    def newton(
        p: np.ndarray, tau: float, eps: float, tol: float = 1e-11
    ) -> tuple[np.ndarray, float]:
        resid = math.inf
        best_resid = math.inf
        since_improve = 0
        for _ in range(60):
            _, grad, hess = _objective_terms(problem, p, rho, use_hinge, eps)
            slack_p = p - problem.p_min
            grad_total = grad - 1.0 / (tau * slack_p)
            h = np.diag(hess + 1.0 / (tau * slack_p**2))
            if use_rate:
                slack_r = problem.rate(p) - problem.r0_rate
                rg = problem.rate_grad(p)
                grad_total = grad_total - rg / (tau * slack_r)
                rate_hess_diag = -(problem.comm_gains**2) / (
                    (1.0 + problem.comm_gains * p) ** 2 * math.log(2.0)
                )
                h = h + np.outer(rg, rg) / (tau * slack_r**2)
                h = h + np.diag(-rate_hess_diag / (tau * slack_r))
            # KKT system for the face constraint 1^T dp = 0
            kkt = np.zeros((k + 1, k + 1))
            kkt[:k, :k] = h
            kkt[:k, k] = ones
            kkt[k, :k] = ones
            rhs = np.concatenate([-grad_total, [0.0]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                break
            step, nu = sol[:k], sol[k]
            resid = float(np.abs(grad_total + nu).max())
            if resid <= tol:
                break
            if resid < 0.5 * best_resid:
                best_resid, since_improve = resid, 0
            else:
                since_improve += 1
                if since_improve >= 8:
                    break
            decrement = float(-grad_total @ step)
            if decrement / 2.0 <= 1e-22 or np.abs(step).max() < 1e-15 * max(
                1.0, float(np.abs(p).max())
            ):
                break
            base = barrier_value(p, tau, eps)
            t = 1.0
            for _ in range(30):
                cand = p + t * step
                if barrier_value(cand, tau, eps) <= base - 1e-4 * t * decrement:
                    p = cand
                    break
                t *= 0.5
            else:
                break
        return p, resid

    p = problem.equal_split()
    if p0 is not None:
        cand = np.maximum(np.asarray(p0, dtype=float), problem.p_min * (1.0 + 1e-6))
        cand *= problem.p_sum / cand.sum()
        cand = np.maximum(cand, problem.p_min * (1.0 + 1e-9))
        cand *= problem.p_sum / cand.sum()
        if feasible_on_face(cand):
            p = cand

    eps_coarse = max(hinge_eps, 1e-3) if use_hinge else hinge_eps
    stage_tol = max(1e-11, 0.3 / tau_final)
    tau = 1.0 if p0 is None else min(1e3, tau_final)
    resid = math.inf
    while True:
        p, resid = newton(p, tau, eps_coarse, tol=stage_tol if tau >= tau_final else 1e-8)
        if tau >= tau_final:
            break
        tau = min(tau * 30.0, tau_final)
    if use_hinge:
        eps = eps_coarse
        while eps > hinge_eps:
            eps = max(eps * 0.03, hinge_eps)
            p, resid = newton(p, tau_final, eps, tol=stage_tol)

    kkt_resid = max(resid, 1.0 / tau_final)
    return p, kkt_resid


def solve_pisac(
    problem: PaProblem,
    p0: np.ndarray | None = None,
    tau_final: float = 1e8,
    hinge_eps: float = 1e-6,
) -> PowerAllocation:
    """Minimize shrinkage cost + regularizer under rate and budget constraints."""
    p, kkt = _solve_barrier(
        problem, rho=problem.rho, use_hinge=True, hinge_eps=hinge_eps, tau_final=tau_final, p0=p0
    )
    obj = shrinkage_cost(p, problem) + crb_regularizer(p, problem)
    return PowerAllocation(powers=p, objective=obj, rate=problem.rate(p), kkt_residual=kkt)


def solve_crb_min(
    problem: PaProblem,
    p0: np.ndarray | None = None,
    tau_final: float = 1e8,
) -> PowerAllocation:
    """Minimize the aggregate sensing bound under the same constraints.

    With only the budget active the optimum splits proportionally to
    sqrt(c11 + c22).
    """
    p, kkt = _solve_barrier(problem, rho=1.0, use_hinge=False, tau_final=tau_final, p0=p0)
    obj = crb_regularizer(p, problem, rho=1.0)
    return PowerAllocation(powers=p, objective=obj, rate=problem.rate(p), kkt_residual=kkt)


def solve_srm(problem: PaProblem) -> PowerAllocation:
    """Sum-rate maximization: closed-form water-filling with a power floor."""
    g = problem.comm_gains
    lo = problem.p_min + (1.0 / g).min()
    hi = problem.p_min + (1.0 / g).max() + problem.p_sum

    def total(mu: float) -> float:
        return float(np.maximum(mu - 1.0 / g, problem.p_min).sum())

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if total(mid) > problem.p_sum:
            hi = mid
        else:
            lo = mid
    mu = 0.5 * (lo + hi)
    p = np.maximum(mu - 1.0 / g, problem.p_min)
    # spread any bisection remainder over the active (above-floor) channels
    active = p > problem.p_min + 1e-15
    if active.any():
        p[active] += (problem.p_sum - p.sum()) / active.sum()
    rate = problem.rate(p)
    return PowerAllocation(
        powers=p,
        objective=-rate,
        rate=rate,
        kkt_residual=abs(p.sum() - problem.p_sum),
    )


def solve_mmf(problem: PaProblem) -> PowerAllocation:
    """Max-min fairness: equalize per-user SNR g_k p_k under the budget."""
    g = problem.comm_gains
    pinned = np.zeros(len(g), dtype=bool)
    p = np.empty_like(g)
    for _ in range(len(g) + 1):
        budget = problem.p_sum - problem.p_min * pinned.sum()
        inv = (1.0 / g)[~pinned]
        p[~pinned] = budget * (1.0 / g[~pinned]) / inv.sum()
        p[pinned] = problem.p_min
        below = (~pinned) & (p < problem.p_min)
        if not below.any():
            break
        pinned |= below
    rate = problem.rate(p)
    min_rate = float(np.log2(1.0 + g * p).min())
    return PowerAllocation(
        powers=p,
        objective=-min_rate,
        rate=rate,
        kkt_residual=abs(p.sum() - problem.p_sum),
    )


def grid_oracle(problem: PaProblem, resolution: int, objective: str = "pisac") -> PowerAllocation:
    """Exhaustive search over the budget face of the power simplex.

    Valid because every supported objective is nonincreasing in each beam
    power, so an optimum lies on the face sum(p) = p_sum. Supports K <= 4.
    """
    k = problem.n_beams
    if k > 4:
        raise UnsupportedProblemError("grid oracle supports at most 4 beams")
    free = problem.p_sum - k * problem.p_min
    cell = free / resolution

    def cost(p: np.ndarray) -> float:
        if objective == "pisac":
            return shrinkage_cost(p, problem) + crb_regularizer(p, problem)
        if objective == "crb_min":
            return crb_regularizer(p, problem, rho=1.0)
        raise ValueError(f"unknown objective {objective!r}")

    best_p, best_cost = None, math.inf
    use_rate = problem.r0_rate > 0.0
    for combo in combinations_with_replacement(range(k), resolution):
        counts = np.bincount(np.asarray(combo), minlength=k)
        p = problem.p_min + counts * cell
        if use_rate and problem.rate(p) < problem.r0_rate:
            continue
        c = cost(p)
        if c < best_cost:
            best_cost, best_p = c, p
    if best_p is None:
        raise InfeasiblePaError("no feasible grid point", binding="sum_rate")
    return PowerAllocation(
        powers=best_p,
        objective=best_cost,
        rate=problem.rate(best_p),
        kkt_residual=float("nan"),
    )
