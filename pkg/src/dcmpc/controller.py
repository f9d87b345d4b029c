"""Receding-horizon execution of the control policies over a trace.

At each step the controller builds the window program from the current
measured CPU temperatures, solves it, applies only the first input to the
plant, and re-measures. Windows that would extend past the end of the
experiment shrink. Warm starts shift the previous solution by one step and
duplicate its final step; a stale warm start silently falls back to phase I
inside the solver.

The Offline Optimal Static baseline scans constant supply temperatures with
a coarse grid plus golden-section refinement, solving one full-horizon
program (supply temperature pinned) per candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InfeasibleError, UsageError
from .model import (
    ControlInput,
    PlantParams,
    SystemState,
    TrajectoryLog,
    apply_step,
    simulate,
    total_energy,
)
from .program import (
    VariableLayout,
    WindowData,
    build_deterministic,
    build_penalized,
    build_scenario,
    decode,
)
from .scenario import History, extract_scenarios
from .solver import SolverConfig, Solution, minimize
from .trace import WorkloadTrace

POLICIES = ("deterministic", "penalized", "scenario", "oos")
ROUNDINGS = ("none", "ceil")


@dataclass(frozen=True)
class ExperimentConfig:
    """What to run: window, horizon, policy, weights, rounding, solver knobs."""

    t0: int
    tf: int
    horizon: int = 5
    policy: str = "deterministic"
    w_tc: float = 0.0
    w_m: float = 0.0
    n_scenarios: int = 100
    rounding: str = "none"
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not self.t0 < self.tf:
            raise UsageError("need t0 < tf")
        if self.horizon < 0:
            raise UsageError("horizon must be nonnegative")
        if self.policy not in POLICIES:
            raise UsageError(f"unknown policy {self.policy!r}")
        if self.rounding not in ROUNDINGS:
            raise UsageError(f"unknown rounding {self.rounding!r}")
        if self.policy == "scenario" and self.n_scenarios < 1:
            raise UsageError("scenario policy needs at least one sample path")
        if self.w_tc < 0 or self.w_m < 0:
            raise DomainError("fluctuation weights must be nonnegative")


def _window_weights(config: ExperimentConfig) -> tuple[float, float]:
    if config.policy in ("penalized", "scenario"):
        return config.w_tc, config.w_m
    return 0.0, 0.0


def _shift_warm_start(
    prev_w: np.ndarray,
    prev_layout: VariableLayout,
    layout: VariableLayout,
    loads: np.ndarray,
    params: PlantParams,
) -> np.ndarray:
    """Previous solution advanced one step, final step duplicated.

    Gamma restarts at the shifted inputs' predicted log-energy plus a small
    margin so the energy constraint starts strictly feasible.
    """
    w = np.empty(layout.n_vars)
    last = prev_layout.steps - 1
    for i in range(layout.steps):
        src = min(i + 1, last)
        w[layout.x_ids()[i]] = prev_w[prev_layout.x_ids()[src]]
        for j in range(layout.n_clusters):
            w[layout.y_ids(j)[i]] = prev_w[prev_layout.y_ids(j)[src]]
    tc = np.exp(w[layout.x_ids()])
    energy = sum(
        total_energy(
            loads[:, i],
            [math.exp(w[layout.y_ids(j)[i]]) for j in range(layout.n_clusters)],
            tc[i],
            params.power,
        )
        for i in range(layout.steps)
    )
    w[layout.gamma_id] = math.log(energy) + 1e-3
    return w


def _solve_stat(tau: int, sol: Solution) -> dict:
    return {
        "tau": tau,
        "status": sol.status,
        "iterations": sol.iterations,
        "fevals": sol.fevals,
        "objective": sol.objective,
        "warm": sol.used_warm_start,
    }


def _apply_first(state, u, loads_t, params, rounding):
    m0 = u.m[:, 0]
    if rounding == "ceil":
        m0 = np.ceil(m0)
    return apply_step(state, u.tc[0], m0, loads_t, params)


def run_mpc(
    trace: WorkloadTrace,
    config: ExperimentConfig,
    params: PlantParams,
    init: SystemState,
) -> TrajectoryLog:
    """Deterministic or penalized MPC with the trace itself as the prediction."""
    if config.policy not in ("deterministic", "penalized"):
        raise UsageError(f"run_mpc does not handle policy {config.policy!r}")
    w_tc, w_m = _window_weights(config)
    state = init
    records, stats = [], []
    prev_w = prev_layout = None
    for tau in range(config.t0, config.tf + 1):
        th_eff = min(config.horizon, config.tf - tau)
        loads = trace.window(tau, th_eff + 1)
        data = WindowData(tau, loads, state, params, w_tc=w_tc, w_m=w_m)
        program = (
            build_penalized(data) if config.policy == "penalized" else build_deterministic(data)
        )
        warm = None
        if prev_w is not None:
            warm = _shift_warm_start(prev_w, prev_layout, program.layout, loads, params)
        sol = minimize(program, config.solver, warm_start=warm)
        if sol.status == "infeasible":
            raise InfeasibleError(
                f"window starting at tau={tau} is infeasible (minimax {sol.worst_slack:.3g})",
                tau=tau,
                minimax=sol.worst_slack,
            )
        u, _ = decode(sol.w, program.layout)
        rec, state = _apply_first(state, u, trace.at(tau), params, config.rounding)
        records.append(rec)
        stats.append(_solve_stat(tau, sol))
        prev_w, prev_layout = sol.w, program.layout
    return TrajectoryLog(init, records, state, stats)


def run_scenario_mpc(
    history: History,
    trace: WorkloadTrace,
    config: ExperimentConfig,
    params: PlantParams,
    init: SystemState,
) -> TrajectoryLog:
    """Scenario MPC: windows constrained on history-sampled paths, applied to truth."""
    if config.policy != "scenario":
        raise UsageError("run_scenario_mpc requires policy='scenario'")
    state = init
    records, stats = [], []
    prev_w = prev_layout = None
    for tau in range(config.t0, config.tf + 1):
        th_eff = min(config.horizon, config.tf - tau)
        now = trace.at(tau)
        scen = extract_scenarios(history, now, th_eff, config.n_scenarios)
        data = WindowData(
            tau,
            np.repeat(now[:, None], th_eff + 1, axis=1),
            state,
            params,
            w_tc=config.w_tc,
            w_m=config.w_m,
        )
        program = build_scenario(data, scen)
        warm = None
        if prev_w is not None:
            warm = _shift_warm_start(
                prev_w, prev_layout, program.layout, scen.loads.max(axis=0), params
            )
        sol = minimize(program, config.solver, warm_start=warm)
        if sol.status == "infeasible":
            raise InfeasibleError(
                f"scenario window starting at tau={tau} is infeasible "
                f"(minimax {sol.worst_slack:.3g})",
                tau=tau,
                minimax=sol.worst_slack,
            )
        u, _ = decode(sol.w, program.layout)
        rec, state = _apply_first(state, u, now, params, config.rounding)
        records.append(rec)
        stats.append(_solve_stat(tau, sol))
        prev_w, prev_layout = sol.w, program.layout
    return TrajectoryLog(init, records, state, stats)


# Golden-section knobs for the static baseline's scalar search.
_OOS_GRID_POINTS = 10
_OOS_TC_TOL = 1e-3
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def run_oos(
    trace: WorkloadTrace,
    config: ExperimentConfig,
    params: PlantParams,
    init: SystemState,
) -> tuple[TrajectoryLog, list[tuple[float, float]]]:
    """Offline Optimal Static baseline: best constant supply temperature.

    For each candidate the full-horizon program is solved with every x(t)
    pinned; candidates are scanned on a coarse grid and the best bracket is
    refined by golden section down to 1e-3 degC. Returns the winning
    trajectory and the scanned (Tc, total energy) curve.
    """
    steps = config.tf - config.t0 + 1
    loads = trace.window(config.t0, steps)
    data = WindowData(config.t0, loads, init, params)
    base = build_deterministic(data)
    cache: dict[float, tuple[float, np.ndarray | None, Solution | None]] = {}
    last_w: list[np.ndarray | None] = [None]

    def probe(tc_val: float) -> float:
        key = float(tc_val)
        if key in cache:
            return cache[key][0]
        program = base.with_pinned_x(math.log(key))
        warm = None
        if last_w[0] is not None:
            warm = last_w[0].copy()
            warm[program.layout.x_ids()] = math.log(key)
        sol = minimize(program, config.solver, warm_start=warm)
        if sol.status == "infeasible":
            cache[key] = (math.inf, None, None)
            return math.inf
        last_w[0] = sol.w
        u, _ = decode(sol.w, program.layout)
        if config.rounding == "ceil":
            u = ControlInput(tc=u.tc, m=np.ceil(u.m))
        log = simulate(u, loads, init, params)
        total = log.total_energy()
        cache[key] = (total, sol.w, sol)
        return total

    grid = np.linspace(params.tc_min, params.tc_max, _OOS_GRID_POINTS)
    values = [probe(tc) for tc in grid]
    best = int(np.argmin(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]

    a, b = float(lo), float(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = probe(c), probe(d)
    while b - a > _OOS_TC_TOL:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = probe(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = probe(d)

    curve = sorted((tc, val) for tc, (val, _, _) in cache.items())
    best_tc, (best_val, best_w, best_sol) = min(
        cache.items(), key=lambda kv: (kv[1][0], kv[0])
    )
    if not math.isfinite(best_val):
        raise InfeasibleError("every constant supply temperature candidate is infeasible")
    u, _ = decode(best_w, base.layout)
    if config.rounding == "ceil":
        u = ControlInput(tc=u.tc, m=np.ceil(u.m))
    state = init
    records = []
    for i in range(steps):
        rec, state = apply_step(state, u.tc[i], u.m[:, i], loads[:, i], params)
        records.append(rec)
    log = TrajectoryLog(init, records, state, [_solve_stat(config.t0, best_sol)])
    return log, curve


@dataclass(frozen=True)
class ComparisonRow:
    policy: str
    total_energy: float
    delta_pct: float
    tc_variance: float
    violations: int


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ComparisonRow, ...]

    def best(self) -> str:
        return min(self.rows, key=lambda r: r.total_energy).policy


def compare(logs: dict[str, TrajectoryLog]) -> ComparisonReport:
    """Side-by-side totals; deltas are percent above the best policy."""
    if not logs:
        raise UsageError("nothing to compare")
    lengths = {len(v) for v in logs.values()}
    if len(lengths) != 1:
        raise UsageError("compared runs must cover the same steps")
    totals = {name: log.total_energy() for name, log in logs.items()}
    best = min(totals.values())
    rows = []
    for name in sorted(logs):
        log = logs[name]
        rows.append(
            ComparisonRow(
                policy=name,
                total_energy=totals[name],
                delta_pct=100.0 * (totals[name] / best - 1.0),
                tc_variance=log.tc_variance(),
                violations=sum(log.violation_counts().values()),
            )
        )
    return ComparisonReport(rows=tuple(rows))
