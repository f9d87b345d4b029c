"""Plant model of a cold-aisle-contained server room.

Discrete time, one sample per minute. Per-server power is affine in the
per-server request rate, CPU temperatures follow a stable linear recursion
driven by the CRAC supply air temperature, cooling energy goes through a
quadratic coefficient-of-performance curve, and response times are M/M/1.
Everything here is a pure function of its arguments; :func:`simulate` rolls
a control sequence forward and logs energies, delays, and constraint flags.

Units: temperatures in degC, powers in W, request rates in requests/s,
server counts are positive reals (rounding is a controller policy).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, QueueInstabilityError, UsageError

# CRAC coefficient of performance, quadratic in the supply temperature:
# cop(T) = COP_QUAD*T^2 + COP_LIN*T + COP_CONST.
COP_QUAD = 0.0068
COP_LIN = 0.0008
COP_CONST = 0.458


@dataclass(frozen=True)
class PowerModel:
    """Per-server power p = a1 * L/m + a2.

    a1 is the marginal power per unit of per-server request rate, a2 the
    static power of everything that is not CPU load.
    """

    a1: float
    a2: float

    def __post_init__(self):
        if not (self.a1 > 0 and self.a2 > 0):
            raise DomainError("power coefficients a1, a2 must be positive")


@dataclass(frozen=True)
class ClusterParams:
    """Thermal and queueing coefficients of one server cluster.

    alpha: CRAC-to-CPU heat-exchange rate per step.
    beta: thermal retention per step; 0 < beta < 1 keeps the recursion stable.
    sigma: power-to-temperature gain (degC per W per step).
    mu: mean service rate of one server (requests/s).
    d_max: largest tolerable response time (s).
    t_cpu_max: CPU temperature ceiling (degC).
    """

    alpha: float
    beta: float
    sigma: float
    mu: float
    d_max: float
    t_cpu_max: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.sigma > 0):
            raise DomainError("alpha and sigma must be positive")
        if not 0 < self.beta < 1:
            raise DomainError("beta must lie strictly in (0, 1)")
        if not (self.mu > 0 and self.d_max > 0 and self.t_cpu_max > 0):
            raise DomainError("mu, d_max, t_cpu_max must be positive")


@dataclass(frozen=True)
class PlantParams:
    """Full plant description: power model, clusters, CRAC supply bounds."""

    power: PowerModel
    clusters: tuple[ClusterParams, ...]
    tc_min: float
    tc_max: float

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        if len(self.clusters) < 1:
            raise DomainError("at least one cluster required")
        if not self.tc_min <= self.tc_max:
            raise DomainError("tc_min must not exceed tc_max")

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def alphas(self) -> np.ndarray:
        return np.array([c.alpha for c in self.clusters])

    def betas(self) -> np.ndarray:
        return np.array([c.beta for c in self.clusters])

    def sigmas(self) -> np.ndarray:
        return np.array([c.sigma for c in self.clusters])

    def mus(self) -> np.ndarray:
        return np.array([c.mu for c in self.clusters])

    def d_maxes(self) -> np.ndarray:
        return np.array([c.d_max for c in self.clusters])

    def t_cpu_maxes(self) -> np.ndarray:
        return np.array([c.t_cpu_max for c in self.clusters])


@dataclass(frozen=True)
class SystemState:
    """CPU temperatures of every cluster at integer time t (minutes)."""

    t: int
    t_cpu: np.ndarray

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.t_cpu, dtype=float))
        object.__setattr__(self, "t_cpu", arr)
        if not np.all(np.isfinite(arr)) or not np.all(arr > 0):
            raise DomainError("CPU temperatures must be finite and positive")


@dataclass(frozen=True)
class ControlInput:
    """One window of decisions: CRAC temperatures and per-cluster server counts.

    tc has shape (H,), m has shape (J, H); all entries strictly positive.
    """

    tc: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        tc = np.atleast_1d(np.asarray(self.tc, dtype=float))
        m = np.atleast_2d(np.asarray(self.m, dtype=float))
        object.__setattr__(self, "tc", tc)
        object.__setattr__(self, "m", m)
        if m.shape[1] != tc.shape[0]:
            raise UsageError("tc and m must cover the same number of steps")
        if not (np.all(tc > 0) and np.all(m > 0)):
            raise DomainError("control inputs must be strictly positive")

    @property
    def steps(self) -> int:
        return self.tc.shape[0]


def server_power(load: float, m: float, pm: PowerModel):
    """Power of one server handling `load` requests/s spread over m servers."""
    if np.any(np.asarray(m) <= 0):
        raise DomainError("server count must be positive")
    if np.any(np.asarray(load) < 0):
        raise DomainError("load must be nonnegative")
    return pm.a1 * load / m + pm.a2


def cop(t_supply):
    """CRAC coefficient of performance at supply temperature in degC."""
    t = np.asarray(t_supply, dtype=float)
    out = COP_QUAD * t * t + COP_LIN * t + COP_CONST
    return float(out) if out.ndim == 0 else out


def response_time(load: float, m: float, mu: float) -> float:
    """M/M/1 response time 1/(m*mu - L); raises if the queue is unstable."""
    if m <= 0 or mu <= 0:
        raise DomainError("server count and service rate must be positive")
    if load < 0:
        raise DomainError("load must be nonnegative")
    cap = m * mu - load
    if cap <= 0:
        raise QueueInstabilityError(
            f"offered load {load} meets or exceeds capacity {m * mu}"
        )
    return 1.0 / cap


def it_power(loads, ms, pm: PowerModel) -> float:
    """Total IT power P = sum_j (a1*L_j + a2*m_j).

    This is p_j*m_j summed over clusters; the per-server load cancels.
    """
    loads = np.asarray(loads, dtype=float)
    ms = np.asarray(ms, dtype=float)
    if np.any(ms <= 0):
        raise DomainError("server counts must be positive")
    if np.any(loads < 0):
        raise DomainError("loads must be nonnegative")
    return float(np.sum(pm.a1 * loads + pm.a2 * ms))


def total_energy(loads, ms, tc: float, pm: PowerModel) -> float:
    """IT plus cooling energy P * (1 + 1/cop(tc)) for one step."""
    p = it_power(loads, ms, pm)
    return p * (1.0 + 1.0 / cop(tc))


def step_temperature(state: SystemState, tc: float, p, params: PlantParams) -> SystemState:
    """Advance every cluster one step: T' = alpha*tc + sigma*p + beta*T."""
    p = np.asarray(p, dtype=float)
    nxt = params.alphas() * tc + params.sigmas() * p + params.betas() * state.t_cpu
    return SystemState(t=state.t + 1, t_cpu=nxt)


def _delays(loads, ms, mus) -> np.ndarray:
    """Response times per cluster; +inf where the queue is unstable."""
    cap = np.asarray(ms) * np.asarray(mus) - np.asarray(loads)
    with np.errstate(divide="ignore"):
        d = np.where(cap > 0, 1.0 / np.maximum(cap, 1e-300), np.inf)
    return d


# Relative slack for constraint flags, so that solver-tight solutions are not
# flagged as violations by float jitter.
_FLAG_RTOL = 1e-9


@dataclass(frozen=True)
class StepRecord:
    """Everything observed while applying one control input to the plant."""

    t: int
    tc: float
    m: np.ndarray
    t_cpu: np.ndarray
    load: np.ndarray
    p: np.ndarray
    it_power: float
    cooling_power: float
    energy: float
    delay: np.ndarray
    tc_ok: bool
    delay_ok: bool
    temp_ok: bool


def apply_step(state: SystemState, tc: float, ms, loads, params: PlantParams):
    """Apply one input to the plant; returns (StepRecord, next SystemState)."""
    ms = np.atleast_1d(np.asarray(ms, dtype=float))
    loads = np.atleast_1d(np.asarray(loads, dtype=float))
    p = server_power(loads, ms, params.power)
    pw = it_power(loads, ms, params.power)
    cool = pw / cop(tc)
    delays = _delays(loads, ms, params.mus())
    rec = StepRecord(
        t=state.t,
        tc=float(tc),
        m=ms,
        t_cpu=state.t_cpu.copy(),
        load=loads,
        p=p,
        it_power=pw,
        cooling_power=cool,
        energy=pw + cool,
        delay=delays,
        tc_ok=bool(
            params.tc_min * (1 - _FLAG_RTOL) <= tc <= params.tc_max * (1 + _FLAG_RTOL)
        ),
        delay_ok=bool(np.all(delays <= params.d_maxes() * (1 + _FLAG_RTOL))),
        temp_ok=bool(np.all(state.t_cpu <= params.t_cpu_maxes() * (1 + _FLAG_RTOL))),
    )
    return rec, step_temperature(state, tc, p, params)


@dataclass
class TrajectoryLog:
    """Per-step records of a closed-loop (or open-loop) run.

    `solve_stats` is populated by the controller with one dict per step
    (iterations, fevals, status, objective); plain simulation leaves it None.
    """

    initial_state: SystemState
    records: list[StepRecord]
    final_state: SystemState
    solve_stats: list[dict] | None = None

    def __len__(self) -> int:
        return len(self.records)

    def tc_values(self) -> np.ndarray:
        return np.array([r.tc for r in self.records])

    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.records])

    def total_energy(self) -> float:
        return float(sum(r.energy for r in self.records))

    def total_it_energy(self) -> float:
        return float(sum(r.it_power for r in self.records))

    def total_cooling_energy(self) -> float:
        return float(sum(r.cooling_power for r in self.records))

    def tc_variance(self) -> float:
        """Sample variance (ddof=1) of the applied CRAC temperatures."""
        tc = self.tc_values()
        if tc.size < 2:
            return 0.0
        return float(np.var(tc, ddof=1))

    def violation_counts(self) -> dict[str, int]:
        return {
            "tc": sum(not r.tc_ok for r in self.records),
            "delay": sum(not r.delay_ok for r in self.records),
            "temp": sum(not r.temp_ok for r in self.records),
        }

    def summary(self) -> dict:
        v = self.violation_counts()
        out = {
            "steps": len(self.records),
            "total_energy": self.total_energy(),
            "it_energy": self.total_it_energy(),
            "cooling_energy": self.total_cooling_energy(),
            "tc_mean": float(np.mean(self.tc_values())) if self.records else 0.0,
            "tc_variance": self.tc_variance(),
            "violations_tc": v["tc"],
            "violations_delay": v["delay"],
            "violations_temp": v["temp"],
        }
        if self.solve_stats is not None:
            out["solver_iterations"] = int(sum(s["iterations"] for s in self.solve_stats))
            out["solver_fevals"] = int(sum(s["fevals"] for s in self.solve_stats))
        return out


def simulate(inputs: ControlInput, loads, init: SystemState, params: PlantParams) -> TrajectoryLog:
    """Roll a control sequence forward against a load trace.

    `loads` has shape (J, H) aligned with `inputs`; a zero-step input produces
    a log holding only the initial state.
    """
    loads = np.atleast_2d(np.asarray(loads, dtype=float))
    if loads.shape != (params.n_clusters, inputs.steps):
        raise UsageError(
            f"loads shape {loads.shape} does not match "
            f"({params.n_clusters}, {inputs.steps})"
        )
    if init.t_cpu.shape[0] != params.n_clusters:
        raise UsageError("initial state does not match the cluster count")
    state = init
    records = []
    for i in range(inputs.steps):
        rec, state = apply_step(state, inputs.tc[i], inputs.m[:, i], loads[:, i], params)
        records.append(rec)
    return TrajectoryLog(initial_state=init, records=records, final_state=state)
