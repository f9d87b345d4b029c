"""Sample paths from history and the binomial satisfaction bound.

A scenario is a window of past loads whose start value matches the current
load (exactly when possible, by smallest L1 deviation otherwise). The bound
estimates how likely a scenario-program optimizer is to violate constraints
on a fresh path.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UsageError
from .model import ControlInput, PlantParams, SystemState, step_temperature, server_power, total_energy
from .trace import WorkloadTrace

# A history is just a load trace; the alias keeps call sites readable.
History = WorkloadTrace


@dataclass(frozen=True)
class ScenarioSet:
    """N sample paths of shape (N, J, t_h+1) plus where they came from."""

    loads: np.ndarray
    start_indices: tuple[int, ...]
    provenance: str = ""

    def __post_init__(self):
        loads = np.asarray(self.loads, dtype=float)
        object.__setattr__(self, "loads", loads)
        object.__setattr__(self, "start_indices", tuple(int(s) for s in self.start_indices))
        if loads.ndim != 3 or loads.shape[0] < 1:
            raise UsageError("scenario loads must have shape (N, J, steps) with N >= 1")
        if np.any(loads < 0) or not np.all(np.isfinite(loads)):
            raise DomainError("scenario loads must be finite and nonnegative")
        if len(self.start_indices) != loads.shape[0]:
            raise UsageError("one start index per sample path required")

    @property
    def n(self) -> int:
        return self.loads.shape[0]


def extract_scenarios(history: History, tau_loads, t_h: int, n: int) -> ScenarioSet:
    """Pick the N history windows whose start loads best match the current loads.

    Windows are ranked by the L1 deviation sum_j |L_j(start) - L_j(now)| (zero
    for exact matches), ties broken by earliest start; chosen start indices
    are distinct and returned sorted. Deterministic.
    """
    if n < 1:
        raise UsageError("need at least one scenario")
    if t_h < 0:
        raise UsageError("horizon must be nonnegative")
    steps = t_h + 1
    if history.length < steps:
        raise UsageError(
            f"history of {history.length} samples is shorter than one window ({steps})"
        )
    tau_loads = np.atleast_1d(np.asarray(tau_loads, dtype=float))
    if tau_loads.shape != (history.n_clusters,):
        raise UsageError("current loads must give one value per cluster")
    n_windows = history.length - steps + 1
    if n > n_windows:
        raise UsageError(
            f"requested {n} scenarios but only {n_windows} distinct windows exist"
        )
    devs = np.abs(history.loads[:, :n_windows] - tau_loads[:, None]).sum(axis=0)
    order = np.lexsort((np.arange(n_windows), devs))
    chosen = np.sort(order[:n])
    sw = np.lib.stride_tricks.sliding_window_view(history.loads, steps, axis=1)
    loads = np.ascontiguousarray(sw[:, chosen, :].transpose(1, 0, 2))
    exact = int(np.count_nonzero(devs[chosen] == 0))
    return ScenarioSet(
        loads=loads,
        start_indices=tuple(int(history.start + s) for s in chosen),
        provenance=(
            f"{history.source or 'history'}: {exact}/{n} exact start matches, "
            "remainder by smallest L1 start deviation; distinct starts stand in "
            "for independent sample paths"
        ),
    )


def satisfaction_bound(epsilon: float, n: int, t_h: int, n_clusters: int,
                       d: int | None = None) -> float:
    """Binomial tail bound sum_{i<=d} C(N,i) eps^i (1-eps)^(N-i), d = (t_h+1)*J.

    Computed in log space (log-gamma binomials plus log-sum-exp) so large N
    cannot overflow; the result is clamped to [0, 1]. When d >= N the bound
    is vacuous: 1 is returned with a warning. `d` may be overridden.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise DomainError("epsilon must lie in [0, 1]")
    if n < 1:
        raise DomainError("need at least one scenario")
    if d is None:
        if t_h < 0 or n_clusters < 1:
            raise DomainError("horizon must be >= 0 and cluster count >= 1")
        d = (t_h + 1) * n_clusters
    if d < 0:
        raise DomainError("d must be nonnegative")
    if d >= n:
        warnings.warn(f"d={d} >= N={n}: the satisfaction bound is vacuous (1.0)")
        return 1.0
    if epsilon == 0.0:
        return 1.0
    if epsilon == 1.0:
        return 0.0
    i = np.arange(d + 1)
    log_binom = (
        math.lgamma(n + 1)
        - np.array([math.lgamma(k + 1) + math.lgamma(n - k + 1) for k in i])
    )
    logs = log_binom + i * math.log(epsilon) + (n - i) * math.log1p(-epsilon)
    mx = logs.max()
    val = math.exp(mx + math.log(np.exp(logs - mx).sum()))
    return float(min(max(val, 0.0), 1.0))


def empirical_satisfaction(
    u: ControlInput,
    gamma_log: float,
    test_paths: ScenarioSet,
    init: SystemState,
    params: PlantParams,
    rel_tol: float = 1e-6,
) -> float:
    """Fraction of test paths under which input u keeps every constraint.

    Per path: delay <= d_max at every step, CPU temperatures at or below the
    ceiling after each applied input, and total energy <= e^gamma_log. A
    small relative slack absorbs solver-tolerance-level boundary noise.
    """
    if test_paths.n < 1:
        raise UsageError("empty test set")
    steps = u.steps
    if test_paths.loads.shape[2] != steps or test_paths.loads.shape[1] != params.n_clusters:
        raise UsageError("test paths do not match the input window")
    level = math.exp(gamma_log)
    d_max = params.d_maxes()
    t_max = params.t_cpu_maxes()
    mus = params.mus()
    ok = 0
    for k in range(test_paths.n):
        loads = test_paths.loads[k]
        good = True
        state = init
        energy = 0.0
        for t in range(steps):
            cap = u.m[:, t] * mus - loads[:, t]
            if np.any(cap <= 0) or np.any(1.0 / cap > d_max * (1 + rel_tol)):
                good = False
                break
            p = server_power(loads[:, t], u.m[:, t], params.power)
            state = step_temperature(state, u.tc[t], p, params)
            if np.any(state.t_cpu > t_max * (1 + rel_tol)):
                good = False
                break
            energy += total_energy(loads[:, t], u.m[:, t], u.tc[t], params.power)
        if good and energy <= level * (1 + rel_tol):
            ok += 1
    return ok / test_paths.n
