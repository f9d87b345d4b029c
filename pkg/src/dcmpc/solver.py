"""Log-barrier interior-point solver for the window programs.

Phase I finds a strictly feasible point by minimizing the largest constraint
value (an auxiliary program with one extra slack variable); the main phase
minimizes t*f0(w) - sum_i log(-g_i(w)) for a growing barrier weight t. Inner
minimizations use projected gradient descent with Barzilai-Borwein step sizes
and Armijo backtracking; box bounds are handled by projection and therefore
hold exactly at every iterate. Everything is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, UsageError


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-8        # duality-gap bound m/t at exit
    max_outer: int = 60
    barrier_growth: float = 10.0
    barrier_init: float = 1.0
    armijo: float = 1e-4           # sufficient-decrease constant
    shrink: float = 0.5            # backtracking shrink factor
    max_inner: int = 4000
    strict_margin: float = 1e-6    # phase-I strict-feasibility margin
    stationarity: float = 1e-9     # inner stop: ||w - P(w - grad)||_inf <= stationarity*(1+t)

    def __post_init__(self):
        if not self.tolerance > 0:
            raise DomainError("tolerance must be positive")
        if not self.barrier_growth > 1:
            raise DomainError("barrier growth factor must exceed 1")
        if not (0 < self.armijo < 1 and 0 < self.shrink < 1):
            raise DomainError("line-search constants must lie in (0, 1)")
        if not (self.barrier_init > 0 and self.strict_margin > 0 and self.stationarity > 0):
            raise DomainError("barrier_init, strict_margin, stationarity must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise DomainError("iteration limits must be at least 1")


@dataclass(frozen=True)
class Solution:
    w: np.ndarray
    objective: float
    status: str                    # optimal | infeasible | max_iter
    iterations: int
    fevals: int
    worst_slack: float             # max_i g_i(w); -inf when unconstrained
    used_warm_start: bool = False
    objective_path: tuple[float, ...] = ()  # f0 after each outer barrier stage


# A warm start only needs to sit inside the barrier domain; solved optima have
# near-active constraints at about -(tolerance/m), far inside phase I's margin.
_WARM_MARGIN = 1e-12


@dataclass(frozen=True)
class Phase1Result:
    feasible: bool
    w: np.ndarray | None
    minimax: float
    iterations: int
    fevals: int


class _Counter:
    __slots__ = ("n",)

    def __init__(self):
        self.n = 0


def _box_start(lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Midpoint of the box; bound+-1 on one-sided ranges; 0 on free variables."""
    lo_f, hi_f = np.isfinite(lower), np.isfinite(upper)
    w = np.zeros_like(lower)
    both = lo_f & hi_f
    w[both] = 0.5 * (lower[both] + upper[both])
    w[lo_f & ~hi_f] = lower[lo_f & ~hi_f] + 1.0
    w[~lo_f & hi_f] = upper[~lo_f & hi_f] - 1.0
    return w


class _BarrierObjective:
    """h(w) = t*f0(w) - sum log(-g(w)); +inf outside the barrier domain."""

    def __init__(self, objective, blocks, t: float, counter: _Counter):
        self.objective = objective
        self.blocks = blocks
        self.t = t
        self.counter = counter

    def value(self, w: np.ndarray) -> float:
        self.counter.n += 1
        h = self.t * self.objective.value(w)
        for b in self.blocks:
            g = b.values(w)
            if np.any(g >= 0) or not np.all(np.isfinite(g)):
                return np.inf
            h -= np.log(-g).sum()
        return h

    def value_and_grad(self, w: np.ndarray):
        self.counter.n += 1
        f0, grad0 = self.objective.value_and_grad(w)
        h = self.t * f0
        grad = self.t * grad0
        for b in self.blocks:
            g, cache = b.evaluate(w)
            if np.any(g >= 0) or not np.all(np.isfinite(g)):
                return np.inf, grad
            h -= np.log(-g).sum()
            grad += b.weighted_grad(cache, 1.0 / (-g))
        return h, grad


def _inner_descend(problem, w0, lower, upper, tol, cfg: SolverConfig, early_stop=None):
    """Projected BB gradient descent with Armijo backtracking.

    Returns (w, iterations, converged). `early_stop(w)` may end the loop once
    the caller's goal (e.g. enough phase-I margin) is reached.
    """
    w = np.clip(w0, lower, upper)
    h, g = problem.value_and_grad(w)
    if not np.isfinite(h):
        raise UsageError("inner descent started outside the barrier domain")
    prev_w = prev_g = None
    for it in range(cfg.max_inner):
        if early_stop is not None and early_stop(w):
            return w, it, True
        resid = w - np.clip(w - g, lower, upper)
        if np.max(np.abs(resid)) <= tol:
            return w, it, True
        if prev_w is None:
            gn = np.max(np.abs(g))
            step = 1.0 / gn if gn > 0 else 1.0
        else:
            s = w - prev_w
            y = g - prev_g
            sy = float(s @ y)
            step = float(s @ s) / sy if sy > 1e-300 else 1.0
            step = min(max(step, 1e-12), 1e12)
        accepted = False
        for _ in range(60):
            cand = np.clip(w - step * g, lower, upper)
            d = cand - w
            slope = float(g @ d)
            if slope >= 0:
                break
            hc = problem.value(cand)
            if np.isfinite(hc) and hc <= h + cfg.armijo * slope:
                accepted = True
                break
            step *= cfg.shrink
        if not accepted:
            return w, it + 1, True  # no descent direction left: numerically stationary
        prev_w, prev_g = w, g
        w = cand
        h, g = problem.value_and_grad(w)
    return w, cfg.max_inner, False


def _strictly_feasible(program, w, margin: float) -> bool:
    if np.any(w < program.lower - 1e-12) or np.any(w > program.upper + 1e-12):
        return False
    g = program.constraint_values(w)
    return bool(np.all(g <= -margin))


class _ShiftedBlock:
    """Constraint block of the phase-I program: g_i(w) - s <= 0."""

    def __init__(self, block, n_vars: int):
        self.block = block
        self.n_rows = block.n_rows
        self.n_vars = n_vars  # original n + 1; slack s is the last variable

    def values(self, ws: np.ndarray) -> np.ndarray:
        return self.block.values(ws[:-1]) - ws[-1]

    def evaluate(self, ws: np.ndarray):
        g, cache = self.block.evaluate(ws[:-1])
        return g - ws[-1], cache

    def weighted_grad(self, cache, d: np.ndarray) -> np.ndarray:
        grad = np.zeros(self.n_vars)
        grad[:-1] = self.block.weighted_grad(cache, d)
        grad[-1] = -d.sum()
        return grad


class _SlackObjective:
    """f0(w, s) = s."""

    def __init__(self, n_vars: int):
        self.n_vars = n_vars

    def value(self, ws: np.ndarray) -> float:
        return float(ws[-1])

    def value_and_grad(self, ws: np.ndarray):
        grad = np.zeros(self.n_vars)
        grad[-1] = 1.0
        return float(ws[-1]), grad


def _barrier_loop(objective, blocks, w0, lower, upper, cfg, counter, early_stop=None):
    """Outer barrier iterations; returns (w, iterations, converged, f0_path)."""
    m = sum(b.n_rows for b in blocks)
    t = cfg.barrier_init
    w = w0
    total = 0
    path = []
    for _ in range(cfg.max_outer):
        problem = _BarrierObjective(objective, blocks, t, counter)
        tol = cfg.stationarity * (1.0 + t)
        w, its, conv = _inner_descend(problem, w, lower, upper, tol, cfg, early_stop)
        total += its
        path.append(objective.value(w))
        if early_stop is not None and early_stop(w):
            return w, total, True, path
        if m / t <= cfg.tolerance:
            return w, total, conv, path
        t *= cfg.barrier_growth
    return w, total, False, path


def phase1(program, config: SolverConfig | None = None) -> Phase1Result:
    """Strictly feasible point, or an infeasibility certificate.

    Minimizes the slack s over {g_i(w) <= s, w in box}; the program is
    infeasible exactly when the optimal s is nonnegative. Returns early once
    s is comfortably negative.
    """
    cfg = config if config is not None else SolverConfig()
    counter = _Counter()
    w0 = _box_start(program.lower, program.upper)
    if not program.blocks or program.n_constraints == 0:
        return Phase1Result(True, w0, -np.inf, 0, counter.n)
    g0 = program.constraint_values(w0)
    counter.n += 1
    if np.all(g0 <= -cfg.strict_margin):
        return Phase1Result(True, w0, float(g0.max()), 0, counter.n)

    n = program.n_vars
    blocks = [_ShiftedBlock(b, n + 1) for b in program.blocks]
    lower = np.append(program.lower, -np.inf)
    upper = np.append(program.upper, np.inf)
    ws0 = np.append(w0, float(g0.max()) + 1.0)
    target = -max(1e-2, 10.0 * cfg.strict_margin)
    # Phase I only needs the sign and a margin; cap the gap work accordingly.
    p1cfg = SolverConfig(
        tolerance=min(1e-8, cfg.strict_margin / 10.0),
        max_outer=cfg.max_outer,
        barrier_growth=cfg.barrier_growth,
        barrier_init=cfg.barrier_init,
        armijo=cfg.armijo,
        shrink=cfg.shrink,
        max_inner=cfg.max_inner,
        strict_margin=cfg.strict_margin,
        stationarity=cfg.stationarity,
    )
    ws, its, _, _ = _barrier_loop(
        _SlackObjective(n + 1), blocks, ws0, lower, upper, p1cfg, counter,
        early_stop=lambda v: v[-1] <= target,
    )
    w, s = ws[:-1], float(ws[-1])
    # The barrier keeps g_i(w) < s, so s below -strict_margin certifies strictness.
    if s <= -cfg.strict_margin:
        return Phase1Result(True, w, s, its, counter.n)
    return Phase1Result(False, w, s, its, counter.n)


def minimize(program, config: SolverConfig | None = None, warm_start=None) -> Solution:
    """Solve a ConvexProgram to global optimality (convexity by construction).

    A warm start is used only if it is strictly feasible for this program;
    otherwise phase I runs. Box bounds hold exactly at every iterate.
    """
    cfg = config if config is not None else SolverConfig()
    iterations = 0
    counter = _Counter()
    used_warm = False
    w = None
    if warm_start is not None:
        ws = np.clip(np.asarray(warm_start, dtype=float), program.lower, program.upper)
        if ws.shape == (program.n_vars,) and _strictly_feasible(program, ws, _WARM_MARGIN):
            w = ws
            used_warm = True
            counter.n += 1
    if w is None:
        p1 = phase1(program, cfg)
        iterations += p1.iterations
        counter.n += p1.fevals
        if not p1.feasible:
            return Solution(
                w=p1.w, objective=np.nan, status="infeasible",
                iterations=iterations, fevals=counter.n, worst_slack=p1.minimax,
            )
        w = p1.w

    if program.n_constraints == 0:
        problem = _BarrierObjective(program.objective, (), 1.0, counter)
        w, its, conv = _inner_descend(
            problem, w, program.lower, program.upper, cfg.stationarity, cfg
        )
        iterations += its
        status = "optimal" if conv else "max_iter"
        return Solution(
            w=w, objective=float(program.objective.value(w)), status=status,
            iterations=iterations, fevals=counter.n, worst_slack=-np.inf,
            used_warm_start=used_warm,
        )

    w, its, conv, path = _barrier_loop(
        program.objective, program.blocks, w, program.lower, program.upper, cfg, counter
    )
    iterations += its
    status = "optimal" if conv else "max_iter"
    return Solution(
        w=w,
        objective=float(program.objective.value(w)),
        status=status,
        iterations=iterations,
        fevals=counter.n,
        worst_slack=float(program.constraint_values(w).max()),
        used_warm_start=used_warm,
        objective_path=tuple(path),
    )
