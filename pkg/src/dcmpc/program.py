"""Window optimization problems as smooth convex programs in log space.

Decision variables are x(t) = log Tc(t), y_j(t) = log m_j(t), and the
log-energy slack gamma. Three builders share one assembly path:

* deterministic: minimize gamma subject to delay lower bounds (folded into
  variable bounds), CPU-temperature posynomial constraints, and one
  log-sum-exp energy constraint tying gamma to the window's total energy;
* penalized: same constraints, objective log(e^gamma + weighted pairwise
  fluctuation penalties of the input sequences);
* scenario: temperature, delay, and energy constraints replicated once per
  sampled load path.

Constraints are stored in batched blocks (one sparse exponent matrix per
family) so the solver evaluates all rows with a couple of matrix products;
`iter_constraints` exposes scalar views of the same rows for testing.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, PreconditionError, UsageError
from .model import PlantParams, SystemState, ControlInput
from .posy import (
    F_cool,
    Monomial,
    Posynomial,
    PosynomialLogFn,
    cpu_temp_posynomial,
    fluctuation_monomials,
    it_power_posynomial,
)

# Supply temperatures below this break convexity of the cooling curve.
TC_CONVEXITY_FLOOR = 11.0


@dataclass(frozen=True)
class VariableLayout:
    """Contiguous variable ids for one window: x(t), y_j(t), gamma."""

    tau: int
    t_h: int
    n_clusters: int

    def __post_init__(self):
        if self.t_h < 0 or self.n_clusters < 1:
            raise UsageError("horizon must be >= 0 and cluster count >= 1")

    @property
    def steps(self) -> int:
        return self.t_h + 1

    @property
    def n_vars(self) -> int:
        return self.steps * (self.n_clusters + 1) + 1

    @property
    def gamma_id(self) -> int:
        return self.steps * (self.n_clusters + 1)

    def _check(self, t: int):
        if not self.tau <= t <= self.tau + self.t_h:
            raise UsageError(f"time {t} outside window [{self.tau}, {self.tau + self.t_h}]")

    def x_id(self, t: int) -> int:
        self._check(t)
        return t - self.tau

    def y_id(self, j: int, t: int) -> int:
        self._check(t)
        if not 0 <= j < self.n_clusters:
            raise UsageError(f"cluster index {j} out of range")
        return self.steps * (1 + j) + (t - self.tau)

    def x_ids(self) -> np.ndarray:
        return np.arange(self.steps)

    def y_ids(self, j: int) -> np.ndarray:
        return self.steps * (1 + j) + np.arange(self.steps)


@dataclass(frozen=True)
class WindowData:
    """Inputs of one window problem: loads, initial state, plant, weights."""

    tau: int
    loads: np.ndarray  # (J, t_h + 1)
    init: SystemState
    params: PlantParams
    w_tc: float = 0.0
    w_m: float | np.ndarray = 0.0

    def __post_init__(self):
        loads = np.atleast_2d(np.asarray(self.loads, dtype=float))
        object.__setattr__(self, "loads", loads)
        if loads.shape[0] != self.params.n_clusters:
            raise UsageError("loads row count must match the cluster count")
        if loads.shape[1] < 1:
            raise UsageError("a window needs at least one step")
        if np.any(loads < 0) or not np.all(np.isfinite(loads)):
            raise DomainError("loads must be finite and nonnegative")
        w_m = np.broadcast_to(
            np.asarray(self.w_m, dtype=float), (self.params.n_clusters,)
        ).copy()
        object.__setattr__(self, "w_m", w_m)
        if self.w_tc < 0 or np.any(w_m < 0):
            raise DomainError("fluctuation weights must be nonnegative")
        if self.init.t_cpu.shape[0] != self.params.n_clusters:
            raise UsageError("initial state does not match the cluster count")

    @property
    def t_h(self) -> int:
        return self.loads.shape[1] - 1

    def layout(self) -> VariableLayout:
        return VariableLayout(self.tau, self.t_h, self.params.n_clusters)


def _segment_lse(z: np.ndarray, ptr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Log-sum-exp over contiguous segments of z; returns (lse, per-entry softmax)."""
    counts = np.diff(ptr)
    mx = np.maximum.reduceat(z, ptr[:-1])
    ez = np.exp(z - np.repeat(mx, counts))
    s = np.add.reduceat(ez, ptr[:-1])
    lse = mx + np.log(s)
    soft = ez / np.repeat(s, counts)
    return lse, soft


def _build_sparse(entries: list[tuple[int, int, float]], n_rows: int, n_cols: int):
    if not entries:
        return sp.csr_matrix((n_rows, n_cols))
    r, c, v = zip(*entries)
    return sp.csr_matrix((v, (r, c)), shape=(n_rows, n_cols))


class PosynomialBlock:
    """Stacked rows g_r(w) = log p_r(exp(w)) + offset_r <= 0."""

    def __init__(self, n_vars: int, rows: list[tuple[Posynomial, float]]):
        self.n_vars = n_vars
        self._posys = [p for p, _ in rows]
        self.offsets = np.array([off for _, off in rows])
        logc, entries, ptr = [], [], [0]
        term_row = []
        for r, (p, _) in enumerate(rows):
            for t in p.terms:
                k = len(logc)
                logc.append(np.log(t.coeff))
                term_row.append(r)
                for i, e in t.exponents.items():
                    entries.append((k, i, e))
            ptr.append(len(logc))
        self.logc = np.array(logc)
        self.row_ptr = np.array(ptr)
        self.term_row = np.array(term_row, dtype=int)
        self.A = _build_sparse(entries, len(logc), n_vars)

    @property
    def n_rows(self) -> int:
        return len(self.offsets)

    def values(self, w: np.ndarray) -> np.ndarray:
        z = self.logc + self.A @ w
        lse, _ = _segment_lse(z, self.row_ptr)
        return lse + self.offsets

    def evaluate(self, w: np.ndarray):
        z = self.logc + self.A @ w
        lse, soft = _segment_lse(z, self.row_ptr)
        return lse + self.offsets, soft

    def weighted_grad(self, cache, d: np.ndarray) -> np.ndarray:
        soft = cache
        return self.A.T @ (soft * d[self.term_row])

    def row_view(self, r: int) -> PosynomialLogFn:
        return PosynomialLogFn(self._posys[r], self.n_vars, float(self.offsets[r]))


class EnergyBlock:
    """Rows g_k(w) = log sum_t P_{k,t}(exp(w)) * f(e^{x_t}) - gamma <= 0.

    P_{k,t} is the IT-power posynomial of sample path k at step t and
    f(T) = 1 + 1/cop(T); log f enters additively in log space through F_cool.
    """

    def __init__(self, n_vars: int, gamma: int,
                 cells: list[tuple[Posynomial, int, int]]):
        # cells: (power posynomial, x variable id, row id), sorted by row.
        self.n_vars = n_vars
        self.gamma = gamma
        self._cells = cells
        rows = [row for _, _, row in cells]
        if rows != sorted(rows):
            raise UsageError("energy cells must be grouped by row")
        self.cell_x = np.array([x for _, x, _ in cells], dtype=int)
        self.cell_row = np.array(rows, dtype=int)
        self.n_rows = int(self.cell_row.max()) + 1 if cells else 0
        logc, entries, cptr = [], [], [0]
        term_cell = []
        for ci, (p, _, _) in enumerate(cells):
            for t in p.terms:
                k = len(logc)
                logc.append(np.log(t.coeff))
                term_cell.append(ci)
                for i, e in t.exponents.items():
                    entries.append((k, i, e))
            cptr.append(len(logc))
        self.logc = np.array(logc)
        self.cell_ptr = np.array(cptr)
        self.term_cell = np.array(term_cell, dtype=int)
        self.A = _build_sparse(entries, len(logc), n_vars)
        self.row_ptr = np.searchsorted(self.cell_row, np.arange(self.n_rows + 1))

    def _forward(self, w: np.ndarray):
        z = self.logc + self.A @ w
        theta, soft_in = _segment_lse(z, self.cell_ptr)
        fval, fp, _ = F_cool(w[self.cell_x])
        zc = theta + fval
        lse, soft_cell = _segment_lse(zc, self.row_ptr)
        return lse - w[self.gamma], (soft_in, soft_cell, fp)

    def values(self, w: np.ndarray) -> np.ndarray:
        g, _ = self._forward(w)
        return g

    def evaluate(self, w: np.ndarray):
        return self._forward(w)

    def weighted_grad(self, cache, d: np.ndarray) -> np.ndarray:
        soft_in, soft_cell, fp = cache
        s_cell = soft_cell * d[self.cell_row]
        grad = self.A.T @ (soft_in * s_cell[self.term_cell])
        grad += np.bincount(self.cell_x, weights=s_cell * fp, minlength=self.n_vars)
        grad[self.gamma] -= d.sum()
        return grad

    def row_view(self, k: int):
        cells = [c for c in self._cells if c[2] == k]
        rebased = [(p, x, 0) for p, x, _ in cells]
        return _ScalarView(EnergyBlock(self.n_vars, self.gamma, rebased))


@dataclass(frozen=True)
class _ScalarView:
    """Single-row block as a scalar LogConvexFn."""

    block: object

    def value(self, w: np.ndarray) -> float:
        return float(self.block.values(np.asarray(w, dtype=float))[0])

    def value_and_grad(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        w = np.asarray(w, dtype=float)
        g, cache = self.block.evaluate(w)
        grad = self.block.weighted_grad(cache, np.ones(1))
        return float(g[0]), grad


@dataclass(frozen=True)
class ConvexProgram:
    """Immutable convex program: objective, constraint blocks, box bounds."""

    layout: VariableLayout
    objective: object
    blocks: tuple
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n_vars(self) -> int:
        return self.layout.n_vars

    @property
    def n_constraints(self) -> int:
        return sum(b.n_rows for b in self.blocks)

    def constraint_values(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if not self.blocks:
            return np.empty(0)
        return np.concatenate([b.values(w) for b in self.blocks])

    def iter_constraints(self):
        """Scalar views of every constraint row, in stacking order."""
        for b in self.blocks:
            for r in range(b.n_rows):
                yield b.row_view(r)

    def with_pinned_x(self, x_value: float) -> "ConvexProgram":
        """Equal lower/upper bounds on every x(t); used by the static baseline."""
        lo, hi = self.lower.copy(), self.upper.copy()
        ids = self.layout.x_ids()
        if np.any(x_value < lo[ids] - 1e-12) or np.any(x_value > hi[ids] + 1e-12):
            raise UsageError("pinned value outside the supply-temperature box")
        lo[ids] = x_value
        hi[ids] = x_value
        return dataclasses.replace(self, lower=lo, upper=hi)


def _objective_gamma(layout: VariableLayout):
    return PosynomialLogFn(Posynomial([Monomial(1.0, {layout.gamma_id: 1.0})]), layout.n_vars)


def _objective_penalized(layout: VariableLayout, w_tc: float, w_m: np.ndarray):
    terms = [Monomial(1.0, {layout.gamma_id: 1.0})]
    terms += fluctuation_monomials(list(layout.x_ids()), w_tc)
    for j in range(layout.n_clusters):
        terms += fluctuation_monomials(list(layout.y_ids(j)), float(w_m[j]))
    return PosynomialLogFn(Posynomial(terms), layout.n_vars)


def _assemble(data: WindowData, scen_loads: np.ndarray, objective) -> ConvexProgram:
    """Shared constraint assembly over N load paths of shape (N, J, H)."""
    params = data.params
    if params.tc_min < TC_CONVEXITY_FLOOR:
        raise PreconditionError(
            f"tc_min={params.tc_min} < {TC_CONVEXITY_FLOOR}: cooling curve convexity "
            "is not guaranteed below that supply temperature"
        )
    layout = data.layout()
    n = layout.n_vars
    tau, steps = layout.tau, layout.steps

    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    lower[layout.x_ids()] = np.log(params.tc_min)
    upper[layout.x_ids()] = np.log(params.tc_max)
    # Delay bounds fold into variable lower bounds; with several load paths
    # the largest load at each (j, t) is binding.
    for j, cl in enumerate(params.clusters):
        worst = scen_loads[:, j, :].max(axis=0)
        lower[layout.y_ids(j)] = np.log(1.0 / cl.d_max + worst) - np.log(cl.mu)

    temp_rows = []
    for k in range(scen_loads.shape[0]):
        for j, cl in enumerate(params.clusters):
            for t in range(tau + 1, tau + steps + 1):
                p = cpu_temp_posynomial(j, t, tau, scen_loads[k], data.init, params, layout)
                temp_rows.append((p, -np.log(cl.t_cpu_max)))
    cells = []
    for k in range(scen_loads.shape[0]):
        for t in range(tau, tau + steps):
            cells.append(
                (it_power_posynomial(t, tau, scen_loads[k], params, layout), layout.x_id(t), k)
            )
    blocks = (
        PosynomialBlock(n, temp_rows),
        EnergyBlock(n, layout.gamma_id, cells),
    )
    return ConvexProgram(layout, objective, blocks, lower, upper)


def build_deterministic(data: WindowData) -> ConvexProgram:
    """Minimize gamma over one predicted window."""
    layout = data.layout()
    return _assemble(data, data.loads[None, :, :], _objective_gamma(layout))


def build_penalized(data: WindowData) -> ConvexProgram:
    """Same constraints, fluctuation-penalized objective.

    With zero weights the objective reduces to gamma exactly.
    """
    layout = data.layout()
    return _assemble(
        data, data.loads[None, :, :], _objective_penalized(layout, data.w_tc, data.w_m)
    )


def build_scenario(data: WindowData, scenarios) -> ConvexProgram:
    """Replicate temperature, delay, and energy constraints per sample path."""
    loads = np.asarray(scenarios.loads, dtype=float)
    if loads.ndim != 3 or loads.shape[0] < 1:
        raise UsageError("scenario set must contain at least one sample path")
    if loads.shape[1] != data.params.n_clusters or loads.shape[2] != data.t_h + 1:
        raise UsageError(
            f"scenario paths of shape {loads.shape[1:]} do not match "
            f"({data.params.n_clusters}, {data.t_h + 1})"
        )
    layout = data.layout()
    return _assemble(data, loads, _objective_penalized(layout, data.w_tc, data.w_m))


def decode(w: np.ndarray, layout: VariableLayout) -> tuple[ControlInput, float]:
    """Map a log-space solution back to (Tc, m) sequences and gamma."""
    w = np.asarray(w, dtype=float)
    if w.shape != (layout.n_vars,):
        raise UsageError(f"solution length {w.shape} does not match layout ({layout.n_vars},)")
    if not np.all(np.isfinite(w)):
        raise DomainError("solution vector must be finite")
    tc = np.exp(w[layout.x_ids()])
    m = np.vstack([np.exp(w[layout.y_ids(j)]) for j in range(layout.n_clusters)])
    return ControlInput(tc=tc, m=m), float(w[layout.gamma_id])
