"""Monomial/posynomial algebra with exact log-space evaluation.

A posynomial sum(c_k * prod_i v_i^(a_ki)) with positive coefficients becomes,
after v = exp(w), the log-sum-exp of affine functions of w, which is convex
and smooth. This module provides that algebra, the builder that unrolls the
CPU-temperature recursion into a posynomial of the window's decision
variables, the pairwise-ratio fluctuation penalty, the special convex curve
F(x) = log(1 + 1/cop(e^x)) with closed-form first and second derivatives, and
the quintic whose sign certifies where F is convex.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .errors import DomainError, UsageError
from .model import COP_CONST, COP_LIN, COP_QUAD, PlantParams, SystemState


@dataclass(frozen=True)
class Monomial:
    """c * prod_i v_i^(a_i) with c > 0; exponents are sparse, keyed by variable id."""

    coeff: float
    exponents: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.coeff > 0:
            raise DomainError("monomial coefficient must be positive")
        object.__setattr__(
            self, "exponents", {int(i): float(a) for i, a in self.exponents.items() if a != 0.0}
        )

    @property
    def n_vars(self) -> int:
        return 1 + max(self.exponents, default=-1)


class Posynomial:
    """A nonempty sum of monomials; immutable after construction."""

    __slots__ = ("terms",)

    def __init__(self, terms: Iterable[Monomial]):
        terms = tuple(terms)
        if not terms:
            raise DomainError("a posynomial needs at least one term")
        object.__setattr__(self, "terms", terms)

    def __setattr__(self, name, value):
        raise AttributeError("Posynomial is immutable")

    def __add__(self, other: "Posynomial") -> "Posynomial":
        return Posynomial(self.terms + other.terms)

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def n_vars(self) -> int:
        return max(t.n_vars for t in self.terms)

    def arrays(self, n_vars: int | None = None):
        """Dense (logc, A) with one row per term; A[k, i] is the exponent."""
        n = self.n_vars if n_vars is None else n_vars
        logc = np.array([np.log(t.coeff) for t in self.terms])
        a = np.zeros((len(self.terms), n))
        for k, t in enumerate(self.terms):
            for i, e in t.exponents.items():
                a[k, i] = e
        return logc, a


def posy_eval(p: Posynomial, v) -> float:
    """Evaluate at a strictly positive point, term by term."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise DomainError("posynomials are evaluated at strictly positive points")
    total = 0.0
    for t in p.terms:
        val = t.coeff
        for i, a in t.exponents.items():
            val *= v[i] ** a
        total += val
    return float(total)


def posy_log_eval(p: Posynomial, w) -> tuple[float, np.ndarray]:
    """Value and gradient of log p(exp(w)).

    The value is a max-shifted log-sum-exp of the affine terms
    log(c_k) + a_k . w; the gradient is the softmax-weighted combination of
    the exponent vectors, which is exact for smooth posynomials.
    """
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if not np.all(np.isfinite(w)):
        raise DomainError("log-space point must be finite")
    logc, a = p.arrays(len(w))
    z = logc + a @ w
    zmax = z.max()
    ez = np.exp(z - zmax)
    s = ez.sum()
    value = zmax + np.log(s)
    grad = (ez / s) @ a
    return float(value), grad


class LogConvexFn(Protocol):
    """Smooth convex function of a log-space point, with analytic gradient."""

    def value(self, w: np.ndarray) -> float: ...

    def value_and_grad(self, w: np.ndarray) -> tuple[float, np.ndarray]: ...


@dataclass(frozen=True)
class PosynomialLogFn:
    """log p(exp(w)) + offset as a LogConvexFn over n_vars variables."""

    posy: Posynomial
    n_vars: int
    offset: float = 0.0

    def value(self, w: np.ndarray) -> float:
        val, _ = posy_log_eval(self.posy, np.asarray(w)[: self.n_vars])
        return val + self.offset

    def value_and_grad(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        w = np.asarray(w, dtype=float)
        val, g = posy_log_eval(self.posy, w[: self.n_vars])
        grad = np.zeros_like(w)
        grad[: self.n_vars] = g
        return val + self.offset, grad


@dataclass(frozen=True)
class WindowIndexMap:
    """Canonical variable ids for one window: x(t), then y_j(t), then gamma.

    The optimization layer builds its own layout with the same ordering; this
    default makes the posynomial builders usable standalone.
    """

    tau: int
    steps: int
    n_clusters: int

    def _check(self, t: int):
        if not self.tau <= t < self.tau + self.steps:
            raise UsageError(f"time {t} outside window [{self.tau}, {self.tau + self.steps - 1}]")

    def x_id(self, t: int) -> int:
        self._check(t)
        return t - self.tau

    def y_id(self, j: int, t: int) -> int:
        self._check(t)
        if not 0 <= j < self.n_clusters:
            raise UsageError(f"cluster index {j} out of range")
        return self.steps * (1 + j) + (t - self.tau)

    @property
    def gamma_id(self) -> int:
        return self.steps * (self.n_clusters + 1)

    @property
    def n_vars(self) -> int:
        return self.steps * (self.n_clusters + 1) + 1


def cpu_temp_posynomial(
    j: int,
    t: int,
    tau: int,
    loads,
    state: SystemState,
    params: PlantParams,
    index_map=None,
) -> Posynomial:
    """CPU temperature of cluster j at time t as a posynomial of the inputs.

    Unrolls T(t) = alpha*Tc(s) + sigma*p(s) + beta*T(s) from the initial
    temperature T(tau): a constant beta^(t-tau) * T_j(tau) term (with the
    accumulated sigma*a2 heat folded in), one beta-weighted term per Tc(s),
    and one per L_j(s)/m_j(s). Inputs at s = tau .. t-1 appear, so t may
    reach tau + window length. Zero loads contribute no m term.
    """
    loads = np.atleast_2d(np.asarray(loads, dtype=float))
    n_steps = loads.shape[1]
    if loads.shape[0] != params.n_clusters:
        raise UsageError("loads row count must match the cluster count")
    if not tau <= t <= tau + n_steps:
        raise UsageError(f"target time {t} outside [{tau}, {tau + n_steps}] for this window")
    if not 0 <= j < params.n_clusters:
        raise UsageError(f"cluster index {j} out of range")
    if state.t_cpu.shape[0] != params.n_clusters:
        raise UsageError("state does not match the cluster count")
    idx = index_map if index_map is not None else WindowIndexMap(tau, n_steps, params.n_clusters)

    cl = params.clusters[j]
    a1, a2 = params.power.a1, params.power.a2
    const = cl.beta ** (t - tau) * float(state.t_cpu[j])
    terms: list[Monomial] = []
    for s in range(tau, t):
        w = cl.beta ** (t - 1 - s)
        terms.append(Monomial(w * cl.alpha, {idx.x_id(s): 1.0}))
        load = float(loads[j, s - tau])
        if load > 0:
            terms.append(Monomial(w * a1 * cl.sigma * load, {idx.y_id(j, s): -1.0}))
        const += w * a2 * cl.sigma
    terms.append(Monomial(const))
    return Posynomial(terms)


def it_power_posynomial(
    t: int, tau: int, loads, params: PlantParams, index_map=None
) -> Posynomial:
    """Total IT power at time t, sum_j (a1*L_j(t) + a2*m_j(t)), in the window variables."""
    loads = np.atleast_2d(np.asarray(loads, dtype=float))
    n_steps = loads.shape[1]
    if not tau <= t < tau + n_steps:
        raise UsageError(f"time {t} outside window [{tau}, {tau + n_steps - 1}]")
    idx = index_map if index_map is not None else WindowIndexMap(tau, n_steps, params.n_clusters)
    a1, a2 = params.power.a1, params.power.a2
    terms = [Monomial(a2, {idx.y_id(j, t): 1.0}) for j in range(params.n_clusters)]
    base = a1 * float(loads[:, t - tau].sum())
    if base > 0:
        terms.append(Monomial(base))
    return Posynomial(terms)


def fluctuation_penalty(xi) -> float:
    """Sum of adjacent ratio pairs xi_i/xi_{i+1} + xi_{i+1}/xi_i.

    Minimum 2*(n-1), attained exactly when all entries are equal; invariant
    under uniform scaling. Sequences shorter than 2 are rejected.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.size < 2:
        raise UsageError("fluctuation penalty needs at least two entries")
    if np.any(xi <= 0):
        raise DomainError("fluctuation penalty is defined for positive sequences")
    r = xi[:-1] / xi[1:]
    return float(np.sum(r + 1.0 / r))


def fluctuation_monomials(var_ids: Sequence[int], weight: float) -> list[Monomial]:
    """Monomials of weight * V(exp(w[ids])); empty for zero weight or < 2 ids."""
    if weight < 0:
        raise DomainError("fluctuation weight must be nonnegative")
    if weight == 0:
        return []
    out = []
    for a, b in zip(var_ids[:-1], var_ids[1:]):
        out.append(Monomial(weight, {a: 1.0, b: -1.0}))
        out.append(Monomial(weight, {b: 1.0, a: -1.0}))
    return out


def F_cool(x):
    """Value, first, and second derivative of F(x) = log(1 + 1/cop(e^x)).

    Derivatives come from closed-form differentiation of
    log(1 + g) - log(g) with g(x) = cop(e^x). Accepts scalars or arrays.
    F is convex wherever the certificate quintic q_poly is positive, in
    particular on [log(11), inf).
    """
    x = np.asarray(x, dtype=float)
    t = np.exp(x)
    g = COP_QUAD * t * t + COP_LIN * t + COP_CONST
    gp = (2.0 * COP_QUAD * t + COP_LIN) * t  # dg/dx
    gpp = (4.0 * COP_QUAD * t + COP_LIN) * t  # d2g/dx2
    inv_g = 1.0 / g
    inv_1g = 1.0 / (1.0 + g)
    val = np.log1p(inv_g)
    d1 = gp * (inv_1g - inv_g)
    d2 = gpp * (inv_1g - inv_g) + gp * gp * (inv_g * inv_g - inv_1g * inv_1g)
    if x.ndim == 0:
        return float(val), float(d1), float(d2)
    return val, d1, d2


# Coefficients of the convexity-certificate quintic, highest degree first.
# F''(log T) has the sign of q(T) for T > 0; q is positive on [11, inf).
Q_COEFFS = (9826, 2023, 136, -81426, -141899850, -4173525)


def q_poly(t):
    """Evaluate the certificate quintic by Horner's rule.

    Integer inputs stay exact (Python integer arithmetic); arrays and floats
    evaluate in float64.
    """
    if isinstance(t, (int, np.integer)):
        acc = 0
        for c in Q_COEFFS:
            acc = acc * int(t) + c
        return acc
    t = np.asarray(t, dtype=float)
    acc = np.zeros_like(t)
    for c in Q_COEFFS:
        acc = acc * t + c
    return float(acc) if acc.ndim == 0 else acc
