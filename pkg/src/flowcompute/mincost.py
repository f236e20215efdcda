"""Network-wide MinCost: choose per-node processing factors to minimize total delay.

The routing matrix ``P[v_from, v_to]`` is row-stochastic with slack, so the
flow arriving at ``v`` is ``lambda_v = beta_v + sum_u gamma_u P[u, v]``, i.e.
``lambda = beta + P.T @ gamma``.

The solver alternates that traffic update with an exact one-dimensional
minimization of every node's delay ``W_v(gamma_v)`` over its feasible box
``[max(G lambda_v, floors), lambda_v]``, holding ``lambda`` fixed. Its fixed
point satisfies the per-node KKT system of the Lagrangian
``sum W + xi (gamma - lambda) + zeta (gamma_lb - gamma)`` at ``lambda*``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import ConvergenceError, CostPoleError, FlowComputeError, InfeasibleError
from .flowlaws import NodeClassState, entropy_bracket, queue_fixed_point
from .model import Complexity, FlowAssignment, FunctionClass, NetworkSpec

EPS_MU = 1e-9          # communication pole guard, relative to mu
SINGULAR_COND = 1e12


class CostModel(str, enum.Enum):
    SEARCH_CONCAVE = "search"
    MAPREDUCE_LINEAR = "mapreduce"
    CLASSIFICATION_CONVEX = "classification"
    COMPLEXITY = "complexity"   # d_f(M)/lambda with M from the queue fixed point


def cost_model_for(fc: FunctionClass) -> CostModel:
    return {
        Complexity.SEARCH: CostModel.SEARCH_CONCAVE,
        Complexity.MAPREDUCE: CostModel.MAPREDUCE_LINEAR,
        Complexity.CLASSIFICATION: CostModel.CLASSIFICATION_CONVEX,
    }.get(fc.complexity, CostModel.COMPLEXITY)


# ------------------------------------------------------------- node costs

def _comp_cost(model: CostModel, lam: float, mu: float, k: float, gamma: float,
               fc: FunctionClass | None = None, surjectivity: float = 0.0) -> float:
    excess = lam - gamma
    if model is CostModel.SEARCH_CONCAVE:
        return (1.0 + k * math.log1p(excess / mu)) / mu
    if model is CostModel.MAPREDUCE_LINEAR:
        return (1.0 + k * excess / mu) / mu
    if model is CostModel.CLASSIFICATION_CONVEX:
        denom = mu - k * excess
        if denom <= 0:
            raise CostPoleError(f"mu - k (lambda - gamma) = {denom:.6g} <= 0")
        return 1.0 / denom
    s = NodeClassState(lam, mu, surjectivity, fc)
    m = queue_fixed_point(s, gamma).m_queue
    return fc.d_f(m) / lam


def _comp_cost_slope(model: CostModel, lam: float, mu: float, k: float, gamma: float,
                     fc: FunctionClass | None = None, surjectivity: float = 0.0) -> float:
    excess = lam - gamma
    if model is CostModel.SEARCH_CONCAVE:
        return -k / (mu * (mu + excess))
    if model is CostModel.MAPREDUCE_LINEAR:
        return -k / (mu * mu)
    if model is CostModel.CLASSIFICATION_CONVEX:
        denom = mu - k * excess
        if denom <= 0:
            raise CostPoleError(f"mu - k (lambda - gamma) = {denom:.6g} <= 0")
        return -k / (denom * denom)
    h = 1e-6 * max(mu, 1e-12)
    lo, hi = max(0.0, gamma - h), min(mu * (1 - EPS_MU), gamma + h)
    return (_comp_cost(model, lam, mu, k, hi, fc, surjectivity)
            - _comp_cost(model, lam, mu, k, lo, fc, surjectivity)) / (hi - lo)


def computation_cost(model: CostModel | str, s: NodeClassState, gamma: float,
                     k: float | None = None) -> float:
    """Computation delay of ``s`` at processing factor ``gamma``.

    All explicit models return ``1/mu`` at ``gamma = lambda`` and as ``k -> 0``.
    """
    model = CostModel(model)
    if not 0.0 <= gamma <= s.lam:
        raise ValueError(f"gamma={gamma} outside [0, lambda={s.lam}]")
    k = s.complexity.k if k is None else k
    return _comp_cost(model, s.lam, s.mu, k, gamma, s.complexity, s.surjectivity)


def node_delay(model: CostModel | str, s: NodeClassState, gamma: float, k: float | None = None) -> float:
    if gamma >= s.mu:
        return math.inf
    return computation_cost(model, s, gamma, k) + 1.0 / (s.mu - gamma)


class ClosedForm(NamedTuple):
    unclipped: float
    clipped: float
    active: str | None      # "lower", "upper" or None


def _clip(x: float, lower: float, upper: float) -> ClosedForm:
    if x >= upper:
        return ClosedForm(x, upper, "upper")
    if x <= lower:
        return ClosedForm(x, lower, "lower")
    return ClosedForm(x, x, None)


def closed_form_linear_optimum(s: NodeClassState, k: float | None = None,
                               lower: float | None = None) -> ClosedForm:
    """Stationary point ``mu (1 - 1/sqrt(k))`` of the linear model, clipped to ``[lower, lambda]``."""
    k = s.complexity.k if k is None else k
    lower = s.surjectivity * s.lam if lower is None else lower
    return _clip(s.mu * (1.0 - 1.0 / math.sqrt(k)), lower, s.lam)


def closed_form_convex_optimum(s: NodeClassState, k: float | None = None,
                               lower: float | None = None) -> ClosedForm:
    """Stationary point ``(mu (sqrt(k) - 1) + k lambda) / (k + sqrt(k))`` of the convex model.

    Equals ``lambda / 2`` at ``k = 1``.
    """
    k = s.complexity.k if k is None else k
    lower = s.surjectivity * s.lam if lower is None else lower
    if s.mu - k * (s.lam - lower) <= 0:
        raise CostPoleError("cost pole mu = k (lambda - gamma) lies inside the search interval")
    rk = math.sqrt(k)
    return _clip((s.mu * (rk - 1.0) + k * s.lam) / (k + rk), lower, s.lam)


# --------------------------------------------------------- traffic algebra

def _class_arrays(spec: NetworkSpec, c):
    ci = spec.class_index(c)
    fc = spec.classes[ci]
    if fc.surjectivity is None:
        raise FlowComputeError(f"class {fc.id!r} has unresolved 'auto' surjectivity")
    return ci, fc, spec.routing[ci], spec.external_arrivals()[ci], spec.service_rate[ci]


def _solve(M: np.ndarray, b: np.ndarray, what: str, cls: str) -> np.ndarray:
    if np.linalg.cond(M) > SINGULAR_COND:
        raise InfeasibleError(f"{what}: routing system is singular", cls=cls)
    return np.linalg.solve(M, b)


def traffic_fixed_point(P: np.ndarray, beta: np.ndarray, gain: float,
                        tol: float = 1e-15, max_iter: int = 1_000_000) -> np.ndarray:
    """Iterate ``x <- gain * (beta + P.T x)`` from zero until it settles."""
    x = np.zeros_like(beta, dtype=float)
    PT = P.T
    for _ in range(max_iter):
        nxt = gain * (beta + PT @ x)
        if np.max(np.abs(nxt - x)) <= tol * max(1.0, np.max(np.abs(nxt))):
            return nxt
        x = nxt
    raise ConvergenceError("traffic fixed point did not settle", best_value=float(np.max(x)))


def gamma_lower_bound_vector(spec: NetworkSpec, c, crosscheck: bool = True) -> np.ndarray:
    """Mandatory emitted flow ``(I - G P^T)^{-1} beta G`` for surjectivity ``G``."""
    ci, fc, P, beta, _ = _class_arrays(spec, c)
    G = fc.surjectivity
    n = spec.node_count
    gamma = _solve(np.eye(n) - G * P.T, G * beta, "gamma lower bound", fc.id)
    if crosscheck:
        it = traffic_fixed_point(P, beta, G)
        if np.max(np.abs(it - gamma)) > 1e-9 * max(1.0, np.max(np.abs(gamma))):
            raise FlowComputeError("linear solve and fixed-point iteration disagree for the gamma bound")
    return gamma


def lambda_interval(spec: NetworkSpec, c) -> tuple[np.ndarray, np.ndarray]:
    """Range of arrival rates between full compression and pure relay."""
    ci, fc, P, beta, _ = _class_arrays(spec, c)
    n = spec.node_count
    lam_min = _solve(np.eye(n) - fc.surjectivity * P.T, beta, "lambda lower bound", fc.id)
    lam_max = _solve(np.eye(n) - P.T, beta, "lambda upper bound", fc.id)
    return lam_min, lam_max


def effective_computation_condition(spec: NetworkSpec, c, lam: np.ndarray) -> np.ndarray:
    """Elementwise ``beta < (I - G P^T) lambda / G``: computation can cut the flow."""
    ci, fc, P, beta, _ = _class_arrays(spec, c)
    G = fc.surjectivity
    if G == 0:
        return np.ones_like(beta, dtype=bool)
    return beta < (lam - G * (P.T @ lam)) / G


# ------------------------------------------------------------------ solver

@dataclass
class MinCostProblem:
    spec: NetworkSpec
    cost_models: Mapping[str, CostModel] = field(default_factory=dict)
    entropy_floor: bool = True

    def model_for(self, fc: FunctionClass) -> CostModel:
        return CostModel(self.cost_models.get(fc.id, cost_model_for(fc)))


@dataclass
class MinCostSolution:
    assignment: FlowAssignment
    objective: float
    relay_objective: float
    stationarity: np.ndarray
    cs_upper: np.ndarray
    cs_lower: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray
    gamma_floor: np.ndarray
    gamma_lb: np.ndarray          # fixed-point bound, per class
    active: list[list[str]]
    effective: np.ndarray
    iterations: int
    converged: bool
    trace: list[float]
    class_ids: list[str]
    models: list[CostModel]

    @property
    def normalized(self) -> float:
        if not math.isfinite(self.relay_objective) or self.relay_objective <= 0:
            return math.nan
        return self.objective / self.relay_objective

    @property
    def max_stationarity(self) -> float:
        return float(np.max(self.stationarity, initial=0.0))

    @property
    def max_slackness(self) -> float:
        return float(max(np.max(self.cs_upper, initial=0.0), np.max(self.cs_lower, initial=0.0)))

    def rows(self) -> list[dict]:
        a = self.assignment
        out = []
        for ci, cid in enumerate(self.class_ids):
            for v in range(a.lam.shape[1]):
                out.append({
                    "class": cid, "node": v,
                    "lambda": a.lam[ci, v], "gamma": a.gamma[ci, v], "rho": a.rho[ci, v],
                    "M": a.m_queue[ci, v], "L": a.l_total[ci, v], "W": a.delay[ci, v],
                    "gamma_floor": self.gamma_floor[ci, v], "active": self.active[ci][v] or "",
                    "xi": self.xi[ci, v], "zeta": self.zeta[ci, v],
                })
        return out


class _NodeCost:
    """Delay of one node/class as a function of gamma at fixed lambda."""

    def __init__(self, model: CostModel, lam: float, mu: float, fc: FunctionClass, surjectivity: float):
        self.model, self.lam, self.mu, self.fc, self.G, self.k = model, lam, mu, fc, surjectivity, fc.k

    def value(self, g: float) -> float:
        if g >= self.mu:
            return math.inf
        try:
            comp = _comp_cost(self.model, self.lam, self.mu, self.k, g, self.fc, self.G)
        except CostPoleError:
            return math.inf
        return comp + 1.0 / (self.mu - g)

    def slope(self, g: float) -> float:
        return (_comp_cost_slope(self.model, self.lam, self.mu, self.k, g, self.fc, self.G)
                + 1.0 / (self.mu - g) ** 2)

    def box(self, floor: float) -> tuple[float, float]:
        lo = floor
        hi = min(self.lam, self.mu * (1.0 - EPS_MU))
        if self.model is CostModel.CLASSIFICATION_CONVEX:
            lo = max(lo, self.lam - self.mu / self.k + EPS_MU * self.mu)
        return lo, hi

    def argmin(self, lo: float, hi: float) -> float:
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            return hi
        if self.model is CostModel.COMPLEXITY:
            return self._argmin_scan(lo, hi)
        d_lo, d_hi = self.slope(lo), self.slope(hi)
        if d_lo >= 0:
            return lo
        if d_hi <= 0:
            return hi
        return brentq(self.slope, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=500)

    def _argmin_scan(self, lo: float, hi: float) -> float:
        grid = np.linspace(lo, hi, 65)
        vals = [self.value(g) for g in grid]
        i = int(np.argmin(vals))
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        res = minimize_scalar(self.value, bounds=(a, b), method="bounded",
                              options={"xatol": 1e-13 * max(1.0, hi)})
        return float(res.x) if res.fun <= vals[i] else float(grid[i])


def _entropy_floor(fc: FunctionClass, mu: float) -> float:
    return 0.0 if fc.h_func is None else mu * entropy_bracket(fc.h_func)


def _solve_class(problem: MinCostProblem, ci: int, tol: float, max_iter: int):
    spec = problem.spec
    fc = spec.classes[ci]
    if fc.surjectivity is None:
        raise FlowComputeError(f"class {fc.id!r} has unresolved 'auto' surjectivity")
    model = problem.model_for(fc)
    G = fc.surjectivity
    P = spec.routing[ci]
    PT = P.T
    beta = spec.external_arrivals()[ci]
    mu = spec.service_rate[ci]
    n = spec.node_count
    efloor = (np.array([_entropy_floor(fc, m) for m in mu]) if problem.entropy_floor
              else np.zeros(n))

    gamma = gamma_lower_bound_vector(spec, ci, crosscheck=False)
    trace = []
    converged = False
    lam = beta + PT @ gamma
    for it in range(1, max_iter + 1):
        lam = beta + PT @ gamma
        new = np.empty(n)
        for v in range(n):
            if lam[v] <= 0:
                new[v] = 0.0
                continue
            node = _NodeCost(model, lam[v], mu[v], fc, G)
            lo, hi = node.box(max(G * lam[v], efloor[v]))
            if lo > hi + 1e-12 * max(1.0, hi):
                raise InfeasibleError(
                    f"class {fc.id}, node {v}: empty box, floor {lo:.6g} > ceiling {hi:.6g}",
                    node=v, cls=fc.id)
            new[v] = node.argmin(min(lo, hi), hi)
        change = float(np.max(np.abs(new - gamma))) if n else 0.0
        trace.append(change)
        gamma = new
        if change <= tol * max(1.0, float(np.max(np.abs(gamma), initial=0.0))):
            converged = True
            break
    for v in range(n):
        if lam[v] >= mu[v]:
            raise InfeasibleError(f"class {fc.id}, node {v}: load lambda/mu = {lam[v] / mu[v]:.6g} >= 1",
                                  node=v, cls=fc.id)
    return model, lam, gamma, efloor, it, converged, trace


def solve_mincost(problem: MinCostProblem, tol: float = 1e-12, max_iter: int = 10_000,
                  strict: bool = True) -> MinCostSolution:
    """Solve MinCost for every class and report the KKT certificate.

    Classes are independent (packets never change class), so each class is
    solved on its own. With ``strict`` a non-converged class raises
    :class:`ConvergenceError` carrying the change trace; otherwise the
    solution is returned with ``converged=False``.
    """
    spec = problem.spec
    C, n = len(spec.classes), spec.node_count
    shape = (C, n)
    lam_all, gam_all, mu_all = np.zeros(shape), np.zeros(shape), spec.service_rate.copy()
    W, L, M = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    stat, csu, csl = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    xi, zeta, floor = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    lb = np.zeros(shape)
    effective = np.zeros(shape, dtype=bool)
    active = [[None] * n for _ in range(C)]
    objective, relay_objective = 0.0, 0.0
    iterations, converged, traces, models = 0, True, [], []

    for ci, fc in enumerate(spec.classes):
        model, lam, gamma, efloor, it, ok, trace = _solve_class(problem, ci, tol, max_iter)
        models.append(model)
        iterations = max(iterations, it)
        traces.extend(trace)
        if not ok:
            converged = False
            if strict:
                raise ConvergenceError(f"class {fc.id}: no convergence in {max_iter} outer iterations",
                                       best_value=None, gap=trace[-1], trace=trace[-50:])
        G = fc.surjectivity
        lam_all[ci], gam_all[ci] = lam, gamma
        lb[ci] = gamma_lower_bound_vector(spec, ci, crosscheck=False)
        effective[ci] = effective_computation_condition(spec, ci, lam)
        for v in range(n):
            if lam[v] <= 0:
                continue
            node = _NodeCost(model, lam[v], spec.service_rate[ci, v], fc, G)
            lo, hi = node.box(max(G * lam[v], efloor[v]))
            floor[ci, v] = max(G * lam[v], efloor[v])
            g = gamma[v]
            w = node.value(g)
            W[ci, v] = w
            L[ci, v] = g * w
            M[ci, v] = L[ci, v] * (1.0 - g / lam[v])
            objective += w
            d = node.slope(g)
            atol = 1e-12 * max(1.0, hi)
            at_hi, at_lo = g >= hi - atol, g <= lo + atol
            x = z = 0.0
            if at_hi and at_lo:
                x, z = max(0.0, -d), max(0.0, d)
                active[ci][v] = "both"
            elif at_hi:
                x = max(0.0, -d)
                active[ci][v] = "upper"
            elif at_lo:
                z = max(0.0, d)
                active[ci][v] = "lower"
            xi[ci, v], zeta[ci, v] = x, z
            stat[ci, v] = abs(d + x - z)
            csu[ci, v] = abs(x * (g - lam[v]))
            csl[ci, v] = abs(z * (floor[ci, v] - g))
        relay_objective += _relay_cost(spec, ci, model)

    assignment = FlowAssignment(lam_all, gam_all, mu_all, M, L, W)
    return MinCostSolution(assignment, objective, relay_objective, stat, csu, csl, xi, zeta,
                           floor, lb, active, effective, iterations, converged, traces,
                           spec.class_ids, models)


def _relay_cost(spec: NetworkSpec, ci: int, model: CostModel) -> float:
    """Total delay with every node forwarding its full arrival flow."""
    fc = spec.classes[ci]
    n = spec.node_count
    P, beta, mu = spec.routing[ci], spec.external_arrivals()[ci], spec.service_rate[ci]
    lam = _solve(np.eye(n) - P.T, beta, "relay flow", fc.id)
    total = 0.0
    for v in range(n):
        if lam[v] <= 0:
            continue
        if lam[v] >= mu[v]:
            return math.inf
        total += _NodeCost(model, lam[v], mu[v], fc, fc.surjectivity or 0.0).value(lam[v])
    return total


class ProbeAudit(NamedTuple):
    probes: int
    improving: int
    best_improvement: float


def random_probe_audit(problem: MinCostProblem, sol: MinCostSolution, probes: int = 1000,
                       seed: int = 0, rel_tol: float = 1e-12) -> ProbeAudit:
    """Evaluate the objective at random feasible perturbations of the solution.

    Perturbations move each ``gamma_v`` inside its KKT box at the solution's
    arrival rates; half are local (Gaussian, a few percent of the box width),
    half uniform over the box. Counts probes whose objective beats the
    solution by more than ``rel_tol`` relative.
    """
    spec = problem.spec
    rng = np.random.default_rng(seed)
    nodes, boxes, base = [], [], []
    for ci, fc in enumerate(spec.classes):
        model = sol.models[ci]
        for v in range(spec.node_count):
            lam = sol.assignment.lam[ci, v]
            if lam <= 0:
                continue
            node = _NodeCost(model, lam, spec.service_rate[ci, v], fc, fc.surjectivity)
            lo, hi = node.box(sol.gamma_floor[ci, v])
            nodes.append(node)
            boxes.append((lo, hi))
            base.append(sol.assignment.gamma[ci, v])
    base = np.array(base)
    lo = np.array([b[0] for b in boxes])
    hi = np.array([b[1] for b in boxes])
    ref = sum(nd.value(g) for nd, g in zip(nodes, base))
    improving, best = 0, 0.0
    for i in range(probes):
        if i % 2 == 0:
            trial = base + rng.normal(scale=0.03, size=base.size) * np.maximum(hi - lo, 1e-12)
        else:
            trial = rng.uniform(lo, hi)
        trial = np.clip(trial, lo, hi)
        val = sum(nd.value(g) for nd, g in zip(nodes, trial))
        gain = ref - val
        if gain > rel_tol * max(1.0, abs(ref)):
            improving += 1
        best = max(best, gain)
    return ProbeAudit(probes, improving, best)


def with_class_overrides(spec: NetworkSpec, **overrides) -> NetworkSpec:
    """Copy of ``spec`` with ``k`` and/or ``surjectivity`` replaced on every class."""
    from dataclasses import replace
    return spec.with_classes([replace(fc, **overrides) for fc in spec.classes])
