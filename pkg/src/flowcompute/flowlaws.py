"""Closed-form per-node laws: delay split, Little's law, flow bounds, thresholds.

Every function looks at one node and one class in isolation, which is what
the product-form assumption on the network permits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .errors import (ConvergenceError, DegenerateComplexityError, InstabilityError,
                     SurjectiveFunctionError)
from .model import FunctionClass


@dataclass(frozen=True)
class NodeClassState:
    lam: float
    mu: float
    surjectivity: float
    complexity: FunctionClass
    h_func: float = 0.0
    h_source: float = 1.0

    def __post_init__(self):
        if not self.lam > 0 or not self.mu > 0:
            raise ValueError(f"rates must be positive (lambda={self.lam}, mu={self.mu})")
        if not 0.0 <= self.surjectivity <= 1.0:
            raise ValueError(f"surjectivity {self.surjectivity} outside [0, 1]")
        if self.h_func < 0 or not self.h_source > 0:
            raise ValueError("need h_func >= 0 and h_source > 0")
        if self.h_func > self.h_source + 1e-12:
            raise ValueError("graph entropy of the function exceeds the source entropy")

    @property
    def rho(self) -> float:
        return self.lam / self.mu

    def d_f(self, m: float) -> float:
        return self.complexity.d_f(m)

    def require_stable(self):
        if self.rho >= 1.0:
            raise InstabilityError(f"load rho={self.rho:.6g} is not below 1")


class DelayComponents(NamedTuple):
    comp: float
    comm: float
    total: float


def delay_components(s: NodeClassState, gamma: float, m: float) -> DelayComponents:
    """Computation delay ``d_f(m)/lambda``, communication delay ``1/(mu - gamma)``."""
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    if gamma >= s.mu:
        raise InstabilityError(f"gamma={gamma} >= mu={s.mu}: communication queue diverges")
    comp = s.d_f(m) / s.lam
    comm = 1.0 / (s.mu - gamma)
    return DelayComponents(comp, comm, comp + comm)


class QueueContents(NamedTuple):
    l_total: float
    m_queue: float
    delay: float


def little_queue_length(s: NodeClassState, gamma: float, m: float) -> QueueContents:
    """``L = gamma W`` and ``M = L (1 - gamma/lambda)`` for a given ``m``."""
    W = delay_components(s, gamma, m).total
    L = gamma * W
    return QueueContents(L, L * (1.0 - gamma / s.lam), W)


def queue_fixed_point(s: NodeClassState, gamma: float, damping: float = 0.5,
                      tol: float = 1e-9, max_iter: int = 1000) -> QueueContents:
    """Resolve ``M = L(M) (1 - gamma/lambda)`` by damped iteration."""
    m = 0.0
    trace = []
    for _ in range(max_iter):
        target = little_queue_length(s, gamma, m).m_queue
        nxt = (1.0 - damping) * m + damping * target
        trace.append(nxt)
        if not math.isfinite(nxt):
            break
        if abs(nxt - m) < tol:
            return little_queue_length(s, gamma, nxt)
        m = nxt
    raise ConvergenceError("queue content fixed point did not converge",
                           best_value=m, gap=abs(trace[-1] - m) if trace else None, trace=trace[-20:])


def entropy_bracket(h: float) -> float:
    """``h/2 + 1 - sqrt(h^2/4 + 1)``; lies in [0, 1) and tends to 1."""
    # rationalized form avoids cancellation for large h
    return h / (h / 2.0 + 1.0 + math.sqrt(h * h / 4.0 + 1.0))


def flow_bounds(s: NodeClassState) -> tuple[float, float]:
    """Lower bound on L from the function's graph entropy, upper from pure relay."""
    s.require_stable()
    lower = entropy_bracket(s.h_func)
    upper = s.lam / (s.mu * (1.0 - s.rho))
    return lower, upper


def gamma_floor_from_entropy(s: NodeClassState) -> float:
    """Smallest processing factor compatible with recovering the function."""
    return s.mu * entropy_bracket(s.h_func)


def stability_check(s: NodeClassState, m: float) -> bool:
    if m < 0:
        raise ValueError("m must be nonnegative")
    return s.d_f(m) > m


def appendix_assumption_holds(s: NodeClassState, m: float) -> bool:
    """Whether ``d_f(m)/lambda >= 1/mu``; reported, not enforced."""
    return s.d_f(m) / s.lam >= 1.0 / s.mu


@dataclass(frozen=True)
class ProcessingRoots:
    a: float
    low: float | None
    high: float | None
    feasible: list[tuple[float, float]]   # half-open intervals [lo, hi)


def processing_factor_roots(s: NodeClassState, m: float) -> ProcessingRoots:
    """Roots of ``gamma^2 - 2a gamma + lambda mu`` with ``2a = lambda + mu + lambda/d_f(m)``.

    The quadratic is nonnegative outside the roots; that set is intersected
    with the physical range ``[surjectivity * lambda, min(lambda, mu))``.
    """
    d = s.d_f(m)
    if d <= 0:
        raise DegenerateComplexityError(f"d_f({m}) = {d}: the coefficient a is undefined")
    a = 0.5 * (s.lam + s.mu + s.lam / d)
    lo, hi = s.surjectivity * s.lam, min(s.lam, s.mu)
    disc = a * a - s.lam * s.mu
    if disc < 0:
        return ProcessingRoots(a, None, None, [(lo, hi)] if lo < hi else [])
    root = math.sqrt(disc)
    high = a + root
    low = s.lam * s.mu / high  # Vieta, stable for small roots
    feasible = []
    if lo <= low and lo < hi:
        feasible.append((lo, min(low, hi)))
    if high < hi:
        feasible.append((max(high, lo), hi))
    return ProcessingRoots(a, low, high, feasible)


def relaxed_threshold(d: float) -> float:
    """Load above which computing beats relaying: ``sqrt((d/2)^2 + d) - d/2``."""
    if d < 0:
        raise ValueError("complexity must be nonnegative")
    if math.isinf(d):
        return 1.0
    # rationalized form: d / (sqrt(d^2/4 + d) + d/2)
    return 0.0 if d == 0 else d / (math.sqrt(d * d / 4.0 + d) + d / 2.0)


def exact_threshold_condition(rho: float, d: float, surjectivity: float) -> bool:
    """``rho^2/(1-rho) > d (1 - rho*G)/(1 - G)`` with ``G`` the surjectivity."""
    if surjectivity >= 1.0:
        raise SurjectiveFunctionError("surjectivity 1 leaves nothing to compress")
    if not 0.0 <= rho < 1.0:
        return False
    return rho * rho / (1.0 - rho) > d * (1.0 - rho * surjectivity) / (1.0 - surjectivity)


class LoadThreshold(NamedTuple):
    rho_th: float
    admits: bool


def load_threshold(s: NodeClassState, m: float) -> LoadThreshold:
    """Relaxed threshold for ``d_f(m)`` and the exact test at this node's load."""
    d = s.d_f(m)
    return LoadThreshold(relaxed_threshold(d), exact_threshold_condition(s.rho, d, s.surjectivity))
