"""Domain model: network topology, routing, function classes, flow assignments.

All arrays are indexed ``[class, node]`` (routing is ``[class, from, to]``).
Routing rows are stored with slack: the departure probability of node ``v``
is ``1 - routing[c, v, :].sum()`` and is never stored separately.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

STOCHASTIC_TOL = 1e-9


class Complexity(str, enum.Enum):
    SEARCH = "search"
    MAPREDUCE = "mapreduce"
    CLASSIFICATION = "classification"
    CUSTOM = "custom"


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        arr = np.atleast_1d(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FunctionClass:
    """A computational flow class.

    ``surjectivity`` is the entropic surjectivity in [0, 1]; ``None`` means it
    is still to be computed from ``function_table`` (the ``"auto"`` config
    value). ``h_func`` optionally records the graph entropy of the function in
    bits, which enables the entropy-based flow floor.
    """

    id: str
    complexity: Complexity = Complexity.MAPREDUCE
    k: float = 1.0
    surjectivity: float | None = None
    custom_df: Callable[[float], float] | None = field(default=None, compare=False)
    h_func: float | None = None
    function_table: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "complexity", Complexity(self.complexity))
        if self.complexity is Complexity.CUSTOM and self.custom_df is None:
            raise ValueError(f"class {self.id!r}: custom complexity needs custom_df")

    def d_f(self, m: float) -> float:
        return effective_complexity(self, m)


def effective_complexity(fc: FunctionClass, m: float) -> float:
    """Time complexity ``d_f(m)`` of the class, normalized so ``d_f(0) = 0``."""
    if m < 0:
        raise ValueError(f"queue content must be nonnegative, got {m}")
    family = fc.complexity
    if family is Complexity.SEARCH:
        return math.log1p(m)
    if family is Complexity.MAPREDUCE:
        return float(m)
    if family is Complexity.CLASSIFICATION:
        return math.expm1(m)
    return float(fc.custom_df(m))


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    node_count: int
    classes: tuple[FunctionClass, ...]
    routing: np.ndarray          # [c, v_from, v_to]
    arrival_split: np.ndarray    # [c, v]
    external_rate: np.ndarray    # [c]
    service_rate: np.ndarray     # [c, v]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "routing", _frozen(self.routing, 3))
        object.__setattr__(self, "arrival_split", _frozen(self.arrival_split, 2))
        object.__setattr__(self, "external_rate", _frozen(self.external_rate, 1))
        object.__setattr__(self, "service_rate", _frozen(self.service_rate, 2))

    def __eq__(self, other):
        if not isinstance(other, NetworkSpec):
            return NotImplemented
        return (self.node_count == other.node_count
                and self.classes == other.classes
                and all(a.shape == b.shape and np.array_equal(a, b)
                        for a, b in zip(self._arrays(), other._arrays())))

    __hash__ = None

    def _arrays(self):
        return (self.routing, self.arrival_split, self.external_rate, self.service_rate)

    @property
    def class_ids(self) -> list[str]:
        return [fc.id for fc in self.classes]

    def class_index(self, c: str | int) -> int:
        if isinstance(c, (int, np.integer)):
            return int(c)
        return self.class_ids.index(c)

    def departure_prob(self) -> np.ndarray:
        return 1.0 - self.routing.sum(axis=2)

    def external_arrivals(self) -> np.ndarray:
        """Per-node external rates ``beta_v^c = beta^c * p_v^arr(c)``."""
        return self.external_rate[:, None] * self.arrival_split

    def with_classes(self, classes: Sequence[FunctionClass]) -> "NetworkSpec":
        return NetworkSpec(self.node_count, tuple(classes), self.routing,
                           self.arrival_split, self.external_rate, self.service_rate)

    def with_arrays(self, **arrays) -> "NetworkSpec":
        kw = dict(routing=self.routing, arrival_split=self.arrival_split,
                  external_rate=self.external_rate, service_rate=self.service_rate)
        kw.update(arrays)
        return NetworkSpec(self.node_count, self.classes, **kw)


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    cls: str | None = None
    node: int | None = None

    def __str__(self):
        where = []
        if self.cls is not None:
            where.append(f"class={self.cls}")
        if self.node is not None:
            where.append(f"node={self.node}")
        loc = f" [{', '.join(where)}]" if where else ""
        return f"{self.kind}{loc}: {self.message}"


def validate_network(spec: NetworkSpec) -> list[Violation]:
    """Return every violated network invariant; empty iff the network is valid."""
    out: list[Violation] = []
    n, C = spec.node_count, len(spec.classes)
    if not isinstance(n, (int, np.integer)) or n < 1:
        return [Violation("shape", f"node_count must be a positive integer, got {n!r}")]
    if C == 0:
        out.append(Violation("shape", "at least one class is required"))
    expected = {
        "routing": (C, n, n),
        "arrival_split": (C, n),
        "external_rate": (C,),
        "service_rate": (C, n),
    }
    bad_shape = False
    for name, shape in expected.items():
        got = getattr(spec, name).shape
        if got != shape:
            bad_shape = True
            out.append(Violation("shape", f"{name} has shape {got}, expected {shape}"))
    ids = spec.class_ids
    if len(set(ids)) != len(ids):
        out.append(Violation("duplicate class", f"class ids must be unique: {ids}"))
    for fc in spec.classes:
        if not fc.k > 0:
            out.append(Violation("cost scaling", f"k must be positive, got {fc.k}", fc.id))
        if fc.surjectivity is not None and not 0.0 <= fc.surjectivity <= 1.0:
            out.append(Violation("surjectivity range",
                                 f"surjectivity must lie in [0, 1], got {fc.surjectivity}", fc.id))
        if fc.surjectivity is None and fc.function_table is None:
            out.append(Violation("surjectivity missing",
                                 "surjectivity is 'auto' but no function_table is given", fc.id))
    if bad_shape:
        return out

    for ci, fc in enumerate(spec.classes):
        P = spec.routing[ci]
        for v in range(n):
            row = P[v]
            if np.any(row < 0) or np.any(row > 1):
                out.append(Violation("routing entry range",
                                     "routing probabilities must lie in [0, 1]", fc.id, v))
            dep = 1.0 - row.sum()
            if dep < -STOCHASTIC_TOL:
                out.append(Violation("routing row sum",
                                     f"row sums to {row.sum():.12g} > 1 (negative departure)", fc.id, v))
        dep = 1.0 - P.sum(axis=1)
        if not np.any(dep > STOCHASTIC_TOL):
            out.append(Violation("closed network",
                                 "no node has positive departure probability", fc.id))
        radius = float(max(abs(np.linalg.eigvals(P)))) if n else 0.0
        if radius >= 1.0 - 1e-12:
            out.append(Violation("spectral radius",
                                 f"spectral radius {radius:.12g} is not below 1", fc.id))
        split = spec.arrival_split[ci]
        if np.any(split < 0) or np.any(split > 1) or abs(split.sum() - 1.0) > STOCHASTIC_TOL:
            out.append(Violation("arrival split not stochastic",
                                 f"arrival split sums to {split.sum():.12g}", fc.id))
        if not spec.external_rate[ci] >= 0:
            out.append(Violation("external rate",
                                 f"external rate must be nonnegative, got {spec.external_rate[ci]}", fc.id))
        for v in range(n):
            if not spec.service_rate[ci, v] > 0:
                out.append(Violation("service rate",
                                     f"service rate must be positive, got {spec.service_rate[ci, v]}",
                                     fc.id, v))
    return out


@dataclass(frozen=True, eq=False)
class FlowAssignment:
    """Per-class, per-node operating point. Arrays are ``[class, node]``."""

    lam: np.ndarray
    gamma: np.ndarray
    mu: np.ndarray
    m_queue: np.ndarray | None = None
    l_total: np.ndarray | None = None
    delay: np.ndarray | None = None

    def __post_init__(self):
        for name in ("lam", "gamma", "mu", "m_queue", "l_total", "delay"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen(val, 2))

    @property
    def rho(self) -> np.ndarray:
        return self.lam / self.mu

    @property
    def survival(self) -> np.ndarray:
        """Fraction ``gamma / lambda`` of arriving flow that is emitted."""
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(self.lam > 0, self.gamma / np.where(self.lam > 0, self.lam, 1.0), 1.0)
        return np.clip(s, 0.0, 1.0)

    def check(self, surjectivity: Sequence[float] | None = None, tol: float = 1e-9) -> list[str]:
        """Return violated assignment invariants as messages."""
        problems = []
        if np.any(self.lam < -tol) or np.any(self.gamma < -tol):
            problems.append("negative rate")
        if np.any(self.rho >= 1.0) or np.any(self.rho < 0):
            problems.append("load outside [0, 1)")
        if np.any(self.gamma > self.lam + tol):
            problems.append("gamma exceeds lambda")
        if surjectivity is not None:
            floor = np.asarray(surjectivity, dtype=float)[:, None] * self.lam
            if np.any(self.gamma < floor - tol):
                problems.append("gamma below surjectivity floor")
        if self.m_queue is not None and self.l_total is not None:
            pos = self.lam > 0
            expect = self.l_total * (1.0 - self.survival)
            if np.any(np.abs(self.m_queue - expect)[pos] > tol * np.maximum(1.0, self.l_total[pos])):
                problems.append("M != L (1 - gamma/lambda)")
        return problems
