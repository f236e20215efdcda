"""Characteristic graphs, Körner graph entropy and related surjectivity measures.

Entropies are in bits throughout.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError, ConvergenceError, DegenerateSourceError, SizeLimitError

LN2 = math.log(2.0)
DEFAULT_VERTEX_CAP = 20
PMF_TOL = 1e-12


def entropy(pmf) -> float:
    """Shannon entropy in bits; zero-probability entries contribute nothing."""
    p = np.asarray(pmf, dtype=float).ravel()
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


@dataclass(frozen=True, eq=False)
class CharacteristicGraph:
    """Conflict graph of a function on one source variable.

    ``edges`` holds pairs ``(u, v)`` with ``u < v``; the relation is symmetric
    by construction. ``function_table`` and ``labels`` are kept for audit.
    """

    n: int
    pmf: np.ndarray
    edges: frozenset
    source_arity: int = 1
    function_table: np.ndarray | None = field(default=None, repr=False)
    labels: tuple | None = None

    def __post_init__(self):
        pmf = np.array(self.pmf, dtype=float)
        if pmf.shape != (self.n,):
            raise ValueError(f"pmf has shape {pmf.shape}, expected ({self.n},)")
        if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > PMF_TOL:
            raise ValueError(f"pmf must be nonnegative and sum to 1 (sum={pmf.sum():.15g})")
        pmf = pmf / pmf.sum()
        pmf.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)
        norm = set()
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop at vertex {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError(f"edge ({u}, {v}) outside vertex range")
            norm.add((min(u, v), max(u, v)))
        object.__setattr__(self, "edges", frozenset(norm))

    def adjacent(self, u: int, v: int) -> bool:
        return (min(u, v), max(u, v)) in self.edges

    def adjacency_masks(self) -> list[int]:
        masks = [0] * self.n
        for u, v in self.edges:
            masks[u] |= 1 << v
            masks[v] |= 1 << u
        return masks

    def with_edge(self, u: int, v: int) -> "CharacteristicGraph":
        return CharacteristicGraph(self.n, self.pmf, self.edges | {(min(u, v), max(u, v))},
                                   self.source_arity, None, self.labels)

    def with_pmf(self, pmf) -> "CharacteristicGraph":
        return CharacteristicGraph(self.n, pmf, self.edges, self.source_arity, None, self.labels)


def graph_from_edges(n: int, edges, pmf=None) -> CharacteristicGraph:
    pmf = np.full(n, 1.0 / n) if pmf is None else pmf
    return CharacteristicGraph(n, pmf, frozenset(tuple(e) for e in edges))


def complete_graph(n: int, pmf=None) -> CharacteristicGraph:
    return graph_from_edges(n, itertools.combinations(range(n), 2), pmf)


def empty_graph(n: int, pmf=None) -> CharacteristicGraph:
    return graph_from_edges(n, (), pmf)


def cycle_graph(n: int, pmf=None) -> CharacteristicGraph:
    return graph_from_edges(n, ((i, (i + 1) % n) for i in range(n)), pmf)


def build_characteristic_graph(f_table, joint_pmf, target_variable: int | None = 0) -> CharacteristicGraph:
    """Characteristic graph of ``f`` on one source variable.

    ``f_table`` and ``joint_pmf`` are arrays over the joint alphabet, one axis
    per source variable. Vertices ``u`` and ``v`` of the target variable are
    adjacent iff some context of the remaining variables has positive joint
    probability with both of them and ``f`` differs there. With
    ``target_variable=None`` the whole source tuple is a single variable whose
    vertices are the flattened joint assignments.
    """
    f = np.asarray(f_table, dtype=object)
    pj = np.asarray(joint_pmf, dtype=float)
    if f.shape != pj.shape:
        raise ValueError(f"function table shape {f.shape} does not match pmf shape {pj.shape}")
    if pj.ndim == 0:
        raise ValueError("need at least one source variable")
    if np.any(pj < 0) or abs(pj.sum() - 1.0) > 1e-9:
        raise ValueError("joint pmf must be nonnegative and sum to 1")
    pj = pj / pj.sum()
    arity = pj.ndim
    if target_variable is None:
        flat_f = f.reshape(1, -1)
        flat_p = pj.reshape(1, -1)
        n = flat_p.shape[1]
        pmf = flat_p[0]
        pos = pmf > 0
        edges = {(u, v) for u, v in itertools.combinations(range(n), 2)
                 if pos[u] and pos[v] and flat_f[0, u] != flat_f[0, v]}
        labels = tuple(itertools.product(*(range(s) for s in pj.shape)))
    else:
        if not 0 <= target_variable < arity:
            raise ValueError(f"target variable {target_variable} out of range for arity {arity}")
        ft = np.moveaxis(f, target_variable, 0).reshape(pj.shape[target_variable], -1)
        pt = np.moveaxis(pj, target_variable, 0).reshape(pj.shape[target_variable], -1)
        n = pt.shape[0]
        pmf = pt.sum(axis=1)
        pos = pt > 0
        edges = set()
        for u, v in itertools.combinations(range(n), 2):
            ctx = np.nonzero(pos[u] & pos[v])[0]
            if any(ft[u, j] != ft[v, j] for j in ctx):
                edges.add((u, v))
        labels = tuple(range(n))
    pmf = pmf / pmf.sum()
    return CharacteristicGraph(n, pmf, frozenset(edges), arity, f, labels)


def maximal_independent_sets(g: CharacteristicGraph, cap: int = DEFAULT_VERTEX_CAP) -> list[frozenset]:
    """All maximal independent sets, via Bron-Kerbosch on the complement graph.

    Exponential in the worst case (up to 3^(n/3) sets), hence the vertex cap.
    """
    if g.n > cap:
        raise SizeLimitError(f"{g.n} vertices exceeds the enumeration cap of {cap}")
    full = (1 << g.n) - 1
    adj = g.adjacency_masks()
    # complement neighbourhoods: vertices that may share an independent set
    comp = [full & ~adj[v] & ~(1 << v) for v in range(g.n)]
    found: list[int] = []

    def expand(r: int, p: int, x: int):
        if not p and not x:
            found.append(r)
            return
        px = p | x
        pivot = max(_bits(px), key=lambda u: (p & comp[u]).bit_count())
        for v in _bits(p & ~comp[pivot]):
            bit = 1 << v
            expand(r | bit, p & comp[v], x & comp[v])
            p &= ~bit
            x |= bit

    if g.n:
        expand(0, full, 0)
    sets = [frozenset(_bits(m)) for m in found]
    return sorted(sets, key=lambda s: (len(s), sorted(s)))


def _bits(mask: int) -> list[int]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


def _incidence(n: int, sets: Sequence[frozenset]) -> np.ndarray:
    A = np.zeros((n, len(sets)))
    for j, s in enumerate(sets):
        A[list(s), j] = 1.0
    return A


def mutual_information(pmf, channel) -> float:
    """I(X; W) in bits for input ``pmf`` and row-stochastic ``channel[x, w]``."""
    p = np.asarray(pmf, dtype=float)
    q = np.asarray(channel, dtype=float)
    r = p @ q
    joint = p[:, None] * q
    mask = joint > 0
    ratio = np.where(mask, q / np.where(r > 0, r, 1.0)[None, :], 1.0)
    return float((joint[mask] * np.log2(ratio[mask])).sum())


@dataclass
class EntropyResult:
    value: float
    sets: list[frozenset]
    witness: np.ndarray          # p(w | x), rows over vertices, columns over sets
    iterations: int
    gap: float

    def support(self, eps: float = 1e-9) -> list[list[int]]:
        weights = self.marginal()
        return [sorted(s) for s, w in zip(self.sets, weights) if w > eps]

    def marginal(self, pmf=None) -> np.ndarray:
        if pmf is None:
            pmf = self._pmf
        return np.asarray(pmf) @ self.witness

    def to_record(self) -> dict:
        weights = self.marginal()
        return {
            "value_bits": self.value,
            "iterations": self.iterations,
            "gap": self.gap,
            "witness_support": [{"set": sorted(s), "weight": float(w)}
                                for s, w in zip(self.sets, weights) if w > 1e-12],
        }

    _pmf: np.ndarray | None = field(default=None, repr=False)


def graph_entropy(g: CharacteristicGraph, tol: float = 1e-9, max_iter: int = 10_000,
                  cap: int = DEFAULT_VERTEX_CAP) -> EntropyResult:
    """Körner graph entropy by alternating minimization.

    Alternates the closed-form W-marginal ``r(w) = sum_x p(x) q(w|x)`` with the
    restricted update ``q(w|x) ∝ r(w) [x in w]``. Stops once the objective
    decreases by less than ``tol``. ``gap`` is the certified suboptimality
    bound ``(max_w sum_{x in w} p(x)/a(x) - 1) / ln 2`` where ``a(x)`` is the
    r-mass of the sets containing ``x``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    sets = maximal_independent_sets(g, cap)
    p = g.pmf
    A = _incidence(g.n, sets)
    S = len(sets)
    if S == 1:
        return EntropyResult(0.0, sets, A.copy(), 0, 0.0, _pmf=p)
    if all(len(s) == 1 for s in sets):
        # complete graph: W = X is forced
        return EntropyResult(entropy(p), sets, A.copy(), 0, 0.0, _pmf=p)

    sup = p > 0
    ps, As = p[sup], A[sup]
    r = np.full(S, 1.0 / S)
    prev = math.inf
    obj = math.inf
    gap = math.inf
    for it in range(1, max_iter + 1):
        a = As @ r
        obj = float(-(ps * np.log(a)).sum() / LN2)
        D = As.T @ (ps / a)
        gap = max(0.0, float((D.max() - 1.0) / LN2))
        if prev - obj < tol:
            break
        prev = obj
        r = r * D
        r /= r.sum()
    else:
        raise ConvergenceError(f"graph entropy did not converge in {max_iter} iterations",
                               best_value=obj, gap=gap)
    a_full = A @ r
    witness = np.where(A > 0, A * r[None, :] / np.where(a_full > 0, a_full, 1.0)[:, None], 0.0)
    # zero-probability vertices still need a valid conditional
    for x in np.nonzero(a_full <= 0)[0]:
        witness[x] = A[x] / A[x].sum()
    value = min(obj, mutual_information(p, witness))
    return EntropyResult(max(value, 0.0), sets, witness, it, gap, _pmf=p)


def graph_entropy_oracle(g: CharacteristicGraph, restarts: int = 16, seed: int = 0,
                         cap: int = DEFAULT_VERTEX_CAP) -> float:
    """Independent check of :func:`graph_entropy` by random-restart quasi-Newton.

    Each restart draws random set weights and runs bounded L-BFGS-B on the
    convex form ``min_r -sum_x p(x) log2 sum_{w ∋ x} r(w)``. The best weights
    are turned into a feasible channel whose mutual information is evaluated
    from its definition, so the returned value is achievable.
    """
    sets = maximal_independent_sets(g, cap)
    A = _incidence(g.n, sets)
    p = g.pmf
    sup = p > 0
    ps, As = p[sup], A[sup]
    S = len(sets)
    rng = np.random.default_rng(seed)

    def f(u):
        s = u.sum()
        if s <= 0:
            return math.inf, np.zeros_like(u)
        a = np.maximum(As @ u / s, 1e-300)
        D = As.T @ (ps / a)
        return float(-(ps * np.log(a)).sum() / LN2), (1.0 - D) / (s * LN2)

    best_val, best_u = math.inf, None
    for _ in range(restarts):
        res = minimize(f, rng.dirichlet(np.ones(S)), jac=True, method="L-BFGS-B",
                       bounds=[(0.0, None)] * S,
                       options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 2000})
        if res.fun < best_val:
            best_val, best_u = res.fun, res.x
    r = best_u / best_u.sum()
    a = A @ r
    channel = np.where(A > 0, A * r[None, :] / np.where(a > 0, a, 1.0)[:, None], 0.0)
    for x in np.nonzero(a <= 0)[0]:
        channel[x] = A[x] / A[x].sum()
    return max(0.0, mutual_information(p, channel))


def entropic_surjectivity(g: CharacteristicGraph, tol: float = 1e-9) -> float:
    """Graph entropy over source entropy, clamped to [0, 1]."""
    h = entropy(g.pmf)
    if h <= 0:
        raise DegenerateSourceError("source entropy is zero; surjectivity is undefined")
    return float(min(1.0, max(0.0, graph_entropy(g, tol).value / h)))


@dataclass
class DeficiencyResult:
    alpha0: int
    table: np.ndarray            # table[a, b] = #{x : f(x + a) - f(x) = b}, row 0 included
    alpha: dict[int, int]        # alpha_i counted over nonzero shifts a


def deficiency(f: Sequence[int], codomain_size: int | None = None) -> DeficiencyResult:
    """Deficiency of ``f: Z_n -> Z_n`` given as the value list ``f(0..n-1)``."""
    n = len(f)
    m = n if codomain_size is None else codomain_size
    if m != n:
        raise ValueError(f"domain and codomain must have equal cardinality ({n} != {m})")
    vals = [int(y) for y in f]
    if any(not 0 <= y < n for y in vals):
        raise ValueError(f"function values must lie in Z_{n}")
    table = np.zeros((n, n), dtype=int)
    for a in range(n):
        for x in range(n):
            table[a, (vals[(x + a) % n] - vals[x]) % n] += 1
    alpha = {i: int((table[1:] == i).sum()) for i in range(n + 1)}
    return DeficiencyResult(alpha[0], table, alpha)


REGION_TOL = 1e-9


def rate_region_membership(r1: float, r2: float, h: Sequence[float], tol: float = REGION_TOL) -> str:
    """Classify ``(r1, r2)`` against a two-source rate region.

    ``h`` is ``(H(X1|X2), H(X2|X1), H(X1,X2))`` or the graph-entropy analogue.
    Returns ``"inside"``, ``"boundary"`` or ``"outside"``.
    """
    h1, h2, h12 = (float(v) for v in h)
    if min(h1, h2, h12) < -tol or h1 > h12 + tol or h2 > h12 + tol:
        raise ValueError(f"inconsistent entropy triple {tuple(h)}")
    slack = (r1 - h1, r2 - h2, r1 + r2 - h12)
    if min(slack) < -tol:
        return "outside"
    if min(slack) <= tol:
        return "boundary"
    return "inside"


def slepian_wolf_triple(joint_pmf) -> tuple[float, float, float]:
    pj = np.asarray(joint_pmf, dtype=float)
    h12 = entropy(pj)
    return h12 - entropy(pj.sum(axis=0)), h12 - entropy(pj.sum(axis=1)), h12


JOINT_ALPHABET_CAP = 4


def _softmax_channels(z, masks):
    out, i = [], 0
    for mask in masks:
        k = mask.size
        blk = np.where(mask, z[i:i + k].reshape(mask.shape), -np.inf)
        blk = blk - blk.max(axis=1, keepdims=True)
        e = np.exp(blk)
        out.append(e / e.sum(axis=1, keepdims=True))
        i += k
    return out


def _min_over_channels(objective, masks, restarts, seed):
    rng = np.random.default_rng(seed)
    dim = sum(m.size for m in masks)
    best = math.inf
    for _ in range(restarts):
        res = minimize(lambda z: objective(_softmax_channels(z, masks)),
                       rng.normal(scale=1.5, size=dim), method="L-BFGS-B",
                       options={"ftol": 1e-14, "gtol": 1e-10, "maxiter": 2000})
        best = min(best, float(res.fun))
    return max(0.0, best)


def _cond_entropy(joint: np.ndarray, cond_axes: tuple) -> float:
    """H(rest | cond_axes) for a joint array."""
    marg_axes = tuple(i for i in range(joint.ndim) if i not in cond_axes)
    return entropy(joint) - entropy(joint.sum(axis=marg_axes))


def graph_entropy_triple(f_table, joint_pmf, restarts: int = 16, seed: int = 0) -> tuple[float, float, float]:
    """``(H_G1(X1|X2), H_G2(X2|X1), H_{G1,G2}(X1,X2))`` for two small sources.

    Conditional graph entropy is ``min I(W1; X1 | X2)`` over ``W1 - X1 - X2``
    with ``X1 in W1`` a maximal independent set of the characteristic graph of
    ``f`` on ``X1``; the joint term minimizes ``I(W1, W2; X1, X2)`` over
    product channels. Both are found by random-restart minimization, which is
    only practical for alphabets of at most four symbols each.
    """
    pj = np.asarray(joint_pmf, dtype=float)
    if pj.ndim != 2 or max(pj.shape) > JOINT_ALPHABET_CAP:
        raise SizeLimitError(f"joint graph entropy needs two sources of at most {JOINT_ALPHABET_CAP} symbols")
    pj = pj / pj.sum()
    g1 = build_characteristic_graph(f_table, pj, 0)
    g2 = build_characteristic_graph(f_table, pj, 1)
    m1 = _incidence(g1.n, maximal_independent_sets(g1)).astype(bool)
    m2 = _incidence(g2.n, maximal_independent_sets(g2)).astype(bool)

    def cond1(ch):
        # joint over (x1, x2, w1)
        j = pj[:, :, None] * ch[0][:, None, :]
        return _cond_entropy(j.sum(axis=0), (0,)) - _cond_entropy(j, (0, 1))

    def cond2(ch):
        j = pj.T[:, :, None] * ch[0][:, None, :]
        return _cond_entropy(j.sum(axis=0), (0,)) - _cond_entropy(j, (0, 1))

    def joint(ch):
        q1, q2 = ch
        j = pj[:, :, None, None] * q1[:, None, :, None] * q2[None, :, None, :]
        return entropy(j.sum(axis=(0, 1))) - _cond_entropy(j, (0, 1))

    h1 = _min_over_channels(cond1, [m1], restarts, seed)
    h2 = _min_over_channels(cond2, [m2], restarts, seed + 1)
    h12 = _min_over_channels(joint, [m1, m2], restarts, seed + 2)
    return h1, h2, max(h12, h1, h2)


# ---------------------------------------------------------------- tables

PMF_COLUMNS = ("p", "pmf", "prob", "probability")


@dataclass
class FunctionTable:
    variables: list[str]
    output: str
    alphabets: list[list]
    values: np.ndarray           # f over the joint alphabet (object array, None = absent)
    pmf: np.ndarray

    def graph(self, target: int | None = None) -> CharacteristicGraph:
        return build_characteristic_graph(self.values, self.pmf, target)


def _sort_key(token: str):
    try:
        return (0, float(token), token)
    except ValueError:
        return (1, 0.0, token)


def parse_function_table(text: str, source: str = "<string>") -> FunctionTable:
    """Parse a CSV function table.

    The header names the source variables, the output column (``f`` or the
    last non-probability column) and a probability column (``p``/``pmf``).
    """
    rows = [r for r in csv.reader(line for line in text.splitlines()
                                  if line.strip() and not line.lstrip().startswith("#"))]
    if len(rows) < 2:
        raise ConfigError(f"{source}: need a header row and at least one assignment")
    header = [h.strip() for h in rows[0]]
    pcols = [i for i, h in enumerate(header) if h.lower() in PMF_COLUMNS]
    if len(pcols) != 1:
        raise ConfigError(f"{source}:1: expected exactly one probability column named one of {PMF_COLUMNS}")
    pcol = pcols[0]
    rest = [i for i in range(len(header)) if i != pcol]
    ocol = header.index("f") if "f" in header else rest[-1]
    vcols = [i for i in rest if i != ocol]
    if not vcols:
        raise ConfigError(f"{source}:1: no source variable columns")
    records = []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ConfigError(f"{source}:{lineno}: expected {len(header)} fields, got {len(r)}")
        try:
            prob = float(r[pcol])
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: probability {r[pcol]!r} is not a number") from None
        if prob < 0:
            raise ConfigError(f"{source}:{lineno}: negative probability")
        records.append((tuple(r[i].strip() for i in vcols), r[ocol].strip(), prob, lineno))
    alphabets = [sorted({rec[0][j] for rec in records}, key=_sort_key) for j in range(len(vcols))]
    index = [{a: k for k, a in enumerate(alpha)} for alpha in alphabets]
    shape = tuple(len(a) for a in alphabets)
    values = np.full(shape, None, dtype=object)
    pmf = np.zeros(shape)
    seen = set()
    for key, out, prob, lineno in records:
        idx = tuple(index[j][key[j]] for j in range(len(key)))
        if idx in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate assignment {key}")
        seen.add(idx)
        values[idx] = out
        pmf[idx] = prob
    total = pmf.sum()
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"{source}: probabilities sum to {total:.12g}, expected 1")
    return FunctionTable([header[i] for i in vcols], header[ocol], alphabets, values, pmf / total)


def read_function_table(path: str | Path) -> FunctionTable:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read: {exc.strerror}") from exc
    return parse_function_table(text, str(path))


def surjectivity_from_table(table: FunctionTable, tol: float = 1e-9) -> float:
    """Entropic surjectivity of the tabulated function over the whole source tuple."""
    return entropic_surjectivity(table.graph(None), tol)


def write_entropy_record(result: EntropyResult, path: str | Path | None = None, **meta) -> str:
    record = dict(meta)
    record.update(result.to_record())
    text = json.dumps(record, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
