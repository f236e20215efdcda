"""Discrete-event simulation of the open multi-class network with thinning.

Each (class, node) pair has its own FIFO communication server with rate
``mu[c, v]``. A packet reaching node ``v`` first passes the computation
stage: it is emitted with probability ``gamma/lambda`` from the assignment
and absorbed otherwise. Emitted packets wait for communication service, then
route by ``P[c, v, :]`` or leave the network. Computation takes zero time
unless ``computation_rate`` is given, which inserts an exponential
computation server ahead of the thinning (that variant is not product-form
and exists for sensitivity checks only).
"""

from __future__ import annotations

import bisect
import heapq
import json
import math
import random
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SimulationDiverged
from .model import FlowAssignment, NetworkSpec

SERVICE_KINDS = ("exponential", "deterministic", "uniform")
DEFAULT_QUEUE_CAP = 1_000_000

_EXTERNAL, _COMM_DONE, _COMP_DONE = 0, 1, 2
_KIND_NAMES = {_EXTERNAL: "external", _COMM_DONE: "comm_done", _COMP_DONE: "comp_done"}


@dataclass
class SimConfig:
    spec: NetworkSpec
    assignment: FlowAssignment | None = None     # None: pure relay, gamma = lambda
    horizon: float | None = None
    max_events: int | None = None
    warmup: float = 0.1
    seed: int = 0
    replications: int = 1
    service: str = "exponential"
    queue_cap: int = DEFAULT_QUEUE_CAP
    trace_limit: int = 0
    computation_rate: np.ndarray | None = None
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.warmup <= 0.9:
            raise ValueError(f"warmup fraction {self.warmup} outside [0, 0.9]")
        if self.horizon is None and self.max_events is None:
            raise ValueError("give a time horizon, an event budget, or both")
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.max_events is not None and self.max_events < 1:
            raise ValueError("max_events must be positive")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        if self.service not in SERVICE_KINDS:
            raise ValueError(f"service must be one of {SERVICE_KINDS}")

    def survival(self) -> np.ndarray:
        shape = (len(self.spec.classes), self.spec.node_count)
        if self.assignment is None:
            return np.ones(shape)
        return self.assignment.survival


@dataclass
class ReplicationStats:
    L: np.ndarray
    W: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray
    p_dep: np.ndarray
    L_comp: np.ndarray | None
    W_comp: np.ndarray | None
    duration: float
    events: int
    arrived: int
    exited: int
    absorbed: int
    in_system: int
    trace: list = field(default_factory=list)

    @property
    def conserved(self) -> bool:
        return self.arrived == self.exited + self.absorbed + self.in_system


@dataclass
class SimReport:
    """Per (class, node) estimates, merged over replications.

    ``*_se`` arrays are standard errors of the replication means, ``None``
    with a single replication.
    """

    L: np.ndarray
    W: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray
    p_dep: np.ndarray
    L_se: np.ndarray | None
    W_se: np.ndarray | None
    lam_se: np.ndarray | None
    gamma_se: np.ndarray | None
    p_dep_se: np.ndarray | None
    littles_gap: np.ndarray
    traffic_gap: np.ndarray
    replications: list[ReplicationStats]
    class_ids: list[str]
    complete: bool = True

    def rows(self) -> list[dict]:
        out = []
        for ci, cid in enumerate(self.class_ids):
            for v in range(self.L.shape[1]):
                out.append({
                    "class": cid, "node": v,
                    "lambda": self.lam[ci, v], "lambda_se": _se_at(self.lam_se, ci, v),
                    "gamma": self.gamma[ci, v], "gamma_se": _se_at(self.gamma_se, ci, v),
                    "L": self.L[ci, v], "L_se": _se_at(self.L_se, ci, v),
                    "W": self.W[ci, v], "W_se": _se_at(self.W_se, ci, v),
                    "p_dep": self.p_dep[ci, v],
                    "littles_gap": self.littles_gap[ci, v],
                    "traffic_gap": self.traffic_gap[ci, v],
                })
        return out


def _se_at(arr, ci, v):
    return math.nan if arr is None else float(arr[ci, v])


def _cumulative(probs) -> list[float]:
    acc, out = 0.0, []
    for p in probs:
        acc += float(p)
        out.append(acc)
    return out


def _replicate(config: SimConfig, seed: int) -> ReplicationStats:
    spec = config.spec
    C, V = len(spec.classes), spec.node_count
    rng = random.Random(seed)
    expo = rng.expovariate
    unif = rng.random
    survive = config.survival().tolist()
    mu = spec.service_rate.tolist()
    route_cum = [[_cumulative(spec.routing[c, v]) for v in range(V)] for c in range(C)]
    split_cum = [_cumulative(spec.arrival_split[c]) for c in range(C)]
    beta = spec.external_rate.tolist()
    comp_rate = None if config.computation_rate is None else np.asarray(config.computation_rate, float).tolist()
    service = config.service

    def draw_service(rate):
        if service == "exponential":
            return expo(rate)
        if service == "deterministic":
            return 1.0 / rate
        return 2.0 * unif() / rate

    horizon = math.inf if config.horizon is None else config.horizon
    max_events = math.inf if config.max_events is None else config.max_events
    t_warm = config.warmup * horizon if config.horizon is not None else math.inf
    e_warm = config.warmup * max_events if config.max_events is not None else math.inf
    if config.warmup == 0:
        t_warm = e_warm = 0.0
    cap = config.queue_cap

    comm = [[deque() for _ in range(V)] for _ in range(C)]
    compq = [[deque() for _ in range(V)] for _ in range(C)] if comp_rate else None
    # accumulators, [c][v]
    area = [[0.0] * V for _ in range(C)]
    last = [[0.0] * V for _ in range(C)]
    area_c = [[0.0] * V for _ in range(C)]
    last_c = [[0.0] * V for _ in range(C)]
    n_arr = [[0] * V for _ in range(C)]
    n_emit = [[0] * V for _ in range(C)]
    n_done = [[0] * V for _ in range(C)]
    n_exit = [[0] * V for _ in range(C)]
    soj = [[0.0] * V for _ in range(C)]
    n_cdone = [[0] * V for _ in range(C)]
    soj_c = [[0.0] * V for _ in range(C)]
    arrived = exited = absorbed = 0
    trace: list = []
    trace_limit = config.trace_limit

    heap: list = []
    seq = 0
    for c in range(C):
        if beta[c] > 0:
            heapq.heappush(heap, (expo(beta[c]), seq, _EXTERNAL, c, -1, -1))
            seq += 1

    t_start = 0.0
    warmed = t_warm == 0.0
    events = 0
    pid_next = 0
    now = 0.0

    def reset(at: float):
        nonlocal t_start
        for c in range(C):
            for v in range(V):
                area[c][v] = 0.0
                last[c][v] = at
                area_c[c][v] = 0.0
                last_c[c][v] = at
                n_arr[c][v] = n_emit[c][v] = n_done[c][v] = n_exit[c][v] = n_cdone[c][v] = 0
                soj[c][v] = soj_c[c][v] = 0.0
        t_start = at

    def snapshot(end: float, partial: bool) -> ReplicationStats:
        dur = max(end - t_start, 1e-300)
        L = np.zeros((C, V)); W = np.zeros((C, V)); lam = np.zeros((C, V))
        gam = np.zeros((C, V)); pdep = np.zeros((C, V))
        Lc = np.zeros((C, V)) if comp_rate else None
        Wc = np.zeros((C, V)) if comp_rate else None
        for c in range(C):
            for v in range(V):
                q = comm[c][v]
                L[c, v] = (area[c][v] + len(q) * (end - last[c][v])) / dur
                W[c, v] = soj[c][v] / n_done[c][v] if n_done[c][v] else 0.0
                lam[c, v] = n_arr[c][v] / dur
                gam[c, v] = n_emit[c][v] / dur
                pdep[c, v] = n_exit[c][v] / n_done[c][v] if n_done[c][v] else math.nan
                if comp_rate:
                    Lc[c, v] = (area_c[c][v] + len(compq[c][v]) * (end - last_c[c][v])) / dur
                    Wc[c, v] = soj_c[c][v] / n_cdone[c][v] if n_cdone[c][v] else 0.0
        in_sys = sum(len(comm[c][v]) for c in range(C) for v in range(V))
        if comp_rate:
            in_sys += sum(len(compq[c][v]) for c in range(C) for v in range(V))
        return ReplicationStats(L, W, lam, gam, pdep, Lc, Wc, end - t_start, events,
                                arrived, exited, absorbed, in_sys, trace)

    def enter_comm(c, v, pid, t):
        n_emit[c][v] += 1
        q = comm[c][v]
        area[c][v] += len(q) * (t - last[c][v])
        last[c][v] = t
        q.append((t, pid))
        if len(q) == 1:
            nonlocal_push(t + draw_service(mu[c][v]), _COMM_DONE, c, v, pid)
        elif len(q) > cap:
            raise SimulationDiverged(f"class {spec.classes[c].id}, node {v}: queue exceeded {cap}",
                                     partial_report=snapshot(t, True))

    def arrive(c, v, pid, t):
        nonlocal absorbed
        n_arr[c][v] += 1
        if comp_rate:
            q = compq[c][v]
            area_c[c][v] += len(q) * (t - last_c[c][v])
            last_c[c][v] = t
            q.append((t, pid))
            if len(q) == 1:
                nonlocal_push(t + expo(comp_rate[c][v]), _COMP_DONE, c, v, pid)
            elif len(q) > cap:
                raise SimulationDiverged(f"class {spec.classes[c].id}, node {v}: computation queue exceeded {cap}",
                                         partial_report=snapshot(t, True))
            return
        if unif() < survive[c][v]:
            enter_comm(c, v, pid, t)
        else:
            absorbed += 1

    def nonlocal_push(t, kind, c, v, pid):
        nonlocal seq
        heapq.heappush(heap, (t, seq, kind, c, v, pid))
        seq += 1

    while heap:
        t, _, kind, c, v, pid = heap[0]
        if t > horizon or events >= max_events:
            break
        if not warmed and (t >= t_warm or events >= e_warm):
            reset(min(t, t_warm))
            warmed = True
        heapq.heappop(heap)
        now = t
        events += 1
        if kind == _EXTERNAL:
            arrived += 1
            pid = pid_next
            pid_next += 1
            v = bisect.bisect_right(split_cum[c], unif() * split_cum[c][-1])
            v = min(v, V - 1)
            if len(trace) < trace_limit:
                trace.append((t, _KIND_NAMES[kind], v, spec.classes[c].id, pid))
            nonlocal_push(t + expo(beta[c]), _EXTERNAL, c, -1, -1)
            arrive(c, v, pid, t)
        elif kind == _COMM_DONE:
            q = comm[c][v]
            area[c][v] += len(q) * (t - last[c][v])
            last[c][v] = t
            t_in, _ = q.popleft()
            n_done[c][v] += 1
            soj[c][v] += t - t_in
            if q:
                nonlocal_push(t + draw_service(mu[c][v]), _COMM_DONE, c, v, q[0][1])
            if len(trace) < trace_limit:
                trace.append((t, _KIND_NAMES[kind], v, spec.classes[c].id, pid))
            u = unif()
            nxt = bisect.bisect_right(route_cum[c][v], u)
            if nxt >= V:
                n_exit[c][v] += 1
                exited += 1
            else:
                arrive(c, nxt, pid, t)
        else:
            q = compq[c][v]
            area_c[c][v] += len(q) * (t - last_c[c][v])
            last_c[c][v] = t
            t_in, _ = q.popleft()
            n_cdone[c][v] += 1
            soj_c[c][v] += t - t_in
            if q:
                nonlocal_push(t + expo(comp_rate[c][v]), _COMP_DONE, c, v, q[0][1])
            if len(trace) < trace_limit:
                trace.append((t, _KIND_NAMES[kind], v, spec.classes[c].id, pid))
            if unif() < survive[c][v]:
                enter_comm(c, v, pid, t)
            else:
                absorbed += 1
    end = now if config.horizon is None else (horizon if not heap or heap[0][0] > horizon else now)
    if not warmed:
        reset(end)
    return snapshot(end, False)


def replication_seeds(seed: int, replications: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in ss.spawn(replications)]


def _merge(config: SimConfig, reps: list[ReplicationStats], complete: bool = True) -> SimReport:
    spec = config.spec

    def stack(name):
        return np.stack([getattr(r, name) for r in reps])

    def mean_se(name):
        arr = stack(name)
        m = np.nanmean(arr, axis=0) if name == "p_dep" else arr.mean(axis=0)
        if len(reps) < 2:
            return m, None
        return m, arr.std(axis=0, ddof=1) / math.sqrt(len(reps))

    L, L_se = mean_se("L")
    W, W_se = mean_se("W")
    lam, lam_se = mean_se("lam")
    gam, gam_se = mean_se("gamma")
    with np.errstate(all="ignore"):
        pdep, pdep_se = mean_se("p_dep")
    littles = np.abs(L - gam * W) / np.maximum(L, 1e-12)
    beta = spec.external_arrivals()
    predicted = beta + np.einsum("cuv,cu->cv", spec.routing, gam)
    traffic = np.abs(lam - predicted) / np.maximum(lam, 1e-12)
    return SimReport(L, W, lam, gam, pdep, L_se, W_se, lam_se, gam_se, pdep_se,
                     littles, traffic, reps, spec.class_ids, complete)


def run(config: SimConfig) -> SimReport:
    """Run all replications and merge them in replication order."""
    seeds = replication_seeds(config.seed, config.replications)
    reps: list[ReplicationStats] = []
    try:
        if config.workers > 1 and config.replications > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                reps = list(pool.map(_replicate, [config] * len(seeds), seeds))
        else:
            for s in seeds:
                reps.append(_replicate(config, s))
    except SimulationDiverged as exc:
        partial = exc.partial_report
        merged = _merge(config, reps + ([partial] if partial is not None else []), complete=False)
        raise SimulationDiverged(str(exc), partial_report=merged) from None
    return _merge(config, reps)


def littles_law_audit(report: SimReport, tol: float = 0.05, eps: float = 1e-12) -> np.ndarray:
    """Boolean ``[class, node]`` array: where ``|L - gamma W| / max(L, eps) <= tol``."""
    gap = np.abs(report.L - report.gamma * report.W) / np.maximum(report.L, eps)
    return gap <= tol


def write_trace(report: SimReport, path: str | Path) -> None:
    """Line-delimited JSON event records from every replication."""
    with open(path, "w") as fh:
        for i, rep in enumerate(report.replications):
            for t, kind, node, cls, pid in rep.trace:
                fh.write(json.dumps({"replication": i, "time": t, "kind": kind,
                                     "node": node, "class": cls, "packet": pid}) + "\n")
