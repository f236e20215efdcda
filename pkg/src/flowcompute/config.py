"""Scenario files: YAML documents with ``network``, ``classes`` and ``experiment``.

Example::

    name: two-node
    network:
      node_count: 2
      routing: {c1: [[0.0, 0.5], [0.5, 0.0]]}
      arrival_split: {c1: [0.5, 0.5]}
      external_rate: {c1: 1.0}
      service_rate: {c1: [3.0, 3.0]}
    classes:
      - {id: c1, complexity: classification, k: 2.0, surjectivity: 0.5}
    experiment:
      sweep: mincost_vs_k
      grid: [1.0, 2.0, 4.0]

``surjectivity: auto`` requires ``function_table: <csv path>`` (relative to
the scenario file) and is resolved through :mod:`flowcompute.graphentropy`.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ConfigError
from .model import Complexity, FunctionClass, NetworkSpec

SWEEPS = ("threshold_vs_M", "mincost_vs_k", "mincost_vs_surjectivity", "custom")


@dataclass
class Scenario:
    name: str
    spec: NetworkSpec | None
    sweep: str | None = None
    grid: list = field(default_factory=list)
    experiment: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)
    out_dir: str | None = None
    source: Path | None = None
    digest: str = ""

    @property
    def base_dir(self) -> Path:
        return self.source.parent if self.source else Path.cwd()


def _line_of(root: yaml.Node | None, path: tuple) -> int | None:
    node, mark = root, None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt, mark = v, k.start_mark
                    break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            mark = node.start_mark
        else:
            node = None
        if node is None:
            return None
    return None if mark is None else mark.line + 1


class _Reader:
    """Pulls typed values out of the parsed document, raising with location."""

    def __init__(self, source: str, root_node):
        self.source = source
        self.root_node = root_node

    def fail(self, path: tuple, msg: str):
        line = None
        for cut in range(len(path), -1, -1):   # nearest ancestor that exists in the file
            line = _line_of(self.root_node, path[:cut]) if cut else None
            if line:
                break
        where = f"{self.source}:{line}" if line else self.source
        dotted = ".".join(str(p) for p in path)
        raise ConfigError(f"{where}: {dotted}: {msg}")

    def get(self, doc: dict, path: tuple, key: str, default=dataclasses.MISSING):
        if not isinstance(doc, dict):
            self.fail(path, "expected a mapping")
        if key not in doc:
            if default is dataclasses.MISSING:
                self.fail(path + (key,), "missing required field")
            return default
        return doc[key]


def _network_from_dict(doc: dict, classes_doc: list, rd: _Reader) -> NetworkSpec:
    if not isinstance(classes_doc, list) or not classes_doc:
        rd.fail(("classes",), "expected a nonempty list of classes")
    classes = []
    for i, cd in enumerate(classes_doc):
        path = ("classes", i)
        cid = str(rd.get(cd, path, "id"))
        try:
            complexity = Complexity(str(rd.get(cd, path, "complexity", "mapreduce")).lower())
        except ValueError:
            rd.fail(path + ("complexity",), f"unknown complexity {cd.get('complexity')!r}")
        if complexity is Complexity.CUSTOM:
            rd.fail(path + ("complexity",), "custom complexity is only available through the Python API")
        surj = rd.get(cd, path, "surjectivity", "auto")
        table = cd.get("function_table")
        if surj == "auto":
            if table is None:
                rd.fail(path + ("surjectivity",), "'auto' requires function_table")
            surj = None
        else:
            try:
                surj = float(surj)
            except (TypeError, ValueError):
                rd.fail(path + ("surjectivity",), f"expected a number or 'auto', got {surj!r}")
        h_func = cd.get("h_func")
        try:
            k = float(rd.get(cd, path, "k", 1.0))
        except (TypeError, ValueError):
            rd.fail(path + ("k",), "expected a number")
        classes.append(FunctionClass(cid, complexity, k, surj,
                                     h_func=None if h_func is None else float(h_func),
                                     function_table=table))

    path = ("network",)
    n = rd.get(doc, path, "node_count")
    if not isinstance(n, int) or n < 1:
        rd.fail(path + ("node_count",), f"expected a positive integer, got {n!r}")
    ids = [fc.id for fc in classes]

    def per_class(key, shape):
        block = rd.get(doc, path, key)
        if not isinstance(block, dict):
            rd.fail(path + (key,), "expected a mapping from class id to values")
        out = []
        for cid in ids:
            if cid not in block:
                rd.fail(path + (key,), f"no entry for class {cid!r}")
            try:
                arr = np.array(block[cid], dtype=float)
            except (TypeError, ValueError):
                rd.fail(path + (key, cid), "expected numeric values")
            if arr.shape != shape:
                rd.fail(path + (key, cid), f"expected shape {shape}, got {arr.shape}")
            out.append(arr)
        extra = set(block) - set(ids)
        if extra:
            rd.fail(path + (key,), f"entries for unknown classes {sorted(map(str, extra))}")
        return np.array(out)

    return NetworkSpec(
        node_count=n,
        classes=tuple(classes),
        routing=per_class("routing", (n, n)),
        arrival_split=per_class("arrival_split", (n,)),
        external_rate=per_class("external_rate", ()),
        service_rate=per_class("service_rate", (n,)),
    )


def network_to_dict(spec: NetworkSpec) -> dict:
    """Serialize as ``{"network": ..., "classes": ...}`` plain data."""
    ids = spec.class_ids

    def block(arr):
        return {cid: arr[i].tolist() for i, cid in enumerate(ids)}

    classes = []
    for fc in spec.classes:
        d: dict[str, Any] = {"id": fc.id, "complexity": fc.complexity.value, "k": fc.k,
                             "surjectivity": "auto" if fc.surjectivity is None else fc.surjectivity}
        if fc.h_func is not None:
            d["h_func"] = fc.h_func
        if fc.function_table is not None:
            d["function_table"] = fc.function_table
        classes.append(d)
    return {
        "network": {
            "node_count": spec.node_count,
            "routing": block(spec.routing),
            "arrival_split": block(spec.arrival_split),
            "external_rate": {cid: float(spec.external_rate[i]) for i, cid in enumerate(ids)},
            "service_rate": block(spec.service_rate),
        },
        "classes": classes,
    }


def dump_network(spec: NetworkSpec, path: str | Path | None = None) -> str:
    text = yaml.safe_dump(network_to_dict(spec), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


def network_from_text(text: str, source: str = "<string>") -> NetworkSpec:
    return parse_scenario(text, source).spec


def parse_scenario(text: str, source: str = "<string>", require_network: bool = True) -> Scenario:
    try:
        doc = yaml.safe_load(text)
        root_node = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    rd = _Reader(source, root_node)
    spec = None
    if "network" in doc or require_network:
        spec = _network_from_dict(rd.get(doc, (), "network"), rd.get(doc, (), "classes"), rd)
    exp = doc.get("experiment") or {}
    if not isinstance(exp, dict):
        rd.fail(("experiment",), "expected a mapping")
    sweep = exp.get("sweep")
    grid = exp.get("grid", [])
    if sweep is not None:
        if sweep not in SWEEPS:
            rd.fail(("experiment", "sweep"), f"unknown sweep {sweep!r}; expected one of {SWEEPS}")
        if not isinstance(grid, list) or not grid:
            rd.fail(("experiment", "grid"), "grid must be a nonempty list")
        if sweep != "custom":
            try:
                vals = [float(g) for g in grid]
            except (TypeError, ValueError):
                rd.fail(("experiment", "grid"), "grid values must be numbers")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                rd.fail(("experiment", "grid"), "grid must be strictly increasing")
            grid = vals
        elif not all(isinstance(g, dict) for g in grid):
            rd.fail(("experiment", "grid"), "custom grid entries must be mappings of overrides")
    sim = doc.get("simulation") or {}
    if not isinstance(sim, dict):
        rd.fail(("simulation",), "expected a mapping")
    return Scenario(
        name=str(doc.get("name", Path(source).stem)),
        spec=spec,
        sweep=sweep,
        grid=grid,
        experiment=exp,
        simulation=sim,
        out_dir=doc.get("output_dir"),
        source=Path(source) if source != "<string>" else None,
        digest=hashlib.sha256(text.encode()).hexdigest()[:16],
    )


def load_scenario(path: str | Path, require_network: bool = True) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read: {exc.strerror}") from exc
    return parse_scenario(text, str(path), require_network=require_network)


def load_network(path: str | Path) -> NetworkSpec:
    return load_scenario(path).spec
