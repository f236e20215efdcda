import textwrap

import pytest

from flowcompute.config import load_scenario, parse_scenario
from flowcompute.errors import ConfigError

BASE = textwrap.dedent("""\
    name: demo
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
    """)


def test_parse_basic():
    sc = parse_scenario(BASE)
    assert sc.name == "demo" and sc.sweep == "mincost_vs_k" and sc.grid == [1.0, 2.0, 4.0]
    assert sc.spec.node_count == 2 and sc.spec.classes[0].k == 2.0
    assert len(sc.digest) == 16


def test_digest_tracks_content():
    assert parse_scenario(BASE).digest == parse_scenario(BASE).digest
    assert parse_scenario(BASE).digest != parse_scenario(BASE.replace("4.0]", "5.0]")).digest


def test_error_carries_line():
    bad = BASE.replace("service_rate: {c1: [3.0, 3.0]}", "service_rate: {c1: [3.0]}")
    with pytest.raises(ConfigError, match=r"<string>:7: network.service_rate.c1: expected shape"):
        parse_scenario(bad)


def test_missing_field_line(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(BASE.replace("  external_rate: {c1: 1.0}\n", ""))
    with pytest.raises(ConfigError, match=r"s.yaml:2: network.external_rate: missing"):
        load_scenario(p)


def test_grid_must_increase():
    with pytest.raises(ConfigError, match="strictly increasing"):
        parse_scenario(BASE.replace("[1.0, 2.0, 4.0]", "[1.0, 1.0, 4.0]"))
    with pytest.raises(ConfigError, match="nonempty"):
        parse_scenario(BASE.replace("[1.0, 2.0, 4.0]", "[]"))


def test_unknown_sweep_and_complexity():
    with pytest.raises(ConfigError, match="unknown sweep"):
        parse_scenario(BASE.replace("mincost_vs_k", "fig9"))
    with pytest.raises(ConfigError, match="unknown complexity"):
        parse_scenario(BASE.replace("classification", "sorting"))


def test_auto_needs_table():
    with pytest.raises(ConfigError, match="requires function_table"):
        parse_scenario(BASE.replace("surjectivity: 0.5", "surjectivity: auto"))
    sc = parse_scenario(BASE.replace("surjectivity: 0.5", "surjectivity: auto, function_table: t.csv"))
    assert sc.spec.classes[0].surjectivity is None


def test_unknown_class_block():
    with pytest.raises(ConfigError, match="unknown classes"):
        parse_scenario(BASE.replace("external_rate: {c1: 1.0}", "external_rate: {c1: 1.0, c9: 2.0}"))


def test_invalid_yaml_and_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="invalid YAML"):
        parse_scenario("a: [1, 2")
    with pytest.raises(ConfigError, match="cannot read"):
        load_scenario(tmp_path / "nope.yaml")


def test_threshold_scenario_without_network():
    sc = parse_scenario("experiment: {sweep: threshold_vs_M, grid: [0, 1]}", require_network=False)
    assert sc.spec is None and sc.grid == [0.0, 1.0]


def test_custom_grid_entries_are_mappings():
    doc = BASE.replace("sweep: mincost_vs_k", "sweep: custom").replace("[1.0, 2.0, 4.0]", "[{k: 2.0}, 3]")
    with pytest.raises(ConfigError, match="mappings"):
        parse_scenario(doc)
