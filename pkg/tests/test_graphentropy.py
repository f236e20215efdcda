import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flowcompute.errors import ConvergenceError, DegenerateSourceError, SizeLimitError
from flowcompute.graphentropy import (build_characteristic_graph, complete_graph, cycle_graph,
                                      deficiency, empty_graph, entropic_surjectivity, entropy,
                                      graph_entropy, graph_entropy_oracle, graph_entropy_triple,
                                      graph_from_edges, maximal_independent_sets,
                                      parse_function_table, rate_region_membership,
                                      slepian_wolf_triple, surjectivity_from_table,
                                      write_entropy_record)

# graph entropy of the uniform 5-cycle from 16-restart L-BFGS-B (seed 0); equals log2(5/2)
C5_UNIFORM_BITS = 1.3219280948873624


def brute_mis(n, edges):
    E = {frozenset(e) for e in edges}
    indep = [frozenset(s) for r in range(n + 1) for s in itertools.combinations(range(n), r)
             if all(frozenset(p) not in E for p in itertools.combinations(s, 2))]
    return {s for s in indep if not any(s < t for t in indep)}


def brute_char_edges(f, pj):
    """Edges on variable 0 by direct definition over every context."""
    n = f.shape[0]
    ctxs = list(itertools.product(*(range(s) for s in f.shape[1:])))
    return {(u, v) for u, v in itertools.combinations(range(n), 2)
            if any(pj[(u,) + c] > 0 and pj[(v,) + c] > 0 and f[(u,) + c] != f[(v,) + c] for c in ctxs)}


# -------------------------------------------------------------- characteristic graph

def test_identity_gives_complete():
    g = build_characteristic_graph(np.array([0, 1, 2]), np.full(3, 1 / 3))
    assert g.edges == {(0, 1), (0, 2), (1, 2)}


def test_constant_gives_empty():
    g = build_characteristic_graph(np.zeros((3, 2), dtype=int), np.full((3, 2), 1 / 6))
    assert g.edges == frozenset()


def test_xor_target_x1():
    f = np.array([[0, 1], [1, 0]])
    g = build_characteristic_graph(f, np.full((2, 2), 0.25), 0)
    assert g.edges == {(0, 1)}
    np.testing.assert_allclose(g.pmf, [0.5, 0.5])


def test_zero_probability_context_ignored():
    f = np.array([[0, 1], [0, 0]])
    pj = np.array([[0.5, 0.0], [0.5, 0.0]])   # x2 = 1 never occurs
    assert build_characteristic_graph(f, pj, 0).edges == frozenset()


def test_shape_mismatch():
    with pytest.raises(ValueError, match="does not match"):
        build_characteristic_graph(np.zeros((2, 2)), np.full(4, 0.25))


@given(st.integers(0, 2**32 - 1))
def test_characteristic_graph_matches_definition(seed):
    rng = np.random.default_rng(seed)
    shape = (rng.integers(2, 5), rng.integers(1, 4))
    f = rng.integers(0, 3, size=shape)
    pj = rng.dirichlet(np.ones(f.size)).reshape(shape) * (rng.uniform(size=shape) < 0.8)
    if pj.sum() == 0:
        pj[0, 0] = 1.0
    pj /= pj.sum()
    assert set(build_characteristic_graph(f, pj, 0).edges) == brute_char_edges(f, pj)


def test_graph_validation():
    with pytest.raises(ValueError):
        graph_from_edges(3, [(1, 1)])
    with pytest.raises(ValueError):
        graph_from_edges(2, [(0, 1)], pmf=[0.5, 0.6])
    assert graph_from_edges(3, [(2, 0)]).edges == {(0, 2)}


# -------------------------------------------------------------- independent sets

def test_mis_examples():
    assert set(maximal_independent_sets(complete_graph(3))) == {frozenset({i}) for i in range(3)}
    assert maximal_independent_sets(empty_graph(3)) == [frozenset({0, 1, 2})]
    assert set(maximal_independent_sets(cycle_graph(5))) == {frozenset({i, (i + 2) % 5}) for i in range(5)}


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_mis_matches_brute_force(n, seed):
    rng = np.random.default_rng(seed)
    edges = [e for e in itertools.combinations(range(n), 2) if rng.uniform() < 0.4]
    assert set(maximal_independent_sets(graph_from_edges(n, edges))) == brute_mis(n, edges)


def test_mis_cap():
    with pytest.raises(SizeLimitError):
        maximal_independent_sets(empty_graph(21))
    assert len(maximal_independent_sets(empty_graph(21), cap=21)) == 1


# -------------------------------------------------------------- graph entropy

def test_complete_and_empty_exact():
    assert graph_entropy(complete_graph(4)).value == 2.0
    p = [0.1, 0.2, 0.3, 0.4]
    assert graph_entropy(complete_graph(4, p)).value == entropy(p)
    assert graph_entropy(empty_graph(4, p)).value == 0.0


def test_c5_uniform():
    res = graph_entropy(cycle_graph(5))
    assert res.value == pytest.approx(C5_UNIFORM_BITS, abs=1e-4)
    assert graph_entropy_oracle(cycle_graph(5)) == pytest.approx(C5_UNIFORM_BITS, abs=1e-6)
    assert entropic_surjectivity(cycle_graph(5)) == pytest.approx(C5_UNIFORM_BITS / math.log2(5), abs=1e-4)


def test_witness_supported_on_containing_sets():
    g = graph_from_edges(5, [(0, 1), (1, 2), (3, 4)], pmf=[0.3, 0.1, 0.2, 0.25, 0.15])
    res = graph_entropy(g)
    for x in range(g.n):
        for j, s in enumerate(res.sets):
            if x not in s:
                assert res.witness[x, j] == 0.0
        assert res.witness[x].sum() == pytest.approx(1.0)
    assert 0.0 <= res.gap < 1e-3      # certificate bound, loose compared with the true error
    assert res.value == pytest.approx(graph_entropy_oracle(g), abs=1e-6)


def test_nonconvergence_carries_diagnostics():
    with pytest.raises(ConvergenceError) as exc:
        graph_entropy(cycle_graph(7, pmf=np.arange(1, 8) / 28), tol=1e-300, max_iter=3)
    assert exc.value.best_value is not None and exc.value.gap is not None


def rand_graph(rng, n):
    edges = [e for e in itertools.combinations(range(n), 2) if rng.uniform() < 0.5]
    return graph_from_edges(n, edges, pmf=rng.dirichlet(np.ones(n)))


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_entropy_bounds_and_oracle(n, seed):
    g = rand_graph(np.random.default_rng(seed), n)
    v = graph_entropy(g).value
    assert -1e-12 <= v <= entropy(g.pmf) + 1e-9
    assert v == pytest.approx(graph_entropy_oracle(g, restarts=4, seed=seed), abs=1e-4)


@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_edge_monotonicity(n, seed):
    rng = np.random.default_rng(seed)
    g = rand_graph(rng, n)
    missing = [e for e in itertools.combinations(range(n), 2) if e not in g.edges]
    if not missing:
        return
    u, v = missing[rng.integers(len(missing))]
    assert graph_entropy(g.with_edge(u, v)).value >= graph_entropy(g).value - 1e-6


def test_surjectivity_identity_constant_and_degenerate():
    assert entropic_surjectivity(complete_graph(4)) == 1.0
    assert entropic_surjectivity(empty_graph(4)) == 0.0
    with pytest.raises(DegenerateSourceError):
        entropic_surjectivity(empty_graph(3, [1.0, 0.0, 0.0]))


# -------------------------------------------------------------- deficiency

def counting_alpha0(n):
    return (n - 1) ** 2


@pytest.mark.parametrize("n", range(3, 8))
def test_deficiency_identity_and_constant(n):
    assert deficiency(list(range(n))).alpha0 == counting_alpha0(n)
    assert deficiency([0] * n).alpha0 == counting_alpha0(n)


def test_deficiency_examples():
    assert deficiency([0, 1, 2]).alpha0 == 4
    r = deficiency([x * x % 5 for x in range(5)])
    assert r.alpha0 == 0             # difference maps of x^2 on Z_5 are bijections
    np.testing.assert_array_equal(r.table[0], [5, 0, 0, 0, 0])
    with pytest.raises(ValueError):
        deficiency([0, 1, 2], codomain_size=4)


@given(st.integers(2, 9).flatmap(lambda n: st.permutations(list(range(n)))))
def test_deficiency_rows_count_n(perm):
    r = deficiency(perm)
    assert (r.table.sum(axis=1) == len(perm)).all()
    assert sum(r.alpha.values()) == (len(perm) - 1) * len(perm)


# -------------------------------------------------------------- rate regions

def test_region_examples():
    pj = np.array([[0.4, 0.1], [0.1, 0.4]])
    h1, h2, h12 = slepian_wolf_triple(pj)
    assert h1 + h2 < h12
    assert rate_region_membership(h1, h2, (h1, h2, h12)) == "outside"
    hx1 = entropy(pj.sum(axis=1))
    assert rate_region_membership(hx1, h2, (h1, h2, h12)) == "boundary"
    assert rate_region_membership(hx1 + 0.1, h2 + 0.1, (h1, h2, h12)) == "inside"
    with pytest.raises(ValueError):
        rate_region_membership(1, 1, (2.0, 0.5, 1.0))


def test_xor_uniform_regions_coincide():
    f = np.array([[0, 1], [1, 0]])
    pj = np.full((2, 2), 0.25)
    assert slepian_wolf_triple(pj) == pytest.approx((1.0, 1.0, 2.0))
    assert graph_entropy_triple(f, pj) == pytest.approx((1.0, 1.0, 2.0), abs=1e-5)


def test_graph_region_strictly_larger():
    # f = (x1 mod 2) xor x2 with x1 uniform on four symbols: only the parity of x1 matters
    f = np.array([[(a % 2) ^ b for b in range(2)] for a in range(4)])
    pj = np.full((4, 2), 1 / 8)
    sw = slepian_wolf_triple(pj)
    gr = graph_entropy_triple(f, pj)
    assert sw == pytest.approx((2.0, 1.0, 3.0))
    assert gr == pytest.approx((1.0, 1.0, 2.0), abs=1e-5)
    assert rate_region_membership(1.0, 1.0, sw) == "outside"
    assert rate_region_membership(1.0, 1.0, gr) == "boundary"
    assert rate_region_membership(1.5, 1.2, gr) == "inside"


def test_triple_size_limit():
    with pytest.raises(SizeLimitError):
        graph_entropy_triple(np.zeros((5, 2)), np.full((5, 2), 0.1))


# -------------------------------------------------------------- tables and records

TABLE = """# parity of x1 combined with x2
x1,x2,f,p
0,0,0,0.125
0,1,1,0.125
1,0,1,0.125
1,1,0,0.125
2,0,0,0.125
2,1,1,0.125
3,0,1,0.125
3,1,0,0.125
"""


def test_function_table_and_surjectivity():
    t = parse_function_table(TABLE)
    assert t.variables == ["x1", "x2"] and t.output == "f"
    assert t.values.shape == (4, 2)
    assert graph_entropy(t.graph(0)).value == pytest.approx(1.0, abs=1e-9)
    assert surjectivity_from_table(t) == pytest.approx(1 / 3, abs=1e-9)


def test_table_errors():
    from flowcompute.errors import ConfigError
    with pytest.raises(ConfigError, match=":3:"):
        parse_function_table("x,f,p\n0,0,0.5\n1,1,oops\n")
    with pytest.raises(ConfigError, match="sum to"):
        parse_function_table("x,f,p\n0,0,0.5\n1,1,0.4\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_function_table("x,f,p\n0,0,0.5\n0,1,0.5\n")


def test_entropy_record(tmp_path):
    res = graph_entropy(cycle_graph(5))
    text = write_entropy_record(res, tmp_path / "r.json", source="c5")
    rec = json.loads(text)
    assert rec["source"] == "c5" and rec["value_bits"] == pytest.approx(C5_UNIFORM_BITS, abs=1e-4)
    assert {len(s["set"]) for s in rec["witness_support"]} == {2}
    assert (tmp_path / "r.json").read_text() == text
