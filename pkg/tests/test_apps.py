import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bellman_ford_rounds, dijkstra, reference_pagerank, same_partition, symmetrize, union_find_labels
from conftest import make_workdir
from slidegraph.apps import SSSP, ConnectedComponents, PageRank, make_program
from slidegraph.engine import EngineOptions, VertexProgram, run
from slidegraph.errors import DataError, InvariantViolation
from slidegraph.graph import INF_DISTANCE, DegreeTable
from slidegraph.preprocess import csr_from_edges


def _opts(**kw):
    kw.setdefault("workers", 1)
    kw.setdefault("cache_budget", 1 << 24)
    return EngineOptions(**kw)


def _loop_update(program, shard, src, degrees, ctx):
    return VertexProgram.update_shard(program, shard, src, degrees, ctx)


def _random_shard(rng, n, weighted=False):
    m = rng.randrange(0, 40)
    src = [rng.randrange(n) for _ in range(m)]
    s = rng.randrange(n)
    e = rng.randrange(s, n)
    dst = [rng.randrange(s, e + 1) for _ in range(m)]
    w = [float(rng.randint(0, 9)) for _ in range(m)] if weighted else None
    return csr_from_edges(0, s, e, src, dst, w)


@pytest.mark.parametrize("seed", range(20))
def test_vectorized_update_matches_per_vertex_update(seed):
    rng = random.Random(seed)
    n = 30
    shard = _random_shard(rng, n, weighted=seed % 2 == 0)
    out_deg = np.array([rng.randint(1, 5) for _ in range(n)])
    degrees = DegreeTable(np.zeros(n, np.int64), out_deg)

    pr = PageRank()
    pr.num_vertices = n
    src = np.array([rng.random() for _ in range(n)])
    ctx = pr.begin_iteration(src, degrees)
    a, fa = pr.update_shard(shard, src, degrees, ctx)
    b, fb = _loop_update(pr, shard, src, degrees, ctx)
    assert np.array_equal(a, b) and np.array_equal(fa, fb)

    sp = SSSP(0)
    dist = np.array([rng.choice([INF_DISTANCE, rng.randrange(100)]) for _ in range(n)], dtype=np.int64)
    a, fa = sp.update_shard(shard, dist, degrees, None)
    b, fb = _loop_update(sp, shard, dist, degrees, None)
    assert np.array_equal(a, b) and np.array_equal(fa, fb)

    cc = ConnectedComponents()
    labels = np.array([rng.randrange(n) for _ in range(n)], dtype=np.int64)
    a, fa = cc.update_shard(shard, labels, degrees, None)
    b, fb = _loop_update(cc, shard, labels, degrees, None)
    assert np.array_equal(a, b) and np.array_equal(fa, fb)


def test_pagerank_empty_in_adjacency():
    pr = PageRank()
    pr.num_vertices = 7
    new, _ = pr.update(3, np.array([], dtype=np.int64), np.full(7, 1 / 7), DegreeTable([0] * 7, [1] * 7), None)
    assert new == 0.15 / 7


def test_pagerank_asserts_out_degree():
    pr = PageRank()
    pr.num_vertices = 2
    with pytest.raises(InvariantViolation):
        pr.update(0, np.array([1]), np.full(2, 0.5), DegreeTable([1, 0], [0, 0]), None)


def test_sssp_unreachable_keeps_value():
    sp = SSSP(0)
    shard = csr_from_edges(0, 2, 2, [1], [2])
    src = np.array([0, INF_DISTANCE, INF_DISTANCE])
    new, changed = sp.update_shard(shard, src, None, None)
    assert new.tolist() == [INF_DISTANCE] and not changed[0]


def test_cc_min_label():
    cc = ConnectedComponents()
    shard = csr_from_edges(0, 7, 7, [0, 1, 2], [7, 7, 7])
    src = np.array([5, 2, 9, 0, 0, 0, 0, 7], dtype=np.int64)
    new, changed = cc.update_shard(shard, src, None, None)
    assert new.tolist() == [2] and changed.tolist() == [True]


def test_four_cycle_one_iteration(tmp_path):
    wd = make_workdir(tmp_path, [(0, 1), (1, 2), (2, 3), (3, 0)], threshold=2)
    res = run(wd, PageRank(), _opts(max_iterations=1))
    assert res.values.tolist() == [0.15 / 4 + 0.85 * 0.25] * 4
    assert res.values == pytest.approx(0.25)


def test_sssp_chain(tmp_path):
    wd = make_workdir(tmp_path, [(0, 1), (1, 2)], threshold=1)
    one = run(wd, SSSP(0), _opts(max_iterations=1)).values
    assert one.tolist() == [0, 1, INF_DISTANCE]
    two = run(wd, SSSP(0), _opts(max_iterations=2)).values
    assert two.tolist() == [0, 1, 2]


def test_sssp_isolated_and_source(tmp_path):
    wd = make_workdir(tmp_path, [(0, 1), (2, 2), (3, 3)], threshold=1)
    res = run(wd, SSSP(0), _opts())
    assert res.values.tolist() == [0, 1, INF_DISTANCE, INF_DISTANCE]


def test_sssp_source_out_of_range(tmp_path):
    wd = make_workdir(tmp_path, [(0, 1)])
    with pytest.raises(DataError, match="source vertex"):
        run(wd, SSSP(9), _opts())


def test_sssp_rounds_fractional_weights(tmp_path):
    wd = make_workdir(tmp_path, [(0, 1, 1.4), (1, 2, 2.6)])
    with pytest.warns(UserWarning, match="rounded"):
        res = run(wd, SSSP(0), _opts())
    assert res.values.tolist() == [0, 1, 4]
    real = run(wd, SSSP(0, real_valued=True), _opts())
    assert real.values.tolist() == pytest.approx([0, 1.4, 4.0])


def test_cc_two_components(tmp_path):
    wd = make_workdir(tmp_path, [(0, 1), (2, 2)], symmetrize=True)
    assert run(wd, ConnectedComponents(), _opts()).values.tolist() == [0, 0, 2]


def test_cc_edgeless_graph_terminates_after_one_iteration(tmp_path):
    wd = make_workdir(tmp_path, [(0, 0), (1, 1), (2, 2)], symmetrize=True)
    res = run(wd, ConnectedComponents(), _opts())
    assert res.values.tolist() == [0, 1, 2]
    assert res.iterations == 1


def test_cc_path(tmp_path):
    wd = make_workdir(tmp_path, [(2, 1), (1, 0)], symmetrize=True, threshold=2)
    res = run(wd, ConnectedComponents(), _opts(max_iterations=2))
    assert res.values.tolist() == [0, 0, 0]


def test_cc_requires_symmetric(tmp_path):
    wd = make_workdir(tmp_path, [(0, 1)])
    with pytest.raises(DataError, match="--symmetrize"):
        run(wd, ConnectedComponents(), _opts())


def test_make_program():
    assert isinstance(make_program("sssp", source=3), SSSP)
    assert make_program("pagerank", epsilon=1e-9).epsilon == 1e-9
    with pytest.raises(ValueError):
        make_program("bfs")


# -- oracle equivalence on random graphs ---------------------------------------------

graphs = st.tuples(st.integers(2, 40), st.integers(1, 200), st.integers(0, 10**6), st.integers(2, 60))


@settings(max_examples=25, deadline=None)
@given(graphs, st.integers(1, 12))
def test_pagerank_equals_reference(tmp_path_factory, g, iterations):
    n, m, seed, threshold = g
    rng = random.Random(seed)
    edges = [(rng.randrange(n), rng.randrange(n)) for _ in range(m)] + [(n - 1, 0)]
    wd = make_workdir(tmp_path_factory.mktemp("pr"), edges, threshold=threshold)
    res = run(wd, PageRank(), _opts(max_iterations=iterations))
    nv = res.meta.num_vertices
    dense = {v: i for i, v in enumerate(sorted({x for e in edges for x in e}))}
    relabeled = [(dense[u], dense[v]) for u, v in edges]
    assert res.values.tolist() == reference_pagerank(relabeled, nv, res.iterations)
    assert np.all(res.values >= 0.15 / nv)


@settings(max_examples=25, deadline=None)
@given(graphs)
def test_sssp_equals_dijkstra(tmp_path_factory, g):
    n, m, seed, threshold = g
    rng = random.Random(seed)
    edges = [(rng.randrange(n), rng.randrange(n), rng.randint(0, 9)) for _ in range(m)] + [(n - 1, 0, 1)]
    edges += [(v, v, 1) for v in range(n)]
    wd = make_workdir(tmp_path_factory.mktemp("sp"), edges, threshold=threshold)
    source = rng.randrange(n)
    res = run(wd, SSSP(source), _opts(max_iterations=10**6))
    want = [INF_DISTANCE if d == float("inf") else d for d in dijkstra(edges, n, source)]
    assert res.values.tolist() == want


@settings(max_examples=25, deadline=None)
@given(graphs)
def test_cc_equals_union_find(tmp_path_factory, g):
    n, m, seed, threshold = g
    rng = random.Random(seed)
    edges = [(rng.randrange(n), rng.randrange(n)) for _ in range(m // 4 + 1)]
    edges += [(v, v) for v in range(n)]
    wd = make_workdir(tmp_path_factory.mktemp("cc"), edges, threshold=threshold, symmetrize=True)
    res = run(wd, ConnectedComponents(), _opts(max_iterations=10**6))
    want = union_find_labels(symmetrize(edges), n)
    assert same_partition(res.values.tolist(), want)
    assert res.values.tolist() == want
    assert np.all(res.values <= np.arange(n))


def test_sssp_monotone_across_iterations(tmp_path):
    rng = random.Random(11)
    n = 60
    edges = [(rng.randrange(n), rng.randrange(n), rng.randint(1, 5)) for _ in range(300)]
    edges += [(v, v, 1) for v in range(n)]
    wd = make_workdir(tmp_path, edges, threshold=40)
    prev = None
    for k in range(1, 8):
        vals = run(wd, SSSP(0), _opts(max_iterations=k)).values
        ref = bellman_ford_rounds(edges, n, 0, k)
        assert vals.tolist() == [INF_DISTANCE if d == float("inf") else d for d in ref]
        assert vals[0] == 0
        if prev is not None:
            assert np.all(vals <= prev)
        prev = vals
