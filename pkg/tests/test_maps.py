import json
import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path
from scipy.stats import chisquare

from cauchy_maps import maps as mp
from cauchy_maps.kernel import mu_law
from cauchy_maps.oracles import first_passage_law, log_W_from_nu, partition_sized
from cauchy_maps.rng import stream


def _small_maps(law, count, ell=3, seed=1):
    out = []
    i = 0
    while len(out) < count:
        m = mp.build_boltzmann(law, ell, stream(seed, "small-maps", i), 1 << 16)
        i += 1
        if 4 <= m.n_faces <= 400:
            out.append(m)
    return out


def _all_pairs(m):
    u, v = mp.dual_edges(m)
    a = sp.coo_matrix((np.ones(len(u)), (u, v)), shape=(m.n_faces, m.n_faces)).tocsr()
    return shortest_path(a, unweighted=True, directed=False)


def test_built_maps_are_valid(type2, quad):
    for law in (type2, quad):
        for i in range(100):
            m = mp.build_boltzmann(law, 1 + i % 7, stream(2, "valid", i), 1 << 20)
            m.validate()
            assert m.n_vertices - m.n_edges + m.n_faces == 2
            assert m.face_degrees()[m.root_face] == 2 * (1 + i % 7)


@pytest.mark.parametrize("name", ["quad", "type2"])
def test_edge_count_law_ell_one(name, request):
    law = request.getfixturevalue(name)
    samples = 100000
    counts = np.bincount([mp.build_boltzmann(law, 1, stream(3, "edges-" + name, i), 1 << 20).n_edges
                          for i in range(samples)], minlength=12)
    fpt = first_passage_law(mu_law(law, check=False), 2, 64)
    sized = np.array([partition_sized(law, 1, n, fpt)[1] for n in range(1, 9)])
    total = math.exp(float(log_W_from_nu(law, 1)))
    for n in range(1, 9):
        prob = sized[n - 1] / total
        emp = counts[n] / samples
        assert abs(emp - prob) <= 3 * math.sqrt(prob * (1 - prob) / samples) + 1e-12, (n, emp, prob)


def test_targeted_map(type2):
    m = mp.build_targeted(type2, 20, 3, stream(4, "targeted", 0), 1 << 20)
    m.validate()
    assert m.face_degrees()[m.target_face] == 6
    assert m.target_tau >= 1
    assert m.stamp.shape == (m.n_half_edges,)


def test_size_cap(type2):
    with pytest.raises(mp.SizeError):
        for i in range(50):
            mp.build_boltzmann(type2, 2000, stream(5, "cap", i), 1 << 12)


def test_pointed_counts_fixture():
    c = mp.PointedCounts(1, 1, 1, 0, np.array([-1]))
    assert (c.vertices, c.faces, c.edges) == (2, 1, 1)


def test_pointed_walks_euler(type2):
    mu = mu_law(type2, check=False)
    sampler = mp.MuSampler(mu)
    for i in range(300):
        ell = 1 + i % 9
        c = mp.build_pointed_js(mu, ell, stream(6, "js", i), keep_walk=True, sampler=sampler)
        assert c.vertices - c.edges + c.faces == 2
        path = np.cumsum(c.walk)
        assert path[-1] == -ell and np.all(path[:-1] > -ell)


@pytest.mark.parametrize("name", ["quad", "type2"])
def test_pointed_debias(name, request):
    """E[1/V] under the pointed law times W_pointed / W is 1."""
    law = request.getfixturevalue(name)
    mu = mu_law(law, check=False)
    sampler = mp.MuSampler(mu)
    ell, samples = 2, 40000
    inv = np.array([_inverse_vertices(mu, ell, stream(7, "debias", i), sampler)
                    for i in range(samples)])
    ratio = math.exp(mp.log_pointed_partition(law, ell) - float(log_W_from_nu(law, ell)))
    est = inv.mean() * ratio
    assert abs(est - 1) < 4 * inv.std() * ratio / math.sqrt(samples)


def _inverse_vertices(mu, ell, g, sampler, budget=1 << 22):
    # a walk still running after `budget` steps has at least budget * mu(-1) / 2 down-steps
    # with overwhelming probability, so its 1/V is below 1e-5; it is counted as 0
    try:
        return 1.0 / mp.build_pointed_js(mu, ell, g, budget=budget, sampler=sampler).vertices
    except mp.BudgetExceeded:
        return 0.0


def test_adjacent_faces_distance_one(type2):
    m = _small_maps(type2, 1)[0]
    h = int(np.flatnonzero(m.face != m.face[m.opp])[0])
    d = mp.dual_distances(m, "graph", source=int(m.face[h]))
    assert d[m.face[m.opp[h]]] == 1
    assert d[m.face[h]] == 0
    dd = mp.DualDistances(m, "fpp", stream(1, "fpp", 0))
    assert dd.between(3, 3) == 0.0


def test_graph_distances_match_scipy(type2):
    for m in _small_maps(type2, 5):
        ref = _all_pairs(m)
        dd = mp.DualDistances(m, "graph")
        for f in (0, m.n_faces // 2, m.n_faces - 1):
            np.testing.assert_array_equal(dd.from_face(f), ref[f])


def test_diameter_exact_on_small_maps(type2):
    for m in _small_maps(type2, 10, seed=4):
        ref = _all_pairs(m).max()
        d = mp.diameter(m)
        assert d.exact and d.lower == d.upper == ref
        cheap = mp.diameter(m, budget=2)
        assert cheap.lower <= ref <= cheap.upper


def test_fpp_diameter_bounds(type2):
    m = _small_maps(type2, 1, seed=5)[0]
    g = stream(1, "fppw", 0)
    w = mp.fpp_weights(m, g)
    dd = mp.DualDistances(m, "fpp", weights=w)
    ref = shortest_path(mp.dual_fpp_matrix(m, w), directed=False).max()
    d = mp.diameter(m, "fpp", dd=dd)
    assert d.lower == pytest.approx(ref) and d.exact


def test_unzip_rezip_identity(type2):
    for m in _small_maps(type2, 10, seed=6):
        for h in (1, m.n_half_edges // 2, m.n_half_edges - 1):
            if m.opp[h] == h:
                continue
            u = mp.unzip(m, h)
            u.validate()
            assert u.n_faces == m.n_faces + 1 and u.face_degrees()[-1] == 2
            assert mp.rezip(u, u.n_faces - 1).same_structure(m)


def test_unzip_distance_shift(type2):
    for m in _small_maps(type2, 10, seed=7):
        h = m.n_half_edges - 1
        d = mp.dual_distances(m)
        u = mp.unzip(m, h)
        du = mp.dual_distances(u)
        assert du[u.n_faces - 1] == mp.edge_distance(d, m, h) + 1


def test_rezip_rejects_bad_faces(type2):
    m = _small_maps(type2, 1)[0]
    big = int(np.argmax(m.face_degrees()))
    if big != m.root_face:
        with pytest.raises(mp.ShapeError):
            mp.rezip(m, big)


def test_exchange_root_target(quad):
    """Rerooting (map, uniform edge) matches the 2-face targeted law reweighted by 1/(E - 1)."""
    samples, cap = 20000, 1 << 20
    a_stats, b_stats, weights = [], [], []
    dropped = 0.0
    for i in range(samples):
        g = stream(8, "reroot-a", i)
        m = mp.build_boltzmann(quad, 1, g, cap)
        h = int(g.integers(m.n_half_edges))
        u = mp.unzip(m, h)
        u.target_face = u.n_faces - 1
        r = mp.exchange_root_target(u, g)
        r.validate()
        assert r.face_degrees()[r.root_face] == 2
        a_stats.append(_reroot_stats(r))
        try:
            t = mp.build_targeted(quad, 1, 1, stream(8, "reroot-b", i), cap)
        except mp.SizeError:
            dropped += 2.0 / cap  # weight 1/(E - 1) of a map over the cap
            continue
        b_stats.append(_reroot_stats(t))
        weights.append(1.0 / (t.n_edges - 1))
    a = np.array(a_stats, float)
    b = np.array(b_stats, float)
    assert dropped < 1e-3 * np.sum(weights)
    w = np.array(weights) / np.sum(weights)
    for j in range(a.shape[1]):
        mean_b = float(np.dot(w, b[:, j]))
        se_a = a[:, j].std() / math.sqrt(len(a))
        se_b = math.sqrt(float(np.dot(w**2, (b[:, j] - mean_b) ** 2)))
        assert abs(a[:, j].mean() - mean_b) < 4 * math.hypot(se_a, se_b), j


def _reroot_stats(m):
    d = mp.dual_distances(m)
    return (min(m.n_edges, 8), min(d[m.target_face], 4), min(m.vertex_degrees()[m.vertex[m.root]], 6))


def test_vertex_pick_exactly_uniform(type2):
    for m in _small_maps(type2, 20, seed=9):
        law = mp.vertex_pick_law(m)
        np.testing.assert_allclose(law, 1.0 / m.n_vertices, rtol=1e-12)


def test_face_pick_uniform(type2):
    m = _small_maps(type2, 1, seed=10)[0]
    g = stream(1, "face-pick", 0)
    draws = np.bincount([mp.uniform_pick(m, "face", g) for _ in range(100000)], minlength=m.n_faces)
    assert chisquare(draws).pvalue > 1e-4


def test_vertex_pick_empirical(type2):
    m = _small_maps(type2, 1, seed=11)[0]
    g = stream(1, "vertex-pick", 0)
    draws = np.bincount([mp.uniform_pick(m, "vertex", g) for _ in range(50000)], minlength=m.n_vertices)
    assert chisquare(draws).pvalue > 1e-4


def test_watermelon_round_trips(type2):
    g = stream(1, "melon", 0)
    for m in _small_maps(type2, 30, seed=12):
        view = mp.watermelon_collapse(m)
        core = view.collapsed
        core.validate()
        deg = core.face_degrees()
        deg[core.root_face] = 0
        assert not np.any(deg == 2)
        assert view.inflate().same_structure(m)
        again = mp.watermelon_collapse(core)
        assert again.collapsed.same_structure(core) and np.all(again.multiplicity == 1)
        assert mp.watermelon_inflate(core, 0.0, g).same_structure(core)
        fat = mp.watermelon_inflate(core, 0.4, g)
        fat.validate()
        assert mp.watermelon_collapse(fat).collapsed.same_structure(core)


def test_collapsed_weights(type2):
    out = mp.collapsed_weights(type2, 5)
    assert out["q_tilde"][1] == 0.0
    assert out["q1"] == pytest.approx(type2.q1)


def test_exports(tmp_path, type2):
    m = _small_maps(type2, 1, seed=13)[0]
    doc = json.loads(m.to_json())
    assert (doc["V"], doc["E"], doc["F"]) == (m.n_vertices, m.n_edges, m.n_faces)
    back = mp.map_from_faces(doc["faces"], doc["opposite"])
    back.validate()
    assert back.n_vertices == m.n_vertices
    path = tmp_path / "m.npz"
    m.save_binary(str(path))
    assert mp.PlanarMap.load_binary(str(path)).same_structure(m)
    lines = m.dual_csv().splitlines()
    assert lines[0] == "face_a,face_b" and len(lines) == m.n_edges + 1


def test_validate_catches_corruption(type2):
    m = _small_maps(type2, 1, seed=14)[0].copy()
    m.opp[0], m.opp[1] = m.opp[1], m.opp[0]
    with pytest.raises(mp.MapInvariantError):
        m.validate()
