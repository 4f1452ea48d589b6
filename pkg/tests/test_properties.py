"""Property-based tests of the structural invariants."""

import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from cauchy_maps import _fast
from cauchy_maps import maps as mp
from cauchy_maps.harmonic import log_hdown, log_hdown_p, log_hup
from cauchy_maps.kernel import builtin_kernel, model_constants, nu_from_weights, weights_from_nu
from cauchy_maps.rng import stream

TYPE2 = builtin_kernel("type2")
QUAD = builtin_kernel("quad")
GAMMA = model_constants(TYPE2).gamma_q
fixtures = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@fixtures
@given(st.integers(1, 10**6), st.integers(1, 10**6))
def test_h_product_identity(ell, p):
    lhs = float(log_hdown_p(ell, p)) + math.log(2.0 * (ell + p))
    rhs = float(log_hdown(p)) + float(log_hup(ell))
    assert abs(math.expm1(lhs - rhs)) < 1e-12


@fixtures
@given(st.integers(TYPE2.K + 1, 10**9), st.integers(1, 10**9))
def test_gamma_is_a_minimum_beyond_table(k, ell):
    term = k * (float(TYPE2.lower_mass(k)) - float(TYPE2.prob(-ell - k)))
    assert term >= GAMMA - 1e-10


def test_weights_round_trip_exact_and_float():
    weights, W = weights_from_nu(QUAD)
    table = [float(W[k]) for k in range(len(W))]
    back = nu_from_weights(weights, table, a=QUAD.a, check_upto=20)
    ks = np.arange(-len(W), 3)
    np.testing.assert_allclose(back.prob(ks), QUAD.prob(ks), rtol=1e-12, atol=0)
    w2, W2 = weights_from_nu(TYPE2)
    again = nu_from_weights(w2, W2, check_upto=50)
    ks = np.arange(-TYPE2.K, TYPE2.K)
    np.testing.assert_allclose(again.prob(ks), TYPE2.prob(ks), rtol=1e-12, atol=0)


@st.composite
def layer_states(draw):
    P = draw(st.integers(1, 10**6))
    D = draw(st.integers(1, 2 * P))
    event = draw(st.sampled_from([_fast.EV_C, _fast.EV_GL, _fast.EV_GR]))
    if event == _fast.EV_C:
        k = draw(st.integers(0, 10**6))
    else:
        k = draw(st.integers(1, P - 1)) if P > 1 else None
    return P, D, event, k


@fixtures
@given(layer_states(), st.integers(0, 10**4))
def test_layers_update_invariants(state, H):
    P, D, event, k = state
    if k is None:
        return
    Pn, Dn, Hn = _fast.layers_update(P, D, H, event, k)
    assert Hn - H in (0, 1)
    assert 1 <= Dn <= 2 * Pn
    tentative = D - 1 if event != _fast.EV_GR else D - 2 * k
    assert (Hn == H + 1) == (tentative <= 0)


@fixtures
@given(st.integers(0, 2**63 - 1), st.text(min_size=1, max_size=12), st.integers(0, 2**40 - 1))
def test_streams_reproducible(seed, tag, idx):
    a = stream(seed, tag, idx).random(4)
    b = stream(seed, tag, idx).random(4)
    assert np.array_equal(a, b)


@fixtures
@given(st.integers(0, 2**32), st.integers(0xF00000, 0xFFFFFF), st.integers(0, 2**40 - 2))
def test_streams_distinct_for_large_tags(seed, tag, idx):
    """Neighbouring ids under high tags must not collide (regression: keys once lost precision)."""
    a = stream(seed, tag, idx).random(2)
    b = stream(seed, tag, idx + 1).random(2)
    c = stream(seed, tag - 1, idx).random(2)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)


@fixtures
@given(st.integers(1, 12), st.integers(0, 10**6))
def test_built_maps_valid(ell, seed):
    m = mp.build_boltzmann(TYPE2, ell, stream(seed, "prop-map", 0), 1 << 18)
    m.validate()
    assert m.n_vertices - m.n_edges + m.n_faces == 2


@fixtures
@given(st.integers(1, 6), st.integers(0, 10**6), st.floats(0, 1, exclude_max=True))
def test_unzip_rezip(ell, seed, where):
    m = mp.build_boltzmann(TYPE2, ell, stream(seed, "prop-zip", 0), 1 << 16)
    h = int(where * m.n_half_edges)
    u = mp.unzip(m, h)
    u.validate()
    assert mp.rezip(u, u.n_faces - 1).same_structure(m)


@fixtures
@given(st.integers(1, 6), st.integers(0, 10**6), st.floats(0.0, 0.8))
def test_watermelon_inflate_collapse(ell, seed, q1):
    m = mp.build_boltzmann(TYPE2, ell, stream(seed, "prop-melon", 0), 1 << 16)
    core = mp.watermelon_collapse(m).collapsed
    fat = mp.watermelon_inflate(core, q1, stream(seed, "prop-melon", 1))
    fat.validate()
    assert mp.watermelon_collapse(fat).collapsed.same_structure(core)
