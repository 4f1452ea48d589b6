import math

import numpy as np
import pytest

from cauchy_maps import _fast
from cauchy_maps.harmonic import log_hdown_p
from cauchy_maps.oracles import dp_walk_oracle
from cauchy_maps.peeling import (ExplorationState, ParameterError, Target, calibrate_C,
                                 default_params, event_row_sums, event_table, interpolation_f,
                                 martingale_trace, one_step_expectation, peel_step, run_layers,
                                 run_uniform_fpp)
from cauchy_maps.rng import stream


@pytest.mark.parametrize("target", [Target("face", 1), Target("face", 5), Target("vertex"),
                                    Target("infinity")])
def test_event_rows(type2, target):
    states = np.unique(np.geomspace(1, 1000, 40).astype(int))
    assert np.abs(event_row_sums(type2, target, states) - 1).max() < 1e-10


def test_face_target_stop_probability(quad):
    table = event_table(quad, 1, Target("face", 1))
    assert table.stop == pytest.approx(1 / 3, abs=1e-14)


def test_face_target_matches_walk(type2):
    """Perimeter marginal of the events equals the killed walk kernel."""
    m, p = 6, 3
    table = event_table(type2, m, Target("face", p))
    walk = dp_walk_oracle(type2, "down", m, p, 1, M=1 << 12).at(1)
    assert table.stop == pytest.approx(walk[-p], rel=1e-12)
    for k in range(0, m - 1):
        # filling a hole of half-perimeter k on either side leaves m - k - 1
        assert 2 * table.g_probs[k] == pytest.approx(walk[m - k - 1], rel=1e-10)
    for k in range(1, 30):
        # C_k (new face of half-degree k) moves to m + k - 1
        assert table.c_probs[k - 1] == pytest.approx(walk.get(m + k - 1, 0.0), rel=1e-10, abs=1e-300)


def test_vertex_target_g_ends(type2, rng):
    state = ExplorationState.start(Target("vertex"), P=1)
    for _ in range(200):
        event, new = peel_step(type2, state, "uniform", rng)
        if event.kind.startswith("G") and event.new_perimeter == 0:
            assert not new.alive
            return
    pytest.skip("no terminal G event drawn")


def test_single_step_fpp_runs(quad):
    taus, ds, means = [], [], []
    for i in range(4000):
        run = run_uniform_fpp(quad, 1, stream(9, "fpp", i))
        taus.append(run.tau)
        ds.append(run.d_fpp)
        means.append(run.mean_given_path)
    taus = np.array(taus)
    one = taus == 1
    assert abs(one.mean() - 1 / 3) < 4 * math.sqrt(2 / 9 / 4000)
    assert np.all(np.array(means)[one] == 0.5)
    assert abs(np.mean(np.array(ds)[one]) - 0.5) < 4 * 0.5 / math.sqrt(one.sum())


def test_fpp_conditional_moments(type2):
    """Given the path, d_fpp has mean sum 1/(2P) and variance sum 1/(2P)^2."""
    runs = [run_uniform_fpp(type2, 20, stream(4, "fpp-var", i)) for i in range(10000)]
    runs = [r for r in runs if r.finished]
    resid = np.array([r.d_fpp - r.mean_given_path for r in runs])
    var = np.array([r.var_given_path for r in runs])
    assert abs(resid.mean()) < 4 * math.sqrt(var.mean() / len(runs))
    z = (np.mean(resid**2) - var.mean()) / (np.std(resid**2 - var) / math.sqrt(len(runs)))
    assert abs(z) < 4


def test_layers_trajectory_invariants(type2):
    for i in range(200):
        run = run_layers(type2, 50, stream(8, "layers", i), record=True)
        if not run.finished:
            continue
        traj = run.trajectory
        P, D, H = traj[:, 0], traj[:, 1], traj[:, 2]
        assert np.all(D >= 1) and np.all(D <= 2 * P)
        steps = np.diff(H)
        assert np.all((steps == 0) | (steps == 1))
        assert run.d_gr == H[-1] + 1
        # d = 1: every non-death event raises H
        d_one = np.nonzero(D[:-1] == 1)[0]
        assert np.all(steps[d_one] == 1)


@pytest.mark.parametrize("event", [_fast.EV_C, _fast.EV_GL, _fast.EV_GR])
def test_layers_d_one_rule(event):
    P, D, H = 4, 1, 3
    k = 1
    Pn, Dn, Hn = _fast.layers_update(P, D, H, event, k)
    assert Hn == H + 1 and Dn == 2 * Pn


def test_interpolation():
    f = interpolation_f(0.5)
    assert f(0.0) == pytest.approx(1.0) and f(1.0) == pytest.approx(0.0, abs=1e-12)
    x = np.linspace(0, 1, 20001)
    y = f(x)
    assert np.all(np.diff(y) <= 1e-15)
    assert np.max(np.abs(np.diff(y) / np.diff(x))) <= 1.5 + 1e-6
    assert f.certified_slope <= 1.5


def test_martingale_initial_value(type2):
    params = default_params(type2, 10)
    run = run_layers(type2, 10, stream(1, "mart", 0), record=True)
    trace = martingale_trace(type2, run.trajectory, params["exact"], variants=("exact",))
    assert trace["exact"][0] == pytest.approx(-float(log_hdown_p(1, 10)), rel=1e-12)


def test_martingale_one_step(type2):
    params = default_params(type2, 10)
    for p in (1, 2, 7, 50, 999):
        assert abs(one_step_expectation(type2, params["exact"], p) - 1) < 1e-9
        assert one_step_expectation(type2, params["lambda"], p, variant="lambda") <= 1 + 1e-9
        assert one_step_expectation(type2, params["eps_k0"], p, variant="eps_k0") <= 1 + 1e-9


def test_layered_supermartingale(type2):
    params = default_params(type2, 10)["eps_lambda"]
    C = calibrate_C(type2, params, 100)
    from dataclasses import replace
    params = replace(params, C=C)
    for p in (150, 400):
        for d in (1, p, 2 * p):
            assert one_step_expectation(type2, params, p, d=d, variant="eps_lambda") <= 1 + 1e-9


def test_lambda_needs_positive_rate(type2):
    params = default_params(type2, 10)["exact"]
    traj = np.array([[1, 2, 0, 3, 0]])
    with pytest.raises(ParameterError):
        martingale_trace(type2, traj, params, variants=("lambda",))
