import json

import pytest

from cauchy_maps.estimators import (DEFAULT_CONFIG, EXPERIMENTS, ConfigError, ExperimentReport,
                                    exact_harmonic_defects, experiment_config, run_experiment,
                                    tail_fit)

SMALL = {
    "coupling_mc": {"points": [[10, 10]], "samples": 2000},
    "final_perimeter": {"ells": [10, 100], "samples": 500},
    "upsilon_moment": {"ns": [100, 1000], "samples": 500},
    "theorem1": {"ells": [100, 1000], "samples": 500},
    "two_point": {"ells": [30, 100], "samples": 20, "split_ell": 50, "split_samples": 20},
    "volume": {"ells": [10, 30], "samples": 200},
    "diameter": {"ell": 100, "samples": 10},
    "degree_tails": {"ell": 20, "samples": 200, "root_samples": 200},
}


def test_every_experiment_has_defaults():
    assert set(EXPERIMENTS) == set(DEFAULT_CONFIG)


def test_config_rejects_unknown():
    with pytest.raises(ConfigError):
        experiment_config("theorem1", {"nope": 1})
    with pytest.raises(ConfigError):
        run_experiment("nope")
    assert experiment_config("theorem1", {"samples": 3})["samples"] == 3


def test_report_serialisation():
    rep = ExperimentReport("x", "abc", 1, [1], [{"a": 1.0, "b": 2}], {"ok": True}, {"k": 1},
                           wall_clock=3.0)
    other = ExperimentReport("x", "abc", 1, [1], [{"a": 1.0, "b": 2}], {"ok": True}, {"k": 1},
                             wall_clock=9.0)
    assert rep.digest() == other.digest()
    doc = json.loads(rep.to_json())
    assert doc["passed"] and doc["digest"] == rep.digest()
    assert rep.to_csv().splitlines()[0] == "a,b"
    assert rep.plot_data("a", "b", "c").splitlines() == ["x,y,err", "1.0,2,0.0"]


def test_exact_rational_harmonicity():
    assert exact_harmonic_defects(40) == (0, 0)


def test_tail_fit_geometric():
    import numpy as np
    x = np.random.default_rng(0).geometric(0.3, 20000)
    fit = tail_fit(x)
    assert fit["slope"] == pytest.approx(np.log(0.7), rel=0.05)
    assert fit["r2"] > 0.99


@pytest.mark.parametrize("name", sorted(SMALL))
def test_small_runs_are_deterministic(name):
    a = run_experiment(name, overrides=SMALL[name], seed=3)
    b = run_experiment(name, overrides=SMALL[name], seed=3)
    assert a.digest() == b.digest()
    assert a.rows and a.checks
    c = run_experiment(name, overrides=SMALL[name], seed=4)
    assert c.digest() != a.digest()


def test_workers_do_not_change_results():
    cfg = SMALL["theorem1"]
    one = run_experiment("theorem1", overrides=cfg, seed=5, workers=1)
    two = run_experiment("theorem1", overrides=cfg, seed=5, workers=2)
    assert one.digest() == two.digest()


def test_theorem1_internal_consistency():
    rep = run_experiment("theorem1", overrides={"ells": [100, 1000], "samples": 1000}, seed=6)
    for ell in (100, 1000):
        assert rep.checks[f"conditional_variance_{ell}"]
        assert rep.checks[f"rao_blackwell_{ell}"]
    for row in rep.rows:
        assert row["fpp_ratio_se"] > 0 and row["gr_ratio_se"] > 0


def test_upsilon_positive():
    rep = run_experiment("upsilon_moment", overrides=SMALL["upsilon_moment"], seed=7)
    assert rep.checks["positive"]
    assert all(r["estimate"] > 0 for r in rep.rows)
