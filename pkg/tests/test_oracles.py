import math
from fractions import Fraction

import numpy as np
import pytest

from cauchy_maps.harmonic import Harmonic
from cauchy_maps.kernel import mu_law, quad_W_exact
from cauchy_maps.oracles import (PartitionTable, TruncationError, W_total, coupling_dp,
                                 death_decomposition, dp_walk_adaptive, dp_walk_oracle,
                                 first_passage_cycle_lemma, first_passage_exact, first_passage_law,
                                 log_W_from_nu, partition_sized, partition_table, tutte_defects)


def test_first_passage_fixture_exact(quad):
    mu = mu_law(quad)
    one = first_passage_exact(mu.exact, 1, 3)
    assert one[1] == Fraction(1, 2)
    assert one[3] == Fraction(1, 8)
    assert first_passage_exact(mu.exact, 2, 2)[2] == Fraction(1, 4)


def test_first_passage_float_matches_exact(quad):
    mu = mu_law(quad)
    exact = first_passage_exact(mu.exact, 3, 40)
    fpt = first_passage_law(mu, 3, 40)
    np.testing.assert_allclose(fpt.probs, [float(x) for x in exact], atol=1e-15)


@pytest.mark.parametrize("k", [1, 5, 20])
@pytest.mark.parametrize("n", [20, 200, 1000])
def test_cycle_lemma_cross_check(type2, k, n):
    mu = mu_law(type2, check=False)
    fpt = first_passage_law(mu, k, n)
    assert abs(fpt.probs[n] - first_passage_cycle_lemma(mu, k, n)) < 1e-12


def test_partition_sized_fixture(quad):
    w1, w = partition_sized(quad, 1, 1, exact=True)
    assert w1 == 0
    w1, _ = partition_sized(quad, 1, 2, exact=True)
    assert w1 == 1
    # no sized value where the first-passage probability vanishes
    for n in (1, 3, 5):
        assert partition_sized(quad, 1, n)[0] == 0.0


def test_sized_values_sum_to_pointed_partition(quad):
    # sum_n W_1^(1)[n] = 1/2 h_down_1(1) c^2 = 4
    assert 0.5 * Harmonic("down_p", 1)(1) * 64 == pytest.approx(4.0)
    fpt = first_passage_law(mu_law(quad), 2, 4001)
    total = sum(partition_sized(quad, 1, n, fpt)[0] for n in range(1, 4002))
    # the first-passage tail beyond the horizon carries the missing weight
    assert total <= 4.0
    assert total + 4.0 * fpt.tail_mass == pytest.approx(4.0, abs=1e-10)


def test_W_total_fixture(quad):
    for ell in (1, 2, 3):
        est = W_total(quad, ell)
        exact = float(quad_W_exact(ell))
        assert abs(math.exp(est.log_W) / exact - 1) <= est.rel_err + 1e-12
    assert W_total(quad, 0).log_W == 0.0


def test_W_from_law_matches_first_passage(type2):
    for ell in (1, 4, 16):
        est = W_total(type2, ell, eps=1e-2)
        assert abs(math.exp(est.log_W - float(log_W_from_nu(type2, ell))) - 1) <= est.rel_err + 1e-9


def test_W_scaling_trend(type2):
    ells = np.array([10, 100, 1000, 10000])
    scaled = np.exp(log_W_from_nu(type2, ells) - (ells + 1) * math.log(type2.c_q)) * ells**2.0
    gaps = np.abs(scaled - type2.tail_neg.p / 2)
    assert np.all(np.diff(gaps) < 0)


def test_dp_examples(quad):
    assert dp_walk_oracle(quad, "up", 1, 0, 1, M=64).at(1) == pytest.approx({2: 1.0})
    out = dp_walk_oracle(quad, "down", 1, 1, 1, M=64).at(1)
    assert out[2] == pytest.approx(2 / 3, abs=1e-14)
    assert out[-1] == pytest.approx(1 / 3, abs=1e-14)


def test_dp_mass_conservation(type2):
    dp = dp_walk_oracle(type2, "down", 2, 3, 8, M=1 << 12)
    for t in range(9):
        total = dp.dists[t].sum() + dp.deaths[: t + 1].sum() + dp.escaped[: t + 1].sum()
        assert total == pytest.approx(1.0, abs=1e-10)


def test_dp_adaptive(type2, quad):
    dp = dp_walk_adaptive(quad, "down", 1, 1, 6)
    assert dp.escaped.sum() <= 1e-10
    with pytest.raises(TruncationError):
        dp_walk_adaptive(type2, "up", 1, 0, 50, M=64, M_max=128)


def test_tutte_rows(type2, quad):
    assert np.abs(tutte_defects(type2, 200)).max() < 1e-6
    assert np.abs(tutte_defects(quad, 200)).max() < 1e-6


def test_coupling_dp_small(type2):
    check = coupling_dp(type2, 3, 6, M=1 << 20)
    assert check.defect < 1e-8


def test_death_decomposition_small(type2):
    for ell, n in ((1, 2), (3, 7), (5, 12)):
        left, right, _ = death_decomposition(type2, ell, n)
        assert np.abs(left - right).max() < 1e-10


def test_partition_table_cache(tmp_path, quad):
    table = partition_table(quad, depth=12, horizon=10, sized_depth=3, check_depth=2)
    path = tmp_path / "w.npz"
    table.save(str(path))
    back = PartitionTable.load(str(path), checksum=quad.checksum())
    np.testing.assert_array_equal(back.log_W, table.log_W)
    assert back.W(1) == pytest.approx(4 / 3)
    with pytest.raises(ValueError):
        PartitionTable.load(str(path), checksum="other")
