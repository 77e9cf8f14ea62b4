import time

import numpy as np
import pytest
import scipy.stats

from oqw.qcore.main import CoinCT, DensityOperator, PreconditionError
from oqw.classify1d.main import StateKind, classify_1d, drift_1d
from oqw.classify2d.main import classify_2d_ct
from oqw.simulate.main import (
    Trajectory,
    empirical_distribution,
    empirical_stats,
    exact_distribution,
    marginal,
    simulate_ct,
    simulate_discrete,
    simulate_ensemble,
    total_variation,
)
from oqw.cli.registry import build_fixture, coin_ex5_2, coin_ex5_4, coin_ex7_1, coin_ex7_2, fixture_names

DISCRETE_FIXTURES = [n for n in fixture_names() if not isinstance(build_fixture(n), CoinCT)]


def flat_ct_coin():
    half = 0.5 * np.eye(1)
    return CoinCT(A1=half, A2=half, A3=half, A4=half, H=np.zeros((1, 1)))


def test_same_seed_same_trajectory():
    a = simulate_discrete(coin_ex5_4(), None, 50, seed=7, index=3)
    b = simulate_discrete(coin_ex5_4(), None, 50, seed=7, index=3)
    c = simulate_discrete(coin_ex5_4(), None, 50, seed=7, index=4)
    assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)


def test_steps_are_unit_moves():
    t = simulate_discrete(coin_ex5_4(), None, 100, seed=1)
    assert t.positions.shape == (101, 1)
    assert set(np.diff(t.positions[:, 0]).tolist()) <= {-1, 1}
    lazy = simulate_discrete(coin_ex5_2(), None, 100, seed=1)
    assert set(np.diff(lazy.positions[:, 0]).tolist()) <= {-1, 0, 1}
    plane = simulate_discrete(coin_ex7_2(), None, 100, seed=1)
    moves = np.abs(np.diff(plane.positions, axis=0)).sum(axis=1)
    assert set(moves.tolist()) == {1}


def test_enclosure_state_walks_with_its_drift():
    trajectories = simulate_ensemble(coin_ex5_4(), DensityOperator.basis(4, 3), 200, 400, seed=11)
    stats = empirical_stats(trajectories)
    assert stats.drift[0] == pytest.approx(-1 / 3, abs=0.02)
    assert stats.compensated_drift[0] == pytest.approx(-1 / 3, abs=1e-9)
    assert stats.drift_ci[0][0] < stats.drift[0] < stats.drift_ci[0][1]


def test_internal_state_stays_in_enclosure():
    t = simulate_discrete(coin_ex5_4(), DensityOperator.basis(4, 3), 20, seed=2, store_states=True)
    assert len(t.internal_states) == 21
    for s in t.internal_states:
        assert s.matrix[3, 3].real == pytest.approx(1.0, abs=1e-12)


def test_classification_is_constant_along_trajectories():
    verdict = classify_1d(coin_ex5_4())
    for rho0, kind in ((DensityOperator.basis(4, 3), StateKind.TRANSIENT),
                       (DensityOperator.maximally_mixed(4), StateKind.RECURRENT)):
        for index in range(3):
            t = simulate_discrete(coin_ex5_4(), rho0, 30, seed=5, index=index, store_states=True)
            assert {verdict.state_kind(s) for s in t.internal_states} == {kind}


def test_continuous_time_waiting_times_are_exponential():
    t = simulate_ct(flat_ct_coin(), None, 2000.0, seed=9)
    waits = np.diff(t.times)
    assert len(waits) > 1500
    assert scipy.stats.kstest(waits, "expon").pvalue > 1e-3
    moves = np.diff(t.positions, axis=0)
    for step in ((1, 0), (0, 1), (-1, 0), (0, -1)):
        share = np.all(moves == step, axis=1).mean()
        assert abs(share - 0.25) < 0.05


def test_continuous_time_stays_within_horizon():
    t = simulate_ct(coin_ex7_1(0.0), None, 3.0, seed=4)
    assert t.continuous
    assert t.times[0] == 0.0
    assert np.all(np.diff(t.times) > 0)
    assert t.times[-1] <= 3.0


def test_compensator_follows_drift_ratio():
    t = simulate_ct(coin_ex7_1(0.0), None, 5.0, seed=3)
    c1, c2 = t.compensator[-1]
    assert c1 == pytest.approx(4 * c2, rel=1e-9, abs=1e-12)


def test_raw_drift_agrees_with_compensated_drift():
    trajectories = simulate_ensemble(coin_ex7_1(0.0), None, 5.0, 100, seed=21)
    stats = empirical_stats(trajectories)
    for raw, comp, err in zip(stats.drift, stats.compensated_drift, stats.drift_stderr):
        assert abs(raw - comp) <= 5 * err + 0.05
    assert stats.time_at_origin is not None


def test_stats_of_a_resting_ensemble():
    resting = [
        Trajectory(positions=np.zeros((11, 1), dtype=np.int64), times=np.arange(11.0),
                   compensator=np.zeros((11, 1)), horizon=10.0, seed=0, index=i)
        for i in range(3)
    ]
    stats = empirical_stats(resting)
    assert stats.drift == [0.0]
    assert stats.drift_stderr == [0.0]
    assert stats.returns_to_origin == 30
    assert stats.mean_returns == 10.0
    assert stats.occupation == {"0": 33}
    assert stats.time_at_origin is None


def test_stats_errors():
    with pytest.raises(PreconditionError):
        empirical_stats([])
    a = simulate_discrete(coin_ex5_4(), None, 5, seed=0)
    b = simulate_discrete(coin_ex5_4(), None, 6, seed=0)
    with pytest.raises(PreconditionError):
        empirical_stats([a, b])
    with pytest.raises(PreconditionError):
        empirical_distribution([], 3)


def test_simulation_errors():
    with pytest.raises(PreconditionError):
        simulate_discrete(coin_ex5_4(), None, -1, seed=0)
    with pytest.raises(PreconditionError):
        simulate_ct(coin_ex7_1(), None, 0.0, seed=0)


def test_ensemble_does_not_depend_on_workers():
    one = simulate_ensemble(coin_ex5_4(), None, 30, 8, seed=3, workers=1)
    two = simulate_ensemble(coin_ex5_4(), None, 30, 8, seed=3, workers=2, batch_size=3)
    assert [t.index for t in two] == list(range(8))
    for a, b in zip(one, two):
        assert np.array_equal(a.positions, b.positions)
    single = simulate_discrete(coin_ex5_4(), None, 30, seed=3, index=5)
    assert np.array_equal(single.positions, one[5].positions)


def test_total_variation_basics():
    assert total_variation({0: 1.0}, {0: 1.0}) == 0.0
    assert total_variation({0: 1.0}, {1: 1.0}) == 1.0
    assert total_variation({0: 0.5, 1: 0.5}, {0: 1.0}) == pytest.approx(0.5)


def test_empirical_distribution_matches_exact_on_the_line():
    coin = coin_ex5_4()
    exact = exact_distribution(coin, None, 20).distribution(floor=1e-15)
    empirical = empirical_distribution(simulate_ensemble(coin, None, 20, 4000, seed=13), 20)
    assert total_variation(exact, empirical) < 0.06


def test_empirical_distribution_matches_exact_on_the_plane():
    coin = coin_ex7_2()
    exact = exact_distribution(coin, None, 10).distribution(floor=1e-15)
    empirical = empirical_distribution(simulate_ensemble(coin, None, 10, 4000, seed=17), 10)
    for axis in (0, 1):
        assert total_variation(marginal(exact, axis), marginal(empirical, axis)) < 0.05


@pytest.mark.slow
def test_empirical_distribution_at_scale():
    coin = coin_ex5_4()
    exact = exact_distribution(coin, None, 50).distribution(floor=1e-15)
    empirical = empirical_distribution(simulate_ensemble(coin, None, 50, 40000, seed=29), 50)
    assert total_variation(exact, empirical) < 0.03


def test_continuous_time_ensemble_does_not_depend_on_batching():
    coin = coin_ex7_1(0.0)
    whole = simulate_ensemble(coin, None, 3.0, 7, seed=5, batch_size=7)
    split = simulate_ensemble(coin, None, 3.0, 7, seed=5, batch_size=2, workers=2)
    assert [t.index for t in split] == list(range(7))
    for a, b in zip(whole, split):
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.compensator, b.compensator)
    single = simulate_ct(coin, None, 3.0, seed=5, index=4)
    assert np.array_equal(single.times, whole[4].times)
    assert np.array_equal(single.positions, whole[4].positions)


def test_batch_size_must_be_positive():
    with pytest.raises(PreconditionError):
        simulate_ensemble(coin_ex5_4(), None, 5, 3, seed=0, batch_size=0)


def test_continuous_time_trajectory_without_jumps():
    dark = CoinCT(A1=np.zeros((1, 1)), A2=np.zeros((1, 1)), A3=np.zeros((1, 1)), A4=np.zeros((1, 1)),
                  H=np.ones((1, 1)))
    t = simulate_ct(dark, None, 10.0, seed=1)
    assert t.times.tolist() == [0.0]
    assert t.positions.tolist() == [[0, 0]]


@pytest.mark.slow
def test_law_of_large_numbers_on_enclosure_state():
    coin = coin_ex5_4()
    rho0 = DensityOperator.basis(4, 3)
    m = drift_1d(coin, rho0)
    start = time.perf_counter()
    stats = empirical_stats(simulate_ensemble(coin, rho0, 10_000, 200, seed=31))
    elapsed = time.perf_counter() - start
    assert m == pytest.approx(-1 / 3, abs=1e-12)
    assert stats.drift[0] == pytest.approx(m, abs=0.05)
    assert elapsed < 30.0


@pytest.mark.slow
def test_continuous_time_drift_direction():
    coin = coin_ex7_1(0.0)
    m = classify_2d_ct(coin).enclosures[0].m
    start = time.perf_counter()
    ensemble = simulate_ensemble(coin, None, 200.0, 500, seed=37)
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    # отношение компонент по 2000 траекториям
    for seed in (38, 39, 40):
        ensemble += simulate_ensemble(coin, None, 200.0, 500, seed=seed)
    stats = empirical_stats(ensemble)
    assert stats.drift[0] / stats.drift[1] == pytest.approx(4.0, rel=0.1)
    assert stats.drift == pytest.approx(list(m), abs=0.05)


@pytest.mark.slow
@pytest.mark.parametrize("name", DISCRETE_FIXTURES)
def test_empirical_distribution_matches_exact_for_fixture(name):
    coin = build_fixture(name)
    exact = exact_distribution(coin, None, 20).distribution(floor=1e-15)
    empirical = empirical_distribution(simulate_ensemble(coin, None, 20, 40_000, seed=41), 20)
    if isinstance(next(iter(exact)), int):
        assert total_variation(exact, empirical) <= 0.02
    else:
        for axis in (0, 1):
            assert total_variation(marginal(exact, axis), marginal(empirical, axis)) <= 0.02
