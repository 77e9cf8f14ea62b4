import numpy as np
import pytest

from oqw.qcore.main import DensityOperator, random_density
from oqw.classify1d.main import (
    StateKind,
    VerdictKind,
    classify_1d,
    classify_state_1d,
    drift_law_1d,
)
from oqw.cli.registry import coin_ex5_1a, coin_ex5_1b, coin_ex5_3, coin_ex5_4, coin_ex5_5, coin_ex5_6


def test_block_coin_states():
    coin = coin_ex5_4()
    assert classify_state_1d(coin, DensityOperator.basis(4, 3)) == StateKind.TRANSIENT
    assert classify_state_1d(coin, DensityOperator.maximally_mixed(4)) == StateKind.RECURRENT
    # e1 попадает в возвратный блок
    assert classify_state_1d(coin, DensityOperator.basis(4, 0)) == StateKind.RECURRENT


def test_recurrent_verdict_makes_every_state_recurrent(rng):
    coin = coin_ex5_6()
    for _ in range(5):
        assert classify_state_1d(coin, random_density(4, rng, rank=1)) == StateKind.RECURRENT


def test_transient_verdict_makes_every_state_transient(rng):
    coin = coin_ex5_5()
    for _ in range(5):
        assert classify_state_1d(coin, random_density(3, rng)) == StateKind.TRANSIENT


@pytest.mark.parametrize("coin", [coin_ex5_4(), coin_ex5_4(0.0, 0.0, 0.5), coin_ex5_1b(1 / np.sqrt(3), 0.3)])
def test_faithful_states_are_recurrent_unless_transient(coin, rng):
    verdict = classify_1d(coin)
    rho = random_density(coin.dim, rng)
    expected = StateKind.TRANSIENT if verdict.kind == VerdictKind.TRANSIENT else StateKind.RECURRENT
    assert verdict.state_kind(rho) == expected


@pytest.mark.parametrize("coin", [coin_ex5_4(), coin_ex5_4(0.0, 0.0, 0.5), coin_ex5_1b(1 / np.sqrt(3), 0.3)])
def test_reachability_agrees_with_transient_projector(coin, rng):
    verdict = classify_1d(coin)
    d = coin.dim
    basis = [DensityOperator.basis(d, k) for k in range(d)]
    samples = basis + [random_density(d, rng, rank=1) for _ in range(5)]
    # состояния внутри ran(P_T)
    w, v = np.linalg.eigh(verdict.transient_projector)
    inside = v[:, w > 0.5]
    if inside.shape[1]:
        g = inside @ (rng.standard_normal(inside.shape[1]) + 1j * rng.standard_normal(inside.shape[1]))
        samples.append(DensityOperator.pure(g))
    for rho in samples:
        by_projector = StateKind.TRANSIENT if verdict.is_transient_for(rho) else StateKind.RECURRENT
        assert verdict.state_kind(rho) == by_projector


def test_classification_is_invariant_along_updates(rng):
    coin = coin_ex5_4()
    verdict = classify_1d(coin)
    for _ in range(10):
        rho = random_density(4, rng, rank=1 + int(rng.integers(0, 3)))
        before = verdict.state_kind(rho)
        for t in coin.kraus:
            out = t @ rho.matrix @ t.conj().T
            if np.trace(out).real > 1e-8:
                after = verdict.state_kind(DensityOperator.from_psd(out))
                assert after == before


def test_update_invariance_on_transient_direction():
    coin = coin_ex5_4()
    verdict = classify_1d(coin)
    e4 = DensityOperator.basis(4, 3)
    for t in coin.kraus:
        out = DensityOperator.from_psd(t @ e4.matrix @ t.conj().T)
        assert verdict.state_kind(out) == StateKind.TRANSIENT


def test_drift_law_of_ergodic_coin_is_a_single_atom():
    atoms = drift_law_1d(coin_ex5_3(), DensityOperator.basis(2, 0))
    assert len(atoms) == 1
    assert atoms[0].weight == pytest.approx(1.0, abs=1e-8)
    assert atoms[0].m == pytest.approx(-4 / 21, abs=1e-10)


def test_drift_law_from_transient_direction():
    atoms = drift_law_1d(coin_ex5_5(), DensityOperator.basis(3, 2))
    assert sum(a.weight for a in atoms) == pytest.approx(1.0, abs=1e-8)
    law = {round(a.m, 6): a.weight for a in atoms}
    assert set(law) == {0.6, -0.6}
    assert all(w > 0 for w in law.values())


def test_drift_law_of_enclosure_state_is_a_point_mass():
    atoms = drift_law_1d(coin_ex5_4(), DensityOperator.basis(4, 3))
    weights = {round(a.m, 6): 0.0 for a in atoms}
    for a in atoms:
        weights[round(a.m, 6)] += a.weight
    assert weights[round(-1 / 3, 6)] == pytest.approx(1.0, abs=1e-8)
    assert weights[0.0] == pytest.approx(0.0, abs=1e-8)


def test_lazy_coin_law_is_point_mass_at_zero():
    atoms = drift_law_1d(coin_ex5_1a(), DensityOperator.maximally_mixed(2))
    assert len(atoms) == 1
    assert atoms[0].weight == pytest.approx(1.0, abs=1e-8)
    assert atoms[0].m == pytest.approx(0.0, abs=1e-10)
