import logging
from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np

from oqw.qcore.main import (
    DEFAULT_POLICY,
    Coin2D,
    CoinCT,
    DensityLike,
    NumericPolicy,
    StructuralError,
    dagger,
    density_matrix,
    require_valid,
)
from oqw.spectral.main import ChannelDecomposition, decompose, decompose_ct, superoperator
from oqw.classify1d.main import (
    Criterion,
    LawAtom,
    StateKind,
    Verdict,
    aggregate_verdict,
    drift_law,
)


logger = logging.getLogger("oqw.classify2d")


# ---------- Дрейф на Z^2 ----------


@dataclass(frozen=True)
class DriftVector:
    m1: float
    m2: float

    def as_tuple(self) -> Tuple[float, float]:
        return (self.m1, self.m2)

    @property
    def norm(self) -> float:
        return float(np.hypot(self.m1, self.m2))


Coin2DLike = Union[Coin2D, CoinCT]


def direction_weights(coin: Coin2DLike, tau: DensityLike) -> np.ndarray:
    """Tr(K_j tau K_j*) для j = 1..4 (вправо, вверх, влево, вниз)."""
    t = density_matrix(tau)
    if t.shape[0] != coin.dim:
        raise StructuralError(f"density of dim {t.shape[0]} for a coin of dim {coin.dim}")
    return np.array([np.trace(k @ t @ dagger(k)).real for k in coin.kraus])


def drift_2d(coin: Coin2DLike, tau: DensityLike) -> DriftVector:
    w = direction_weights(coin, tau)
    return DriftVector(m1=float(w[0] - w[2]), m2=float(w[1] - w[3]))


# ---------- Критерии ----------


def _classify(coin: Coin2DLike, decomposition: ChannelDecomposition, criterion: Criterion,
              policy: NumericPolicy) -> Verdict:
    drifts = [drift_2d(coin, e.state).as_tuple() for e in decomposition.enclosures]
    return aggregate_verdict(decomposition, drifts, criterion, policy)


def auxiliary_decomposition(coin: Coin2DLike, policy: NumericPolicy = DEFAULT_POLICY) -> ChannelDecomposition:
    if isinstance(coin, CoinCT):
        return decompose_ct(coin, policy)
    return decompose(superoperator(coin.kraus), policy)


def classify_2d_discrete(coin: Coin2D, policy: NumericPolicy = DEFAULT_POLICY) -> Verdict:
    require_valid(coin, policy)
    return _classify(coin, auxiliary_decomposition(coin, policy), Criterion.GENERALIZED_2D, policy)


def classify_2d_ct(coin: CoinCT, policy: NumericPolicy = DEFAULT_POLICY) -> Verdict:
    """
    Непрерывное время: стационарные состояния генератора, дрейф
    m = (Tr(A1 t A1*) - Tr(A3 t A3*), Tr(A2 t A2*) - Tr(A4 t A4*)).
    """
    require_valid(coin, policy)
    return _classify(coin, auxiliary_decomposition(coin, policy), Criterion.CONTINUOUS_2D, policy)


def classify_2d(coin: Coin2DLike, policy: NumericPolicy = DEFAULT_POLICY) -> Verdict:
    if isinstance(coin, CoinCT):
        return classify_2d_ct(coin, policy)
    return classify_2d_discrete(coin, policy)


def jump_chain_lift(coin: Coin2D, policy: NumericPolicy = DEFAULT_POLICY) -> CoinCT:
    """A_j = D_j, H = 0; тогда G = -I/2."""
    require_valid(coin, policy)
    zero = np.zeros((coin.dim, coin.dim), dtype=np.complex128)
    return CoinCT(A1=coin.D1, A2=coin.D2, A3=coin.D3, A4=coin.D4, H=zero)


def classify_state_2d(coin: Coin2DLike, rho: DensityLike, policy: NumericPolicy = DEFAULT_POLICY) -> StateKind:
    return classify_2d(coin, policy).state_kind(rho)


def drift_law_2d(coin: Coin2DLike, rho: DensityLike, policy: NumericPolicy = DEFAULT_POLICY) -> List[LawAtom]:
    """
    Атомы предельного закона X_n/n (X_t/t). Для непрерывного времени веса берутся
    из отображения exp(L) за единицу времени: поглощение у него то же.
    """
    require_valid(coin, policy)
    decomposition = auxiliary_decomposition(coin, policy)
    drifts = [drift_2d(coin, e.state).as_tuple() for e in decomposition.enclosures]
    return drift_law(decomposition, drifts, rho, policy)
