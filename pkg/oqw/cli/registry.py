"""
Встроенные примеры монет и ожидаемые вердикты.

Каждый пример (ex5_1a ... ex7_3) состоит из одного или нескольких случаев;
у каждого случая своё имя фикстуры, которое понимает `oqw export`.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np

from oqw.qcore.main import Coin1D, Coin2D, CoinCT
from oqw.classify1d.main import VerdictKind


AnyCoin = Union[Coin1D, Coin2D, CoinCT]

s2, s3, s5, s6, s7 = (np.sqrt(x) for x in (2.0, 3.0, 5.0, 6.0, 7.0))


@dataclass(frozen=True)
class Case:
    name: str
    build: Callable[[], AnyCoin]
    expected: VerdictKind
    # координаты (с нуля), на которых ожидается P_T; None - не проверяется
    transient_coordinates: Optional[Tuple[int, ...]] = None
    note: str = ""


@dataclass(frozen=True)
class Example:
    id: str
    title: str
    cases: Tuple[Case, ...]


# ---------- Монеты на Z ----------


def coin_ex5_1a(m: float = 0.6, n: float = 0.6) -> Coin1D:
    """Ленивая монета d = 2; B*B = (b + m^2) I при b = 1 - n^2 - m^2."""
    b = 1.0 - n ** 2 - m ** 2
    L = [[0, 0], [0, -n]]
    B = [[-np.sqrt(b), m], [m, np.sqrt(b)]]
    R = [[n, 0], [0, 0]]
    return Coin1D(L=L, B=B, R=R)


def coin_ex5_1b(x1: float, x2: float) -> Coin1D:
    L = np.diag([1 / s3, 0.5])
    B = np.diag([np.sqrt(2 / 3 - x1 ** 2), np.sqrt(3 / 4 - x2 ** 2)])
    R = np.diag([x1, x2])
    return Coin1D(L=L, B=B, R=R)


def coin_ex5_2() -> Coin1D:
    L = np.array([
        [2 * (1 + s2), 0, 2 * (1 - s2)],
        [0, np.sqrt(31), 0],
        [2 * (1 - s2), 0, 2 * (1 + s2)],
    ]) / 8
    B = np.array([
        [np.sqrt(30), 2j, np.sqrt(30)],
        [2, 0, 2],
        [np.sqrt(30), -2j, np.sqrt(30)],
    ]) / 16
    R = np.array([
        [2 * (1 - s2), 0, 2 * (1 + s2)],
        [0, np.sqrt(31), 0],
        [2 * (1 + s2), 0, 2 * (1 - s2)],
    ]) / 8
    return Coin1D(L=L, B=B, R=R)


def coin_ex5_3(prime: bool = False) -> Coin1D:
    # нормировка 1/sqrt(7); с множителем 1/7 сумма L*L + B*B + R*R равна I/7
    L = np.array([[1, 0], [0, 2]]) / s7
    R = np.array([[1, 1], [0, 1]]) / s7
    if prime:
        B = np.array([[5, -1], [0, 2]]) / np.sqrt(35)
    else:
        B = np.array([[-1, 1], [2, 0]]) / s7
    return Coin1D(L=L, B=B, R=R)


def coin_ex5_4(p1: float = 1 / 6, p2: float = 1 / 6, p3: float = 1 / 6) -> Coin1D:
    """Неленивая монета d = 4; нормирована при p1 + p2 + p3 = 1/2."""
    R = np.array([
        [np.sqrt(3 / 8), 0, 0, 0],
        [-np.sqrt(p1 / 2), 1 / s2, 0, 0],
        [-np.sqrt(p2 / 2), 0, 1 / s2, 0],
        [np.sqrt(2 * p3 / 3), 0, 0, 1 / s3],
    ])
    L = np.array([
        [1 / (2 * s2), 0, 0, 0],
        [np.sqrt(p1 / 2), 1 / s2, 0, 0],
        [np.sqrt(p2 / 2), 0, 1 / s2, 0],
        [-np.sqrt(p3 / 3), 0, 0, np.sqrt(2 / 3)],
    ])
    return Coin1D(L=L, R=R)


def coin_ex5_5() -> Coin1D:
    L = np.array([
        [s5 / 5, 0, -s5 / 5],
        [0, 2 * s5 / 5, s5 / 10],
        [0, 0, 0.5],
    ])
    R = np.array([
        [2 * s5 / 5, 0, s5 / 10],
        [0, s5 / 5, -s5 / 5],
        [0, 0, 0.5],
    ])
    return Coin1D(L=L, R=R)


def coin_ex5_6() -> Coin1D:
    R = np.array([
        [s2 / 2, -s5 / 4, 0, 0.25],
        [0, s2 / 4, 0, 0],
        [0, 0, s2 / 2, 0],
        [0, 0, 0, s6 / 4],
    ])
    L = np.array([
        [s2 / 2, s5 / 4, 0, -0.25],
        [0, 0.5, 0, s5 / 4],
        [0, 0, -s2 / 2, 0],
        [0, 0, 0, s3 / 4],
    ])
    return Coin1D(L=L, R=R)


def coin_classical(p: float = 0.5) -> Coin1D:
    """d = 1: простое случайное блуждание с P(влево) = p."""
    return Coin1D(L=[[np.sqrt(p)]], R=[[np.sqrt(1 - p)]])


# ---------- Монеты на Z^2 ----------


def coin_ex7_1(h: complex = -9.5) -> CoinCT:
    return CoinCT(
        A1=[[3, -1], [0, 0]],
        A2=[[1, -2], [2j, 0]],
        A3=[[1, 1], [-2, 2]],
        A4=[[-2j, 1j], [0, 2]],
        H=[[-1, h], [np.conj(h), 2]],
    )


_M = np.array([[2, 0, -2], [0, 4, 1], [0, 0, s5]])
_N = np.array([[4, 0, 1], [0, 2, -2], [0, 0, s5]])


def coin_ex7_2() -> Coin2D:
    return Coin2D(
        D1=_M / (2 * np.sqrt(30)),
        D2=_M / (2 * s6),
        D3=_N / (2 * np.sqrt(30)),
        D4=_N / (2 * s6),
    )


def coin_ex7_3(hamiltonian: int = 2) -> CoinCT:
    d = coin_ex7_2()
    if hamiltonian == 1:
        H = np.zeros((3, 3))
    else:
        H = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    return CoinCT(A1=d.D1, A2=d.D2, A3=d.D3, A4=d.D4, H=H)


def coin_2d_split() -> Coin2D:
    """Прямая сумма монеты ex7_2 и скалярного блока 1/2: одна возвратная координата e4."""
    base = coin_ex7_2()

    def pad(m):
        out = np.zeros((4, 4), dtype=np.complex128)
        out[:3, :3] = m
        out[3, 3] = 0.5
        return out

    return Coin2D(D1=pad(base.D1), D2=pad(base.D2), D3=pad(base.D3), D4=pad(base.D4))


def coin_2d_symmetric(d: int = 2) -> Coin2D:
    half = 0.5 * np.eye(d)
    return Coin2D(D1=half, D2=half, D3=half, D4=half)


# ---------- Реестр ----------


REGISTRY: Dict[str, Example] = {
    e.id: e
    for e in (
        Example("ex5_1a", "lazy d=2 coin with a single invariant state", (
            Case("ex5_1a", coin_ex5_1a, VerdictKind.RECURRENT, note="m = n = 0.6, b = 0.28"),
            Case("ex5_1a_m0", lambda: coin_ex5_1a(m=0.0), VerdictKind.TRANSIENT,
                 note="diagonal coin: two common eigenvectors, both drifts non-zero"),
        )),
        Example("ex5_1b", "diagonal lazy d=2 coin, four sub-cases", (
            Case("ex5_1b_1", lambda: coin_ex5_1b(1 / s3, 0.5), VerdictKind.RECURRENT, ()),
            Case("ex5_1b_2", lambda: coin_ex5_1b(0.3, 0.3), VerdictKind.TRANSIENT, (0, 1)),
            Case("ex5_1b_3", lambda: coin_ex5_1b(1 / s3, 0.3), VerdictKind.SPLIT, (1,)),
            Case("ex5_1b_4", lambda: coin_ex5_1b(0.3, 0.5), VerdictKind.SPLIT, (0,)),
        )),
        Example("ex5_2", "lazy d=3 coin with a pure invariant state", (
            Case("ex5_2", coin_ex5_2, VerdictKind.RECURRENT, ()),
        )),
        Example("ex5_3", "lazy d=2 coin, two choices of B", (
            Case("ex5_3", coin_ex5_3, VerdictKind.TRANSIENT, (0, 1),
                 note="prefactor 1/sqrt(7); 1/7 does not normalize the coin"),
            Case("ex5_3_Bprime", lambda: coin_ex5_3(prime=True), VerdictKind.RECURRENT, ()),
        )),
        Example("ex5_4", "non-lazy d=4 coin with a degenerate recurrent block", (
            Case("ex5_4", coin_ex5_4, VerdictKind.SPLIT, (3,), note="p1 = p2 = p3 = 1/6"),
        )),
        Example("ex5_5", "non-lazy d=3 coin, two enclosures with opposite drifts", (
            Case("ex5_5", coin_ex5_5, VerdictKind.TRANSIENT, (0, 1, 2)),
        )),
        Example("ex5_6", "non-lazy d=4 coin, two zero-drift enclosures", (
            Case("ex5_6", coin_ex5_6, VerdictKind.RECURRENT, ()),
        )),
        Example("ex7_1", "continuous-time d=2 coin with a free Hamiltonian entry h", (
            Case("ex7_1_recurrent", lambda: coin_ex7_1(-9.5), VerdictKind.RECURRENT, (),
                 note="Re(h) = 5 Im(h) - 19/2"),
            Case("ex7_1_h0", lambda: coin_ex7_1(0.0), VerdictKind.TRANSIENT, (0, 1)),
        )),
        Example("ex7_2", "discrete d=3 coin on Z^2", (
            Case("ex7_2", coin_ex7_2, VerdictKind.TRANSIENT, (0, 1, 2)),
        )),
        Example("ex7_3", "continuous-time lift of ex7_2 with two Hamiltonians", (
            Case("ex7_3_H1", lambda: coin_ex7_3(1), VerdictKind.TRANSIENT, (0, 1, 2)),
            Case("ex7_3_H2", lambda: coin_ex7_3(2), VerdictKind.RECURRENT, ()),
        )),
    )
}

# фикстуры вне реестра
EXTRA_FIXTURES: Dict[str, Callable[[], AnyCoin]] = {
    "classical": coin_classical,
    "2d_split": coin_2d_split,
    "2d_symmetric": coin_2d_symmetric,
}


def fixture_names():
    names = [c.name for e in REGISTRY.values() for c in e.cases]
    return names + sorted(EXTRA_FIXTURES)


def build_fixture(name: str) -> AnyCoin:
    for example in REGISTRY.values():
        for case in example.cases:
            if case.name == name:
                return case.build()
    if name in EXTRA_FIXTURES:
        return EXTRA_FIXTURES[name]()
    raise KeyError(name)
