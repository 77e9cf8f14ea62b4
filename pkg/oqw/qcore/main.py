import logging
import os
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel


logger = logging.getLogger("oqw.qcore")


# ---------- Ошибки ----------


class OQWError(Exception):
    """
    Базовая ошибка пакета.
    Как HTTPException: есть detail и код (тут код выхода CLI, а не HTTP-статус).
    """

    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class InvalidCoinError(OQWError):
    exit_code = 1


class InvalidDensityError(OQWError):
    exit_code = 1


class CoinDefectError(OQWError):
    exit_code = 1


class ConvergenceError(OQWError):
    exit_code = 1

    def __init__(self, detail: str, residual: float):
        super().__init__(f"{detail} (residual={residual:.3e})")
        self.residual = residual


class StructuralError(OQWError):
    exit_code = 2


class PreconditionError(OQWError):
    exit_code = 2


class CriterionUnavailableError(OQWError):
    exit_code = 3


class BudgetExceededError(OQWError):
    exit_code = 4


# ---------- Конфиг: числовая политика ----------


@dataclass(frozen=True)
class NumericPolicy:
    hermitian_tol: float = 1e-10
    psd_tol: float = 1e-10
    trace_tol: float = 1e-10
    coin_tol: float = 1e-9
    # относительный порог ранга: eigenvalue > rank_tol * ||M||_2
    rank_tol: float = 1e-10
    faithful_tol: float = 1e-10
    # кластер собственного значения 1
    fixed_point_cluster: float = 1e-8
    fixed_point_tol: float = 1e-10
    zero_threshold: float = 1e-9
    eigvec_tol: float = 1e-8
    trivial_eig_margin: float = 1e-12
    absorption_tol: float = 1e-10
    absorption_max_doublings: int = 20

    @classmethod
    def from_env(cls) -> "NumericPolicy":
        return cls(
            coin_tol=float(os.getenv("OQW_COIN_TOL", "1e-9")),
            zero_threshold=float(os.getenv("OQW_ZERO_THRESHOLD", "1e-9")),
        )

    def with_zero_threshold(self, value: float) -> "NumericPolicy":
        return replace(self, zero_threshold=value)


DEFAULT_POLICY = NumericPolicy.from_env()


# ---------- Матрицы ----------


def as_matrix(value, name: str = "matrix") -> np.ndarray:
    """Квадратная complex128-матрица (копия, только для чтения)."""
    arr = np.array(value, dtype=np.complex128)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise StructuralError(f"{name}: expected a square d x d matrix, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def dagger(m: np.ndarray) -> np.ndarray:
    return m.conj().T


def hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + dagger(m))


def _common_dim(matrices: Sequence[np.ndarray], what: str) -> int:
    dims = {m.shape[0] for m in matrices}
    if len(dims) != 1:
        raise StructuralError(f"{what}: matrices have different dimensions {sorted(dims)}")
    return dims.pop()


# ---------- Типы: плотности и монеты ----------


@dataclass(frozen=True)
class DensityOperator:
    matrix: np.ndarray
    policy: NumericPolicy = field(default=DEFAULT_POLICY, repr=False, compare=False)

    def __post_init__(self):
        m = as_matrix(self.matrix, "density")
        p = self.policy
        if np.linalg.norm(m - dagger(m)) > p.hermitian_tol:
            raise InvalidDensityError("density is not Hermitian")
        if np.linalg.eigvalsh(hermitize(m)).min() < -p.psd_tol:
            raise InvalidDensityError("density is not positive semidefinite")
        if abs(np.trace(m) - 1.0) > p.trace_tol:
            raise InvalidDensityError(f"density trace is {np.trace(m).real:.12g}, expected 1")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_psd(cls, m: np.ndarray) -> "DensityOperator":
        """Нормирует эрмитову PSD-матрицу на след 1."""
        h = hermitize(np.asarray(m, dtype=np.complex128))
        tr = np.trace(h).real
        if tr <= 0:
            raise InvalidDensityError("cannot normalize a matrix with non-positive trace")
        return cls(h / tr)

    @classmethod
    def maximally_mixed(cls, d: int) -> "DensityOperator":
        return cls(np.eye(d, dtype=np.complex128) / d)

    @classmethod
    def pure(cls, vector) -> "DensityOperator":
        v = np.asarray(vector, dtype=np.complex128).reshape(-1)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    @classmethod
    def basis(cls, d: int, k: int) -> "DensityOperator":
        """|e_k><e_k|, k с нуля."""
        v = np.zeros(d, dtype=np.complex128)
        v[k] = 1.0
        return cls.pure(v)


DensityLike = Union[DensityOperator, np.ndarray]


def density_matrix(rho: DensityLike) -> np.ndarray:
    if isinstance(rho, DensityOperator):
        return rho.matrix
    return as_matrix(rho, "density")


@dataclass(frozen=True)
class Coin1D:
    """Монета (L, B, R) на Z. B=None означает B=0 (не ленивая монета)."""

    L: np.ndarray
    R: np.ndarray
    B: Optional[np.ndarray] = None

    def __post_init__(self):
        L = as_matrix(self.L, "L")
        R = as_matrix(self.R, "R")
        B = as_matrix(self.B, "B") if self.B is not None else np.zeros_like(L)
        _common_dim([L, B, R], "coin (L, B, R)")
        B.setflags(write=False)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "B", B)

    @property
    def dim(self) -> int:
        return self.L.shape[0]

    @property
    def lazy(self) -> bool:
        return bool(np.any(self.B != 0))

    @property
    def kraus(self) -> Tuple[np.ndarray, ...]:
        if self.lazy:
            return (self.L, self.B, self.R)
        return (self.L, self.R)

    @property
    def steps(self) -> Tuple[int, ...]:
        """Смещения, соответствующие kraus."""
        return (-1, 0, 1) if self.lazy else (-1, 1)


@dataclass(frozen=True)
class Coin2D:
    """Монета (D) на Z^2: D1 вправо, D2 вверх, D3 влево, D4 вниз."""

    D1: np.ndarray
    D2: np.ndarray
    D3: np.ndarray
    D4: np.ndarray

    def __post_init__(self):
        mats = []
        for name in ("D1", "D2", "D3", "D4"):
            m = as_matrix(getattr(self, name), name)
            object.__setattr__(self, name, m)
            mats.append(m)
        _common_dim(mats, "coin (D)")

    @property
    def dim(self) -> int:
        return self.D1.shape[0]

    @property
    def kraus(self) -> Tuple[np.ndarray, ...]:
        return (self.D1, self.D2, self.D3, self.D4)

    @property
    def steps(self) -> Tuple[Tuple[int, int], ...]:
        return DIRECTIONS_2D


DIRECTIONS_2D = ((1, 0), (0, 1), (-1, 0), (0, -1))


@dataclass(frozen=True)
class CoinCT:
    """Монета (A, H) непрерывного времени на Z^2; G = -iH - 1/2 sum A*A."""

    A1: np.ndarray
    A2: np.ndarray
    A3: np.ndarray
    A4: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        mats = []
        for name in ("A1", "A2", "A3", "A4", "H"):
            m = as_matrix(getattr(self, name), name)
            object.__setattr__(self, name, m)
            mats.append(m)
        _common_dim(mats, "coin (A, H)")
        G = -1j * self.H - 0.5 * sum(dagger(a) @ a for a in self.jumps)
        G.setflags(write=False)
        object.__setattr__(self, "G", G)

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    @property
    def jumps(self) -> Tuple[np.ndarray, ...]:
        return (self.A1, self.A2, self.A3, self.A4)

    @property
    def kraus(self) -> Tuple[np.ndarray, ...]:
        return self.jumps

    @property
    def steps(self) -> Tuple[Tuple[int, int], ...]:
        return DIRECTIONS_2D


AnyCoin = Union[Coin1D, Coin2D, CoinCT]


# ---------- Валидация ----------


class ValidationReport(BaseModel):
    ok: bool
    deficiency: float
    messages: List[str]


def validate_coin(coin: AnyCoin, policy: NumericPolicy = DEFAULT_POLICY) -> ValidationReport:
    """
    Проверка инвариантов монеты.
    Структурные ошибки (размерности) ловятся ещё в конструкторе монеты,
    здесь только численная корректность.
    """
    messages: List[str] = []
    ok = True
    mats = coin.kraus + ((coin.H,) if isinstance(coin, CoinCT) else ())
    finite = all(np.all(np.isfinite(m)) for m in mats)
    if finite:
        messages.append("finite entries: ok")
    else:
        ok = False
        messages.append("finite entries: FAILED")

    if isinstance(coin, CoinCT):
        deficiency = float(np.linalg.norm(coin.H - dagger(coin.H))) if finite else float("inf")
        name = "H hermitian"
    else:
        d = coin.dim
        total = sum(dagger(k) @ k for k in coin.kraus)
        deficiency = float(np.linalg.norm(total - np.eye(d))) if finite else float("inf")
        name = "normalization"

    if deficiency <= policy.coin_tol:
        messages.append(f"{name}: ok (residual={deficiency:.3e})")
    else:
        ok = False
        messages.append(f"{name}: FAILED (residual={deficiency:.3e} > {policy.coin_tol:.1e})")
    return ValidationReport(ok=ok, deficiency=deficiency, messages=messages)


def require_valid(coin: AnyCoin, policy: NumericPolicy = DEFAULT_POLICY) -> None:
    report = validate_coin(coin, policy)
    if not report.ok:
        raise InvalidCoinError("invalid coin: " + "; ".join(report.messages))


# ---------- Предикаты и каналы ----------


def is_faithful(rho: DensityOperator, policy: NumericPolicy = DEFAULT_POLICY) -> bool:
    return bool(np.linalg.eigvalsh(rho.matrix).min() > policy.faithful_tol)


def support_projector(m, policy: NumericPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Ортопроектор на носитель эрмитовой PSD-матрицы (относительный порог ранга)."""
    m = np.asarray(m, dtype=np.complex128)
    scale = max(1.0, float(np.linalg.norm(m)))
    if np.linalg.norm(m - dagger(m)) > policy.hermitian_tol * scale:
        raise StructuralError("support_projector: input is not Hermitian")
    w, v = np.linalg.eigh(hermitize(m))
    top = float(np.abs(w).max()) if w.size else 0.0
    if top == 0.0:
        return np.zeros_like(m)
    keep = v[:, w > policy.rank_tol * top]
    return keep @ dagger(keep)


def projector_rank(p: np.ndarray) -> int:
    return int(round(np.trace(p).real))


def range_basis(p: np.ndarray) -> np.ndarray:
    """
    Ортонормированный базис образа проектора, столбцами.
    Фаза фиксирована: наибольшая по модулю компонента вещественна и положительна.
    """
    w, v = np.linalg.eigh(hermitize(p))
    basis = v[:, w > 0.5]
    for j in range(basis.shape[1]):
        col = basis[:, j]
        k = int(np.argmax(np.abs(col)))
        basis[:, j] = col * (abs(col[k]) / col[k])
    return basis


def apply_channel(kraus: Sequence[np.ndarray], rho: DensityLike) -> np.ndarray:
    kraus = [np.asarray(k, dtype=np.complex128) for k in kraus]
    m = density_matrix(rho) if isinstance(rho, DensityOperator) else np.asarray(rho, dtype=np.complex128)
    _common_dim(kraus + [m], "apply_channel")
    return sum(k @ m @ dagger(k) for k in kraus)


# ---------- Случайные монеты (для тестов и экспериментов) ----------


def random_kraus_family(
    d: int,
    count: int,
    rng: np.random.Generator,
    enclosure_dim: int = 0,
) -> List[np.ndarray]:
    """
    Случайное семейство Крауса с sum K*K = I.
    Столбцы стопки [K_1; ...; K_count] образуют изометрию.
    enclosure_dim = r > 0 делает span(e_1..e_r) инвариантным для всех K_j
    (нижний левый блок нулевой).
    """
    if not 0 <= enclosure_dim < d:
        raise StructuralError("enclosure_dim must be in [0, d)")
    n = count * d

    def gaussian(rows, cols):
        return rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))

    stack = np.zeros((n, d), dtype=np.complex128)
    r = enclosure_dim
    if r:
        rows = np.concatenate([np.arange(j * d, j * d + r) for j in range(count)])
        q, _ = np.linalg.qr(gaussian(len(rows), r))
        stack[rows, :r] = q
    rest = gaussian(n, d - r)
    if r:
        rest -= stack[:, :r] @ (dagger(stack[:, :r]) @ rest)
    q, _ = np.linalg.qr(rest)
    stack[:, r:] = q
    return [stack[j * d:(j + 1) * d, :] for j in range(count)]


def random_density(d: int, rng: np.random.Generator, rank: Optional[int] = None) -> DensityOperator:
    k = rank or d
    g = rng.standard_normal((d, k)) + 1j * rng.standard_normal((d, k))
    return DensityOperator.from_psd(g @ dagger(g))
