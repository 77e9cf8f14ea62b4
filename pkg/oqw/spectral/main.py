import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import scipy.linalg

from oqw.qcore.main import (
    DEFAULT_POLICY,
    CoinCT,
    ConvergenceError,
    DensityOperator,
    NumericPolicy,
    StructuralError,
    dagger,
    density_matrix,
    hermitize,
    projector_rank,
    require_valid,
    support_projector,
)


logger = logging.getLogger("oqw.spectral")


# ---------- Векторизация ----------


def vec(x: np.ndarray) -> np.ndarray:
    """Столбцовая векторизация (column-major)."""
    return np.asarray(x, dtype=np.complex128).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(v).reshape((d, d), order="F")


@dataclass(frozen=True)
class Superoperator:
    """Матрица d^2 x d^2, действующая на vec(X)."""

    dim: int
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.complex128)
        if m.shape != (self.dim ** 2, self.dim ** 2):
            raise StructuralError(f"superoperator of dim {self.dim} must be {self.dim ** 2}x{self.dim ** 2}, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return unvec(self.matrix @ vec(x), self.dim)

    def dual(self, y: np.ndarray) -> np.ndarray:
        """Сопряжённое (гейзенберговское) отображение: Tr(Y* S(X)) = Tr(dual(Y)* X)."""
        return unvec(dagger(self.matrix) @ vec(y), self.dim)

    def residual(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(self.apply(x) - x))


def superoperator(kraus: Sequence[np.ndarray]) -> Superoperator:
    mats = [np.asarray(k, dtype=np.complex128) for k in kraus]
    if not mats:
        raise StructuralError("superoperator: empty Kraus family")
    dims = {m.shape for m in mats}
    if len(dims) != 1 or mats[0].ndim != 2 or mats[0].shape[0] != mats[0].shape[1]:
        raise StructuralError(f"superoperator: Kraus operators must share one square shape, got {sorted(dims)}")
    d = mats[0].shape[0]
    return Superoperator(d, sum(np.kron(k.conj(), k) for k in mats))


def lindblad_superoperator(coin: CoinCT, policy: NumericPolicy = DEFAULT_POLICY) -> Superoperator:
    """Матрица генератора rho -> G rho + rho G* + sum A rho A*."""
    require_valid(coin, policy)
    d = coin.dim
    eye = np.eye(d, dtype=np.complex128)
    m = np.kron(eye, coin.G) + np.kron(coin.G.conj(), eye)
    m = m + sum(np.kron(a.conj(), a) for a in coin.jumps)
    return Superoperator(d, m)


def time_one_map(generator: Superoperator) -> Superoperator:
    return Superoperator(generator.dim, scipy.linalg.expm(generator.matrix))


# ---------- Неподвижные точки ----------


def fixed_space(S: Superoperator, policy: NumericPolicy = DEFAULT_POLICY) -> Tuple[np.ndarray, np.ndarray]:
    """
    Правое и левое неподвижные пространства S (столбцами).
    Берутся сингулярные векторы S - I с сингулярными числами <= кластера.
    """
    n = S.matrix.shape[0]
    u, s, vh = np.linalg.svd(S.matrix - np.eye(n))
    small = s <= policy.fixed_point_cluster
    right = dagger(vh)[:, small]
    left = u[:, small]
    logger.debug("fixed space: dim=%d, smallest singular values=%s", right.shape[1], s[-3:])
    return right, left


def fixed_point_projector(S: Superoperator, policy: NumericPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Спектральный проектор V (W^H V)^{-1} W^H на собственное значение 1."""
    right, left = fixed_space(S, policy)
    if right.shape[1] == 0:
        raise ConvergenceError("channel has no fixed point within the cluster radius", residual=float("nan"))
    gram = dagger(left) @ right
    return right @ np.linalg.solve(gram, dagger(left))


def _to_state(m: np.ndarray, S: Superoperator, policy: NumericPolicy, what: str) -> DensityOperator:
    h = hermitize(m)
    w, v = np.linalg.eigh(h)
    h = (v * np.clip(w, 0.0, None)) @ dagger(v)
    h = h / np.trace(h).real
    residual = S.residual(h)
    if residual > policy.fixed_point_tol:
        raise ConvergenceError(f"{what}: fixed-point residual too large", residual=residual)
    return DensityOperator(h)


def invariant_state_maximal(S: Superoperator, policy: NumericPolicy = DEFAULT_POLICY) -> DensityOperator:
    """
    Инвариантное состояние максимального носителя: предел Чезаро Phi^n(I/d),
    считается сразу через спектральный проектор.
    """
    proj = fixed_point_projector(S, policy)
    d = S.dim
    limit = unvec(proj @ vec(np.eye(d) / d), d)
    return _to_state(limit, S, policy, "invariant_state_maximal")


# ---------- Разложение на замкнутые подпространства ----------


@dataclass(frozen=True)
class Enclosure:
    label: int
    projector: np.ndarray = field(repr=False)
    state: DensityOperator = field(repr=False)

    @property
    def rank(self) -> int:
        return projector_rank(self.projector)


@dataclass(frozen=True)
class ChannelDecomposition:
    enclosures: List[Enclosure]
    transient_projector: np.ndarray = field(repr=False)
    recurrent_projector: np.ndarray = field(repr=False)
    channel: Superoperator = field(repr=False)
    fixed_dimension: int = 0

    @property
    def dim(self) -> int:
        return self.channel.dim


def _hermitian_basis(d: int):
    for i in range(d):
        e = np.zeros((d, d), dtype=np.complex128)
        e[i, i] = 1.0
        yield e
    for i in range(d):
        for j in range(i + 1, d):
            e = np.zeros((d, d), dtype=np.complex128)
            e[i, j] = e[j, i] = 1.0
            yield e
            e = np.zeros((d, d), dtype=np.complex128)
            e[i, j] = -1j
            e[j, i] = 1j
            yield e


def _clean_projector(p: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(p))
    keep = v[:, w > 0.5]
    return keep @ dagger(keep)


def _traceless_fixed_point(proj, q, tau, d, policy):
    for e in _hermitian_basis(d):
        qeq = q @ e @ q
        f = hermitize(unvec(proj @ vec(qeq), d)) - np.trace(qeq).real * tau
        if np.linalg.norm(f) > policy.fixed_point_cluster:
            return f
    return None


def _split(proj, q, tau, d, policy) -> List[Tuple[np.ndarray, np.ndarray]]:
    f = _traceless_fixed_point(proj, q, tau, d, policy)
    if f is None:
        return [(q, tau)]
    w, v = np.linalg.eigh(f)
    cut = policy.fixed_point_cluster * max(1.0, float(np.abs(w).max()))
    neg = v[:, w < -cut]
    pos = v[:, w > cut]
    p_neg = neg @ dagger(neg)
    p_pos = pos @ dagger(pos)
    p_ker = _clean_projector(q - p_neg - p_pos)
    parts = []
    for p in (p_neg, p_ker, p_pos):
        if projector_rank(p) == 0:
            continue
        sub = hermitize(unvec(proj @ vec(p @ tau @ p), d))
        sub = sub / np.trace(sub).real
        parts.extend(_split(proj, p, sub, d, policy))
    return parts


def decompose(S: Superoperator, policy: NumericPolicy = DEFAULT_POLICY) -> ChannelDecomposition:
    """
    Разложение h = (+) Y_alpha (+) X.
    Вырожденный случай неединственен: порядок перебора базиса и порядок
    частей (отрицательная, ядро, положительная) фиксированы.
    """
    d = S.dim
    proj = fixed_point_projector(S, policy)
    fixed_dim = int(round(np.trace(proj).real))
    rho_bar = invariant_state_maximal(S, policy)
    q_rec = support_projector(rho_bar.matrix, policy)

    enclosures = []
    for label, (p, tau) in enumerate(_split(proj, q_rec, rho_bar.matrix, d, policy), start=1):
        state = _to_state(tau, S, policy, f"enclosure {label}")
        enclosures.append(Enclosure(label=label, projector=p, state=state))

    p_rec = sum((e.projector for e in enclosures), np.zeros((d, d), dtype=np.complex128))
    p_x = _clean_projector(np.eye(d) - p_rec) if projector_rank(p_rec) < d else np.zeros((d, d), dtype=np.complex128)
    logger.info(
        "decomposed channel of dim %d: %d enclosure(s), transient rank %d, fixed dim %d",
        d, len(enclosures), projector_rank(p_x), fixed_dim,
    )
    return ChannelDecomposition(
        enclosures=enclosures,
        transient_projector=p_x,
        recurrent_projector=p_rec,
        channel=S,
        fixed_dimension=fixed_dim,
    )


def decompose_ct(coin: CoinCT, policy: NumericPolicy = DEFAULT_POLICY) -> ChannelDecomposition:
    """Разложение для генератора Линдблада через отображение exp(L) за единицу времени."""
    generator = lindblad_superoperator(coin, policy)
    return decompose(time_one_map(generator), policy)


def is_ergodic(S: Superoperator, policy: NumericPolicy = DEFAULT_POLICY) -> bool:
    right, _ = fixed_space(S, policy)
    return right.shape[1] == 1


# ---------- Достижимость и поглощение ----------


def _accumulate_supports(step, start: np.ndarray, policy: NumericPolicy) -> np.ndarray:
    d = start.shape[0]
    current = support_projector(start, policy)
    rank = projector_rank(current)
    for _ in range(d + 1):
        grown = support_projector(hermitize(current + step(current) / d), policy)
        new_rank = projector_rank(grown)
        current = grown
        if new_rank == rank:
            break
        rank = new_rank
    return current


def reachable_support(S: Superoperator, rho, policy: NumericPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Проектор на наименьшее подпространство, содержащее supp(Phi^n(rho)) для всех n >= 0."""
    return _accumulate_supports(S.apply, density_matrix(rho), policy)


def hitting_support(S: Superoperator, p: np.ndarray, policy: NumericPolicy = DEFAULT_POLICY) -> np.ndarray:
    """
    Проектор на сумму носителей Phi*^n(P), n >= 0.
    Его дополнение: направления v, из которых ran(P) не достигается никогда.
    """
    return _accumulate_supports(S.dual, np.asarray(p, dtype=np.complex128), policy)


def absorption_operator(S: Superoperator, p_y: np.ndarray, policy: NumericPolicy = DEFAULT_POLICY) -> np.ndarray:
    """
    A(Y) = lim Phi*^n(P_Y). Итерации с удвоением степени: n = 1, 2, 4, ...
    """
    d = S.dim
    x = vec(p_y)
    power = dagger(S.matrix)
    residual = float("inf")
    for k in range(policy.absorption_max_doublings + 1):
        nxt = power @ x
        residual = float(np.linalg.norm(nxt - x))
        x = nxt
        if residual <= policy.absorption_tol:
            logger.debug("absorption operator converged after %d doublings", k)
            return hermitize(unvec(x, d))
        power = power @ power
    raise ConvergenceError("absorption operator did not converge", residual=residual)
