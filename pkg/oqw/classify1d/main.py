import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from oqw.qcore.main import (
    DEFAULT_POLICY,
    Coin1D,
    CriterionUnavailableError,
    DensityLike,
    NumericPolicy,
    PreconditionError,
    StructuralError,
    dagger,
    density_matrix,
    projector_rank,
    require_valid,
)
from oqw.spectral.main import (
    ChannelDecomposition,
    Superoperator,
    absorption_operator,
    decompose,
    hitting_support,
    is_ergodic,
    reachable_support,
    superoperator,
)


logger = logging.getLogger("oqw.classify1d")


# ---------- Типы вердикта ----------


class VerdictKind(str, Enum):
    RECURRENT = "Recurrent"
    TRANSIENT = "Transient"
    SPLIT = "Split"


class StateKind(str, Enum):
    RECURRENT = "recurrent"
    TRANSIENT = "transient"


class Criterion(str, Enum):
    ERGODIC_1D = "ergodic-1d"
    DIM2_LAZY = "dim2-lazy"
    GENERALIZED_1D = "generalized-1d"
    GENERALIZED_2D = "generalized-2d"
    CONTINUOUS_2D = "continuous-time-2d"


Drift = Union[float, Tuple[float, float]]


@dataclass(frozen=True)
class EnclosureRecord:
    label: int
    m: Drift
    recurrent: bool
    projector: np.ndarray = field(repr=False)

    @property
    def rank(self) -> int:
        return projector_rank(self.projector)


@dataclass(frozen=True)
class Verdict:
    """
    Классификация: rho транзиентна тогда и только тогда, когда supp(rho) лежит в ran(P_T).
    """

    kind: VerdictKind
    criterion: Criterion
    transient_projector: np.ndarray = field(repr=False)
    enclosures: List[EnclosureRecord] = field(default_factory=list)
    channel: Optional[Superoperator] = field(default=None, repr=False)
    policy: NumericPolicy = field(default=DEFAULT_POLICY, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.transient_projector.shape[0]

    @property
    def transient_rank(self) -> int:
        return projector_rank(self.transient_projector)

    def is_transient_for(self, rho: DensityLike) -> bool:
        m = density_matrix(rho)
        outside = np.eye(self.dim) - self.transient_projector
        return bool(np.trace(outside @ m).real <= self.policy.faithful_tol)

    def state_kind(self, rho: DensityLike) -> StateKind:
        """
        Проверка через достижимость: rho возвратна, если носитель
        Phi^n(rho) при каком-то n задевает возвратное замкнутое подпространство.
        """
        if self.channel is None:
            return StateKind.TRANSIENT if self.is_transient_for(rho) else StateKind.RECURRENT
        reach = reachable_support(self.channel, rho, self.policy)
        for record in self.enclosures:
            if record.recurrent and np.linalg.norm(reach @ record.projector) > self.policy.eigvec_tol:
                return StateKind.RECURRENT
        return StateKind.TRANSIENT


def kind_from_projector(p_t: np.ndarray) -> VerdictKind:
    rank = projector_rank(p_t)
    if rank == 0:
        return VerdictKind.RECURRENT
    if rank == p_t.shape[0]:
        return VerdictKind.TRANSIENT
    return VerdictKind.SPLIT


def drift_is_zero(m: Drift, policy: NumericPolicy) -> bool:
    return float(np.linalg.norm(np.atleast_1d(m))) <= policy.zero_threshold


def aggregate_verdict(
    decomposition: ChannelDecomposition,
    drifts: Sequence[Drift],
    criterion: Criterion,
    policy: NumericPolicy = DEFAULT_POLICY,
) -> Verdict:
    """
    Общая сборка вердикта (Z и Z^2): замкнутое подпространство возвратно, если
    его дрейф нулевой. P_T = I - (носитель всех Phi*^n(P_возвр)).
    """
    d = decomposition.dim
    records = []
    for enclosure, m in zip(decomposition.enclosures, drifts):
        records.append(EnclosureRecord(
            label=enclosure.label,
            m=m,
            recurrent=drift_is_zero(m, policy),
            projector=enclosure.projector,
        ))
    p_rec = sum((r.projector for r in records if r.recurrent), np.zeros((d, d), dtype=np.complex128))
    if projector_rank(p_rec) == 0:
        p_t = np.eye(d, dtype=np.complex128)
    else:
        p_t = np.eye(d) - hitting_support(decomposition.channel, p_rec, policy)
    verdict = Verdict(
        kind=kind_from_projector(p_t),
        criterion=criterion,
        transient_projector=p_t,
        enclosures=records,
        channel=decomposition.channel,
        policy=policy,
    )
    logger.info(
        "%s: %s, %d enclosure(s), transient rank %d",
        criterion.value, verdict.kind.value, len(records), verdict.transient_rank,
    )
    return verdict


# ---------- Дрейф ----------


def drift_1d(coin: Coin1D, tau: DensityLike) -> float:
    t = density_matrix(tau)
    if t.shape[0] != coin.dim:
        raise StructuralError(f"drift_1d: density of dim {t.shape[0]} for a coin of dim {coin.dim}")
    right = np.trace(coin.R @ t @ dagger(coin.R)).real
    left = np.trace(coin.L @ t @ dagger(coin.L)).real
    return float(right - left)


# ---------- Критерии ----------


def auxiliary_channel(coin: Coin1D) -> Superoperator:
    return superoperator(coin.kraus)


def check_nontrivial(coin, policy: NumericPolicy = DEFAULT_POLICY) -> None:
    """Критерии не рассматривают монеты, у которых L, B или R имеет собственное значение модуля 1."""
    bound = 1.0 - policy.trivial_eig_margin
    for name, t in zip(("L", "B", "R"), (coin.L, coin.B, coin.R)):
        top = float(np.abs(np.linalg.eigvals(t)).max())
        if top >= bound:
            raise CriterionUnavailableError(
                f"trivial coin: {name} has an eigenvalue of modulus {top:.12g}; no recurrence criterion applies"
            )


def classify_ergodic_1d(coin: Coin1D, policy: NumericPolicy = DEFAULT_POLICY) -> Verdict:
    require_valid(coin, policy)
    check_nontrivial(coin, policy)
    S = auxiliary_channel(coin)
    if not is_ergodic(S, policy):
        raise PreconditionError("auxiliary channel is not ergodic; use classify_general_1d")
    decomposition = decompose(S, policy)
    drifts = [drift_1d(coin, e.state) for e in decomposition.enclosures]
    return aggregate_verdict(decomposition, drifts, Criterion.ERGODIC_1D, policy)


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def common_eigenvectors(mats: Sequence[np.ndarray], policy: NumericPolicy = DEFAULT_POLICY) -> List[np.ndarray]:
    """Общие собственные векторы (попарно различные с точностью до фазы)."""
    d = mats[0].shape[0]
    candidates = []
    for t in mats:
        scalar = np.linalg.norm(t - t[0, 0] * np.eye(d)) <= policy.eigvec_tol
        if not scalar:
            _, vecs = np.linalg.eig(t)
            candidates.extend(_normalize(vecs[:, j]) for j in range(d))
    if not candidates:
        candidates = list(np.eye(d, dtype=np.complex128))

    common: List[np.ndarray] = []
    for u in candidates:
        if any(abs(np.vdot(c, u)) >= 1.0 - policy.eigvec_tol for c in common):
            continue
        ok = True
        for t in mats:
            tu = t @ u
            if np.linalg.norm(tu - np.vdot(u, tu) * u) > policy.eigvec_tol:
                ok = False
                break
        if ok:
            common.append(u)
    return common


def classify_dim2_lazy(coin: Coin1D, policy: NumericPolicy = DEFAULT_POLICY) -> Verdict:
    """
    Критерий для d = 2.
    Случай 1 (не более одного общего собственного вектора L, B, R) сводится к эргодическому;
    случай 2 сравнивает |l_j| и |r_j| на двух ортогональных общих собственных векторах.
    """
    if coin.dim != 2:
        raise PreconditionError(f"dim-2 criterion needs d = 2, got d = {coin.dim}")
    require_valid(coin, policy)
    check_nontrivial(coin, policy)
    common = common_eigenvectors([coin.L, coin.B, coin.R], policy)
    pair = None
    for i in range(len(common)):
        for j in range(i + 1, len(common)):
            if abs(np.vdot(common[i], common[j])) <= policy.eigvec_tol:
                pair = (common[i], common[j])
                break
        if pair:
            break
    if pair is None:
        if len(common) >= 2:
            logger.warning("dim-2 criterion: %d common eigenvectors, none orthogonal", len(common))
        return classify_ergodic_1d(coin, policy)

    records = []
    p_t = np.zeros((2, 2), dtype=np.complex128)
    for label, u in enumerate(pair, start=1):
        l_j = np.vdot(u, coin.L @ u)
        r_j = np.vdot(u, coin.R @ u)
        m = float(abs(r_j) ** 2 - abs(l_j) ** 2)
        proj = np.outer(u, u.conj())
        rec = drift_is_zero(m, policy)
        records.append(EnclosureRecord(label=label, m=m, recurrent=rec, projector=proj))
        if not rec:
            p_t = p_t + proj
    verdict = Verdict(
        kind=kind_from_projector(p_t),
        criterion=Criterion.DIM2_LAZY,
        transient_projector=p_t,
        enclosures=records,
        channel=auxiliary_channel(coin),
        policy=policy,
    )
    logger.info("dim2-lazy: %s (drifts %s)", verdict.kind.value, [r.m for r in records])
    return verdict


def classify_general_1d(coin: Coin1D, policy: NumericPolicy = DEFAULT_POLICY) -> Verdict:
    """Обобщённый критерий: разложение вспомогательного канала и дрейф на каждом замкнутом подпространстве."""
    require_valid(coin, policy)
    check_nontrivial(coin, policy)
    S = auxiliary_channel(coin)
    if coin.lazy and not is_ergodic(S, policy):
        raise CriterionUnavailableError(
            "no recurrence criterion is known for lazy coins with a non-ergodic auxiliary channel"
        )
    decomposition = decompose(S, policy)
    drifts = [drift_1d(coin, e.state) for e in decomposition.enclosures]
    return aggregate_verdict(decomposition, drifts, Criterion.GENERALIZED_1D, policy)


def classify_1d(coin: Coin1D, policy: NumericPolicy = DEFAULT_POLICY) -> Verdict:
    """Порядок: эргодический -> d = 2 -> обобщённый (B = 0) -> критерия нет."""
    require_valid(coin, policy)
    check_nontrivial(coin, policy)
    if is_ergodic(auxiliary_channel(coin), policy):
        return classify_ergodic_1d(coin, policy)
    if coin.dim == 2:
        try:
            return classify_dim2_lazy(coin, policy)
        except PreconditionError:
            logger.warning("dim-2 criterion did not apply, falling back to the generalized criterion")
    if not coin.lazy:
        return classify_general_1d(coin, policy)
    raise CriterionUnavailableError(
        f"no recurrence criterion applies to a lazy non-ergodic coin of dimension {coin.dim}"
    )


def classify_state_1d(coin: Coin1D, rho: DensityLike, policy: NumericPolicy = DEFAULT_POLICY) -> StateKind:
    return classify_1d(coin, policy).state_kind(rho)


# ---------- Предельный закон X_n / n ----------


@dataclass(frozen=True)
class LawAtom:
    weight: float
    m: Drift
    label: int


def drift_law(decomposition: ChannelDecomposition, drifts: Sequence[Drift], rho: DensityLike,
              policy: NumericPolicy = DEFAULT_POLICY) -> List[LawAtom]:
    m = density_matrix(rho)
    atoms = []
    for enclosure, drift in zip(decomposition.enclosures, drifts):
        a = absorption_operator(decomposition.channel, enclosure.projector, policy)
        atoms.append(LawAtom(weight=float(np.trace(a @ m).real), m=drift, label=enclosure.label))
    total = sum(a.weight for a in atoms)
    if abs(total - 1.0) > 1e-8:
        logger.warning("absorption weights sum to %.12g", total)
    return atoms


def drift_law_1d(coin: Coin1D, rho: DensityLike, policy: NumericPolicy = DEFAULT_POLICY) -> List[LawAtom]:
    """Атомы предельного закона X_n/n: веса Tr(A(Y_alpha) rho), точки m_alpha."""
    require_valid(coin, policy)
    decomposition = decompose(auxiliary_channel(coin), policy)
    drifts = [drift_1d(coin, e.state) for e in decomposition.enclosures]
    return drift_law(decomposition, drifts, rho, policy)
