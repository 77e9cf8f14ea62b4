import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.stats
from pydantic import BaseModel

from oqw.qcore.main import (
    DEFAULT_POLICY,
    BudgetExceededError,
    Coin1D,
    Coin2D,
    CoinCT,
    CoinDefectError,
    DensityLike,
    DensityOperator,
    NumericPolicy,
    PreconditionError,
    StructuralError,
    dagger,
    density_matrix,
    require_valid,
)


logger = logging.getLogger("oqw.simulate")


# ---------- Конфиг ----------

NUM_THREADS = int(os.getenv("OQW_NUM_THREADS", "1"))
LATTICE_BUDGET_1D = int(os.getenv("OQW_LATTICE_BUDGET_1D", "20000"))
LATTICE_BUDGET_2D = int(os.getenv("OQW_LATTICE_BUDGET_2D", "600"))
# траекторий в одной векторизованной пачке
BATCH_SIZE = int(os.getenv("OQW_BATCH_SIZE", "512"))

# минимальная полная масса ветвей
BRANCH_MASS_FLOOR = 1e-14
# обусловленность собственного базиса G для диагонализации
EIGENBASIS_COND_LIMIT = 1e8
SURVIVAL_XTOL = 1e-12
# пар равномерных чисел, берущихся из потока траектории за раз
DRAW_BLOCK = 256

DiscreteCoin = Union[Coin1D, Coin2D]
Site = Union[int, Tuple[int, int]]


def _initial_state(coin, rho0: Optional[DensityLike]) -> np.ndarray:
    if rho0 is None:
        return np.eye(coin.dim, dtype=np.complex128) / coin.dim
    m = density_matrix(rho0)
    if m.shape[0] != coin.dim:
        raise StructuralError(f"initial density of dim {m.shape[0]} for a coin of dim {coin.dim}")
    return np.array(m)


def _step_array(coin) -> np.ndarray:
    if isinstance(coin, Coin1D):
        return np.array(coin.steps, dtype=np.int64).reshape(-1, 1)
    return np.array(coin.steps, dtype=np.int64)


# ---------- Точная эволюция на решётке ----------


@dataclass(frozen=True)
class LatticeState:
    """
    blocks[i] (1D) или blocks[i, j] (2D) это rho_n(s) для узла s = index - offset.
    """

    steps: int
    offset: Union[int, Tuple[int, int]]
    blocks: np.ndarray = field(repr=False)

    @property
    def ndim(self) -> int:
        return 1 if isinstance(self.offset, int) else 2

    def _index(self, site: Site):
        if self.ndim == 1:
            return (int(site) + self.offset,)
        return (site[0] + self.offset[0], site[1] + self.offset[1])

    def block(self, site: Site) -> np.ndarray:
        idx = self._index(site)
        if any(i < 0 or i >= n for i, n in zip(idx, self.blocks.shape)):
            return np.zeros(self.blocks.shape[-2:], dtype=np.complex128)
        return self.blocks[idx]

    def probability(self, site: Site) -> float:
        return float(np.trace(self.block(site)).real)

    def probabilities(self) -> np.ndarray:
        return np.einsum("...ii->...", self.blocks).real

    def mass(self) -> float:
        return float(self.probabilities().sum())

    def distribution(self, floor: float = 0.0) -> Dict[Site, float]:
        probs = self.probabilities()
        out: Dict[Site, float] = {}
        for idx in zip(*np.nonzero(probs > floor)):
            if self.ndim == 1:
                site = int(idx[0]) - self.offset
            else:
                site = (int(idx[0]) - self.offset[0], int(idx[1]) - self.offset[1])
            out[site] = float(probs[idx])
        return out


def _check_budget(coin, n: int) -> None:
    if n < 0:
        raise PreconditionError("number of steps must be non-negative")
    budget = LATTICE_BUDGET_1D if isinstance(coin, Coin1D) else LATTICE_BUDGET_2D
    if n > budget:
        raise BudgetExceededError(f"{n} exact steps exceed the lattice budget of {budget}")


def _evolve(coin: DiscreteCoin, rho: np.ndarray, n: int, on_step=None) -> np.ndarray:
    """
    Строки буфера это vec(rho_k(s)); шаг = сдвиг + умножение на (conj(K) x K)^T
    в пределах активного окна радиуса k.
    """
    d = coin.dim
    ndim = 1 if isinstance(coin, Coin1D) else 2
    shape = (2 * n + 1,) * ndim + (d * d,)
    cur = np.zeros(shape, dtype=np.complex128)
    nxt = np.zeros(shape, dtype=np.complex128)
    origin = (n,) * ndim
    cur[origin] = rho.reshape(-1, order="F")
    ops = [(np.kron(k.conj(), k).T, s) for k, s in zip(coin.kraus, _step_array(coin))]
    diag = np.arange(d) * (d + 1)

    for k in range(1, n + 1):
        lo, hi = n - (k - 1), n + k
        window = tuple(slice(lo - 1, hi + 1) for _ in range(ndim))
        nxt[window] = 0.0
        src = cur[tuple(slice(lo, hi) for _ in range(ndim))]
        for op, s in ops:
            dst = tuple(slice(lo + int(s[a]), hi + int(s[a])) for a in range(ndim))
            nxt[dst] += src @ op
        cur, nxt = nxt, cur
        if on_step is not None:
            on_step(k, cur[origin][diag].sum().real)
    return cur


def exact_distribution(coin: DiscreteCoin, rho0: Optional[DensityLike], n: int,
                       policy: NumericPolicy = DEFAULT_POLICY) -> LatticeState:
    """Точное распределение после n шагов из узла 0 (rho0 = I/d по умолчанию)."""
    require_valid(coin, policy)
    _check_budget(coin, n)
    rho = _initial_state(coin, rho0)
    buf = _evolve(coin, rho, n)
    d = coin.dim
    blocks = np.swapaxes(buf.reshape(buf.shape[:-1] + (d, d)), -1, -2)
    offset = n if isinstance(coin, Coin1D) else (n, n)
    state = LatticeState(steps=n, offset=offset, blocks=blocks)
    drift = abs(state.mass() - 1.0)
    if drift > 1e-9:
        logger.warning("exact evolution lost mass: |sum Tr - 1| = %.3e after %d steps", drift, n)
    return state


def return_mass_partial_sum(coin: DiscreteCoin, rho0: Optional[DensityLike], N: int,
                            policy: NumericPolicy = DEFAULT_POLICY) -> List[float]:
    """S(k) = sum_{n<=k} p_00(n), k = 0..N."""
    require_valid(coin, policy)
    _check_budget(coin, N)
    rho = _initial_state(coin, rho0)
    sums = [float(np.trace(rho).real)]

    def record(k, p00):
        sums.append(sums[-1] + float(p00))

    _evolve(coin, rho, N, on_step=record)
    logger.info("partial sums up to N=%d: S(N)=%.12g", N, sums[-1])
    return sums


# ---------- Траектории ----------


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Свой поток Philox на каждую траекторию: SeedSequence(seed, spawn_key=(index,))."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


@dataclass
class Trajectory:
    """
    positions[k] это X в момент times[k]. В дискретном времени times = 0..n.
    compensator: накопленная сумма условных ожидаемых приращений.
    """

    positions: np.ndarray
    times: np.ndarray
    compensator: np.ndarray
    horizon: float
    seed: int
    index: int = 0
    continuous: bool = False
    internal_states: Optional[List[DensityOperator]] = None

    @property
    def ndim(self) -> int:
        return self.positions.shape[1]

    @property
    def terminal(self) -> np.ndarray:
        return self.positions[-1]


def _to_density(m: np.ndarray) -> DensityOperator:
    return DensityOperator.from_psd(m)


def _dagger_stack(x: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(x, -1, -2))


def _effect_rows(kraus: np.ndarray) -> np.ndarray:
    """Строка k: (K_k* K_k)^T, развёрнутая по строкам."""
    e = np.einsum("kba,kbc->kac", kraus.conj(), kraus)
    return np.swapaxes(e, -1, -2).reshape(len(kraus), -1)


def _branch_weights(effect_rows: np.ndarray, states: np.ndarray) -> np.ndarray:
    """w[b, k] = Tr(K_k rho_b K_k*); каждая строка считается независимо от соседей по пачке."""
    return (states.reshape(len(states), 1, -1) * effect_rows).sum(axis=-1).real


def _choose(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    j = (np.cumsum(probs, axis=1) <= u[:, None]).sum(axis=1)
    return np.minimum(j, probs.shape[1] - 1)


def _mean_step(probs: np.ndarray, steps: np.ndarray) -> np.ndarray:
    return (probs[:, :, None] * steps[None, :, :]).sum(axis=1)


def _initial_stack(coin, rho0: Optional[DensityLike], size: int) -> np.ndarray:
    return np.repeat(_initial_state(coin, rho0)[None], size, axis=0)


def _discrete_batch(coin: DiscreteCoin, rho0: Optional[DensityLike], n_steps: int, seed: int,
                    indices: Sequence[int], store_states: bool, policy: NumericPolicy) -> List[Trajectory]:
    """
    Пачка траекторий шагает синхронно. Равномерные числа траектории i заранее
    берутся из её собственного потока, так что траектория не зависит от состава пачки.
    """
    require_valid(coin, policy)
    if n_steps < 0:
        raise PreconditionError("n_steps must be non-negative")
    kraus = np.array(coin.kraus)
    kraus_h = _dagger_stack(kraus)
    effects = _effect_rows(kraus)
    steps = _step_array(coin)
    size = len(indices)
    rows = np.arange(size)

    uniforms = np.empty((size, n_steps))
    for row, i in enumerate(indices):
        uniforms[row] = trajectory_rng(seed, i).random(n_steps)
    state = _initial_stack(coin, rho0, size)
    positions = np.zeros((size, n_steps + 1, steps.shape[1]), dtype=np.int64)
    compensator = np.zeros((size, n_steps + 1, steps.shape[1]))
    states = [[_to_density(s)] for s in state] if store_states else None

    for n in range(n_steps):
        weights = _branch_weights(effects, state)
        total = weights.sum(axis=1)
        if total.min() < BRANCH_MASS_FLOOR:
            raise CoinDefectError(f"vanishing branch mass {total.min():.3e} at step {n}")
        probs = weights / total[:, None]
        j = _choose(probs, uniforms[:, n])
        state = kraus[j] @ state @ kraus_h[j] / weights[rows, j][:, None, None]
        positions[:, n + 1] = positions[:, n] + steps[j]
        compensator[:, n + 1] = compensator[:, n] + _mean_step(probs, steps)
        if states is not None:
            for row in rows:
                states[row].append(_to_density(state[row]))

    times = np.arange(n_steps + 1, dtype=float)
    return [
        Trajectory(
            positions=positions[row],
            times=times.copy(),
            compensator=compensator[row],
            horizon=float(n_steps),
            seed=seed,
            index=int(i),
            internal_states=None if states is None else states[row],
        )
        for row, i in enumerate(indices)
    ]


def simulate_discrete(coin: DiscreteCoin, rho0: DensityLike, n_steps: int, seed: int, index: int = 0,
                      store_states: bool = False, policy: NumericPolicy = DEFAULT_POLICY) -> Trajectory:
    return _discrete_batch(coin, rho0, n_steps, seed, [index], store_states, policy)[0]


class _Survival:
    """
    Выживаемость s -> Tr(e^{Gs} rho e^{G*s}) для пачки нормированных состояний.
    В собственном базисе G это сумма d^2 экспонент, коэффициенты зависят только от rho.
    При плохой обусловленности базиса считается через expm.
    """

    def __init__(self, G: np.ndarray, policy: NumericPolicy):
        w, V = np.linalg.eig(G)
        if w.real.max() > policy.zero_threshold:
            raise CoinDefectError(f"survival does not decay: spectral abscissa of G is {w.real.max():.3e}")
        self.G = G
        self.V = None
        cond = np.linalg.cond(V)
        if cond > EIGENBASIS_COND_LIMIT:
            logger.warning("ill-conditioned eigenbasis of G (cond=%.3e), using expm", cond)
            return
        self.w = w
        self.V = V
        self.Vinv = np.linalg.inv(V)
        self.gram = (dagger(V) @ V).T
        self.rates = (w[:, None] + w.conj()[None, :]).reshape(-1)

    def coefficients(self, rho: np.ndarray) -> np.ndarray:
        if self.V is None:
            return rho
        x = self.Vinv @ rho @ dagger(self.Vinv)
        return (self.gram * x).reshape(len(rho), -1)

    def __call__(self, coef: np.ndarray, s: np.ndarray) -> np.ndarray:
        if self.V is None:
            return np.einsum("bii->b", self.propagate(coef, s)).real
        return (coef * np.exp(self.rates * s[:, None])).sum(axis=1).real

    def propagate(self, rho: np.ndarray, s: np.ndarray) -> np.ndarray:
        """Ненормированные состояния e^{Gs} rho e^{G*s}."""
        if self.V is None:
            e = np.array([scipy.linalg.expm(self.G * x) for x in s])
        else:
            e = (self.V * np.exp(self.w * s[:, None])[:, None, :]) @ self.Vinv
        return e @ rho @ _dagger_stack(e)


def _jump_times(survival: _Survival, coef: np.ndarray, u: np.ndarray, remaining: np.ndarray,
                iterations: int) -> np.ndarray:
    """
    Бисекция Tr sigma(s) = u на [0, remaining], построчно.
    Число итераций задаётся горизонтом, а не пачкой.
    """
    lo = np.zeros_like(remaining)
    hi = remaining.copy()
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        above = survival(coef, mid) > u
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return hi


def _ct_batch(coin: CoinCT, rho0: Optional[DensityLike], t_max: float, seed: int,
              indices: Sequence[int], store_states: bool, policy: NumericPolicy) -> List[Trajectory]:
    """
    Пачка прыгает раундами. В раунде k каждая живая траектория берёт k-ю пару
    (u для времени, u для направления) из своего потока; траектория, у которой
    прыжка до горизонта нет, выбывает.
    """
    require_valid(coin, policy)
    if t_max <= 0:
        raise PreconditionError("t_max must be positive")
    survival = _Survival(np.array(coin.G), policy)
    iterations = int(np.ceil(np.log2(max(t_max, SURVIVAL_XTOL) / SURVIVAL_XTOL)))
    jumps = np.array(coin.jumps)
    jumps_h = _dagger_stack(jumps)
    effects = _effect_rows(jumps)
    steps = _step_array(coin)
    size = len(indices)
    rngs = [trajectory_rng(seed, i) for i in indices]

    state = _initial_stack(coin, rho0, size)
    t = np.zeros(size)
    pos = np.zeros((size, 2), dtype=np.int64)
    comp = np.zeros((size, 2))
    draws = np.empty((size, DRAW_BLOCK, 2))
    states = [[_to_density(s)] for s in state] if store_states else None
    log_rows, log_t, log_pos, log_comp = [np.arange(size)], [t.copy()], [pos.copy()], [comp.copy()]

    alive = np.arange(size)
    round_ = 0
    while alive.size:
        k = round_ % DRAW_BLOCK
        if k == 0:
            for row in alive:
                draws[row] = rngs[row].random((DRAW_BLOCK, 2))
        round_ += 1
        u = draws[alive, k]
        remaining = t_max - t[alive]
        coef = survival.coefficients(state[alive])
        jumped = survival(coef, remaining) <= u[:, 0]
        alive, u, coef, remaining = alive[jumped], u[jumped], coef[jumped], remaining[jumped]
        if not alive.size:
            break

        s = _jump_times(survival, coef, u[:, 0], remaining, iterations)
        sigma = survival.propagate(state[alive], s)
        weights = _branch_weights(effects, sigma)
        total = weights.sum(axis=1)
        if total.min() < BRANCH_MASS_FLOOR:
            raise CoinDefectError(f"vanishing jump intensity {total.min():.3e} at t={float((t[alive] + s).max()):.6g}")
        probs = weights / total[:, None]
        j = _choose(probs, u[:, 1])
        branch = jumps[j] @ sigma @ jumps_h[j]
        state[alive] = branch / weights[np.arange(alive.size), j][:, None, None]
        t[alive] += s
        pos[alive] += steps[j]
        comp[alive] += _mean_step(probs, steps)

        log_rows.append(alive)
        log_t.append(t[alive])
        log_pos.append(pos[alive])
        log_comp.append(comp[alive])
        if states is not None:
            for row in alive:
                states[row].append(_to_density(state[row]))

    rows = np.concatenate(log_rows)
    order = np.argsort(rows, kind="stable")
    cuts = np.cumsum(np.bincount(rows, minlength=size))[:-1]
    times = np.split(np.concatenate(log_t)[order], cuts)
    positions = np.split(np.concatenate(log_pos)[order], cuts)
    compensator = np.split(np.concatenate(log_comp)[order], cuts)
    return [
        Trajectory(
            positions=positions[row],
            times=times[row],
            compensator=compensator[row],
            horizon=float(t_max),
            seed=seed,
            index=int(i),
            continuous=True,
            internal_states=None if states is None else states[row],
        )
        for row, i in enumerate(indices)
    ]


def simulate_ct(coin: CoinCT, rho0: DensityLike, t_max: float, seed: int, index: int = 0,
                store_states: bool = False, policy: NumericPolicy = DEFAULT_POLICY) -> Trajectory:
    """
    Непрерывное время: точные времена прыжков обращением функции выживания,
    направление j с вероятностью Tr(A_j sigma A_j*) / sum_k Tr(A_k sigma A_k*).
    """
    return _ct_batch(coin, rho0, t_max, seed, [index], store_states, policy)[0]


# ---------- Ансамбли ----------


def _run_batch(indices: Sequence[int], coin, rho0, horizon, seed: int, store_states: bool,
               policy: NumericPolicy) -> List[Trajectory]:
    if isinstance(coin, CoinCT):
        return _ct_batch(coin, rho0, float(horizon), seed, indices, store_states, policy)
    return _discrete_batch(coin, rho0, int(horizon), seed, indices, store_states, policy)


def simulate_ensemble(coin, rho0: DensityLike, horizon: float, n_trajectories: int, seed: int,
                      workers: Optional[int] = None, store_states: bool = False,
                      policy: NumericPolicy = DEFAULT_POLICY, batch_size: Optional[int] = None) -> List[Trajectory]:
    """Траектории 0..n-1 в порядке индексов; результат не зависит ни от числа процессов, ни от размера пачки."""
    workers = NUM_THREADS if workers is None else workers
    batch_size = BATCH_SIZE if batch_size is None else batch_size
    if batch_size < 1:
        raise PreconditionError("batch_size must be positive")
    rho = None if rho0 is None else density_matrix(rho0)
    batches = [list(range(lo, min(lo + batch_size, n_trajectories))) for lo in range(0, n_trajectories, batch_size)]
    job = partial(_run_batch, coin=coin, rho0=rho, horizon=horizon, seed=seed,
                  store_states=store_states, policy=policy)
    logger.info("simulating %d trajectories in %d batch(es) (horizon=%s, seed=%d, workers=%d)",
                n_trajectories, len(batches), horizon, seed, workers)
    if workers <= 1 or len(batches) <= 1:
        done = [job(b) for b in batches]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(job, batches))
    return [t for batch in done for t in batch]


# ---------- Статистика ----------


class EnsembleStats(BaseModel):
    trajectories: int
    horizon: float
    drift: List[float]
    drift_stderr: List[float]
    drift_ci: List[List[float]]
    compensated_drift: List[float]
    returns_to_origin: int
    mean_returns: float
    time_at_origin: Optional[float] = None
    occupation: Dict[str, int]


def _site_label(p: Sequence[int]) -> str:
    return ",".join(str(int(x)) for x in p)


def empirical_stats(trajectories: Sequence[Trajectory], confidence: float = 0.95) -> EnsembleStats:
    """
    Дрейф = среднее конечное смещение / горизонт, ДИ по нормальному приближению.
    Возвраты: посещения начала координат после момента 0 (в непрерывном времени по
    моментам прыжков; время в начале координат считается отдельно).
    """
    if not trajectories:
        raise PreconditionError("empirical_stats needs at least one trajectory")
    horizon = trajectories[0].horizon
    if any(t.horizon != horizon for t in trajectories):
        raise PreconditionError("trajectories have different horizons")
    if horizon <= 0:
        raise PreconditionError("horizon must be positive")

    terminal = np.array([t.terminal for t in trajectories], dtype=float) / horizon
    comp = np.array([t.compensator[-1] for t in trajectories]) / horizon
    n = len(trajectories)
    mean = terminal.mean(axis=0)
    stderr = terminal.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    z = float(scipy.stats.norm.ppf(0.5 + confidence / 2))

    returns = 0
    occupation: Dict[str, int] = {}
    at_origin = 0.0
    for t in trajectories:
        at_zero = ~np.any(t.positions != 0, axis=1)
        returns += int(at_zero[1:].sum())
        sites, counts = np.unique(t.positions, axis=0, return_counts=True)
        for site, c in zip(sites, counts):
            key = _site_label(site)
            occupation[key] = occupation.get(key, 0) + int(c)
        if t.continuous:
            ends = np.append(t.times[1:], t.horizon)
            at_origin += float(((ends - t.times) * at_zero).sum())

    return EnsembleStats(
        trajectories=n,
        horizon=horizon,
        drift=mean.tolist(),
        drift_stderr=stderr.tolist(),
        drift_ci=[[float(m - z * s), float(m + z * s)] for m, s in zip(mean, stderr)],
        compensated_drift=comp.mean(axis=0).tolist(),
        returns_to_origin=returns,
        mean_returns=returns / n,
        time_at_origin=at_origin / n if trajectories[0].continuous else None,
        occupation=dict(sorted(occupation.items())),
    )


def empirical_distribution(trajectories: Sequence[Trajectory], step: int) -> Dict[Site, float]:
    """Частоты X_step по ансамблю дискретных траекторий."""
    if not trajectories:
        raise PreconditionError("empirical_distribution needs at least one trajectory")
    counts: Dict[Site, int] = {}
    for t in trajectories:
        p = t.positions[step]
        site = int(p[0]) if t.ndim == 1 else (int(p[0]), int(p[1]))
        counts[site] = counts.get(site, 0) + 1
    n = len(trajectories)
    return {s: c / n for s, c in counts.items()}


def total_variation(p: Dict, q: Dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * float(sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys))


def marginal(dist: Dict[Tuple[int, int], float], axis: int) -> Dict[int, float]:
    out: Dict[int, float] = {}
    for site, p in dist.items():
        out[site[axis]] = out.get(site[axis], 0.0) + p
    return out
