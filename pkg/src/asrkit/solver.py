"""Backward induction over the pentanomial lattice and contract pricing.

The reduced Bellman recursion is solved level by level, from the horizon
down to level 1.  Within a level every node is an independent function of
the completed next level, so nodes are processed in fixed slabs that can
be fanned out across worker threads; slab boundaries and all arithmetic
are independent of the worker count, which makes solves bit-for-bit
reproducible at any parallelism.

Stage objective at level n, node zeta, inventory q, candidate qt:

    spread_term(zeta) + L((q - qt)/(V dt)) V dt
        + (1/gamma) log sum_j p_j exp(gamma [sig sqrt(dt) (j-2)(q - B)
                                             + theta_next(qt, zeta + n j)])

with B = Q/(n+1) and spread_term = -sig sqrt(dt) B (zeta/n - (n-1)).
For gamma == 0 the log-exp pair degenerates to the probability-weighted
mean; that path is computed directly to avoid cancellation.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import (
    refine_slab,
    stage_slab_cara,
    stage_slab_neutral,
)
from .contract import ContractSpec, ExecutionCostModel, MarketModel, RiskPreference
from .lattice import QGrid, level_size, zeta_bracket

__all__ = [
    "SolveConfig",
    "ValueSurface",
    "Policy",
    "PriceResult",
    "terminal_layer",
    "stage_value",
    "apply_stopping",
    "backward_solve",
    "price",
    "theta_continuous",
    "certainty_equivalent",
    "recover_u",
    "surface_to_csv",
]

# Nodes per work unit; fixed so that results never depend on worker count.
SLAB = 64


@dataclass(frozen=True)
class SolveConfig:
    """Discretisation and solver switches."""

    q_grid: QGrid
    buy_only: bool = False
    refine_local: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class ValueSurface:
    """Solved cost surface: levels[n-1][zeta, i] = Theta_n(q_i, zeta)."""

    levels: list
    q_grid: QGrid
    horizon: int
    mode: str = "base"

    def level(self, n: int) -> np.ndarray:
        return self.levels[n - 1]


@dataclass
class Policy:
    """Optimal next-inventory index per node and exercise flags.

    next_index[n-1][zeta, i] is the argmin grid index at level n < N.
    exercise[n-1] is a boolean table for n in the exercise set (delivery
    is forced at the horizon and implicit there).
    """

    next_index: list
    exercise: list
    exercise_days: tuple

    def trade_index(self, n: int) -> np.ndarray:
        return self.next_index[n - 1]

    def exercise_table(self, n: int) -> Optional[np.ndarray]:
        return self.exercise[n - 1]


@dataclass
class PriceResult:
    pi: float
    pi_per_share: float
    v0: float
    q0_index: int
    meta: dict = field(default_factory=dict)


def terminal_layer(contract: ContractSpec, q_grid: QGrid,
                   offset: float = 0.0) -> np.ndarray:
    """Horizon values: the penalty on unfinished inventory, every node."""
    pen = contract.penalty.value(q_grid.values) + offset
    return np.broadcast_to(pen, (level_size(contract.horizon), q_grid.num_steps + 1)).copy()


def _risk_exposure(n: int, market: MarketModel, nominal: float,
                   q: np.ndarray) -> np.ndarray:
    """F[i, j] = sig sqrt(dt) (j-2) (q_i - Q/(n+1))."""
    b = nominal / (n + 1)
    slope = market.sig_sqdt * (q - b)
    return slope[:, None] * np.arange(-2.0, 3.0)[None, :]


def _cost_matrix(costs: ExecutionCostModel, market: MarketModel,
                 day: int, q: np.ndarray) -> np.ndarray:
    """Lmat[i, k] = execution cost of moving inventory q_i -> q_k in one day."""
    vol = market.volume_at(day)
    v = (q[:, None] - q[None, :]) / market.dt
    return costs.day_cost(v, vol, market.dt)


def _spread_term(n: int, zetas: np.ndarray, market: MarketModel,
                 nominal: float) -> np.ndarray:
    z = zetas / n - (n - 1)
    return -market.sig_sqdt * (nominal / (n + 1)) * z


def _mean_continuation(C: np.ndarray, probs: np.ndarray) -> np.ndarray:
    # fixed accumulation order for reproducibility
    out = probs[0] * C[:, 0, :]
    for j in range(1, 5):
        out = out + probs[j] * C[:, j, :]
    return out


def _solve_level_slab(args):
    (lo, hi, zetas, next_level, n, F, Lmat, gamma, probs, buy_only,
     refine, q, eta, phi, psi, vdt, out_v, out_k) = args
    zs = zetas[lo:hi]
    cols = zs[:, None] + n * np.arange(5)[None, :]
    C = next_level[cols]                       # (B, 5, M1)
    Cmean = _mean_continuation(C, probs)
    vv = out_v[lo:hi]
    kk = out_k[lo:hi]
    if gamma > 0.0:
        stage_slab_cara(C, Cmean, F, Lmat, gamma, probs, buy_only, vv, kk)
    else:
        stage_slab_neutral(Cmean, Lmat, buy_only, vv, kk)
    if refine:
        refine_slab(C, F, q, eta, phi, psi, vdt, gamma, probs,
                    gamma == 0.0, buy_only, kk, vv)


def backward_solve(contract: ContractSpec, market: MarketModel,
                   costs: ExecutionCostModel, risk: RiskPreference,
                   config: SolveConfig):
    """Solve the full lattice; returns (ValueSurface, Policy).

    Deterministic for a given input set, independent of config.workers.
    """
    N = contract.horizon
    grid = config.q_grid
    q = grid.values
    M1 = grid.num_steps + 1
    probs = market.law.probabilities()
    gamma = risk.gamma

    levels = [None] * N
    next_index = [None] * N
    exercise = [None] * N
    try:
        levels[N - 1] = terminal_layer(contract, grid)
    except MemoryError as exc:
        raise MemoryError(f"allocating terminal level {N} "
                          f"({level_size(N)} x {M1})") from exc

    pen = contract.penalty.value(q)
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for n in range(N - 1, 0, -1):
            K = level_size(n)
            zetas = np.arange(K, dtype=np.int64)
            F = _risk_exposure(n, market, contract.nominal, q)
            Lmat = _cost_matrix(costs, market, n + 1, q)
            vdt = market.volume_at(n + 1) * market.dt
            try:
                out_v = np.empty((K, M1))
                out_k = np.empty((K, M1), dtype=np.int32)
            except MemoryError as exc:
                raise MemoryError(f"allocating level {n} ({K} x {M1})") from exc
            tasks = [
                (lo, min(lo + SLAB, K), zetas, levels[n], n, F, Lmat, gamma,
                 probs, config.buy_only, config.refine_local, q, costs.eta,
                 costs.phi, costs.psi, vdt, out_v, out_k)
                for lo in range(0, K, SLAB)
            ]
            if pool is None:
                for t in tasks:
                    _solve_level_slab(t)
            else:
                list(pool.map(_solve_level_slab, tasks))
            out_v += _spread_term(n, zetas, market, contract.nominal)[:, None]
            if n in contract.exercise_set:
                flag = pen[None, :] <= out_v
                np.minimum(out_v, pen[None, :], out=out_v)
                exercise[n - 1] = flag
            levels[n - 1] = out_v
            next_index[n - 1] = out_k
    finally:
        if pool is not None:
            pool.shutdown()

    surface = ValueSurface(levels=levels, q_grid=grid, horizon=N, mode="base")
    policy = Policy(next_index=next_index, exercise=exercise,
                    exercise_days=contract.exercise_days)
    return surface, policy


def stage_value(n: int, zeta: int, q_index: int, next_level: np.ndarray,
                contract: ContractSpec, market: MarketModel,
                costs: ExecutionCostModel, risk: RiskPreference,
                config: SolveConfig):
    """Continuation value and argmin at a single (n, zeta, q) state.

    Single-node version of the slab computation; used by tests and by
    off-lattice playback via the row variant below.
    """
    vals, ks = _stage_row(n, float(zeta), next_level, contract, market,
                          costs, risk, config, on_lattice=True)
    return float(vals[q_index]), int(ks[q_index])


def _stage_row(n: int, zeta_real: float, next_level: np.ndarray,
               contract: ContractSpec, market: MarketModel,
               costs: ExecutionCostModel, risk: RiskPreference,
               config: SolveConfig, on_lattice: bool):
    """Theta-tilde over the whole inventory grid at one (possibly
    off-lattice) node coordinate.  Off-lattice coordinates blend the two
    bracketing node columns of the next level before the kernel runs."""
    grid = config.q_grid
    q = grid.values
    M1 = q.size
    probs = market.law.probabilities()
    gamma = risk.gamma
    F = _risk_exposure(n, market, contract.nominal, q)
    Lmat = _cost_matrix(costs, market, n + 1, q)

    offsets = n * np.arange(5)
    if on_lattice:
        C = next_level[int(zeta_real) + offsets][None, :, :]
    else:
        rows = []
        top = next_level.shape[0] - 1
        for j in range(5):
            pos = zeta_real + offsets[j]
            pos = min(max(pos, 0.0), float(top))
            lo = int(math.floor(pos))
            w = pos - lo
            if w == 0.0:
                rows.append(next_level[lo])
            else:
                x0, x1 = next_level[lo], next_level[lo + 1]
                bad = np.isinf(x0) | np.isinf(x1)
                with np.errstate(invalid="ignore"):
                    blend = np.where(bad, np.inf, x0 + w * (x1 - x0))
                rows.append(blend)
        C = np.stack(rows)[None, :, :]

    out_v = np.empty((1, M1))
    out_k = np.empty((1, M1), dtype=np.int32)
    Cmean = _mean_continuation(C, probs)
    if gamma > 0.0:
        stage_slab_cara(C, Cmean, F, Lmat, gamma, probs, config.buy_only,
                        out_v, out_k)
    else:
        stage_slab_neutral(Cmean, Lmat, config.buy_only, out_v, out_k)
    if config.refine_local:
        refine_slab(C, F, q, costs.eta, costs.phi, costs.psi,
                    market.volume_at(n + 1) * market.dt, gamma, probs,
                    gamma == 0.0, config.buy_only, out_k, out_v)
    z = zeta_real / n - (n - 1)
    out_v += -market.sig_sqdt * (contract.nominal / (n + 1)) * z
    return out_v[0], out_k[0]


def apply_stopping(n: int, zeta: int, q_index: int, theta_tilde: float,
                   contract: ContractSpec, q_grid: QGrid,
                   penalty_offset: float = 0.0):
    """Exercise comparison at n in the exercise set: keep the cheaper of
    continuing and delivering; ties deliver."""
    if n not in contract.exercise_set:
        raise ValueError(f"day {n} is not an exercise day")
    floor = contract.penalty.value(q_grid.values[q_index]) + penalty_offset
    if floor <= theta_tilde:
        return floor, True
    return theta_tilde, False


def price(surface: ValueSurface, contract: ContractSpec, market: MarketModel,
          costs: ExecutionCostModel, config: SolveConfig,
          wall_time: float = float("nan")) -> PriceResult:
    """Indifference price: cheapest first trade against Theta_1(., 0)."""
    q = config.q_grid.values
    theta1 = surface.level(1)[0]
    v = (contract.nominal - q) / market.dt
    obj = costs.day_cost(v, market.volume_at(1), market.dt) + theta1
    idx = int(np.argmin(obj))
    pi = float(obj[idx])
    if config.refine_local and np.isfinite(pi):
        pi = min(pi, _refine_price(theta1, q, contract, market, costs, idx))
    v0 = float(v[idx])
    meta = {
        "mode": surface.mode,
        "horizon": contract.horizon,
        "q_steps": config.q_grid.num_steps,
        "buy_only": config.buy_only,
        "wall_time": wall_time,
        "workers": config.workers,
    }
    return PriceResult(pi=pi, pi_per_share=pi / contract.nominal,
                       v0=v0, q0_index=idx, meta=meta)


def _refine_price(theta1, q, contract, market, costs, idx):
    lo = q[max(idx - 1, 0)]
    hi = q[min(idx + 1, q.size - 1)]
    if hi <= lo:
        return np.inf
    invphi = 0.5 * (math.sqrt(5.0) - 1.0)

    def f(qt):
        th = np.interp(qt, q, theta1)
        if np.isinf(th):
            return np.inf
        return costs.day_cost((contract.nominal - qt) / market.dt,
                              market.volume_at(1), market.dt) + th

    a, c = lo, hi
    x1 = c - invphi * (c - a)
    x2 = a + invphi * (c - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(60):
        if f1 <= f2:
            c, x2, f2 = x2, x1, f1
            x1 = c - invphi * (c - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (c - a)
            f2 = f(x2)
    return min(f1, f2)


def theta_continuous(surface: ValueSurface, n: int, q: float, z: float) -> float:
    """Bilinear read of the surface at an arbitrary (q, Z); exact on
    lattice points, clamped beyond the node range."""
    lvl = surface.level(n)
    zlo, zhi, wz = zeta_bracket(n, z)
    grid = surface.q_grid
    pos = q / grid.step
    pos = min(max(pos, 0.0), float(grid.num_steps))
    qlo = int(math.floor(pos))
    qhi = min(qlo + 1, grid.num_steps)
    wq = pos - qlo

    def read(zi):
        x0, x1 = lvl[zi, qlo], lvl[zi, qhi]
        if wq == 0.0:
            return x0
        if np.isinf(x0) or np.isinf(x1):
            return math.inf
        return x0 + wq * (x1 - x0)

    v0 = read(zlo)
    if wz == 0.0:
        return float(v0)
    v1 = read(zhi)
    if np.isinf(v0) or np.isinf(v1):
        return math.inf
    return float(v0 + wz * (v1 - v0))


def certainty_equivalent(theta_value: float, nominal: float, avg_price: float,
                         cash: float, q: float, spot: float) -> float:
    """Deterministic cash amount equivalent to holding the position."""
    return nominal * avg_price - cash - q * spot - theta_value


def recover_u(ce: float, gamma: float) -> float:
    """CARA utility of a certainty equivalent; -inf for the penalty
    sentinel.  Undefined in risk-neutral mode."""
    if gamma <= 0.0:
        raise ValueError("utility recovery needs gamma > 0; "
                         "risk-neutral mode reports certainty equivalents only")
    return float(-np.exp(-gamma * ce))


def surface_to_csv(surface: ValueSurface, policy: Optional[Policy], path,
                   market: Optional[MarketModel] = None) -> None:
    """Dump (n, zeta, Z, q, theta, v_opt, exercise) rows; sentinel values
    serialise as the literal string 'inf'."""
    dt = market.dt if market is not None else 1.0
    q = surface.q_grid.values
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "zeta", "Z", "q", "theta", "v_opt", "exercise"])
        for n in range(1, surface.horizon + 1):
            lvl = surface.level(n)
            idx = policy.next_index[n - 1] if policy is not None else None
            exn = policy.exercise[n - 1] if policy is not None else None
            terminal = n == surface.horizon
            for zeta in range(lvl.shape[0]):
                z = zeta / n - (n - 1)
                for i in range(q.size):
                    theta = lvl[zeta, i]
                    if terminal or idx is None:
                        v_opt = 0.0
                    else:
                        v_opt = (q[i] - q[idx[zeta, i]]) / dt
                    if terminal:
                        ex = 1
                    elif exn is not None:
                        ex = int(exn[zeta, i])
                    else:
                        ex = 0
                    w.writerow([n, zeta, repr(z), repr(float(q[i])),
                                "inf" if np.isinf(theta) else repr(float(theta)),
                                repr(float(v_opt)), ex])
