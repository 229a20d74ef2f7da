"""Path generation and policy playback.

Paths carry daily prices S_n, the running average A_n of daily prices
since inception and the normalized spread Z_n = (S_n - A_n)/(sig sqrt(dt)).
Lattice-sourced paths draw pentanomial innovations, so the integer node
coordinate zeta_n = n (Z_n + n - 1) follows the exact recursion
zeta_{n+1} = zeta_n + n (eps + 2) and playback can read the policy tables
directly; gaussian and external paths re-minimise the stage objective each
day against the interpolated continuation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .contract import ContractSpec, ExecutionCostModel, MarketModel, RiskPreference
from .impact import (
    IntradayNoise,
    PermanentImpactModel,
    _perm_stage_row,
    permanent_dynamics_step,
)
from .solver import Policy, SolveConfig, ValueSurface, _stage_row
from .lattice import zeta_of

__all__ = [
    "PricePath",
    "ExecutionRecord",
    "gen_path",
    "path_from_prices",
    "playback",
    "playback_permanent",
    "batch_playback",
    "lemma_y_check",
    "run_fixed_strategy",
]


@dataclass
class PricePath:
    """Daily prices with their running average and spread, day 0..N.

    A[0] and Z[0] use the convention A_0 = S_0, Z_0 = 0 (the average is
    only defined from day 1 on).  eps[n] is the innovation realised over
    (n-1, n]; zeta holds exact integer node coordinates for lattice paths,
    None otherwise.
    """

    S: np.ndarray
    A: np.ndarray
    Z: np.ndarray
    eps: np.ndarray
    source: str
    zeta: Optional[np.ndarray] = None

    @property
    def horizon(self) -> int:
        return self.S.size - 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["day", "price"])
            for day, s in enumerate(self.S):
                w.writerow([day, repr(float(s))])


def _averages(S: np.ndarray, sig_sqdt: float):
    N = S.size - 1
    A = np.empty(N + 1)
    A[0] = S[0]
    for n in range(1, N + 1):
        A[n] = ((n - 1) * A[n - 1] + S[n]) / n
    Z = (S - A) / sig_sqdt
    Z[0] = 0.0
    return A, Z


def gen_path(market: MarketModel, horizon: int, source: str = "lattice",
             seed: int = 0, rng: Optional[np.random.Generator] = None) -> PricePath:
    """Simulate one price path; reproducible for a given seed."""
    if rng is None:
        rng = np.random.default_rng(seed)
    if source == "lattice":
        eps_vals = rng.choice(market.law.support(), size=horizon,
                              p=market.law.probabilities())
    elif source == "gaussian":
        eps_vals = rng.standard_normal(horizon)
    else:
        raise ValueError(f"unknown path source {source!r}")
    eps = np.concatenate([[0.0], eps_vals])
    S = market.initial_price + market.sig_sqdt * np.cumsum(eps)
    A, Z = _averages(S, market.sig_sqdt)
    zeta = None
    if source == "lattice":
        zeta = np.zeros(horizon + 1, dtype=np.int64)
        for n in range(1, horizon):
            zeta[n + 1] = zeta[n] + n * int(eps[n + 1] + 2)
    return PricePath(S=S, A=A, Z=Z, eps=eps, source=source, zeta=zeta)


def path_from_prices(prices: Sequence[float], market: MarketModel) -> PricePath:
    """Build a path from externally supplied prices for days 0..N; the
    average and spread are recomputed internally."""
    S = np.asarray(prices, dtype=float)
    if S.size < 3:
        raise ValueError("need prices for at least days 0..2")
    A, Z = _averages(S, market.sig_sqdt)
    eps = np.concatenate([[0.0], np.diff(S) / market.sig_sqdt])
    return PricePath(S=S, A=A, Z=Z, eps=eps, source="external")


def read_path_csv(path, market: MarketModel) -> PricePath:
    days, prices = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            days.append(int(row["day"]))
            prices.append(float(row["price"]))
    order = np.argsort(days)
    if list(np.asarray(days)[order]) != list(range(len(days))):
        raise ValueError("path csv must cover days 0..N exactly once")
    return path_from_prices(np.asarray(prices)[order], market)


@dataclass
class ExecutionRecord:
    """Playback of one path: per-day state up to and including delivery."""

    day: np.ndarray
    S: np.ndarray
    A: np.ndarray
    Z: np.ndarray
    q: np.ndarray
    v: np.ndarray
    X: np.ndarray
    delivery_day: int
    objective: float
    mode: str = "base"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["day", "S", "A", "Z", "q", "v", "X", "delivered"])
            for i, d in enumerate(self.day):
                w.writerow([int(d), repr(float(self.S[i])), repr(float(self.A[i])),
                            repr(float(self.Z[i])), repr(float(self.q[i])),
                            repr(float(self.v[i])), repr(float(self.X[i])),
                            int(d == self.delivery_day)])


def _first_trade_index(contract, market, costs, config, theta1_row):
    q = config.q_grid.values
    v = (contract.nominal - q) / market.dt
    obj = costs.day_cost(v, market.volume_at(1), market.dt) + theta1_row
    return int(np.argmin(obj))


def playback(policy: Policy, surface: ValueSurface, path: PricePath,
             contract: ContractSpec, market: MarketModel,
             costs: ExecutionCostModel, risk: RiskPreference,
             config: SolveConfig) -> ExecutionRecord:
    """Run the solved base-mode policy along a price path.

    Lattice paths use the stored tables; other paths re-minimise the stage
    objective with the continuation interpolated at the observed spread.
    Delivery happens at the first admissible day where the penalty is no
    worse than continuing, and is forced at the horizon.
    """
    N = contract.horizon
    if path.horizon != N:
        raise ValueError(f"path covers {path.horizon} days, contract needs {N}")
    grid = config.q_grid
    qv = grid.values
    dt = market.dt
    pen = contract.penalty.value(qv)
    on_lattice = path.zeta is not None

    k = _first_trade_index(contract, market, costs, config, surface.level(1)[0])
    q_idx = [grid.num_steps, k]
    v_seq = [(contract.nominal - qv[k]) / dt]
    X = [0.0, v_seq[0] * path.S[1] * dt
         + costs.day_cost(v_seq[0], market.volume_at(1), dt)]

    delivery = N
    for n in range(1, N):
        i = q_idx[n]
        if n in contract.exercise_set:
            if on_lattice:
                deliver = bool(policy.exercise_table(n)[path.zeta[n], i])
            else:
                row, _ = _stage_row(n, zeta_of(n, path.Z[n]), surface.level(n + 1),
                                    contract, market, costs, risk, config,
                                    on_lattice=False)
                deliver = pen[i] <= row[i]
            if deliver:
                delivery = n
                break
        if on_lattice:
            k = int(policy.trade_index(n)[path.zeta[n], i])
        else:
            row, ks = _stage_row(n, zeta_of(n, path.Z[n]), surface.level(n + 1),
                                 contract, market, costs, risk, config,
                                 on_lattice=False)
            k = int(ks[i])
        v = (qv[i] - qv[k]) / dt
        v_seq.append(v)
        X.append(X[n] + v * path.S[n + 1] * dt
                 + costs.day_cost(v, market.volume_at(n + 1), dt))
        q_idx.append(k)

    days = np.arange(delivery + 1)
    qs = qv[np.asarray(q_idx[: delivery + 1])]
    vs = np.asarray(v_seq[:delivery] + [0.0])
    objective = (contract.nominal * path.A[delivery] - X[delivery]
                 - qs[delivery] * path.S[delivery]
                 - contract.penalty.value(qs[delivery]))
    return ExecutionRecord(day=days, S=path.S[: delivery + 1],
                           A=path.A[: delivery + 1], Z=path.Z[: delivery + 1],
                           q=qs, v=vs, X=np.asarray(X[: delivery + 1]),
                           delivery_day=delivery, objective=float(objective))


def playback_permanent(policy: Policy, surface: ValueSurface, eps: np.ndarray,
                       eps_prime: np.ndarray, contract: ContractSpec,
                       market: MarketModel, costs: ExecutionCostModel,
                       risk: RiskPreference, config: SolveConfig,
                       impact: PermanentImpactModel,
                       noise: IntradayNoise) -> ExecutionRecord:
    """Playback under permanent impact: prices are built along the way
    because trading moves them.  eps/eps_prime are indexed 1..N."""
    N = contract.horizon
    grid = config.q_grid
    qv = grid.values
    dt = market.dt
    Q = contract.nominal
    f0 = impact.F(0.0, Q)
    pen = contract.penalty.value(qv) + f0

    theta1 = surface.level(1)[0]
    vdt = Q - qv
    obj = (costs.day_cost(vdt / dt, market.volume_at(1), dt)
           - Q * (impact.G(qv, Q) - impact.G(Q, Q)) + theta1)
    if noise.enabled and risk.gamma > 0.0:
        obj = obj + noise.cgf(-risk.gamma * vdt / math.sqrt(3.0),
                              market.sigma, market.dt) / risk.gamma
    k = int(np.argmin(obj))

    state = {"S": market.initial_price, "A": market.initial_price,
             "q": Q, "X": 0.0}
    S_hist = [state["S"]]
    A_hist = [state["A"]]
    q_idx = [grid.num_steps]
    v_seq = []
    X_hist = [0.0]

    def step(day, i_from, i_to):
        v = (qv[i_from] - qv[i_to]) / dt
        new = permanent_dynamics_step(state, v, eps[day + 1], eps_prime[day + 1],
                                      day, contract, market, costs, impact, noise)
        state.update(new)
        S_hist.append(state["S"])
        A_hist.append(state["A"])
        X_hist.append(state["X"])
        q_idx.append(i_to)
        v_seq.append(v)

    step(0, grid.num_steps, k)
    delivery = N
    for n in range(1, N):
        i = q_idx[n]
        z = (state["S"] - state["A"]) / market.sig_sqdt
        row, ks = _perm_stage_row(n, zeta_of(n, z), surface.level(n + 1),
                                  contract, market, costs, risk, config,
                                  impact, noise)
        if n in contract.exercise_set and pen[i] <= row[i]:
            delivery = n
            break
        step(n, i, int(ks[i]))

    S = np.asarray(S_hist[: delivery + 1])
    A = np.asarray(A_hist[: delivery + 1])
    Z = (S - A) / market.sig_sqdt
    Z[0] = 0.0
    qs = qv[np.asarray(q_idx[: delivery + 1])]
    vs = np.asarray(v_seq[:delivery] + [0.0])
    X = np.asarray(X_hist[: delivery + 1])
    objective = (Q * A[delivery] - X[delivery] - qs[delivery] * S[delivery]
                 - f0 + impact.F(qs[delivery], Q)
                 - contract.penalty.value(qs[delivery]))
    return ExecutionRecord(day=np.arange(delivery + 1), S=S, A=A, Z=Z, q=qs,
                           v=vs, X=X, delivery_day=delivery,
                           objective=float(objective), mode="permanent")


def batch_playback(policy: Policy, surface: ValueSurface,
                   contract: ContractSpec, market: MarketModel,
                   costs: ExecutionCostModel, risk: RiskPreference,
                   config: SolveConfig, n_paths: int, seed: int,
                   source: str = "lattice"):
    """Playback over independently seeded paths; per-path RNG streams make
    the batch reproducible and order-independent."""
    seeds = np.random.SeedSequence(seed).spawn(n_paths)
    records = []
    for s in seeds:
        path = gen_path(market, contract.horizon, source=source,
                        rng=np.random.default_rng(s))
        records.append(playback(policy, surface, path, contract, market,
                                costs, risk, config))
    objectives = np.array([r.objective for r in records])
    summary = {
        "paths": n_paths,
        "mean_objective": float(np.sum(objectives) / n_paths),
        "mean_delivery_day": float(np.sum([r.delivery_day for r in records]) / n_paths),
    }
    return records, summary


def run_fixed_strategy(path: PricePath, v: Sequence[float],
                       contract: ContractSpec, market: MarketModel,
                       costs: ExecutionCostModel, start: int = 0,
                       q0: Optional[float] = None, x0: float = 0.0):
    """Forward accounting of an arbitrary trade sequence along a path.

    v[j] is the speed over (start+j, start+j+1]; returns inventories and
    cash indexed by absolute day start..N.
    """
    dt = market.dt
    q = [contract.nominal if q0 is None else q0]
    X = [x0]
    for j, speed in enumerate(v):
        day = start + j
        q.append(q[-1] - speed * dt)
        X.append(X[-1] + speed * path.S[day + 1] * dt
                 + costs.day_cost(speed, market.volume_at(day + 1), dt))
    return np.asarray(q), np.asarray(X)


def lemma_y_check(path: PricePath, v: Sequence[float],
                  contract: ContractSpec, market: MarketModel,
                  costs: ExecutionCostModel, start: int = 1,
                  q0: Optional[float] = None, x0: float = 0.0) -> float:
    """Pathwise identity behind the spread reduction.

    For the benchmark-adjusted wealth Y_k = -Q A_k + X_k + q_k S_k the
    increment Y_k - Y_start telescopes into an innovation sum plus the
    spread and execution-cost terms; returns the largest normalised
    residual between the two sides over k = start..N.
    """
    if start < 1:
        raise ValueError("the running average needs start >= 1")
    N = path.horizon
    v = np.asarray(v, dtype=float)
    if v.size != N - start:
        raise ValueError(f"need {N - start} trades for days {start}..{N - 1}")
    Q = contract.nominal
    dt = market.dt
    q, X = run_fixed_strategy(path, v, contract, market, costs,
                              start=start, q0=q0, x0=x0)
    Y0 = -Q * path.A[start] + X[0] + q[0] * path.S[start]
    eps = path.eps
    worst = 0.0
    lcost = np.array([costs.day_cost(v[j], market.volume_at(start + j + 1), dt)
                      for j in range(v.size)])
    for k in range(start, N + 1):
        Yk = -Q * path.A[k] + X[k - start] + q[k - start] * path.S[k]
        lhs = Yk - Y0
        js = np.arange(start, k)
        risk_sum = np.sum((q[js - start] - (1 - js / k) * Q) * eps[js + 1])
        rhs = (market.sig_sqdt * (risk_sum - (1 - start / k) * Q * path.Z[start])
               + np.sum(lcost[: k - start]))
        # the wealth differences cancel to near zero by construction, so
        # the residual is measured against the operands actually summed
        scale = 1.0 + max(abs(Q * path.A[k]), abs(X[k - start]),
                          abs(q[k - start] * path.S[k]),
                          abs(market.sig_sqdt * risk_sum))
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst
