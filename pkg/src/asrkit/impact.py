"""Permanent market impact: kernel primitives, modified dynamics, and the
modified lattice solve.

Trading leaves a lasting price shift governed by a nonnegative,
nonincreasing kernel f of the quantity already bought.  Its integrals

    G(q) = int_q^Q f(|Q - y|) dy        (price shift potential)
    F(q) = int_q^Q y f(|Q - y|) dy      (cash drift potential)

enter the price and cash dynamics.  The intraday execution of each daily
order adds a second innovation eps' with covariance sqrt(3)/2 against the
daily innovation; its contribution to the exponential objective is
integrated out analytically conditional on eps (gaussian conditional:
mean sqrt(3)/2 eps, variance 1/4), which is exact for the joint law used
by the simulator and never feeds the continuation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from ._kernels import stage_slab_perm_cara, stage_slab_perm_neutral
from .contract import ContractSpec, ExecutionCostModel, MarketModel, RiskPreference
from .lattice import level_size
from .solver import (
    Policy,
    PriceResult,
    SolveConfig,
    ValueSurface,
    _cost_matrix,
    _spread_term,
    backward_solve,
    terminal_layer,
)

__all__ = [
    "PermanentImpactModel",
    "IntradayNoise",
    "permanent_dynamics_step",
    "backward_solve_permanent",
    "stage_value_permanent",
    "price_permanent",
]

QUAD_RTOL = 1e-10


@dataclass(frozen=True)
class PermanentImpactModel:
    """Impact kernel f on the bought quantity; kind in
    {none, constant, power, table}.

    constant: f = k;  power: f(x) = k x^(-beta), 0 < beta < 1;
    table: linear interpolation between (x, f) knots, held flat beyond.
    """

    kind: str = "none"
    k: float = 0.0
    beta: float = 0.5
    table_x: tuple = ()
    table_f: tuple = ()

    def __post_init__(self):
        if self.kind not in ("none", "constant", "power", "table"):
            raise ValueError(f"unknown impact kind {self.kind!r}")
        if self.kind in ("constant", "power") and self.k < 0:
            raise ValueError("impact coefficient must be nonnegative")
        if self.kind == "power" and not 0.0 < self.beta < 1.0:
            raise ValueError("power-law exponent must be in (0, 1)")
        if self.kind == "table":
            x = np.asarray(self.table_x, dtype=float)
            f = np.asarray(self.table_f, dtype=float)
            if x.size < 2 or x.size != f.size:
                raise ValueError("tabulated kernel needs matching x/f knots")
            if np.any(np.diff(x) <= 0):
                raise ValueError("kernel knots must be increasing")
            if np.any(f < 0) or np.any(np.diff(f) > 0):
                raise ValueError("kernel must be nonnegative and nonincreasing")

    @property
    def is_none(self) -> bool:
        return self.kind == "none"

    def _f(self, x: float) -> float:
        if self.kind == "none":
            return 0.0
        if self.kind == "constant":
            return self.k
        if self.kind == "power":
            return self.k * x ** (-self.beta) if x > 0 else math.inf
        return float(np.interp(x, self.table_x, self.table_f))

    def _check_domain(self, q, nominal: float):
        arr = np.asarray(q, dtype=float)
        if np.any(arr < 0) or np.any(arr > nominal):
            raise ValueError("impact integrals are defined on [0, nominal]")

    def G(self, q, nominal: float):
        """Price-shift potential; closed forms where available."""
        self._check_domain(q, nominal)
        arr = np.asarray(q, dtype=float)
        rem = nominal - arr
        if self.kind == "none":
            out = np.zeros_like(arr)
        elif self.kind == "constant":
            out = self.k * rem
        elif self.kind == "power":
            out = self.k * rem ** (1.0 - self.beta) / (1.0 - self.beta)
        else:
            out = np.vectorize(
                lambda qq: quad(lambda y: self._f(abs(nominal - y)), qq,
                                nominal, epsrel=QUAD_RTOL, epsabs=0.0)[0]
            )(arr) if arr.size else arr
        return float(out) if np.ndim(q) == 0 else out

    def F(self, q, nominal: float):
        """Cash-drift potential; closed forms where available."""
        self._check_domain(q, nominal)
        arr = np.asarray(q, dtype=float)
        rem = nominal - arr
        if self.kind == "none":
            out = np.zeros_like(arr)
        elif self.kind == "constant":
            out = self.k * (nominal**2 - arr**2) / 2.0
        elif self.kind == "power":
            out = (self.k * nominal * rem ** (1.0 - self.beta) / (1.0 - self.beta)
                   - self.k * rem ** (2.0 - self.beta) / (2.0 - self.beta))
        else:
            out = np.vectorize(
                lambda qq: quad(lambda y: y * self._f(abs(nominal - y)), qq,
                                nominal, epsrel=QUAD_RTOL, epsabs=0.0)[0]
            )(arr) if arr.size else arr
        return float(out) if np.ndim(q) == 0 else out


@dataclass(frozen=True)
class IntradayNoise:
    """The progressive-execution innovation eps'.

    Jointly with the daily innovation eps it has unit variances and
    covariance sqrt(3)/2; conditional on eps it is gaussian with mean
    (sqrt(3)/2) eps and variance 1/4.
    """

    enabled: bool = True

    COND_MEAN_COEF = math.sqrt(3.0) / 2.0
    COND_STD = 0.5

    def cgf(self, u: float, sigma: float, dt: float) -> float:
        """Cumulant generating function of sigma*sqrt(dt)*eps' at u."""
        return 0.5 * u * u * sigma * sigma * dt

    def draw(self, eps: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Sample eps' given realised eps values."""
        eps = np.asarray(eps, dtype=float)
        return (self.COND_MEAN_COEF * eps
                + self.COND_STD * rng.standard_normal(eps.shape))


def permanent_dynamics_step(state: dict, v: float, eps: float,
                            eps_prime: float, day: int,
                            contract: ContractSpec, market: MarketModel,
                            costs: ExecutionCostModel,
                            impact: PermanentImpactModel,
                            noise: IntradayNoise) -> dict:
    """One day of the impacted dynamics, from day `day` to day+1.

    state carries S, A, q, X at `day` (A meaningful for day >= 1).
    Flags a move that would leave [0, nominal].
    """
    Q = contract.nominal
    dt = market.dt
    q_new = state["q"] - v * dt
    if q_new < -1e-9 * Q or q_new > Q * (1 + 1e-9):
        raise ValueError(f"inventory {q_new} leaves [0, {Q}] at day {day + 1}")
    q_new = min(max(q_new, 0.0), Q)
    dG = impact.G(q_new, Q) - impact.G(state["q"], Q)
    s_new = state["S"] + market.sig_sqdt * eps + dG
    noise_term = 0.0
    if noise.enabled:
        noise_term = market.sigma * v * dt**1.5 / math.sqrt(3.0) * eps_prime
    x_new = (state["X"] + s_new * v * dt
             - state["q"] * dG
             + impact.F(q_new, Q) - impact.F(state["q"], Q)
             - noise_term
             + costs.day_cost(v, market.volume_at(day + 1), dt))
    if day == 0:
        a_new = s_new
    else:
        a_new = (day * state["A"] + s_new) / (day + 1)
    return {"S": s_new, "A": a_new, "q": q_new, "X": x_new}


def _perm_level_inputs(n, contract, market, costs, risk, config, impact, noise):
    q = config.q_grid.values
    Q = contract.nominal
    b = Q / (n + 1)
    garr = impact.G(q, Q)
    dz = n * (garr[None, :] - garr[:, None]) / market.sig_sqdt
    Lmat = _cost_matrix(costs, market, n + 1, q)
    base = Lmat - b * (garr[None, :] - garr[:, None])
    f1 = market.sig_sqdt * (q - b)
    if noise.enabled:
        a = market.sig_sqdt * (q[:, None] - q[None, :]) / math.sqrt(3.0)
        f2 = f1[:, None] - IntradayNoise.COND_MEAN_COEF * a
        if risk.gamma > 0.0:
            base = base + risk.gamma * a * a / 8.0
    else:
        f2 = np.broadcast_to(f1[:, None], (q.size, q.size)).copy()
    return dz, f2, base


def backward_solve_permanent(contract: ContractSpec, market: MarketModel,
                             costs: ExecutionCostModel, risk: RiskPreference,
                             config: SolveConfig,
                             impact: PermanentImpactModel,
                             noise: IntradayNoise):
    """Permanent-impact backward induction; returns (ValueSurface, Policy).

    With no kernel and no intraday noise the recursion is identical to the
    base model, so that case delegates to the base solver (the surfaces
    must match bit for bit); only the mode tag differs.
    """
    if config.refine_local:
        raise NotImplementedError("local refinement is a base-mode feature")
    if impact.is_none and not noise.enabled:
        surface, policy = backward_solve(contract, market, costs, risk, config)
        surface.mode = "permanent"
        return surface, policy

    N = contract.horizon
    grid = config.q_grid
    q = grid.values
    M1 = grid.num_steps + 1
    probs = market.law.probabilities()
    gamma = risk.gamma
    f0 = impact.F(0.0, contract.nominal)

    levels = [None] * N
    next_index = [None] * N
    exercise = [None] * N
    levels[N - 1] = terminal_layer(contract, grid, offset=f0)
    pen = contract.penalty.value(q) + f0

    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for n in range(N - 1, 0, -1):
            K = level_size(n)
            zetas = np.arange(K, dtype=np.float64)
            dz, f2, base = _perm_level_inputs(n, contract, market, costs,
                                              risk, config, impact, noise)
            nextT = np.ascontiguousarray(levels[n].T)
            out_v = np.empty((K, M1))
            out_k = np.empty((K, M1), dtype=np.int32)

            def run(lo, hi):
                zb = zetas[lo:hi]
                if gamma > 0.0:
                    stage_slab_perm_cara(nextT, zb, n, dz, f2, base, gamma,
                                         probs, config.buy_only,
                                         out_v[lo:hi], out_k[lo:hi])
                else:
                    stage_slab_perm_neutral(nextT, zb, n, dz, base, probs,
                                            config.buy_only,
                                            out_v[lo:hi], out_k[lo:hi])

            spans = [(lo, min(lo + 64, K)) for lo in range(0, K, 64)]
            if pool is None:
                for lo, hi in spans:
                    run(lo, hi)
            else:
                list(pool.map(lambda s: run(*s), spans))
            out_v += _spread_term(n, np.arange(K), market, contract.nominal)[:, None]
            if n in contract.exercise_set:
                flag = pen[None, :] <= out_v
                np.minimum(out_v, pen[None, :], out=out_v)
                exercise[n - 1] = flag
            levels[n - 1] = out_v
            next_index[n - 1] = out_k
    finally:
        if pool is not None:
            pool.shutdown()

    surface = ValueSurface(levels=levels, q_grid=grid, horizon=N,
                           mode="permanent")
    policy = Policy(next_index=next_index, exercise=exercise,
                    exercise_days=contract.exercise_days)
    return surface, policy


def stage_value_permanent(n: int, zeta_real: float, q_index: int,
                          next_level: np.ndarray, contract: ContractSpec,
                          market: MarketModel, costs: ExecutionCostModel,
                          risk: RiskPreference, config: SolveConfig,
                          impact: PermanentImpactModel, noise: IntradayNoise):
    """Single-state permanent stage value; zeta_real may be off-lattice
    (the kernel interpolates the continuation in the node coordinate)."""
    vals, ks = _perm_stage_row(n, zeta_real, next_level, contract, market,
                               costs, risk, config, impact, noise)
    return float(vals[q_index]), int(ks[q_index])


def _perm_stage_row(n, zeta_real, next_level, contract, market, costs, risk,
                    config, impact, noise):
    q = config.q_grid.values
    probs = market.law.probabilities()
    gamma = risk.gamma
    dz, f2, base = _perm_level_inputs(n, contract, market, costs, risk,
                                      config, impact, noise)
    nextT = np.ascontiguousarray(next_level.T)
    zb = np.array([zeta_real], dtype=np.float64)
    out_v = np.empty((1, q.size))
    out_k = np.empty((1, q.size), dtype=np.int32)
    if gamma > 0.0:
        stage_slab_perm_cara(nextT, zb, n, dz, f2, base, gamma, probs,
                             config.buy_only, out_v, out_k)
    else:
        stage_slab_perm_neutral(nextT, zb, n, dz, base, probs,
                                config.buy_only, out_v, out_k)
    z = zeta_real / n - (n - 1)
    out_v += -market.sig_sqdt * (contract.nominal / (n + 1)) * z
    return out_v[0], out_k[0]


def price_permanent(surface: ValueSurface, contract: ContractSpec,
                    market: MarketModel, costs: ExecutionCostModel,
                    risk: RiskPreference, config: SolveConfig,
                    impact: PermanentImpactModel, noise: IntradayNoise,
                    wall_time: float = float("nan")) -> PriceResult:
    """Indifference price under permanent impact.

    Adds to the base first-trade objective the impact drift on the full
    nominal and, when the intraday noise is active and gamma > 0, the cgf
    of the first day's execution noise.  Risk-neutral mode drops the cgf
    term (the noise is centred).
    """
    Q = contract.nominal
    q = config.q_grid.values
    theta1 = surface.level(1)[0]
    vdt = Q - q
    obj = (costs.day_cost(vdt / market.dt, market.volume_at(1), market.dt)
           - Q * (impact.G(q, Q) - impact.G(Q, Q))
           + theta1)
    if noise.enabled and risk.gamma > 0.0:
        obj = obj + noise.cgf(-risk.gamma * vdt / math.sqrt(3.0),
                              market.sigma, market.dt) / risk.gamma
    idx = int(np.argmin(obj))
    pi = float(obj[idx])
    meta = {
        "mode": "permanent",
        "horizon": contract.horizon,
        "q_steps": config.q_grid.num_steps,
        "buy_only": config.buy_only,
        "impact_kind": impact.kind,
        "intraday_noise": noise.enabled,
        "wall_time": wall_time,
        "workers": config.workers,
    }
    return PriceResult(pi=pi, pi_per_share=pi / Q, v0=float(vdt[idx] / market.dt),
                       q0_index=idx, meta=meta)
