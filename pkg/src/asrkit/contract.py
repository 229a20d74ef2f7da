"""Contract terms, market environment, execution costs and risk preferences.

Everything here is an immutable parameter bundle with its elementary
evaluations attached.  Units follow the usual daily-bars convention:
prices in currency per share, volatility in currency per share per
sqrt(day), volumes in shares per day, risk aversion in 1/currency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

__all__ = [
    "ContractSpec",
    "MarketModel",
    "ExecutionCostModel",
    "TerminalPenalty",
    "RiskPreference",
    "PentanomialLaw",
    "PENTANOMIAL",
]


@dataclass(frozen=True)
class TerminalPenalty:
    """Penalty paid on the inventory still missing at delivery.

    Kinds:
      * ``forced``    -- zero at q == 0, +inf otherwise (delivery only with a
                         completed purchase program).
      * ``quadratic`` -- coefficient * q**2.
      * ``table``     -- tabulated on abs(q), linear between knots.

    The +inf sentinel is an ordinary IEEE infinity: it survives min(),
    addition and the exp/log pipeline without ever producing NaN in the
    solver, which handles it explicitly.
    """

    kind: str = "forced"
    coefficient: float = 0.0
    table_q: tuple = ()
    table_value: tuple = ()

    def __post_init__(self):
        if self.kind not in ("forced", "quadratic", "table"):
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.kind == "quadratic" and self.coefficient < 0:
            raise ValueError("quadratic penalty needs coefficient >= 0")
        if self.kind == "table":
            q = np.asarray(self.table_q, dtype=float)
            v = np.asarray(self.table_value, dtype=float)
            if q.size < 2 or q.size != v.size:
                raise ValueError("tabulated penalty needs matching q/value knots")
            if q[0] != 0.0 or v[0] != 0.0:
                raise ValueError("tabulated penalty must have value 0 at q=0")
            if np.any(np.diff(q) <= 0):
                raise ValueError("tabulated penalty knots must be increasing")
            if np.any(np.diff(v) < 0):
                raise ValueError("tabulated penalty must be nondecreasing")

    def value(self, q: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """Penalty at inventory q; even in q, zero at zero."""
        arr = np.abs(np.asarray(q, dtype=float))
        if self.kind == "forced":
            out = np.where(arr == 0.0, 0.0, np.inf)
        elif self.kind == "quadratic":
            out = self.coefficient * arr * arr
        else:
            out = np.interp(arr, self.table_q, self.table_value)
        if np.isscalar(q) or np.ndim(q) == 0:
            return float(out)
        return out


@dataclass(frozen=True)
class ContractSpec:
    """ASR terms: nominal to deliver, horizon and admissible delivery days."""

    nominal: float
    horizon: int
    exercise_days: tuple
    penalty: TerminalPenalty = field(default_factory=TerminalPenalty)

    def __post_init__(self):
        if self.nominal <= 0:
            raise ValueError("nominal must be positive")
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2 days")
        days = tuple(sorted(int(d) for d in self.exercise_days))
        object.__setattr__(self, "exercise_days", days)
        if not days:
            raise ValueError("exercise_days must be non-empty")
        if len(set(days)) != len(days):
            raise ValueError("exercise_days must be distinct")
        if days[0] < 1 or days[-1] > self.horizon - 1:
            raise ValueError("exercise_days must lie in [1, horizon-1]")

    @property
    def exercise_set(self) -> frozenset:
        return frozenset(self.exercise_days)


@dataclass(frozen=True)
class PentanomialLaw:
    """Five-point innovation law on {-2,-1,0,+1,+2}.

    The probabilities (1/12, 1/6, 1/2, 1/6, 1/12) match the first four
    moments (0, 1, 0, 3) of a standard normal exactly.
    """

    def support(self) -> np.ndarray:
        return np.arange(-2, 3, dtype=float)

    def probabilities(self) -> np.ndarray:
        return np.array([1 / 12, 1 / 6, 1 / 2, 1 / 6, 1 / 12])

    def probabilities_exact(self) -> tuple:
        return (Fraction(1, 12), Fraction(1, 6), Fraction(1, 2),
                Fraction(1, 6), Fraction(1, 12))

    def moment(self, k) -> Fraction:
        """Exact raw moment of order k in {1,2,3,4}, or E[eps^+] for
        k == "positive-part"."""
        probs = self.probabilities_exact()
        if k == "positive-part":
            return sum(p * j for p, j in zip(probs, range(-2, 3)) if j > 0)
        if k not in (1, 2, 3, 4):
            raise ValueError(f"unsupported moment order {k!r}")
        return sum(p * Fraction(j) ** k for p, j in zip(probs, range(-2, 3)))

    def positive_part_mean(self) -> float:
        return float(self.moment("positive-part"))

    def cgf(self, u: float, sigma: float, dt: float) -> float:
        """Cumulant generating function of sigma*sqrt(dt)*eps at u.

        Stabilised by shifting out the largest branch, so it stays finite
        for arguments far beyond exp-overflow scale.
        """
        a = u * sigma * math.sqrt(dt)
        exps = [a * j for j in range(-2, 3)]
        m = max(exps)
        s = sum(p * math.exp(e - m)
                for p, e in zip(self.probabilities(), exps))
        return m + math.log(s)


PENTANOMIAL = PentanomialLaw()


@dataclass(frozen=True)
class MarketModel:
    """Arithmetic daily price dynamics plus the liquidity environment.

    ``volume`` is either a flat shares/day scalar or a per-day sequence
    (day 1 first).  The innovation law drives the lattice; the simulator
    can also draw gaussian innovations.
    """

    initial_price: float
    sigma: float
    dt: float = 1.0
    volume: Union[float, Sequence[float]] = 0.0
    law: PentanomialLaw = field(default_factory=PentanomialLaw)

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if np.ndim(self.volume) == 0:
            if float(self.volume) <= 0:
                raise ValueError("volume must be positive")
        else:
            vols = tuple(float(v) for v in self.volume)
            if not vols or any(v <= 0 for v in vols):
                raise ValueError("every daily volume must be positive")
            object.__setattr__(self, "volume", vols)

    @property
    def sig_sqdt(self) -> float:
        return self.sigma * math.sqrt(self.dt)

    def volume_at(self, day: int) -> float:
        """Market volume rate over trading day ``day`` (1-based)."""
        if np.ndim(self.volume) == 0:
            return float(self.volume)
        if not 1 <= day <= len(self.volume):
            raise ValueError(f"no volume configured for day {day}")
        return self.volume[day - 1]

    def volume_array(self, horizon: int) -> np.ndarray:
        return np.array([self.volume_at(n) for n in range(1, horizon + 1)])


@dataclass(frozen=True)
class ExecutionCostModel:
    """Temporary-impact cost density L(rho) = eta*|rho|^(1+phi) + psi*|rho|.

    rho is the participation rate (trade speed over market volume); the
    cash cost of trading at speed v over one day is L(v/V) * V * dt.
    """

    eta: float = 0.1
    phi: float = 0.75
    psi: float = 0.0

    def __post_init__(self):
        if self.eta < 0 or self.psi < 0:
            raise ValueError("eta and psi must be nonnegative")
        if self.phi <= 0:
            raise ValueError("phi must be positive")

    def cost(self, rho: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        r = np.abs(np.asarray(rho, dtype=float))
        out = self.eta * r ** (1.0 + self.phi) + self.psi * r
        if np.isscalar(rho) or np.ndim(rho) == 0:
            return float(out)
        return out

    def day_cost(self, v, volume: float, dt: float):
        """Cash spent on execution costs for one day of trading at speed v."""
        return self.cost(np.asarray(v, dtype=float) / volume) * volume * dt


@dataclass(frozen=True)
class RiskPreference:
    """CARA risk aversion; gamma == 0 selects the risk-neutral recursion."""

    gamma: float

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")

    @property
    def risk_neutral(self) -> bool:
        return self.gamma == 0.0
