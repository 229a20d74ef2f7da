"""Analytic envelope for the solved cost surface, used as an independent
validator: every finite surface entry must lie between a lower bound built
from a backward coefficient recursion and the cost of the do-nothing
strategy (buy everything now, deliver at the horizon).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .contract import ContractSpec, ExecutionCostModel, MarketModel, RiskPreference
from .solver import SolveConfig, ValueSurface

__all__ = [
    "LowerBoundCoeffs",
    "lower_coeffs",
    "upper_bound",
    "BoundsReport",
    "check_surface",
]


@dataclass(frozen=True)
class LowerBoundCoeffs:
    """theta_n(q, Z) >= -C[n]*max(Z, 0) - D[n]; C, D indexed 1..N."""

    C: np.ndarray
    D: np.ndarray

    def lower(self, n: int, z) -> np.ndarray:
        zp = np.maximum(np.asarray(z, dtype=float), 0.0)
        return -self.C[n] * zp - self.D[n]


def lower_coeffs(contract: ContractSpec, market: MarketModel) -> LowerBoundCoeffs:
    """Backward recursion from zero terminal coefficients.

    The innovation positive-part mean comes from the configured law, not a
    hard-coded pentanomial constant.
    """
    N = contract.horizon
    eps_plus = market.law.positive_part_mean()
    C = np.zeros(N + 1)
    D = np.zeros(N + 1)
    for n in range(N - 1, 0, -1):
        C[n] = n / (n + 1) * C[n + 1] + market.sig_sqdt * contract.nominal / (n + 1)
        D[n] = n / (n + 1) * C[n + 1] * eps_plus + D[n + 1]
    return LowerBoundCoeffs(C=C, D=D)


def _cgf_vector(market: MarketModel, u: np.ndarray) -> np.ndarray:
    """Stabilised cgf of sig*sqrt(dt)*eps at a vector of arguments."""
    a = np.asarray(u, dtype=float) * market.sig_sqdt
    j = np.arange(-2.0, 3.0)
    expo = a[..., None] * j
    m = np.abs(a) * 2.0
    s = np.exp(expo - m[..., None]) @ market.law.probabilities()
    return m + np.log(s)


def upper_bound(n: int, q, z, contract: ContractSpec, market: MarketModel,
                costs: ExecutionCostModel, risk: RiskPreference):
    """Cost of buying q now and waiting until the horizon to deliver.

    Valid for n < horizon.  With gamma == 0 the cgf terms vanish
    (mean-zero innovations) and only the spread and execution-cost parts
    remain.
    """
    N = contract.horizon
    if n >= N:
        raise ValueError("upper bound is defined for levels before the horizon")
    q = np.asarray(q, dtype=float)
    Q = contract.nominal
    gamma = risk.gamma
    lterm = costs.day_cost(q / market.dt, market.volume_at(n + 1), market.dt)
    zterm = -Q * (1 - n / N) * market.sig_sqdt * np.asarray(z, dtype=float)
    if gamma == 0.0:
        return zterm + lterm
    head = _cgf_vector(market, gamma * (q - Q * (1 - n / N))) / gamma
    js = np.arange(n + 1, N)
    tail = float(np.sum(_cgf_vector(market, gamma * Q * (1 - js / N)))) / gamma if js.size else 0.0
    return head + tail + zterm + lterm


@dataclass
class BoundsReport:
    checked: int
    tolerance: float
    violations: list = field(default_factory=list)
    worst_lower_margin: float = np.inf
    worst_upper_margin: float = np.inf

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_csv(self, path) -> None:
        """Violations only; the full sweep can stream via check_surface."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "zeta", "q", "lower", "theta", "upper", "pass"])
            for n, zeta, qv, lo, th, up in self.violations:
                w.writerow([n, zeta, repr(qv), repr(lo),
                            "inf" if np.isinf(th) else repr(th),
                            "inf" if np.isinf(up) else repr(up), 0])


def check_surface(surface: ValueSurface, coeffs: LowerBoundCoeffs,
                  contract: ContractSpec, market: MarketModel,
                  costs: ExecutionCostModel, risk: RiskPreference,
                  config: SolveConfig, tolerance: float = 1e-6,
                  csv_path=None) -> BoundsReport:
    """Sweep every finite surface entry against the analytic envelope.

    The lower bound applies at every level; the upper bound before the
    horizon only.  Optionally streams the full per-entry report to CSV.
    """
    if surface.mode != "base":
        raise ValueError("bounds are derived for the base model surface")
    N = surface.horizon
    q = config.q_grid.values
    report = BoundsReport(checked=0, tolerance=tolerance)
    writer = None
    fh = None
    if csv_path is not None:
        fh = open(csv_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["n", "zeta", "q", "lower", "theta", "upper", "pass"])
    try:
        for n in range(1, N + 1):
            lvl = surface.level(n)
            zetas = np.arange(lvl.shape[0])
            z = zetas / n - (n - 1)
            lower = coeffs.lower(n, z)[:, None]
            if n < N:
                upper = np.broadcast_to(
                    upper_bound(n, q, 0.0, contract, market, costs, risk)[None, :],
                    lvl.shape,
                ) + (-contract.nominal * (1 - n / N) * market.sig_sqdt * z)[:, None]
            else:
                upper = np.full(lvl.shape, np.inf)
            finite = np.isfinite(lvl)
            report.checked += int(finite.sum())
            with np.errstate(invalid="ignore"):
                lo_margin = np.where(finite, lvl - lower, np.inf)
                up_margin = np.where(finite, upper - lvl, np.inf)
            report.worst_lower_margin = min(report.worst_lower_margin,
                                            float(lo_margin.min()))
            report.worst_upper_margin = min(report.worst_upper_margin,
                                            float(up_margin.min()))
            bad = finite & ((lo_margin < -tolerance) | (up_margin < -tolerance))
            if bad.any():
                for zi, qi in zip(*np.nonzero(bad)):
                    report.violations.append(
                        (n, int(zi), float(q[qi]), float(lower[zi, 0]),
                         float(lvl[zi, qi]), float(upper[zi, qi])))
            if writer is not None:
                ok = ~(finite & ((lo_margin < -tolerance) | (up_margin < -tolerance)))
                for zi in range(lvl.shape[0]):
                    for qi in range(q.size):
                        th = lvl[zi, qi]
                        writer.writerow([
                            n, zi, repr(float(q[qi])),
                            repr(float(lower[zi, 0])),
                            "inf" if np.isinf(th) else repr(float(th)),
                            "inf" if np.isinf(upper[zi, qi]) else repr(float(upper[zi, qi])),
                            int(ok[zi, qi]),
                        ])
    finally:
        if fh is not None:
            fh.close()
    return report
