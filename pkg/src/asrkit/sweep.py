"""Comparative statics: price the contract across a parameter ladder and
report the monotonicity pattern."""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field

from .contract import ContractSpec, ExecutionCostModel, MarketModel, RiskPreference
from .solver import SolveConfig, backward_solve, price

__all__ = ["SweepSpec", "SweepResult", "run_sweep", "buyonly_compare"]

SWEEPABLE = ("gamma", "eta", "sigma")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple

    def __post_init__(self):
        if self.parameter not in SWEEPABLE:
            raise ValueError(f"parameter must be one of {SWEEPABLE}")
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("values must be non-empty")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("values must be strictly increasing")
        object.__setattr__(self, "values", vals)


@dataclass
class SweepResult:
    parameter: str
    rows: list = field(default_factory=list)
    verdict: str = "n/a"

    def pis_per_share(self):
        return [r["pi_per_share"] for r in self.rows if r["error"] is None]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["param", "value", "pi", "pi_per_share", "v0", "seconds"])
            for r in self.rows:
                if r["error"] is not None:
                    w.writerow([self.parameter, repr(r["value"]), "error",
                                r["error"], "", repr(r["seconds"])])
                else:
                    w.writerow([self.parameter, repr(r["value"]), repr(r["pi"]),
                                repr(r["pi_per_share"]), repr(r["v0"]),
                                repr(r["seconds"])])


def _with_value(parameter, value, market, costs, risk):
    if parameter == "gamma":
        return market, costs, RiskPreference(gamma=value)
    if parameter == "eta":
        return market, dataclasses.replace(costs, eta=value), risk
    return dataclasses.replace(market, sigma=value), costs, risk


def run_sweep(spec: SweepSpec, contract: ContractSpec, market: MarketModel,
              costs: ExecutionCostModel, risk: RiskPreference,
              config: SolveConfig) -> SweepResult:
    """Price each ladder point on identical grids; a failed point is
    recorded on its row and the sweep continues."""
    result = SweepResult(parameter=spec.parameter)
    for value in spec.values:
        mkt, cst, rsk = _with_value(spec.parameter, value, market, costs, risk)
        t0 = time.perf_counter()
        row = {"value": value, "pi": None, "pi_per_share": None, "v0": None,
               "seconds": 0.0, "error": None}
        try:
            surface, _ = backward_solve(contract, mkt, cst, rsk, config)
            res = price(surface, contract, mkt, cst, config)
            row.update(pi=res.pi, pi_per_share=res.pi_per_share, v0=res.v0)
        except Exception as exc:  # keep sweeping, report per row
            row["error"] = f"{type(exc).__name__}: {exc}"
        row["seconds"] = time.perf_counter() - t0
        result.rows.append(row)
    pis = result.pis_per_share()
    if len(pis) >= 2:
        if all(b > a for a, b in zip(pis, pis[1:])):
            result.verdict = "strictly-increasing"
        elif all(b < a for a, b in zip(pis, pis[1:])):
            result.verdict = "strictly-decreasing"
        else:
            result.verdict = "non-monotone"
    return result


def buyonly_compare(contract: ContractSpec, market: MarketModel,
                    costs: ExecutionCostModel, risk: RiskPreference,
                    config: SolveConfig):
    """Price with and without the buy-only restriction on the same grid.

    The restricted program optimises over a subset of strategies, so its
    price can never be lower; that ordering is asserted.
    """
    surface, _ = backward_solve(contract, market, costs, risk, config)
    base = price(surface, contract, market, costs, config)
    del surface
    bo_config = dataclasses.replace(config, buy_only=True)
    surface_bo, _ = backward_solve(contract, market, costs, risk, bo_config)
    constrained = price(surface_bo, contract, market, costs, bo_config)
    if constrained.pi < base.pi:
        raise AssertionError(
            f"buy-only price {constrained.pi} below unconstrained {base.pi}")
    return base, constrained
