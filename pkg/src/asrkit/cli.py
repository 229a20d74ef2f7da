"""Command-line frontend.

Subcommands: price, solve, simulate, sweep, check.  All inputs come from
one TOML config file; every output is a deterministic function of
(config, seed).  Exit codes: 0 ok, 2 config error, 3 solver failure,
4 validation failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from .bounds import check_surface, lower_coeffs
from .contract import (
    ContractSpec,
    ExecutionCostModel,
    MarketModel,
    RiskPreference,
    TerminalPenalty,
)
from .impact import (
    IntradayNoise,
    PermanentImpactModel,
    backward_solve_permanent,
    price_permanent,
)
from .lattice import QGrid
from .sim import gen_path, playback, playback_permanent, read_path_csv
from .solver import SolveConfig, backward_solve, price, surface_to_csv
from .sweep import SweepSpec, run_sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VALIDATION = 4


class ConfigError(Exception):
    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


@dataclass
class RunConfig:
    contract: ContractSpec
    market: MarketModel
    costs: ExecutionCostModel
    risk: RiskPreference
    impact: PermanentImpactModel
    noise: IntradayNoise
    solve: SolveConfig
    sim_paths: int = 3
    sim_source: str = "lattice"
    sweep_parameter: str = "gamma"
    sweep_values: tuple = ()


def _build_penalty(section, errors):
    kind = section.get("kind", "forced")
    try:
        if kind == "forced":
            return TerminalPenalty(kind="forced")
        if kind == "quadratic":
            return TerminalPenalty(kind="quadratic",
                                   coefficient=float(section.get("coefficient", 0.0)))
        if kind == "table":
            return TerminalPenalty(kind="table",
                                   table_q=tuple(section.get("q", ())),
                                   table_value=tuple(section.get("value", ())))
        errors.append(f"contract.penalty.kind: unknown kind {kind!r}")
    except (ValueError, TypeError) as exc:
        errors.append(f"contract.penalty: {exc}")
    return None


def load_config(path) -> RunConfig:
    """Parse and cross-validate a TOML run configuration.

    Raises ConfigError with one message per offending field.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config: file not found: {path}"])
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"config: invalid TOML: {exc}"])

    errors = []

    def section(name):
        s = raw.get(name)
        if s is None:
            errors.append(f"{name}: missing section")
            return {}
        return s

    c = section("contract")
    m = section("market")
    costs_sec = raw.get("costs", {})
    risk_sec = raw.get("risk", {})
    solve_sec = raw.get("solve", {})
    impact_sec = raw.get("impact", {})
    sim_sec = raw.get("sim", {})
    sweep_sec = raw.get("sweep", {})

    horizon = int(c.get("horizon", 0))
    if "exercise_days" in c:
        exercise = tuple(int(d) for d in c["exercise_days"])
    else:
        first = c.get("exercise_start")
        last = c.get("exercise_end", horizon - 1)
        if first is None:
            errors.append("contract.exercise_start or contract.exercise_days: required")
            exercise = (1,)
        else:
            exercise = tuple(range(int(first), int(last) + 1))
    penalty = _build_penalty(c.get("penalty", {}), errors) or TerminalPenalty()

    contract = market = costs = risk = impact = noise = solve = None
    try:
        contract = ContractSpec(nominal=float(c.get("nominal", 0.0)),
                                horizon=horizon, exercise_days=exercise,
                                penalty=penalty)
    except (ValueError, TypeError) as exc:
        errors.append(f"contract: {exc}")
    try:
        market = MarketModel(initial_price=float(m.get("initial_price", 0.0)),
                             sigma=float(m.get("sigma", 0.0)),
                             dt=float(m.get("dt", 1.0)),
                             volume=m.get("volume", 0.0))
    except (ValueError, TypeError) as exc:
        errors.append(f"market: {exc}")
    try:
        costs = ExecutionCostModel(eta=float(costs_sec.get("eta", 0.1)),
                                   phi=float(costs_sec.get("phi", 0.75)),
                                   psi=float(costs_sec.get("psi", 0.0)))
    except (ValueError, TypeError) as exc:
        errors.append(f"costs: {exc}")
    try:
        risk = RiskPreference(gamma=float(risk_sec.get("gamma", 0.0)))
    except (ValueError, TypeError) as exc:
        errors.append(f"risk.gamma: {exc}")
    try:
        impact = PermanentImpactModel(
            kind=impact_sec.get("kind", "none"),
            k=float(impact_sec.get("k", 0.0)),
            beta=float(impact_sec.get("beta", 0.5)),
            table_x=tuple(impact_sec.get("x", ())),
            table_f=tuple(impact_sec.get("f", ())),
        )
    except (ValueError, TypeError) as exc:
        errors.append(f"impact: {exc}")
    noise = IntradayNoise(enabled=bool(impact_sec.get("intraday_noise", False)))
    try:
        if contract is None:
            raise ValueError("contract section invalid")
        grid = QGrid(nominal=contract.nominal,
                     num_steps=int(solve_sec.get("q_steps", 200)))
        solve = SolveConfig(q_grid=grid,
                            buy_only=bool(solve_sec.get("buy_only", False)),
                            refine_local=bool(solve_sec.get("refine_local", False)),
                            workers=int(solve_sec.get("workers", 1)))
    except (ValueError, TypeError) as exc:
        errors.append(f"solve: {exc}")

    if market is not None and contract is not None and np.ndim(market.volume) > 0:
        if len(market.volume) < contract.horizon:
            errors.append("market.volume: per-day list shorter than contract.horizon")

    sweep_values = tuple(float(v) for v in sweep_sec.get("values", ()))
    sweep_parameter = sweep_sec.get("parameter", "gamma")

    if errors:
        raise ConfigError(errors)
    return RunConfig(contract=contract, market=market, costs=costs, risk=risk,
                     impact=impact, noise=noise, solve=solve,
                     sim_paths=int(sim_sec.get("paths", 3)),
                     sim_source=sim_sec.get("source", "lattice"),
                     sweep_parameter=sweep_parameter,
                     sweep_values=sweep_values)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.buy_only:
        cfg = dataclasses.replace(cfg, solve=dataclasses.replace(cfg.solve,
                                                                 buy_only=True))
    if args.mode == "base":
        cfg = dataclasses.replace(cfg, impact=PermanentImpactModel(kind="none"),
                                  noise=IntradayNoise(enabled=False))
    return cfg


def _solve(cfg: RunConfig, mode: str):
    t0 = time.perf_counter()
    if mode == "permanent":
        surface, policy = backward_solve_permanent(
            cfg.contract, cfg.market, cfg.costs, cfg.risk, cfg.solve,
            cfg.impact, cfg.noise)
    else:
        surface, policy = backward_solve(cfg.contract, cfg.market, cfg.costs,
                                         cfg.risk, cfg.solve)
    return surface, policy, time.perf_counter() - t0


def _price(cfg: RunConfig, surface, mode: str, wall: float):
    if mode == "permanent":
        return price_permanent(surface, cfg.contract, cfg.market, cfg.costs,
                               cfg.risk, cfg.solve, cfg.impact, cfg.noise,
                               wall_time=wall)
    return price(surface, cfg.contract, cfg.market, cfg.costs, cfg.solve,
                 wall_time=wall)


def cmd_price(cfg: RunConfig, args, out: Path) -> int:
    surface, _, wall = _solve(cfg, args.mode)
    res = _price(cfg, surface, args.mode, wall)
    print(f"mode            {res.meta['mode']}")
    print(f"pi              {res.pi:.6g}")
    print(f"pi_per_share    {res.pi_per_share:.6g}")
    print(f"v0              {res.v0:.6g}")
    print(f"grid            horizon={cfg.contract.horizon} "
          f"q_steps={cfg.solve.q_grid.num_steps} buy_only={cfg.solve.buy_only}")
    print(f"wall_time_s     {wall:.2f}")
    with open(out / "price_summary.csv", "w") as fh:
        fh.write("mode,pi,pi_per_share,v0,horizon,q_steps,buy_only,wall_time_s\n")
        fh.write(f"{res.meta['mode']},{res.pi!r},{res.pi_per_share!r},{res.v0!r},"
                 f"{cfg.contract.horizon},{cfg.solve.q_grid.num_steps},"
                 f"{int(cfg.solve.buy_only)},{wall!r}\n")
    return EXIT_OK


def cmd_solve(cfg: RunConfig, args, out: Path) -> int:
    surface, policy, wall = _solve(cfg, args.mode)
    res = _price(cfg, surface, args.mode, wall)
    surface_to_csv(surface, policy, out / "surface.csv", market=cfg.market)
    print(f"surface written to {out / 'surface.csv'}")
    print(f"pi_per_share    {res.pi_per_share:.6g}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args, out: Path) -> int:
    if args.path_csv is not None and args.mode == "permanent":
        # an observed path already carries whatever impact occurred;
        # replaying it under endogenous impact would double-count
        print("config error: path-csv: external paths are base-mode only "
              "(permanent-impact prices are strategy-dependent)",
              file=sys.stderr)
        return EXIT_CONFIG
    surface, policy, _ = _solve(cfg, args.mode)
    n_paths = args.paths if args.paths is not None else cfg.sim_paths
    if args.path_csv is not None:
        paths = [read_path_csv(args.path_csv, cfg.market)]
    else:
        seeds = np.random.SeedSequence(args.seed).spawn(n_paths)
        if args.mode == "permanent":
            paths = None
        else:
            paths = [gen_path(cfg.market, cfg.contract.horizon,
                              source=cfg.sim_source,
                              rng=np.random.default_rng(s)) for s in seeds]
    if args.mode == "permanent":
        seeds = np.random.SeedSequence(args.seed).spawn(n_paths)
        for i, s in enumerate(seeds):
            rng = np.random.default_rng(s)
            N = cfg.contract.horizon
            if cfg.sim_source == "lattice":
                eps = rng.choice(cfg.market.law.support(), size=N + 1,
                                 p=cfg.market.law.probabilities())
            else:
                eps = rng.standard_normal(N + 1)
            eps[0] = 0.0
            eps_prime = cfg.noise.draw(eps, rng)
            rec = playback_permanent(policy, surface, eps, eps_prime,
                                     cfg.contract, cfg.market, cfg.costs,
                                     cfg.risk, cfg.solve, cfg.impact, cfg.noise)
            rec.to_csv(out / f"path_{i:03d}.csv")
            print(f"path {i}: delivery day {rec.delivery_day}, "
                  f"objective {rec.objective:.6g}")
    else:
        for i, path in enumerate(paths):
            rec = playback(policy, surface, path, cfg.contract, cfg.market,
                           cfg.costs, cfg.risk, cfg.solve)
            rec.to_csv(out / f"path_{i:03d}.csv")
            print(f"path {i}: delivery day {rec.delivery_day}, "
                  f"objective {rec.objective:.6g}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args, out: Path) -> int:
    values = cfg.sweep_values
    if not values:
        print("sweep.values: required for the sweep command", file=sys.stderr)
        return EXIT_CONFIG
    try:
        spec = SweepSpec(parameter=cfg.sweep_parameter, values=values)
    except ValueError as exc:
        print(f"sweep: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = run_sweep(spec, cfg.contract, cfg.market, cfg.costs, cfg.risk,
                       cfg.solve)
    result.to_csv(out / "sweep.csv")
    print(f"{'value':>14}  {'pi_per_share':>14}  {'seconds':>8}")
    for row in result.rows:
        if row["error"] is None:
            print(f"{row['value']:>14.6g}  {row['pi_per_share']:>14.6g}  "
                  f"{row['seconds']:>8.2f}")
        else:
            print(f"{row['value']:>14.6g}  {'error':>14}  {row['error']}")
    print(f"pattern: {result.verdict}")
    if any(r["error"] is not None for r in result.rows):
        return EXIT_SOLVER
    return EXIT_OK


def cmd_check(cfg: RunConfig, args, out: Path) -> int:
    surface, _, _ = _solve(cfg, "base")
    coeffs = lower_coeffs(cfg.contract, cfg.market)
    report = check_surface(surface, coeffs, cfg.contract, cfg.market,
                           cfg.costs, cfg.risk, cfg.solve)
    report.to_csv(out / "bounds_report.csv")
    print(f"checked {report.checked} finite entries, "
          f"{len(report.violations)} violations")
    print(f"worst lower margin {report.worst_lower_margin:.6g}, "
          f"worst upper margin {report.worst_upper_margin:.6g}")
    if not report.passed:
        return EXIT_VALIDATION
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="asrkit",
        description="Indifference pricing and optimal execution for "
                    "accelerated share repurchase contracts.")
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--seed", type=int, default=0, help="simulation seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--mode", choices=("base", "permanent"), default="base")
    parser.add_argument("--buy-only", action="store_true",
                        help="restrict strategies to buying")
    parser.add_argument("--paths", type=int, default=None,
                        help="number of simulated paths")
    parser.add_argument("--path-csv", default=None,
                        help="external price path (day,price)")
    parser.add_argument("--workers", type=int, default=None,
                        help="solver worker threads (overrides config)")
    parser.add_argument("command",
                        choices=("price", "solve", "simulate", "sweep", "check"))
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for msg in exc.messages:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = _apply_overrides(cfg, args)
    if args.workers is not None:
        try:
            cfg = dataclasses.replace(
                cfg, solve=dataclasses.replace(cfg.solve, workers=args.workers))
        except ValueError as exc:
            print(f"config error: workers: {exc}", file=sys.stderr)
            return EXIT_CONFIG

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = {"price": cmd_price, "solve": cmd_solve, "simulate": cmd_simulate,
               "sweep": cmd_sweep, "check": cmd_check}[args.command]
    try:
        return handler(cfg, args, out)
    except (MemoryError, FloatingPointError, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
