import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from asrkit import (
    ContractSpec,
    ExecutionCostModel,
    MarketModel,
    QGrid,
    RiskPreference,
    SolveConfig,
    TerminalPenalty,
)


def toy_models(horizon=4, steps=3, gamma=1e-6, penalty="forced",
               exercise=None, buy_only=False, nominal=64.0, sigma=1.0,
               volume=20.0, eta=0.1, phi=0.75, psi=0.0, refine=False,
               workers=1):
    """Small dyadic instance; nominal and grid chosen so q values are exact."""
    if exercise is None:
        exercise = tuple(range(max(1, horizon - 2), horizon))
    if penalty == "forced":
        pen = TerminalPenalty(kind="forced")
    elif penalty == "quadratic":
        pen = TerminalPenalty(kind="quadratic", coefficient=0.05)
    elif penalty == "zero":
        pen = TerminalPenalty(kind="quadratic", coefficient=0.0)
    else:
        pen = penalty
    contract = ContractSpec(nominal=nominal, horizon=horizon,
                            exercise_days=exercise, penalty=pen)
    market = MarketModel(initial_price=45.0, sigma=sigma, dt=1.0, volume=volume)
    costs = ExecutionCostModel(eta=eta, phi=phi, psi=psi)
    risk = RiskPreference(gamma=gamma)
    config = SolveConfig(q_grid=QGrid(nominal=nominal, num_steps=steps),
                         buy_only=buy_only, refine_local=refine,
                         workers=workers)
    return contract, market, costs, risk, config


@pytest.fixture
def toy():
    return toy_models()
