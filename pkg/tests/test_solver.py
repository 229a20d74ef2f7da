"""Solver correctness against independent oracles and the stage identities."""

import math

import numpy as np
import pytest

from asrkit import (
    backward_solve,
    certainty_equivalent,
    price,
    recover_u,
    stage_value,
    terminal_layer,
    theta_continuous,
    z_of,
    zeta_range,
)
from asrkit.solver import apply_stopping

from conftest import toy_models
from oracle import enumerate_theta, oracle_price, oracle_theta

REL = 1e-9


def _close(a, b, rel=REL):
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= rel * (1.0 + max(abs(a), abs(b)))


def test_literal_enumeration_validates_oracle():
    # the history-tree oracle must agree with brute-force strategy maps
    for gamma in (0.0, 1e-3):
        for penalty in ("forced", "quadratic"):
            contract, market, costs, _, config = toy_models(
                horizon=3, steps=2, penalty=penalty, exercise=(2,))
            grid = tuple(config.q_grid.values)
            for q0 in grid:
                for z0 in (-1.0, 0.0, 1.5):
                    a = enumerate_theta(1, q0, z0, contract, market, costs,
                                        gamma, grid)
                    b = oracle_theta(1, q0, z0, contract, market, costs,
                                     gamma, grid)
                    assert _close(a, b, 1e-11), (gamma, penalty, q0, z0, a, b)


@pytest.mark.parametrize("gamma", [0.0, 1e-6])
@pytest.mark.parametrize("penalty", ["forced", "quadratic"])
@pytest.mark.parametrize("buy_only", [False, True])
def test_dp_matches_oracle_nodewise(gamma, penalty, buy_only):
    contract, market, costs, risk, config = toy_models(
        horizon=4, steps=3, gamma=gamma, penalty=penalty, buy_only=buy_only,
        exercise=(2, 3))
    surface, _ = backward_solve(contract, market, costs, risk, config)
    grid = tuple(config.q_grid.values)
    for n in range(1, contract.horizon + 1):
        lvl = surface.level(n)
        for zeta in range(lvl.shape[0]):
            z = z_of(n, zeta)
            for i, q in enumerate(grid):
                want = oracle_theta(n, q, z, contract, market, costs, gamma,
                                    grid, buy_only=buy_only)
                assert _close(lvl[zeta, i], want), (n, zeta, i, lvl[zeta, i], want)


@pytest.mark.parametrize("gamma", [0.0, 1e-6])
def test_price_matches_oracle(gamma):
    contract, market, costs, risk, config = toy_models(horizon=4, steps=3,
                                                       gamma=gamma)
    surface, _ = backward_solve(contract, market, costs, risk, config)
    res = price(surface, contract, market, costs, config)
    want = oracle_price(contract, market, costs, gamma,
                        tuple(config.q_grid.values))
    assert _close(res.pi, want)
    assert res.pi_per_share == res.pi / contract.nominal


def test_stage_identity_last_step_risk_neutral():
    # no penalty, no execution cost: only the spread term survives
    contract, market, costs, risk, config = toy_models(
        horizon=5, steps=4, gamma=0.0, penalty="zero", eta=0.0)
    N = contract.horizon
    term = terminal_layer(contract, config.q_grid)
    n = N - 1
    for zeta in (0, 3, zeta_range(n)[1]):
        z = z_of(n, zeta)
        for i in range(config.q_grid.num_steps + 1):
            got, _ = stage_value(n, zeta, i, term, contract, market, costs,
                                 risk, config)
            want = -market.sig_sqdt * (contract.nominal / N) * z
            assert _close(got, want, 1e-12)


def test_stage_identity_last_step_cara():
    contract, market, costs, risk, config = toy_models(
        horizon=5, steps=4, gamma=1e-3, penalty="zero", eta=0.0)
    N = contract.horizon
    term = terminal_layer(contract, config.q_grid)
    n = N - 1
    q = config.q_grid.values
    for zeta in (0, 7, zeta_range(n)[1]):
        z = z_of(n, zeta)
        for i in (0, 2, 4):
            got, _ = stage_value(n, zeta, i, term, contract, market, costs,
                                 risk, config)
            g = market.law.cgf(risk.gamma * (q[i] - contract.nominal / N),
                               market.sigma, market.dt)
            want = g / risk.gamma - market.sig_sqdt * (contract.nominal / N) * z
            assert _close(got, want, 1e-12)


def test_stage_value_sentinel_when_infeasible():
    # forced completion one step before the end, positive inventory,
    # buy-only with q below a grid step cannot reach zero... use terminal
    # layer directly: all candidates infinite except index 0; buy-only at
    # i=0 keeps it feasible, so check the all-infinite row shape instead.
    contract, market, costs, risk, config = toy_models(horizon=4, steps=3)
    term = np.full_like(terminal_layer(contract, config.q_grid), np.inf)
    got, _ = stage_value(3, 0, 1, term, contract, market, costs, risk, config)
    assert math.isinf(got)


def test_apply_stopping_rules(toy):
    contract, market, costs, risk, config = toy
    # forced completion: positive inventory never delivers
    v, flag = apply_stopping(2, 0, 1, 5.0, contract, config.q_grid)
    assert (v, flag) == (5.0, False)
    # at zero inventory delivery wins ties and positive continuation
    v, flag = apply_stopping(2, 0, 0, 0.1, contract, config.q_grid)
    assert (v, flag) == (0.0, True)
    v, flag = apply_stopping(2, 0, 0, -0.2, contract, config.q_grid)
    assert (v, flag) == (-0.2, False)
    with pytest.raises(ValueError):
        apply_stopping(1, 0, 0, 0.0, contract, config.q_grid)


def test_exercise_dominance_and_z_monotonicity(toy):
    contract, market, costs, risk, config = toy
    surface, _ = backward_solve(contract, market, costs, risk, config)
    pen = contract.penalty.value(config.q_grid.values)
    for n in contract.exercise_set:
        lvl = surface.level(n)
        assert np.all(lvl <= pen[None, :] + 0.0)
    for n in range(1, contract.horizon + 1):
        lvl = surface.level(n)
        finite = np.isfinite(lvl)
        for i in range(lvl.shape[1]):
            col = lvl[:, i][finite[:, i]]
            assert np.all(np.diff(col) <= 1e-9 * (1 + np.abs(col[:-1])))


def test_argmin_tie_breaks_to_smallest_index():
    # zero costs and zero penalty make every candidate equivalent at the
    # last decision of a risk-neutral solve: the smallest index must win
    contract, market, costs, risk, config = toy_models(
        horizon=3, steps=3, gamma=0.0, penalty="zero", eta=0.0, exercise=(1,))
    surface, policy = backward_solve(contract, market, costs, risk, config)
    n = contract.horizon - 1
    assert np.all(policy.trade_index(n) == 0)


def test_buy_only_never_increases_inventory(toy):
    contract, market, costs, risk, _ = toy
    config = toy_models(buy_only=True)[4]
    _, policy = backward_solve(contract, market, costs, risk, config)
    for n in range(1, contract.horizon):
        idx = policy.trade_index(n)
        cols = np.arange(idx.shape[1])[None, :]
        assert np.all(idx <= cols)


def test_worker_count_is_bitwise_irrelevant():
    base = None
    for workers in (1, 4):
        contract, market, costs, risk, config = toy_models(
            horizon=9, steps=16, gamma=1e-5, workers=workers)
        surface, policy = backward_solve(contract, market, costs, risk, config)
        snap = [lvl.copy() for lvl in surface.levels]
        if base is None:
            base = (snap, [p.copy() for p in policy.next_index if p is not None])
        else:
            for a, b in zip(base[0], snap):
                assert np.array_equal(a, b)


def test_theta_continuous_reads(toy):
    contract, market, costs, risk, config = toy
    surface, _ = backward_solve(contract, market, costs, risk, config)
    q = config.q_grid.values
    n = 2
    lvl = surface.level(n)
    # exact on lattice points
    for zeta in range(lvl.shape[0]):
        z = z_of(n, zeta)
        for i in (0, 1, 3):
            assert theta_continuous(surface, n, q[i], z) == lvl[zeta, i]
    # midpoint of two nodes averages them (finite entries)
    zmid = (z_of(n, 0) + z_of(n, 1)) / 2
    want = 0.5 * (lvl[0, 0] + lvl[1, 0])
    assert _close(theta_continuous(surface, n, q[0], zmid), want, 1e-12)
    # clamped beyond the edge
    assert theta_continuous(surface, n, q[0], z_of(n, 0) - 50.0) == lvl[0, 0]


def test_certainty_equivalent_and_utility():
    ce = certainty_equivalent(0.0, nominal=10.0, avg_price=5.0, cash=50.0,
                              q=0.0, spot=4.0)
    assert ce == 0.0
    assert recover_u(ce, 2.0) == -1.0
    assert recover_u(certainty_equivalent(np.inf, 10.0, 5.0, 0.0, 0.0, 4.0),
                     1.0) == -np.inf
    with pytest.raises(ValueError):
        recover_u(1.0, 0.0)


def test_refine_local_never_hurts():
    contract, market, costs, risk, config = toy_models(horizon=4, steps=3,
                                                       gamma=1e-4)
    surface, _ = backward_solve(contract, market, costs, risk, config)
    rconfig = toy_models(horizon=4, steps=3, gamma=1e-4, refine=True)[4]
    refined, _ = backward_solve(contract, market, costs, risk, rconfig)
    for n in range(1, contract.horizon + 1):
        a, b = surface.level(n), refined.level(n)
        finite = np.isfinite(a)
        assert np.all(b[finite] <= a[finite] + 1e-12)
        assert np.array_equal(np.isinf(a), np.isinf(b))
