"""Path generation, playback, and the pathwise wealth identity."""

import numpy as np
import pytest

from asrkit import (
    IntradayNoise,
    PermanentImpactModel,
    backward_solve,
    backward_solve_permanent,
    batch_playback,
    gen_path,
    lemma_y_check,
    path_from_prices,
    playback,
    playback_permanent,
    run_fixed_strategy,
)
from asrkit.lattice import zeta_range
from asrkit.sim import read_path_csv

from conftest import toy_models


def test_gen_path_reproducible_and_average_recursion():
    _, market, _, _, _ = toy_models()
    a = gen_path(market, 30, source="lattice", seed=11)
    b = gen_path(market, 30, source="lattice", seed=11)
    assert np.array_equal(a.S, b.S)
    c = gen_path(market, 30, source="gaussian", seed=11)
    assert not np.array_equal(a.S, c.S)
    for path in (a, c):
        assert path.A[1] == path.S[1]
        for n in range(1, path.horizon):
            want = (n * path.A[n] + path.S[n + 1]) / (n + 1)
            assert path.A[n + 1] == pytest.approx(want, rel=1e-12)


def test_constant_path_has_zero_spread():
    _, market, _, _, _ = toy_models()
    path = path_from_prices([45.0] * 11, market)
    assert np.all(path.S == 45.0)
    assert np.all(path.Z == 0.0)
    assert np.all(path.eps == 0.0)


def test_lattice_paths_land_on_integer_nodes():
    _, market, _, _, _ = toy_models()
    horizon = 40
    for seed in range(300):
        path = gen_path(market, horizon, source="lattice", seed=seed)
        for n in range(1, horizon + 1):
            zr = n * (path.Z[n] + n - 1)
            assert abs(zr - round(zr)) < 1e-7
            lo, hi = zeta_range(n)
            assert lo <= round(zr) <= hi
            assert path.zeta[n] == round(zr)


def test_playback_on_lattice_paths(toy):
    contract, market, costs, risk, config = toy
    surface, policy = backward_solve(contract, market, costs, risk, config)
    for seed in range(30):
        path = gen_path(market, contract.horizon, source="lattice", seed=seed)
        rec = playback(policy, surface, path, contract, market, costs, risk,
                       config)
        # delivery legality
        assert rec.delivery_day in contract.exercise_set | {contract.horizon}
        # forced completion delivers with empty inventory
        assert rec.q[-1] == 0.0
        # inventory recursion holds exactly
        assert np.allclose(rec.q[1:], rec.q[:-1] - rec.v[:-1] * market.dt,
                           rtol=0, atol=0)
        # budget identity: cash is exactly the telescoped trade costs
        x = 0.0
        for day in range(rec.delivery_day):
            x = (x + rec.v[day] * rec.S[day + 1] * market.dt
                 + costs.day_cost(rec.v[day], market.volume_at(day + 1),
                                  market.dt))
        assert x == rec.X[-1]


def test_playback_off_lattice_matches_on_lattice_decisions(toy):
    # a lattice-generated path replayed without its node bookkeeping must
    # make the same trades: re-minimisation at exact node coordinates
    # reproduces the table lookups
    contract, market, costs, risk, config = toy
    surface, policy = backward_solve(contract, market, costs, risk, config)
    path = gen_path(market, contract.horizon, source="lattice", seed=3)
    on = playback(policy, surface, path, contract, market, costs, risk, config)
    stripped = path_from_prices(path.S, market)
    off = playback(policy, surface, stripped, contract, market, costs, risk,
                   config)
    assert off.delivery_day == on.delivery_day
    assert np.array_equal(on.q, off.q)
    assert np.array_equal(on.X, off.X)


def test_playback_gaussian_paths_respect_exercise_rules(toy):
    contract, market, costs, risk, config = toy
    surface, policy = backward_solve(contract, market, costs, risk, config)
    for seed in range(10):
        path = gen_path(market, contract.horizon, source="gaussian", seed=seed)
        rec = playback(policy, surface, path, contract, market, costs, risk,
                       config)
        assert rec.delivery_day in contract.exercise_set | {contract.horizon}
        assert rec.q[-1] == 0.0


def test_delivery_timing_follows_the_spread_sign():
    # persistently positive spread: hold to the horizon, buy slowly;
    # a deep early negative excursion triggers early delivery
    contract, market, costs, risk, config = toy_models(
        horizon=12, steps=8, gamma=1e-4, exercise=tuple(range(4, 12)))
    surface, policy = backward_solve(contract, market, costs, risk, config)
    up = path_from_prices(45.0 + 0.9 * market.sig_sqdt * np.arange(13), market)
    rec_up = playback(policy, surface, up, contract, market, costs, risk,
                      config)
    assert rec_up.delivery_day == contract.horizon
    assert np.max(rec_up.v[:-1]) <= contract.nominal / 4  # no panic buying
    down = path_from_prices(45.0 - 1.2 * market.sig_sqdt * np.arange(13),
                            market)
    rec_down = playback(policy, surface, down, contract, market, costs, risk,
                        config)
    assert rec_down.delivery_day < contract.horizon


def test_risk_neutral_zero_noise_inventory_never_rises():
    contract, market, costs, risk, config = toy_models(
        horizon=8, steps=8, gamma=0.0, exercise=(4, 5, 6, 7))
    surface, policy = backward_solve(contract, market, costs, risk, config)
    path = path_from_prices([45.0] * 9, market)
    rec = playback(policy, surface, path, contract, market, costs, risk,
                   config)
    assert np.all(np.diff(rec.q) <= 0)
    assert rec.q[-1] == 0.0


def test_straight_line_strategy_completes_exactly():
    contract, market, costs, risk, config = toy_models(horizon=4, steps=4)
    path = gen_path(market, contract.horizon, source="lattice", seed=5)
    v = np.full(contract.horizon, contract.nominal / contract.horizon)
    q, X = run_fixed_strategy(path, v, contract, market, costs, start=0)
    assert q[-1] == 0.0
    assert np.all(np.diff(q) < 0)


def test_lemma_identity_trivial_and_one_step():
    contract, market, costs, _, _ = toy_models(horizon=6, eta=0.0)
    # k = start: both sides empty
    path = gen_path(market, contract.horizon, source="lattice", seed=1)
    assert lemma_y_check(path, np.zeros(5), contract, market, costs,
                         start=1) < 1e-12
    # flat path, no trading, no costs: increment is the pure spread term
    prices = [45.0, 46.0] + [46.0] * (contract.horizon - 1)
    path2 = path_from_prices(prices, market)
    q, X = run_fixed_strategy(path2, [0.0], contract, market, costs, start=1,
                              q0=contract.nominal, x0=0.0)
    Q = contract.nominal
    y1 = -Q * path2.A[1] + 0.0 + Q * path2.S[1]
    y2 = -Q * path2.A[2] + X[1] + Q * path2.S[2]
    want = -market.sig_sqdt * (Q / 2) * path2.Z[1]
    assert (y2 - y1) == pytest.approx(want, rel=1e-12)


def test_lemma_identity_random_sweep():
    contract, market, costs, _, _ = toy_models(horizon=10)
    rng = np.random.default_rng(42)
    worst = 0.0
    for trial in range(50):
        source = "lattice" if trial % 2 else "gaussian"
        path = gen_path(market, contract.horizon, source=source,
                        seed=1000 + trial)
        v = rng.normal(0.0, contract.nominal / 10, size=contract.horizon - 1)
        worst = max(worst, lemma_y_check(path, v, contract, market, costs,
                                         start=1))
    assert worst < 1e-9


def test_batch_playback_deterministic(toy):
    contract, market, costs, risk, config = toy
    surface, policy = backward_solve(contract, market, costs, risk, config)
    recs1, s1 = batch_playback(policy, surface, contract, market, costs, risk,
                               config, n_paths=8, seed=99)
    recs2, s2 = batch_playback(policy, surface, contract, market, costs, risk,
                               config, n_paths=8, seed=99)
    assert s1 == s2
    for a, b in zip(recs1, recs2):
        assert np.array_equal(a.X, b.X)
        assert a.delivery_day == b.delivery_day


def test_record_csv_round_trip(tmp_path, toy):
    contract, market, costs, risk, config = toy
    surface, policy = backward_solve(contract, market, costs, risk, config)
    path = gen_path(market, contract.horizon, source="lattice", seed=2)
    rec = playback(policy, surface, path, contract, market, costs, risk,
                   config)
    out = tmp_path / "rec.csv"
    rec.to_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "day,S,A,Z,q,v,X,delivered"
    assert len(lines) == rec.delivery_day + 2
    assert lines[-1].endswith(",1")
    # path csv round trip
    pcsv = tmp_path / "path.csv"
    path.to_csv(pcsv)
    again = read_path_csv(pcsv, market)
    assert np.array_equal(again.S, path.S)
    assert np.allclose(again.Z, path.Z, rtol=0, atol=1e-12)


def test_playback_permanent_reduces_to_base():
    contract, market, costs, risk, config = toy_models(horizon=5, steps=4)
    impact = PermanentImpactModel(kind="none")
    noise = IntradayNoise(enabled=False)
    surface, policy = backward_solve_permanent(contract, market, costs, risk,
                                               config, impact, noise)
    path = gen_path(market, contract.horizon, source="lattice", seed=8)
    base = playback(policy, surface, path, contract, market, costs, risk,
                    config)
    rec = playback_permanent(policy, surface, path.eps,
                             np.zeros(contract.horizon + 1), contract, market,
                             costs, risk, config, impact, noise)
    assert rec.delivery_day == base.delivery_day
    assert np.allclose(rec.S, base.S, rtol=0, atol=0)
    assert np.allclose(rec.q, base.q, rtol=0, atol=0)
    assert np.allclose(rec.X, base.X, rtol=1e-12)


def test_playback_permanent_with_impact_moves_prices():
    contract, market, costs, risk, config = toy_models(horizon=5, steps=4,
                                                       gamma=0.0)
    impact = PermanentImpactModel(kind="constant", k=0.01)
    noise = IntradayNoise(enabled=False)
    surface, policy = backward_solve_permanent(contract, market, costs, risk,
                                               config, impact, noise)
    eps = np.zeros(contract.horizon + 1)
    rec = playback_permanent(policy, surface, eps, eps, contract, market,
                             costs, risk, config, impact, noise)
    # buying pushes the realised price path up even with zero innovations
    assert rec.S[-1] > rec.S[0]
    bought = contract.nominal - rec.q[-1]
    assert rec.S[-1] - rec.S[0] == pytest.approx(0.01 * bought, rel=1e-12)
    assert rec.delivery_day in contract.exercise_set | {contract.horizon}
