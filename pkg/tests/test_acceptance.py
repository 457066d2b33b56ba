"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; the whole module is also part of the default pytest run.
"""
import itertools
import os
import time

import numpy as np
import pytest

from balsim.aggregation import apply_clearing
from balsim.bm import build_problem, run_bm
from balsim.bsp import (CombinatorialIndex, enumerate_indexes, formulate_bsp_orders,
                        thermal_shutdown_case, thermal_startup_case, AvailableRange)
from balsim.clearing import brute_force_clear, clear
from balsim.model import (ControlArea, GlobalParams, MarketConfig, MarketKind,
                          Order, TimeGrid, TsoParams, UnitType, MFRR_RATIO_TABLE,
                          time_grid, trade_side)
from balsim.pipeline import EXIT_OK, PipelineSpec, run
from balsim.series import TimeSeries
from balsim.tso import (bsp_overall_volume, compute_needs, mfrr_alternative,
                        risk_averse_prices, risk_averse_slices, slice_division,
                        interp_epsilon)
from conftest import make_cfg, make_dataset, make_unit
from oracles import base_plan_feasible, check_thermal_feasibility, logical_activations
from test_clearing import check_balance, check_coupling_semantics, random_book

DEMO = os.path.join(os.path.dirname(__file__), "..", "scenarios", "demo.json")


def ok(n, message):
    print(f"ACCEPTANCE {n}: PASS - {message}")


def test_criterion_1_coupling_semantics_vs_oracle():
    t0 = time.monotonic()
    worst = 0.0
    for seed in range(200):
        orders, coups = random_book(seed)
        res = clear(orders, coups, 60)
        oracle = brute_force_clear(orders, coups, 60)
        gap = abs(res.objective - oracle.objective)
        worst = max(worst, gap)
        assert gap <= 1e-6, (seed, res.objective, oracle.objective)
        check_coupling_semantics(orders, coups, res)
        check_balance(orders, res)
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0
    ok(1, f"200 random books: clear == brute force (max gap {worst:.2e}), "
          f"couplings exact, {elapsed:.1f}s")


def test_criterion_2_combinatorial_enumeration():
    for n in range(1, 7):
        grid = TimeGrid(steps=tuple(range(0, (n + 1) * 60, 60)), dt=60)
        mask = [False] + [True] * n
        assert len(enumerate_indexes(mask, grid, "u")) == n * (n + 1) // 2
    grid4 = TimeGrid(steps=(0, 60, 120, 180), dt=60)
    assert len(enumerate_indexes([False, True, True, True], grid4, "u")) == 6
    ok(2, "single runs of length 1..6 give n(n+1)/2 indexes; 3-step example gives 6")


def _case_grid_unit(before, inner, after, **durations):
    """Plan: `before` up to 660, a level change to expose window checks,
    then `inner` on the 2-step frame [720, 840), then `after`, with an
    optional resume block behind the frame."""
    resume = durations.pop("resume", None)
    prefix = durations.pop("prefix", None)
    pre = [before] * 4 if prefix is None else [prefix, prefix, before, before]
    post = [after] * 4 if resume is None else [after, after, resume, resume]
    plan = TimeSeries(480, 60, tuple(pre + [inner, inner] + post))
    return make_unit(p_plan=plan, p_min=40.0, p_max=100.0, c_var=50.0,
                     c_su=6000.0, **durations)


def test_criterion_3_thermal_case_matrix():
    cfg = make_cfg(steps=2)  # frame [720, 840), t_ex 690
    grid = time_grid(cfg)
    startup_cases = set()
    shutdown_cases = set()
    checked = violations = 0

    levels = [0.0, 20.0, 80.0]
    combos = itertools.product(
        levels, levels, levels,            # before, inner, after
        [0, 60, 120],                      # d_su
        [0, 120],                          # d_min_on
        [0, 60, 180],                      # d_min_off
        [0, 60],                           # d_notice
        [0.0, 1.0],                        # ramp_max
        [None, 70.0],                      # resume block after the frame
    )
    skipped = 0
    for before, inner, after, d_su, d_on, d_off, d_notice, ramp, resume in combos:
        u = _case_grid_unit(before, inner, after, d_su=d_su, d_min_on=d_on,
                            d_min_off=d_off, d_notice=d_notice,
                            ramp_max=ramp, resume=resume)
        if not base_plan_feasible(u, grid):
            skipped += 1
            continue
        idx = CombinatorialIndex(u.id, 720, 840, "up")
        if inner == 20.0:
            startup_cases.add(4)
            shutdown_cases.add(4)
        elif inner == 0.0:
            flags = thermal_startup_case(AvailableRange(up_max=100.0), u, idx,
                                         60, cfg.t_ex)
            startup_cases.add(flags.startup_case)
        else:
            flags = thermal_shutdown_case(u, idx, 60, cfg.t_ex)
            shutdown_cases.add(flags.shutdown_case)

        orders, _ = formulate_bsp_orders(make_dataset([u]), cfg)
        if inner == 20.0:
            assert orders == []
        for label, group in logical_activations(orders, grid):
            for level in ("q_min", "q_max"):
                acts = [(o, getattr(o, level)) for o in group]
                bad = check_thermal_feasibility(u, acts, grid, cfg.t_ex)
                checked += 1
                if bad:
                    violations += 1
                    print("VIOLATION", (before, inner, after, d_su, d_on, d_off,
                                        d_notice, ramp, resume), label, level, bad)
    assert startup_cases >= {1, 2, 3, 4, 5}
    assert shutdown_cases >= {1, 2, 3, 4, 5}
    assert violations == 0
    ok(3, f"all 5+5 thermal cases exercised; {checked} isolated activations, "
          f"0 feasibility violations ({skipped} infeasible base plans skipped)")


def test_criterion_4_needs_capping_and_forecast_toggle():
    import random
    rng = random.Random(123)
    cfg = make_cfg(steps=2)
    grid = time_grid(cfg)
    for trial in range(40):
        units = [make_unit(id="ld", unit_type=UnitType.NONDISPATCHABLE_LOAD,
                           p_plan=-rng.uniform(0, 800),
                           p_forecast=-rng.uniform(0, 800))]
        for i in range(rng.randint(1, 3)):
            units.append(make_unit(id=f"g{i}", p_plan=rng.uniform(40, 100),
                                   p_min=20.0, p_max=120.0,
                                   c_var=rng.uniform(10, 90)))
        if rng.random() < 0.5:
            units.append(make_unit(id="w", unit_type=UnitType.WIND,
                                   p_plan=rng.uniform(0, 60),
                                   p_forecast=rng.uniform(0, 80)))
        ds = make_dataset(units)
        ca = ds.control_areas[0]
        orders, coups = formulate_bsp_orders(ds, cfg)
        needs = compute_needs(ca, ds, cfg, grid, orders, coups)
        for t, bn in zip(grid, needs):
            if bn == 0:
                continue
            cap = bsp_overall_volume(orders, coups, ca, t, need_up=bn > 0)
            assert abs(bn) <= cap + 1e-9

        # with an unbounded pool, toggling delta_for shifts the needs by
        # exactly the forecast-minus-plan differences
        big_pool = [Order(id=f"pool{t}{s}", unit_id="u", area_id="Z1", price=10.0,
                          q_min=0.0, q_max=1e7, t_start=t, t_end=t + 60,
                          t_ex=cfg.t_ex, sigma=s)
                    for t in grid for s in (-1, 1)]
        ca_plan = ControlArea(id="CA1", market_area_ids=("Z1",),
                              tso_params=TsoParams(delta_for=False))
        ca_for = ControlArea(id="CA1", market_area_ids=("Z1",),
                             tso_params=TsoParams(delta_for=True))
        bn_plan = compute_needs(ca_plan, ds, cfg, grid, big_pool, [])
        bn_for = compute_needs(ca_for, ds, cfg, grid, big_pool, [])
        for t, a, b in zip(grid, bn_plan, bn_for):
            load_delta = sum(abs(u.p_forecast.at(t)) - abs(u.p_plan.at(t))
                             for u in units if u.unit_type == UnitType.NONDISPATCHABLE_LOAD)
            vre_delta = sum(u.p_forecast.at(t) - u.p_plan.at(t)
                            for u in units if u.unit_type == UnitType.WIND)
            assert b - a == pytest.approx(load_delta - vre_delta, abs=1e-9)
    ok(4, "40 random scenarios: |bn| respects the compensating pool; "
          "forecast toggle shifts needs by exactly the forecast-plan deltas")


def test_criterion_5_slice_division():
    assert slice_division([250.0, 150.0], 100.0) == [[100.0, 50.0, 100.0],
                                                     [100.0, 50.0]]
    import random
    rng = random.Random(5)
    for trial in range(100):
        needs = [rng.choice([-1, 1]) * round(rng.uniform(0, 500), 3)
                 for _ in range(rng.randint(1, 4))]
        v = rng.choice([30.0, 100.0, 400.0])
        out = slice_division(needs, v)
        for bn, slices in zip(needs, out):
            assert sum(slices) == pytest.approx(bn, abs=1e-9)
            assert all(abs(s) <= v + 1e-9 for s in slices)
    ok(5, "reference trace [100,50,100]; 100 random need vectors reconstruct exactly")


def test_criterion_6_mfrr_ratio_table():
    band_reps = [150.0, 450.0, 750.0, 1050.0, 1350.0, 2000.0]
    checks = 0
    for lam in (50.0, 100.0):
        alt = mfrr_alternative(lam, MFRR_RATIO_TABLE)
        for (lo, hi, r_dn, r_up), q in zip(MFRR_RATIO_TABLE, band_reps):
            # exact equality, composed as the formula states: |q| * (lam * ratio)
            assert alt.cost(q) == q * (lam * r_up)
            assert alt.cost(-q) == q * (lam * r_dn)
            checks += 2
    assert checks == 24
    ok(6, "24 exact table checks (6 bands x 2 directions x 2 day-ahead prices)")


QUANTILES = tuple([(0.01, -100.0)]
                  + [(round(0.1 * i, 1), -80.0 + 20.0 * (i - 1)) for i in range(1, 10)]
                  + [(0.99, 100.0)])


def test_criterion_7_risk_averse_slices_and_prices():
    slices = risk_averse_slices(500.0, QUANTILES)
    assert sum(s.q for s in slices) == pytest.approx(500.0 + 80.0, abs=1e-12)

    for bn in (30.0, -25.0, 70.0):
        sigmas = [s.sigma for s in risk_averse_slices(bn, QUANTILES)]
        flips = sum(1 for a, b in zip(sigmas, sigmas[1:]) if a != b)
        assert flips == 1

    lam = 2.5
    from balsim.tso import AlternativeCost
    alt = AlternativeCost(kind="lin", evaluate=lambda q: lam * abs(q))
    a_min, a_max = QUANTILES[0][0], QUANTILES[-1][0]
    for bn in (500.0, -500.0, 30.0):
        slices = risk_averse_slices(bn, QUANTILES)
        prices = risk_averse_prices(slices, QUANTILES, alt, 10_000.0)
        ups = [s for s in slices if s.sigma == -1]
        dns = [s for s in slices if s.sigma == 1]
        for s, price in zip(slices, prices):
            if s.sigma == -1:
                cum = sum(x.q for x in ups[:ups.index(s) + 1])
            else:
                cum = sum(x.q for x in dns[dns.index(s):])
            k_d = s.alpha - 0.5 * (s.alpha - a_min)
            k_u = s.alpha + 0.5 * (a_max - s.alpha)
            expected = (lam * cum
                        + s.alpha * lam * abs(interp_epsilon(QUANTILES, k_d) - s.epsilon)
                        + (1 - s.alpha) * lam * abs(interp_epsilon(QUANTILES, k_u) - s.epsilon)
                        ) / cum
            assert price == pytest.approx(expected, abs=1e-9)
    ok(7, "pos case sums to bn+eps_9; directions flip once; prices match the "
          "literal formula within 1e-9")


def test_criterion_8_aggregation_conservation():
    import random
    rng = random.Random(42)
    cfg = make_cfg(steps=2)
    grid = time_grid(cfg)
    for trial in range(25):
        units = [make_unit(id=f"g{i}", p_plan=rng.uniform(45, 90), p_min=40.0,
                           c_var=rng.uniform(10, 80))
                 for i in range(rng.randint(1, 3))]
        units.append(make_unit(id="st", unit_type=UnitType.STORAGE,
                               p_plan=rng.uniform(-20, 20), p_min=-50.0,
                               e_stored=rng.uniform(100, 200), e_min=0.0,
                               e_max=400.0, c_var=rng.uniform(10, 80)))
        ds = make_dataset(units)
        orders, coups = formulate_bsp_orders(ds, cfg)
        tso = [Order(id=f"need{t}", unit_id=None, area_id="CA1", price=10_000.0,
                     q_min=0.0, q_max=rng.uniform(5, 60), t_start=t, t_end=t + 60,
                     t_ex=cfg.t_ex, sigma=-1, is_tso=True) for t in grid]
        book = orders + tso
        res = clear(book, coups, 60, {"Z1": "CA1", "CA1": "CA1"})
        new_ds, _ = apply_clearing(ds, book, res, cfg)
        for t in grid:
            plan_delta = sum(new_ds.unit(u.id).p_plan.at(t) - u.p_plan.at(t)
                             for u in units)
            accepted = sum(-o.sigma * res.q_acc[o.id] for o in orders
                           if o.t_start == t)
            assert plan_delta == pytest.approx(accepted, abs=1e-9)
        st_old = ds.unit("st").e_stored
        st_new = new_ds.unit("st").e_stored
        deltas = [st_new.at(t) - st_old.at(t) for t in grid]
        signed = [sum(o.sigma * res.q_acc[o.id] for o in orders
                      if o.unit_id == "st" and o.t_start == t) for t in grid]
        cum = 0.0
        for d, s in zip(deltas, signed):
            cum += s
            assert d == pytest.approx(cum, abs=1e-9)
    ok(8, "25 random clearings: plan deltas equal accepted volumes and "
          "reservoirs telescope within 1e-9")


def _grid_min_objective(problem, resolution=0.1):
    """Vectorized dense grid search over per-step activations (no ramp)."""
    gp = problem.params
    h = problem.frame.dt / 60.0
    total = 0.0
    for k, t in enumerate(problem.frame):
        axes = []
        for bu in problem.units:
            plan = bu.unit.p_plan.at(t)
            lo = 0.0 if bu.frozen[k] else min(0.0, bu.lo[k] - plan)
            hi = 0.0 if bu.frozen[k] else max(0.0, bu.hi[k] - plan)
            axes.append(np.arange(lo, hi + resolution / 2, resolution))
        if not axes:
            resid = problem.bn[k]
            total += max(resid, 0.0) * h * gp.voll + max(-resid, 0.0) * h * 26_000.0
            continue
        grids = np.meshgrid(*axes, indexing="ij")
        act = sum(grids)
        resid = problem.bn[k] - act
        cost = sum(g * bu.price[k] * h for g, bu in zip(grids, problem.units))
        cost = cost + np.clip(resid, 0, None) * h * gp.voll
        cost = cost + np.clip(-resid, 0, None) * h * 26_000.0
        cost = cost + sum(np.abs(g) for g in grids) * gp.p_redispatch
        total += float(cost.min())
    return total


def test_criterion_9_bm_optimality():
    import random
    rng = random.Random(99)
    gp = GlobalParams(p_redispatch=6000.0, p_spill=1000.0)
    for case in range(50):
        n_units = rng.randint(1, 3)
        units = [make_unit(id=f"u{i}", p_plan=rng.choice([3.0, 4.0]),
                           p_min=rng.choice([0.0, 2.0]),
                           p_max=rng.choice([5.0, 6.5]),
                           c_var=rng.choice([10.0, 40.0, 80.0]),
                           d_notice=rng.choice([0, 0, 45]))
                 for i in range(n_units)]
        ds = make_dataset(units, gp=gp)
        steps = rng.choice([1, 2])
        cfg = MarketConfig(MarketKind.BM, 0, 30, 30 + steps * 60, 60)
        bn = [rng.choice([-2.0, -0.5, 0.0, 1.5, 3.0]) for _ in range(steps)]
        problem, result, per_step, total = run_bm(ds.control_areas[0], ds, cfg, bn=bn)
        grid_obj = _grid_min_objective(problem)
        slack = 0.1 * len(problem.units) * 2 * (80.0 + gp.p_redispatch + 26_000.0)
        assert result.objective <= grid_obj + 1e-6
        assert abs(result.objective - grid_obj) <= slack
        for k, t in enumerate(problem.frame):
            for bu in problem.units:
                if bu.frozen[k]:
                    assert result.p_act[(bu.unit.id, t)] == 0.0
        # cost outputs remove exactly the redispatch and spill-correction terms
        redisp = sum(abs(v) for v in result.p_act.values()) * gp.p_redispatch
        spill_fix = sum(result.e_spill) * (26_000.0 - gp.p_spill)
        assert total == pytest.approx(result.objective - redisp - spill_fix, abs=1e-6)
        if all(v == 0 for v in bn):
            assert all(v == 0.0 for v in result.p_act.values())
    # dedicated zero-needs instance: the redispatch penalty forbids activity
    ds = make_dataset([make_unit(id="a", p_plan=4.0, c_var=10.0),
                       make_unit(id="b", p_plan=4.0, c_var=80.0)], gp=gp)
    cfg = MarketConfig(MarketKind.BM, 0, 0, 60, 60)
    _, result, _, total = run_bm(ds.control_areas[0], ds, cfg, bn=[0.0])
    assert all(v == 0.0 for v in result.p_act.values()) and total == 0.0
    ok(9, "50 small instances match the 0.1 MW grid search; zero needs stay idle; "
          "cost correction exact")


def test_criterion_10_end_to_end_determinism(tmp_path):
    t0 = time.monotonic()
    outs = []
    for name in ("r1", "r2"):
        out = str(tmp_path / name)
        spec = PipelineSpec.named("markets+bm", seed=2024, output_dir=out)
        assert run(spec, DEMO) == EXIT_OK
        outs.append(out)
    names = sorted(os.listdir(outs[0]))
    assert names == sorted(os.listdir(outs[1]))
    for name in names:
        with open(os.path.join(outs[0], name), "rb") as fh:
            a = fh.read()
        with open(os.path.join(outs[1], name), "rb") as fh:
            b = fh.read()
        assert a == b, f"{name} differs between identical runs"
    elapsed = time.monotonic() - t0
    assert elapsed < 30.0
    ok(10, f"two markets+bm runs of the demo are byte-identical ({elapsed:.1f}s)")
