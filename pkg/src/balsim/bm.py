"""Balancing mechanism: control-area needs and the min-cost reserve
activation problem solved over the mechanism's frame.

The activation problem minimizes activation cost plus lost-load and
spillage penalties plus a redispatch penalty on every activated MW (to
rule out economic redispatch), subject to the supply-demand balance,
notice delays, reserve headroom, simplified unit bounds and storage
tracking. Absolute activations are linearized as up/down parts; storage
sell/buy mode binaries are handled by the MILP solver.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .model import (ControlArea, Dataset, GlobalParams, MarketConfig, TimeGrid,
                    Unit, UnitType, LOAD_TYPES, GENERATION_TYPES, VRE_TYPES,
                    SPILL_OPT_PENALTY, UP, DN, time_grid)

TOL = 1e-9


def bm_needs(ca: ControlArea, ds: Dataset, t_ex: int, grid: TimeGrid) -> list[float]:
    """Forecasted area imbalance per step: consumption (absolute) minus
    generation plus the commercial balance. Positive = upward need. Made
    from plans only and, unlike market needs, never capped."""
    zones = set(ca.market_area_ids)
    units = [u for u in ds.units if u.area_id in zones]
    out = []
    for t in grid:
        load = sum(abs(u.p_plan.at(t)) for u in units if u.unit_type in LOAD_TYPES)
        gen = sum(u.p_plan.at(t) for u in units if u.unit_type in GENERATION_TYPES)
        bal = sum(s.at(t) for z, s in ca.commercial_balance.items() if z in zones)
        out.append(load - gen + bal)
    return out


@dataclass
class BmUnit:
    unit: Unit
    price: list[float]          # activation price per step
    frozen: list[bool]          # notice delay per step
    lo: list[float]             # bounds on final power
    hi: list[float]
    is_storage: bool = False
    phs_sign: int | None = None  # +1 turbining only, -1 pumping only, 0 frozen


@dataclass
class BmProblem:
    frame: TimeGrid
    t_ex: int
    bn: list[float]
    units: list[BmUnit]
    params: GlobalParams


@dataclass
class BmResult:
    p_act: dict        # (unit_id, t) -> MW signed
    p_final: dict      # (unit_id, t) -> MW
    e_voll: list[float]
    e_spill: list[float]
    objective: float
    activation_cost: list[float]  # per step, sum p_act * price * dt/60


def _activation_price(u: Unit, t: int) -> float:
    if u.unit_type is UnitType.HYDRAULIC:
        return u.water_value(t)
    return u.c_var


def build_problem(ca: ControlArea, ds: Dataset, bn: list[float], cfg: MarketConfig,
                  params: GlobalParams | None = None) -> BmProblem:
    """Assemble the activation problem for one control area.

    Thermal units that are not running at or above minimum power on every
    frame step are left out (the mechanism starts no units); loads are
    fixed at their plans.
    """
    grid = time_grid(cfg)
    params = params or ds.global_params
    zones = set(ca.market_area_ids)
    bm_units: list[BmUnit] = []
    for u in sorted(ds.units, key=lambda x: x.id):
        if u.area_id not in zones or u.unit_type in LOAD_TYPES:
            continue
        plans = [u.p_plan.at(t) for t in grid]
        if u.unit_type is UnitType.THERMAL and any(
                p < u.p_min.at(t) - TOL or p <= 0 for p, t in zip(plans, grid)):
            continue
        frozen = [t - cfg.t_ex < u.d_notice for t in grid]
        lo, hi = [], []
        for t in grid:
            if u.unit_type in VRE_TYPES:
                fore = u.p_forecast.at(t) if u.p_forecast is not None else u.p_max.at(t)
                lo.append(0.0)
                hi.append(fore)
            else:
                lo.append(u.p_min.at(t))
                hi.append(u.p_max.at(t))
            # automatic reserves stay untouchable in both directions
            hi[-1] -= u.reserve("aFRR", UP, t) + u.reserve("FCR", UP, t)
            lo[-1] += u.reserve("aFRR", DN, t) + u.reserve("FCR", DN, t)
        phs_sign = None
        if u.unit_type is UnitType.PHS_STORAGE and u.d_tran >= grid.dt:
            if min(plans) < 0 and max(plans) > 0:
                phs_sign = 0
            elif min(plans) >= 0:
                phs_sign = 1
            else:
                phs_sign = -1
        bm_units.append(BmUnit(
            unit=u,
            price=[_activation_price(u, t) for t in grid],
            frozen=frozen, lo=lo, hi=hi,
            is_storage=u.is_storage(),
            phs_sign=phs_sign))
    return BmProblem(frame=grid, t_ex=cfg.t_ex, bn=list(bn), units=bm_units, params=params)


def solve(problem: BmProblem) -> BmResult:
    """Exact optimum of the activation problem (always feasible: lost load
    and spillage are unbounded)."""
    grid = problem.frame
    n_t = len(grid)
    params = problem.params
    h = grid.dt / 60.0

    names: list[tuple] = []
    lo: list[float] = []
    hi: list[float] = []
    integ: list[int] = []
    cost: list[float] = []

    def add(name, low, high, c=0.0, integer=False) -> int:
        names.append(name)
        lo.append(low)
        hi.append(high)
        integ.append(1 if integer else 0)
        cost.append(c)
        return len(names) - 1

    rows, row_lb, row_ub = [], [], []

    def add_row(terms, lb, ub):
        rows.append(terms)
        row_lb.append(lb)
        row_ub.append(ub)

    voll_idx = [add(("voll", k), 0, np.inf, params.voll) for k in range(n_t)]
    spill_idx = [add(("spill", k), 0, np.inf, SPILL_OPT_PENALTY) for k in range(n_t)]

    up_idx: dict[tuple, int] = {}
    dn_idx: dict[tuple, int] = {}
    for i, bu in enumerate(problem.units):
        u = bu.unit
        for k, t in enumerate(grid):
            plan = u.p_plan.at(t)
            # activation split keeps |P_act| linear for the redispatch term
            up_cap = 0.0 if bu.frozen[k] else max(0.0, bu.hi[k] - plan)
            dn_cap = 0.0 if bu.frozen[k] else max(0.0, plan - bu.lo[k])
            if bu.phs_sign == 0:
                up_cap = dn_cap = 0.0
            elif bu.phs_sign == 1:
                dn_cap = min(dn_cap, max(0.0, plan - 0.0))
            elif bu.phs_sign == -1:
                up_cap = min(up_cap, max(0.0, 0.0 - plan))
            up_cost = bu.price[k] * h + params.p_redispatch
            dn_cost = -bu.price[k] * h + params.p_redispatch
            up_idx[(i, k)] = add(("up", i, k), 0, up_cap, up_cost)
            dn_idx[(i, k)] = add(("dn", i, k), 0, dn_cap, dn_cost)

    # supply-demand balance per step
    for k in range(n_t):
        terms = [(voll_idx[k], 60.0 / grid.dt), (spill_idx[k], -60.0 / grid.dt)]
        for i in range(len(problem.units)):
            terms.append((up_idx[(i, k)], 1.0))
            terms.append((dn_idx[(i, k)], -1.0))
        add_row(terms, problem.bn[k], problem.bn[k])

    # ramping on final power for thermal and hydraulic units
    for i, bu in enumerate(problem.units):
        u = bu.unit
        if u.unit_type not in (UnitType.THERMAL, UnitType.HYDRAULIC):
            continue
        for k in range(n_t - 1):
            ramp = u.ramp_max.at(grid.steps[k])
            if ramp <= 0:
                continue
            dplan = u.p_plan.at(grid.steps[k + 1]) - u.p_plan.at(grid.steps[k])
            limit = ramp * grid.dt
            terms = [(up_idx[(i, k + 1)], 1.0), (dn_idx[(i, k + 1)], -1.0),
                     (up_idx[(i, k)], -1.0), (dn_idx[(i, k)], 1.0)]
            add_row(terms, -limit - dplan, limit - dplan)

    # storage: mode binary per step plus reservoir tracking around the plan
    for i, bu in enumerate(problem.units):
        if not bu.is_storage:
            continue
        u = bu.unit
        for k, t in enumerate(grid):
            up_cap = hi[up_idx[(i, k)]]
            dn_cap = hi[dn_idx[(i, k)]]
            if up_cap > 0 and dn_cap > 0:
                mode = add(("mode", i, k), 0, 1, integer=True)
                add_row([(up_idx[(i, k)], 1.0), (mode, -up_cap)], -np.inf, 0.0)
                add_row([(dn_idx[(i, k)], 1.0), (mode, dn_cap)], -np.inf, dn_cap)
        if u.e_stored is None or u.e_min is None or u.e_max is None:
            continue
        for k, t in enumerate(grid):
            # planned level plus all activation-induced flows so far
            terms = []
            for k2 in range(k + 1):
                terms.append((dn_idx[(i, k2)], u.charge_eff))
                terms.append((up_idx[(i, k2)], -1.0 / u.discharge_eff))
            planned = u.e_stored.at(t)
            add_row(terms, u.e_min.at(t) - planned, u.e_max.at(t) - planned)

    a = np.zeros((len(rows), len(names)))
    for r, terms in enumerate(rows):
        for j, coef in terms:
            a[r, j] += coef
    res = milp(np.array(cost), constraints=[LinearConstraint(a, row_lb, row_ub)],
               integrality=np.array(integ),
               bounds=Bounds(np.array(lo), np.array(hi)),
               options={"mip_rel_gap": 0.0})
    if res.status != 0 or res.x is None:
        raise RuntimeError(f"activation solve failed: {res.message}")

    p_act, p_final = {}, {}
    act_cost = [0.0] * n_t
    for i, bu in enumerate(problem.units):
        u = bu.unit
        for k, t in enumerate(grid):
            act = float(res.x[up_idx[(i, k)]] - res.x[dn_idx[(i, k)]])
            if abs(act) < 1e-9:
                act = 0.0
            p_act[(u.id, t)] = act
            p_final[(u.id, t)] = u.p_plan.at(t) + act
            act_cost[k] += act * bu.price[k] * h
    e_voll = [float(res.x[voll_idx[k]]) for k in range(n_t)]
    e_spill = [float(res.x[spill_idx[k]]) for k in range(n_t)]
    return BmResult(p_act=p_act, p_final=p_final, e_voll=e_voll, e_spill=e_spill,
                    objective=float(res.fun), activation_cost=act_cost)


def bm_outputs(result: BmResult, problem: BmProblem) -> tuple[list[float], float]:
    """Per-step balancing cost and its total.

    The redispatch term is dropped (it only steers the optimization) and
    the internal spillage coefficient is corrected to the user's actual
    spillage price.
    """
    params = problem.params
    per_step = []
    for k in range(len(problem.frame)):
        per_step.append(result.activation_cost[k]
                        + result.e_voll[k] * params.voll
                        + result.e_spill[k] * params.p_spill)
    total = result.objective
    total -= sum(abs(v) for v in result.p_act.values()) * params.p_redispatch
    total -= sum(result.e_spill) * (SPILL_OPT_PENALTY - params.p_spill)
    return per_step, total


def run_bm(ca: ControlArea, ds: Dataset, cfg: MarketConfig,
           bn: list[float] | None = None) -> tuple[BmProblem, BmResult, list[float], float]:
    """Needs computation + solve + cost outputs for one control area."""
    grid = time_grid(cfg)
    if bn is None:
        bn = bm_needs(ca, ds, cfg.t_ex, grid)
    problem = build_problem(ca, ds, bn, cfg)
    result = solve(problem)
    per_step, total = bm_outputs(result, problem)
    return problem, result, per_step, total
