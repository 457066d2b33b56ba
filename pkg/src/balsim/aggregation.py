"""Post-clearing dataset update.

Folds accepted quantities back into unit plans, portfolio aggregates and
reservoir levels, producing a new dataset snapshot (the input dataset is
never mutated, so concurrent sub-simulations can share it).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .model import Dataset, MarketConfig, Order, Unit, time_grid
from .clearing import ClearingResult


class ReferentialError(KeyError):
    pass


@dataclass
class DatasetDelta:
    plan_delta: dict = field(default_factory=dict)      # (unit_id, t) -> MW
    energy_delta: dict = field(default_factory=dict)    # (unit_id, t) -> MWh
    portfolio_plan: dict = field(default_factory=dict)  # (portfolio_id, t) -> MW
    ledger: list = field(default_factory=list)          # (unit_id, t, MW, price) per accepted order


def apply_clearing(ds: Dataset, orders: list[Order], clearing: ClearingResult,
                   cfg: MarketConfig) -> tuple[Dataset, DatasetDelta]:
    """New snapshot with plans and stored energy updated by the clearing.

    Plans gain -sigma * q_acc per accepted order starting at each step;
    reservoirs integrate sigma * q_acc energy over the steps at or before
    each frame step. TSO orders carry no unit and leave the dataset alone.
    """
    grid = time_grid(cfg)
    known = {u.id for u in ds.units}
    by_unit: dict[str, list[Order]] = {}
    for o in orders:
        q = clearing.q_acc.get(o.id, 0.0)
        if q <= 0 or o.is_tso:
            continue
        if o.unit_id is None or o.unit_id not in known:
            raise ReferentialError(f"order {o.id} references unknown unit {o.unit_id!r}")
        by_unit.setdefault(o.unit_id, []).append(o)

    delta = DatasetDelta()
    new_units: list[Unit] = []
    hours = grid.dt / 60.0
    for u in ds.units:
        unit_orders = by_unit.get(u.id, [])
        if not unit_orders:
            new_units.append(u)
            continue
        plan_deltas = []
        signed_power = []
        for t in grid:
            at_t = [o for o in unit_orders if o.t_start == t]
            d = sum(-o.sigma * clearing.q_acc[o.id] for o in at_t)
            plan_deltas.append(d)
            signed_power.append(sum(o.sigma * clearing.q_acc[o.id] for o in at_t))
            if d:
                delta.plan_delta[(u.id, t)] = d
            for o in at_t:
                delta.ledger.append((u.id, t, clearing.q_acc[o.id], o.price))
        new_plan_vals = [u.p_plan.at(t) + d for t, d in zip(grid, plan_deltas)]
        new_plan = u.p_plan.with_updates(list(grid.steps), grid.dt, new_plan_vals)
        changes = {"p_plan": new_plan}
        if u.e_stored is not None:
            cum = 0.0
            new_e = []
            for t, sp in zip(grid, signed_power):
                cum += sp
                e = u.e_stored.at(t) + hours * cum
                delta.energy_delta[(u.id, t)] = hours * cum
                new_e.append(e)
            changes["e_stored"] = u.e_stored.with_updates(list(grid.steps), grid.dt, new_e)
        new_units.append(replace(u, **changes))

    new_ds = ds.with_units(new_units)
    portfolios = sorted({u.portfolio_id for u in new_ds.units if u.portfolio_id})
    for pf in portfolios:
        for t, v in zip(grid, new_ds.portfolio_plan(pf, grid)):
            delta.portfolio_plan[(pf, t)] = v
    return new_ds, delta
