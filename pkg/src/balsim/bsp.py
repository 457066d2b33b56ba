"""BSP order formulation.

For every unit of the dataset this module computes the power available
for upward and downward activation under operating constraints, turns it
into market orders, prices them, and emits the coupling links the
clearing stage needs to respect.

Thermal units are processed per combinatorial index (a contiguous run of
market steps carrying one logical multi-step order); hydraulic, storage,
wind, PV and flexible-load units are processed step by step.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .model import (Coupling, CouplingKind, Dataset, MarketConfig, MarketKind,
                    Order, OrderKind, TimeGrid, Unit, UnitType, GlobalParams,
                    HYDRO_FRAGMENTS, RESERVE_TYPES, UP, DN, time_grid)

TOL = 1e-9
MINUTES_PER_DAY = 1440


class InvalidUnitType(TypeError):
    pass


@dataclass(frozen=True)
class CombinatorialIndex:
    unit_id: str
    t_start: int
    t_end: int  # exclusive: last covered step is t_end - dt
    kind: str   # "up" | "down" | "shutdown"

    def steps(self, dt: int) -> list[int]:
        return list(range(self.t_start, self.t_end, dt))

    def length_min(self) -> int:
        return self.t_end - self.t_start


@dataclass
class AvailableRange:
    up_min: float = 0.0
    up_max: float = 0.0
    dn_min: float = 0.0
    dn_max: float = 0.0

    def clamp(self) -> "AvailableRange":
        self.up_max = max(0.0, self.up_max)
        self.dn_max = max(0.0, self.dn_max)
        if self.up_max < self.up_min - TOL:
            self.up_min = self.up_max = 0.0
        if self.dn_max < self.dn_min - TOL:
            self.dn_min = self.dn_max = 0.0
        return self

    def zero_up(self):
        self.up_min = self.up_max = 0.0

    def zero_dn(self):
        self.dn_min = self.dn_max = 0.0

    def zero(self):
        self.zero_up()
        self.zero_dn()


@dataclass
class ThermalFlags:
    delta_su: bool = False
    delta_sd: bool = False
    sigma_su: int = 0
    startup_case: int = 0
    shutdown_case: int = 0


def enumerate_indexes(mask: list[bool], grid: TimeGrid, unit_id: str,
                      kind: str = "up", combinatorial: bool = True) -> list[CombinatorialIndex]:
    """All contiguous runs of available steps (every sub-run when
    combinatorial orders are enabled, single steps otherwise)."""
    out: list[CombinatorialIndex] = []
    steps = grid.steps
    n = len(steps)
    i = 0
    while i < n:
        if not mask[i]:
            i += 1
            continue
        j = i
        while j < n and mask[j]:
            j += 1
        if combinatorial:
            for a in range(i, j):
                for b in range(a, j):
                    out.append(CombinatorialIndex(unit_id, steps[a], steps[b] + grid.dt, kind))
        else:
            for a in range(i, j):
                out.append(CombinatorialIndex(unit_id, steps[a], steps[a] + grid.dt, kind))
        i = j
    return out


def shutdown_availability(unit: Unit, grid: TimeGrid) -> list[bool]:
    """Steps on which a shutdown order may be considered: the unit runs at
    or above its minimum power and holds no procured reserve of any kind."""
    if unit.unit_type is not UnitType.THERMAL:
        raise InvalidUnitType(f"shutdown orders only exist for thermal units, got {unit.unit_type}")
    out = []
    for t in grid:
        on = unit.p_plan.at(t) >= unit.p_min.at(t) and unit.p_plan.at(t) > 0
        free = all(unit.reserve(rt, d, t) == 0.0 for rt in RESERVE_TYPES for d in (UP, DN))
        out.append(on and free)
    return out


def initial_available_power(unit: Unit, t: int, t_ex: int) -> AvailableRange:
    """First headroom estimate from bounds, plans and forecasts."""
    plan = unit.p_plan.at(t)
    rng = AvailableRange()
    if unit.unit_type in (UnitType.THERMAL, UnitType.HYDRAULIC) or unit.is_storage():
        rng.up_max = unit.p_max.at(t) - plan
        rng.dn_max = plan - unit.p_min.at(t)
    elif unit.unit_type is UnitType.FLEXIBLE_LOAD:
        fore = unit.p_forecast.at(t) if unit.p_forecast is not None else 0.0
        rng.up_max = fore - plan
        rng.dn_max = plan
    elif unit.unit_type in (UnitType.WIND, UnitType.PV):
        fore = unit.p_forecast.at(t) if unit.p_forecast is not None else 0.0
        rng.up_max = fore - plan
        rng.dn_max = plan - fore * unit.curtailment_ratio
    else:
        return rng  # non-dispatchable load offers nothing
    return rng.clamp()


def subtract_reserves(rng: AvailableRange, unit: Unit, t: int,
                      market: MarketKind) -> AvailableRange:
    """Remove already-procured reserves, except those of the market being
    formulated (they are what this market activates)."""
    same = {MarketKind.RR: "RR", MarketKind.MFRR: "mFRR"}.get(market)
    rng.up_max -= unit.reserve_total(UP, t, exclude=same)
    rng.dn_max -= unit.reserve_total(DN, t, exclude=same)
    return rng.clamp()


def apply_notice_delay(rng: AvailableRange, unit: Unit, t_index_start: int,
                       t_ex: int) -> AvailableRange:
    if t_index_start - t_ex < unit.d_notice:
        rng.zero()
    return rng


def _window(first: int, last: int, dt: int) -> list[int]:
    """Grid-aligned timestamps in [first, last], inclusive."""
    if last < first:
        return []
    return list(range(first, last + 1, dt))


def _plan_on_in(unit: Unit, times: list[int]) -> bool:
    return any(unit.p_plan.at(t) > 0 for t in times)


def _plan_off_in(unit: Unit, times: list[int]) -> bool:
    return any(unit.p_plan.at(t) == 0 for t in times)


def thermal_ramping(rng: AvailableRange, unit: Unit, idx: CombinatorialIndex,
                    dt: int) -> AvailableRange:
    """Boundary ramping bounds at the first and last index step. Interior
    steps need no check since all index orders move together."""
    plan = unit.p_plan
    ramp_start = unit.ramp_max.at(idx.t_start)
    ramp_end = unit.ramp_max.at(idx.t_end - dt)
    p_first, p_before = plan.at(idx.t_start), plan.at(idx.t_start - dt)
    p_last, p_after = plan.at(idx.t_end - dt), plan.at(idx.t_end)
    if ramp_start > 0:
        rng.up_max = min(rng.up_max, ramp_start * dt - (p_first - p_before))
        rng.dn_max = min(rng.dn_max, ramp_start * dt - (p_before - p_first))
    if ramp_end > 0:
        rng.up_max = min(rng.up_max, ramp_end * dt - (p_after - p_last))
        rng.dn_max = min(rng.dn_max, ramp_end * dt - (p_last - p_after))
    return rng.clamp()


def thermal_startup_case(rng: AvailableRange, unit: Unit, idx: CombinatorialIndex,
                         dt: int, t_ex: int) -> ThermalFlags:
    """Startup analysis for an index whose plan is zero throughout.

    Five cases keyed on the plans adjacent to the index. Only the
    all-off case (5) actually induces startup costs and splits the
    upward offer into a bottom/top order pair.
    """
    flags = ThermalFlags(delta_su=False, sigma_su=0)
    plan = unit.p_plan
    before = plan.at(idx.t_start - dt)
    after = plan.at(idx.t_end)
    ramp = unit.ramp_max.at(idx.t_start)
    p_min = unit.p_min.at(idx.t_start)
    p_max = unit.p_max.at(idx.t_start)
    rng.zero_dn()  # an off unit has nothing to offer downward

    if before > 0 and after > 0:
        # an activation here cancels a planned shutdown
        flags.startup_case = 1
        if ramp > 0 and abs(after - before) > 2 * ramp * 60:
            rng.zero_up()
        else:
            lo = max(p_min, max(before, after) - ramp * dt) if ramp > 0 else p_min
            hi = min(p_max, min(before, after) + ramp * dt) if ramp > 0 else p_max
            rng.up_min = max(rng.up_min, lo)
            rng.up_max = min(rng.up_max, hi)
            rng.clamp()
            if rng.up_max > 0:
                flags.sigma_su = -1
    elif before > 0 and after == 0:
        # extends the running period: only min-time-off after can fail
        flags.startup_case = 2
        if _plan_on_in(unit, _window(idx.t_end, idx.t_end + unit.d_min_off, dt)):
            rng.zero_up()
        else:
            rng.up_min = max(rng.up_min, max(p_min, before))
            rng.up_max = min(rng.up_max, min(p_max, before + ramp * dt) if ramp > 0 else p_max)
            rng.clamp()
    elif before == 0 and after > 0:
        # advances a startup already planned: no extra startup cost
        flags.startup_case = 3
        if idx.t_start - t_ex < unit.d_su:
            rng.zero_up()
        elif _plan_on_in(unit, _window(idx.t_start - unit.d_min_off, idx.t_start - dt, dt)):
            rng.zero_up()
        else:
            rng.up_min = max(rng.up_min, max(p_min, after))
            rng.up_max = min(rng.up_max, min(p_max, after + ramp * dt) if ramp > 0 else p_max)
            rng.clamp()
    else:
        # off on both sides: a real startup with its cost
        flags.startup_case = 5
        if idx.t_start - t_ex < unit.d_su:
            rng.zero_up()
        elif _plan_on_in(unit, _window(idx.t_start - unit.d_min_off, idx.t_start - dt, dt)):
            rng.zero_up()
        elif _plan_on_in(unit, _window(idx.t_end, idx.t_end + unit.d_min_off, dt)):
            rng.zero_up()
        elif idx.length_min() < unit.d_min_on:
            rng.zero_up()
        else:
            flags.delta_su = True
            flags.sigma_su = 1
    return flags


def thermal_shutdown_case(unit: Unit, idx: CombinatorialIndex, dt: int,
                          t_ex: int) -> ThermalFlags:
    """Shutdown feasibility for an index on which the unit runs at or
    above minimum power with no procured reserves."""
    flags = ThermalFlags(delta_sd=True, sigma_su=0)
    if idx.t_start - t_ex < unit.d_notice:
        flags.delta_sd = False
        return flags
    plan = unit.p_plan
    before = plan.at(idx.t_start - dt)
    after = plan.at(idx.t_end)
    if before == 0 and after == 0:
        flags.shutdown_case = 1
        flags.sigma_su = -1  # cancels the startup that was planned for this block
    elif before == 0 and after > 0:
        flags.shutdown_case = 2
        if _plan_off_in(unit, _window(idx.t_end, idx.t_end + unit.d_min_on, dt)):
            flags.delta_sd = False
    elif before > 0 and after == 0:
        flags.shutdown_case = 3
        if _plan_off_in(unit, _window(idx.t_start - unit.d_min_on, idx.t_start - dt, dt)):
            flags.delta_sd = False
    else:
        flags.shutdown_case = 5
        if unit.d_su > dt:
            flags.delta_sd = False
        elif unit.d_min_off > idx.length_min():
            flags.delta_sd = False
        elif _plan_off_in(unit, _window(idx.t_start - dt - unit.d_min_on, idx.t_start - dt, dt)):
            flags.delta_sd = False
        elif _plan_off_in(unit, _window(idx.t_end, idx.t_end + unit.d_min_on, dt)):
            flags.delta_sd = False
        else:
            flags.sigma_su = 1  # the unit must restart afterwards
    return flags


def stable_power(rng: AvailableRange, unit: Unit, idx: CombinatorialIndex, dt: int,
                 flags: ThermalFlags) -> tuple[bool, bool]:
    """Minimum stable power duration handling for running thermal units.

    Returns (up, dn) completely-exclusive marks set when a forced
    level-extension order is created.
    """
    d = unit.d_min_stable
    if d <= dt:
        return (False, False)
    plan = unit.p_plan
    pb = plan.at(idx.t_start - dt)
    pa = plan.at(idx.t_end)
    back = _window(idx.t_start - dt - d, idx.t_start - 2 * dt, dt)
    ahead = _window(idx.t_end + dt, idx.t_end + d, dt)
    if any(plan.at(t) != pb for t in back) or any(plan.at(t) != pa for t in ahead):
        rng.zero()
        flags.delta_sd = False
        return (False, False)
    if idx.length_min() >= d:
        return (False, False)

    ps = plan.at(idx.t_start)
    pe = plan.at(idx.t_end - dt)
    if pb != ps and pa != pe:
        # the index sits inside a ramp: nothing can be held stable
        rng.zero()
        return (False, False)

    def force_up(amount: float) -> tuple[bool, bool]:
        rng.zero_dn()
        if amount > rng.up_max + TOL:
            rng.zero_up()
            return (False, False)
        rng.up_min = rng.up_max = amount
        return (True, False)

    def force_dn(amount: float) -> tuple[bool, bool]:
        rng.zero_up()
        if amount > rng.dn_max + TOL:
            rng.zero_dn()
            return (False, False)
        rng.dn_min = rng.dn_max = amount
        return (False, True)

    if pb > ps:
        return force_up(pb - ps)
    if pb < ps:
        return force_dn(ps - pb)
    if pa > pe:
        return force_up(pa - pe)
    if pa < pe:
        return force_dn(pe - pa)
    return (False, False)


def _storage_frame_end(t_ex: int, h_da_ex: int) -> int:
    """End of the horizon over which storage bounds must hold: the end of
    the next day once the daily day-ahead market has run, else the end of
    the current day."""
    day = t_ex // MINUTES_PER_DAY
    hour = (t_ex % MINUTES_PER_DAY) // 60
    if hour > h_da_ex:
        return (day + 2) * MINUTES_PER_DAY
    return (day + 1) * MINUTES_PER_DAY


def hydro_storage_constraints(rng: AvailableRange, unit: Unit, t: int, grid: TimeGrid,
                              t_ex: int, gp: GlobalParams) -> tuple[bool, bool]:
    """Reservoir-level and PHS-transition limits for one market step.

    Returns (up, dn) marks telling whether the storage cap binds, in
    which case the step's orders become completely exclusive.
    """
    plan = unit.p_plan
    ramp = unit.ramp_max.at(t)
    if ramp > 0:
        p, pm, pp = plan.at(t), plan.at(t - grid.dt), plan.at(t + grid.dt)
        rng.up_max = min(rng.up_max, ramp * grid.dt - (p - pm), ramp * grid.dt - (pp - p))
        rng.dn_max = min(rng.dn_max, ramp * grid.dt - (pm - p), ramp * grid.dt - (p - pp))
        rng.clamp()

    ce_up = ce_dn = False
    if unit.e_stored is not None and unit.e_min is not None and unit.e_max is not None:
        frame_h = (grid.end - grid.start) / 60.0
        horizon = range(grid.start, _storage_frame_end(t_ex, gp.h_da_ex), grid.dt)
        stored = [unit.e_stored.at(tt) for tt in grid]
        cap_up = (min(stored) - max(unit.e_min.at(ts) for ts in horizon)) / frame_h
        cap_dn = (min(unit.e_max.at(ts) for ts in horizon) - max(stored)) / frame_h
        if cap_up < rng.up_max - TOL:
            rng.up_max = cap_up
            ce_up = True
        if cap_dn < rng.dn_max - TOL:
            rng.dn_max = cap_dn
            ce_dn = True
        rng.clamp()

    if unit.unit_type is UnitType.PHS_STORAGE and unit.d_tran > grid.dt:
        p = plan.at(t)
        if p < 0:
            rng.up_max = min(rng.up_max, abs(p))
        elif p > 0:
            rng.dn_max = min(rng.dn_max, abs(p))
        rng.clamp()
    return (ce_up, ce_dn)


def _emittable(lo: float, hi: float) -> bool:
    return hi > TOL and hi >= lo - TOL


@dataclass
class _IndexOrders:
    """Formulation context of one combinatorial index."""
    idx: CombinatorialIndex
    flags: ThermalFlags
    orders: list[Order] = field(default_factory=list)
    bottoms: dict = field(default_factory=dict)  # t -> bottom order (startup only)
    tops: dict = field(default_factory=dict)


def build_orders(unit: Unit, idx: CombinatorialIndex, rng: AvailableRange,
                 flags: ThermalFlags, dt: int, t_ex: int) -> _IndexOrders:
    """Create the orders of one thermal combinatorial index."""
    ctx = _IndexOrders(idx=idx, flags=flags)
    span = f"{idx.t_start}-{idx.t_end}"
    if idx.kind == "shutdown":
        if flags.delta_sd:
            for t in idx.steps(dt):
                q = unit.p_plan.at(t)
                if q > TOL:
                    ctx.orders.append(Order(
                        id=f"{unit.id}@{t}:shut[{span}]", unit_id=unit.id,
                        area_id=unit.area_id, price=0.0, q_min=q, q_max=q,
                        t_start=t, t_end=t + dt, t_ex=t_ex, sigma=1,
                        kind=OrderKind.SHUTDOWN))
        return ctx
    if idx.kind == "up" and flags.delta_su:
        p_min = unit.p_min.at(idx.t_start)
        p_max = unit.p_max.at(idx.t_start)
        for t in idx.steps(dt):
            if p_min > TOL:
                bottom = Order(id=f"{unit.id}@{t}:su1[{span}]", unit_id=unit.id,
                               area_id=unit.area_id, price=0.0, q_min=p_min, q_max=p_min,
                               t_start=t, t_end=t + dt, t_ex=t_ex, sigma=-1,
                               kind=OrderKind.STARTUP_BOTTOM)
                ctx.bottoms[t] = bottom
                ctx.orders.append(bottom)
            if _emittable(0.0, p_max - p_min):
                top = Order(id=f"{unit.id}@{t}:su2[{span}]", unit_id=unit.id,
                            area_id=unit.area_id, price=0.0, q_min=0.0, q_max=p_max - p_min,
                            t_start=t, t_end=t + dt, t_ex=t_ex, sigma=-1,
                            kind=OrderKind.STARTUP_TOP)
                ctx.tops[t] = top
                ctx.orders.append(top)
        return ctx
    if idx.kind == "up" and _emittable(rng.up_min, rng.up_max):
        for t in idx.steps(dt):
            ctx.orders.append(Order(
                id=f"{unit.id}@{t}:up[{span}]", unit_id=unit.id, area_id=unit.area_id,
                price=0.0, q_min=rng.up_min, q_max=rng.up_max, t_start=t, t_end=t + dt,
                t_ex=t_ex, sigma=-1, kind=OrderKind.NORMAL))
    if idx.kind == "down" and _emittable(rng.dn_min, rng.dn_max):
        for t in idx.steps(dt):
            ctx.orders.append(Order(
                id=f"{unit.id}@{t}:dn[{span}]", unit_id=unit.id, area_id=unit.area_id,
                price=0.0, q_min=rng.dn_min, q_max=rng.dn_max, t_start=t, t_end=t + dt,
                t_ex=t_ex, sigma=1, kind=OrderKind.NORMAL))
    return ctx


def price_orders(unit: Unit, ctx: _IndexOrders, fragment_of: dict | None = None):
    """Fill prices: variable cost, with startup cost amortized over the
    index duration (in hours) when an activation creates or cancels a
    startup."""
    hours = ctx.idx.length_min() / 60.0 if ctx.idx is not None else 1.0
    for o in ctx.orders:
        if o.kind is OrderKind.STARTUP_TOP:
            o.price = unit.c_var
        elif o.kind is OrderKind.STARTUP_BOTTOM:
            o.price = unit.c_var + ctx.flags.sigma_su * unit.c_su / (o.q_max * hours)
        elif ctx.flags.sigma_su != 0:
            o.price = unit.c_var + ctx.flags.sigma_su * unit.c_su / (o.q_max * hours)
        else:
            o.price = unit.c_var


def _fragment_pieces(p_max: float, lo: float, hi: float) -> list[tuple[int, float]]:
    """Split [lo, hi] at the 7 equal fragment boundaries of [0, p_max];
    yields (fragment number 1..7, width)."""
    if hi - lo <= TOL or p_max <= 0:
        return []
    frag = p_max / HYDRO_FRAGMENTS
    pieces = []
    a = lo
    while a < hi - TOL:
        i = min(int(a / frag + TOL), HYDRO_FRAGMENTS - 1)
        b = min(hi, (i + 1) * frag)
        if b - a > TOL:
            pieces.append((i + 1, b - a))
        a = b
    return pieces


def _hydro_orders(unit: Unit, t: int, rng: AvailableRange, dt: int, t_ex: int) -> list[Order]:
    p_max = unit.p_max.at(t)
    plan = unit.p_plan.at(t)
    wv = unit.water_value(t)
    out = []
    for i, width in _fragment_pieces(p_max, plan, plan + rng.up_max):
        out.append(Order(id=f"{unit.id}@{t}:upF{i}", unit_id=unit.id, area_id=unit.area_id,
                         price=wv + unit.hydro_spreads[i - 1], q_min=0.0, q_max=width,
                         t_start=t, t_end=t + dt, t_ex=t_ex, sigma=-1, kind=OrderKind.NORMAL))
    for i, width in _fragment_pieces(p_max, plan - rng.dn_max, plan):
        out.append(Order(id=f"{unit.id}@{t}:dnF{i}", unit_id=unit.id, area_id=unit.area_id,
                         price=wv + unit.hydro_spreads[i - 1], q_min=0.0, q_max=width,
                         t_start=t, t_end=t + dt, t_ex=t_ex, sigma=1, kind=OrderKind.NORMAL))
    return out


def _general_orders(unit: Unit, t: int, rng: AvailableRange, dt: int, t_ex: int) -> list[Order]:
    out = []
    if _emittable(rng.up_min, rng.up_max):
        out.append(Order(id=f"{unit.id}@{t}:up", unit_id=unit.id, area_id=unit.area_id,
                         price=unit.c_var, q_min=rng.up_min, q_max=rng.up_max,
                         t_start=t, t_end=t + dt, t_ex=t_ex, sigma=-1, kind=OrderKind.NORMAL))
    if _emittable(rng.dn_min, rng.dn_max):
        out.append(Order(id=f"{unit.id}@{t}:dn", unit_id=unit.id, area_id=unit.area_id,
                         price=unit.c_var, q_min=rng.dn_min, q_max=rng.dn_max,
                         t_start=t, t_end=t + dt, t_ex=t_ex, sigma=1, kind=OrderKind.NORMAL))
    return out


def create_couplings(unit: Unit, contexts: list[_IndexOrders],
                     loose_orders: list[Order]) -> list[Coupling]:
    """Coupling links of one unit.

    (a) parent/children over each startup step's bottom+top pair;
    (b) identical-ratio across an index's orders (tops only for startups);
    (c) exclusion among same-step same-direction orders of different
        indexes, parent/children members excluded;
    (d) exclusion between an index's boundary orders and opposite-direction
        orders on the adjacent steps;
    (e) completely exclusive orders against all same-direction orders of
        the unit at other steps.
    """
    couplings: list[Coupling] = []
    seen_excl: set[tuple[str, ...]] = set()

    def exclusion(ids: list[str]):
        key = tuple(sorted(ids))
        if len(key) >= 2 and key not in seen_excl:
            seen_excl.add(key)
            couplings.append(Coupling(CouplingKind.EXCLUSION, key))

    pc_members: set[str] = set()
    for ctx in contexts:
        for t, bottom in ctx.bottoms.items():
            top = ctx.tops.get(t)
            if top is not None:
                couplings.append(Coupling(CouplingKind.PARENT_CHILDREN, (bottom.id, top.id)))
                pc_members.update((bottom.id, top.id))

    for ctx in contexts:
        if ctx.flags.delta_su:
            members = [o.id for o in ctx.tops.values()]
        else:
            members = [o.id for o in ctx.orders]
        if len(members) >= 2:
            couplings.append(Coupling(CouplingKind.IDENTICAL_RATIO, tuple(members)))

    all_orders = [o for ctx in contexts for o in ctx.orders] + list(loose_orders)
    by_step_dir: dict[tuple[int, int], list[Order]] = {}
    for o in all_orders:
        by_step_dir.setdefault((o.t_start, o.sigma), []).append(o)

    if contexts:  # rule (c) only concerns index-built (thermal) orders
        for (t, sigma), orders in sorted(by_step_dir.items()):
            ids = [o.id for o in orders if o.id not in pc_members]
            exclusion(ids)

    for ctx in contexts:
        if not ctx.orders:
            continue
        idx = ctx.idx
        dt = ctx.orders[0].t_end - ctx.orders[0].t_start
        firsts = [o for o in ctx.orders if o.t_start == idx.t_start]
        lasts = [o for o in ctx.orders if o.t_start == idx.t_end - dt]
        for o in firsts:
            for other in by_step_dir.get((idx.t_start - dt, -o.sigma), []):
                exclusion([o.id, other.id])
        for o in lasts:
            for other in by_step_dir.get((idx.t_end, -o.sigma), []):
                exclusion([o.id, other.id])

    for o in all_orders:
        if not o.completely_exclusive:
            continue
        for other in all_orders:
            if other.sigma == o.sigma and other.t_start != o.t_start:
                exclusion([o.id, other.id])
    return couplings


def _thermal_unit_orders(unit: Unit, grid: TimeGrid, cfg: MarketConfig,
                         combinatorial: bool) -> tuple[list[Order], list[Coupling]]:
    dt = grid.dt
    step_rng: dict[int, AvailableRange] = {}
    for t in grid:
        r = initial_available_power(unit, t, cfg.t_ex)
        subtract_reserves(r, unit, t, cfg.market_kind)
        apply_notice_delay(r, unit, t, cfg.t_ex)
        step_rng[t] = r

    up_mask = [step_rng[t].up_max > TOL for t in grid]
    dn_mask = [step_rng[t].dn_max > TOL for t in grid]
    shut_mask = shutdown_availability(unit, grid)
    # shutdown steps also honor the notice delay through the case check
    indexes = (enumerate_indexes(up_mask, grid, unit.id, "up", combinatorial)
               + enumerate_indexes(dn_mask, grid, unit.id, "down", combinatorial)
               + enumerate_indexes(shut_mask, grid, unit.id, "shutdown", combinatorial))

    contexts: list[_IndexOrders] = []
    for idx in indexes:
        steps = idx.steps(dt)
        plans = [unit.p_plan.at(t) for t in steps]
        mins = [unit.p_min.at(t) for t in steps]
        rng = AvailableRange(
            up_max=min(step_rng[t].up_max for t in steps),
            dn_max=min(step_rng[t].dn_max for t in steps))
        ce_up = ce_dn = False

        if idx.kind == "shutdown":
            flags = thermal_shutdown_case(unit, idx, dt, cfg.t_ex)
            stable_power(rng, unit, idx, dt, flags)
        elif any(0 < p < m for p, m in zip(plans, mins)):
            # mid-startup state anywhere in the index: nothing can be offered
            flags = ThermalFlags(startup_case=4)
            rng.zero()
        elif all(p == 0 for p in plans):
            if idx.kind == "down":
                continue  # off steps never enter the downward mask
            flags = thermal_startup_case(rng, unit, idx, dt, cfg.t_ex)
        elif all(p >= m for p, m in zip(plans, mins)):
            flags = ThermalFlags()
            thermal_ramping(rng, unit, idx, dt)
            ce_up, ce_dn = stable_power(rng, unit, idx, dt, flags)
        else:
            # indexes mixing running and off steps cannot carry one joint order
            flags = ThermalFlags()
            rng.zero()

        ctx = build_orders(unit, idx, rng, flags, dt, cfg.t_ex)
        for o in ctx.orders:
            if (o.sigma == -1 and ce_up) or (o.sigma == 1 and ce_dn):
                o.completely_exclusive = True
        price_orders(unit, ctx)
        if ctx.orders:
            contexts.append(ctx)

    orders = [o for ctx in contexts for o in ctx.orders]
    couplings = create_couplings(unit, contexts, [])
    return orders, couplings


def _per_step_unit_orders(unit: Unit, grid: TimeGrid, cfg: MarketConfig,
                          gp: GlobalParams) -> tuple[list[Order], list[Coupling]]:
    dt = grid.dt
    orders: list[Order] = []
    for t in grid:
        rng = initial_available_power(unit, t, cfg.t_ex)
        subtract_reserves(rng, unit, t, cfg.market_kind)
        apply_notice_delay(rng, unit, t, cfg.t_ex)
        ce_up = ce_dn = False
        if unit.unit_type is UnitType.HYDRAULIC or unit.is_storage():
            ce_up, ce_dn = hydro_storage_constraints(rng, unit, t, grid, cfg.t_ex, gp)
        if unit.unit_type is UnitType.HYDRAULIC:
            step_orders = _hydro_orders(unit, t, rng, dt, cfg.t_ex)
        else:
            step_orders = _general_orders(unit, t, rng, dt, cfg.t_ex)
        for o in step_orders:
            if (o.sigma == -1 and ce_up) or (o.sigma == 1 and ce_dn):
                o.completely_exclusive = True
        orders.extend(step_orders)
    couplings = create_couplings(unit, [], orders)
    return orders, couplings


def formulate_bsp_orders(ds: Dataset, cfg: MarketConfig,
                         combinatorial: bool = True) -> tuple[list[Order], list[Coupling]]:
    """Formulate the BSP order book for one market execution."""
    grid = time_grid(cfg)
    all_orders: list[Order] = []
    all_couplings: list[Coupling] = []
    for unit in sorted(ds.units, key=lambda u: u.id):
        if unit.unit_type is UnitType.NONDISPATCHABLE_LOAD:
            continue
        if unit.unit_type is UnitType.THERMAL:
            orders, couplings = _thermal_unit_orders(unit, grid, cfg, combinatorial)
        else:
            orders, couplings = _per_step_unit_orders(unit, grid, cfg, ds.global_params)
        all_orders.extend(orders)
        all_couplings.extend(couplings)
    all_orders.sort(key=lambda o: (o.unit_id or "", o.t_start, o.kind.value, o.sigma, o.id))
    return all_orders, all_couplings
