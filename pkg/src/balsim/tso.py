"""TSO balancing needs and their translation into market orders.

Needs are the forecasted area imbalance, capped by what BSP orders in
the area could compensate. The bidding strategy then produces either a
single inelastic order per step or a bidding curve of slices priced
against an alternative (a closer-to-real-time market estimated from a
day-ahead price ratio table, or a simulated local balancing process),
optionally reshaped by volume-based risk aversion quantiles.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, replace

from .model import (ControlArea, Coupling, CouplingKind, Dataset, GlobalParams,
                    MarketConfig, MarketKind, Order, TimeGrid, TsoParams, Unit,
                    UnitType, ConfigError, LOAD_TYPES, GENERATION_TYPES,
                    VRE_TYPES, STORAGE_TYPES, time_grid)
from .series import TimeSeries
from . import bm as bm_mod

TOL = 1e-9


def bsp_overall_volume(orders: list[Order], couplings: list[Coupling],
                       ca: ControlArea, t: int, need_up: bool) -> float:
    """Total BSP volume at step t able to compensate a need in the given
    direction. Orders tied by an exclusion contribute only the largest
    member."""
    zones = set(ca.market_area_ids)
    pool_sigma = -1 if need_up else 1
    pool = {o.id: o for o in orders
            if not o.is_tso and o.t_start == t and o.sigma == pool_sigma
            and o.area_id in zones}
    exclusions = [c for c in couplings if c.kind is CouplingKind.EXCLUSION]
    counted: set[str] = set()
    in_exclusion: set[str] = set()
    volume = 0.0
    for c in exclusions:
        members = [oid for oid in c.order_ids if oid in pool]
        in_exclusion.update(members)
        fresh = [oid for oid in members if oid not in counted]
        if fresh:
            volume += max(pool[oid].q_max for oid in fresh)
            counted.update(members)
    volume += sum(o.q_max for oid, o in pool.items() if oid not in in_exclusion)
    return volume


def compute_needs(ca: ControlArea, ds: Dataset, cfg: MarketConfig, grid: TimeGrid,
                  orders: list[Order], couplings: list[Coupling]) -> list[float]:
    """Signed balancing needs per step (positive = upward), capped in
    magnitude by the compensating BSP pool."""
    zones = set(ca.market_area_ids)
    units = [u for u in ds.units if u.area_id in zones]
    p = ca.tso_params
    out = []
    for t in grid:
        if p.delta_for:
            load = sum(abs(u.p_forecast.at(t)) for u in units
                       if u.unit_type in LOAD_TYPES and u.p_forecast is not None)
            gen = sum(u.p_plan.at(t) for u in units
                      if u.unit_type in (UnitType.THERMAL, UnitType.HYDRAULIC) + STORAGE_TYPES)
            gen += sum(u.p_forecast.at(t) for u in units
                       if u.unit_type in VRE_TYPES and u.p_forecast is not None)
        else:
            load = sum(abs(u.p_plan.at(t)) for u in units if u.unit_type in LOAD_TYPES)
            gen = sum(u.p_plan.at(t) for u in units if u.unit_type in GENERATION_TYPES)
        bal = sum(s.at(t) for z, s in ca.commercial_balance.items() if z in zones)
        bn = load - gen + bal
        if bn != 0.0:
            cap = bsp_overall_volume(orders, couplings, ca, t, need_up=bn > 0)
            if abs(bn) > cap:
                bn = cap if bn > 0 else -cap
        out.append(bn)
    return out


def _tso_order(ca: ControlArea, t: int, dt: int, t_ex: int, tag: str,
               q: float, price: float, sigma: int) -> Order:
    return Order(id=f"TSO:{ca.id}@{t}:{tag}", area_id=ca.id, price=price,
                 q_min=0.0, q_max=q, t_start=t, t_end=t + dt, t_ex=t_ex,
                 sigma=sigma, is_tso=True)


def inelastic_orders(ca: ControlArea, needs: list[float], grid: TimeGrid,
                     t_ex: int, price_cap: float) -> list[Order]:
    """One fully divisible order per non-zero step, priced at the cap so
    it clears at any market price."""
    out = []
    for t, bn in zip(grid, needs):
        if bn > TOL:
            out.append(_tso_order(ca, t, grid.dt, t_ex, "inel", bn, price_cap, -1))
        elif bn < -TOL:
            out.append(_tso_order(ca, t, grid.dt, t_ex, "inel", -bn, -price_cap, 1))
    return out


def slice_division(needs: list[float], v_slice: float) -> list[list[float]]:
    """Divide needs into slices of at most v_slice MW, harmonized across
    steps: each slice is shrunk to the smallest residual still active so
    that slice boundaries line up between steps. Positive and negative
    steps are divided independently. Returns per-step signed slice lists.
    """
    slices: list[list[float]] = [[] for _ in needs]

    def run(sign: int):
        active = {k for k, bn in enumerate(needs) if sign * bn > TOL}
        filled = {k: 0.0 for k in active}
        while active:
            residuals = [abs(needs[k]) - filled[k] for k in active]
            v = min(v_slice, min(residuals))
            for k in sorted(active):
                slices[k].append(sign * v)
                filled[k] += v
            active = {k for k in active if abs(needs[k]) - filled[k] > TOL}

    run(+1)
    run(-1)
    return slices


@dataclass
class AlternativeCost:
    """Signed-cost evaluator: cost(q) is the expense of compensating q MW
    with the alternative (q < 0 = downward). None marks an unusable
    alternative (priced at the cap downstream)."""
    kind: str
    evaluate: callable

    def cost(self, q: float) -> float | None:
        if q == 0:
            return 0.0
        return self.evaluate(q)


def mfrr_alternative(lambda_da: float, ratio_table) -> AlternativeCost:
    """Projected alternative-market cost from the day-ahead price and the
    banded day-ahead/mFRR price ratio table."""
    def ratio(direction_up: bool, magnitude: float) -> float:
        for lo, hi, r_dn, r_up in ratio_table:
            if lo <= magnitude < hi:
                return r_up if direction_up else r_dn
        return ratio_table[-1][3] if direction_up else ratio_table[-1][2]

    def evaluate(q: float) -> float:
        price = lambda_da * ratio(q >= 0, abs(q))
        return abs(q) * price

    return AlternativeCost(kind="mFRRalt", evaluate=evaluate)


def _draw_thermal_pool(units: list[Unit], rho: float, rng: random.Random) -> list[Unit]:
    groups: dict[str, list[Unit]] = {}
    for u in units:
        groups.setdefault(u.fuel or "default", []).append(u)
    chosen: list[Unit] = []
    for fuel in sorted(groups):
        members = sorted(groups[fuel], key=lambda u: u.id)
        total = sum(u.p_max.at(0) for u in members) or 1.0
        order = rng.sample(members, len(members))
        acc = 0.0
        picked = []
        for u in order:
            if acc >= rho - 0.1:
                break
            frac = u.p_max.at(0) / total
            if acc + frac <= rho + 0.1 + TOL:
                picked.append(u)
                acc += frac
        if acc < rho - 0.1 - TOL:
            rest = [u for u in order if u not in picked]
            if rest:
                best = min(rest, key=lambda u: abs(acc + u.p_max.at(0) / total - rho))
                picked.append(best)
        chosen.extend(picked)
    return chosen


def _scale_headroom(u: Unit, rho: float, grid: TimeGrid) -> Unit:
    p_max = [u.p_plan.at(t) + rho * (u.p_max.at(t) - u.p_plan.at(t)) for t in grid]
    p_min = [u.p_plan.at(t) - rho * (u.p_plan.at(t) - u.p_min.at(t)) for t in grid]
    return replace(u,
                   p_max=TimeSeries(grid.start, grid.dt, tuple(p_max)),
                   p_min=TimeSeries(grid.start, grid.dt, tuple(p_min)))


def frbm_alternative(ds: Dataset, ca: ControlArea, cfg: MarketConfig,
                     rho: float, rng_seed) -> AlternativeCost:
    """Cost of covering a need with the local balancing process, simulated
    on the pool of capacity assumed withheld from the market: a seeded
    random draw of whole thermal units per fuel group within +/-10% of the
    rho capacity share, and rho-scaled headroom on hydraulic and storage
    units. Costs are memoized per requested volume."""
    grid = time_grid(cfg)
    rng = random.Random(f"{rng_seed}/frbm/{ca.id}")
    zones = set(ca.market_area_ids)
    local = [u for u in ds.units if u.area_id in zones]
    pool = _draw_thermal_pool([u for u in local if u.unit_type is UnitType.THERMAL],
                              rho, rng)
    for u in local:
        if u.unit_type is UnitType.HYDRAULIC or u.is_storage():
            pool.append(_scale_headroom(u, rho, grid))
    bm_cfg = MarketConfig(MarketKind.BM, cfg.t_ex, cfg.t_start, cfg.t_end, cfg.dt_minutes)
    pool_ds = Dataset(global_params=ds.global_params, control_areas=[ca], units=pool)
    memo: dict[float, float | None] = {}

    def evaluate(q: float) -> float | None:
        if not pool:
            return None
        key = round(q, 6)
        if key not in memo:
            _, _, _, total = bm_mod.run_bm(ca, pool_ds, bm_cfg, bn=[q] * len(grid))
            memo[key] = total
        return memo[key]

    return AlternativeCost(kind="FrBMalt", evaluate=evaluate)


def _slice_price(alt: AlternativeCost, signed_cum: float, price_cap: float) -> float:
    cost = alt.cost(signed_cum)
    if cost is None:
        return price_cap if signed_cum > 0 else -price_cap
    return cost / abs(signed_cum)


def basic_elastic_prices(slices: list[float], alt: AlternativeCost,
                         price_cap: float) -> list[float]:
    """Average alternative cost of the cumulative stack, per slice."""
    prices = []
    cum = 0.0
    for v in slices:
        cum += v
        prices.append(_slice_price(alt, cum, price_cap))
    return prices


@dataclass(frozen=True)
class RiskSlice:
    q: float
    sigma: int      # -1 upward, +1 downward
    alpha: float
    epsilon: float


def risk_averse_slices(bn: float, quantiles: tuple) -> list[RiskSlice]:
    """Slices sized by the forecast-error quantiles. A sign walk over
    bn + epsilon_i covers the pure upward, pure downward and straddling
    cases with one rule: below the sign change the order direction is
    downward, above it upward, and the two slices around the change
    absorb the remainders."""
    inner = quantiles[1:-1]
    if len(inner) < 2:
        raise ConfigError("need at least two inner quantiles")
    if bn == 0:
        return []
    eps = [e for _, e in inner]
    alphas = [a for a, _ in inner]
    n = len(inner)
    shifted = [bn + e for e in eps]
    neg = [i for i, v in enumerate(shifted) if v < 0]
    pos = [i for i, v in enumerate(shifted) if v > 0]
    i_s1 = max(neg) if neg else None
    i_s2 = min(pos) if pos else None

    out: list[RiskSlice] = []
    for i in range(n):
        if i_s1 is not None and i < i_s1:
            q = eps[i + 1] - eps[i]
            sigma = 1
        elif i_s1 is not None and i == i_s1:
            q = abs(shifted[i])
            sigma = 1
        elif i_s2 is not None and i == i_s2:
            q = shifted[i]
            sigma = -1
        elif i_s2 is not None and i > i_s2:
            q = eps[i] - eps[i - 1]
            sigma = -1
        else:
            continue  # bn + eps_i == 0 exactly: nothing to submit at this level
        if q > TOL:
            out.append(RiskSlice(q=q, sigma=sigma, alpha=alphas[i], epsilon=eps[i]))
    return out


def interp_epsilon(quantiles: tuple, alpha: float) -> float:
    """Epsilon at probability alpha, linear between listed quantiles and
    clamped at the sentinels."""
    if alpha <= quantiles[0][0]:
        return quantiles[0][1]
    if alpha >= quantiles[-1][0]:
        return quantiles[-1][1]
    for (a0, e0), (a1, e1) in zip(quantiles, quantiles[1:]):
        if a0 <= alpha <= a1:
            w = (alpha - a0) / (a1 - a0)
            return e0 + w * (e1 - e0)
    raise AssertionError


def risk_averse_prices(slices: list[RiskSlice], quantiles: tuple,
                       alt: AlternativeCost, price_cap: float) -> list[float]:
    """Price each slice from the alternative cost of its cumulative stack
    plus the expected cost of correcting over- and under-procurement,
    weighted by the slice probability."""
    alpha_min = quantiles[0][0]
    alpha_max = quantiles[-1][0]
    ups = [s for s in slices if s.sigma == -1]
    dns = [s for s in slices if s.sigma == 1]
    price_of: dict[int, float] = {}

    def correction(s: RiskSlice) -> tuple[float | None, float | None]:
        k_d = s.alpha - 0.5 * (s.alpha - alpha_min)
        k_u = s.alpha + 0.5 * (alpha_max - s.alpha)
        c_dn = alt.cost(interp_epsilon(quantiles, k_d) - s.epsilon)
        c_up = alt.cost(interp_epsilon(quantiles, k_u) - s.epsilon)
        return c_dn, c_up

    cum = 0.0
    for s in ups:
        cum += s.q
        base = alt.cost(cum)
        c_dn, c_up = correction(s)
        if base is None or c_dn is None or c_up is None:
            price_of[id(s)] = price_cap
        else:
            price_of[id(s)] = (base + s.alpha * c_dn + (1 - s.alpha) * c_up) / cum
    cum = 0.0
    for s in reversed(dns):
        cum += s.q
        base = alt.cost(-cum)
        c_dn, c_up = correction(s)
        if base is None or c_dn is None or c_up is None:
            price_of[id(s)] = -price_cap
        else:
            price_of[id(s)] = (base + s.alpha * c_dn + (1 - s.alpha) * c_up) / cum
    return [price_of[id(s)] for s in slices]


def formulate_tso_orders(ca: ControlArea, ds: Dataset, cfg: MarketConfig,
                         orders: list[Order], couplings: list[Coupling],
                         rng_seed=0) -> tuple[list[Order], list[float]]:
    """Needs plus orders for one control area under its strategy flags."""
    grid = time_grid(cfg)
    gp = ds.global_params
    p = ca.tso_params
    needs = compute_needs(ca, ds, cfg, grid, orders, couplings)
    if not p.delta_elas:
        return inelastic_orders(ca, needs, grid, cfg.t_ex, gp.price_cap), needs

    if p.alt == "FrBMalt":
        alt = frbm_alternative(ds, ca, cfg, p.rho_frbm, rng_seed)
    else:
        alt = mfrr_alternative(p.lambda_da, gp.mfrr_ratio_table)

    out: list[Order] = []
    if not p.delta_risk:
        per_step = slice_division(needs, p.v_slice)
        for t, step_slices in zip(grid, per_step):
            prices = basic_elastic_prices(step_slices, alt, gp.price_cap)
            for i, (v, price) in enumerate(zip(step_slices, prices or []), start=1):
                sigma = -1 if v > 0 else 1
                out.append(_tso_order(ca, t, grid.dt, cfg.t_ex, f"s{i}",
                                      abs(v), price, sigma))
    else:
        for t, bn in zip(grid, needs):
            slices = risk_averse_slices(bn, p.quantiles)
            prices = risk_averse_prices(slices, p.quantiles, alt, gp.price_cap)
            for i, (s, price) in enumerate(zip(slices, prices), start=1):
                out.append(_tso_order(ca, t, grid.dt, cfg.t_ex, f"r{i}",
                                      s.q, price, s.sigma))
    return out, needs


def formulate_all_tso_orders(ds: Dataset, cfg: MarketConfig, orders: list[Order],
                             couplings: list[Coupling], rng_seed=0
                             ) -> tuple[list[Order], dict[str, list[float]]]:
    all_orders: list[Order] = []
    needs: dict[str, list[float]] = {}
    for ca in sorted(ds.control_areas, key=lambda a: a.id):
        ca_orders, ca_needs = formulate_tso_orders(ca, ds, cfg, orders, couplings, rng_seed)
        all_orders.extend(ca_orders)
        needs[ca.id] = ca_needs
    return all_orders, needs
