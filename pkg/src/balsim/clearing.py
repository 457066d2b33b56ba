"""Order-book clearing.

Selects accepted quantities maximizing traded surplus subject to order
semi-continuity (q = 0 or within [q_min, q_max]) and the three coupling
constraints, then derives one marginal price per (area, step).

``clear`` formulates the problem as a small mixed-integer program per
connected component (orders linked by a shared balance cell or by a
coupling) and solves it exactly with HiGHS. ``brute_force_clear`` is an
independent oracle: it enumerates acceptance patterns and solves the
continuous part with a merit-order threshold sweep, no LP library
involved.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .model import Coupling, CouplingKind, Order, trade_side

TOL = 1e-9
ACCEPT_TOL = 1e-7


class InfeasibleClearing(Exception):
    def __init__(self, message: str, couplings: tuple = ()):  # noqa: D107
        super().__init__(message)
        self.couplings = couplings


class OracleTooLarge(Exception):
    pass


@dataclass
class ClearingResult:
    q_acc: dict[str, float]
    accepted: dict[str, bool]
    prices: dict[tuple[str, int], float | None]
    objective: float
    out_of_merit: set[str] = field(default_factory=set)

    def acceptance_ratio(self, order: Order) -> float:
        q = self.q_acc.get(order.id, 0.0)
        if order.q_max > order.q_min:
            return (q - order.q_min) / (order.q_max - order.q_min) if q > 0 else 0.0
        return 1.0 if q > 0 else 0.0


def _clearing_area(order: Order, area_map: dict | None) -> str:
    if area_map:
        return area_map.get(order.area_id, order.area_id)
    return order.area_id


def _cell(order: Order, area_map: dict | None) -> tuple[str, int]:
    return (_clearing_area(order, area_map), order.t_start)


def validate_couplings(orders: list[Order], couplings: list[Coupling]):
    ids = {o.id for o in orders}
    bad = []
    for c in couplings:
        if len(c.order_ids) < 2 or any(oid not in ids for oid in c.order_ids):
            bad.append(c)
    if bad:
        raise InfeasibleClearing(
            f"{len(bad)} coupling(s) reference missing orders or have fewer than 2 members",
            tuple(bad))


class _UnionFind:
    def __init__(self, keys):
        self.parent = {k: k for k in keys}

    def find(self, k):
        while self.parent[k] != k:
            self.parent[k] = self.parent[self.parent[k]]
            k = self.parent[k]
        return k

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _components(orders: list[Order], couplings: list[Coupling],
                area_map: dict | None) -> list[tuple[list[Order], list[Coupling]]]:
    uf = _UnionFind([o.id for o in orders])
    by_cell: dict[tuple, list[Order]] = {}
    for o in orders:
        by_cell.setdefault(_cell(o, area_map), []).append(o)
    for cell_orders in by_cell.values():
        for a, b in zip(cell_orders, cell_orders[1:]):
            uf.union(a.id, b.id)
    for c in couplings:
        for a, b in zip(c.order_ids, c.order_ids[1:]):
            uf.union(a, b)
    groups: dict[str, list[Order]] = {}
    for o in orders:
        groups.setdefault(uf.find(o.id), []).append(o)
    comp_couplings: dict[str, list[Coupling]] = {root: [] for root in groups}
    for c in couplings:
        comp_couplings[uf.find(c.order_ids[0])].append(c)
    out = [(sorted(os, key=lambda o: o.id), comp_couplings[root])
           for root, os in groups.items()]
    out.sort(key=lambda pair: pair[0][0].id)
    return out


def _solve_component(orders: list[Order], couplings: list[Coupling],
                     area_map: dict | None) -> dict[str, float]:
    """Exact MILP for one component; returns q_acc per order id."""
    idr_groups = [c for c in couplings if c.kind is CouplingKind.IDENTICAL_RATIO]
    idr_of: dict[str, int] = {}
    for gi, c in enumerate(idr_groups):
        for oid in c.order_ids:
            if oid in idr_of:
                raise InfeasibleClearing("order belongs to two identical-ratio groups", (c,))
            idr_of[oid] = gi
    coupled = {oid for c in couplings for oid in c.order_ids}
    by_id = {o.id: o for o in orders}

    names: list[tuple] = []
    lo: list[float] = []
    hi: list[float] = []
    integrality: list[int] = []

    def add_var(name, low, high, integer=False) -> int:
        names.append(name)
        lo.append(low)
        hi.append(high)
        integrality.append(1 if integer else 0)
        return len(names) - 1

    y_of: dict[str, int] = {}
    delta_of: dict[str, int] = {}     # per order id (non-IDR members)
    g_delta: dict[int, int] = {}
    g_w: dict[int, int] = {}
    for gi in range(len(idr_groups)):
        g_delta[gi] = add_var(("gdelta", gi), 0, 1, integer=True)
        g_w[gi] = add_var(("gw", gi), 0, 1)
    for o in orders:
        if o.id in idr_of:
            continue
        needs_delta = o.q_min > TOL or o.id in coupled
        if needs_delta:
            delta_of[o.id] = add_var(("delta", o.id), 0, 1, integer=True)
            y_of[o.id] = add_var(("y", o.id), 0, max(0.0, o.q_max - o.q_min))
        else:
            y_of[o.id] = add_var(("y", o.id), 0, max(0.0, o.q_max))

    def q_expr(o: Order) -> list[tuple[int, float]]:
        """q as [(var index, coefficient)] terms."""
        if o.id in idr_of:
            gi = idr_of[o.id]
            return [(g_delta[gi], o.q_min), (g_w[gi], o.q_max - o.q_min)]
        terms = [(y_of[o.id], 1.0)]
        if o.id in delta_of:
            terms.append((delta_of[o.id], o.q_min))
        return terms

    def order_delta(oid: str) -> int:
        if oid in idr_of:
            return g_delta[idr_of[oid]]
        return delta_of[oid]

    rows = []
    row_lb = []
    row_ub = []

    def add_row(terms, lb, ub):
        row = np.zeros(len(names))
        for j, coef in terms:
            row[j] += coef
        rows.append(row)
        row_lb.append(lb)
        row_ub.append(ub)

    # semi-continuity: y <= (q_max - q_min) * delta ; w <= group delta
    for oid, di in delta_of.items():
        o = by_id[oid]
        add_row([(y_of[oid], 1.0), (di, -(o.q_max - o.q_min))], -np.inf, 0.0)
    for gi in range(len(idr_groups)):
        add_row([(g_w[gi], 1.0), (g_delta[gi], -1.0)], -np.inf, 0.0)

    for c in couplings:
        if c.kind is CouplingKind.EXCLUSION:
            add_row([(order_delta(oid), 1.0) for oid in c.order_ids], -np.inf, 1.0)
        elif c.kind is CouplingKind.PARENT_CHILDREN:
            parent = c.order_ids[0]
            for child in c.order_ids[1:]:
                add_row([(order_delta(child), 1.0), (order_delta(parent), -1.0)],
                        -np.inf, 0.0)

    cells: dict[tuple, list[Order]] = {}
    for o in orders:
        cells.setdefault(_cell(o, area_map), []).append(o)
    for cell_orders in cells.values():
        terms = []
        for o in cell_orders:
            s = trade_side(o)
            terms.extend((j, s * coef) for j, coef in q_expr(o))
        add_row(terms, 0.0, 0.0)

    c_vec = np.zeros(len(names))
    for o in orders:
        s = trade_side(o)
        for j, coef in q_expr(o):
            c_vec[j] -= s * o.price * coef  # milp minimizes

    constraints = []
    if rows:
        constraints.append(LinearConstraint(np.vstack(rows), row_lb, row_ub))
    res = milp(c_vec, constraints=constraints,
               integrality=np.array(integrality),
               bounds=Bounds(np.array(lo), np.array(hi)),
               options={"mip_rel_gap": 0.0})
    if res.status != 0 or res.x is None:
        raise InfeasibleClearing(f"solver failed with status {res.status}: {res.message}",
                                 tuple(couplings))

    q_acc = {}
    for o in orders:
        q = float(sum(res.x[j] * coef for j, coef in q_expr(o)))
        if q < ACCEPT_TOL:
            q = 0.0
        q_acc[o.id] = min(q, o.q_max)
    return q_acc


def _prorate_ties(orders: list[Order], couplings: list[Coupling],
                  q_acc: dict[str, float], area_map: dict | None):
    """Equal-price divisible uncoupled orders on the same cell and side
    share their accepted volume pro-rata by q_max."""
    coupled = {oid for c in couplings for oid in c.order_ids}
    groups: dict[tuple, list[Order]] = {}
    for o in orders:
        if o.id in coupled or o.q_min > TOL:
            continue
        key = (_cell(o, area_map), trade_side(o), round(o.price, 9))
        groups.setdefault(key, []).append(o)
    for group in groups.values():
        if len(group) < 2:
            continue
        total = sum(q_acc[o.id] for o in group)
        cap = sum(o.q_max for o in group)
        if cap <= 0 or total <= 0:
            continue
        for o in group:
            q_acc[o.id] = o.q_max * total / cap


def _marginal_prices(orders: list[Order], q_acc: dict[str, float],
                     area_map: dict | None) -> tuple[dict, set]:
    prices: dict[tuple, float | None] = {}
    flagged: set[str] = set()
    cells: dict[tuple, list[Order]] = {}
    for o in orders:
        cells.setdefault(_cell(o, area_map), []).append(o)
    for cell, cell_orders in cells.items():
        acc = [o for o in cell_orders if q_acc.get(o.id, 0.0) > ACCEPT_TOL]
        if not acc:
            prices[cell] = None
            continue
        bsp = [o for o in acc if not o.is_tso]
        divisible = [o for o in bsp if o.divisible()]
        partial = [o for o in divisible
                   if q_acc[o.id] < o.q_max - 1e-6 and q_acc[o.id] > o.q_min + 1e-6]
        sells = [o for o in divisible if trade_side(o) < 0]
        buys = [o for o in divisible if trade_side(o) > 0]
        price: float | None
        p_sells = [o for o in partial if trade_side(o) < 0]
        p_buys = [o for o in partial if trade_side(o) > 0]
        if p_sells:
            price = max(o.price for o in p_sells)
        elif p_buys:
            price = min(o.price for o in p_buys)
        elif sells:
            price = max(o.price for o in sells)
        elif buys:
            price = min(o.price for o in buys)
        elif bsp:  # only indivisible volume cleared
            ind_sells = [o for o in bsp if trade_side(o) < 0]
            price = (max(o.price for o in ind_sells) if ind_sells
                     else min(o.price for o in bsp))
        else:
            price = None
        prices[cell] = price
        if price is not None:
            for o in bsp:
                if trade_side(o) < 0 and o.price > price + 1e-6:
                    flagged.add(o.id)
                elif trade_side(o) > 0 and o.price < price - 1e-6:
                    flagged.add(o.id)
    return prices, flagged


def clear(orders: list[Order], couplings: list[Coupling], dt_minutes: int,
          area_map: dict | None = None) -> ClearingResult:
    """Clear the order book; dt_minutes converts MW quantities to energy
    for the surplus objective. area_map pools market areas into their
    control area (identity when omitted)."""
    validate_couplings(orders, couplings)
    q_acc: dict[str, float] = {o.id: 0.0 for o in orders}
    for comp_orders, comp_couplings in _components(orders, couplings, area_map):
        q_acc.update(_solve_component(comp_orders, comp_couplings, area_map))
    _prorate_ties(orders, couplings, q_acc, area_map)
    prices, flagged = _marginal_prices(orders, q_acc, area_map)
    objective = sum(trade_side(o) * o.price * q_acc[o.id] for o in orders) * dt_minutes / 60.0
    accepted = {oid: bool(q > ACCEPT_TOL) for oid, q in q_acc.items()}
    return ClearingResult(q_acc=q_acc, accepted=accepted, prices=prices,
                          objective=objective, out_of_merit=flagged)


# ---------------------------------------------------------------------------
# Brute-force oracle

def _sweep_match(items: list[tuple[int, float, float]], target: float):
    """Maximize sum(s*p*x) over x in [0, cap] subject to sum(s*x) = target.

    items are (side, cap, price). Returns (value, allocations) or None
    when the target is unreachable. Merit-order threshold sweep: at
    threshold price lam, buys above lam and sells below lam trade in
    full, orders at lam absorb the residual.
    """
    eps = 1e-9
    lams = sorted({p for _, _, p in items})
    if not lams:
        return (0.0, []) if abs(target) <= eps else None
    for lam in lams:
        base = 0.0
        value = 0.0
        marg_buy = marg_sell = 0.0
        alloc = [0.0] * len(items)
        for k, (s, cap, p) in enumerate(items):
            if s > 0 and p > lam + eps:
                base += cap
                value += p * cap
                alloc[k] = cap
            elif s < 0 and p < lam - eps:
                base -= cap
                value -= p * cap
                alloc[k] = cap
            elif abs(p - lam) <= eps:
                if s > 0:
                    marg_buy += cap
                else:
                    marg_sell += cap
        if base - marg_sell - eps <= target <= base + marg_buy + eps:
            residual = target - base
            need_side = 1 if residual > 0 else -1
            left = abs(residual)
            for k, (s, cap, p) in enumerate(items):
                if left <= eps:
                    break
                if abs(p - lam) <= eps and s == need_side and alloc[k] == 0.0:
                    take = min(cap, left)
                    alloc[k] = take
                    left -= take
            return value + lam * residual, alloc
    return None


def _sweep_breakpoints(items: list[tuple[int, float, float]]) -> list[float]:
    """Net-position values at which the sweep's marginal order changes."""
    pts = set()
    for lam in sorted({p for _, _, p in items}):
        base = sum(cap if s > 0 else -cap for s, cap, p in items
                   if (s > 0 and p > lam + 1e-9) or (s < 0 and p < lam - 1e-9))
        marg_buy = sum(cap for s, cap, p in items if s > 0 and abs(p - lam) <= 1e-9)
        marg_sell = sum(cap for s, cap, p in items if s < 0 and abs(p - lam) <= 1e-9)
        pts.add(base - marg_sell)
        pts.add(base + marg_buy)
    return sorted(pts)


def brute_force_clear(orders: list[Order], couplings: list[Coupling],
                      dt_minutes: int, area_map: dict | None = None) -> ClearingResult:
    """Exhaustive-search optimum of the clearing surplus (test oracle).

    Enumerates every acceptance pattern of coupled or indivisible orders,
    closes each balance cell with the threshold sweep, and scans the
    identical-ratio breakpoints exactly. Limited to 12 orders and at most
    one simultaneously-active identical-ratio group. Marginal prices are
    not part of the oracle contract and are left empty.
    """
    if len(orders) > 12:
        raise OracleTooLarge(f"{len(orders)} orders exceed the oracle limit of 12")
    validate_couplings(orders, couplings)
    idr_groups = [c for c in couplings if c.kind is CouplingKind.IDENTICAL_RATIO]
    idr_of: dict[str, int] = {}
    for gi, c in enumerate(idr_groups):
        for oid in c.order_ids:
            if oid in idr_of:
                raise OracleTooLarge("order in two identical-ratio groups")
            idr_of[oid] = gi
    exclusions = [c for c in couplings if c.kind is CouplingKind.EXCLUSION]
    pcs = [c for c in couplings if c.kind is CouplingKind.PARENT_CHILDREN]
    coupled = {oid for c in couplings for oid in c.order_ids}
    entities: list[tuple] = [("g", gi) for gi in range(len(idr_groups))]
    entities += [("o", o.id) for o in orders
                 if o.id not in idr_of and (o.id in coupled or o.q_min > TOL)]
    free = [o for o in orders if o.id not in idr_of
            and not (o.id in coupled or o.q_min > TOL)]

    best = None
    for bits in itertools.product((0, 1), repeat=len(entities)):
        state = dict(zip(entities, bits))

        def on(oid: str) -> int:
            if oid in idr_of:
                return state[("g", idr_of[oid])]
            return state.get(("o", oid), 0)

        if any(sum(on(oid) for oid in c.order_ids) > 1 for c in exclusions):
            continue
        if any(on(child) > on(c.order_ids[0]) for c in pcs for child in c.order_ids[1:]):
            continue
        active_groups = [gi for gi in range(len(idr_groups)) if state[("g", gi)]]
        if len(active_groups) > 1:
            raise OracleTooLarge("more than one active identical-ratio group")

        cells: dict[tuple, dict] = {}

        def cell_of(o: Order) -> dict:
            return cells.setdefault(_cell(o, area_map),
                                    {"base": 0.0, "coef": 0.0, "items": [], "ids": []})

        fixed_q: dict[str, float] = {}
        r_q_coef: dict[str, float] = {}
        fixed_value = 0.0
        r_value_coef = 0.0
        for o in orders:
            s = trade_side(o)
            if o.id in idr_of:
                if state[("g", idr_of[o.id])]:
                    c = cell_of(o)
                    c["base"] += s * o.q_min
                    c["coef"] += s * (o.q_max - o.q_min)
                    fixed_value += s * o.price * o.q_min
                    r_value_coef += s * o.price * (o.q_max - o.q_min)
                    fixed_q[o.id] = o.q_min
                    r_q_coef[o.id] = o.q_max - o.q_min
            elif ("o", o.id) in state:
                if state[("o", o.id)]:
                    c = cell_of(o)
                    c["base"] += s * o.q_min
                    fixed_value += s * o.price * o.q_min
                    fixed_q[o.id] = o.q_min
                    c["items"].append((s, o.q_max - o.q_min, o.price))
                    c["ids"].append(o.id)
            else:
                c = cell_of(o)
                c["items"].append((s, o.q_max, o.price))
                c["ids"].append(o.id)

        def evaluate(r: float):
            total = fixed_value + r * r_value_coef
            q = {oid: base + r * r_q_coef.get(oid, 0.0) for oid, base in fixed_q.items()}
            for c in cells.values():
                target = -(c["base"] + r * c["coef"])
                hit = _sweep_match(c["items"], target)
                if hit is None:
                    return None
                v, alloc = hit
                total += v
                for oid, x in zip(c["ids"], alloc):
                    q[oid] = q.get(oid, 0.0) + x
            return total, q

        candidates = {0.0, 1.0} if active_groups else {0.0}
        if active_groups:
            for c in cells.values():
                if abs(c["coef"]) < TOL:
                    continue
                for bp in _sweep_breakpoints(c["items"]):
                    r = (-c["base"] - bp) / c["coef"]
                    if -TOL <= r <= 1 + TOL:
                        candidates.add(min(1.0, max(0.0, r)))
        for r in sorted(candidates):
            hit = evaluate(r)
            if hit is not None and (best is None or hit[0] > best[0]):
                best = hit
    if best is None:
        raise InfeasibleClearing("no feasible acceptance pattern", tuple(couplings))
    value, best_q = best
    q_acc = {o.id: best_q.get(o.id, 0.0) for o in orders}
    return ClearingResult(
        q_acc=q_acc,
        accepted={oid: q > ACCEPT_TOL for oid, q in q_acc.items()},
        prices={},
        objective=value * dt_minutes / 60.0)
