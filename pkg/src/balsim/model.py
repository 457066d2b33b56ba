"""Domain types shared by every stage: market configuration, units,
control areas, orders, couplings and dataset validation.

Conventions
-----------
* Timestamps are minute-resolution integers from the scenario epoch.
* A negative power plan is a consumption (loads store negative plans).
* ``ramp_max = 0`` encodes an infinite ramping limit.
* Order direction ``sigma``: -1 labels the upward direction (a BSP sale),
  +1 the downward direction (a BSP purchase). TSO orders reuse the same
  direction label but sit on the opposite trading side, see
  :func:`trade_side`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .series import TimeSeries, as_series

RESERVE_TYPES = ("FCR", "aFRR", "mFRR", "RR")
UP, DN = "up", "dn"

DEFAULT_VOLL = 26_000.0
DEFAULT_PRICE_CAP = 10_000.0
SPILL_OPT_PENALTY = 26_000.0  # internal spillage coefficient of the BM objective

# Day-ahead/mFRR price ratios per absolute imbalance band (MW), downward
# and upward, used as the default alternative-market estimate.
MFRR_RATIO_TABLE = (
    (0.0, 300.0, 0.81, 1.28),
    (300.0, 600.0, 0.76, 1.33),
    (600.0, 900.0, 0.73, 1.36),
    (900.0, 1200.0, 0.70, 1.37),
    (1200.0, 1500.0, 0.70, 1.38),
    (1500.0, float("inf"), 0.59, 1.47),
)

DEFAULT_HYDRO_SPREADS = (-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0)
HYDRO_FRAGMENTS = 7


class MarketKind(str, enum.Enum):
    RR = "RR"
    MFRR = "mFRR"
    BM = "BM"


class UnitType(str, enum.Enum):
    THERMAL = "thermal"
    HYDRAULIC = "hydraulic"
    STORAGE = "storage"
    PHS_STORAGE = "phs_storage"
    WIND = "wind"
    PV = "pv"
    FLEXIBLE_LOAD = "flexible_load"
    NONDISPATCHABLE_LOAD = "nondispatchable_load"


LOAD_TYPES = (UnitType.FLEXIBLE_LOAD, UnitType.NONDISPATCHABLE_LOAD)
STORAGE_TYPES = (UnitType.STORAGE, UnitType.PHS_STORAGE)
GENERATION_TYPES = (UnitType.THERMAL, UnitType.HYDRAULIC, UnitType.STORAGE,
                    UnitType.PHS_STORAGE, UnitType.WIND, UnitType.PV)
VRE_TYPES = (UnitType.WIND, UnitType.PV)


class CouplingKind(str, enum.Enum):
    EXCLUSION = "Exclusion"
    PARENT_CHILDREN = "ParentChildren"
    IDENTICAL_RATIO = "IdenticalRatio"


class OrderKind(str, enum.Enum):
    NORMAL = "normal"
    STARTUP_BOTTOM = "startup_bottom"
    STARTUP_TOP = "startup_top"
    SHUTDOWN = "shutdown"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MarketConfig:
    market_kind: MarketKind
    t_ex: int
    t_start: int
    t_end: int
    dt_minutes: int
    gct_bsp_offset_min: int = 0
    gct_tso_offset_min: int = 0

    @classmethod
    def rr(cls, t_start: int, t_ex: int | None = None) -> "MarketConfig":
        # hourly market, 1 h effective frame, results 30 min ahead of delivery
        return cls(MarketKind.RR, t_start - 30 if t_ex is None else t_ex,
                   t_start, t_start + 60, 60, gct_bsp_offset_min=55, gct_tso_offset_min=40)

    @classmethod
    def mfrr(cls, t_start: int, t_ex: int | None = None) -> "MarketConfig":
        # quarter-hourly market, 15 min effective frame
        return cls(MarketKind.MFRR, t_start - 8 if t_ex is None else t_ex,
                   t_start, t_start + 15, 15, gct_bsp_offset_min=25, gct_tso_offset_min=10)

    def frame_minutes(self) -> int:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class TimeGrid:
    steps: tuple[int, ...]
    dt: int

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    @property
    def start(self) -> int:
        return self.steps[0]

    @property
    def end(self) -> int:
        return self.steps[-1] + self.dt


def time_grid(config: MarketConfig) -> TimeGrid:
    """Effective market time frame [t_start, t_start+dt, ..., t_end-dt]."""
    span = config.t_end - config.t_start
    if span <= 0:
        raise ConfigError("t_start must precede t_end")
    if config.dt_minutes <= 0:
        raise ConfigError("dt_minutes must be positive")
    if span % config.dt_minutes:
        raise ConfigError(f"frame of {span} min is not divisible by dt={config.dt_minutes}")
    steps = tuple(range(config.t_start, config.t_end, config.dt_minutes))
    return TimeGrid(steps=steps, dt=config.dt_minutes)


@dataclass(frozen=True)
class WaterValueTable:
    """Marginal storage value (€/MWh) on a (time, stored energy) grid,
    read with bilinear interpolation clamped at the table edges."""
    times: tuple[int, ...]
    levels: tuple[float, ...]
    values: tuple[tuple[float, ...], ...]  # values[i][j] at (times[i], levels[j])

    def value(self, t: int, stored: float) -> float:
        ts, ls = self.times, self.levels

        def axis(points, x):
            if x <= points[0]:
                return 0, 0, 0.0
            if x >= points[-1]:
                return len(points) - 1, len(points) - 1, 0.0
            for k in range(len(points) - 1):
                if points[k] <= x <= points[k + 1]:
                    w = (x - points[k]) / (points[k + 1] - points[k])
                    return k, k + 1, w
            raise AssertionError

        i0, i1, wt = axis(ts, t)
        j0, j1, wl = axis(ls, stored)
        v00, v01 = self.values[i0][j0], self.values[i0][j1]
        v10, v11 = self.values[i1][j0], self.values[i1][j1]
        lo = v00 * (1 - wl) + v01 * wl
        hi = v10 * (1 - wl) + v11 * wl
        return lo * (1 - wt) + hi * wt


@dataclass(frozen=True)
class Unit:
    id: str
    unit_type: UnitType
    area_id: str
    portfolio_id: str = ""
    p_max: TimeSeries = field(default_factory=lambda: TimeSeries.constant(0.0))
    p_min: TimeSeries = field(default_factory=lambda: TimeSeries.constant(0.0))
    p_plan: TimeSeries = field(default_factory=lambda: TimeSeries.constant(0.0))
    p_forecast: TimeSeries | None = None  # wind/pv/load only
    ramp_max: TimeSeries = field(default_factory=lambda: TimeSeries.constant(0.0))  # MW/min, 0 = infinite
    c_var: float = 0.0
    c_su: float = 0.0
    fuel: str = ""  # thermal fuel group, used by the FrBM pool draw
    d_notice: int = 0
    d_su: int = 0
    d_sd: int = 0
    d_min_on: int = 0
    d_min_off: int = 0
    d_min_stable: int = 0
    d_tran: int = 0
    curtailment_ratio: float = 0.0
    reserves: dict = field(default_factory=dict)  # (res_type, direction) -> TimeSeries
    e_stored: TimeSeries | None = None
    e_max: TimeSeries | None = None
    e_min: TimeSeries | None = None
    water_values: WaterValueTable | None = None
    hydro_spreads: tuple[float, ...] = DEFAULT_HYDRO_SPREADS
    charge_eff: float = 1.0
    discharge_eff: float = 1.0

    def reserve(self, res_type: str, direction: str, t: int) -> float:
        s = self.reserves.get((res_type, direction))
        return s.at(t) if s is not None else 0.0

    def reserve_total(self, direction: str, t: int, exclude: str | None = None) -> float:
        return sum(self.reserve(rt, direction, t) for rt in RESERVE_TYPES if rt != exclude)

    def is_storage(self) -> bool:
        return self.unit_type in STORAGE_TYPES

    def is_load(self) -> bool:
        return self.unit_type in LOAD_TYPES

    def water_value(self, t: int) -> float:
        if self.water_values is None or self.e_stored is None:
            return self.c_var
        return self.water_values.value(t, self.e_stored.at(t))


@dataclass(frozen=True)
class TsoParams:
    delta_for: bool = False
    delta_elas: bool = False
    alt: str = "mFRRalt"  # "mFRRalt" | "FrBMalt"
    v_slice: float = 100.0
    delta_risk: bool = False
    # (alpha, epsilon) pairs, strictly increasing in both; first and last
    # entries are the outer-bound sentinels (alpha_min / alpha_max).
    quantiles: tuple[tuple[float, float], ...] = ()
    rho_frbm: float = 0.5
    lambda_da: float = 0.0  # day-ahead price reference for the mFRR alternative


@dataclass(frozen=True)
class ControlArea:
    id: str
    market_area_ids: tuple[str, ...]
    tso_params: TsoParams = field(default_factory=TsoParams)
    commercial_balance: dict = field(default_factory=dict)  # market area id -> TimeSeries


@dataclass(frozen=True)
class GlobalParams:
    voll: float = DEFAULT_VOLL
    p_spill: float = 1_000.0
    p_redispatch: float = 6_000.0
    h_da_ex: int = 12  # hour of day the day-ahead market executes
    price_cap: float = DEFAULT_PRICE_CAP
    mfrr_ratio_table: tuple = MFRR_RATIO_TABLE


@dataclass
class Order:
    id: str
    area_id: str
    price: float
    q_min: float
    q_max: float
    t_start: int
    t_end: int
    t_ex: int
    sigma: int  # -1 upward, +1 downward
    unit_id: str | None = None
    is_tso: bool = False
    kind: OrderKind = OrderKind.NORMAL
    q_acc: float = 0.0
    accepted: bool = False
    completely_exclusive: bool = False

    def divisible(self) -> bool:
        return self.q_max > self.q_min


def trade_side(order: Order) -> int:
    """+1 if the order buys energy from the market, -1 if it sells.

    BSP orders trade in the direction of their sigma; a TSO order carries
    the direction label of the needs it covers and therefore sits on the
    opposite side (an upward need buys the energy that upward BSP sales
    provide).
    """
    return -order.sigma if order.is_tso else order.sigma


@dataclass(frozen=True)
class Coupling:
    kind: CouplingKind
    order_ids: tuple[str, ...]  # ParentChildren: first id is the parent

    def __post_init__(self):
        object.__setattr__(self, "order_ids", tuple(self.order_ids))


@dataclass
class Dataset:
    global_params: GlobalParams = field(default_factory=GlobalParams)
    control_areas: list[ControlArea] = field(default_factory=list)
    units: list[Unit] = field(default_factory=list)
    couplings: list[Coupling] = field(default_factory=list)

    def unit(self, unit_id: str) -> Unit:
        return self._unit_index()[unit_id]

    def _unit_index(self) -> dict:
        return {u.id: u for u in self.units}

    def area_of(self, market_area_id: str) -> ControlArea | None:
        for ca in self.control_areas:
            if market_area_id in ca.market_area_ids or market_area_id == ca.id:
                return ca
        return None

    def units_in(self, ca: ControlArea) -> list[Unit]:
        zones = set(ca.market_area_ids)
        return [u for u in self.units if u.area_id in zones]

    def portfolio_plan(self, portfolio_id: str, grid: TimeGrid) -> list[float]:
        members = [u for u in self.units if u.portfolio_id == portfolio_id]
        return [sum(u.p_plan.at(t) for u in members) for t in grid]

    def with_units(self, units: list[Unit]) -> "Dataset":
        return Dataset(global_params=self.global_params,
                       control_areas=self.control_areas,
                       units=units, couplings=self.couplings)


@dataclass(frozen=True)
class Violation:
    path: str
    rule: str

    def __str__(self):
        return f"{self.path}: {self.rule}"


def _series_pair_violates(low: TimeSeries, high: TimeSeries) -> bool:
    pts = sorted(set(low.breakpoints()) | set(high.breakpoints()))
    return any(low.at(t) > high.at(t) + 1e-9 for t in pts)


def validate_dataset(ds: Dataset) -> list[Violation]:
    """Check type invariants and referential integrity; empty list = valid."""
    out: list[Violation] = []
    zone_owner: dict[str, str] = {}
    for ca in ds.control_areas:
        for z in ca.market_area_ids:
            if z in zone_owner:
                out.append(Violation(f"control_areas[{ca.id}]",
                                     f"market area {z} already belongs to {zone_owner[z]}"))
            zone_owner[z] = ca.id
        p = ca.tso_params
        if p.v_slice <= 0:
            out.append(Violation(f"control_areas[{ca.id}].tso_params", "v_slice must be positive"))
        if not 0.0 <= p.rho_frbm <= 1.0:
            out.append(Violation(f"control_areas[{ca.id}].tso_params", "rho_frbm outside [0,1]"))
        qs = p.quantiles
        if qs:
            alphas = [a for a, _ in qs]
            epss = [e for _, e in qs]
            if sorted(alphas) != alphas or len(set(alphas)) != len(alphas):
                out.append(Violation(f"control_areas[{ca.id}].tso_params",
                                     "quantile alphas not strictly increasing"))
            if sorted(epss) != epss or len(set(epss)) != len(epss):
                out.append(Violation(f"control_areas[{ca.id}].tso_params",
                                     "quantile epsilons not strictly increasing"))

    seen_units = set()
    for u in ds.units:
        path = f"units[{u.id}]"
        if u.id in seen_units:
            out.append(Violation(path, "duplicate unit id"))
        seen_units.add(u.id)
        if zone_owner and u.area_id not in zone_owner:
            out.append(Violation(path, f"dangling area reference {u.area_id!r}"))
        if _series_pair_violates(u.p_min, u.p_max):
            out.append(Violation(path, "p_min exceeds p_max"))
        if not 0.0 <= u.curtailment_ratio <= 1.0:
            out.append(Violation(path, "curtailment_ratio outside [0,1]"))
        for (rt, direction), s in u.reserves.items():
            if rt not in RESERVE_TYPES or direction not in (UP, DN):
                out.append(Violation(path, f"unknown reserve key ({rt}, {direction})"))
            elif any(v < 0 for v in s.values):
                out.append(Violation(path, f"negative {rt}/{direction} reserve"))
        if u.e_stored is not None:
            if u.e_min is not None and _series_pair_violates(u.e_min, u.e_stored):
                out.append(Violation(path, "e_stored below e_min"))
            if u.e_max is not None and _series_pair_violates(u.e_stored, u.e_max):
                out.append(Violation(path, "e_stored above e_max"))
        if u.unit_type in VRE_TYPES or u.unit_type in LOAD_TYPES:
            if u.p_forecast is None:
                out.append(Violation(path, "forecast-driven unit lacks p_forecast"))
        if u.is_storage() and not (0 < u.charge_eff <= 1 and 0 < u.discharge_eff <= 1):
            out.append(Violation(path, "efficiencies must lie in (0,1]"))

    gp = ds.global_params
    if gp.price_cap <= 0:
        out.append(Violation("global_params", "price_cap must be positive"))
    if gp.voll <= 0 or gp.p_redispatch <= 0:
        out.append(Violation("global_params", "voll and p_redispatch must be positive"))

    unit_ids = seen_units
    for i, c in enumerate(ds.couplings):
        if len(c.order_ids) < 2:
            out.append(Violation(f"couplings[{i}]", "coupling needs at least 2 orders"))
    _ = unit_ids
    return out
