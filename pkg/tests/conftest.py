import pytest

from balsim.model import (ControlArea, Dataset, GlobalParams, MarketConfig,
                          MarketKind, TsoParams, Unit, UnitType)
from balsim.series import TimeSeries, as_series


def series(value):
    return as_series(value)


def make_unit(id="u1", unit_type=UnitType.THERMAL, area_id="Z1", **kw):
    unit_type = UnitType(unit_type)
    defaults = dict(portfolio_id="PF1", p_max=100.0, p_min=0.0, p_plan=0.0,
                    ramp_max=0.0, c_var=50.0, c_su=0.0)
    defaults.update(kw)
    for name in ("p_max", "p_min", "p_plan", "p_forecast", "ramp_max",
                 "e_stored", "e_max", "e_min"):
        if name in defaults and defaults[name] is not None and not isinstance(
                defaults[name], TimeSeries):
            defaults[name] = as_series(defaults[name])
    reserves = defaults.pop("reserves", {})
    defaults["reserves"] = {k: as_series(v) for k, v in reserves.items()}
    return Unit(id=id, unit_type=unit_type, area_id=area_id, **defaults)


def make_cfg(kind=MarketKind.RR, t_ex=690, t_start=720, steps=1, dt=60):
    return MarketConfig(kind, t_ex, t_start, t_start + steps * dt, dt)


def make_dataset(units, areas=None, gp=None, tso=None):
    if areas is None:
        areas = [ControlArea(id="CA1", market_area_ids=("Z1",),
                             tso_params=tso or TsoParams())]
    return Dataset(global_params=gp or GlobalParams(), control_areas=areas,
                   units=list(units))


@pytest.fixture
def rr_cfg():
    return make_cfg()


@pytest.fixture
def rr_cfg_2step():
    return make_cfg(steps=2)
