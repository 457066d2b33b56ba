#!/usr/bin/env python3
"""Regenerate scenarios/demo.json, the bundled 6-unit demo.

One French-style control area over a single RR hour: a running CCGT, an
offline coal unit (startable), a hydro reservoir with water values, a
pumping PHS unit, a wind farm and one inelastic load. The TSO bids an
elastic curve priced against the projected mFRR alternative. Run from
the repository root:

    python scripts/make_demo_scenario.py
"""
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from balsim.model import (ControlArea, Dataset, GlobalParams, MarketConfig,
                          MarketKind, TsoParams, Unit, UnitType, WaterValueTable)
from balsim.scenario import dumps, scenario_to_json
from balsim.series import TimeSeries, as_series


def c(v):
    return as_series(v)


def build():
    cfg = MarketConfig.rr(t_start=720)
    bm_cfg = MarketConfig(MarketKind.BM, t_ex=cfg.t_ex, t_start=720, t_end=780,
                          dt_minutes=60)

    units = [
        Unit(id="ccgt-1", unit_type=UnitType.THERMAL, area_id="FR0",
             portfolio_id="PF-A", p_max=c(400.0), p_min=c(120.0), p_plan=c(250.0),
             ramp_max=c(5.0), c_var=65.0, c_su=20_000.0, fuel="ccgt",
             d_notice=15, d_su=60, d_min_on=120, d_min_off=60,
             reserves={("aFRR", "up"): c(20.0), ("aFRR", "dn"): c(20.0)}),
        Unit(id="coal-1", unit_type=UnitType.THERMAL, area_id="FR0",
             portfolio_id="PF-A", p_max=c(300.0), p_min=c(100.0), p_plan=c(0.0),
             ramp_max=c(4.0), c_var=45.0, c_su=30_000.0, fuel="coal",
             d_notice=0, d_su=30, d_min_on=60, d_min_off=60),
        Unit(id="hydro-1", unit_type=UnitType.HYDRAULIC, area_id="FR0",
             portfolio_id="PF-B", p_max=c(280.0), p_min=c(0.0), p_plan=c(120.0),
             c_var=60.0, e_stored=c(1800.0), e_min=c(500.0), e_max=c(2400.0),
             water_values=WaterValueTable(times=(0, 1440), levels=(500.0, 2400.0),
                                          values=((72.0, 55.0), (74.0, 57.0))),
             hydro_spreads=(-12.0, -8.0, -4.0, 0.0, 4.0, 8.0, 12.0)),
        Unit(id="phs-1", unit_type=UnitType.PHS_STORAGE, area_id="FR0",
             portfolio_id="PF-B", p_max=c(150.0), p_min=c(-150.0), p_plan=c(-50.0),
             c_var=70.0, d_tran=90, e_stored=c(400.0), e_min=c(50.0), e_max=c(800.0),
             charge_eff=0.85, discharge_eff=0.9),
        Unit(id="wind-1", unit_type=UnitType.WIND, area_id="FR0",
             portfolio_id="PF-B", p_max=c(200.0), p_plan=c(160.0),
             p_forecast=c(180.0), c_var=0.0, curtailment_ratio=0.15),
        Unit(id="load-1", unit_type=UnitType.NONDISPATCHABLE_LOAD, area_id="FR0",
             portfolio_id="PF-C", p_plan=c(-800.0), p_forecast=c(-810.0)),
    ]
    area = ControlArea(
        id="FR", market_area_ids=("FR0",),
        tso_params=TsoParams(delta_for=True, delta_elas=True, alt="mFRRalt",
                             v_slice=50.0, lambda_da=85.0),
        commercial_balance={"FR0": c(10.0)})
    ds = Dataset(global_params=GlobalParams(p_spill=1_500.0, p_redispatch=7_000.0),
                 control_areas=[area], units=units)
    return cfg, bm_cfg, ds


def main():
    out = os.path.join(os.path.dirname(__file__), "..", "scenarios", "demo.json")
    os.makedirs(os.path.dirname(out), exist_ok=True)
    cfg, bm_cfg, ds = build()
    with open(out, "w") as fh:
        fh.write(dumps(scenario_to_json(cfg, bm_cfg, ds)))
    print(f"wrote {os.path.normpath(out)}")


if __name__ == "__main__":
    main()
