"""Scenario and artifact (de)serialization.

A scenario is one JSON document::

    {
      "config": {...},            # market configuration
      "bm_config": {...},         # optional balancing-mechanism frame
      "global_params": {...},
      "control_areas": [...],
      "units": [...],
      "couplings": [...]
    }

Per-step values are plain numbers (constant over time) or
``{"start": minutes, "dt": minutes, "values": [...]}`` step functions.
All dumps are canonical (sorted keys) so identical inputs reproduce
byte-identical artifacts.
"""
from __future__ import annotations

import json
from dataclasses import asdict

from .model import (Coupling, CouplingKind, ControlArea, Dataset, GlobalParams,
                    MarketConfig, MarketKind, Order, OrderKind, TsoParams, Unit,
                    UnitType, WaterValueTable, MFRR_RATIO_TABLE,
                    DEFAULT_HYDRO_SPREADS, RESERVE_TYPES, UP, DN)
from .series import TimeSeries, as_series, series_to_json


def _opt_series(obj, key):
    v = obj.get(key)
    return None if v is None else as_series(v)


def config_from_json(obj: dict) -> MarketConfig:
    return MarketConfig(
        market_kind=MarketKind(obj["market_kind"]),
        t_ex=int(obj["t_ex"]),
        t_start=int(obj["t_start"]),
        t_end=int(obj["t_end"]),
        dt_minutes=int(obj["dt_minutes"]),
        gct_bsp_offset_min=int(obj.get("gct_bsp_offset_min", 0)),
        gct_tso_offset_min=int(obj.get("gct_tso_offset_min", 0)),
    )


def config_to_json(cfg: MarketConfig) -> dict:
    d = asdict(cfg)
    d["market_kind"] = cfg.market_kind.value
    return d


def unit_from_json(obj: dict) -> Unit:
    reserves = {}
    for rt, dirs in obj.get("reserves", {}).items():
        for direction, series in dirs.items():
            reserves[(rt, direction)] = as_series(series)
    wv = None
    if obj.get("water_values") is not None:
        w = obj["water_values"]
        wv = WaterValueTable(times=tuple(int(t) for t in w["times"]),
                             levels=tuple(float(x) for x in w["levels"]),
                             values=tuple(tuple(float(v) for v in row) for row in w["values"]))
    return Unit(
        id=obj["id"],
        unit_type=UnitType(obj["unit_type"]),
        area_id=obj["area_id"],
        portfolio_id=obj.get("portfolio_id", ""),
        p_max=as_series(obj.get("p_max", 0.0)),
        p_min=as_series(obj.get("p_min", 0.0)),
        p_plan=as_series(obj.get("p_plan", 0.0)),
        p_forecast=_opt_series(obj, "p_forecast"),
        ramp_max=as_series(obj.get("ramp_max", 0.0)),
        c_var=float(obj.get("c_var", 0.0)),
        c_su=float(obj.get("c_su", 0.0)),
        fuel=obj.get("fuel", ""),
        d_notice=int(obj.get("d_notice", 0)),
        d_su=int(obj.get("d_su", 0)),
        d_sd=int(obj.get("d_sd", 0)),
        d_min_on=int(obj.get("d_min_on", 0)),
        d_min_off=int(obj.get("d_min_off", 0)),
        d_min_stable=int(obj.get("d_min_stable", 0)),
        d_tran=int(obj.get("d_tran", 0)),
        curtailment_ratio=float(obj.get("curtailment_ratio", 0.0)),
        reserves=reserves,
        e_stored=_opt_series(obj, "e_stored"),
        e_max=_opt_series(obj, "e_max"),
        e_min=_opt_series(obj, "e_min"),
        water_values=wv,
        hydro_spreads=tuple(obj.get("hydro_spreads", DEFAULT_HYDRO_SPREADS)),
        charge_eff=float(obj.get("charge_eff", 1.0)),
        discharge_eff=float(obj.get("discharge_eff", 1.0)),
    )


def unit_to_json(u: Unit) -> dict:
    reserves: dict = {}
    for (rt, direction), s in sorted(u.reserves.items()):
        reserves.setdefault(rt, {})[direction] = series_to_json(s)
    out = {
        "id": u.id,
        "unit_type": u.unit_type.value,
        "area_id": u.area_id,
        "portfolio_id": u.portfolio_id,
        "p_max": series_to_json(u.p_max),
        "p_min": series_to_json(u.p_min),
        "p_plan": series_to_json(u.p_plan),
        "ramp_max": series_to_json(u.ramp_max),
        "c_var": u.c_var,
        "c_su": u.c_su,
        "fuel": u.fuel,
        "d_notice": u.d_notice,
        "d_su": u.d_su,
        "d_sd": u.d_sd,
        "d_min_on": u.d_min_on,
        "d_min_off": u.d_min_off,
        "d_min_stable": u.d_min_stable,
        "d_tran": u.d_tran,
        "curtailment_ratio": u.curtailment_ratio,
        "reserves": reserves,
        "hydro_spreads": list(u.hydro_spreads),
        "charge_eff": u.charge_eff,
        "discharge_eff": u.discharge_eff,
    }
    if u.p_forecast is not None:
        out["p_forecast"] = series_to_json(u.p_forecast)
    for name in ("e_stored", "e_max", "e_min"):
        s = getattr(u, name)
        if s is not None:
            out[name] = series_to_json(s)
    if u.water_values is not None:
        out["water_values"] = {"times": list(u.water_values.times),
                               "levels": list(u.water_values.levels),
                               "values": [list(r) for r in u.water_values.values]}
    return out


def area_from_json(obj: dict) -> ControlArea:
    p = obj.get("tso_params", {})
    params = TsoParams(
        delta_for=bool(p.get("delta_for", False)),
        delta_elas=bool(p.get("delta_elas", False)),
        alt=p.get("alt", "mFRRalt"),
        v_slice=float(p.get("v_slice", 100.0)),
        delta_risk=bool(p.get("delta_risk", False)),
        quantiles=tuple((float(a), float(e)) for a, e in p.get("quantiles", [])),
        rho_frbm=float(p.get("rho_frbm", 0.5)),
        lambda_da=float(p.get("lambda_da", 0.0)),
    )
    balance = {z: as_series(s) for z, s in obj.get("commercial_balance", {}).items()}
    return ControlArea(id=obj["id"],
                       market_area_ids=tuple(obj["market_area_ids"]),
                       tso_params=params,
                       commercial_balance=balance)


def area_to_json(ca: ControlArea) -> dict:
    p = ca.tso_params
    return {
        "id": ca.id,
        "market_area_ids": list(ca.market_area_ids),
        "tso_params": {
            "delta_for": p.delta_for,
            "delta_elas": p.delta_elas,
            "alt": p.alt,
            "v_slice": p.v_slice,
            "delta_risk": p.delta_risk,
            "quantiles": [[a, e] for a, e in p.quantiles],
            "rho_frbm": p.rho_frbm,
            "lambda_da": p.lambda_da,
        },
        "commercial_balance": {z: series_to_json(s) for z, s in sorted(ca.commercial_balance.items())},
    }


def globals_from_json(obj: dict) -> GlobalParams:
    table = obj.get("mfrr_ratio_table")
    return GlobalParams(
        voll=float(obj.get("voll", GlobalParams.voll)),
        p_spill=float(obj.get("p_spill", GlobalParams.p_spill)),
        p_redispatch=float(obj.get("p_redispatch", GlobalParams.p_redispatch)),
        h_da_ex=int(obj.get("h_da_ex", GlobalParams.h_da_ex)),
        price_cap=float(obj.get("price_cap", GlobalParams.price_cap)),
        mfrr_ratio_table=tuple(tuple(float(x) for x in row) for row in table)
        if table is not None else MFRR_RATIO_TABLE,
    )


def globals_to_json(gp: GlobalParams) -> dict:
    return {"voll": gp.voll, "p_spill": gp.p_spill, "p_redispatch": gp.p_redispatch,
            "h_da_ex": gp.h_da_ex, "price_cap": gp.price_cap,
            "mfrr_ratio_table": [list(r) for r in gp.mfrr_ratio_table]}


def coupling_from_json(obj: dict) -> Coupling:
    return Coupling(kind=CouplingKind(obj["kind"]), order_ids=tuple(obj["order_ids"]))


def coupling_to_json(c: Coupling) -> dict:
    return {"kind": c.kind.value, "order_ids": list(c.order_ids)}


def order_from_json(obj: dict) -> Order:
    return Order(
        id=obj["id"], area_id=obj["area_id"], price=float(obj["price"]),
        q_min=float(obj["q_min"]), q_max=float(obj["q_max"]),
        t_start=int(obj["t_start"]), t_end=int(obj["t_end"]), t_ex=int(obj["t_ex"]),
        sigma=int(obj["sigma"]), unit_id=obj.get("unit_id"),
        is_tso=bool(obj.get("is_tso", False)),
        kind=OrderKind(obj.get("kind", "normal")),
        q_acc=float(obj.get("q_acc", 0.0)), accepted=bool(obj.get("accepted", False)),
        completely_exclusive=bool(obj.get("completely_exclusive", False)),
    )


def order_to_json(o: Order) -> dict:
    return {"id": o.id, "unit_id": o.unit_id, "area_id": o.area_id, "price": o.price,
            "q_min": o.q_min, "q_max": o.q_max, "t_start": o.t_start, "t_end": o.t_end,
            "t_ex": o.t_ex, "sigma": o.sigma, "is_tso": o.is_tso, "kind": o.kind.value,
            "q_acc": o.q_acc, "accepted": o.accepted,
            "completely_exclusive": o.completely_exclusive}


def scenario_from_json(obj: dict) -> tuple[MarketConfig, MarketConfig | None, Dataset]:
    cfg = config_from_json(obj["config"])
    bm_cfg = config_from_json(obj["bm_config"]) if obj.get("bm_config") else None
    ds = Dataset(
        global_params=globals_from_json(obj.get("global_params", {})),
        control_areas=[area_from_json(a) for a in obj.get("control_areas", [])],
        units=[unit_from_json(u) for u in obj.get("units", [])],
        couplings=[coupling_from_json(c) for c in obj.get("couplings", [])],
    )
    return cfg, bm_cfg, ds


def scenario_to_json(cfg: MarketConfig, bm_cfg: MarketConfig | None, ds: Dataset) -> dict:
    out = {
        "config": config_to_json(cfg),
        "global_params": globals_to_json(ds.global_params),
        "control_areas": [area_to_json(a) for a in ds.control_areas],
        "units": [unit_to_json(u) for u in ds.units],
        "couplings": [coupling_to_json(c) for c in ds.couplings],
    }
    if bm_cfg is not None:
        out["bm_config"] = config_to_json(bm_cfg)
    return out


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, separators=(",", ": ")) + "\n"


def load_scenario(path) -> tuple[MarketConfig, MarketConfig | None, Dataset]:
    with open(path) as fh:
        return scenario_from_json(json.load(fh))
