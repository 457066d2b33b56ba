"""Pipeline orchestration: scenario in, staged artifacts out.

Stages run in the fixed order BSP orders -> TSO orders -> clearing ->
aggregation -> balancing mechanism; a pipeline is any dependency-closed
subset. Identical scenario bytes and seed produce byte-identical
artifacts (canonical JSON, no wall-clock anywhere).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass

from . import __version__
from .aggregation import apply_clearing
from .bm import run_bm
from .bsp import formulate_bsp_orders
from .clearing import clear
from .model import ConfigError, Dataset, MarketConfig, MarketKind, validate_dataset
from .scenario import (dumps, load_scenario, order_from_json, order_to_json,
                       coupling_from_json, coupling_to_json, scenario_to_json)
from .tso import formulate_all_tso_orders

STAGE_ORDER = ("bsp_orders", "tso_orders", "clearing", "aggregation",
               "balancing_mechanism")
NAMED_PIPELINES = {
    "markets": ("bsp_orders", "tso_orders", "clearing", "aggregation"),
    "bm": ("balancing_mechanism",),
    "markets+bm": STAGE_ORDER,
}

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE_FAILURE = 3


@dataclass(frozen=True)
class PipelineSpec:
    stages: tuple[str, ...]
    seed: int = 0
    output_dir: str = "out"
    combinatorial: bool = True

    def __post_init__(self):
        unknown = [s for s in self.stages if s not in STAGE_ORDER]
        if unknown:
            raise ConfigError(f"unknown stages: {unknown}")
        ranks = [STAGE_ORDER.index(s) for s in self.stages]
        if ranks != sorted(ranks) or len(set(ranks)) != len(ranks):
            raise ConfigError("stages out of order")
        if "aggregation" in self.stages and "clearing" not in self.stages:
            raise ConfigError("aggregation requires clearing")
        if "clearing" in self.stages and not (
                "bsp_orders" in self.stages or "tso_orders" in self.stages):
            raise ConfigError("clearing requires at least one order stage")

    @classmethod
    def named(cls, name: str, seed: int = 0, output_dir: str = "out",
              combinatorial: bool = True) -> "PipelineSpec":
        if name not in NAMED_PIPELINES:
            raise ConfigError(f"unknown pipeline {name!r}; choose from {sorted(NAMED_PIPELINES)}")
        return cls(stages=NAMED_PIPELINES[name], seed=seed, output_dir=output_dir,
                   combinatorial=combinatorial)


def _write(path: str, text: str):
    with open(path, "w") as fh:
        fh.write(text)


def _area_map(ds: Dataset) -> dict:
    out = {}
    for ca in ds.control_areas:
        out[ca.id] = ca.id
        for z in ca.market_area_ids:
            out[z] = ca.id
    return out


def run(pipeline: PipelineSpec, scenario_path: str,
        market_override: str | None = None) -> int:
    """Execute the pipeline; returns a process exit code."""
    out_dir = pipeline.output_dir
    os.makedirs(out_dir, exist_ok=True)
    for name in os.listdir(out_dir):
        if name.endswith(".failed"):
            os.remove(os.path.join(out_dir, name))
    with open(scenario_path, "rb") as fh:
        raw = fh.read()
    try:
        cfg, bm_cfg, ds = load_scenario(scenario_path)
    except (KeyError, ValueError) as exc:
        _write(os.path.join(out_dir, "validation.failed"), f"unreadable scenario: {exc}\n")
        print(f"scenario error: {exc}")
        return EXIT_VALIDATION

    if market_override:
        kind = MarketKind(market_override)
        if kind is MarketKind.RR:
            cfg = MarketConfig.rr(cfg.t_start)
        elif kind is MarketKind.MFRR:
            cfg = MarketConfig.mfrr(cfg.t_start)

    violations = validate_dataset(ds)
    if violations:
        report = "".join(f"{v}\n" for v in violations)
        _write(os.path.join(out_dir, "validation.failed"), report)
        print(report, end="")
        return EXIT_VALIDATION

    manifest = {
        "scenario_sha256": hashlib.sha256(raw).hexdigest(),
        "seed": pipeline.seed,
        "stages": list(pipeline.stages),
        "market": cfg.market_kind.value,
        "combinatorial": pipeline.combinatorial,
        "version": __version__,
    }

    orders: list = []
    couplings = list(ds.couplings)
    needs: dict[str, list] = {}
    clearing_result = None
    stage = None
    try:
        if "bsp_orders" in pipeline.stages:
            stage = "bsp_orders"
            orders, bsp_couplings = formulate_bsp_orders(ds, cfg, pipeline.combinatorial)
            couplings = couplings + bsp_couplings
        if "tso_orders" in pipeline.stages:
            stage = "tso_orders"
            tso_orders, needs = formulate_all_tso_orders(ds, cfg, orders, couplings,
                                                         rng_seed=pipeline.seed)
            orders = orders + tso_orders
        if "bsp_orders" in pipeline.stages or "tso_orders" in pipeline.stages:
            book = {"orders": [order_to_json(o) for o in orders],
                    "couplings": [coupling_to_json(c) for c in couplings],
                    "needs": needs}
            _write(os.path.join(out_dir, "orderbook.json"), dumps(book))

        if "clearing" in pipeline.stages:
            stage = "clearing"
            clearing_result = clear(orders, couplings, cfg.dt_minutes, _area_map(ds))
            payload = {
                "objective": clearing_result.objective,
                "orders": [{"id": o.id, "q_acc": clearing_result.q_acc[o.id],
                            "accepted": clearing_result.accepted[o.id],
                            "out_of_merit": o.id in clearing_result.out_of_merit}
                           for o in orders],
                "prices": [{"area": area, "t": t, "price": price}
                           for (area, t), price in sorted(clearing_result.prices.items())],
            }
            _write(os.path.join(out_dir, "clearing.json"), dumps(payload))

        if "aggregation" in pipeline.stages:
            stage = "aggregation"
            ds, delta = apply_clearing(ds, orders, clearing_result, cfg)
            _write(os.path.join(out_dir, "snapshot.json"),
                   dumps(scenario_to_json(cfg, bm_cfg, ds)))
            buf = io.StringIO()
            writer = csv.writer(buf)
            writer.writerow(["unit", "t", "mw", "price"])
            for unit_id, t, mw, price in delta.ledger:
                writer.writerow([unit_id, t, f"{mw:.6f}", f"{price:.6f}"])
            _write(os.path.join(out_dir, "aggregation.csv"), buf.getvalue())

        if "balancing_mechanism" in pipeline.stages:
            stage = "balancing_mechanism"
            if bm_cfg is None:
                bm_cfg = MarketConfig(MarketKind.BM, cfg.t_ex, cfg.t_start,
                                      cfg.t_end, cfg.dt_minutes)
            areas = {}
            cost_rows = []
            for ca in sorted(ds.control_areas, key=lambda a: a.id):
                problem, result, per_step, total = run_bm(ca, ds, bm_cfg)
                areas[ca.id] = {
                    "bn": problem.bn,
                    "activations": [
                        {"unit": uid, "t": t, "p_act": act,
                         "p_final": result.p_final[(uid, t)]}
                        for (uid, t), act in sorted(result.p_act.items())],
                    "e_voll": result.e_voll,
                    "e_spill": result.e_spill,
                    "objective": result.objective,
                    "per_step_cost": per_step,
                    "total_cost": total,
                }
                for t, cost in zip(problem.frame, per_step):
                    cost_rows.append((ca.id, t, cost))
            _write(os.path.join(out_dir, "bm.json"),
                   dumps({"frame": {"t_start": bm_cfg.t_start, "t_end": bm_cfg.t_end,
                                    "dt": bm_cfg.dt_minutes}, "areas": areas}))
            buf = io.StringIO()
            writer = csv.writer(buf)
            writer.writerow(["area", "t", "cost"])
            for area, t, cost in cost_rows:
                writer.writerow([area, t, f"{cost:.6f}"])
            _write(os.path.join(out_dir, "bm_costs.csv"), buf.getvalue())
    except Exception as exc:  # stage failure: keep partial artifacts, mark and abort
        _write(os.path.join(out_dir, f"{stage}.failed"), f"{type(exc).__name__}: {exc}\n")
        print(f"stage {stage} failed: {exc}")
        return EXIT_STAGE_FAILURE

    _write(os.path.join(out_dir, "manifest.json"), dumps(manifest))
    return EXIT_OK
