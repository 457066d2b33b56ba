"""Summaries of a run directory: per-step CSV tables and optional plots.

Each table is produced only when its source artifacts exist; missing
ones are listed as skip notes in summary.txt and on stdout.
"""
from __future__ import annotations

import csv
import json
import os

TABLES = ("needs", "cleared_volumes", "prices", "bm_activations", "bm_costs")


def _load(run_dir: str, name: str):
    path = os.path.join(run_dir, name)
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        return json.load(fh)


def _write_csv(run_dir: str, name: str, header: list[str], rows: list):
    with open(os.path.join(run_dir, f"{name}.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def report(run_dir: str, plot: bool = False) -> dict[str, str]:
    """Build summary tables; returns {table: "ok" | skip reason}."""
    status: dict[str, str] = {}
    book = _load(run_dir, "orderbook.json")
    clearing = _load(run_dir, "clearing.json")
    bm = _load(run_dir, "bm.json")

    if book and book.get("needs"):
        rows = [(ca, t_bn[0], f"{t_bn[1]:.6f}")
                for ca, series in sorted(book["needs"].items())
                for t_bn in zip(_steps_of(book, ca), series)]
        _write_csv(run_dir, "needs", ["area", "t", "bn"], rows)
        status["needs"] = "ok"
    else:
        status["needs"] = "skipped: no order book with needs"

    if book and clearing:
        orders = {o["id"]: o for o in book["orders"]}
        volumes: dict[tuple, list[float]] = {}
        for rec in clearing["orders"]:
            o = orders.get(rec["id"])
            if o is None or o["is_tso"] or rec["q_acc"] <= 0:
                continue
            key = (o["area_id"], o["t_start"])
            up_dn = volumes.setdefault(key, [0.0, 0.0])
            up_dn[0 if o["sigma"] == -1 else 1] += rec["q_acc"]
        rows = [(area, t, f"{v[0]:.6f}", f"{v[1]:.6f}")
                for (area, t), v in sorted(volumes.items())]
        _write_csv(run_dir, "cleared_volumes", ["area", "t", "up_mw", "down_mw"], rows)
        status["cleared_volumes"] = "ok"
    else:
        status["cleared_volumes"] = "skipped: no clearing result"

    if clearing:
        rows = [(p["area"], p["t"], "" if p["price"] is None else f"{p['price']:.6f}")
                for p in clearing["prices"]]
        _write_csv(run_dir, "prices", ["area", "t", "price"], rows)
        status["prices"] = "ok"
    else:
        status["prices"] = "skipped: no clearing result"

    if bm:
        act_rows = []
        cost_rows = []
        for area, rec in sorted(bm["areas"].items()):
            for a in rec["activations"]:
                act_rows.append((area, a["unit"], a["t"],
                                 f"{a['p_act']:.6f}", f"{a['p_final']:.6f}"))
            t0, dt = bm["frame"]["t_start"], bm["frame"]["dt"]
            for k, cost in enumerate(rec["per_step_cost"]):
                cost_rows.append((area, t0 + k * dt, f"{cost:.6f}"))
        _write_csv(run_dir, "bm_activations", ["area", "unit", "t", "p_act", "p_final"], act_rows)
        _write_csv(run_dir, "bm_costs", ["area", "t", "cost"], cost_rows)
        status["bm_activations"] = status["bm_costs"] = "ok"
    else:
        status["bm_activations"] = status["bm_costs"] = "skipped: no balancing-mechanism result"

    if plot and clearing:
        _plot_prices(run_dir, clearing)

    with open(os.path.join(run_dir, "summary.txt"), "w") as fh:
        for table in TABLES:
            fh.write(f"{table}: {status[table]}\n")
    return status


def _steps_of(book: dict, ca: str) -> list[int]:
    steps = sorted({o["t_start"] for o in book["orders"]})
    n = len(book["needs"][ca])
    if len(steps) >= n:
        return steps[:n]
    if steps:
        dt = steps[1] - steps[0] if len(steps) > 1 else 1
        return steps + [steps[-1] + dt * (i + 1) for i in range(n - len(steps))]
    return list(range(n))


def _plot_prices(run_dir: str, clearing: dict):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    by_area: dict[str, list] = {}
    for p in clearing["prices"]:
        if p["price"] is not None:
            by_area.setdefault(p["area"], []).append((p["t"], p["price"]))
    fig, ax = plt.subplots(figsize=(7, 4))
    for area, pts in sorted(by_area.items()):
        pts.sort()
        ax.step([t for t, _ in pts], [v for _, v in pts], where="post", label=area)
    ax.set_xlabel("time (min)")
    ax.set_ylabel("marginal price (EUR/MWh)")
    if by_area:
        ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(run_dir, "prices.png"))
    plt.close(fig)
