import pytest

from balsim.aggregation import ReferentialError, apply_clearing
from balsim.clearing import ClearingResult, clear
from balsim.model import Order, UnitType, time_grid
from balsim.series import TimeSeries
from conftest import make_cfg, make_dataset, make_unit


def result_for(orders, q):
    return ClearingResult(q_acc=dict(q), accepted={k: v > 0 for k, v in q.items()},
                          prices={}, objective=0.0)


def order_for(unit, q_max, sigma, t=720, oid=None):
    return Order(id=oid or f"{unit.id}-o", unit_id=unit.id, area_id=unit.area_id,
                 price=50.0, q_min=0.0, q_max=q_max, t_start=t, t_end=t + 60,
                 t_ex=690, sigma=sigma)


class TestApplyClearing:
    def test_upward_sale_raises_plan(self):
        u = make_unit(p_plan=100.0)
        ds = make_dataset([u])
        o = order_for(u, 30.0, sigma=-1)
        new_ds, delta = apply_clearing(ds, [o], result_for([o], {o.id: 20.0}), make_cfg())
        assert new_ds.unit(u.id).p_plan.at(720) == pytest.approx(120.0)
        assert ds.unit(u.id).p_plan.at(720) == 100.0  # snapshot semantics

    def test_storage_energy_drawdown(self):
        u = make_unit(unit_type=UnitType.STORAGE, p_plan=0.0, p_min=-50.0,
                      e_stored=100.0, e_min=0.0, e_max=200.0)
        ds = make_dataset([u])
        o = order_for(u, 30.0, sigma=-1)
        new_ds, delta = apply_clearing(ds, [o], result_for([o], {o.id: 20.0}), make_cfg())
        assert new_ds.unit(u.id).e_stored.at(720) == pytest.approx(80.0)
        assert delta.energy_delta[(u.id, 720)] == pytest.approx(-20.0)

    def test_no_accepted_orders_identity(self):
        u = make_unit(p_plan=70.0)
        ds = make_dataset([u])
        o = order_for(u, 30.0, sigma=-1)
        new_ds, delta = apply_clearing(ds, [o], result_for([o], {o.id: 0.0}), make_cfg())
        assert new_ds.unit(u.id).p_plan == u.p_plan
        assert delta.plan_delta == {} and delta.ledger == []

    def test_unknown_unit_rejected(self):
        ds = make_dataset([make_unit()])
        ghost = Order(id="x", unit_id="ghost", area_id="Z1", price=1.0, q_min=0.0,
                      q_max=10.0, t_start=720, t_end=780, t_ex=690, sigma=-1)
        with pytest.raises(ReferentialError):
            apply_clearing(ds, [ghost], result_for([ghost], {"x": 5.0}), make_cfg())

    def test_tso_orders_ignored(self):
        u = make_unit(p_plan=70.0)
        ds = make_dataset([u])
        tso = Order(id="t", unit_id=None, area_id="CA1", price=1.0, q_min=0.0,
                    q_max=10.0, t_start=720, t_end=780, t_ex=690, sigma=-1, is_tso=True)
        new_ds, _ = apply_clearing(ds, [tso], result_for([tso], {"t": 10.0}), make_cfg())
        assert new_ds.unit(u.id).p_plan.at(720) == 70.0

    def test_power_conservation_and_portfolio(self):
        cfg = make_cfg(steps=2)
        u1 = make_unit(id="a", p_plan=50.0, portfolio_id="PF")
        u2 = make_unit(id="b", p_plan=80.0, portfolio_id="PF")
        ds = make_dataset([u1, u2])
        orders = [order_for(u1, 30.0, -1, t=720, oid="o1"),
                  order_for(u2, 30.0, 1, t=780, oid="o2")]
        res = result_for(orders, {"o1": 10.0, "o2": 25.0})
        new_ds, delta = apply_clearing(ds, orders, res, cfg)
        grid = time_grid(cfg)
        for t in grid:
            lhs = sum(new_ds.unit(u).p_plan.at(t) - ds.unit(u).p_plan.at(t)
                      for u in ("a", "b"))
            rhs = sum(-o.sigma * res.q_acc[o.id] for o in orders if o.t_start == t)
            assert lhs == pytest.approx(rhs)
        for t in grid:
            assert delta.portfolio_plan[("PF", t)] == pytest.approx(
                sum(new_ds.unit(u).p_plan.at(t) for u in ("a", "b")))

    def test_energy_telescoping_monotone(self):
        cfg = make_cfg(steps=3)
        u = make_unit(unit_type=UnitType.STORAGE, p_plan=0.0, p_min=-50.0,
                      e_stored=500.0, e_min=0.0, e_max=1000.0)
        ds = make_dataset([u])
        orders = [order_for(u, 30.0, -1, t=t, oid=f"o{t}") for t in (720, 780, 840)]
        res = result_for(orders, {o.id: 10.0 for o in orders})
        new_ds, _ = apply_clearing(ds, orders, res, cfg)
        levels = [new_ds.unit(u.id).e_stored.at(t) for t in (720, 780, 840)]
        assert levels == sorted(levels, reverse=True)  # pure upward: non-increasing
        assert levels[0] == pytest.approx(490.0)
        assert levels[-1] == pytest.approx(470.0)

    def test_round_trip_with_real_clearing(self):
        cfg = make_cfg()
        u = make_unit(p_plan=60.0, p_min=40.0, c_var=30.0)
        ds = make_dataset([u])
        from balsim.bsp import formulate_bsp_orders
        orders, coups = formulate_bsp_orders(ds, cfg)
        tso = Order(id="need", unit_id=None, area_id="CA1", price=10_000.0,
                    q_min=0.0, q_max=25.0, t_start=720, t_end=780, t_ex=690,
                    sigma=-1, is_tso=True)
        book = orders + [tso]
        res = clear(book, coups, 60, {"Z1": "CA1", "CA1": "CA1"})
        new_ds, delta = apply_clearing(ds, book, res, cfg)
        assert new_ds.unit(u.id).p_plan.at(720) == pytest.approx(60.0 + 25.0)
        assert len(delta.ledger) >= 1
