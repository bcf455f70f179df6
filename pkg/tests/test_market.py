import json
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from instances import random_instance
from segmarket.errors import DataIntegrityError, EmptyStackError, InfeasibleDemandError
from segmarket.market import (
    ENERGY_TOL,
    Mechanism,
    Segment,
    SupplyOffer,
    clear,
    clear_pab,
    clear_pac,
    clear_spac,
    clear_spac_oracle,
    compute_profits,
    read_offer_stack_csv,
    sort_merit,
    spac_candidates,
    write_offer_stack_csv,
)
from segmarket.scenarios import PNIEC_RANDOM_MARKUPS


def offer(uid, price, qty, seg=Segment.NNMCS, op="A"):
    return SupplyOffer(uid, op, price, qty, seg)


@st.composite
def stacks(draw, max_offers=12):
    n = draw(st.integers(1, max_offers))
    prices = draw(st.lists(st.one_of(st.integers(0, 20).map(float),
                                     st.floats(0, 300, allow_nan=False).map(lambda x: round(x, 2))),
                           min_size=n, max_size=n))
    qty = draw(st.lists(st.floats(0.5, 100).map(lambda x: round(x, 1)), min_size=n, max_size=n))
    segs = draw(st.lists(st.sampled_from(list(Segment)), min_size=n, max_size=n))
    offers = [SupplyOffer(f"u{i}", f"op{i % 3}", p, q, s) for i, (p, q, s) in enumerate(zip(prices, qty, segs))]
    frac = draw(st.floats(0, 1))
    demand = round(frac * sum(qty), 3)
    demand = min(demand, sum(qty))
    costs = {o.unit_id: o.price * 0.8 for o in offers}
    return offers, demand, costs


# --- fixture scenario ---------------------------------------------------------

def test_merit_order_of_fixture(pniec):
    order = [o.unit_id for o in sort_merit(pniec.build_offers())]
    assert order == ["OpB-WIND", "OpB-PV", "OpA-PV", "OpA-WIND", "OpA-HYDRO", "OpB-HYDRO",
                     "OpB-GAS", "OpA-GAS", "OpB-COAL", "OpA-COAL"]
    assert pniec.total_capacity == 2000
    assert pniec.segment_capacity(Segment.NMCS) == 800


def test_fixture_marginal_cost_1gw(pniec):
    offers = pniec.build_offers()
    pab = clear_pab(offers, 1000, pniec.costs)
    pac = clear_pac(offers, 1000, pniec.costs)
    spac = clear_spac(offers, 1000, pniec.costs)
    assert pab.total_cost == pytest.approx(20588)
    assert round(pab.pun, 2) == 20.59
    assert pac.total_cost == pytest.approx(69000)
    assert pac.pun == pytest.approx(69.0)
    assert spac.total_cost == pytest.approx(29800)
    assert (spac.d_r, spac.nmcs_price, spac.d_g, spac.nnmcs_price) == (800, 20, 200, 69)
    # offers at cost: pay-as-bid leaves no margin
    assert pab.total_profit == pytest.approx(0, abs=1e-9)
    assert pac.total_profit == pytest.approx(69000 - 20588)


def test_fixture_fixed_markups_1gw(pniec):
    offers = pniec.build_offers(PNIEC_RANDOM_MARKUPS)
    costs = pniec.costs
    assert clear_pab(offers, 1000, costs).total_cost == pytest.approx(22416.72, abs=0.01)
    assert clear_pac(offers, 1000, costs).total_cost == pytest.approx(73830, abs=0.01)
    s = clear_spac(offers, 1000, costs)
    assert s.total_cost == pytest.approx(32526, abs=0.01)
    assert s.d_r * s.nmcs_price == pytest.approx(17760)
    assert s.d_g * s.nnmcs_price == pytest.approx(14766)


# --- worked examples ------------------------------------------------------------

def test_pac_left_limit_at_breakpoint():
    # demand exactly completes the first offer: it sets the price
    offers = [offer("a", 10, 50), offer("b", 30, 50)]
    out = clear_pac(offers, 50, {"a": 0, "b": 0})
    assert out.nnmcs_price == 10
    assert out.accepted == {"a": 50, "b": 0}
    assert clear_pac(offers, 50.5, {"a": 0, "b": 0}).nnmcs_price == 30


def test_equal_prices_split_by_unit_id():
    offers = [offer("b", 10, 40), offer("a", 10, 40)]
    out = clear_pab(offers, 60, {"a": 0, "b": 0})
    assert out.accepted == {"a": 40, "b": 20}


def test_spac_prefers_cheaper_split():
    # all demand to NMCS costs 50*100; 10 to NNMCS lowers the NMCS price to 5
    offers = [offer("r1", 5, 90, Segment.NMCS), offer("r2", 50, 100, Segment.NMCS), offer("g1", 20, 100)]
    out = clear_spac(offers, 100, {o.unit_id: 0 for o in offers})
    assert out.d_r == 90 and out.d_g == 10
    assert out.total_cost == pytest.approx(90 * 5 + 10 * 20)


def test_spac_tie_goes_to_nmcs():
    offers = [offer("r", 10, 100, Segment.NMCS), offer("g", 10, 100)]
    out = clear_spac(offers, 60, {"r": 0, "g": 0})
    assert out.d_r == 60
    assert out.flags["tie"] is True


def test_spac_single_segment_reports_missing_price():
    out = clear_spac([offer("g", 40, 100)], 30, {"g": 10})
    assert out.nmcs_price is None and out.d_r == 0
    assert out.total_cost == pytest.approx(1200)
    out = clear_spac([offer("r", 4, 100, Segment.NMCS)], 30, {"r": 1})
    assert out.nnmcs_price is None and out.d_g == 0


def test_zero_demand():
    offers = [offer("a", 10, 5), offer("r", 1, 5, Segment.NMCS)]
    for mech in Mechanism:
        out = clear(mech, offers, 0.0, {"a": 0, "r": 0})
        assert out.total_cost == 0 and out.pun == 0
        assert sum(out.accepted.values()) == 0


def test_infeasible_demand_reports_shortfall():
    with pytest.raises(InfeasibleDemandError) as err:
        clear_pac([offer("a", 10, 5)], 8, {"a": 0})
    assert err.value.shortfall == pytest.approx(3)
    # within tolerance is still feasible
    clear_pac([offer("a", 10, 5)], 5 + ENERGY_TOL / 2, {"a": 0})


def test_rejects_bad_inputs():
    with pytest.raises(EmptyStackError):
        clear_pab([], 0, {})
    with pytest.raises(DataIntegrityError):
        offer("a", 1, 0)
    with pytest.raises(DataIntegrityError):
        offer("a", -1, 1)
    with pytest.raises(DataIntegrityError):
        clear_pab([offer("a", 1, 1), offer("a", 2, 1)], 1, {"a": 0})
    with pytest.raises(DataIntegrityError):
        clear_pab([offer("a", 1, 1)], 1, {})
    with pytest.raises(DataIntegrityError):
        clear_pab([offer("a", 1, 1)], math.nan, {"a": 0})


def test_candidates_cover_interval_ends():
    offers = [offer("r", 1, 30, Segment.NMCS), offer("g", 2, 30)]
    cands = spac_candidates(offers, 40)
    assert max(cands) == 30 and min(cands) == 10
    assert cands == sorted(cands, reverse=True)


# --- invariants -------------------------------------------------------------------

@given(stacks())
def test_energy_balance_and_capacity(inst):
    offers, d, costs = inst
    by_id = {o.unit_id: o for o in offers}
    for mech in Mechanism:
        out = clear(mech, offers, d, costs)
        assert math.fsum(out.accepted.values()) == pytest.approx(d, abs=ENERGY_TOL)
        for uid, q in out.accepted.items():
            assert -1e-12 <= q <= by_id[uid].quantity + 1e-12


@given(stacks())
def test_payment_rules(inst):
    offers, d, costs = inst
    by_id = {o.unit_id: o for o in offers}
    pab = clear_pab(offers, d, costs)
    for uid, q in pab.accepted.items():
        if q > 0:
            assert pab.unit_payment_price[uid] == by_id[uid].price
    pac = clear_pac(offers, d, costs)
    accepted = [u for u, q in pac.accepted.items() if q > 0]
    if accepted:
        assert pac.nnmcs_price == max(by_id[u].price for u in accepted)
        assert {pac.unit_payment_price[u] for u in accepted} == {pac.nnmcs_price}


@given(stacks())
def test_cost_ordering(inst):
    offers, d, costs = inst
    pab = clear_pab(offers, d, costs).total_cost
    spac = clear_spac(offers, d, costs).total_cost
    pac = clear_pac(offers, d, costs).total_cost
    tol = 1e-6 * max(1.0, pac)
    assert pab <= spac + tol
    assert spac <= pac + tol


@given(stacks())
def test_spac_is_optimal_over_candidates(inst):
    offers, d, costs = inst
    out = clear_spac(offers, d, costs)
    oracle = clear_spac_oracle(offers, d, costs, step=0.5)
    assert out.total_cost == pytest.approx(oracle.total_cost, abs=1e-6)
    assert out.d_r + out.d_g == pytest.approx(d)


@given(stacks())
def test_profit_identity(inst):
    offers, d, costs = inst
    for mech in Mechanism:
        out = clear(mech, offers, d, costs)
        prod = math.fsum(costs[u] * q for u, q in out.accepted.items())
        assert out.total_profit == pytest.approx(out.total_cost - prod, abs=1e-6 * max(1, out.total_cost))
        assert compute_profits(out, costs) == pytest.approx(out.operator_profit)


@given(stacks(), st.floats(0.0, 1.0))
def test_pac_cost_monotone_in_demand(inst, extra):
    offers, d, costs = inst
    cap = sum(o.quantity for o in offers)
    d2 = d + extra * (cap - d)
    assume(d2 <= cap)
    assert clear_pac(offers, d2, costs).total_cost >= clear_pac(offers, d, costs).total_cost - 1e-9
    assert clear_pab(offers, d2, costs).total_cost >= clear_pab(offers, d, costs).total_cost - 1e-9


@given(stacks())
def test_input_order_does_not_matter(inst):
    offers, d, costs = inst
    rev = list(reversed(offers))
    for mech in Mechanism:
        a = clear(mech, offers, d, costs)
        b = clear(mech, rev, d, costs)
        assert a.total_cost == pytest.approx(b.total_cost, abs=1e-9)
        assert a.accepted == pytest.approx(b.accepted)


def test_oracle_agrees_on_seeded_batch():
    rng = np.random.default_rng(7)
    for _ in range(50):
        offers, d, costs = random_instance(rng, 20)
        assert clear_spac(offers, d, costs).total_cost == pytest.approx(
            clear_spac_oracle(offers, d, costs).total_cost, abs=1e-6)


# --- I/O ------------------------------------------------------------------------------

def test_offer_csv_round_trip(tmp_path, pniec):
    offers = pniec.build_offers(PNIEC_RANDOM_MARKUPS)
    path = tmp_path / "stack.csv"
    write_offer_stack_csv(offers, path)
    assert read_offer_stack_csv(path) == offers


def test_offer_csv_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("unit_id,operator_id,technology,segment,price_eur_mwh,quantity_mw\n"
                    "a,A,PV,NMCS,1.0,10\n"
                    "b,A,PV,NMCS,abc,10\n")
    with pytest.raises(DataIntegrityError, match=":3:"):
        read_offer_stack_csv(path)


def test_outcome_json(pniec):
    out = clear_spac(pniec.build_offers(), 1000, pniec.costs)
    data = json.loads(out.to_json())
    assert data["mechanism"] == "SPaC"
    assert data["total_cost_eur"] == pytest.approx(29800)
    assert data["operator_profit_eur"].keys() == {"OpA", "OpB"}
