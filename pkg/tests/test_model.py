import pytest

from relaymeet.errors import BufferOverflow, PlanningError, TransferError
from relaymeet.model import (
    IDLE, ActionSpec, BufferLedger, RegionOfInterest, apply_gather, apply_transfer,
    apply_upload, batch_sizes, build_motion_fts, compose_robot_model, idle_action,
    replay, uploaded_by_type,
)
from relaymeet.scenario import load_scenario
from relaymeet.sim import Simulation
from relaymeet.workspace import Roadmap, build_roadmap, Workspace

from oracles import brute_force_shortest, seeded

G1 = ActionSpec("g1", 1.0, 2, 1)
G2 = ActionSpec("g2", 1.5, 1, 2)


def line_roadmap():
    # 0 - 1 - 2 along the x axis, plus a detour 0 - 3 - 4 - 2 above
    pts = [(0, 0), (1, 0), (2, 0), (0, 1), (2, 1)]
    return Roadmap(pts, [(0, 1), (1, 2), (0, 3), (3, 4), (4, 2)])


def regions_on(rm, desc):
    return [RegionOfInterest(lbl, rm.point(wp), wp) for lbl, wp in desc]


# ---- motion FTS -------------------------------------------------------------

def test_two_regions_symmetric():
    rm = build_roadmap(Workspace([(0, 0), (3, 0), (3, 3), (0, 3)]), pitch=1.0)
    regs = regions_on(rm, [("r1", rm.nearest((0, 0))), ("r2", rm.nearest((3, 3)))])
    fts = build_motion_fts(rm, regs, 0.5, 0.2)
    assert set(fts.routes) == {("r1", "r2"), ("r2", "r1")}
    assert fts.durations[("r1", "r2")] == pytest.approx(fts.durations[("r2", "r1")])
    for key, path in fts.routes.items():
        assert fts.durations[key] == pytest.approx(rm.travel_time(path, 0.5, 0.2))


def test_middle_region_blocks_outer_pair():
    pts = [(0, 0), (1, 0), (2, 0)]
    rm = Roadmap(pts, [(0, 1), (1, 2)])
    regs = regions_on(rm, [("r1", 0), ("r2", 1), ("r3", 2)])
    fts = build_motion_fts(rm, regs, 0.5, 0.2)
    assert ("r1", "r3") not in fts.routes
    assert ("r1", "r2") in fts.routes and ("r2", "r3") in fts.routes


def test_exclusion_routes_match_oracle():
    rm = line_roadmap()
    regs = regions_on(rm, [("r1", 0), ("r2", 1), ("r3", 2)])
    fts = build_motion_fts(rm, regs, 0.5, 0.2)
    want = brute_force_shortest(rm.adj, 0, 2, excluded=frozenset({1}))
    assert fts.routes[("r1", "r3")] == want[1]


def test_unreachable_region_error():
    rm = Roadmap([(0, 0), (1, 0), (5, 5)], [(0, 1)])
    with pytest.raises(PlanningError):
        build_motion_fts(rm, regions_on(rm, [("r1", 0), ("r2", 2)]), 0.5, 0.2)


def test_shared_waypoint_rejected():
    rm = line_roadmap()
    with pytest.raises(PlanningError):
        build_motion_fts(rm, regions_on(rm, [("r1", 0), ("r2", 0)]), 0.5, 0.2)


# ---- composed model -----------------------------------------------------------

def test_two_by_two_product_size():
    rm = line_roadmap()
    fts = build_motion_fts(rm, regions_on(rm, [("r1", 0), ("r2", 2)]), 0.5, 0.2)
    m = compose_robot_model(fts, [idle_action(), G1])
    assert len(m.states) == 4
    assert m.initial == ("r1", IDLE)


def test_transition_rules():
    rm = line_roadmap()
    fts = build_motion_fts(rm, regions_on(rm, [("r1", 0), ("r2", 1), ("r3", 2)]), 0.5, 0.2)
    m = compose_robot_model(fts, [idle_action(), G1, G2])
    acts = m.actions
    for s, outs in m.succ.items():
        for t, dur in outs:
            moved = s[0] != t[0]
            # never move and act in the same transition
            assert not (moved and t[1] != IDLE)
            if moved:
                assert (s[0], t[0]) in fts.routes
                assert dur == pytest.approx(fts.durations[(s[0], t[0])])
            else:
                assert dur == pytest.approx(acts[t[1]].duration)
    # every rule-(i) and rule-(ii) transition is present
    expected = 0
    for (r, g) in m.states:
        expected += len(acts)  # same region, any action
        expected += sum(1 for (a, b) in fts.routes if a == r)
    assert m.n_transitions == expected


def test_idle_required():
    rm = line_roadmap()
    fts = build_motion_fts(rm, regions_on(rm, [("r1", 0)]), 0.5, 0.2)
    with pytest.raises(ValueError):
        compose_robot_model(fts, [G1])


def test_bundled_a0_model_size():
    sim = Simulation(load_scenario("paper_12robot"), record_metrics=False)
    m = sim.agents["a0"].model
    assert (len(m.states), m.n_transitions) == (16, 112)
    m3 = sim.agents["a3"].model
    assert (len(m3.states), m3.n_transitions) == (12, 72)


def test_action_validation():
    with pytest.raises(ValueError):
        ActionSpec("g", -1.0, 1, 1)
    with pytest.raises(ValueError):
        ActionSpec("g", 1.0, -1, 1)


# ---- buffer ledger --------------------------------------------------------------

def test_gather_examples():
    b = BufferLedger(4, "a")
    apply_gather(b, G1, 0.0)
    assert b.stored == 2
    apply_gather(b, idle_action(), 1.0)
    assert b.stored == 2
    apply_gather(b, ActionSpec("g", 1.0, 1, 3), 2.0)
    with pytest.raises(BufferOverflow):
        apply_gather(b, G1, 3.0)
    assert b.stored == 3


def test_transfer_examples():
    src, dst = BufferLedger(5, "a"), BufferLedger(5, "l")
    for _ in range(3):
        apply_gather(src, ActionSpec("g", 1.0, 1, 1), 0.0)
    with pytest.raises(TransferError):
        apply_transfer(src, dst, 4, 1.0)
    apply_transfer(src, dst, 3, 1.0)
    assert (src.stored, dst.stored) == (0, 3)
    for _ in range(3):
        apply_gather(src, ActionSpec("g", 1.0, 1, 1), 2.0)
    with pytest.raises(TransferError):
        apply_transfer(src, dst, 3, 3.0)


def test_upload_examples():
    b = BufferLedger(5, "l")
    with pytest.raises(TransferError):
        apply_upload(b, 1, 0.0)
    apply_gather(b, ActionSpec("g", 1.0, 5, 1), 0.0)
    apply_upload(b, 2, 1.0)
    assert b.stored == 3
    apply_upload(b, 3, 2.0)
    assert b.stored == 0


def test_fifo_types_and_replay():
    rng = seeded(8)
    a, r = BufferLedger(6, "a"), BufferLedger(4, "l")
    up = 0
    for step in range(400):
        op = rng.random()
        if op < 0.5:
            act = ActionSpec("g", 1.0, rng.randint(1, 3), rng.randint(1, 3))
            if a.stored + act.data_units <= a.capacity:
                apply_gather(a, act, step)
        elif op < 0.8:
            n = min(a.stored, r.free)
            if n:
                pieces = apply_transfer(a, r, n, step)
                assert sum(u for _, u in pieces) == n
        elif r.stored:
            up += r.stored
            apply_upload(r, r.stored, step)
        assert replay(a.history) == a.stored
        assert replay(r.history) == r.stored
        assert 0 <= a.stored <= a.capacity and 0 <= r.stored <= r.capacity
    gathered = sum(e.units for e in a.history if e.kind == "gather")
    assert gathered == a.stored + r.stored + up
    assert sum(uploaded_by_type([r]).values()) == up


def test_fifo_order():
    a, r = BufferLedger(6, "a"), BufferLedger(6, "l")
    apply_gather(a, ActionSpec("x", 1, 2, 1), 0)
    apply_gather(a, ActionSpec("y", 1, 3, 2), 0)
    assert apply_transfer(a, r, 3, 1) == [(1, 2), (2, 1)]
    assert a.snapshot() == (2, [(2, 2)])


def test_batch_sizes():
    assert batch_sizes(3, 5) == [3]
    assert batch_sizes(7, 5) == [5, 2]
    assert batch_sizes(10, 5) == [5, 5]
    assert batch_sizes(0, 5) == []
    with pytest.raises(ValueError):
        batch_sizes(3, 0)
