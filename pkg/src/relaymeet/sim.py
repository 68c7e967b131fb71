"""Fixed-step kinematic simulation of the source/relay team.

Each step integrates every robot's unicycle, advances action and meeting
timers, then processes range contacts (meetings, spontaneous meetings, relay
swaps). Robots are updated in scenario order so runs are reproducible.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import random
import time as _time
from collections import deque
from dataclasses import dataclass
from pathlib import Path

from .coordination import (
    Commitment, FaultPolicy, RelayPlan, ScheduleInstance,
    choose_relay, compute_meet_window, next_meeting, solve_initial_schedule,
    swap_meetings,
)
from .errors import InvariantViolation, PlanningError, ScenarioError
from .ltl import parse_ltl, translate_to_nba
from .model import (
    ActionSpec, BufferLedger, RegionOfInterest, apply_gather, apply_transfer,
    apply_upload, build_motion_fts, compose_robot_model, idle_action,
)
from .scenario import HOME, RobotSpec, SimSettings
from .synthesis import build_product, plan_satisfies, synthesize_plan

log = logging.getLogger(__name__)

SimConfig = SimSettings

_WAIT_PHASES = ("wait", "stall")


# --------------------------------------------------------------------------
# kinematics

def wrap_angle(a):
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


@dataclass
class RobotKinematics:
    x: float
    y: float
    heading: float
    v_ref: float
    w_ref: float
    range: float

    def __post_init__(self):
        if self.v_ref <= 0 or self.w_ref <= 0 or self.range <= 0:
            raise ValueError("speeds and range must be positive")
        self.heading = wrap_angle(self.heading)

    @property
    def pos(self):
        return (self.x, self.y)


def step_unicycle(kin, target, dt, angular_tolerance=0.05, arrival_tolerance=0.05,
                  speed=None):
    """Advance ``kin`` one step toward ``target`` with turn-then-forward
    control. Returns True once the target is reached (state snapped)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    dx = target[0] - kin.x
    dy = target[1] - kin.y
    dist = math.hypot(dx, dy)
    if dist <= arrival_tolerance:
        kin.x, kin.y = target
        return True
    bearing = math.atan2(dy, dx)
    err = wrap_angle(bearing - kin.heading)
    if abs(err) > angular_tolerance:
        turn = min(kin.w_ref * dt, abs(err))
        kin.heading = wrap_angle(kin.heading + math.copysign(turn, err))
        return False
    kin.heading = bearing
    v = kin.v_ref if speed is None else speed
    step = min(max(v, 0.0) * dt, dist)
    kin.x += step * math.cos(bearing)
    kin.y += step * math.sin(bearing)
    if dist - step <= arrival_tolerance:
        kin.x, kin.y = target
        return True
    return False


def connectivity_components(positions, ranges):
    """Component sizes (descending) of the graph linking robots closer than
    the smaller of their ranges."""
    n = len(positions)
    seen = [False] * n
    sizes = []
    for s in range(n):
        if seen[s]:
            continue
        seen[s] = True
        stack = [s]
        size = 0
        while stack:
            i = stack.pop()
            size += 1
            xi, yi = positions[i]
            for j in range(n):
                if not seen[j]:
                    xj, yj = positions[j]
                    if math.hypot(xi - xj, yi - yj) <= min(ranges[i], ranges[j]):
                        seen[j] = True
                        stack.append(j)
        sizes.append(size)
    return sorted(sizes, reverse=True)


# --------------------------------------------------------------------------
# event log

def _num(x):
    if isinstance(x, float):
        r = round(x, 4)
        return 0.0 if r == 0 else r
    return x


class EventLog:
    def __init__(self):
        self.events = []

    def emit(self, t, robot, kind, **payload):
        ev = {"t": round(t, 3), "robot": robot, "kind": kind}
        for k, v in payload.items():
            ev[k] = _num(v)
        self.events.append(ev)
        return ev

    def lines(self):
        return [json.dumps(e, separators=(",", ":")) for e in self.events]

    def write(self, path):
        Path(path).write_text("".join(l + "\n" for l in self.lines()))


# --------------------------------------------------------------------------
# agents

class Agent:
    def __init__(self, desc, kin, index):
        self.id = desc.id
        self.desc = desc
        self.kin = kin
        self.index = index
        self.ledger = BufferLedger(desc.capacity, desc.id)
        self.phase = "idle"
        self.route = deque()  # (waypoint, point)
        self.anchor = None  # last waypoint reached
        self.pending = []  # meeting ids in service order
        self.leaving = False
        self.meeting = None
        self.saved_phase = None
        self.wait_for = None
        self.wait_since = None

    @property
    def is_source(self):
        return self.desc.is_source

    @property
    def alive(self):
        return self.phase not in ("dead", "gone")

    @property
    def free(self):
        return self.alive and self.meeting is None


class SourceAgent(Agent):
    def __init__(self, desc, kin, index, plan, model, nba):
        super().__init__(desc, kin, index)
        self.plan = plan
        self.model = model
        self.nba = nba
        self.k = 1
        self.pos = 0
        self.timer = 0.0
        self.resume = None
        self.executed = []  # plan indices completed, in order
        self.phase = "plan"

    def route_of(self, k):
        return self.model.route(self.plan.state(k - 1), self.plan.state(k))

    def plan_waypoint(self):
        return self.route_of(self.k)[self.pos]


class RelayAgent(Agent):
    def __init__(self, desc, kin, index, center=None):
        super().__init__(desc, kin, index)
        self.center = center  # waypoint, fixed data-center variant
        self.timer = 0.0
        self.dest = None


class Meeting:
    """Runtime state of an exchange between a source and a relay."""

    def __init__(self, source, relay, kind, mid, t):
        self.source = source
        self.relay = relay
        self.kind = kind  # committed | spontaneous | static
        self.mid = mid
        self.start = t
        self.stage = "transfer"
        self.timer = 0.0
        self.batch = 0


# --------------------------------------------------------------------------
# simulation

class Simulation:
    mode = "dynamic"

    def __init__(self, scenario, record_metrics=True):
        self.sc = scenario
        cfg = scenario.sim
        self.cfg = cfg
        self.dt = cfg.dt
        self.rm = scenario.roadmap_obj()
        self.ws = scenario.workspace_obj()
        self.speeds = scenario.resolved_speeds()
        self.noise_rng = random.Random(cfg.seed * 1_000_003 + 7)
        self.log = EventLog()
        self.metrics = []
        self.record_metrics = record_metrics
        self.step_idx = 0
        self.agents = {}
        self.order = []
        self.registry = {}  # meeting id -> Commitment
        self.next_mid = 1
        self.active = []  # running Meeting objects
        self.contacts = {}  # pair -> handled
        fp = scenario.variants.fault_policy
        self.policy = FaultPolicy(float(fp.get("t_max", 30.0)), bool(fp.get("enabled", False)))
        self.swap_enabled = bool(scenario.variants.swap)
        self.uploaded = {}
        self.gathered_total = 0
        self.waits = []  # (robot, duration)
        self.swaps = []
        self.plans = {}
        self.sync_seconds = 0.0
        self._tt = {}
        self._pending_events = sorted(
            [(f["time"], 0, "fault", f["robot"]) for f in scenario.variants.faults]
            + [(j["time"], 1, "join", j["robot"]["id"]) for j in scenario.variants.joins]
            + [(l["time"], 2, "leave", l["robot"]) for l in scenario.variants.leaves],
            key=lambda e: (e[0], e[1], e[3]))
        t0 = _time.perf_counter()
        for desc in scenario.robots:
            self._add_robot(desc, tuple(desc.start))
        self.sync_seconds = _time.perf_counter() - t0

    # ---- helpers --------------------------------------------------------
    @property
    def t(self):
        return self.step_idx * self.dt

    def emit(self, robot, kind, **payload):
        return self.log.emit(self.t, robot, kind, **payload)

    def travel(self, agent):
        v, w = agent.kin.v_ref, agent.kin.w_ref
        cache = self._tt
        rm = self.rm

        def tt(a, b):
            key = (a, b, v, w)
            val = cache.get(key)
            if val is None:
                if a == b:
                    val = 0.0
                else:
                    path = rm.shortest_path(a, b)
                    val = math.inf if path is None else rm.travel_time(path, v, w)
                cache[key] = val
            return val
        return tt

    def live(self):
        return [self.agents[i] for i in self.order if self.agents[i].alive]

    def in_range(self, a, b):
        return math.hypot(a.kin.x - b.kin.x, a.kin.y - b.kin.y) <= min(a.kin.range, b.kin.range)

    def meeting_estimate(self):
        return self.cfg.transfer_duration + self.cfg.upload_duration

    # ---- robots ---------------------------------------------------------
    def _add_robot(self, desc, pos):
        v, w = self.speeds[desc.id]
        kin = RobotKinematics(pos[0], pos[1], desc.heading, v, w, desc.range)
        idx = len(self.order)
        if desc.is_source:
            agent = self._make_source(desc, kin, idx)
        else:
            center = None
            if desc.id in self.sc.variants.centers:
                center = self.rm.nearest(self.sc.variants.centers[desc.id])
            agent = RelayAgent(desc, kin, idx, center)
            agent.phase = "idle"
        agent.anchor = self.rm.nearest(pos)
        self.agents[desc.id] = agent
        self.order.append(desc.id)
        return agent

    def _make_source(self, desc, kin, idx):
        rm = self.rm
        tasks = [RegionOfInterest(l, tuple(self.sc.regions[l]), rm.nearest(self.sc.regions[l]))
                 for l in desc.regions]
        # a robot spawned on a task region gets the closest free waypoint as home
        home = RegionOfInterest(HOME, tuple(kin.pos),
                                rm.nearest(kin.pos, avoid={r.waypoint for r in tasks}))
        regions = [home] + tasks
        try:
            fts = build_motion_fts(rm, regions, kin.v_ref, kin.w_ref, HOME)
        except PlanningError as e:
            raise ScenarioError([f"robot {desc.id}: {e}"])
        acts = [idle_action()]
        for lbl in desc.actions:
            a = self.sc.actions[lbl]
            acts.append(ActionSpec(lbl, float(a["duration"]), int(a.get("units", 0)),
                                   int(a.get("type", 0))))
        model = compose_robot_model(fts, acts)
        nba = translate_to_nba(parse_ltl(desc.task, self.sc.alphabet(desc)))
        product = build_product(model, nba)
        try:
            plan = synthesize_plan(product, model)
        except PlanningError as e:
            raise ScenarioError([f"robot {desc.id}: {e}"])
        self.plans[desc.id] = plan
        self.emit(desc.id, "plan",
                  prefix=[list(s) for s in plan.prefix_states],
                  suffix=[list(s) for s in plan.suffix_states],
                  prefix_cost=plan.prefix_cost, suffix_cost=plan.suffix_cost,
                  model_states=len(model.states), model_edges=model.n_transitions,
                  nba_states=len(nba.states), nba_edges=len(nba.transitions),
                  product_states=len(product.states), product_edges=product.n_transitions,
                  satisfies=plan_satisfies(plan, nba, model.label))
        return SourceAgent(desc, kin, idx, plan, model, nba)

    def set_route(self, agent, waypoints):
        agent.route = deque((w, self.rm.point(w)) for w in waypoints)

    def go_to(self, agent, wp):
        """Route ``agent`` to ``wp``. A robot between waypoints finishes its
        current hop first (turning back costs more than it saves)."""
        if agent.route:
            start = agent.route[0][0]
            keep = True
        else:
            start = agent.anchor
            # first hop back onto the roadmap if the robot sits off its anchor
            keep = self._off_anchor(agent)
        path = self.rm.shortest_path(start, wp)
        if path is None:
            raise InvariantViolation(f"{agent.id}: no route {start}->{wp}")
        if keep and not agent.route and len(path) > 1 and \
                self.ws.segment_free(agent.kin.pos, self.rm.point(path[1])):
            keep = False  # cut straight to the second waypoint
        self.set_route(agent, path if keep else path[1:])

    def _off_anchor(self, agent):
        p = self.rm.point(agent.anchor)
        return math.hypot(agent.kin.x - p[0], agent.kin.y - p[1]) > self.cfg.arrival_tolerance

    def _move(self, agent):
        """One motion step; returns True when the route is exhausted."""
        if not agent.route:
            return True
        wp, pt = agent.route[0]
        speed = None
        if self.cfg.velocity_noise > 0:
            speed = agent.kin.v_ref * (1 + self.noise_rng.gauss(0.0, self.cfg.velocity_noise))
        if step_unicycle(agent.kin, pt, self.dt, self.cfg.angular_tolerance,
                         self.cfg.arrival_tolerance, speed):
            agent.route.popleft()
            agent.anchor = wp
            return not agent.route
        return False

    # ---- main loop ------------------------------------------------------
    def run(self):
        t0 = _time.perf_counter()
        self.setup()
        n = int(round(self.cfg.horizon / self.dt))
        self._record()
        for step in range(1, n + 1):
            self.step_idx = step
            self._inject()
            for rid in self.order:
                a = self.agents[rid]
                if a.alive:
                    self.update(a)
            self._advance_meetings()
            self._contacts()
            self._timeouts()
            self._check()
            self._record()
        self.wall_clock = _time.perf_counter() - t0
        return self

    def setup(self):
        if self.mode == "dynamic":
            self.initial_coordination()
        for rid in self.order:
            a = self.agents[rid]
            if a.is_source:
                self.decide_source(a)
            else:
                self.decide_relay(a)

    # ---- source behaviour ----------------------------------------------
    def update(self, a):
        if a.meeting is not None:
            # robots hold still while exchanging; a relay may be ferrying
            if a is a.meeting.relay and a.meeting.stage == "ferry":
                self._ferry_step(a.meeting)
            return
        if a.is_source:
            self.update_source(a)
        else:
            self.update_relay(a)

    def update_source(self, s):
        ph = s.phase
        if ph in ("move", "detour", "return"):
            if self._move(s):
                if ph == "move":
                    s.pos += 1
                    self.decide_source(s)
                elif ph == "detour":
                    self._start_wait(s, s.wait_for)
                else:
                    s.resume = None
                    s.phase = "plan"
                    self.decide_source(s)
        elif ph == "act":
            s.timer -= self.dt
            if s.timer <= 1e-9:
                self._finish_action(s)
        elif ph == "plan":
            self.decide_source(s)

    def decide_source(self, s):
        if s.meeting is not None or not s.alive:
            return
        if s.pending:
            c = self.registry[s.pending[0]]
            if (c.leg, c.pos) == (s.k, s.pos):
                self._start_wait(s, ("meeting", c.meeting_id))
                return
            if (c.leg, c.pos) < (s.k, s.pos):
                raise InvariantViolation(
                    f"{s.id} passed meeting {c.meeting_id} at leg {c.leg} pos {c.pos}")
        if self.before_departure(s):
            return
        route = s.route_of(s.k)
        if s.pos < len(route) - 1:
            s.phase = "move"
            s.anchor = route[s.pos]
            self.set_route(s, [route[s.pos + 1]])
            return
        state = s.plan.state(s.k)
        act = s.model.actions[state[1]]
        if s.ledger.stored + act.data_units > s.ledger.capacity:
            self.blocked(s)
            return
        s.phase = "act"
        s.timer = act.duration
        if act.duration <= 0:
            self._finish_action(s)
        elif act.data_units:
            self.emit(s.id, "gather_start", k=s.k, region=state[0], action=state[1])

    def before_departure(self, s):
        """Hook for strategies that act before leaving a plan waypoint."""
        return False

    def blocked(self, s):
        """The next action would overflow: detour to the next committed
        meeting, or wait for any relay."""
        if s.pending:
            c = self.registry[s.pending[0]]
            self._detour(s, c.waypoint, ("meeting", c.meeting_id))
        else:
            self._start_wait(s, ("any", None), phase="stall")

    def _finish_action(self, s):
        state = s.plan.state(s.k)
        act = s.model.actions[state[1]]
        if act.data_units:
            apply_gather(s.ledger, act, self.t)
            self.gathered_total += act.data_units
            self.emit(s.id, "gather_end", k=s.k, region=state[0], action=state[1],
                      units=act.data_units, data_type=act.data_type, stored=s.ledger.stored)
        self.emit(s.id, "state", k=s.k, region=state[0], action=state[1])
        s.executed.append(s.k)
        s.k += 1
        s.pos = 0
        s.phase = "plan"
        s.anchor = s.route_of(s.k)[0]
        self.decide_source(s)

    def _detour(self, s, wp, wait_for):
        s.resume = (s.k, s.pos)
        s.wait_for = wait_for
        self.emit(s.id, "detour", waypoint=wp)
        if s.anchor == wp and not self._off_anchor(s):
            self._start_wait(s, wait_for)
            return
        s.phase = "detour"
        self.go_to(s, wp)

    def _return(self, s):
        k, pos = s.resume
        s.k, s.pos = k, pos
        target = s.route_of(k)[pos]
        if s.anchor == target and not self._off_anchor(s):
            s.resume = None
            s.phase = "plan"
            self.decide_source(s)
            return
        s.phase = "return"
        self.go_to(s, target)

    def _start_wait(self, a, wait_for, phase="wait"):
        if a.wait_since is not None:
            if a.wait_for == wait_for:
                # resumed after an interruption (spontaneous meeting, upload)
                a.phase = phase
                a.route.clear()
                return
            self._end_wait(a, "replanned")
        a.phase = phase
        a.wait_for = wait_for
        a.wait_since = self.t
        a.route.clear()
        self.emit(a.id, "wait_start", reason=wait_for[0],
                  meeting=wait_for[1] if wait_for[0] == "meeting" else None)

    def _end_wait(self, a, outcome):
        if a.wait_since is None:
            return
        d = self.t - a.wait_since
        self.waits.append((a.id, d, a.is_source))
        # time spent past the agreed meeting time; t_max bounds this part
        overdue = d
        if a.wait_for and a.wait_for[0] == "meeting":
            c = self.registry.get(a.wait_for[1])
            if c is not None:
                overdue = max(0.0, self.t - max(a.wait_since, c.time))
        self.emit(a.id, "wait_end", duration=d, overdue=overdue, outcome=outcome)
        a.wait_since = None

    # ---- relay behaviour ------------------------------------------------
    def update_relay(self, r):
        ph = r.phase
        if ph == "move":
            if self._move(r):
                self.decide_relay(r)
        elif ph == "center":
            if self._move(r):
                r.phase = "upload"
                r.timer = self.cfg.upload_duration
        elif ph == "upload":
            r.timer -= self.dt
            if r.timer <= 1e-9:
                self._upload_all(r)
                self.decide_relay(r)
        elif ph == "idle":
            if r.pending or (r.center is not None and r.ledger.stored):
                self.decide_relay(r)

    def decide_relay(self, r):
        if r.meeting is not None or not r.alive:
            return
        if r.center is not None and r.ledger.stored:
            self._to_center(r)
            return
        if r.pending:
            c = self.registry[r.pending[0]]
            if r.anchor == c.waypoint and not r.route and not self._off_anchor(r):
                if r.phase != "wait" or r.wait_for != ("meeting", c.meeting_id):
                    self._start_wait(r, ("meeting", c.meeting_id))
                return
            if r.phase == "move" and r.dest == c.waypoint and r.route:
                return
            if r.wait_since is not None:
                self._end_wait(r, "replanned")
            r.phase = "move"
            r.dest = c.waypoint
            self.go_to(r, c.waypoint)
            return
        if r.wait_since is not None:
            self._end_wait(r, "cleared")
        if r.leaving:
            self._depart(r)
            return
        r.phase = "idle"
        r.route.clear()

    def _to_center(self, r):
        if r.wait_since is not None:
            self._end_wait(r, "center")
        r.phase = "center"
        if r.anchor == r.center and not self._off_anchor(r):
            r.route.clear()
            r.phase = "upload"
            r.timer = self.cfg.upload_duration
            return
        self.go_to(r, r.center)

    def _upload_all(self, r):
        units = r.ledger.stored
        if units:
            for dtype, u in apply_upload(r.ledger, units, self.t):
                self.uploaded[dtype] = self.uploaded.get(dtype, 0) + u
                self.emit(r.id, "upload", units=u, data_type=dtype)

    # ---- meetings -------------------------------------------------------
    def _start_meeting(self, s, r, kind, mid):
        m = Meeting(s, r, kind, mid, self.t)
        for a in (s, r):
            a.saved_phase = a.phase
            a.phase = "meet"
            a.meeting = m
        self.emit(s.id, "meet_start", peer=r.id, meeting=mid, style=kind,
                  stored=s.ledger.stored)
        self.active.append(m)
        m.timer = self.cfg.transfer_duration
        if s.ledger.stored == 0:
            m.timer = 0.0
        self._advance(m, 0.0)

    def _advance_meetings(self):
        for m in list(self.active):
            self._advance(m, self.dt)

    def _batch_units(self, m):
        s, r = m.source, m.relay
        return min(s.ledger.stored, r.ledger.capacity - r.ledger.stored)

    def _advance(self, m, dt):
        s, r = m.source, m.relay
        m.timer -= dt
        while m.timer <= 1e-9:
            if m.stage == "transfer":
                units = self._batch_units(m)
                if units > 0:
                    if not self.in_range(s, r):
                        raise InvariantViolation(
                            f"transfer {s.id}->{r.id} out of range at t={self.t:.2f}")
                    apply_transfer(s.ledger, r.ledger, units, self.t)
                    self.emit(s.id, "transfer", peer=r.id, units=units,
                              meeting=m.mid, stored=s.ledger.stored)
                m.batch += 1
                if r.center is not None:
                    # fixed data center: ferry this load before taking more
                    if s.ledger.stored > 0 and units > 0:
                        m.stage = "ferry"
                        r.phase = "center"
                        self.go_to(r, r.center)
                        return
                    self._finish_meeting(m)
                    return
                if s.ledger.stored > 0 and units > 0:
                    m.stage = "upload"
                    m.timer += self.cfg.upload_duration
                    continue
                # last batch: release the source, relay uploads on its own
                self._finish_meeting(m)
                if r.ledger.stored and r.alive:
                    r.phase = "upload"
                    r.timer = self.cfg.upload_duration
                return
            elif m.stage == "upload":
                self._upload_all(r)
                m.stage = "transfer"
                m.timer += self.cfg.transfer_duration
            else:
                return

    def _ferry_step(self, m):
        """Relay away at the data center during a batched meeting."""
        r = m.relay
        if r.phase == "center":
            if self._move(r):
                r.phase = "upload"
                r.timer = self.cfg.upload_duration
        elif r.phase == "upload":
            r.timer -= self.dt
            if r.timer <= 1e-9:
                self._upload_all(r)
                r.phase = "back"
                self.go_to(r, self.rm.nearest(m.source.kin.pos))
        elif r.phase == "back":
            if self._move(r) or self.in_range(m.source, r):
                r.route.clear()
                m.stage = "transfer"
                m.timer = self.cfg.transfer_duration
                r.phase = "meet"

    def _finish_meeting(self, m):
        s, r = m.source, m.relay
        self.active.remove(m)
        s.meeting = None
        r.meeting = None
        self.emit(s.id, "meet_end", peer=r.id, meeting=m.mid, duration=self.t - m.start)
        was_target = s.wait_for == ("meeting", m.mid) or s.saved_phase == "stall" \
            or (m.kind == "static" and s.wait_for == ("relay", r.id))
        if m.mid is not None and m.kind == "committed":
            self._drop(m.mid)
        if s.saved_phase in _WAIT_PHASES and was_target:
            self._end_wait(s, "met")
        if r.saved_phase == "wait" and r.wait_for == ("meeting", m.mid):
            self._end_wait(r, "met")
        # book the next meeting with this relay unless one is already held;
        # it is anchored after the source's last commitment
        if self.mode == "dynamic" and s.alive and not s.leaving and r.alive \
                and not r.leaving and not any(self.registry[c].source == s.id for c in r.pending):
            self.coordinate_next(s, only=r)
        # restore the source
        if s.alive:
            if was_target:
                if s.resume is not None:
                    self._return(s)
                else:
                    s.phase = "plan"
                    self.decide_source(s)
            else:
                s.phase = s.saved_phase
                if s.phase == "plan":
                    self.decide_source(s)
        if r.alive:
            r.phase = "idle" if r.saved_phase in ("wait", "idle", "move") else r.saved_phase
            if r.phase == "meet":
                r.phase = "idle"
            self.decide_relay(r)

    def _drop(self, mid):
        c = self.registry.pop(mid, None)
        if c is None:
            return
        for rid in (c.source, c.relay):
            a = self.agents.get(rid)
            if a is not None and mid in a.pending:
                a.pending.remove(mid)

    # ---- coordination ---------------------------------------------------
    def _commit(self, s, r, cand, eta):
        mid = self.next_mid
        self.next_mid += 1
        c = Commitment(mid, s.id, r.id, cand.waypoint, max(eta, cand.time), cand.time,
                       cand.leg, cand.pos)
        self.registry[mid] = c
        for a in (s, r):
            a.pending.append(mid)
            a.pending.sort(key=lambda i: self.registry[i].key())
        return c

    def _request(self, s):
        """Meeting request anchored after the source's last commitment."""
        est = self.meeting_estimate()
        if s.pending:
            last = self.registry[s.pending[-1]]
            k, pos, t0, stored = last.leg, last.pos, max(last.time, last.source_time) + est, 0
        elif s.resume is not None:
            k, pos = s.resume
            back = self.travel(s)(s.anchor, s.route_of(k)[pos])
            t0, stored = self.t + back, s.ledger.stored
        else:
            k, pos, t0, stored = s.k, s.pos, self.t, s.ledger.stored
            heading, strict = s.kin.heading, True
            if s.route and s.route[0][0] == s.route_of(k)[min(pos + 1, len(s.route_of(k)) - 1)]:
                # between two plan waypoints: time the rest of this hop
                nxt = s.route[0][1]
                pos += 1
                t0 += math.hypot(nxt[0] - s.kin.x, nxt[1] - s.kin.y) / s.kin.v_ref
                strict = False
            _, req = compute_meet_window(s.plan, k, pos, stored, s.ledger.capacity, self.rm,
                                         s.kin.v_ref, s.kin.w_ref, t0, s.id, strict=strict,
                                         heading=heading)
            req.capacity = s.ledger.capacity
            return req
        _, req = compute_meet_window(s.plan, k, pos, stored, s.ledger.capacity, self.rm,
                                     s.kin.v_ref, s.kin.w_ref, t0, s.id)
        req.capacity = s.ledger.capacity
        return req

    def _relay_tail(self, r):
        if r.pending:
            c = self.registry[r.pending[-1]]
            return c.waypoint, c.time + self.meeting_estimate()
        wp = r.dest if (r.phase == "move" and r.route) else r.anchor
        extra = 0.0
        if r.phase == "upload":
            extra = r.timer
        return wp, self.t + extra

    def coordinate_next(self, s, prefer=None, only=None):
        if only is not None:
            relays = [only]
        else:
            relays = [a for a in self.live() if not a.is_source and not a.leaving
                      and (a is prefer or self.in_range(s, a))]
        if not relays:
            return None
        req = self._request(s)
        self.emit(s.id, "message", type="meet_request", to=[r.id for r in relays],
                  k_e=req.k_e, candidates=len(req.candidates))
        replies = []
        for r in relays:
            wp, t0 = self._relay_tail(r)
            try:
                rep = next_meeting(req, r.id, wp, t0, self.travel(r), center=r.center,
                                   relay_capacity=r.ledger.capacity)
            except PlanningError:
                continue
            replies.append(rep)
            self.emit(r.id, "message", type="meet_reply", to=s.id, waypoint=rep.waypoint,
                      eta=rep.time)
        if not replies:
            return None
        confirms = choose_relay(replies, req)
        chosen = None
        for rep, conf in zip(replies, confirms):
            self.emit(s.id, "message", type="meet_confirm", to=conf.relay_id,
                      accepted=conf.accepted)
            if conf.accepted:
                r = self.agents[rep.relay_id]
                chosen = self._commit(s, r, req.candidates[rep.index], rep.time)
                if r.phase == "idle":
                    self.decide_relay(r)
        return chosen

    def initial_coordination(self):
        sources = [a for a in self.live() if a.is_source]
        relays = [a for a in self.live() if not a.is_source]
        requests = {}
        for s in sources:
            requests[s.id] = self._request(s)
            self.emit(s.id, "message", type="meet_request",
                      to=[r.id for r in relays if self.in_range(s, r)],
                      k_e=requests[s.id].k_e, candidates=len(requests[s.id].candidates))
        offers = {s.id: [] for s in sources}
        for r in relays:
            near = [s for s in sources if self.in_range(s, r)]
            if not near:
                continue
            inst = ScheduleInstance(r.anchor, 0.0, [requests[s.id] for s in near],
                                    self.travel(r), r.center, r.ledger.capacity)
            cost, order, choice, replies = solve_initial_schedule(inst)
            for i, s in enumerate(near):
                wp, eta, idx = replies[i]
                from .coordination import MeetReply
                rep = MeetReply(r.id, wp, eta, idx)
                offers[s.id].append(rep)
                self.emit(r.id, "message", type="meet_reply", to=s.id, waypoint=wp, eta=eta)
        for s in sources:
            reps = offers[s.id]
            if not reps:
                continue
            confirms = choose_relay(reps, requests[s.id])
            for rep, conf in zip(reps, confirms):
                self.emit(s.id, "message", type="meet_confirm", to=conf.relay_id,
                          accepted=conf.accepted)
                if conf.accepted:
                    self._commit(s, self.agents[rep.relay_id],
                                 requests[s.id].candidates[rep.index], rep.time)

    # ---- contacts -------------------------------------------------------
    def _contacts(self):
        live = self.live()
        srcs = [a for a in live if a.is_source]
        rels = [a for a in live if not a.is_source]
        for r in rels:
            for s in srcs:
                key = (s.id, r.id)
                if not self.in_range(s, r):
                    self.contacts.pop(key, None)
                    continue
                self.contacts.setdefault(key, False)
                if s.meeting is not None or r.meeting is not None:
                    continue
                if s.phase == "act" or r.phase in ("center", "upload", "back"):
                    continue
                if self._try_committed(s, r):
                    self.contacts[key] = True
                    continue
                if self.try_static(s, r):
                    self.contacts[key] = True
                    continue
                if not self.contacts[key] and self.mode == "dynamic":
                    self.contacts[key] = True
                    if s.pending and any(self.registry[m].relay == r.id for m in s.pending):
                        continue
                    if r.leaving and not s.phase == "stall":
                        continue
                    self._start_meeting(s, r, "spontaneous", None)
        if self.mode == "dynamic" and self.swap_enabled:
            for i, a in enumerate(rels):
                for b in rels[i + 1:]:
                    key = (a.id, b.id)
                    if not self.in_range(a, b):
                        self.contacts.pop(key, None)
                        continue
                    if self.contacts.get(key):
                        continue
                    if a.meeting is not None or b.meeting is not None:
                        continue
                    self.contacts[key] = True
                    self.try_swap(a, b)

    def _try_committed(self, s, r):
        if not s.pending or not r.pending:
            return False
        mid = s.pending[0]
        if r.pending[0] != mid:
            return False
        # the source must have reached the agreed point of its plan (or be
        # detouring to it); meeting earlier would leave nothing to hand over
        if s.wait_for != ("meeting", mid) or s.phase not in ("wait", "detour"):
            return False
        self._start_meeting(s, r, "committed", mid)
        return True

    def try_static(self, s, r):
        return False

    def try_swap(self, a, b):
        if not a.pending and not b.pending:
            return
        if a.leaving or b.leaving:
            return
        ta, tb = self.travel(a), self.travel(b)
        wa, t_a = self._relay_head(a)
        wb, t_b = self._relay_head(b)
        pa = RelayPlan(a.id, wa, t_a, [self.registry[m] for m in a.pending])
        pb = RelayPlan(b.id, wb, t_b, [self.registry[m] for m in b.pending])
        new_a, new_b, before, after = swap_meetings(pa, pb, ta, tb)
        if after < before:
            moved = []
            for c in new_a:
                if c.relay != a.id:
                    moved.append((c.meeting_id, c.source, c.relay, a.id))
                    c.relay = a.id
            for c in new_b:
                if c.relay != b.id:
                    moved.append((c.meeting_id, c.source, c.relay, b.id))
                    c.relay = b.id
            a.pending = [c.meeting_id for c in new_a]
            b.pending = [c.meeting_id for c in new_b]
            self.swaps.append((self.t, a.id, b.id, before, after))
            self.emit(a.id, "message", type="swap", to=b.id, before=before, after=after,
                      moved=[list(x) for x in moved])
            for r in (a, b):
                if r.phase in ("wait", "move", "idle"):
                    self.decide_relay(r)

    def _relay_head(self, r):
        if r.route:
            wp = r.route[0][0]
            return wp, self.t + self.travel(r)(r.anchor, wp)
        return r.anchor, self.t

    # ---- faults and membership -----------------------------------------
    def _inject(self):
        while self._pending_events and self._pending_events[0][0] <= self.t + 1e-9:
            _, _, kind, rid = self._pending_events.pop(0)
            if kind == "fault":
                self.fail(rid)
            elif kind == "join":
                self.join(rid)
            else:
                self.leave(rid)

    def fail(self, rid):
        a = self.agents.get(rid)
        if a is None or not a.alive:
            return
        if a.meeting is not None:
            m = a.meeting
            self.active.remove(m)
            other = m.relay if a is m.source else m.source
            other.meeting = None
            self.emit(m.source.id, "meet_end", peer=m.relay.id, meeting=m.mid,
                      duration=self.t - m.start, aborted=True)
            if m.kind == "committed":
                self._drop(m.mid)
            if other.wait_since is not None:
                self._end_wait(other, "cancel")
            other.phase = "plan" if other.is_source else "idle"
            if other.is_source and other.resume is not None:
                self._return(other)
        if a.wait_since is not None:
            self._end_wait(a, "fault")
        a.phase = "dead"
        a.route.clear()
        self.emit(rid, "fault", stored=a.ledger.stored)
        # peers in range learn of the failure at once
        for mid in list(a.pending):
            c = self.registry[mid]
            peer = self.agents[c.relay if a.is_source else c.source]
            if peer.alive and self.in_range(a, peer):
                self.emit(rid, "message", type="cancel", to=peer.id, meeting=mid)
                self._drop(mid)
                self._after_drop(peer, mid)
            else:
                # the peer keeps it until its own timeout
                a.pending.remove(mid)
        a.pending = []

    def _after_drop(self, peer, mid):
        if peer.phase == "wait" and peer.wait_for == ("meeting", mid):
            self._end_wait(peer, "cancel")
            if peer.is_source:
                if peer.resume is not None:
                    self._return(peer)
                else:
                    peer.phase = "plan"
                    self.decide_source(peer)
            else:
                self.decide_relay(peer)
        elif not peer.is_source and peer.phase in ("move", "idle"):
            self.decide_relay(peer)

    def join(self, rid):
        jd = next(j for j in self.sc.variants.joins if j["robot"]["id"] == rid)
        desc = RobotSpec(**jd["robot"])
        pos = tuple(desc.start)
        if desc.near is not None:
            host = self.agents.get(desc.near)
            if host is None or not host.alive:
                self.emit(rid, "join", accepted=False, reason="host unavailable")
                return
            pos = (host.kin.x, host.kin.y)
        if desc.is_source:
            relays = [a for a in self.live() if not a.is_source]
            if not any(math.dist(pos, r.kin.pos) <= min(desc.range, r.kin.range) for r in relays):
                self.emit(rid, "join", accepted=False, reason="no relay in range")
                return
        a = self._add_robot(desc, pos)
        self.emit(rid, "join", accepted=True, x=pos[0], y=pos[1])
        if a.is_source:
            self.decide_source(a)
        else:
            self.decide_relay(a)

    def leave(self, rid):
        a = self.agents.get(rid)
        if a is None or not a.alive:
            return
        a.leaving = True
        self.emit(rid, "leave", stage="announced", pending=len(a.pending))
        if not a.pending and a.meeting is None:
            self._depart(a)

    def _depart(self, a):
        a.phase = "gone"
        a.route.clear()
        self.emit(a.id, "leave", stage="departed", stored=a.ledger.stored)

    def _timeouts(self):
        if not self.policy.enabled:
            return
        for a in self.live():
            if a.phase != "wait" or a.meeting is not None or a.wait_for[0] != "meeting":
                continue
            mid = a.wait_for[1]
            c = self.registry.get(mid)
            agreed = c.time if c is not None else a.wait_since
            since = max(a.wait_since, agreed)
            if self.t - since >= self.policy.t_max - 1e-9:
                self.emit(a.id, "timeout", meeting=mid)
                self._end_wait(a, "timeout")
                if mid in a.pending:
                    a.pending.remove(mid)
                if c is not None:
                    peer = self.agents[c.relay if a.is_source else c.source]
                    if mid not in peer.pending:
                        self.registry.pop(mid, None)
                if a.is_source:
                    if a.resume is not None:
                        self._return(a)
                    else:
                        a.phase = "plan"
                        self.decide_source(a)
                else:
                    self.decide_relay(a)
        for a in self.live():
            if a.leaving and not a.pending and a.meeting is None and a.phase not in ("upload", "center"):
                self._depart(a)

    # ---- checks and metrics --------------------------------------------
    def _check(self):
        stored_total = 0
        for rid in self.order:
            a = self.agents[rid]
            b = a.ledger.stored
            if b < 0 or b > a.ledger.capacity:
                raise InvariantViolation(f"{rid}: buffer {b} outside [0, {a.ledger.capacity}]")
            stored_total += b
        if stored_total + sum(self.uploaded.values()) != self.gathered_total:
            raise InvariantViolation("data not conserved")

    def _record(self):
        if not self.record_metrics:
            return
        live = self.live()
        comps = connectivity_components([a.kin.pos for a in live], [a.kin.range for a in live])
        row = {"time": round(self.t, 3)}
        for rid in self.order:
            row[rid] = self.agents[rid].ledger.stored
        row["component_max"] = comps[0] if comps else 0
        row["uploaded"] = dict(self.uploaded)
        self.metrics.append(row)

    # ---- results --------------------------------------------------------
    def summary(self):
        return summarize(self.log.events)


def summarize(events):
    """Totals recomputed from an event stream."""
    up = {}
    waits_src = 0.0
    waits_rel = 0.0
    swaps = []
    plans = {}
    meetings = 0
    kinds = {}
    for e in events:
        k = e["kind"]
        kinds[k] = kinds.get(k, 0) + 1
        if k == "upload":
            key = str(e["data_type"])
            up[key] = up.get(key, 0) + e["units"]
        elif k == "wait_end":
            if e["robot"] in plans:
                waits_src += e["duration"]
            else:
                waits_rel += e["duration"]
        elif k == "message" and e.get("type") == "swap":
            swaps.append({"t": e["t"], "relays": [e["robot"], e["to"]],
                          "before": e["before"], "after": e["after"]})
        elif k == "plan":
            plans[e["robot"]] = {"prefix_cost": e["prefix_cost"], "suffix_cost": e["suffix_cost"],
                                 "satisfies": e["satisfies"]}
        elif k == "meet_end" and not e.get("aborted"):
            meetings += 1
    return {
        "uploaded_by_type": dict(sorted(up.items(), key=lambda kv: int(kv[0]))),
        "uploaded_total": sum(up.values()),
        "meetings": meetings,
        "source_wait_total": round(waits_src, 4),
        "relay_wait_total": round(waits_rel, 4),
        "swaps": swaps,
        "plans": plans,
        "event_counts": dict(sorted(kinds.items())),
    }


def write_outputs(out_dir, sim, extra=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sim.log.write(out / "events.jsonl")
    write_metrics(out / "metrics.csv", sim)
    events = [json.loads(l) for l in (out / "events.jsonl").read_text().splitlines()]
    summary = summarize(events)
    summary["mode"] = sim.mode
    summary["scenario"] = sim.sc.name
    summary["seed"] = sim.sc.sim.seed
    summary["wall_clock_s"] = round(getattr(sim, "wall_clock", 0.0), 3)
    if extra:
        summary.update(extra)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def write_metrics(path, sim):
    types = sorted({int(t) for row in sim.metrics for t in row["uploaded"]}
                   | {int(a["type"]) for a in sim.sc.actions.values() if a.get("units", 0)})
    ids = list(sim.order)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"buffer_{i}" for i in ids] + ["component_max"]
                   + [f"uploaded_type_{t}" for t in types] + ["uploaded_total"])
        for row in sim.metrics:
            up = row["uploaded"]
            w.writerow([f"{row['time']:.3f}"] + [row.get(i, "") for i in ids]
                       + [row["component_max"]] + [up.get(t, 0) for t in types]
                       + [sum(up.values())])


def run_simulation(scenario, record_metrics=True):
    return Simulation(scenario, record_metrics).run()
