"""Robot abstractions: regions and actions, the motion transition system over
regions, the composed motion+action model, and the data buffer ledger."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .errors import BufferOverflow, PlanningError, TransferError

IDLE = "g0"
CENTER = "center"


@dataclass(frozen=True)
class RegionOfInterest:
    label: str
    center: tuple
    waypoint: int
    area: tuple | None = None  # optional polygon; the center is what snaps


@dataclass(frozen=True)
class ActionSpec:
    label: str
    duration: float  # seconds
    data_units: int = 0
    data_type: int = 0

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("action duration must be nonnegative")
        if self.data_units < 0:
            raise ValueError("data_units must be nonnegative")

    @property
    def idle(self):
        return self.data_units == 0


def idle_action():
    return ActionSpec(IDLE, 0.0, 0, 0)


@dataclass
class MotionFts:
    """Regions plus timed roadmap routes between them.

    ``routes[(a, b)]`` holds the waypoint path from region ``a`` to ``b`` and
    ``durations[(a, b)]`` its estimated travel time.
    """
    regions: list
    routes: dict
    durations: dict
    initial: str

    def region(self, label):
        for r in self.regions:
            if r.label == label:
                return r
        raise KeyError(label)

    @property
    def labels(self):
        return [r.label for r in self.regions]


def build_motion_fts(roadmap, regions, v_ref, w_ref, initial=None):
    """Connect every ordered region pair whose shortest route avoids the
    waypoints of all other regions."""
    wps = [r.waypoint for r in regions]
    if len(set(wps)) != len(wps):
        raise PlanningError("regions must snap to distinct waypoints")
    if len({r.label for r in regions}) != len(regions):
        raise PlanningError("duplicate region label")
    initial = initial if initial is not None else regions[0].label
    routes, durations = {}, {}
    for a in regions:
        for b in regions:
            if a is b:
                continue
            others = set(wps) - {a.waypoint, b.waypoint}
            path = roadmap.shortest_path(a.waypoint, b.waypoint, others)
            if path is None:
                continue
            routes[(a.label, b.label)] = path
            durations[(a.label, b.label)] = roadmap.travel_time(path, v_ref, w_ref)
    fts = MotionFts(list(regions), routes, durations, initial)
    seen = {initial}
    todo = [initial]
    while todo:
        x = todo.pop()
        for (s, t) in routes:
            if s == x and t not in seen:
                seen.add(t)
                todo.append(t)
    missing = [r.label for r in regions if r.label not in seen]
    if missing:
        raise PlanningError(f"regions unreachable from {initial}: {missing}")
    return fts


@dataclass
class RobotModel:
    """Composed model whose states are ``(region, action)`` label pairs."""
    states: list
    succ: dict  # state -> list of (state, duration)
    initial: tuple
    actions: dict  # label -> ActionSpec
    fts: MotionFts

    def label(self, state):
        return frozenset(state)

    @property
    def n_transitions(self):
        return sum(len(v) for v in self.succ.values())

    def duration(self, a, b):
        for s, d in self.succ[a]:
            if s == b:
                return d
        raise KeyError((a, b))

    def route(self, a, b):
        """Waypoint path executed when moving from state ``a`` to ``b``."""
        if a[0] == b[0]:
            return [self.fts.region(a[0]).waypoint]
        return self.fts.routes[(a[0], b[0])]

    def propositions(self):
        return set(self.fts.labels) | set(self.actions)


def compose_robot_model(fts, actions):
    acts = {a.label: a for a in actions}
    if IDLE not in acts:
        raise ValueError("the idle action g0 is required")
    if acts[IDLE].data_units:
        raise ValueError("the idle action gathers no data")
    act_order = [a.label for a in actions]
    states = [(r, g) for r in fts.labels for g in act_order]
    succ = {s: [] for s in states}
    for (r, g) in states:
        for r2 in fts.labels:
            if r2 == r:
                for g2 in act_order:
                    succ[(r, g)].append(((r, g2), acts[g2].duration))
            elif (r, r2) in fts.routes:
                succ[(r, g)].append(((r2, IDLE), fts.durations[(r, r2)] + acts[IDLE].duration))
    return RobotModel(states, succ, (fts.initial, IDLE), acts, fts)


# --------------------------------------------------------------------------
# buffers

@dataclass(frozen=True)
class TransferEvent:
    kind: str  # gather | transfer_out | transfer_in | upload
    units: int
    peer: object
    time: float
    data_type: int

    def __post_init__(self):
        if self.units <= 0:
            raise ValueError("event units must be positive")


@dataclass
class BufferLedger:
    """Bounded FIFO buffer of typed data batches with an event history."""
    capacity: int
    owner: object = None
    batches: deque = field(default_factory=deque)
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("capacity must be nonnegative")

    @property
    def stored(self):
        return sum(u for _, u in self.batches)

    @property
    def free(self):
        return self.capacity - self.stored

    def _push(self, dtype, units):
        if self.batches and self.batches[-1][0] == dtype:
            self.batches[-1][1] += units
        else:
            self.batches.append([dtype, units])

    def _pop(self, units):
        moved = []
        while units > 0:
            head = self.batches[0]
            take = min(units, head[1])
            if moved and moved[-1][0] == head[0]:
                moved[-1][1] += take
            else:
                moved.append([head[0], take])
            head[1] -= take
            units -= take
            if head[1] == 0:
                self.batches.popleft()
        return [(t, u) for t, u in moved]

    def snapshot(self):
        return self.stored, [tuple(b) for b in self.batches]


def apply_gather(ledger, action, t):
    if action.data_units == 0:
        return ledger
    if ledger.stored + action.data_units > ledger.capacity:
        raise BufferOverflow(
            f"robot {ledger.owner}: gathering {action.data_units} units with "
            f"{ledger.stored}/{ledger.capacity} stored at t={t:.2f}")
    ledger._push(action.data_type, action.data_units)
    ledger.history.append(TransferEvent("gather", action.data_units, None, t,
                                        action.data_type))
    return ledger


def apply_transfer(src, dst, units, t):
    """Move ``units`` oldest units from ``src`` to ``dst``; returns the moved
    (data_type, units) pieces."""
    if units < 0:
        raise TransferError("negative transfer")
    if units > src.stored:
        raise TransferError(f"transfer of {units} exceeds stored {src.stored}")
    if dst.stored + units > dst.capacity:
        raise TransferError(
            f"transfer of {units} overflows receiver ({dst.stored}/{dst.capacity})")
    if units == 0:
        return []
    pieces = src._pop(units)
    for dtype, u in pieces:
        dst._push(dtype, u)
        src.history.append(TransferEvent("transfer_out", u, dst.owner, t, dtype))
        dst.history.append(TransferEvent("transfer_in", u, src.owner, t, dtype))
    return pieces


def apply_upload(ledger, units, t, peer=CENTER):
    if units < 0 or units > ledger.stored:
        raise TransferError(f"upload of {units} with {ledger.stored} stored")
    if units == 0:
        return []
    pieces = ledger._pop(units)
    for dtype, u in pieces:
        ledger.history.append(TransferEvent("upload", u, peer, t, dtype))
    return pieces


def replay(history):
    """Stored units implied by an event history starting from empty."""
    total = 0
    for ev in history:
        if ev.kind in ("gather", "transfer_in"):
            total += ev.units
        else:
            total -= ev.units
    return total


def uploaded_by_type(ledgers):
    out = {}
    for led in ledgers:
        for ev in led.history:
            if ev.kind == "upload":
                out[ev.data_type] = out.get(ev.data_type, 0) + ev.units
    return out


def batch_sizes(units, cap):
    """Split ``units`` into batches of at most ``cap``."""
    if cap <= 0:
        raise ValueError("receiver capacity must be positive")
    n = math.ceil(units / cap)
    return [min(cap, units - k * cap) for k in range(n)]
