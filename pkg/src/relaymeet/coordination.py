"""Meeting protocol: windows, requests/replies/confirmations, the initial
schedule solver, next-meeting selection, swaps and fault bookkeeping.

Everything here is a pure function over plain values; the simulator owns the
mutable robot state and calls into these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import PlanningError
from .workspace import TimedPath, final_heading, timestamps

TIE = 1e-9


@dataclass(frozen=True)
class Candidate:
    """A waypoint on the source's route where a meeting may take place.

    ``leg`` is the plan index of the state the route leads into and ``pos`` the
    position inside that route; the source reaches it at ``time``.
    """
    waypoint: int
    time: float
    leg: int
    pos: int


@dataclass
class MeetRequest:
    source_id: str
    candidates: list
    k_e: int = 0
    weight: float = 1.0
    capacity: int = 0  # source buffer size, for the data-center variant

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("a request needs at least one candidate waypoint")
        times = [c.time for c in self.candidates]
        if any(b < a - 1e-9 for a, b in zip(times, times[1:])):
            raise ValueError("request times must be nondecreasing")

    @property
    def path(self):
        return TimedPath([c.waypoint for c in self.candidates],
                         [c.time for c in self.candidates])


@dataclass(frozen=True)
class MeetReply:
    relay_id: str
    waypoint: int
    time: float  # relay's estimated arrival
    index: int  # position in the request's candidate list


@dataclass(frozen=True)
class MeetConfirm:
    source_id: str
    relay_id: str
    accepted: bool


@dataclass
class Commitment:
    """One side's record of an agreed meeting."""
    meeting_id: int
    source: str
    relay: str
    waypoint: int
    time: float  # agreed time: max(relay estimate, source estimate)
    source_time: float
    leg: int
    pos: int

    def key(self):
        return (self.time, self.meeting_id)


@dataclass
class CommitmentTable:
    rows: dict = field(default_factory=dict)

    def add(self, robot, c):
        lst = self.rows.setdefault(robot, [])
        lst.append(c)
        lst.sort(key=Commitment.key)

    def of(self, robot):
        return self.rows.get(robot, [])

    def drop(self, robot, meeting_id):
        lst = self.rows.get(robot, [])
        self.rows[robot] = [c for c in lst if c.meeting_id != meeting_id]

    def ordered(self, robot):
        lst = self.of(robot)
        return all(a.key() <= b.key() for a, b in zip(lst, lst[1:]))


@dataclass(frozen=True)
class FaultPolicy:
    t_max: float = 30.0
    enabled: bool = False

    def __post_init__(self):
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")


# --------------------------------------------------------------------------
# meet window

def window_end(gathers, k_t, stored, capacity, limit=100000):
    """Largest ``k_e`` with ``stored + sum(gathers(k_t..k_e)) <= capacity``.

    ``gathers(k)`` gives the units gathered at unrolled plan index ``k``.
    Returns ``k_t - 1`` when even the next action would overflow.
    """
    total = stored
    k = k_t
    while k < k_t + limit:
        total += gathers(k)
        if total > capacity:
            return k - 1
        k += 1
    raise PlanningError("plan never fills the buffer (no gathering actions?)")


def leg_timeline(plan, roadmap, v_ref, w_ref, leg, pos, t0, heading=None):
    """Yield ``(leg, pos, waypoint, arrival)`` for every route waypoint from
    ``(leg, pos)`` on, and ``(leg, None, None, done)`` when the action of
    state ``leg`` completes. Turns between consecutive legs are charged, and
    so is the first one when ``heading`` is given. Infinite; callers stop
    when done."""
    t = t0
    k, p = leg, pos
    while True:
        route = plan.model.route(plan.state(k - 1), plan.state(k))
        pts = roadmap.path_points(route[p:])
        times = timestamps(pts, t, v_ref, w_ref, heading)
        heading = final_heading(pts, heading)
        for off, tt in enumerate(times):
            yield k, p + off, route[p + off], tt
        t = times[-1] + plan.model.actions[plan.state(k)[1]].duration
        yield k, None, None, t
        k, p = k + 1, 0


def compute_meet_window(plan, k_t, pos, stored, capacity, roadmap, v_ref, w_ref,
                        t_anchor, source_id="", strict=True, weight=1.0, heading=None):
    """Meeting window and request for a source standing at ``(k_t, pos)``.

    ``k_t`` is the next plan state to complete and ``pos`` the route position
    already reached on the leg into it. The candidate waypoints are those of
    the route from state ``k_e`` to ``k_e + 1``; when that route is a single
    waypoint (an action switch in place) the leg that arrives into the region
    is used as well. Positions at or before ``(k_t, pos)`` are excluded when
    ``strict``.
    """
    k_e = window_end(plan.gathered, k_t, stored, capacity)
    target = k_e + 1
    st = plan.state
    route_last = plan.model.route(st(target - 1), st(target))
    first_leg = target
    if len(route_last) == 1:
        j = target - 1
        while j > k_t and st(j - 1)[0] == st(j)[0]:
            j -= 1
        if j >= k_t and st(j - 1)[0] != st(j)[0]:
            first_leg = j
    cands = []
    here = None
    for k, p, wp, tt in leg_timeline(plan, roadmap, v_ref, w_ref, k_t, pos, t_anchor, heading):
        if here is None:
            here = Candidate(wp, tt, k, p)
        if k > target:
            break
        if p is None or k < first_leg:
            continue
        if strict and (k, p) <= (k_t, pos):
            continue
        if k < target and wp == route_last[0]:
            continue  # the region waypoint is offered once, on the last leg
        cands.append(Candidate(wp, tt, k, p))
    if not cands:
        # the very next action would overflow: meet where the source stands
        cands = [here]
    return k_e, MeetRequest(source_id, cands, k_e, weight, capacity)


# --------------------------------------------------------------------------
# initial schedule (generalized path TSP by exact DP)

@dataclass
class ScheduleInstance:
    """Relay start plus one candidate list per source. ``travel(a, b)`` is the
    relay's travel-time estimate between waypoints."""
    start_waypoint: int
    start_time: float
    requests: list
    travel: object
    center: int | None = None
    relay_capacity: int = 0

    def extra(self, req, wp):
        if self.center is None:
            return 0.0
        return trips(req.capacity, self.relay_capacity) * self.travel(wp, self.center)


def trips(source_capacity, relay_capacity):
    """Data-center travel multiplier: two legs per relay load."""
    return 2 * math.ceil(source_capacity / relay_capacity)


def schedule_cost(inst, order, choice):
    """Objective of visiting sources in ``order`` using candidate ``choice``."""
    total = 0.0
    prev = None
    for i in order:
        req = inst.requests[i]
        c = req.candidates[choice[i]]
        if prev is None:
            arr = inst.start_time + inst.travel(inst.start_waypoint, c.waypoint)
        else:
            preq, pc = prev
            arr = pc.time + inst.travel(pc.waypoint, c.waypoint) + inst.extra(preq, pc.waypoint)
        total += req.weight * abs(arr - c.time)
        prev = (req, c)
    return total


def solve_initial_schedule(inst):
    """Exact minimum of the summed waiting cost.

    Returns ``(cost, order, choice, replies)`` where ``choice[i]`` indexes
    request ``i``'s candidates and ``replies[i]`` carries the relay estimate.
    """
    reqs = inst.requests
    n = len(reqs)
    if n == 0:
        raise ValueError("no requests")
    T = inst.travel
    # dp[(mask, i, a)] = best cost ending at source i candidate a
    dp = {}
    par = {}
    for i, r in enumerate(reqs):
        for a, c in enumerate(r.candidates):
            tt = T(inst.start_waypoint, c.waypoint)
            if tt == math.inf:
                continue
            key = (1 << i, i, a)
            dp[key] = r.weight * abs(inst.start_time + tt - c.time)
            par[key] = None
    for mask in range(1, 1 << n):
        for i in range(n):
            if not mask & (1 << i):
                continue
            ri = reqs[i]
            for a, ca in enumerate(ri.candidates):
                key = (mask, i, a)
                if key not in dp:
                    continue
                base = dp[key]
                ex = inst.extra(ri, ca.waypoint)
                for h in range(n):
                    if mask & (1 << h):
                        continue
                    rh = reqs[h]
                    nm = mask | (1 << h)
                    for b, cb in enumerate(rh.candidates):
                        tt = T(ca.waypoint, cb.waypoint)
                        if tt == math.inf:
                            continue
                        # same summation order as schedule_cost
                        v = base + rh.weight * abs(ca.time + tt + ex - cb.time)
                        nk = (nm, h, b)
                        old = dp.get(nk)
                        if old is None or v < old or (
                                v == old and _better_tie(par, nk, key)):
                            dp[nk] = v
                            par[nk] = key
    full = (1 << n) - 1
    ends = [(v, k) for k, v in dp.items() if k[0] == full]
    if not ends:
        raise PlanningError("some request waypoint is unreachable for the relay")
    ends.sort(key=lambda vk: (vk[0], vk[1][1], reqs[vk[1][1]].candidates[vk[1][2]].waypoint, vk[1][2]))
    best_cost, key = ends[0]
    seq = []
    while key is not None:
        seq.append(key)
        key = par[key]
    seq.reverse()
    order = [k[1] for k in seq]
    choice = {k[1]: k[2] for k in seq}
    replies = {}
    prev = None
    for i in order:
        c = reqs[i].candidates[choice[i]]
        if prev is None:
            eta = inst.start_time + T(inst.start_waypoint, c.waypoint)
        else:
            preq, pc = prev
            eta = pc.time + T(pc.waypoint, c.waypoint) + inst.extra(preq, pc.waypoint)
        replies[i] = (c.waypoint, eta, choice[i])
        prev = (reqs[i], c)
    return best_cost, order, choice, replies


def _better_tie(par, new_key, cand_parent):
    # deterministic tie-break: prefer the lexicographically smaller parent
    old_parent = par.get(new_key)
    if old_parent is None:
        return False
    return cand_parent < old_parent


def relay_timed_path(inst, order, replies, roadmap, v_ref, w_ref):
    """Concatenate the relay's roadmap routes through the chosen waypoints.

    The relay waits at each meeting until the source's estimated time there.
    """
    wps = [inst.start_waypoint]
    times = [inst.start_time]
    for i in order:
        wp = replies[i][0]
        c = inst.requests[i].candidates[replies[i][2]]
        seg = roadmap.shortest_path(wps[-1], wp)
        if seg is None:
            raise PlanningError("unreachable meeting waypoint")
        ts = roadmap.timestamps(seg, times[-1], v_ref, w_ref)
        wps.extend(seg[1:])
        times.extend(ts[1:])
        if times[-1] < c.time:
            wps.append(wp)
            times.append(c.time)
    return TimedPath(wps, times)


# --------------------------------------------------------------------------
# replies, confirmation, next meeting

def choose_relay(replies, request):
    """Accept the reply with the least waiting time for the source."""
    if not replies:
        raise ValueError("no replies")
    waits = []
    for r in replies:
        if not (0 <= r.index < len(request.candidates)) or \
                request.candidates[r.index].waypoint != r.waypoint:
            raise ValueError(f"reply from {r.relay_id} is not on the request path")
        waits.append((abs(r.time - request.candidates[r.index].time), r.relay_id))
    best = min(waits)
    return [MeetConfirm(request.source_id, r.relay_id, (w, r.relay_id) == best)
            for r, w in zip(replies, [w for w, _ in waits])]


def next_meeting(request, relay_id, last_waypoint, last_time, travel,
                 center=None, relay_capacity=0):
    """Reply minimizing the source's waiting time given the relay's last
    committed waypoint and time. With ``center`` set, each candidate is
    charged the round trips to the data center."""
    best = None
    for idx, c in enumerate(request.candidates):
        tt = travel(last_waypoint, c.waypoint)
        if tt == math.inf:
            continue
        eta = last_time + tt
        cost = eta - c.time
        if center is not None:
            cost += trips(request.capacity, relay_capacity) * travel(c.waypoint, center)
        key = (abs(cost), c.waypoint, idx)
        if best is None or key < best[0]:
            best = (key, MeetReply(relay_id, c.waypoint, eta, idx))
    if best is None:
        raise PlanningError("no reachable candidate waypoint")
    return best[1]


def next_meeting_with_center(request, relay_id, last_waypoint, last_time, travel,
                             center, relay_capacity):
    return next_meeting(request, relay_id, last_waypoint, last_time, travel,
                        center=center, relay_capacity=relay_capacity)


# --------------------------------------------------------------------------
# swaps

@dataclass
class RelayPlan:
    """A relay's position/time and its pending meetings (time ordered)."""
    relay_id: str
    waypoint: int
    time: float
    meetings: list  # Commitment


def sequence_wait(start_wp, start_time, meetings, travel):
    """Summed source waiting when a relay serves ``meetings`` in order."""
    total = 0.0
    wp, t = start_wp, start_time
    for m in meetings:
        eta = t + travel(wp, m.waypoint)
        total += abs(eta - m.source_time)
        wp, t = m.waypoint, max(eta, m.source_time)
    return total


def swap_meetings(a, b, travel_a, travel_b):
    """Greedy reassignment of two relays' meetings.

    Returns ``(new_a, new_b, before, after)``; the lists equal the inputs when
    the reassignment does not strictly reduce total waiting time.
    """
    before = (sequence_wait(a.waypoint, a.time, a.meetings, travel_a)
              + sequence_wait(b.waypoint, b.time, b.meetings, travel_b))
    merged = sorted(a.meetings + b.meetings, key=Commitment.key)
    ends = {a.relay_id: [a.waypoint, a.time], b.relay_id: [b.waypoint, b.time]}
    out = {a.relay_id: [], b.relay_id: []}
    travel = {a.relay_id: travel_a, b.relay_id: travel_b}
    after = 0.0
    for m in merged:
        scored = []
        for rid in sorted(out):
            wp, t = ends[rid]
            eta = t + travel[rid](wp, m.waypoint)
            scored.append((abs(eta - m.source_time), rid, eta))
        w, rid, eta = min(scored)
        out[rid].append(m)
        ends[rid] = [m.waypoint, max(eta, m.source_time)]
        after += w
    if after < before - 1e-9:
        return out[a.relay_id], out[b.relay_id], before, after
    return list(a.meetings), list(b.meetings), before, before
