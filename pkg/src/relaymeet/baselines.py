"""Comparison strategies: static relays, a single connected group, and a
centralized planner over the joint team state.
"""

from __future__ import annotations

import itertools
import math
import time as _time
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import InvariantViolation, PlanningError, SizeBoundExceeded
from .ltl import guard_holds, parse_ltl, translate_to_nba
from .model import (ActionSpec, RegionOfInterest, apply_gather, apply_transfer,
                    build_motion_fts, compose_robot_model, idle_action)
from .scenario import HOME
from .synthesis import plan_for
from .sim import RobotKinematics, Simulation, connectivity_components, step_unicycle


# --------------------------------------------------------------------------
# static relays

class StaticOneSimulation(Simulation):
    """Relays stay where they start; a source whose next gather would
    overflow its buffer first visits the relay it can reach soonest."""
    mode = "static1"

    def before_departure(self, s):
        if s.pos != 0 or s.resume is not None:
            return False
        units = _next_gather(s.plan, s.k)
        if units is None or s.ledger.stored + units <= s.ledger.capacity:
            return False
        return self._visit_relay(s)

    def blocked(self, s):
        if not self._visit_relay(s):
            self._start_wait(s, ("any", None), phase="stall")

    def _visit_relay(self, s):
        tt = self.travel(s)
        best = None
        for r in self.live():
            if r.is_source:
                continue
            c = tt(s.anchor, r.anchor)
            if c < math.inf and (best is None or (c, r.index) < best[0]):
                best = ((c, r.index), r)
        if best is None:
            return False
        r = best[1]
        if self.in_range(s, r):
            s.resume = (s.k, s.pos)
            self._start_wait(s, ("relay", r.id))
            return True
        self._detour(s, r.anchor, ("relay", r.id))
        return True

    def try_static(self, s, r):
        if s.wait_for == ("relay", r.id) and s.phase in ("detour", "wait"):
            s.route.clear()
            self._start_meeting(s, r, "static", None)
            return True
        return False


def run_static_one(scenario, record_metrics=True):
    return StaticOneSimulation(scenario, record_metrics).run()


class StaticTwoSimulation(Simulation):
    """The whole team moves as one connected group.

    Robots first rally at a common waypoint. After that the group follows one
    source at a time, in id order, through its plan until that source's next
    gather would overflow its buffer; the source then hands its data to a
    relay that uploads it, and the turn passes on. The group moves at the
    slowest robot's speeds.
    """
    mode = "static2"

    def setup(self):
        self._uploading = {}
        self._script = self._run_script()

    def _tick_uploads(self):
        for rid in list(self._uploading):
            self._uploading[rid] -= self.dt
            if self._uploading[rid] <= 1e-9:
                del self._uploading[rid]
                self._upload_all(self.agents[rid])

    def run(self):
        t0 = _time.perf_counter()
        self.setup()
        n = int(round(self.cfg.horizon / self.dt))
        self._record()
        for step in range(1, n + 1):
            self.step_idx = step
            next(self._script)
            self._tick_uploads()
            self._check()
            if self.rallied:
                comps = connectivity_components([a.kin.pos for a in self.live()],
                                                [a.kin.range for a in self.live()])
                if len(comps) != 1:
                    raise InvariantViolation("group lost connectivity")
            self._record()
        self.wall_clock = _time.perf_counter() - t0
        return self

    rallied = False

    def _run_script(self):
        live = self.live()
        srcs = [a for a in live if a.is_source]
        rels = [a for a in live if not a.is_source]
        xs = [a.kin.x for a in live]
        ys = [a.kin.y for a in live]
        rally = self.rm.nearest((sum(xs) / len(xs), sum(ys) / len(ys)))
        for a in live:
            self.go_to(a, rally)
            a.phase = "move"
        self.emit("team", "rally", waypoint=rally)
        while any(a.route for a in live):
            yield
            for a in live:
                if a.route:
                    self._move(a)
        self.rallied = True
        self.emit("team", "rally_done")
        lead = min(live, key=lambda a: (a.kin.v_ref, a.index))
        group = RobotKinematics(lead.kin.x, lead.kin.y, lead.kin.heading,
                                min(a.kin.v_ref for a in live),
                                min(a.kin.w_ref for a in live), 1.0)
        anchor = rally
        while True:
            for s in srcs:
                while True:
                    ahead = _next_gather(s.plan, s.k)
                    if ahead is not None and s.ledger.stored + ahead > s.ledger.capacity:
                        break
                    route = s.route_of(s.k)
                    path = self.rm.shortest_path(anchor, route[0])[:-1] + route
                    for wp in path[1:] if path[0] == anchor else path:
                        while not step_unicycle(group, self.rm.point(wp), self.dt,
                                                self.cfg.angular_tolerance,
                                                self.cfg.arrival_tolerance):
                            self._sync(live, group)
                            yield
                        self._sync(live, group)
                        anchor = wp
                    state = s.plan.state(s.k)
                    act = s.model.actions[state[1]]
                    t_left = act.duration
                    while t_left > 1e-9:
                        yield
                        t_left -= self.dt
                    if act.data_units:
                        apply_gather(s.ledger, act, self.t)
                        self.gathered_total += act.data_units
                        self.emit(s.id, "gather_end", k=s.k, region=state[0], action=state[1],
                                  units=act.data_units, data_type=act.data_type,
                                  stored=s.ledger.stored)
                    self.emit(s.id, "state", k=s.k, region=state[0], action=state[1])
                    s.executed.append(s.k)
                    s.k += 1
                    if ahead is None:
                        break
                # hand over to the roomiest relay that is not busy uploading
                while s.ledger.stored:
                    ready = [x for x in rels if x.id not in self._uploading and x.ledger.free]
                    if not ready:
                        yield
                        continue
                    r = max(ready, key=lambda x: (x.ledger.free, -x.index))
                    units = min(s.ledger.stored, r.ledger.free)
                    self.emit(s.id, "meet_start", peer=r.id, meeting=None, style="group",
                              stored=s.ledger.stored)
                    t_left = self.cfg.transfer_duration
                    while t_left > 1e-9:
                        yield
                        t_left -= self.dt
                    apply_transfer(s.ledger, r.ledger, units, self.t)
                    self.emit(s.id, "transfer", peer=r.id, units=units, meeting=None,
                              stored=s.ledger.stored)
                    self.emit(s.id, "meet_end", peer=r.id, meeting=None, duration=0.0)
                    # the relay uploads while the group carries on
                    self._uploading[r.id] = self.cfg.upload_duration

    def _sync(self, live, group):
        for a in live:
            a.kin.x, a.kin.y, a.kin.heading = group.x, group.y, group.heading


def _next_gather(plan, k, horizon=10_000):
    """Units of the next gathering state at or after ``k`` (None if none)."""
    for i in range(k, k + horizon):
        units = plan.gathered(i)
        if units:
            return units
    return None


def run_static_two(scenario, record_metrics=True):
    return StaticTwoSimulation(scenario, record_metrics).run()


# --------------------------------------------------------------------------
# centralized planner

@dataclass
class CentralResult:
    prefix_cost: float
    suffix_cost: float
    states_explored: int
    estimate: float
    wall_clock: float
    prefix: list
    suffix: list


def _source_parts(scenario, desc, rm, speeds):
    v, w = speeds[desc.id]
    home = RegionOfInterest(HOME, tuple(desc.start), rm.nearest(desc.start))
    regions = [home] + [RegionOfInterest(l, tuple(scenario.regions[l]),
                                         rm.nearest(scenario.regions[l])) for l in desc.regions]
    fts = build_motion_fts(rm, regions, v, w, HOME)
    acts = [idle_action()] + [ActionSpec(l, float(scenario.actions[l]["duration"]),
                                         int(scenario.actions[l].get("units", 0)),
                                         int(scenario.actions[l].get("type", 0)))
                              for l in desc.actions]
    model = compose_robot_model(fts, acts)
    nba = translate_to_nba(parse_ltl(desc.task, scenario.alphabet(desc)))
    return model, nba


def distributed_suffix_cost(scenario):
    """Longest local plan suffix over the sources, charged with the same
    exchange time as the joint planner: one transfer plus upload per full
    buffer, amortized over a pass of the suffix. Returns (cost, seconds)."""
    t0 = _time.perf_counter()
    rm = scenario.roadmap_obj()
    speeds = scenario.resolved_speeds()
    exchange = scenario.sim.transfer_duration + scenario.sim.upload_duration
    worst = 0.0
    for desc in scenario.sources:
        model, nba = _source_parts(scenario, desc, rm, speeds)
        plan = plan_for(model, nba)
        units = sum(model.actions[st[1]].data_units for st in plan.suffix_states)
        worst = max(worst, plan.suffix_cost + exchange * units / desc.capacity)
    return worst, _time.perf_counter() - t0


def composed_size_estimate(scenario):
    """Upper bound on the joint product size used to refuse large teams."""
    rm = scenario.roadmap_obj()
    speeds = scenario.resolved_speeds()
    est = 1.0
    src_regions = set()
    for desc in scenario.sources:
        model, nba = _source_parts(scenario, desc, rm, speeds)
        est *= len(model.states) * (desc.capacity + 1) * len(nba.states)
        src_regions |= set(desc.regions)
    for desc in scenario.relays:
        est *= (len(src_regions) + 1) * (desc.capacity + 1)
    return est


def centralized_synthesize(scenario, bound=None):
    """Optimal lasso for the whole team over the synchronized joint system.

    Each joint step moves every robot by one transition of its own model (or
    keeps it in place); the step takes as long as the slowest robot. A loaded
    source that shares a waypoint with a relay may hand over its whole
    buffer, which the relay uploads at once. A gather that would overflow the
    source's buffer is not allowed. Among accepting lassos the one with the
    shortest suffix wins, ties broken by total cost. Raises SizeBoundExceeded
    when the size estimate exceeds ``bound``.
    """
    t0 = _time.perf_counter()
    bound = scenario.variants.state_bound if bound is None else bound
    est = composed_size_estimate(scenario)
    if est > bound:
        raise SizeBoundExceeded(est, bound)
    rm = scenario.roadmap_obj()
    speeds = scenario.resolved_speeds()
    srcs = scenario.sources
    rels = scenario.relays
    parts = [_source_parts(scenario, s, rm, speeds) for s in srcs]
    # relay locations: its own home plus every source region, all as waypoints
    rel_locs = []
    rel_tt = []
    rel_wp = []  # relay location name -> waypoint
    src_wp = [{r.label: r.waypoint for r in p[0].fts.regions} for p in parts]
    for r in rels:
        v, w = speeds[r.id]
        locs = {HOME: rm.nearest(r.start)}
        for s in srcs:
            for l in s.regions:
                locs[l] = rm.nearest(scenario.regions[l])
        names = sorted(locs)
        rel_wp.append(locs)
        tt = {}
        for a in names:
            for b in names:
                if a != b:
                    p = rm.shortest_path(locs[a], locs[b])
                    tt[(a, b)] = math.inf if p is None else rm.travel_time(p, v, w)
        rel_locs.append(names)
        rel_tt.append(tt)

    exchange = scenario.sim.transfer_duration + scenario.sim.upload_duration

    def src_moves(i, st):
        model, _ = parts[i]
        # (next state, duration, took a transition); staying does not advance
        # the task automaton
        return [(st[0], 0.0, False)] + [(m2, d, True) for m2, d in model.succ[st[0]]]

    def rel_moves(j, loc):
        out = [(loc, 0.0)]
        for b in rel_locs[j]:
            if b != loc and rel_tt[j][(loc, b)] < math.inf:
                out.append((b, rel_tt[j][(loc, b)]))
        return out

    def successors(node):
        srcs_st, rels_st, qs = node
        s_opts = [src_moves(i, st) for i, st in enumerate(srcs_st)]
        r_opts = [rel_moves(j, loc) for j, loc in enumerate(rels_st)]
        for combo in itertools.product(*s_opts, *r_opts):
            smv = combo[:len(srcs_st)]
            rmv = combo[len(srcs_st):]
            if not any(mv[2] for mv in smv) and all(loc == rels_st[j] for j, (loc, _) in enumerate(rmv)):
                continue
            dur = max([mv[1] for mv in combo] + [0.0])
            new_src = []
            ok = True
            for i, ((m2, _, moved), (ms, buf)) in enumerate(zip(smv, srcs_st)):
                units = parts[i][0].actions[m2[1]].data_units if moved else 0
                if buf + units > srcs[i].capacity:
                    ok = False
                    break
                new_src.append([m2, buf + units])
            if not ok:
                continue
            new_q = []
            for i, ss in enumerate(new_src):
                if not smv[i][2]:
                    new_q.append([qs[i]])
                    continue
                model, nba = parts[i]
                letter = model.label(ss[0])
                nxt = sorted({q2 for g, q2 in nba.out(qs[i]) if guard_holds(g, letter)})
                if not nxt:
                    ok = False
                    break
                new_q.append(nxt)
            if not ok:
                continue
            # a loaded source sharing a waypoint with a relay may hand over
            # everything; the relay uploads it and each batch costs one
            # exchange time
            handover = []
            for i, ss in enumerate(new_src):
                opts = [None]
                if ss[1]:
                    opts += [j for j, (loc, _) in enumerate(rmv)
                             if src_wp[i][ss[0][0]] == rel_wp[j][loc]]
                handover.append(opts)
            r_tuple = tuple(loc for loc, _ in rmv)
            moved = tuple(mv[2] for mv in smv)
            for pick in itertools.product(*handover):
                extra = 0.0
                s_list = []
                for ss, j in zip(new_src, pick):
                    if j is None:
                        s_list.append((ss[0], ss[1]))
                    else:
                        extra += math.ceil(ss[1] / rels[j].capacity) * exchange
                        s_list.append((ss[0], 0))
                s_tuple = tuple(s_list)
                for qcombo in itertools.product(*new_q):
                    yield (s_tuple, r_tuple, qcombo), dur + extra, moved

    # initial nodes
    init_src = tuple((p[0].initial, 0) for p in parts)
    init_rel = tuple(HOME for _ in rels)
    q_opts = []
    for model, nba in parts:
        letter = model.label(model.initial)
        q_opts.append(sorted({q2 for q in nba.initial for g, q2 in nba.out(q)
                              if guard_holds(g, letter)}))
    starts = [(init_src, init_rel, qc) for qc in itertools.product(*q_opts)]

    # explicit graph by BFS, then the usual lasso search with a Büchi
    # generalization: a cycle must pass through an accepting state of every
    # source automaton, tracked by a round-robin counter
    index = {}
    nodes = []
    succ = []
    todo = list(starts)
    for n in todo:
        if n not in index:
            index[n] = len(nodes)
            nodes.append(n)
    i = 0
    while i < len(nodes):
        lst = []
        for n2, d, moved in successors(nodes[i]):
            j = index.get(n2)
            if j is None:
                j = index[n2] = len(nodes)
                nodes.append(n2)
                if len(nodes) > bound:
                    raise SizeBoundExceeded(len(nodes), bound)
            lst.append((j, d, moved))
        succ.append(lst)
        i += 1
    m = len(parts)
    acc = [parts[i][1].accepting for i in range(m)]

    def counter_next(node, c, moved):
        # advance past every automaton that just stepped into acceptance;
        # a robot that stays put does not read a letter and earns no credit
        qs = node[2]
        while c < m and moved[c] and qs[c] in acc[c]:
            c += 1
        return c

    # layered graph over (node, counter); counter m means "all seen"
    L = m + 1
    rows, cols, wts = [], [], []
    for n, lst in enumerate(succ):
        for c in range(L):
            base = 0 if c == m else c
            for j, d, moved in lst:
                rows.append(n * L + c)
                cols.append(j * L + counter_next(nodes[j], base, moved))
                wts.append(d)
    size = len(nodes) * L
    graph = _min_csr(rows, cols, wts, size)
    init = sorted({index[s] * L + counter_next(s, 0, (True,) * m) for s in starts})
    dist0, pred0, _ = csgraph.dijkstra(graph, indices=init, min_only=True,
                                       return_predecessors=True)
    cands = [x for x in range(m, size, L) if dist0[x] < math.inf]
    if not cands:
        raise PlanningError("no joint plan satisfies every task")
    incoming = graph.tocsc()
    best = None
    for lo in range(0, len(cands), 64):
        chunk = cands[lo:lo + 64]
        dmat = csgraph.dijkstra(graph, indices=chunk)
        for r, v in enumerate(chunk):
            a, b = incoming.indptr[v], incoming.indptr[v + 1]
            if a == b:
                continue
            back = dmat[r, incoming.indices[a:b]] + incoming.data[a:b]
            k = int(np.argmin(back))
            suffix = float(back[k])
            if suffix == math.inf:
                continue
            # shortest suffix first, then shortest total
            key = (suffix, float(dist0[v]) + suffix, v)
            if best is None or key < best[0]:
                best = (key, int(incoming.indices[a + k]))
    if best is None:
        raise PlanningError("no joint plan satisfies every task")
    (suffix, total, v), last = best
    _, pred = csgraph.dijkstra(graph, indices=v, return_predecessors=True)
    cycle = _walk_pred(pred, last, v)
    prefix = _walk_pred(pred0, v, None)
    return CentralResult(total - suffix, suffix, len(nodes), est,
                         _time.perf_counter() - t0,
                         [nodes[x // L] for x in prefix], [nodes[x // L] for x in cycle])


def _min_csr(rows, cols, wts, size):
    """Sparse adjacency keeping the cheapest of parallel edges (zero weights
    stay explicit edges)."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    wts = np.asarray(wts, dtype=float)
    key = rows * size + cols
    order = np.lexsort((wts, key))
    key, wts = key[order], wts[order]
    keep = np.ones(len(key), dtype=bool)
    keep[1:] = key[1:] != key[:-1]
    key, wts = key[keep], wts[keep]
    return sparse.csr_matrix((wts, (key // size, key % size)), shape=(size, size))


def _walk_pred(pred, node, stop):
    """Nodes from the search root (or ``stop``) to ``node`` along ``pred``."""
    out = [node]
    while node != stop and pred[node] >= 0:
        node = int(pred[node])
        out.append(node)
    return out[::-1]

