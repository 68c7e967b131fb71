"""Product of a robot model with a Büchi automaton, and minimum-cost lasso
(prefix-suffix) plan search."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import PlanningError
from .graphs import dijkstra, walk_back
from .ltl import accepts_lasso, guard_holds


@dataclass
class ProductAutomaton:
    """Explicit weighted graph over ``(model state, automaton state)`` pairs.

    ``succ[i]`` lists ``(j, duration)`` for state indices.
    """
    states: list
    succ: list
    initial: list
    accepting: set

    @property
    def n_transitions(self):
        return sum(len(s) for s in self.succ)


def build_product(model, nba):
    missing = set(nba.alphabet) - model.propositions()
    if missing:
        raise PlanningError(f"task uses unknown propositions {sorted(missing)}")
    states = [(s, q) for s in model.states for q in nba.states]
    index = {p: i for i, p in enumerate(states)}
    succ = [[] for _ in states]
    for s in model.states:
        for q in nba.states:
            i = index[(s, q)]
            seen = set()
            for s2, dur in model.succ[s]:
                letter = model.label(s2)
                for guard, q2 in nba.out(q):
                    if guard_holds(guard, letter) and (s2, q2) not in seen:
                        seen.add((s2, q2))
                        succ[i].append((index[(s2, q2)], dur))
            succ[i].sort()
    s0 = model.initial
    first = model.label(s0)
    initial = sorted({index[(s0, q2)] for q in nba.initial
                      for guard, q2 in nba.out(q) if guard_holds(guard, first)})
    accepting = {i for i, (s, q) in enumerate(states) if q in nba.accepting}
    if not initial:
        raise PlanningError("empty product: the task rejects the initial state")
    return ProductAutomaton(states, succ, initial, accepting)


@dataclass
class PrefixSuffixPlan:
    """Lasso plan. ``prefix`` runs once, ``suffix`` repeats forever.

    Entries are product states; ``model_states`` projects them. ``durations``
    for a projected sequence give the time of the transition *into* each
    state (the first prefix state has duration 0).
    """
    prefix: list
    suffix: list
    prefix_cost: float
    suffix_cost: float
    model: object = field(default=None, repr=False)

    def __post_init__(self):
        if not self.suffix:
            raise ValueError("plan suffix must be nonempty")
        if self.model is not None:
            seq = self.prefix_states + self.suffix_states + self.suffix_states[:1]
            for a, b in zip(seq, seq[1:]):
                self.model.duration(a, b)  # raises if not a model transition

    @property
    def prefix_states(self):
        return [p[0] for p in self.prefix]

    @property
    def suffix_states(self):
        return [p[0] for p in self.suffix]

    @property
    def cost(self):
        return self.prefix_cost + self.suffix_cost

    def state(self, k):
        """Model state at unrolled index ``k``."""
        n = len(self.prefix)
        if k < n:
            return self.prefix[k][0]
        return self.suffix[(k - n) % len(self.suffix)][0]

    def entry_duration(self, k):
        """Duration of the transition that enters index ``k``."""
        if k == 0:
            return 0.0
        return self.model.duration(self.state(k - 1), self.state(k))

    def gathered(self, k):
        return self.model.actions[self.state(k)[1]].data_units

    def to_dict(self):
        return {"prefix": [list(s) for s in self.prefix_states],
                "suffix": [list(s) for s in self.suffix_states],
                "prefix_cost": self.prefix_cost,
                "suffix_cost": self.suffix_cost}

    def to_json(self):
        return json.dumps(self.to_dict())


def best_lasso(product):
    """``(total, suffix_cost, acc, prefix_path, cycle_path)`` minimizing total
    cost, or None. Paths are index lists; the cycle starts at ``acc`` and
    excludes the closing return to it."""
    succ = product.succ
    dist, parent = dijkstra({i: 0.0 for i in product.initial}, lambda v: succ[v])
    best = None
    for acc in sorted(product.accepting):
        if acc not in dist:
            continue
        # shortest cycle through acc: search from its successors back to it
        starts = {}
        for w, c in succ[acc]:
            if c < starts.get(w, math.inf):
                starts[w] = c
        if not starts:
            continue
        cdist, cpar = dijkstra(starts, lambda v: succ[v], target=acc)
        if acc not in cdist:
            continue
        suffix_cost = cdist[acc]
        total = dist[acc] + suffix_cost
        prefix_path = walk_back(parent, acc)
        # walk_back gives [w, ..., acc]; rotate so the cycle starts at acc
        cycle = [acc] + walk_back(cpar, acc)[:-1]
        key = (total, suffix_cost, tuple(prefix_path), tuple(cycle))
        if best is None or key < best[0]:
            best = (key, (total, suffix_cost, acc, prefix_path, cycle))
    return None if best is None else best[1]


def synthesize_plan(product, model=None):
    found = best_lasso(product)
    if found is None:
        raise PlanningError("no accepting cycle reachable from the initial state")
    total, suffix_cost, acc, prefix_path, cycle = found
    st = product.states
    return PrefixSuffixPlan(
        prefix=[st[i] for i in prefix_path[:-1]],
        suffix=[st[i] for i in cycle],
        prefix_cost=total - suffix_cost,
        suffix_cost=suffix_cost,
        model=model,
    )


def plan_for(model, nba):
    return synthesize_plan(build_product(model, nba), model)


def plan_satisfies(plan, nba, labeling):
    """True iff the labeled trace ``prefix · suffix^ω`` is accepted by ``nba``."""
    if not plan.suffix:
        return False
    pre = [labeling(s) for s in plan.prefix_states]
    cyc = [labeling(s) for s in plan.suffix_states]
    return accepts_lasso(nba, pre, cyc)
