"""LTL formulas, their translation to Büchi automata, and lasso membership.

Surface syntax::

    true false  p                 constants and propositions
    ! X [] <>                     not, next, always, eventually (prefix)
    U R                           until, release (right associative)
    && || ->                      and, or, implies (-> is right associative)

Binding strength, tightest first: unary, ``U``/``R``, ``&&``, ``||``, ``->``.

The translation is a tableau construction producing a transition-based
generalized Büchi automaton over sets of obligations, which is then
degeneralized with a level counter into a state-based automaton whose
transitions carry literal guards.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product as _cartesian

from .errors import LtlSyntaxError, UnknownPropositionError
from .graphs import reachable, strongly_connected_components


# --------------------------------------------------------------------------
# formulas

class Formula:
    __slots__ = ()

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True)
class TrueF(Formula):
    pass


@dataclass(frozen=True)
class FalseF(Formula):
    pass


@dataclass(frozen=True)
class Prop(Formula):
    name: str


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula


@dataclass(frozen=True)
class Next(Formula):
    arg: Formula


@dataclass(frozen=True)
class Eventually(Formula):
    arg: Formula


@dataclass(frozen=True)
class Always(Formula):
    arg: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Release(Formula):
    left: Formula
    right: Formula


TRUE = TrueF()
FALSE = FalseF()

_UNARY = {"!": Not, "X": Next, "[]": Always, "<>": Eventually}
_UNARY_SYMBOL = {Not: "!", Next: "X ", Always: "[]", Eventually: "<>"}
_BINARY_SYMBOL = {And: "&&", Or: "||", Implies: "->", Until: "U", Release: "R"}


def propositions(f):
    """Set of proposition names occurring in ``f``."""
    out = set()
    stack = [f]
    while stack:
        g = stack.pop()
        if isinstance(g, Prop):
            out.add(g.name)
        elif isinstance(g, (Not, Next, Eventually, Always)):
            stack.append(g.arg)
        elif isinstance(g, (And, Or, Implies, Until, Release)):
            stack.extend((g.left, g.right))
    return out


def to_string(f):
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Prop):
        return f.name
    if isinstance(f, (Not, Next, Eventually, Always)):
        return f"{_UNARY_SYMBOL[type(f)]}{to_string(f.arg)}"
    sym = _BINARY_SYMBOL[type(f)]
    return f"({to_string(f.left)} {sym} {to_string(f.right)})"


# --------------------------------------------------------------------------
# parser

_TOKEN = re.compile(r"\s*(?:(\[\])|(<>)|(&&)|(\|\|)|(->)|([()!])|([A-Za-z_][A-Za-z0-9_.]*))")
_KEYWORDS = {"X", "U", "R", "true", "false", "True", "False"}


def _tokenize(text):
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise LtlSyntaxError(f"unexpected character {text[pos]!r}", pos)
        start = m.start(m.lastindex)
        tokens.append((m.group(m.lastindex), start))
        pos = m.end()
    tokens.append(("<end>", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, alphabet):
        self.tokens = _tokenize(text)
        self.i = 0
        self.alphabet = alphabet

    def peek(self):
        return self.tokens[self.i][0]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg):
        tok, off = self.tokens[self.i]
        raise LtlSyntaxError(msg if tok != "<end>" else "unexpected end of input", off)

    def parse(self):
        f = self.implies()
        if self.peek() != "<end>":
            self.error(f"unexpected token {self.peek()!r}")
        return f

    def implies(self):
        left = self.disjunction()
        if self.peek() == "->":
            self.take()
            return Implies(left, self.implies())
        return left

    def disjunction(self):
        left = self.conjunction()
        while self.peek() == "||":
            self.take()
            left = Or(left, self.conjunction())
        return left

    def conjunction(self):
        left = self.temporal()
        while self.peek() == "&&":
            self.take()
            left = And(left, self.temporal())
        return left

    def temporal(self):
        left = self.unary()
        if self.peek() in ("U", "R"):
            op = Until if self.take()[0] == "U" else Release
            return op(left, self.temporal())
        return left

    def unary(self):
        tok, off = self.tokens[self.i]
        if tok in _UNARY:
            self.take()
            return _UNARY[tok](self.unary())
        if tok == "(":
            self.take()
            f = self.implies()
            if self.peek() != ")":
                self.error("expected ')'")
            self.take()
            return f
        if tok in ("true", "True"):
            self.take()
            return TRUE
        if tok in ("false", "False"):
            self.take()
            return FALSE
        if tok == "<end>" or tok in _KEYWORDS or not (tok[0].isalpha() or tok[0] == "_"):
            self.error(f"expected a formula, got {tok!r}")
        self.take()
        if self.alphabet is not None and tok not in self.alphabet:
            raise UnknownPropositionError(tok, off)
        return Prop(tok)


def parse_ltl(text, alphabet=None):
    """Parse ``text`` into a formula; identifiers must belong to ``alphabet``
    when one is given."""
    if not text or not text.strip():
        raise LtlSyntaxError("empty formula", 0)
    return _Parser(text, None if alphabet is None else set(alphabet)).parse()


# --------------------------------------------------------------------------
# negation normal form

def to_nnf(f):
    """Push negations to propositions; rewrite <>, [] and -> away."""
    return _nnf(f, False)


def _nnf(f, neg):
    if isinstance(f, TrueF):
        return FALSE if neg else TRUE
    if isinstance(f, FalseF):
        return TRUE if neg else FALSE
    if isinstance(f, Prop):
        return Not(f) if neg else f
    if isinstance(f, Not):
        return _nnf(f.arg, not neg)
    if isinstance(f, Next):
        return Next(_nnf(f.arg, neg))
    if isinstance(f, And):
        a, b = _nnf(f.left, neg), _nnf(f.right, neg)
        return Or(a, b) if neg else And(a, b)
    if isinstance(f, Or):
        a, b = _nnf(f.left, neg), _nnf(f.right, neg)
        return And(a, b) if neg else Or(a, b)
    if isinstance(f, Implies):
        return _nnf(Or(Not(f.left), f.right), neg)
    if isinstance(f, Eventually):
        return _nnf(Until(TRUE, f.arg), neg)
    if isinstance(f, Always):
        return _nnf(Release(FALSE, f.arg), neg)
    if isinstance(f, Until):
        a, b = _nnf(f.left, neg), _nnf(f.right, neg)
        return Release(a, b) if neg else Until(a, b)
    if isinstance(f, Release):
        a, b = _nnf(f.left, neg), _nnf(f.right, neg)
        return Until(a, b) if neg else Release(a, b)
    raise TypeError(f"not a formula: {f!r}")


def is_nnf(f):
    if isinstance(f, Not):
        return isinstance(f.arg, Prop)
    if isinstance(f, (Eventually, Always, Implies)):
        return False
    if isinstance(f, Next):
        return is_nnf(f.arg)
    if isinstance(f, (And, Or, Until, Release)):
        return is_nnf(f.left) and is_nnf(f.right)
    return True


# --------------------------------------------------------------------------
# automata

Guard = frozenset  # of (name, polarity) literals


def guard_holds(guard, letter):
    for name, positive in guard:
        if (name in letter) != positive:
            return False
    return True


@dataclass
class BuchiAutomaton:
    """State-based Büchi automaton with literal-set guards on transitions.

    A run reads letter ``w(k)`` on its ``k``-th transition; it is accepting
    when it visits ``accepting`` infinitely often.
    """
    states: list
    transitions: list  # (src, guard, dst)
    initial: frozenset
    accepting: frozenset
    alphabet: frozenset = frozenset()
    _out: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        declared = set(self.states)
        for s, g, d in self.transitions:
            if s not in declared or d not in declared:
                raise ValueError(f"transition endpoint not declared: {s} -> {d}")
            names = {n for n, _ in g}
            if len(names) != len(g):
                raise ValueError(f"inconsistent guard {sorted(g)}")
        out = {s: [] for s in self.states}
        for s, g, d in self.transitions:
            out[s].append((g, d))
        self._out = out

    def out(self, state):
        return self._out[state]

    def successors(self, state, letter):
        return [d for g, d in self._out[state] if guard_holds(g, letter)]

    def letters(self, guard):
        """Expand a guard into explicit letters over the alphabet."""
        free = sorted(self.alphabet - {n for n, _ in guard})
        base = {n for n, pos in guard if pos}
        for bits in _cartesian((False, True), repeat=len(free)):
            yield frozenset(base | {n for n, b in zip(free, bits) if b})

    def to_json(self):
        return json.dumps({
            "states": list(self.states),
            "initial": sorted(self.initial),
            "accepting": sorted(self.accepting),
            "alphabet": sorted(self.alphabet),
            "transitions": [
                {"src": s, "dst": d,
                 "guard": [n if p else "!" + n for n, p in sorted(g)]}
                for s, g, d in self.transitions
            ],
        }, indent=1)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        trans = []
        for t in data["transitions"]:
            lits = frozenset((x[1:], False) if x.startswith("!") else (x, True)
                             for x in t["guard"])
            trans.append((t["src"], lits, t["dst"]))
        return cls(list(data["states"]), trans, frozenset(data["initial"]),
                   frozenset(data["accepting"]), frozenset(data["alphabet"]))


def _is_literal(f):
    return isinstance(f, Prop) or (isinstance(f, Not) and isinstance(f.arg, Prop))


def _literal(f):
    return (f.name, True) if isinstance(f, Prop) else (f.arg.name, False)


def _sort_key(f):
    return to_string(f)


def _covers(obligations):
    """All consistent ways to discharge a set of NNF obligations in one step.

    Returns a list of ``(literals, next_obligations, postponed_untils)``.
    """
    results = set()
    stack = [(tuple(sorted(obligations, key=_sort_key)), frozenset(), frozenset(),
              frozenset(), frozenset())]
    while stack:
        todo, lits, nxt, postponed, done = stack.pop()
        if not todo:
            results.add((lits, nxt, postponed))
            continue
        f, rest = todo[0], todo[1:]
        if f in done:
            stack.append((rest, lits, nxt, postponed, done))
            continue
        done = done | {f}
        if isinstance(f, TrueF):
            stack.append((rest, lits, nxt, postponed, done))
        elif isinstance(f, FalseF):
            continue
        elif _is_literal(f):
            name, pos = _literal(f)
            if (name, not pos) in lits:
                continue
            stack.append((rest, lits | {(name, pos)}, nxt, postponed, done))
        elif isinstance(f, And):
            stack.append(((f.left, f.right) + rest, lits, nxt, postponed, done))
        elif isinstance(f, Or):
            stack.append(((f.right,) + rest, lits, nxt, postponed, done))
            stack.append(((f.left,) + rest, lits, nxt, postponed, done))
        elif isinstance(f, Next):
            stack.append((rest, lits, nxt | {f.arg}, postponed, done))
        elif isinstance(f, Until):
            stack.append(((f.left,) + rest, lits, nxt | {f}, postponed | {f}, done))
            stack.append(((f.right,) + rest, lits, nxt, postponed, done))
        elif isinstance(f, Release):
            stack.append(((f.right,) + rest, lits, nxt | {f}, postponed, done))
            stack.append(((f.left, f.right) + rest, lits, nxt, postponed, done))
        else:
            raise TypeError(f"formula not in NNF: {f!r}")
    # drop covers whose requirements strictly include another cover's with the
    # same successor: they accept a subset of the same words
    out = []
    for c in results:
        lits, nxt, post = c
        dominated = any(
            o is not c and o[1] == nxt and o[0] <= lits and o[2] <= post and o != c
            for o in results)
        if not dominated:
            out.append(c)
    out.sort(key=lambda c: (sorted(c[0]), sorted(map(_sort_key, c[1])),
                            sorted(map(_sort_key, c[2]))))
    return out


def _untils(f, acc=None):
    acc = [] if acc is None else acc
    if isinstance(f, Until) and f not in acc:
        acc.append(f)
    if isinstance(f, (Not, Next)):
        _untils(f.arg, acc)
    elif isinstance(f, (And, Or, Until, Release)):
        _untils(f.left, acc)
        _untils(f.right, acc)
    return acc


def translate_to_nba(f):
    """Compile a formula into a Büchi automaton accepting exactly its models."""
    return _translate(to_nnf(f))


@lru_cache(maxsize=256)
def _translate(f):
    untils = sorted(_untils(f), key=_sort_key)
    k = len(untils)
    alphabet = frozenset(propositions(f))

    # transition-based generalized automaton over obligation sets
    init = frozenset([f])
    ids = {init: 0}
    order = [init]
    tgba = {}
    i = 0
    while i < len(order):
        obl = order[i]
        i += 1
        edges = []
        for lits, nxt, postponed in _covers(obl):
            if nxt not in ids:
                ids[nxt] = len(order)
                order.append(nxt)
            fulfilled = frozenset(j for j, u in enumerate(untils) if u not in postponed)
            edges.append((lits, ids[nxt], fulfilled))
        tgba[ids[obl]] = edges

    # degeneralize with a level counter; level k is accepting
    def advance(level, fulfilled):
        lvl = 0 if level == k else level
        while lvl < k and lvl in fulfilled:
            lvl += 1
        return lvl

    start = (0, 0 if k else k)
    names = {start: 0}
    queue = [start]
    trans = []
    j = 0
    while j < len(queue):
        node, level = queue[j]
        j += 1
        for lits, dst, fulfilled in tgba[node]:
            tgt = (dst, advance(level, fulfilled))
            if tgt not in names:
                names[tgt] = len(queue)
                queue.append(tgt)
            trans.append((names[(node, level)], Guard(lits), names[tgt]))
    accepting = {names[q] for q in queue if q[1] == k}
    return _prune(list(range(len(queue))), trans, {0}, accepting, alphabet)


def _prune(states, trans, initial, accepting, alphabet):
    """Keep states that are reachable and can reach an accepting cycle, then
    renumber and merge duplicate transitions."""
    out = {s: [] for s in states}
    for s, g, d in trans:
        out[s].append(d)
    comps = strongly_connected_components(states, lambda s: out[s])
    good = set()
    for comp in comps:
        cyc = len(comp) > 1 or comp[0] in out[comp[0]]
        if cyc and any(s in accepting for s in comp):
            good.update(comp)
    # backward closure of good
    rev = {s: [] for s in states}
    for s, g, d in trans:
        rev[d].append(s)
    live = reachable(good, lambda s: rev[s])
    keep = reachable([s for s in initial if s in live], lambda s: [d for d in out[s] if d in live])
    keep |= set(initial)
    kept = sorted(keep)
    remap = {s: n for n, s in enumerate(kept)}
    seen = set()
    new_trans = []
    for s, g, d in trans:
        if s in keep and d in keep and d in live:
            t = (remap[s], g, remap[d])
            if t not in seen:
                seen.add(t)
                new_trans.append(t)
    return _merge_equivalent(
        len(kept), new_trans, {remap[s] for s in initial},
        {remap[s] for s in accepting if s in keep}, alphabet)


def _merge_equivalent(n, trans, initial, accepting, alphabet):
    """Quotient by the coarsest partition where merged states agree on
    acceptance and on guarded successors' blocks."""
    block = [1 if s in accepting else 0 for s in range(n)]
    while True:
        out = [set() for _ in range(n)]
        for s, g, d in trans:
            out[s].add((g, block[d]))
        sig = {}
        new_block = []
        for s in range(n):
            key = (block[s], frozenset(out[s]))
            new_block.append(sig.setdefault(key, len(sig)))
        if len(sig) == len(set(block)):
            break
        block = new_block
    # renumber blocks by first member for stable output
    first = {}
    for s in range(n):
        first.setdefault(block[s], len(first))
    rep = [first[block[s]] for s in range(n)]
    seen = set()
    merged = []
    for s, g, d in trans:
        t = (rep[s], g, rep[d])
        if t not in seen:
            seen.add(t)
            merged.append(t)
    return BuchiAutomaton(
        states=list(range(len(first))),
        transitions=merged,
        initial=frozenset(rep[s] for s in initial),
        accepting=frozenset(rep[s] for s in accepting),
        alphabet=alphabet,
    )


# --------------------------------------------------------------------------
# lasso membership

def accepts_lasso(automaton, prefix, cycle):
    """Whether ``prefix · cycle^ω`` is accepted by ``automaton``.

    Letters are collections of proposition names that hold.
    """
    if not cycle:
        raise ValueError("cycle must be nonempty")
    word = [frozenset(x) for x in prefix] + [frozenset(x) for x in cycle]
    n = len(word)
    loop = len(prefix)

    def succ(node):
        q, pos = node
        nxt = pos + 1 if pos + 1 < n else loop
        letter = word[pos]
        return [(d, nxt) for g, d in automaton.out(q) if guard_holds(g, letter)]

    nodes = reachable([(q, 0) for q in automaton.initial], succ)
    ordered = sorted(nodes)
    for comp in strongly_connected_components(ordered, succ):
        members = set(comp)
        if len(comp) == 1:
            v = comp[0]
            if v not in succ(v):
                continue
        if any(q in automaton.accepting for q, _ in members):
            return True
    return False
