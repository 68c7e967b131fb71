"""Small graph routines over adjacency callables (no external graph library)."""

import heapq
import math


def strongly_connected_components(nodes, successors):
    """Iterative Tarjan. ``successors(v)`` yields neighbour nodes."""
    index = {}
    low = {}
    on_stack = set()
    stack = []
    comps = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(successors(root)))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(successors(w))))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                u = work[-1][0]
                low[u] = min(low[u], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                comps.append(comp)
    return comps


def reachable(starts, successors):
    seen = set(starts)
    todo = list(starts)
    while todo:
        v = todo.pop()
        for w in successors(v):
            if w not in seen:
                seen.add(w)
                todo.append(w)
    return seen


def dijkstra(sources, successors, target=None, bound=math.inf):
    """Single-source (or multi-source) shortest paths.

    ``sources`` maps node -> initial distance. ``successors(v)`` yields
    ``(w, cost)`` pairs with nonnegative cost. Nodes must be orderable so ties
    pop deterministically. Returns ``(dist, parent)``.
    """
    dist = dict(sources)
    parent = {v: None for v in sources}
    heap = [(d, v) for v, d in sources.items()]
    heapq.heapify(heap)
    done = set()
    while heap:
        d, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        if v == target or d > bound:
            break
        for w, c in successors(v):
            nd = d + c
            if nd < dist.get(w, math.inf):
                dist[w] = nd
                parent[w] = v
                heapq.heappush(heap, (nd, w))
    return dist, parent


def walk_back(parent, node):
    path = []
    while node is not None:
        path.append(node)
        node = parent[node]
    path.reverse()
    return path
