"""Polygonal workspaces, waypoint roadmaps and timed travel along them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import GeometryError
from .graphs import dijkstra, walk_back

EPS = 1e-9


# --------------------------------------------------------------------------
# planar geometry

def signed_area(poly):
    a = 0.0
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        a += x1 * y2 - x2 * y1
    return a / 2.0


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _on_segment(p, a, b, tol=EPS):
    if abs(_cross(a, b, p)) > tol * max(1.0, math.dist(a, b)):
        return False
    return (min(a[0], b[0]) - tol <= p[0] <= max(a[0], b[0]) + tol
            and min(a[1], b[1]) - tol <= p[1] <= max(a[1], b[1]) + tol)


def classify_point(p, poly):
    """1 strictly inside, 0 on the boundary, -1 outside."""
    n = len(poly)
    inside = False
    x, y = p
    for i in range(n):
        a = poly[i]
        b = poly[(i + 1) % n]
        if _on_segment(p, a, b):
            return 0
        if (a[1] > y) != (b[1] > y):
            xi = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if xi > x:
                inside = not inside
    return 1 if inside else -1


def _segment_params(a, b, c, d):
    """Parameters along ``a→b`` where it touches segment ``c→d``."""
    r = (b[0] - a[0], b[1] - a[1])
    s = (d[0] - c[0], d[1] - c[1])
    denom = r[0] * s[1] - r[1] * s[0]
    qp = (c[0] - a[0], c[1] - a[1])
    rr = r[0] * r[0] + r[1] * r[1]
    if abs(denom) <= EPS * max(1.0, rr):
        # parallel: only collinear overlaps matter
        if abs(qp[0] * r[1] - qp[1] * r[0]) > EPS * max(1.0, math.sqrt(rr)):
            return []
        if rr == 0:
            return []
        out = []
        for p in (c, d):
            t = ((p[0] - a[0]) * r[0] + (p[1] - a[1]) * r[1]) / rr
            if -EPS <= t <= 1 + EPS:
                out.append(min(max(t, 0.0), 1.0))
        return out
    t = (qp[0] * s[1] - qp[1] * s[0]) / denom
    u = (qp[0] * r[1] - qp[1] * r[0]) / denom
    if -EPS <= t <= 1 + EPS and -EPS <= u <= 1 + EPS:
        return [min(max(t, 0.0), 1.0)]
    return []


def segment_regions(a, b, poly):
    """Classify the pieces of segment ``a→b`` cut by ``poly``'s boundary.

    Returns the set of classifications (1 inside, 0 boundary, -1 outside)
    taken by the segment's endpoints and piece midpoints.
    """
    ts = {0.0, 1.0}
    n = len(poly)
    for i in range(n):
        ts.update(_segment_params(a, b, poly[i], poly[(i + 1) % n]))
    ts = sorted(ts)
    kinds = set()
    probes = [0.0, 1.0] + [(ts[i] + ts[i + 1]) / 2 for i in range(len(ts) - 1)
                           if ts[i + 1] - ts[i] > EPS]
    for t in probes:
        p = (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))
        kinds.add(classify_point(p, poly))
    return kinds


@dataclass
class Workspace:
    """Bounded planar area (``boundary``) minus polygonal ``obstacles``.

    Polygons are vertex lists in meters; orientation is normalized to
    counterclockwise on construction.
    """
    boundary: list
    obstacles: list = field(default_factory=list)

    def __post_init__(self):
        self.boundary = _ccw(self.boundary)
        self.obstacles = [_ccw(o) for o in self.obstacles]
        for poly in [self.boundary] + self.obstacles:
            if abs(signed_area(poly)) < EPS:
                raise GeometryError("degenerate polygon (zero area)")
            if _self_intersects(poly):
                raise GeometryError("self-intersecting polygon")
        for i, o in enumerate(self.obstacles):
            if any(classify_point(p, self.boundary) != 1 for p in o):
                raise GeometryError(f"obstacle {i} not strictly inside boundary")
            for j in range(i):
                other = self.obstacles[j]
                if any(classify_point(p, other) >= 0 for p in o) or \
                        any(classify_point(p, o) >= 0 for p in other) or \
                        _polygons_cross(o, other):
                    raise GeometryError(f"obstacles {j} and {i} overlap")

    def is_free(self, p):
        if classify_point(p, self.boundary) < 0:
            return False
        return all(classify_point(p, o) != 1 for o in self.obstacles)

    def segment_free(self, a, b):
        if -1 in segment_regions(a, b, self.boundary):
            return False
        for o in self.obstacles:
            if 1 in segment_regions(a, b, o):
                return False
        return True

    def bounds(self):
        xs = [p[0] for p in self.boundary]
        ys = [p[1] for p in self.boundary]
        return min(xs), min(ys), max(xs), max(ys)


def _ccw(poly):
    poly = [(float(x), float(y)) for x, y in poly]
    if len(poly) < 3:
        raise GeometryError("polygon needs at least three vertices")
    return poly if signed_area(poly) > 0 else poly[::-1]


def _proper_cross(a, b, c, d):
    d1, d2 = _cross(c, d, a), _cross(c, d, b)
    d3, d4 = _cross(a, b, c), _cross(a, b, d)
    return ((d1 > EPS and d2 < -EPS) or (d1 < -EPS and d2 > EPS)) and \
        ((d3 > EPS and d4 < -EPS) or (d3 < -EPS and d4 > EPS))


def _self_intersects(poly):
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _proper_cross(a, b, poly[j], poly[(j + 1) % n]):
                return True
    return False


def _polygons_cross(p, q):
    for i in range(len(p)):
        for j in range(len(q)):
            if _proper_cross(p[i], p[(i + 1) % len(p)], q[j], q[(j + 1) % len(q)]):
                return True
    return False


# --------------------------------------------------------------------------
# roadmap

class Roadmap:
    """Weighted undirected waypoint graph; weights are Euclidean lengths."""

    def __init__(self, waypoints, edges):
        self.waypoints = [(float(x), float(y)) for x, y in waypoints]
        self.adj = {i: {} for i in range(len(self.waypoints))}
        for i, j in edges:
            if i == j:
                raise ValueError("edge endpoints must differ")
            w = math.dist(self.waypoints[i], self.waypoints[j])
            self.adj[i][j] = w
            self.adj[j][i] = w
        self._sorted_adj = {i: sorted(nb.items()) for i, nb in self.adj.items()}
        self._trees = {}

    def __len__(self):
        return len(self.waypoints)

    @property
    def edges(self):
        return sorted((i, j) for i in self.adj for j in self.adj[i] if i < j)

    def weight(self, i, j):
        return self.adj[i][j]

    def point(self, i):
        return self.waypoints[i]

    def nearest(self, p, avoid=()):
        """Nearest waypoint to ``p`` outside ``avoid``; ties go to the lowest index."""
        best, best_d = None, math.inf
        for i, q in enumerate(self.waypoints):
            if i in avoid:
                continue
            d = (q[0] - p[0]) ** 2 + (q[1] - p[1]) ** 2
            if d < best_d - 1e-18:
                best, best_d = i, d
        return best

    def _check(self, *nodes):
        for n in nodes:
            if n not in self.adj:
                raise KeyError(f"unknown waypoint {n}")

    def shortest_path(self, start, goal, excluded=()):
        """Minimum-weight waypoint path avoiding ``excluded``, or None."""
        self._check(start, goal)
        if start == goal:
            return [start]
        excluded = set(excluded) - {start, goal}
        if not excluded:
            dist, parent = self._tree(start)
            if goal not in dist:
                return None
            return walk_back(parent, goal)
        adj = self._sorted_adj

        def succ(v):
            return ((u, w) for u, w in adj[v] if u not in excluded)

        dist, parent = dijkstra({start: 0.0}, succ, target=goal)
        if goal not in dist:
            return None
        return walk_back(parent, goal)

    def _tree(self, start):
        tree = self._trees.get(start)
        if tree is None:
            adj = self._sorted_adj
            tree = dijkstra({start: 0.0}, lambda v: adj[v])
            self._trees[start] = tree
        return tree

    def distance(self, start, goal):
        self._check(start, goal)
        return self._tree(start)[0].get(goal, math.inf)

    def path_length(self, path):
        return sum(self.adj[a][b] for a, b in zip(path, path[1:]) if a != b)

    def path_points(self, path):
        return [self.waypoints[i] for i in path]

    def travel_time(self, path, v_ref, w_ref):
        return travel_time(self.path_points(path), v_ref, w_ref)

    def timestamps(self, path, t0, v_ref, w_ref, heading=None):
        return timestamps(self.path_points(path), t0, v_ref, w_ref, heading)

    def is_connected(self):
        if not self.waypoints:
            return False
        return len(self._tree(0)[0]) == len(self.waypoints)

    def to_dict(self):
        return {"waypoints": [list(p) for p in self.waypoints],
                "edges": [list(e) for e in self.edges]}


def build_roadmap(ws, builder="lattice", pitch=0.5, connect_radius=None,
                  clearance=0.0):
    """Construct a roadmap over the free space of ``ws``.

    ``builder="lattice"`` places waypoints on a grid with spacing ``pitch`` and
    joins pairs closer than ``connect_radius`` (8-connectivity by default)
    whose segment stays in free space. ``builder="triangulation"`` uses an
    ear-clipping triangulation of the free space.
    """
    if builder == "lattice":
        rm = _lattice(ws, pitch, connect_radius, clearance)
    elif builder == "triangulation":
        from .triangulate import triangulation_roadmap
        pts, edges = triangulation_roadmap(ws)
        rm = Roadmap(pts, edges)
    else:
        raise ValueError(f"unknown roadmap builder {builder!r}")
    if len(rm) == 0:
        raise GeometryError("free space contains no waypoints")
    return rm


def _lattice(ws, pitch, connect_radius, clearance):
    if pitch <= 0:
        raise ValueError("pitch must be positive")
    radius = connect_radius if connect_radius else pitch * math.sqrt(2) * (1 + 1e-6)
    x0, y0, x1, y1 = ws.bounds()
    nx = int(math.floor((x1 - x0) / pitch + EPS)) + 1
    ny = int(math.floor((y1 - y0) / pitch + EPS)) + 1
    index = {}
    pts = []
    for j in range(ny):
        for i in range(nx):
            p = (x0 + i * pitch, y0 + j * pitch)
            if not ws.is_free(p):
                continue
            if clearance > 0 and not _clear(ws, p, clearance):
                continue
            if any(classify_point(p, o) == 0 for o in ws.obstacles):
                continue
            index[(i, j)] = len(pts)
            pts.append(p)
    r = int(math.floor(radius / pitch + EPS))
    offsets = [(di, dj) for dj in range(0, r + 1) for di in range(-r, r + 1)
               if (dj > 0 or di > 0) and math.hypot(di, dj) * pitch <= radius + EPS
               and math.gcd(abs(di), abs(dj)) == 1]
    edges = []
    for (i, j), a in index.items():
        for di, dj in offsets:
            b = index.get((i + di, j + dj))
            if b is None:
                continue
            if ws.segment_free(pts[a], pts[b]):
                edges.append((a, b))
    return Roadmap(pts, edges)


def _clear(ws, p, clearance):
    for poly in [ws.boundary] + ws.obstacles:
        n = len(poly)
        for k in range(n):
            if _point_segment_distance(p, poly[k], poly[(k + 1) % n]) < clearance:
                return False
    return True


def _point_segment_distance(p, a, b):
    dx, dy = b[0] - a[0], b[1] - a[1]
    L2 = dx * dx + dy * dy
    if L2 == 0:
        return math.dist(p, a)
    t = max(0.0, min(1.0, ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / L2))
    return math.dist(p, (a[0] + t * dx, a[1] + t * dy))


# --------------------------------------------------------------------------
# timing along paths

def heading_change(u, v):
    """Signed smallest rotation from ``u`` to ``v``, in (-pi, pi]."""
    if (u[0] == 0 and u[1] == 0) or (v[0] == 0 and v[1] == 0):
        raise ValueError("heading undefined for a zero vector")
    ang = math.atan2(u[0] * v[1] - u[1] * v[0], u[0] * v[0] + u[1] * v[1])
    if ang <= -math.pi:
        ang += 2 * math.pi
    return ang


def final_heading(points, default=None):
    """Direction (radians) of the last nonzero leg of ``points``."""
    segs = _segments(points)
    if not segs:
        return default
    return math.atan2(segs[-1][1], segs[-1][0])


def _segments(points):
    segs = []
    for a, b in zip(points, points[1:]):
        d = (b[0] - a[0], b[1] - a[1])
        if d[0] != 0 or d[1] != 0:
            segs.append(d)
    return segs


def travel_time(points, v_ref, w_ref):
    """Estimated time to follow ``points``: straight legs at ``v_ref`` plus
    in-place turns at interior waypoints at ``w_ref``. The initial turn toward
    the first leg is not counted."""
    if v_ref <= 0 or w_ref <= 0:
        raise ValueError("reference speeds must be positive")
    if not points:
        raise ValueError("empty path")
    segs = _segments(points)
    length = sum(math.hypot(*d) for d in segs)
    turn = sum(abs(heading_change(a, b)) for a, b in zip(segs, segs[1:]))
    return length / v_ref + turn / w_ref


def timestamps(points, t0, v_ref, w_ref, heading=None):
    """Estimated arrival time at each point of ``points`` starting at ``t0``.

    With ``heading`` (radians) the turn toward the first leg is charged too.
    """
    if v_ref <= 0 or w_ref <= 0:
        raise ValueError("reference speeds must be positive")
    times = [t0]
    prev_dir = None if heading is None else (math.cos(heading), math.sin(heading))
    t = t0
    for a, b in zip(points, points[1:]):
        d = (b[0] - a[0], b[1] - a[1])
        if d[0] == 0 and d[1] == 0:
            times.append(t)
            continue
        if prev_dir is not None:
            t += abs(heading_change(prev_dir, d)) / w_ref
        t += math.hypot(*d) / v_ref
        times.append(t)
        prev_dir = d
    return times


@dataclass
class TimedPath:
    """Waypoint sequence with nondecreasing timestamps (seconds)."""
    waypoints: list
    times: list

    def __post_init__(self):
        if len(self.waypoints) != len(self.times) or not self.waypoints:
            raise ValueError("waypoints and times must be nonempty and aligned")
        if any(b < a - 1e-9 for a, b in zip(self.times, self.times[1:])):
            raise ValueError("timestamps must be nondecreasing")

    def __len__(self):
        return len(self.waypoints)

    @property
    def last(self):
        return self.waypoints[-1], self.times[-1]

    def to_dict(self):
        return {"waypoints": list(self.waypoints), "times": list(self.times)}
