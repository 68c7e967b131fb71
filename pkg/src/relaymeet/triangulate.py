"""Ear-clipping triangulation of a polygon with holes, and the roadmap built
from triangle adjacency (centroids plus shared-edge midpoints)."""

from __future__ import annotations

from .errors import GeometryError
from .workspace import EPS, _cross, _proper_cross, signed_area


def _point_in_triangle(p, a, b, c):
    # closed test; callers skip coincident vertices
    d1 = _cross(a, b, p)
    d2 = _cross(b, c, p)
    d3 = _cross(c, a, p)
    return d1 >= -EPS and d2 >= -EPS and d3 >= -EPS


def _visible(p, q, polys):
    for poly in polys:
        n = len(poly)
        for i in range(n):
            a, b = poly[i], poly[(i + 1) % n]
            if a == p or b == p or a == q or b == q:
                continue
            if _proper_cross(p, q, a, b):
                return False
            # segment grazing a vertex
            if abs(_cross(p, q, a)) < EPS and \
                    min(p[0], q[0]) - EPS <= a[0] <= max(p[0], q[0]) + EPS and \
                    min(p[1], q[1]) - EPS <= a[1] <= max(p[1], q[1]) + EPS:
                return False
    return True


def bridge_holes(outer, holes):
    """Merge holes into ``outer`` (counterclockwise) with zero-width bridges."""
    poly = list(outer)
    holes = [h[::-1] if signed_area(h) > 0 else list(h) for h in holes]
    holes.sort(key=lambda h: -max(p[0] for p in h))
    for k, hole in enumerate(holes):
        hi = max(range(len(hole)), key=lambda i: (hole[i][0], -hole[i][1]))
        hv = hole[hi]
        blockers = [poly] + holes
        best = None
        order = sorted(range(len(poly)),
                       key=lambda i: ((poly[i][0] - hv[0]) ** 2 + (poly[i][1] - hv[1]) ** 2, i))
        for i in order:
            if _visible(hv, poly[i], blockers) and _inside_corner(poly, i, hv):
                best = i
                break
        if best is None:
            raise GeometryError("could not bridge hole into boundary")
        ring = hole[hi:] + hole[:hi] + [hv]
        poly = poly[:best + 1] + ring + [poly[best]] + poly[best + 1:]
    return poly


def _inside_corner(poly, i, target):
    """True if the direction toward ``target`` leaves vertex ``i`` into the
    polygon interior (counterclockwise polygon)."""
    n = len(poly)
    prev, cur, nxt = poly[(i - 1) % n], poly[i], poly[(i + 1) % n]
    convex = _cross(prev, cur, nxt) > 0
    left_of_out = _cross(cur, nxt, target) > EPS
    left_of_in = _cross(prev, cur, target) > EPS
    if convex:
        return left_of_in and left_of_out
    return left_of_in or left_of_out


def ear_clip(poly):
    """Triangulate a (weakly) simple counterclockwise polygon; returns a list
    of point triples."""
    verts = list(poly)
    tris = []
    guard = 0
    while len(verts) > 3:
        n = len(verts)
        clipped = False
        for i in range(n):
            a, b, c = verts[(i - 1) % n], verts[i], verts[(i + 1) % n]
            if _cross(a, b, c) <= EPS:
                continue
            ear = True
            for p in verts:
                if p == a or p == b or p == c:
                    continue
                if _point_in_triangle(p, a, b, c):
                    ear = False
                    break
            if ear:
                tris.append((a, b, c))
                del verts[i]
                clipped = True
                break
        if not clipped:
            # drop a collinear vertex if one exists, else give up
            for i in range(n):
                a, b, c = verts[(i - 1) % n], verts[i], verts[(i + 1) % n]
                if abs(_cross(a, b, c)) <= EPS:
                    del verts[i]
                    clipped = True
                    break
        if not clipped:
            raise GeometryError("ear clipping failed (polygon not simple?)")
        guard += 1
        if guard > 100000:
            raise GeometryError("ear clipping did not terminate")
    if len(verts) == 3 and abs(_cross(*verts)) > EPS:
        tris.append(tuple(verts))
    return tris


def triangulate(ws):
    return ear_clip(bridge_holes(ws.boundary, ws.obstacles))


def triangulation_roadmap(ws):
    tris = triangulate(ws)
    pts = []
    index = {}

    def node(p):
        key = (round(p[0], 9), round(p[1], 9))
        if key not in index:
            index[key] = len(pts)
            pts.append(p)
        return index[key]

    edge_owner = {}
    for t, tri in enumerate(tris):
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            key = tuple(sorted([(round(a[0], 9), round(a[1], 9)),
                                (round(b[0], 9), round(b[1], 9))]))
            edge_owner.setdefault(key, []).append(t)
    edges = set()
    centroid_ids = []
    for tri in tris:
        cx = sum(p[0] for p in tri) / 3
        cy = sum(p[1] for p in tri) / 3
        centroid_ids.append(node((cx, cy)))
    for key, owners in sorted(edge_owner.items()):
        if len(owners) < 2:
            continue
        (ax, ay), (bx, by) = key
        m = node(((ax + bx) / 2, (ay + by) / 2))
        for t in owners:
            c = centroid_ids[t]
            if c != m:
                edges.add((min(c, m), max(c, m)))
    return pts, sorted(edges)
