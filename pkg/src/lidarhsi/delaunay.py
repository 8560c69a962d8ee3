"""Incremental Bowyer-Watson Delaunay triangulation.

The enclosing super-triangle is handled symbolically: a single vertex at
infinity (``GHOST``) closes every convex-hull edge, so hull triangles are
never lost to a finite super-triangle that is "not big enough".  Orientation
and in-circle predicates are evaluated in floating point and re-evaluated in
exact rational arithmetic when the result is too close to zero to trust.

Sites are deduplicated (last value wins) and inserted in ``(x, y)`` order, so
the output is a deterministic function of the input set.  A site exactly on
the circumcircle of an existing triangle does not invalidate it; co-circular
configurations are therefore resolved by insertion order.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

from .errors import DataError

GHOST = -1

_ORIENT_EPS = 1e-14
_INCIRCLE_EPS = 1e-13


def orient2d(ax, ay, bx, by, cx, cy) -> float:
    """Twice the signed area of ``abc``; > 0 when counter-clockwise."""
    left = (bx - ax) * (cy - ay)
    right = (by - ay) * (cx - ax)
    det = left - right
    if abs(det) > _ORIENT_EPS * (abs(left) + abs(right)):
        return det
    F = Fraction
    return float((F(bx) - F(ax)) * (F(cy) - F(ay)) - (F(by) - F(ay)) * (F(cx) - F(ax)))


def incircle(ax, ay, bx, by, cx, cy, dx, dy) -> float:
    """> 0 when ``d`` lies strictly inside the circumcircle of counter-clockwise ``abc``."""
    adx, ady = ax - dx, ay - dy
    bdx, bdy = bx - dx, by - dy
    cdx, cdy = cx - dx, cy - dy
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    t1 = bdx * cdy - bdy * cdx
    t2 = cdx * ady - cdy * adx
    t3 = adx * bdy - ady * bdx
    det = alift * t1 + blift * t2 + clift * t3
    permanent = (
        alift * (abs(bdx * cdy) + abs(bdy * cdx))
        + blift * (abs(cdx * ady) + abs(cdy * adx))
        + clift * (abs(adx * bdy) + abs(ady * bdx))
    )
    if abs(det) > _INCIRCLE_EPS * permanent:
        return det
    F = Fraction
    adx, ady = F(ax) - F(dx), F(ay) - F(dy)
    bdx, bdy = F(bx) - F(dx), F(by) - F(dy)
    cdx, cdy = F(cx) - F(dx), F(cy) - F(dy)
    exact = (
        (adx * adx + ady * ady) * (bdx * cdy - bdy * cdx)
        + (bdx * bdx + bdy * bdy) * (cdx * ady - cdy * adx)
        + (cdx * cdx + cdy * cdy) * (adx * bdy - ady * bdx)
    )
    return float(exact)


@dataclass(frozen=True, eq=False)
class Tin:
    """Triangulated irregular network.

    ``vertices`` is ``(n, 3)``: x, y and the value carried by each site.
    ``triangles`` is ``(t, 3)`` vertex indices, each triple counter-clockwise.
    """

    vertices: np.ndarray
    triangles: np.ndarray

    @property
    def xy(self) -> np.ndarray:
        return self.vertices[:, :2]

    @property
    def values(self) -> np.ndarray:
        return self.vertices[:, 2]

    def with_values(self, values) -> "Tin":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(self.vertices),):
            raise DataError("one value per TIN vertex is required")
        vertices = self.vertices.copy()
        vertices[:, 2] = values
        return Tin(vertices, self.triangles)


def unique_sites(points: Iterable) -> np.ndarray:
    """``(x, y, value)`` rows with duplicate ``(x, y)`` collapsed to the last value, sorted by (x, y)."""
    latest: dict[tuple[float, float], float] = {}
    for x, y, value in points:
        latest[(float(x), float(y))] = float(value)
    if not latest:
        return np.empty((0, 3))
    keys = sorted(latest)
    return np.array([(x, y, latest[(x, y)]) for x, y in keys], dtype=np.float64)


def build_tin(points: Iterable) -> Tin:
    """Delaunay triangulation of ``(x, y, value)`` sites."""
    sites = unique_sites(points)
    if len(sites) < 3:
        raise DataError(f"a TIN needs at least 3 distinct sites, got {len(sites)}")
    if not np.all(np.isfinite(sites)):
        raise DataError("TIN sites must be finite")
    triangles = _BowyerWatson(sites[:, 0].tolist(), sites[:, 1].tolist()).run()
    return Tin(sites, np.asarray(triangles, dtype=np.int64).reshape(-1, 3))


class _BowyerWatson:
    def __init__(self, xs: list[float], ys: list[float]):
        self.xs = xs
        self.ys = ys
        self.verts: list[list[int]] = []
        self.nbrs: list[list[int]] = []
        self.alive: list[bool] = []
        self.last = 0

    # -- predicates -----------------------------------------------------------

    def _orient(self, a, b, c) -> float:
        xs, ys = self.xs, self.ys
        return orient2d(xs[a], ys[a], xs[b], ys[b], xs[c], ys[c])

    def _on_open_segment(self, a, b, p) -> bool:
        xs, ys = self.xs, self.ys
        dot = (xs[p] - xs[a]) * (xs[b] - xs[a]) + (ys[p] - ys[a]) * (ys[b] - ys[a])
        length2 = (xs[b] - xs[a]) ** 2 + (ys[b] - ys[a]) ** 2
        return 0 < dot < length2

    def _conflicts(self, t: int, p: int) -> bool:
        a, b, c = self.verts[t]
        if c == GHOST:
            o = self._orient(a, b, p)
            return o > 0 or (o == 0 and self._on_open_segment(a, b, p))
        xs, ys = self.xs, self.ys
        return incircle(xs[a], ys[a], xs[b], ys[b], xs[c], ys[c], xs[p], ys[p]) > 0

    # -- mesh plumbing --------------------------------------------------------

    def _add(self, verts: list[int], nbrs: list[int]) -> int:
        if GHOST in verts:
            k = verts.index(GHOST)
            order = [(k + 1) % 3, (k + 2) % 3, k]
            verts = [verts[i] for i in order]
            nbrs = [nbrs[i] for i in order]
        self.verts.append(verts)
        self.nbrs.append(nbrs)
        self.alive.append(True)
        return len(self.verts) - 1

    def _start(self, i0: int, i1: int, i2: int) -> None:
        if self._orient(i0, i1, i2) < 0:
            i1, i2 = i2, i1
        # Triangle 0 is real; 1..3 are the ghosts beyond each of its edges.
        self._add([i0, i1, i2], [1, 2, 3])
        self._add([i2, i1, GHOST], [-1, -1, 0])
        self._add([i0, i2, GHOST], [-1, -1, 0])
        self._add([i1, i0, GHOST], [-1, -1, 0])
        # Ghost neighbours: ghost (u, v, inf) neighbours are opposite u -> (v, inf), opposite v -> (inf, u).
        for g in (1, 2, 3):
            u, v, _ = self.verts[g]
            self.nbrs[g][0] = self._ghost_with_first(v, exclude=g)
            self.nbrs[g][1] = self._ghost_with_second(u, exclude=g)

    def _ghost_with_first(self, vertex: int, exclude: int) -> int:
        for g in (1, 2, 3):
            if g != exclude and self.verts[g][0] == vertex:
                return g
        raise AssertionError("broken ghost ring")

    def _ghost_with_second(self, vertex: int, exclude: int) -> int:
        for g in (1, 2, 3):
            if g != exclude and self.verts[g][1] == vertex:
                return g
        raise AssertionError("broken ghost ring")

    def _locate(self, p: int) -> int:
        t = self.last
        if not self.alive[t]:
            t = next(i for i in range(len(self.alive) - 1, -1, -1) if self.alive[i])
        verts, nbrs = self.verts, self.nbrs
        if verts[t][2] == GHOST:
            if self._conflicts(t, p):
                return t
            t = nbrs[t][2]
        for _ in range(4 * len(verts) + 16):
            a, b, c = verts[t]
            if c == GHOST:
                return t
            moved = False
            for i, (u, v) in enumerate(((b, c), (c, a), (a, b))):
                if self._orient(u, v, p) < 0:
                    t = nbrs[t][i]
                    moved = True
                    break
            if not moved:
                return t
        raise AssertionError("point location did not terminate")

    def _insert(self, p: int) -> None:
        seed = self._locate(p)
        if not self._conflicts(seed, p):
            # A ghost reached by walking always conflicts; a real containing triangle always does.
            raise AssertionError("located triangle does not conflict with the new site")
        bad = {seed}
        stack = [seed]
        boundary = []  # (u, v, outside triangle, bad triangle)
        while stack:
            t = stack.pop()
            a, b, c = self.verts[t]
            for i, (u, v) in enumerate(((b, c), (c, a), (a, b))):
                n = self.nbrs[t][i]
                if n in bad:
                    continue
                if self._conflicts(n, p):
                    bad.add(n)
                    stack.append(n)
        for t in sorted(bad):
            a, b, c = self.verts[t]
            for i, (u, v) in enumerate(((b, c), (c, a), (a, b))):
                n = self.nbrs[t][i]
                if n not in bad:
                    boundary.append((u, v, n, t))
        for t in bad:
            self.alive[t] = False

        starts: dict[int, int] = {}
        ends: dict[int, int] = {}
        created = []
        for u, v, outside, old in boundary:
            t = self._add([u, v, p], [-1, -1, outside])
            created.append((t, u, v))
            starts[u] = t
            ends[v] = t
            onbrs = self.nbrs[outside]
            onbrs[onbrs.index(old)] = t
        for t, u, v in created:
            verts, nbrs = self.verts[t], self.nbrs[t]
            # Neighbour across (v, p) starts its boundary edge at v; across (p, u) ends it at u.
            for i, w in enumerate(verts):
                if w == u:
                    nbrs[i] = starts[v]
                elif w == v:
                    nbrs[i] = ends[u]
            if verts[2] != GHOST:
                self.last = t

    def run(self) -> list[list[int]]:
        n = len(self.xs)
        third = next((k for k in range(2, n) if self._orient(0, 1, k) != 0), None)
        if third is None:
            raise DataError("all TIN sites are collinear")
        self._start(0, 1, third)
        for p in range(2, n):
            if p != third:
                self._insert(p)
        return [v for v, ok in zip(self.verts, self.alive) if ok and v[2] != GHOST]
