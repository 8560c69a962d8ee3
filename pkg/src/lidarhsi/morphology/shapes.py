"""Tree of shapes (inclusion tree) of a quantized band, its attributes, and
self-dual attribute filtering by tree pruning.

A *shape* is the saturation (hole filling) of a connected component of an
upper threshold set ``[u >= t]`` (8-connectivity) or of a lower threshold set
``[u < t]`` (4-connectivity).  Holes are taken with respect to a virtual
one-pixel frame around the image whose gray level equals ``u[0, 0]``: a hole
of a set is a connected component of its complement that does not reach the
frame, and any component that reaches the frame saturates to the whole image.
The frame makes the shape family a tree; pinning it to the corner level keeps
the construction self-dual (complementing the image complements the frame)
and leaves the frame level unchanged by any pruning, because the corner pixel
always belongs to the root.

Construction: component trees of both threshold families are built by
union-find; each component is saturated inside its bounding box; shapes are
then painted in order of decreasing area, so every shape finds its parent as
the smallest already-painted shape under it and duplicates are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..errors import DataError, NumericError

ATTRIBUTES = ("area", "stddev")


@dataclass(frozen=True, eq=False)
class TreeOfShapes:
    """Inclusion tree.  Node 0 is the root; parents always precede children.

    ``parent[0] == 0``; ``level`` holds each node's gray level; ``pixel_node``
    maps every pixel to the smallest shape containing it.
    """

    parent: np.ndarray
    level: np.ndarray
    pixel_node: np.ndarray
    frame_level: int

    @property
    def size(self) -> int:
        return len(self.parent)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixel_node.shape

    def reconstruct(self, node_levels: np.ndarray | None = None) -> np.ndarray:
        levels = self.level if node_levels is None else node_levels
        return levels[self.pixel_node]

    def node_pixels(self, node: int) -> np.ndarray:
        """Boolean mask of the full support of ``node`` (its own and descendants' pixels)."""
        inside = np.zeros(self.size, dtype=bool)
        inside[node] = True
        for n in range(node + 1, self.size):
            inside[n] = inside[self.parent[n]]
        return inside[self.pixel_node]


@dataclass(frozen=True, eq=False)
class AttributeTable:
    """Per-node area (pixel count), mean and population standard deviation of
    gray values over the node's full support."""

    area: np.ndarray
    mean: np.ndarray
    stddev: np.ndarray

    def get(self, attribute: str) -> np.ndarray:
        if attribute == "area":
            return self.area
        if attribute in ("stddev", "std"):
            return self.stddev
        raise DataError(f"unknown attribute {attribute!r}; expected one of {ATTRIBUTES}")


# -- numba kernels -------------------------------------------------------------------

_NB = dict(cache=True, nogil=True)


@numba.njit(**_NB)
def _find(zpar, p):
    root = p
    while zpar[root] != root:
        root = zpar[root]
    while zpar[p] != root:
        nxt = zpar[p]
        zpar[p] = root
        p = nxt
    return root


@numba.njit(**_NB)
def _component_tree(values, order, h, w, conn8):
    """Berger et al. union-find max-tree; returns canonicalised parent links."""
    n = h * w
    parent = np.empty(n, np.int64)
    zpar = np.empty(n, np.int64)
    done = np.zeros(n, np.bool_)
    for idx in range(n):
        p = order[idx]
        parent[p] = p
        zpar[p] = p
        done[p] = True
        pr = p // w
        pc = p - pr * w
        for dr in range(-1, 2):
            for dc in range(-1, 2):
                if dr == 0 and dc == 0:
                    continue
                if not conn8 and dr != 0 and dc != 0:
                    continue
                rr = pr + dr
                cc = pc + dc
                if rr < 0 or rr >= h or cc < 0 or cc >= w:
                    continue
                q = rr * w + cc
                if done[q]:
                    r = _find(zpar, q)
                    if r != p:
                        parent[r] = p
                        zpar[r] = p
    for idx in range(n - 1, -1, -1):
        p = order[idx]
        q = parent[p]
        if values[parent[q]] == values[q]:
            parent[p] = parent[q]
    return parent


@numba.njit(**_NB)
def _saturate(values, h, w, seed, level, r0, r1, c0, c1, set8, in_set, outside, stamp, stack, out):
    """Interior pixel indices of Sat(CC(seed)) for the set ``values >= level``.

    ``values`` is the framed image (``h x w``); the component lies inside the
    bounding box ``[r0, r1] x [c0, c1]``, which never touches the frame.
    Returns the number of indices written to ``out`` (interior coordinates).
    """
    top = 0
    stack[top] = seed
    top += 1
    in_set[seed] = stamp
    while top > 0:
        top -= 1
        p = stack[top]
        pr = p // w
        pc = p - pr * w
        for dr in range(-1, 2):
            for dc in range(-1, 2):
                if dr == 0 and dc == 0:
                    continue
                if not set8 and dr != 0 and dc != 0:
                    continue
                rr = pr + dr
                cc = pc + dc
                if rr < r0 or rr > r1 or cc < c0 or cc > c1:
                    continue
                q = rr * w + cc
                if in_set[q] != stamp and values[q] >= level:
                    in_set[q] = stamp
                    stack[top] = q
                    top += 1
    wr0 = r0 - 1
    wr1 = r1 + 1
    wc0 = c0 - 1
    wc1 = c1 + 1
    top = 0
    for r in range(wr0, wr1 + 1):
        for c in range(wc0, wc1 + 1):
            if r == wr0 or r == wr1 or c == wc0 or c == wc1:
                q = r * w + c
                outside[q] = stamp
                stack[top] = q
                top += 1
    while top > 0:
        top -= 1
        p = stack[top]
        pr = p // w
        pc = p - pr * w
        for dr in range(-1, 2):
            for dc in range(-1, 2):
                if dr == 0 and dc == 0:
                    continue
                # complement connectivity is the dual of the set's
                if set8 and dr != 0 and dc != 0:
                    continue
                rr = pr + dr
                cc = pc + dc
                if rr < wr0 or rr > wr1 or cc < wc0 or cc > wc1:
                    continue
                q = rr * w + cc
                if outside[q] != stamp and in_set[q] != stamp:
                    outside[q] = stamp
                    stack[top] = q
                    top += 1
    count = 0
    iw = w - 2
    for r in range(r0, r1 + 1):
        for c in range(c0, c1 + 1):
            q = r * w + c
            if outside[q] != stamp:
                out[count] = (r - 1) * iw + (c - 1)
                count += 1
    return count


@numba.njit(**_NB)
def _candidates(values, order, h, w, set8):
    """Seeds, levels, bounding boxes and saturated areas of every component
    of the threshold family that does not reach the frame."""
    n = h * w
    parent = _component_tree(values, order, h, w, set8)
    canonical = np.zeros(n, np.bool_)
    for p in range(n):
        q = parent[p]
        canonical[p] = q == p or values[q] != values[p]
    rmin = np.full(n, h, np.int64)
    rmax = np.full(n, -1, np.int64)
    cmin = np.full(n, w, np.int64)
    cmax = np.full(n, -1, np.int64)
    for p in range(n):
        node = p if canonical[p] else parent[p]
        pr = p // w
        pc = p - pr * w
        rmin[node] = min(rmin[node], pr)
        rmax[node] = max(rmax[node], pr)
        cmin[node] = min(cmin[node], pc)
        cmax[node] = max(cmax[node], pc)
    count = 0
    for idx in range(n):
        p = order[idx]
        if not canonical[p]:
            continue
        q = parent[p]
        if q != p:
            rmin[q] = min(rmin[q], rmin[p])
            rmax[q] = max(rmax[q], rmax[p])
            cmin[q] = min(cmin[q], cmin[p])
            cmax[q] = max(cmax[q], cmax[p])
        if rmin[p] > 0 and cmin[p] > 0 and rmax[p] < h - 1 and cmax[p] < w - 1:
            count += 1
    seeds = np.empty(count, np.int64)
    boxes = np.empty((count, 4), np.int64)
    areas = np.empty(count, np.int64)
    in_set = np.zeros(n, np.int64)
    outside = np.zeros(n, np.int64)
    stack = np.empty(n, np.int64)
    out = np.empty((h - 2) * (w - 2), np.int64)
    k = 0
    for idx in range(n):
        p = order[idx]
        if not canonical[p]:
            continue
        if rmin[p] > 0 and cmin[p] > 0 and rmax[p] < h - 1 and cmax[p] < w - 1:
            seeds[k] = p
            boxes[k, 0] = rmin[p]
            boxes[k, 1] = rmax[p]
            boxes[k, 2] = cmin[p]
            boxes[k, 3] = cmax[p]
            areas[k] = _saturate(values, h, w, p, values[p], rmin[p], rmax[p], cmin[p], cmax[p],
                                 set8, in_set, outside, k + 1, stack, out)
            k += 1
    return seeds, boxes, areas


@numba.njit(**_NB)
def _paint(upper, lower, h, w, kinds, seeds, boxes, areas, n_interior):
    """Insert shapes in the given (decreasing-area) order; returns parents and pixel labels."""
    m = len(seeds)
    labels = np.zeros(n_interior, np.int64)
    node_area = np.empty(m + 1, np.int64)
    parent = np.empty(m + 1, np.int64)
    node_area[0] = n_interior
    parent[0] = 0
    nodes = 1
    n = h * w
    in_set = np.zeros(n, np.int64)
    outside = np.zeros(n, np.int64)
    stack = np.empty(n, np.int64)
    out = np.empty(n_interior, np.int64)
    for k in range(m):
        if kinds[k] == 0:
            values = upper
            set8 = True
        else:
            values = lower
            set8 = False
        p = seeds[k]
        cnt = _saturate(values, h, w, p, values[p], boxes[k, 0], boxes[k, 1], boxes[k, 2], boxes[k, 3],
                        set8, in_set, outside, k + 1, stack, out)
        prev = labels[out[0]]
        if node_area[prev] == cnt:
            continue
        node_area[nodes] = cnt
        parent[nodes] = prev
        for i in range(cnt):
            labels[out[i]] = nodes
        nodes += 1
    return parent[:nodes].copy(), labels


@numba.njit(**_NB)
def _node_levels(labels, image, n_nodes, frame_level):
    level = np.full(n_nodes, -1, np.int64)
    level[0] = frame_level
    consistent = True
    for i in range(len(labels)):
        k = labels[i]
        if k == 0:
            if image[i] != frame_level:
                consistent = False
        elif level[k] < 0:
            level[k] = image[i]
        elif level[k] != image[i]:
            consistent = False
    return level, consistent


@numba.njit(**_NB)
def _accumulate(parent, labels, image):
    n_nodes = len(parent)
    area = np.zeros(n_nodes, np.int64)
    total = np.zeros(n_nodes, np.int64)
    total_sq = np.zeros(n_nodes, np.int64)
    for i in range(len(labels)):
        k = labels[i]
        v = image[i]
        area[k] += 1
        total[k] += v
        total_sq[k] += v * v
    for k in range(n_nodes - 1, 0, -1):
        q = parent[k]
        area[q] += area[k]
        total[q] += total[k]
        total_sq[q] += total_sq[k]
    return area, total, total_sq


@numba.njit(**_NB)
def _prune_levels(parent, level, keep):
    out = level.copy()
    for k in range(1, len(parent)):
        if not keep[k]:
            out[k] = out[parent[k]]
    return out


# -- public API -------------------------------------------------------------------


def _as_levels(band) -> np.ndarray:
    arr = np.asarray(band)
    if arr.ndim != 2 or arr.size == 0:
        raise DataError(f"expected a non-empty 2-D band, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise DataError("tree construction needs integer gray levels without nodata")
    arr = arr.astype(np.int64)
    if arr.min() < 0 or arr.max() > 65535:
        raise DataError("gray levels must lie in [0, 65535]")
    return arr


def build_tree(band) -> TreeOfShapes:
    """Tree of shapes of a 2-D array of integer levels in ``[0, 65535]``."""
    image = _as_levels(band)
    rows, cols = image.shape
    frame_level = int(image[0, 0])
    framed = np.full((rows + 2, cols + 2), frame_level, dtype=np.int64)
    framed[1:-1, 1:-1] = image
    h, w = framed.shape
    upper = framed.ravel()
    lower = -upper
    up_seeds, up_boxes, up_areas = _candidates(upper, np.argsort(-upper, kind="stable"), h, w, True)
    lo_seeds, lo_boxes, lo_areas = _candidates(lower, np.argsort(-lower, kind="stable"), h, w, False)

    kinds = np.concatenate([np.zeros(len(up_seeds), np.int64), np.ones(len(lo_seeds), np.int64)])
    seeds = np.concatenate([up_seeds, lo_seeds])
    boxes = np.concatenate([up_boxes, lo_boxes]).reshape(-1, 4)
    areas = np.concatenate([up_areas, lo_areas])
    order = np.lexsort((seeds, kinds, -areas))
    parent, labels = _paint(upper, lower, h, w, kinds[order], seeds[order], boxes[order], areas[order], rows * cols)

    level, consistent = _node_levels(labels, image.ravel(), len(parent), frame_level)
    if not consistent or np.any(level < 0):
        raise NumericError("tree of shapes construction produced inconsistent node levels")
    return TreeOfShapes(parent=parent, level=level, pixel_node=labels.reshape(rows, cols), frame_level=frame_level)


def compute_attributes(tree: TreeOfShapes, band) -> AttributeTable:
    image = _as_levels(band)
    if image.shape != tree.shape:
        raise DataError("band and tree dimensions differ")
    area, total, total_sq = _accumulate(tree.parent, tree.pixel_node.ravel(), image.ravel())
    mean = total / area
    # exact integer numerator: area * sum(v^2) - sum(v)^2
    numerator = (area.astype(object) * total_sq.astype(object) - total.astype(object) ** 2).astype(np.float64)
    variance = np.maximum(numerator, 0.0) / (area.astype(np.float64) ** 2)
    return AttributeTable(area=area, mean=mean, stddev=np.sqrt(variance))


def filter_tree(tree: TreeOfShapes, attrs: AttributeTable, attribute: str, lam: float) -> np.ndarray:
    """Remove every non-root node whose attribute is below ``lam``.

    Pixels of removed nodes take the level of their nearest kept ancestor.
    Returns the reconstructed image (int64).
    """
    if lam < 0:
        raise DataError("filter threshold must be >= 0")
    values = attrs.get(attribute)
    keep = values >= lam
    keep[0] = True
    return tree.reconstruct(_prune_levels(tree.parent, tree.level, keep))
