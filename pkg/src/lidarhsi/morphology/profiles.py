"""Self-dual attribute profiles and their extension to multi-component images."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from ..errors import DataError
from ..raster import fill_nodata_nearest, quantize_values
from .shapes import AttributeTable, build_tree, compute_attributes, filter_tree

DEFAULT_AREA_LEVELS = 2
DEFAULT_STD_LEVELS = 2


class Thresholds(NamedTuple):
    values: list[float]
    degenerate: bool


def auto_thresholds(attrs: AttributeTable, attribute: str, count: int) -> Thresholds:
    """Pick ``count`` strictly increasing thresholds from the non-root attribute values.

    area
        geometric spacing strictly inside the 5th..95th percentile range,
        ``p5 * (p95 / p5) ** (i / (count + 1))`` for ``i = 1..count``.
    stddev
        the ``i / (count + 1)`` quantiles of the positive values (leaf
        shapes hold a single gray level, so zeros would only yield the
        identity filter); all values are used when none is positive.

    Coinciding thresholds are merged and the list is refilled by inserting
    midpoints into the widest gaps (bounded by the attribute's min and max)
    while that is possible.  If every non-root value is identical the single
    value is returned with ``degenerate=True``.
    """
    if count < 1:
        raise DataError("at least one threshold is required")
    values = np.asarray(attrs.get(attribute), dtype=np.float64)[1:]
    if values.size == 0:
        raise DataError("automatic thresholds need at least one non-root node")
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        warnings.warn(f"degenerate {attribute} distribution; returning a single threshold", RuntimeWarning,
                      stacklevel=2)
        return Thresholds([lo], True)
    fractions = np.arange(1, count + 1) / (count + 1)
    if attribute == "area":
        p5, p95 = np.percentile(values, [5, 95])
        p5 = max(p5, 1e-12)
        raw = p5 * (p95 / p5) ** fractions
    else:
        positive = values[values > 0]
        raw = np.quantile(positive if positive.size else values, fractions)
    picked = sorted(set(float(v) for v in raw))
    while len(picked) < count:
        bounds = [lo, *picked, hi]
        gaps = [(bounds[i + 1] - bounds[i], i) for i in range(len(bounds) - 1)]
        inserted = False
        for width, i in sorted(gaps, key=lambda g: (-g[0], g[1])):
            mid = bounds[i] + width / 2
            if bounds[i] < mid < bounds[i + 1] and mid not in picked:
                picked = sorted([*picked, mid])
                inserted = True
                break
        if not inserted:
            break
    return Thresholds(picked, False)


@dataclass(frozen=True)
class ProfileTag:
    """Provenance of one profile image."""

    component: int
    attribute: str  # "original", "area" or "stddev"
    position: int = 0
    threshold: float | None = None

    def label(self) -> str:
        if self.attribute == "original":
            return f"c{self.component}:original"
        return f"c{self.component}:{self.attribute}[{self.position}]={self.threshold:.6g}"


@dataclass(frozen=True, eq=False)
class ProfileStack:
    images: list[np.ndarray]
    tags: list[ProfileTag]
    degenerate: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.images) != len(self.tags):
            raise DataError("one tag per profile image is required")
        labels = [t.label() for t in self.tags]
        if len(set(labels)) != len(labels):
            raise DataError("profile tags must be unique")

    def __len__(self) -> int:
        return len(self.images)

    def to_array(self) -> np.ndarray:
        return np.stack(self.images).astype(np.float32)

    def labels(self) -> list[str]:
        return [t.label() for t in self.tags]


def _resolve(spec, attrs, attribute) -> tuple[list[float], bool]:
    """``spec`` is an int (automatic count) or an explicit threshold list."""
    if isinstance(spec, (int, np.integer)):
        if spec == 0:
            return [], False
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if attrs.area.size < 2:
                return [0.0] * int(spec), True
            picked, degenerate = auto_thresholds(attrs, attribute, int(spec))
        # keep the stack length fixed: repeat the last threshold if fewer were found
        picked = picked + [picked[-1]] * (int(spec) - len(picked))
        return picked, degenerate
    picked = sorted(float(v) for v in spec)
    if any(v < 0 for v in picked):
        raise DataError("thresholds must be >= 0")
    return picked, False


def sdap(
    band,
    area_thresholds=DEFAULT_AREA_LEVELS,
    std_thresholds=DEFAULT_STD_LEVELS,
    component: int = 0,
) -> ProfileStack:
    """Original band followed by area-filtered then stddev-filtered images, ascending thresholds.

    ``area_thresholds``/``std_thresholds`` are either a count of automatically
    chosen thresholds or an explicit list.
    """
    band = np.asarray(band)
    tree = build_tree(band)
    attrs = compute_attributes(tree, band)
    images = [band.astype(np.int64)]
    tags = [ProfileTag(component, "original")]
    degenerate = []
    for attribute, spec in (("area", area_thresholds), ("stddev", std_thresholds)):
        picked, flag = _resolve(spec, attrs, attribute)
        if flag:
            degenerate.append(f"c{component}:{attribute}")
        for position, lam in enumerate(picked):
            images.append(filter_tree(tree, attrs, attribute, lam))
            tags.append(ProfileTag(component, attribute, position, lam))
    return ProfileStack(images, tags, degenerate)


def normalize_and_quantize(component: np.ndarray, levels: int = 256, valid: np.ndarray | None = None) -> np.ndarray:
    """Min-max normalise to [0, 1], quantize to ``levels`` and fill invalid pixels from their nearest neighbour."""
    component = np.asarray(component, dtype=np.float64)
    if valid is None:
        valid = np.isfinite(component)
    if not valid.any():
        raise DataError("component has no valid pixel")
    v = component[valid]
    lo, hi = v.min(), v.max()
    unit = np.zeros_like(component)
    if hi > lo:
        unit[valid] = (v - lo) / (hi - lo)
    q = quantize_values(unit, levels, valid)
    return fill_nodata_nearest(q, valid)


def esdap(
    components: Sequence[np.ndarray],
    area_thresholds=DEFAULT_AREA_LEVELS,
    std_thresholds=DEFAULT_STD_LEVELS,
    levels: int = 256,
    valid: np.ndarray | None = None,
    threads: int = 1,
) -> ProfileStack:
    """Concatenate the SDAPs of every component, in component order.

    Each component is normalised to [0, 1] and quantized to ``levels`` gray
    levels before its tree is built.
    """
    if len(components) == 0:
        raise DataError("ESDAP needs at least one component")
    bands = [normalize_and_quantize(c, levels, valid) for c in components]

    def one(i):
        return sdap(bands[i], area_thresholds, std_thresholds, component=i)

    if threads > 1 and len(bands) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stacks = list(pool.map(one, range(len(bands))))
    else:
        stacks = [one(i) for i in range(len(bands))]
    images, tags, degenerate = [], [], []
    for s in stacks:
        images += s.images
        tags += s.tags
        degenerate += s.degenerate
    return ProfileStack(images, tags, degenerate)
