"""Tree-of-shapes filtering and self-dual attribute profiles."""

from .profiles import ProfileStack, ProfileTag, Thresholds, auto_thresholds, esdap, normalize_and_quantize, sdap
from .shapes import AttributeTable, TreeOfShapes, build_tree, compute_attributes, filter_tree

__all__ = [
    "AttributeTable",
    "ProfileStack",
    "ProfileTag",
    "Thresholds",
    "TreeOfShapes",
    "auto_thresholds",
    "build_tree",
    "compute_attributes",
    "esdap",
    "filter_tree",
    "normalize_and_quantize",
    "sdap",
]
