"""Walk through the tree of shapes on a tiny image and build a profile stack.

    python3 demos/shapes_and_profiles.py
"""

import numpy as np

from lidarhsi.morphology.profiles import esdap, sdap
from lidarhsi.morphology.shapes import build_tree, compute_attributes, filter_tree

image = np.array([
    [0, 0, 0, 0, 0, 0],
    [0, 3, 3, 0, 1, 0],
    [0, 3, 2, 0, 0, 0],
    [0, 0, 0, 0, 2, 2],
    [1, 0, 0, 0, 2, 2],
])

tree = build_tree(image)
attrs = compute_attributes(tree, image)
print(f"{tree.size} shapes")
for node in range(tree.size):
    print(f"  node {node}: parent {tree.parent[node]}, level {tree.level[node]}, "
          f"area {attrs.area[node]:.0f}, stddev {attrs.stddev[node]:.2f}")

# single pixels go first; at lambda 5 only the root is left
for lam in (2, 5):
    print(f"\narea filter, lambda = {lam}")
    print(filter_tree(tree, attrs, "area", lam))

stack = sdap(image, [2, 5], [0.5, 1.0])
print("\nprofile bands:", ", ".join(stack.labels()))

components = [np.random.default_rng(i).normal(size=(32, 32)) for i in range(3)]
print("bands from three components:", len(esdap(components)))
