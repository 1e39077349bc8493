"""
The human-object graph and its input features
=============================================

Builds the 26-node graph, shows how the three adjacency subsets split
the edges, and computes the 26 x 4 feature matrix for one synthetic pair.
"""

import numpy as np

from hokem.hograph import NODE_NAMES, adjacency_stack, build_graph, partition_neighborhoods
from hokem.training import generate_synthetic_dataset

g = build_graph()
for family in ("human", "object", "human-object"):
    print(f"{family:13s} edges: {len(g.edges_of(family))}")

# subset 0 holds the root and same-distance neighbours, 1 the closer, 2 the farther
labels = partition_neighborhoods(g)
stack = adjacency_stack(g)
for k in range(3):
    print(f"subset {k}: {int(stack.raw[k].sum())} entries")
print("sum of subsets == adjacency + identity:", np.array_equal(stack.raw.sum(axis=0), g.adjacency() + np.eye(26)))

# neighbours of the object's gravity node are all one hop farther from it
c = g.center_node
print("center:", NODE_NAMES[c], "-> labels of its neighbours:", sorted(set(labels[c][labels[c] > 0])))

sample = generate_synthetic_dataset(seed=0, n_samples=1, n_classes=4)[0]
np.set_printoptions(precision=3, suppress=True)
print("features (x, y, distance to neck, angle):")
for name, row in list(zip(NODE_NAMES, sample.features))[::5]:
    print(f"  {name:22s} {row}")
print("labels:", sample.labels, " baseline:", sample.baseline_probs.round(2))
