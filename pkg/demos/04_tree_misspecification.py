"""How much does the choice of tree matter?

Counts are generated from an LTN model on a caterpillar tree (every right
child is a leaf).  We fit the model on the true tree, on the balanced tree
and on the mirror-image caterpillar, map each fit back to node means on the
true tree, and compare errors by node depth.

Run:  python demos/04_tree_misspecification.py
"""

import numpy as np

from ltn import CovModelConfig, fit_cov
from ltn.samplers import rng_stream
from ltn.simgen import gen_caterpillar_trees, gen_ltn_dataset
from ltn.transforms import convert_tree_params

t1, t2, t3 = gen_caterpillar_trees(16)
depth = np.zeros(t1.d, dtype=int)
for a in range(1, t1.d):
    depth[a] = depth[t1.parent[a]] + 1

rng = rng_stream(11)
table, _ = gen_ltn_dataset(t1, np.full(t1.d, 2.0), np.eye(t1.d), rng, n=200, N=10_000)

print("squared error of converted node means (truth = 2 everywhere)")
print(f"{'fitted tree':<22}{'depth<=2':>10}{'depth 3-7':>11}{'depth>=8':>10}")
for name, tree in (("true caterpillar", t1), ("balanced", t2), ("mirror caterpillar", t3)):
    draws = fit_cov(table, tree, CovModelConfig(iterations=1500, seed=1))
    mean, _ = convert_tree_params(draws["mu"].mean(axis=0), draws["omega"].mean(axis=0), tree, t1)
    err = (mean - 2.0) ** 2
    print(f"{name:<22}{err[depth <= 2].mean():10.4f}{err[(depth > 2) & (depth < 8)].mean():11.4f}"
          f"{err[depth >= 8].mean():10.4f}")
