"""
Sampling DAGs from node logits and edge logits
==============================================

A graph is an ordering plus a set of forward edges. Orderings come from a
Plackett-Luce model, edges are independent coins. Edge frequencies from
sampled graphs should match the closed-form expectations.
"""

import numpy as np

from bpldag import BplParams, expected_edge_matrix, is_dag, sample_dags

rng = np.random.default_rng(0)

# node 0 tends to come first, node 3 last
params = BplParams.init(4, theta=np.array([2.0, 1.0, 0.0, -1.0]), edge_prob=0.6)

perms, masks, graphs = sample_dags(params, rng, 50_000)
print("first sampled ordering:", perms[0])
print("all acyclic:", all(is_dag(g) for g in graphs[:1000]))

# empirical edge frequencies against p_ij * Pr(i before j)
empirical = graphs.mean(axis=0)
exact = expected_edge_matrix(params)
np.set_printoptions(precision=3, suppress=True)
print("empirical edge frequency\n", empirical)
print("closed form\n", exact)
print("largest gap: %.4f" % np.max(np.abs(empirical - exact)))
