"""
What the baseline buys
======================

Gradient variance of the score-function estimator with and without the
mean-reward baseline, for several sample counts, along a short training run.
"""

import numpy as np

from bpldag import BplParams
from bpldag.estimators import baseline_ratio, variance_report
from bpldag.synth import noisy_target, ordering_reward, sample_er_dag

n = 30
dag = sample_er_dag(n, 1.0, np.random.default_rng(0))
rng = np.random.default_rng(1)

rows = variance_report(BplParams.init(n), lambda step, r: ordering_reward(noisy_target(dag, 0.3, r)),
                       [10, 50, 200], repeats=10, rng=rng, steps=60, record_every=20)

for K, ratio in sorted(baseline_ratio(rows).items()):
    with_baseline = np.mean([r["trace_variance"] for r in rows if r["K"] == K and r["baseline_flag"]])
    print(f"K={K:>3d}  variance with baseline {with_baseline:.2e}  reduction {ratio:,.0f}x")
