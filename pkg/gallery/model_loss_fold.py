"""One fold of model-loss detection: train on two leak-free weeks, compare error distributions.

Forecasting barely notices a leak (the previous sample already carries the
pressure drop); interpolating a sensor from its neighbours does better once
the drop is large.
"""

from __future__ import annotations

import numpy as np

from leakdrift.core import WEEK
from leakdrift.modelloss import evaluate_fold
from leakdrift.scenario import GeneratorConfig, Leak, generate_scenario, inject_leak, synthetic_network

graph = synthetic_network(8, 8, n_sensors=10, seed=2)
cfg = GeneratorConfig(n_sensors=10, days=84)
baseline = generate_scenario(graph, cfg, None, seed=0)

rng = np.random.default_rng(5)
pipes = rng.choice(len(graph.edges), 8, replace=False)
onsets = rng.integers(4 * WEEK, 10 * WEEK, 8)
scenarios = [
    inject_leak(baseline, graph, cfg, Leak(graph.edges[p].id, d, int(o)))
    for p, o in zip(pipes, onsets)
    for d in (7.0, 11.0, 15.0, 19.0)
]

for task in ("forecast", "interpolate"):
    for kind in ("ridge", "knn"):
        r = evaluate_fold(baseline.stream, scenarios, kind, task, fold_start=2 * WEEK, eval_stride=7)
        aucs = "  ".join(f"{d:g}mm {a:.3f}" for d, a in sorted(r.auc.items()))
        print(f"{task:<12} {kind:<6} baseline MSE {r.mse_baseline:.3f}   AUC {aucs}")
