"""MMD magnitude and shape-curve candidates for three window lengths.

One-day windows fire at the start of each weekend; one-week windows cancel the
weekly cycle and point at the leak.
"""

from __future__ import annotations

from leakdrift.core import DAY, WEEK
from leakdrift.distdetect import mmd_curve, shape_curve
from leakdrift.scenario import GeneratorConfig, Leak, generate_scenario, synthetic_network

graph = synthetic_network(8, 8, n_sensors=10, seed=2)
cfg = GeneratorConfig(n_sensors=10, days=70)
onset = 5 * WEEK + 3 * DAY
stream = generate_scenario(graph, cfg, Leak(graph.edges[40].id, 11.0, onset), seed=3).stream

for days in (1, 3, 7):
    L = days * DAY
    mc = mmd_curve(stream.values, L, step=L // 8)
    cands = shape_curve(mc.m, 8).candidates
    top = sorted(cands, key=lambda c: -c[1])[:5]
    where = ", ".join(f"day {mc.t[i] / DAY:.1f}" for i, _ in top)
    print(f"{days}-day window: {len(cands)} candidates; strongest at {where}  (onset day {onset / DAY:g})")
