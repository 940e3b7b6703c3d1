#!/usr/bin/env python3
"""Region-of-interest reading at a gate: localize labeled inside/outside tags
and score miss and cross rates."""

import chordsim as cs
from chordsim import harness
from chordsim import locator as loc

plan = cs.default_carrier_plan()
geom = cs.default_array_geometry()

scenes, labels = harness.gate_corpus(n_inside=60, n_outside=60, seed=11)
prior = loc.PriorROI(path_bounds_m=(1.5, 14.0),
                     region_xy=((-1.5, 0.3), (1.5, 0.3), (1.5, 2.5), (-1.5, 2.5)))
cfg = harness.BatchConfig(plan=plan, geom=geom, grid=loc.GridSpec(),
                          prior=prior, seed=2)
report = harness.run_batch(scenes, cfg)

decisions = []
for result, label in zip(report.results, labels):
    cls = loc.classify_roi(result.estimate, prior, geom) if result.estimate else None
    decisions.append({"label": label, "classified": cls})
miss, cross = harness.evaluate_roi(decisions)

print("gate corpus: %d inside + %d outside tags"
      % (labels.count("inside"), labels.count("outside")))
print("p50 error %.3f m, p99 error %.3f m" % (report.p50_m, report.p99_m))
print("miss rate  %.4f  (inside tags not reported inside)" % miss)
print("cross rate %.4f  (outside tags reported inside)" % cross)
