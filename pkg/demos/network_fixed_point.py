"""Whole-network analysis without simulation.

Generates a random topology with routed flows, then solves the coupled
per-port chains by fixed-point iteration: each flow's rate is thinned by
the losses of the queues it crosses, which changes those queues' loads,
which changes the losses. The converged labels are compared against a
packet simulation of the same sample.
"""
import numpy as np

from qnetkit import datagen, qtnet, sim

config = datagen.GenConfig(seed=1234, nodes=(10, 14), n_queues=2,
                           capacity_set=(1e8,), target_util=(0.7, 0.9))
sample, meta = datagen.generate_sample(
    config, np.random.SeedSequence((config.seed, 0)))
print(f"sample: {len(sample.topology.nodes)} nodes, "
      f"{len(sample.topology.links)} links, {len(sample.flows)} flows, "
      f"max utilization {meta['max_util']:.2f}")

labels_qt = qtnet.solve(sample)
info = labels_qt.meta
print(f"fixed point: converged={info['converged']} "
      f"iterations={info['iterations']} residual={info['residual']:.2e}")

labels_sim = sim.run(sample, seed=99, packets=300_000)

# the chains assume per-hop independence, so expect a few percent of
# disagreement on multi-hop flows, not machine precision
print(f"\n{'flow':>4} {'hops':>4} | {'W qt':>9} {'W sim':>9} "
      f"{'rel':>6} | {'loss qt':>8} {'loss sim':>8}")
worst = 0.0
for f in sample.flows:
    qt_f, sim_f = labels_qt.flows[f.id], labels_sim.flows[f.id]
    rel = abs(qt_f["mean_delay"] - sim_f["mean_delay"]) \
        / sim_f["mean_delay"]
    worst = max(worst, rel)
    if f.id < 8:
        print(f"{f.id:>4} {len(f.path):>4} | "
              f"{qt_f['mean_delay'] * 1e3:8.3f}ms "
              f"{sim_f['mean_delay'] * 1e3:8.3f}ms {rel:6.1%} | "
              f"{qt_f['loss_ratio']:8.5f} {sim_f['loss_ratio']:8.5f}")
print(f"(first 8 of {len(sample.flows)} flows; "
      f"worst delay disagreement {worst:.1%})")
