"""Multi-class ports: priority and weighted fair queueing.

Builds a 3-class SP port and a 2-class WFQ port, solves the per-class
Markov chains, and checks them against the packet scheduler in the
simulator. Also shows that WFQ and DRR share one chain model (their
fluid limit is the same), while the simulator treats them as distinct
packetized disciplines.
"""
import numpy as np

from qnetkit import qt, sim
from qnetkit.model import (Flow, Link, NetworkSample, OutputPort,
                           QueueSpec, Topology, TrafficDescriptor)

CAP = 1e6


def port_sample(policy, lam, bits, b, w):
    topo = Topology(nodes=[0, 1], links=[Link(id=0, src=0, dst=1,
                                              c_ref=CAP)])
    queues = [QueueSpec(buffer_size=int(b[k]), priority=k,
                        weight=float(w[k])) for k in range(len(lam))]
    port = OutputPort(link_id=0, policy=policy, queues=queues)
    flows = [Flow(id=k, src=0, dst=1, path=[(0, k)],
                  descriptor=TrafficDescriptor(model="Poisson",
                                               rate=float(lam[k])),
                  mean_pkt_bits=float(bits[k]))
             for k in range(len(lam))]
    return NetworkSample(topology=topo, ports=[port], flows=flows)


def compare(policy, lam, bits, b, w):
    mu = CAP / np.asarray(bits)
    chain = qt.port_metrics(policy, lam, mu, b, w=w)
    run = sim.run(port_sample(policy, lam, bits, b, w), seed=11,
                  packets=500_000)
    print(f"{policy}: offered load "
          f"{sum(l * s for l, s in zip(lam, bits)) / CAP:.2f}")
    for k in range(len(lam)):
        f = run.flows[k]
        print(f"  class {k} (w={w[k]:.0f}, b={b[k]}): "
              f"W chain {chain.W[k] * 1e3:7.3f}ms sim "
              f"{f['mean_delay'] * 1e3:7.3f}ms | "
              f"p_b chain {chain.p_b[k]:.4f} sim {f['loss_ratio']:.4f}")
    return chain


# strict priority: the head class is protected, the tail class starves
lam_sp = [800.0, 300.0, 150.0]
compare("SP", lam_sp, [1000.0, 1000.0, 1000.0], [10, 12, 12],
        [1.0, 1.0, 1.0])
print()

# WFQ: both classes oversubscribe their guaranteed share
w = [3.0, 1.0]
lam_w = [1.25 * (wk / sum(w)) * CAP / 1000.0 for wk in w]
wfq = compare("WFQ", lam_w, [1000.0, 1000.0], [16, 16], w)

drr = qt.port_metrics("DRR", lam_w, [1000.0, 1000.0], [16, 16], w=w)
print(f"\nWFQ and DRR chains identical: "
      f"{np.array_equal(wfq.W, drr.W) and np.array_equal(wfq.p_b, drr.p_b)}")
