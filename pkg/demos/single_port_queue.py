"""One FIFO port, three ways.

The same M/M/1/b queue is evaluated with the closed-form formulas, the
generator-matrix chain, and the packet-level simulator, across a small
load/buffer grid. All three should tell the same story: the closed form
and the chain agree to machine precision, the simulator to sampling
noise.
"""
import numpy as np

from qnetkit import qt, sim
from qnetkit.model import (Flow, Link, NetworkSample, OutputPort,
                           QueueSpec, Topology, TrafficDescriptor)

CAP = 1e6          # link speed, bit/s
BITS = 1000.0      # mean packet size -> mu = 1000 pkt/s
MU = CAP / BITS


def one_queue_sample(lam, b):
    topo = Topology(nodes=[0, 1], links=[Link(id=0, src=0, dst=1,
                                              c_ref=CAP)])
    port = OutputPort(link_id=0, policy="FIFO",
                      queues=[QueueSpec(buffer_size=b)])
    flow = Flow(id=0, src=0, dst=1, path=[(0, 0)],
                descriptor=TrafficDescriptor(model="Poisson", rate=lam))
    return NetworkSample(topology=topo, ports=[port], flows=[flow])


print(f"{'rho':>5} {'b':>3} | {'W closed':>9} {'W chain':>9} "
      f"{'W sim':>9} | {'p_b closed':>10} {'p_b chain':>10} {'p_b sim':>10}")
for rho in (0.5, 0.9, 1.1):
    for b in (8, 32):
        lam = rho * MU
        closed = qt.mm1b_metrics(lam, MU, b)
        # the same queue as a one-class chain solved from its generator
        chain = qt.port_metrics("FIFO", [lam], [MU], [b])
        run = sim.run(one_queue_sample(lam, b), seed=7, packets=200_000)
        f = run.flows[0]
        print(f"{rho:5.2f} {b:3d} | "
              f"{closed.W[0] * 1e3:8.3f}ms {chain.W[0] * 1e3:8.3f}ms "
              f"{f['mean_delay'] * 1e3:8.3f}ms | "
              f"{closed.p_b[0]:10.2e} {chain.p_b[0]:10.2e} "
              f"{f['loss_ratio']:10.2e}")

print()
print("closed form vs chain on the last cell, full metric set:")
print(f"  W    {closed.W[0]:.12e}  vs  {chain.W[0]:.12e}")
print(f"  L    {closed.L[0]:.12e}  vs  {chain.L[0]:.12e}")
print(f"  p_b  {closed.p_b[0]:.12e}  vs  {chain.p_b[0]:.12e}")
print(f"  Var  {closed.Var[0]:.12e}  vs  {chain.Var[0]:.12e}")
