"""Fixed-point network predictor tests."""

import numpy as np
import pytest

from qnetkit import qt, qtnet, sim
from qnetkit.model import (Flow, Link, OutputPort, QueueSpec, NetworkSample,
                           Topology, TrafficDescriptor)


def chain_sample(rates, hops=2, policy="FIFO", buffer=16, cap=1e6,
                 n_class=1, weights=None, classes=None):
    """Linear topology 0-1-..-hops; every flow crosses all links."""
    nodes = list(range(hops + 1))
    links = [Link(id=i, src=i, dst=i + 1, c_ref=cap) for i in range(hops)]
    if n_class == 1:
        queues = [QueueSpec(buffer_size=buffer)]
    else:
        queues = [QueueSpec(buffer_size=buffer, priority=i,
                            weight=(weights[i] if weights else 1.0))
                  for i in range(n_class)]
    ports = [OutputPort(link_id=i, policy=policy, queues=list(queues))
             for i in range(hops)]
    flows = []
    for k, r in enumerate(rates):
        qi = classes[k] if classes else 0
        flows.append(Flow(id=k, src=0, dst=hops,
                          path=[(i, qi) for i in range(hops)],
                          descriptor=TrafficDescriptor(model="Poisson",
                                                       rate=r)))
    return NetworkSample(topology=Topology(nodes=nodes, links=links),
                         ports=ports, flows=flows)


def test_single_queue_equals_closed_form():
    s = chain_sample([700.0], hops=1)
    labels = qtnet.solve(s)
    ref = qt.mm1b_metrics(700.0, 1000.0, 16)
    f = labels.flows[0]
    assert f["mean_delay"] == pytest.approx(ref.W[0], rel=1e-10)
    assert f["loss_ratio"] == pytest.approx(ref.p_b[0], rel=1e-10)
    assert f["jitter"] == pytest.approx(ref.Var[0], rel=1e-9)
    assert labels.queues[(0, 0)]["mean_occupancy"] == pytest.approx(
        ref.L[0] / 16, rel=1e-10)
    assert labels.meta["converged"]


def test_map_paths_product_arithmetic():
    s = chain_sample([100.0], hops=2)
    state = qtnet.initial_state(s)
    stub = lambda pb: qt.QueueMetrics(p_b=np.array([pb]),
                                      W=np.array([1e-3]),
                                      Var=np.array([1e-6]),
                                      L=np.array([1.0]))
    state.port_metrics = {0: stub(0.1), 1: stub(0.2)}
    state.port_mu = {0: [1000.0], 1: [1000.0]}
    qtnet.map_paths(state, s)
    assert state.offered[0] == pytest.approx([100.0, 90.0])
    labels = qtnet.reduce(state, s)
    assert labels.flows[0]["loss_ratio"] == pytest.approx(0.28)
    delivered = 100.0 * (1 - labels.flows[0]["loss_ratio"])
    assert delivered == pytest.approx(72.0)


def test_lossless_converges_in_one_update():
    s = chain_sample([100.0, 50.0], hops=3, buffer=32)
    labels = qtnet.solve(s)
    assert labels.meta["converged"]
    assert labels.meta["iterations"] == 1
    assert labels.meta["residual"] < 1e-6
    for f in labels.flows.values():
        assert f["loss_ratio"] < 1e-12


def test_loss_composition_matches_hop_product():
    s = chain_sample([900.0, 400.0], hops=2, buffer=8)
    labels = qtnet.solve(s)
    state = qtnet.initial_state(s)
    # rebuild the converged state to read per-hop blockings
    for _ in range(50):
        qtnet.map_queues(state, s)
        qtnet.map_paths(state, s)
        if state.residual < 1e-6:
            break
    qtnet.map_queues(state, s)
    for fi, f in enumerate(s.flows):
        surv = 1.0
        for h, (lid, _) in enumerate(f.path):
            cls = state.index.flow_class[fi][h]
            surv *= 1 - state.port_metrics[lid].p_b[cls]
        assert labels.flows[f.id]["loss_ratio"] == pytest.approx(
            1 - surv, abs=1e-9)


def test_idempotence_at_fixed_point():
    s = chain_sample([950.0, 300.0], hops=2, buffer=8)
    qtnet.solve(s, tol=1e-9)
    state = qtnet.initial_state(s)
    for _ in range(50):
        qtnet.map_queues(state, s)
        qtnet.map_paths(state, s)
        if state.residual < 1e-9:
            break
    qtnet.map_queues(state, s)
    qtnet.map_paths(state, s)
    assert state.residual < 1e-9


def test_shared_queue_aggregates_rates():
    s = chain_sample([400.0, 300.0], hops=1)
    labels = qtnet.solve(s)
    ref = qt.mm1b_metrics(700.0, 1000.0, 16)
    for fid in (0, 1):
        assert labels.flows[fid]["mean_delay"] == pytest.approx(
            ref.W[0], rel=1e-10)


def test_zero_traffic_transmission_only():
    s = chain_sample([0.0], hops=2, policy="SP", n_class=2, buffer=4,
                     classes=[0])
    labels = qtnet.solve(s)
    f = labels.flows[0]
    # cap 1 Mb/s, 1000-bit packets: 1 ms per hop
    assert f["mean_delay"] == pytest.approx(2e-3, rel=1e-9)
    assert f["loss_ratio"] == 0.0
    assert labels.unreliable == [0]


def test_nonconvergence_flagged_not_raised():
    s = chain_sample([1500.0], hops=2, buffer=8)
    labels = qtnet.solve(s, max_iter=1)
    assert labels.meta["converged"] is False
    assert labels.meta["iterations"] == 1
    assert np.isfinite(labels.flows[0]["mean_delay"])


def test_overloaded_chain_converges():
    s = chain_sample([1500.0, 800.0], hops=3, buffer=8)
    labels = qtnet.solve(s)
    assert labels.meta["converged"]
    assert labels.meta["iterations"] <= 50
    for f in labels.flows.values():
        assert 0 < f["loss_ratio"] < 1
        assert np.isfinite(f["mean_delay"])


def test_sp_class_ordering_at_network_level():
    s = chain_sample([500.0, 500.0], hops=2, policy="SP", n_class=2,
                     buffer=8, classes=[0, 1])
    labels = qtnet.solve(s)
    assert labels.flows[0]["mean_delay"] < labels.flows[1]["mean_delay"]


def test_wfq_drr_identical_predictions():
    a = chain_sample([600.0, 500.0], hops=2, policy="WFQ", n_class=2,
                     buffer=6, weights=[2.0, 1.0], classes=[0, 1])
    b = chain_sample([600.0, 500.0], hops=2, policy="DRR", n_class=2,
                     buffer=6, weights=[2.0, 1.0], classes=[0, 1])
    la, lb = qtnet.solve(a), qtnet.solve(b)
    for fid in (0, 1):
        assert la.flows[fid] == lb.flows[fid]


def test_against_simulator_two_hop():
    s = chain_sample([850.0], hops=2, buffer=16)
    pred = qtnet.solve(s)
    truth = sim.run(s, seed=37, packets=300_000)
    assert pred.flows[0]["mean_delay"] == pytest.approx(
        truth.flows[0]["mean_delay"], rel=0.15)
    # hop independence overstates downstream loss; same order of magnitude
    ratio = pred.flows[0]["loss_ratio"] / truth.flows[0]["loss_ratio"]
    assert 0.4 < ratio < 2.5


def test_invalid_sample_rejected():
    s = chain_sample([100.0], hops=1)
    s.flows[0].path = [(0, 5)]
    with pytest.raises(ValueError):
        qtnet.solve(s)
