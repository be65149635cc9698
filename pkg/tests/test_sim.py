"""Simulator tests against analytical oracles and micro-scenarios."""

import numpy as np
import pytest
from scipy import stats as sps

from qnetkit import qt, sim
from qnetkit.model import (Flow, Link, OutputPort, QueueSpec, NetworkSample,
                           Topology, TrafficDescriptor)


def single_queue(rate, policy="FIFO", buffer=16, cap=1e6, model="Poisson",
                 n_class=1, rates=None, weights=None, **desc_kw):
    """One link, one port; n_class queues with one flow each."""
    topo = Topology(nodes=[0, 1], links=[Link(id=0, src=0, dst=1, c_ref=cap)])
    if n_class == 1:
        queues = [QueueSpec(buffer_size=buffer)]
    else:
        queues = [QueueSpec(buffer_size=buffer, priority=i,
                            weight=(weights[i] if weights else 1.0))
                  for i in range(n_class)]
    port = OutputPort(link_id=0, policy=policy, queues=queues)
    rates = rates or [rate] * n_class
    flows = [Flow(id=i, src=0, dst=1, path=[(0, i)],
                  descriptor=TrafficDescriptor(model=model, rate=rates[i],
                                               **desc_kw))
             for i in range(n_class)]
    return NetworkSample(topology=topo, ports=[port], flows=flows)


def test_mm1b_agreement_moderate_load():
    # lam=950, mu=1000, b=16: every metric is large enough to estimate
    s = single_queue(rate=950.0, buffer=16)
    ref = qt.mm1b_metrics(950.0, 1000.0, 16)
    labels = sim.run(s, seed=7, packets=400_000)
    f = labels.flows[0]
    assert f["mean_delay"] == pytest.approx(ref.W[0], rel=0.04)
    assert f["loss_ratio"] == pytest.approx(ref.p_b[0], rel=0.08)
    occ = labels.queues[(0, 0)]["mean_occupancy"]
    assert occ == pytest.approx(ref.L[0] / 16, rel=0.04)
    assert labels.queues[(0, 0)]["loss_ratio"] == pytest.approx(
        ref.p_b[0], rel=0.08)


def test_mm1b_agreement_overload():
    s = single_queue(rate=1500.0, buffer=16)
    ref = qt.mm1b_metrics(1500.0, 1000.0, 16)
    labels = sim.run(s, seed=11, packets=300_000)
    f = labels.flows[0]
    assert f["mean_delay"] == pytest.approx(ref.W[0], rel=0.03)
    assert f["loss_ratio"] == pytest.approx(ref.p_b[0], rel=0.03)


def test_jitter_matches_phase_type_variance():
    s = single_queue(rate=700.0, buffer=16)
    model = qt.build_sp_generator([700.0], [1000.0], [16])
    _, _, var = qt.first_passage_delay_moments(model, 0)
    labels = sim.run(s, seed=3, packets=400_000)
    assert labels.flows[0]["jitter"] == pytest.approx(var, rel=0.08)


def test_pasta_arrival_seen_occupancy():
    s = single_queue(rate=700.0, buffer=16)
    labels = sim.run(s, seed=5, packets=300_000)
    seen = labels.meta["pasta"][(0, 0)]
    time_avg = labels.queues[(0, 0)]["mean_occupancy"] * 16
    assert seen == pytest.approx(time_avg, rel=0.02)


def test_packet_conservation_exact():
    s = single_queue(rate=1200.0, buffer=8)
    labels = sim.run(s, seed=2, packets=50_000)
    m = labels.meta
    assert m["emitted"] == m["delivered"] + m["dropped"]
    assert m["emitted"] > 0


def test_cbr_low_load_deterministic():
    # service 1 ms (fixed 1000 bits at 1 Mb/s), interarrival 10 ms: no queueing
    s = single_queue(rate=100.0, model="CBR")
    labels = sim.run(s, seed=1, packets=5_000, fixed_size=True)
    f = labels.flows[0]
    assert f["mean_delay"] == pytest.approx(1e-3, rel=1e-9)
    assert f["jitter"] == pytest.approx(0.0, abs=1e-18)
    assert f["loss_ratio"] == 0.0


def test_zero_rate_flow_marked_unreliable():
    s = single_queue(rate=500.0)
    s.flows.append(Flow(id=1, src=0, dst=1, path=[(0, 0)],
                        descriptor=TrafficDescriptor(model="Poisson",
                                                     rate=0.0)))
    labels = sim.run(s, seed=4, packets=20_000)
    f = labels.flows[1]
    assert f["loss_ratio"] == 0.0
    assert f["mean_delay"] == 0.0
    assert labels.unreliable == [1]
    assert 0 not in labels.unreliable


def test_warmup_cut_recorded():
    s = single_queue(rate=500.0)
    labels = sim.run(s, seed=9, packets=50_000, warmup_fraction=0.2)
    m = labels.meta
    assert m["warmup_t"] > 0
    # post-cut emissions: budget minus the discarded 20%, +-1 boundary packet
    assert abs(m["emitted"] - 0.8 * 50_000) <= 2


def test_sim_seconds_horizon():
    s = single_queue(rate=100.0, model="CBR")
    labels = sim.run(s, seed=1, sim_seconds=2.0, warmup_fraction=0.0)
    assert labels.meta["t_end"] == 2.0
    assert abs(labels.meta["emitted"] - 200) <= 2


def test_determinism_per_seed():
    s = single_queue(rate=900.0, buffer=8)
    a = sim.run(s, seed=42, packets=30_000)
    b = sim.run(s, seed=42, packets=30_000)
    assert a.flows == b.flows and a.queues == b.queues
    c = sim.run(s, seed=43, packets=30_000)
    assert a.flows != c.flows


def test_symmetric_flows_statistically_equal():
    topo = Topology(nodes=[0, 1, 2],
                    links=[Link(id=0, src=0, dst=1, c_ref=1e6),
                           Link(id=1, src=0, dst=2, c_ref=1e6)])
    ports = [OutputPort(link_id=i, policy="FIFO",
                        queues=[QueueSpec(buffer_size=16)]) for i in (0, 1)]
    desc = TrafficDescriptor(model="Poisson", rate=700.0)
    flows = [Flow(id=i, src=0, dst=i + 1, path=[(i, 0)],
                  descriptor=desc) for i in (0, 1)]
    s = NetworkSample(topology=topo, ports=ports, flows=flows)
    means = {0: [], 1: []}
    for seed in range(8):
        labels = sim.run(s, seed=seed, packets=30_000)
        for i in (0, 1):
            means[i].append(labels.flows[i]["mean_delay"])
    _, p = sps.ttest_ind(means[0], means[1])
    assert p > 0.01


def test_sp_two_class_vs_ctmc():
    s = single_queue(rate=None, policy="SP", buffer=8, n_class=2,
                     rates=[300.0, 500.0])
    m = qt.port_metrics("SP", [300.0, 500.0], [1000.0, 1000.0], [8, 8],
                        want_jitter=False)
    labels = sim.run(s, seed=13, packets=400_000)
    for i in (0, 1):
        assert labels.flows[i]["mean_delay"] == pytest.approx(
            m.W[i], rel=0.05)
    # low class blocks more often than the preferred class
    assert labels.flows[1]["loss_ratio"] > labels.flows[0]["loss_ratio"]
    assert labels.flows[1]["loss_ratio"] == pytest.approx(m.p_b[1], rel=0.12)


def test_wfq_service_share_two_to_one():
    s = single_queue(rate=None, policy="WFQ", buffer=32, n_class=2,
                     rates=[5000.0, 5000.0], weights=[2.0, 1.0])
    labels = sim.run(s, seed=17, packets=200_000)
    thr = [labels.flows[i]["loss_ratio"] for i in (0, 1)]
    got = [(1 - thr[i]) for i in (0, 1)]   # delivered fraction ~ share/lam
    assert got[0] / got[1] == pytest.approx(2.0, rel=0.02)


def test_drr_service_share_three_to_one():
    s = single_queue(rate=None, policy="DRR", buffer=32, n_class=2,
                     rates=[5000.0, 5000.0], weights=[3.0, 1.0])
    labels = sim.run(s, seed=19, packets=200_000)
    got = [1 - labels.flows[i]["loss_ratio"] for i in (0, 1)]
    assert got[0] / got[1] == pytest.approx(3.0, rel=0.03)


def _backlogged_port(policy, weights, sizes):
    qs = [sim._Queue(64, w) for w in weights]
    port = sim._Port(policy, 1e6, qs)
    for qi, size_list in enumerate(sizes):
        for sz in size_list:
            assert sim.enqueue(port, qi, sz) == "accepted"
    return port


def _drain_order(port, n):
    order = []
    for _ in range(n):
        qi = sim.scheduler_select(port)
        if qi < 0:
            break
        q = port.queues[qi]
        pkt = q.buf[0]
        if port.policy == "WFQ":
            port.vtime = q.tags[0]
        elif port.policy == "DRR":
            q.deficit -= pkt[1]
        q.buf.pop(0)
        if port.policy == "WFQ":
            q.tags.pop(0)
        order.append(qi)
    return order


def test_sp_select_lowest_priority_index():
    port = _backlogged_port("SP", [1, 1, 1],
                            [[], [100.0, 100.0], [100.0]])
    assert sim.scheduler_select(port) == 1


def test_drr_equal_weights_alternates():
    port = _backlogged_port("DRR", [1.0, 1.0],
                            [[100.0] * 4, [100.0] * 4])
    assert _drain_order(port, 8) == [0, 1, 0, 1, 0, 1, 0, 1]


def test_drr_weighted_pattern():
    port = _backlogged_port("DRR", [2.0, 1.0],
                            [[100.0] * 6, [100.0] * 3])
    assert _drain_order(port, 9) == [0, 0, 1, 0, 0, 1, 0, 0, 1]


def test_wfq_tag_order():
    # weights (2,1), equal sizes: q0 tags 500,1000,1500.., q1 tags 1000,2000
    port = _backlogged_port("WFQ", [2.0, 1.0],
                            [[1000.0] * 4, [1000.0] * 2])
    assert _drain_order(port, 6) == [0, 0, 1, 0, 0, 1]


def test_enqueue_tail_drop():
    qs = [sim._Queue(2, 1.0)]
    port = sim._Port("FIFO", 1e6, qs)
    assert sim.enqueue(port, 0, 500.0) == "accepted"
    assert sim.enqueue(port, 0, 500.0) == "accepted"
    assert sim.enqueue(port, 0, 500.0) == "dropped"
    assert len(qs[0].buf) == 2


def test_policies_agree_on_lossless_throughput():
    delivered = {}
    for policy in ("SP", "WFQ", "DRR"):
        s = single_queue(rate=None, policy=policy, buffer=32, n_class=2,
                         rates=[250.0, 300.0])
        labels = sim.run(s, seed=23, packets=40_000)
        m = labels.meta
        assert m["dropped"] == 0
        delivered[policy] = m["delivered"]
    assert len(set(delivered.values())) == 1


def test_tandem_mean_delay_additive():
    topo = Topology(nodes=[0, 1, 2],
                    links=[Link(id=0, src=0, dst=1, c_ref=1e6),
                           Link(id=1, src=1, dst=2, c_ref=1e6)])
    ports = [OutputPort(link_id=i, policy="FIFO",
                        queues=[QueueSpec(buffer_size=16)]) for i in (0, 1)]
    flows = [Flow(id=0, src=0, dst=2, path=[(0, 0), (1, 0)],
                  descriptor=TrafficDescriptor(model="Poisson", rate=300.0))]
    s = NetworkSample(topology=topo, ports=ports, flows=flows)
    labels = sim.run(s, seed=29, packets=200_000)
    ref = qt.mm1b_metrics(300.0, 1000.0, 16)
    # sizes persist across hops, so hop delays correlate; means stay close
    assert labels.flows[0]["mean_delay"] == pytest.approx(
        2 * ref.W[0], rel=0.10)


def test_bursty_traffic_hurts_more_than_poisson():
    base = dict(rate=850.0, buffer=16)
    poisson = sim.run(single_queue(**base), seed=31, packets=150_000)
    bursty = sim.run(single_queue(model="AutocorrExp", ar=(0.9, 4.0),
                                  **base), seed=31, packets=150_000)
    assert bursty.flows[0]["loss_ratio"] > poisson.flows[0]["loss_ratio"]
    assert bursty.flows[0]["mean_delay"] > poisson.flows[0]["mean_delay"]


def test_run_argument_validation():
    s = single_queue(rate=100.0)
    with pytest.raises(ValueError):
        sim.run(s, seed=1)
    with pytest.raises(ValueError):
        sim.run(s, seed=1, packets=1000, sim_seconds=1.0)
    with pytest.raises(ValueError):
        sim.run(s, seed=1, packets=-5)
    bad = single_queue(rate=100.0)
    bad.flows[0].path = [(0, 3)]
    with pytest.raises(ValueError):
        sim.run(bad, seed=1, packets=100)
