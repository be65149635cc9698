"""Domain type, validation, and serialization tests."""

import pytest

from qnetkit import model as M


def tiny_sample(labels=None):
    topo = M.Topology(nodes=[0, 1], links=[M.Link(0, 0, 1, 1e6, 1.0)])
    ports = [M.OutputPort(0, "FIFO", [M.QueueSpec(16)])]
    flows = [M.Flow(0, 0, 1, [(0, 0)],
                    M.TrafficDescriptor("Poisson", 100.0))]
    return M.NetworkSample(topo, ports, flows, labels)


def three_hop_sample():
    topo = M.Topology(
        nodes=[0, 1, 2, 3],
        links=[M.Link(0, 0, 1, 1e6), M.Link(1, 1, 2, 1e6),
               M.Link(2, 2, 3, 1e6)])
    qs = lambda: [M.QueueSpec(16, priority=pr, weight=wt)
                  for pr, wt in ((2, 1.0), (0, 2.0), (1, 3.0))]
    ports = [M.OutputPort(0, "SP", qs()), M.OutputPort(1, "WFQ", qs()),
             M.OutputPort(2, "FIFO", [M.QueueSpec(32)])]
    flows = [
        M.Flow(0, 0, 3, [(0, 1), (1, 1), (2, 0)],
               M.TrafficDescriptor("Poisson", 50.0)),
        M.Flow(1, 1, 3, [(1, 0), (2, 0)],
               M.TrafficDescriptor("CBR", 20.0)),
    ]
    return M.NetworkSample(topo, ports, flows)


def test_validate_clean():
    assert M.validate(tiny_sample()) == []
    assert M.validate(three_hop_sample()) == []


def test_effective_capacity():
    assert M.Link(0, 0, 1, c_ref=1e8, s_f=10.0).cap == pytest.approx(1e9)
    # representation-independent: equal products report equal Cap
    assert M.Link(0, 0, 1, 1e9, 1.0).cap == M.Link(0, 0, 1, 1e8, 10.0).cap


def test_validate_path_adjacency_violation():
    s = three_hop_sample()
    s.flows[0].path = [(0, 1), (2, 0)]     # skips link 1: 0->1 then 2->3
    v = M.validate(s)
    assert len(v) == 1 and "src" in v[0]


def test_validate_fifo_queue_count():
    s = tiny_sample()
    s.ports[0].queues = [M.QueueSpec(16), M.QueueSpec(16, priority=1),
                         M.QueueSpec(16, priority=2)]
    v = M.validate(s)
    assert any("FIFO" in x for x in v)


def test_validate_catches_bad_fields():
    s = three_hop_sample()
    s.topology.links[0].s_f = 0.5
    s.ports[1].queues[0].weight = 0.0
    s.flows[0].descriptor = M.TrafficDescriptor("AutocorrExp", 10.0,
                                                ar=(1.5, 1.0))
    v = M.validate(s)
    assert any("s_f" in x for x in v)
    assert any("weight" in x for x in v)
    assert any("AutocorrExp" in x for x in v)


def test_validate_disconnected():
    s = tiny_sample()
    s.topology.nodes.append(9)
    v = M.validate(s)
    assert any("connected" in x for x in v)


def test_flows_through_queue():
    s = three_hop_sample()
    assert M.flows_through_queue(s, (1, 1)) == {0}
    assert M.flows_through_queue(s, (2, 0)) == {0, 1}
    assert M.flows_through_queue(s, (0, 0)) == set()
    with pytest.raises(KeyError):
        M.flows_through_queue(s, (7, 0))


def test_flows_through_queue_bruteforce():
    s = three_hop_sample()
    for lid in (0, 1, 2):
        for qidx in range(len(s.port_of(lid).queues)):
            want = {f.id for f in s.flows for hop in f.path
                    if hop == (lid, qidx)}
            assert M.flows_through_queue(s, (lid, qidx)) == want


def test_queues_of_link_priority_order():
    s = three_hop_sample()
    # priorities are (2, 0, 1) in list order -> sorted refs (q1, q2, q0)
    assert M.queues_of_link(s, 0) == [(0, 1), (0, 2), (0, 0)]
    assert M.queues_of_link(s, 2) == [(2, 0)]


def test_queue_partition_property():
    s = three_hop_sample()
    refs = []
    for l in s.topology.links:
        refs.extend(M.queues_of_link(s, l.id))
    assert len(refs) == len(set(refs))
    want = {(p.link_id, qi) for p in s.ports
            for qi in range(len(p.queues))}
    assert set(refs) == want


def test_flow_class_at_hop():
    s = three_hop_sample()
    # flow 0 hop 0 uses queue (0,1) which has priority 0 -> class 0
    assert M.flow_class_at_hop(s, s.flows[0], 0) == 0
    # flow 1 hop 0 uses queue (1,0) with priority 2 -> class 2
    assert M.flow_class_at_hop(s, s.flows[1], 0) == 2


def test_json_roundtrip():
    s = three_hop_sample()
    s.labels = M.PerfLabels(
        flows={0: {"mean_delay": 0.01, "jitter": 1e-5, "loss_ratio": 0.02},
               1: {"mean_delay": 0.02, "jitter": 2e-5, "loss_ratio": 0.0}},
        queues={(0, 1): {"mean_occupancy": 0.3, "loss_ratio": 0.01}})
    txt = M.sample_to_json(s)
    back = M.sample_from_json(txt)
    assert M.sample_to_json(back) == txt
    assert back.flows[0].path == s.flows[0].path
    assert back.labels.flows[1]["jitter"] == pytest.approx(2e-5)
    assert back.labels.queues[(0, 1)]["mean_occupancy"] == pytest.approx(0.3)


def test_json_canonical_keys():
    import json
    d = json.loads(M.sample_to_json(three_hop_sample()))
    assert set(d) == {"topology", "ports", "flows"}
    assert {"c_ref", "s_f"} <= set(d["topology"]["links"][0])


def test_labels_validation():
    s = tiny_sample(labels=M.PerfLabels(
        flows={0: {"mean_delay": 0.1, "jitter": 0.0, "loss_ratio": 1.7}}))
    assert any("loss_ratio" in x for x in M.validate(s))
