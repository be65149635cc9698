"""Domain types shared by all engines: topology, ports, flows, labels.

A NetworkSample is the unit of evaluation. It is immutable by convention
after validate() returns no violations; engines never mutate samples.

Queue references are (link_id, queue_index) pairs, where queue_index is the
position in the owning port's queue list. Flow paths are explicit hop lists
of such pairs, one per traversed link.
"""

import json
from dataclasses import dataclass, field

POLICIES = ("FIFO", "SP", "WFQ", "DRR")
TRAFFIC_MODELS = ("Poisson", "CBR", "OnOff", "AutocorrExp", "ModulatedExp")


@dataclass
class Link:
    id: int
    src: int
    dst: int
    c_ref: float              # reference capacity, bits/s
    s_f: float = 1.0          # scale factor >= 1

    @property
    def cap(self):
        """Effective capacity in bits/s: c_ref * s_f."""
        return self.c_ref * self.s_f


@dataclass
class Topology:
    nodes: list
    links: list               # list[Link]

    def link_by_id(self, link_id):
        return self._index()[link_id]

    def _index(self):
        idx = getattr(self, "_link_idx", None)
        if idx is None or len(idx) != len(self.links):
            idx = {l.id: l for l in self.links}
            object.__setattr__(self, "_link_idx", idx)
        return idx


@dataclass
class QueueSpec:
    buffer_size: int          # packets, in-service packet included
    priority: int = 0         # 0 = highest
    weight: float = 1.0       # WFQ/DRR only


@dataclass
class OutputPort:
    link_id: int
    policy: str               # FIFO | SP | WFQ | DRR
    queues: list              # list[QueueSpec]


@dataclass
class TrafficDescriptor:
    model: str                # one of TRAFFIC_MODELS
    rate: float               # mean packets/s (long-run average)
    on_off: tuple = None      # (on_min, on_max, off_min, off_max) seconds
    ar: tuple = None          # (a, s2): AR(1) coefficient, marginal variance
    mod: tuple = None         # (A, a, sigma2) for ModulatedExp


@dataclass
class Flow:
    id: int
    src: int
    dst: int
    path: list                # list[(link_id, queue_index)]
    descriptor: TrafficDescriptor
    mean_pkt_bits: float = 1000.0


@dataclass
class PerfLabels:
    """Per-flow and per-queue performance metrics.

    flows: {flow_id: {"mean_delay": s, "jitter": s^2, "loss_ratio": [0,1]}}
    queues: {(link_id, queue_index): {"mean_occupancy": [0,1],
                                      "loss_ratio": [0,1]}}
    """
    flows: dict = field(default_factory=dict)
    queues: dict = field(default_factory=dict)
    unreliable: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


@dataclass
class NetworkSample:
    topology: Topology
    ports: list               # one OutputPort per link
    flows: list               # list[Flow]
    labels: PerfLabels = None

    def port_of(self, link_id):
        idx = getattr(self, "_port_idx", None)
        if idx is None or len(idx) != len(self.ports):
            idx = {p.link_id: p for p in self.ports}
            object.__setattr__(self, "_port_idx", idx)
        return idx[link_id]


# ---------------------------------------------------------------------------
# validation

def validate(sample):
    """Check every type invariant; return a list of violation strings.

    An empty list means the sample is well-formed. Violations are data,
    not exceptions: generators use them to reject candidates.
    """
    v = []
    topo = sample.topology
    nodes = set(topo.nodes)

    seen_pairs = set()
    link_ids = set()
    for l in topo.links:
        if l.id in link_ids:
            v.append(f"link {l.id}: duplicate link id")
        link_ids.add(l.id)
        if l.src not in nodes or l.dst not in nodes:
            v.append(f"link {l.id}: endpoint not in node set")
        if (l.src, l.dst) in seen_pairs:
            v.append(f"link {l.id}: second link for pair ({l.src},{l.dst})")
        seen_pairs.add((l.src, l.dst))
        if not l.c_ref > 0:
            v.append(f"link {l.id}: c_ref must be > 0")
        if not l.s_f >= 1:
            v.append(f"link {l.id}: s_f must be >= 1")

    if topo.nodes and not _weakly_connected(topo):
        v.append("topology: not weakly connected")

    ports_by_link = {}
    for p in sample.ports:
        if p.link_id in ports_by_link:
            v.append(f"port of link {p.link_id}: duplicate port")
        ports_by_link[p.link_id] = p
        if p.link_id not in link_ids:
            v.append(f"port of link {p.link_id}: unknown link")
        if p.policy not in POLICIES:
            v.append(f"port of link {p.link_id}: unknown policy {p.policy!r}")
        elif p.policy == "FIFO":
            if len(p.queues) != 1:
                v.append(f"port of link {p.link_id}: FIFO needs exactly 1 "
                         f"queue, has {len(p.queues)}")
        elif len(p.queues) < 2:
            v.append(f"port of link {p.link_id}: {p.policy} needs >= 2 "
                     f"queues, has {len(p.queues)}")
        prios = [q.priority for q in p.queues]
        if len(set(prios)) != len(prios):
            v.append(f"port of link {p.link_id}: duplicate priorities")
        for qi, q in enumerate(p.queues):
            if q.buffer_size < 1:
                v.append(f"queue ({p.link_id},{qi}): buffer_size < 1")
            if not q.weight > 0:
                v.append(f"queue ({p.link_id},{qi}): weight must be > 0")
    for lid in link_ids:
        if lid not in ports_by_link:
            v.append(f"link {lid}: no output port")

    links = {l.id: l for l in topo.links}
    flow_ids = set()
    for f in sample.flows:
        if f.id in flow_ids:
            v.append(f"flow {f.id}: duplicate flow id")
        flow_ids.add(f.id)
        if len(f.path) < 1:
            v.append(f"flow {f.id}: empty path")
            continue
        prev_dst = None
        for k, (lid, qidx) in enumerate(f.path):
            if lid not in links:
                v.append(f"flow {f.id} hop {k}: unknown link {lid}")
                continue
            port = ports_by_link.get(lid)
            if port is None or not 0 <= qidx < len(port.queues):
                v.append(f"flow {f.id} hop {k}: queue ({lid},{qidx}) does "
                         f"not resolve")
            if prev_dst is not None and links[lid].src != prev_dst:
                v.append(f"flow {f.id} hop {k}: link {lid} src "
                         f"{links[lid].src} != previous hop dst {prev_dst}")
            prev_dst = links[lid].dst
        d = f.descriptor
        if d.model not in TRAFFIC_MODELS:
            v.append(f"flow {f.id}: unknown traffic model {d.model!r}")
        if not d.rate >= 0:
            v.append(f"flow {f.id}: rate must be >= 0")
        if d.model == "AutocorrExp":
            if d.ar is None or not (-1 < d.ar[0] < 1) or not d.ar[1] > 0:
                v.append(f"flow {f.id}: AutocorrExp needs |a|<1, s2>0")
        if d.model == "ModulatedExp":
            if d.mod is None or not (-1 < d.mod[1] < 1) or not d.mod[2] > 0:
                v.append(f"flow {f.id}: ModulatedExp needs |a|<1, sigma2>0")
        if d.model == "OnOff":
            oo = d.on_off
            if oo is None or not (0 < oo[0] <= oo[1]) or not (0 < oo[2] <= oo[3]):
                v.append(f"flow {f.id}: OnOff needs 0<on_min<=on_max, "
                         f"0<off_min<=off_max")
        if not f.mean_pkt_bits > 0:
            v.append(f"flow {f.id}: mean_pkt_bits must be > 0")

    if sample.labels is not None:
        for fid, m in sample.labels.flows.items():
            if not 0 <= m["loss_ratio"] <= 1:
                v.append(f"labels flow {fid}: loss_ratio outside [0,1]")
            if m["mean_delay"] < 0 or m["jitter"] < 0:
                v.append(f"labels flow {fid}: negative delay or jitter")
        for qref, m in sample.labels.queues.items():
            if not 0 <= m["mean_occupancy"] <= 1:
                v.append(f"labels queue {qref}: occupancy outside [0,1]")
            if not 0 <= m["loss_ratio"] <= 1:
                v.append(f"labels queue {qref}: loss_ratio outside [0,1]")
    return v


def _weakly_connected(topo):
    if not topo.nodes:
        return True
    adj = {n: [] for n in topo.nodes}
    for l in topo.links:
        if l.src in adj and l.dst in adj:
            adj[l.src].append(l.dst)
            adj[l.dst].append(l.src)
    seen = {topo.nodes[0]}
    stack = [topo.nodes[0]]
    while stack:
        for m in adj[stack.pop()]:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return len(seen) == len(topo.nodes)


# ---------------------------------------------------------------------------
# path/queue indexing

def flows_through_queue(sample, queue_ref):
    """Flow ids whose path contains queue_ref (the paper's Q_f)."""
    lid, qidx = queue_ref
    port = sample.port_of(lid)      # raises KeyError if unresolved
    if not 0 <= qidx < len(port.queues):
        raise KeyError(f"queue ({lid},{qidx}) does not resolve")
    return {f.id for f in sample.flows if (lid, qidx) in f.path}


def queues_of_link(sample, link_id):
    """Queue refs of the link's port, ordered by ascending priority."""
    port = sample.port_of(link_id)
    order = sorted(range(len(port.queues)),
                   key=lambda qi: port.queues[qi].priority)
    return [(link_id, qi) for qi in order]


def flow_class_at_hop(sample, flow, k):
    """Scheduling class of the flow at hop k.

    The class is the rank of the hop's queue in the port's priority order
    (0 = highest), which is also the row index used by the port CTMCs.
    """
    lid, qidx = flow.path[k]
    return queues_of_link(sample, lid).index((lid, qidx))


# ---------------------------------------------------------------------------
# canonical JSON serialization

def sample_to_dict(sample):
    d = {
        "topology": {
            "nodes": list(sample.topology.nodes),
            "links": [{"id": l.id, "src": l.src, "dst": l.dst,
                       "c_ref": l.c_ref, "s_f": l.s_f}
                      for l in sample.topology.links],
        },
        "ports": [{"link_id": p.link_id, "policy": p.policy,
                   "queues": [{"buffer_size": q.buffer_size,
                               "priority": q.priority,
                               "weight": q.weight} for q in p.queues]}
                  for p in sample.ports],
        "flows": [_flow_to_dict(f) for f in sample.flows],
    }
    if sample.labels is not None:
        d["labels"] = labels_to_dict(sample.labels)
    return d


def _flow_to_dict(f):
    desc = {"model": f.descriptor.model, "rate": f.descriptor.rate}
    if f.descriptor.on_off is not None:
        desc["on_off"] = list(f.descriptor.on_off)
    if f.descriptor.ar is not None:
        desc["ar"] = list(f.descriptor.ar)
    if f.descriptor.mod is not None:
        desc["mod"] = list(f.descriptor.mod)
    return {"id": f.id, "src": f.src, "dst": f.dst,
            "path": [[lid, qidx] for lid, qidx in f.path],
            "descriptor": desc, "mean_pkt_bits": f.mean_pkt_bits}


def labels_to_dict(labels):
    d = {
        "flows": [{"flow": fid, **{k: m[k] for k in
                                   ("mean_delay", "jitter", "loss_ratio")}}
                  for fid, m in sorted(labels.flows.items())],
        "queues": [{"link": lid, "queue": qidx,
                    "mean_occupancy": m["mean_occupancy"],
                    "loss_ratio": m["loss_ratio"]}
                   for (lid, qidx), m in sorted(labels.queues.items())],
    }
    if labels.unreliable:
        d["unreliable"] = sorted(labels.unreliable)
    return d


def sample_from_dict(d):
    topo = Topology(
        nodes=list(d["topology"]["nodes"]),
        links=[Link(**ld) for ld in d["topology"]["links"]],
    )
    ports = [OutputPort(link_id=pd["link_id"], policy=pd["policy"],
                        queues=[QueueSpec(**qd) for qd in pd["queues"]])
             for pd in d["ports"]]
    flows = []
    for fd in d["flows"]:
        dd = fd["descriptor"]
        desc = TrafficDescriptor(
            model=dd["model"], rate=dd["rate"],
            on_off=tuple(dd["on_off"]) if "on_off" in dd else None,
            ar=tuple(dd["ar"]) if "ar" in dd else None,
            mod=tuple(dd["mod"]) if "mod" in dd else None,
        )
        flows.append(Flow(id=fd["id"], src=fd["src"], dst=fd["dst"],
                          path=[(h[0], h[1]) for h in fd["path"]],
                          descriptor=desc,
                          mean_pkt_bits=fd["mean_pkt_bits"]))
    labels = labels_from_dict(d["labels"]) if "labels" in d else None
    return NetworkSample(topology=topo, ports=ports, flows=flows,
                         labels=labels)


def labels_from_dict(d):
    labels = PerfLabels()
    for r in d["flows"]:
        labels.flows[r["flow"]] = {k: r[k] for k in
                                   ("mean_delay", "jitter", "loss_ratio")}
    for r in d["queues"]:
        labels.queues[(r["link"], r["queue"])] = {
            "mean_occupancy": r["mean_occupancy"],
            "loss_ratio": r["loss_ratio"]}
    labels.unreliable = list(d.get("unreliable", []))
    return labels


def sample_to_json(sample):
    """Canonical single-document form: sorted keys, no whitespace drift."""
    return json.dumps(sample_to_dict(sample), sort_keys=True,
                      separators=(",", ":"))


def sample_from_json(s):
    return sample_from_dict(json.loads(s))
