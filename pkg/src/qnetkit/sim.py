"""Packet-level discrete-event simulator (ground truth engine).

Event-driven, single-threaded, deterministic per seed. Packets are
generated per flow by the traffic module, sized once at the source, and
carried hop by hop through tail-drop queues; transmission time is
size / link capacity with no propagation delay.

The in-service packet stays in its queue's buffer until completion, so a
queue of size b holds at most b packets including the one on the wire,
matching the analytical engine's convention.

Scheduling: SP serves the lowest priority index; WFQ is the packetized
virtual-finish-time approximation (tag = max(V, F_prev) + size/weight,
V advancing to the tag of the packet entering service); DRR adds
weight * quantum_unit of deficit per round, quantum_unit being the largest
packet size seen at the port.
"""

import heapq
import numpy as np

from . import traffic
from .model import PerfLabels, validate, queues_of_link

_BLOCK = 4096
_ARRIVAL, _COMPLETE = 0, 1


class _FlowDriver:
    __slots__ = ("idx", "flow", "state", "size_rng", "mean_bits", "fixed",
                 "deltas", "dpos", "sizes", "spos", "route")

    def __init__(self, idx, flow, seed, fixed_size, route):
        self.idx = idx
        self.flow = flow
        ss = np.random.SeedSequence((seed, flow.id))
        arr_ss, size_ss = ss.spawn(2)
        self.state = traffic.make_state(flow.descriptor, arr_ss)
        self.size_rng = np.random.default_rng(size_ss)
        self.mean_bits = flow.mean_pkt_bits
        self.fixed = fixed_size
        self.deltas = None
        self.dpos = 0
        self.sizes = None
        self.spos = 0
        self.route = route        # list[(port, local queue index)]

    def next_delta(self):
        if self.deltas is None or self.dpos >= len(self.deltas):
            self.deltas = self.state.block(_BLOCK).tolist()
            self.dpos = 0
        d = self.deltas[self.dpos]
        self.dpos += 1
        return d

    def next_size(self):
        if self.fixed:
            return self.mean_bits
        if self.sizes is None or self.spos >= len(self.sizes):
            self.sizes = self.size_rng.exponential(self.mean_bits,
                                                   _BLOCK).tolist()
            self.spos = 0
        s = self.sizes[self.spos]
        self.spos += 1
        return s


class _Queue:
    __slots__ = ("cap", "buf", "tags", "f_prev", "deficit", "quantum_w",
                 "area", "t_last", "arrivals", "drops", "seen_sum",
                 "seen_cnt")

    def __init__(self, cap, weight):
        self.cap = cap
        self.buf = []              # FIFO: append / pop(0); length <= ~64
        self.tags = []             # WFQ finish tags, parallel to buf
        self.f_prev = 0.0
        self.deficit = 0.0
        self.quantum_w = weight
        self.area = 0.0
        self.t_last = 0.0
        self.arrivals = 0
        self.drops = 0
        self.seen_sum = 0
        self.seen_cnt = 0


class _Port:
    __slots__ = ("policy", "cap_bps", "queues", "busy", "serving",
                 "vtime", "rr_pos", "rr_entered", "max_size")

    def __init__(self, policy, cap_bps, queues):
        self.policy = policy
        self.cap_bps = cap_bps
        self.queues = queues       # priority order: index = class
        self.busy = False
        self.serving = -1
        self.vtime = 0.0
        self.rr_pos = 0
        self.rr_entered = False
        self.max_size = 0.0


def scheduler_select(port):
    """Queue index to serve next, or -1 when every queue is empty."""
    policy = port.policy
    qs = port.queues
    if policy == "FIFO":
        return 0 if qs[0].buf else -1
    if policy == "SP":
        for i, q in enumerate(qs):
            if q.buf:
                return i
        return -1
    if policy == "WFQ":
        best, best_tag = -1, 0.0
        for i, q in enumerate(qs):
            if q.buf and (best < 0 or q.tags[0] < best_tag):
                best, best_tag = i, q.tags[0]
        return best
    # DRR
    if not any(q.buf for q in qs):
        return -1
    p = len(qs)
    unit = port.max_size
    for _ in range(64 * p):
        q = qs[port.rr_pos]
        if not port.rr_entered:
            q.deficit += q.quantum_w * unit
            port.rr_entered = True
        if q.buf and q.deficit >= q.buf[0][1]:
            return port.rr_pos
        if not q.buf:
            q.deficit = 0.0
        port.rr_entered = False
        port.rr_pos = (port.rr_pos + 1) % p
    raise RuntimeError("DRR failed to select within the round cap")


def _start_service(port, qi, t, heap, seq):
    q = port.queues[qi]
    pkt = q.buf[0]
    if port.policy == "WFQ":
        port.vtime = q.tags[0]
    elif port.policy == "DRR":
        q.deficit -= pkt[1]
    port.busy = True
    port.serving = qi
    heapq.heappush(heap, (t + pkt[1] / port.cap_bps, seq, _COMPLETE, port))
    return seq + 1


def run(sample, seed, packets=None, sim_seconds=None, warmup_fraction=0.1,
        fixed_size=False):
    """Simulate and return PerfLabels.

    Exactly one of `packets` (total source emissions across flows; the run
    then drains) or `sim_seconds` must be given. Metrics cover packets
    emitted after the warmup cut; queue occupancies are time averages from
    the cut onward. Flows that deliver nothing post-warmup are listed in
    labels.unreliable.
    """
    problems = validate(sample)
    if problems:
        raise ValueError(f"invalid sample: {problems[:3]}")
    if (packets is None) == (sim_seconds is None):
        raise ValueError("give exactly one of packets / sim_seconds")
    if packets is not None and packets <= 0:
        raise ValueError("packets must be positive")
    if sim_seconds is not None and sim_seconds <= 0:
        raise ValueError("sim_seconds must be positive")

    ports = {}
    queue_refs = {}                # (link_id, queue_index) -> (_Queue, port)
    for p in sample.ports:
        link = sample.topology.link_by_id(p.link_id)
        order = [qi for _, qi in queues_of_link(sample, p.link_id)]
        qs = [_Queue(p.queues[qi].buffer_size, p.queues[qi].weight)
              for qi in order]
        port = _Port(p.policy, link.cap, qs)
        ports[p.link_id] = port
        for cls, qi in enumerate(order):
            queue_refs[(p.link_id, qi)] = (qs[cls], port)

    drivers = []
    for k, f in enumerate(sample.flows):
        route = []
        for lid, qidx in f.path:
            q, port = queue_refs[(lid, qidx)]
            route.append((port, port.queues.index(q)))
        drivers.append(_FlowDriver(k, f, seed, fixed_size, route))

    nflows = len(drivers)
    emitted = [0] * nflows
    dropped = [0] * nflows
    delivered = [0] * nflows
    delay_sum = [0.0] * nflows
    delay_sq = [0.0] * nflows

    heap = []
    seq = 0
    for d in drivers:
        delta = d.next_delta()
        if delta != float("inf"):        # zero-rate flows never fire
            heapq.heappush(heap, (delta, seq, _ARRIVAL, d))
            seq += 1

    total_emitted = 0
    warmup_t = None
    if packets is not None:
        warmup_at = max(0, int(np.ceil(warmup_fraction * packets)))
        if warmup_at == 0:
            warmup_t = 0.0
    else:
        warmup_t = None            # set by time once known
        warmup_time = warmup_fraction * sim_seconds
        if warmup_time == 0:
            warmup_t = 0.0
    t = 0.0
    all_queues = [q for port in ports.values() for q in port.queues]

    def reset_stats(now):
        for q in all_queues:
            q.area = 0.0
            q.t_last = now
            q.arrivals = 0
            q.drops = 0
            q.seen_sum = 0
            q.seen_cnt = 0
        for k in range(nflows):
            emitted[k] = 0
            dropped[k] = 0
            delivered[k] = 0
            delay_sum[k] = 0.0
            delay_sq[k] = 0.0

    # packet layout: [t_emit, size, driver, hop_k]
    while heap:
        t, _, kind, obj = heapq.heappop(heap)
        if sim_seconds is not None:
            if warmup_t is None and t >= warmup_time:
                warmup_t = warmup_time
                reset_stats(warmup_time)
            if t >= sim_seconds:
                t = sim_seconds
                break
        if kind == _ARRIVAL:
            d = obj
            total_emitted += 1
            if packets is not None:
                if warmup_t is None and total_emitted >= warmup_at:
                    warmup_t = t
                    reset_stats(t)
                if total_emitted < packets:
                    nd = d.next_delta()
                    if nd != float("inf"):
                        heapq.heappush(heap, (t + nd, seq, _ARRIVAL, d))
                        seq += 1
            else:
                nd = d.next_delta()
                if nd != float("inf"):
                    heapq.heappush(heap, (t + nd, seq, _ARRIVAL, d))
                    seq += 1
            k = d.idx
            if warmup_t is not None:
                emitted[k] += 1
            size = d.next_size()
            pkt = [t, size, d, 0]
            port, qi = d.route[0]
            seq = _deliver_to(port, qi, pkt, t, heap, seq, warmup_t,
                              dropped)
        else:
            port = obj
            qi = port.serving
            q = port.queues[qi]
            pkt = q.buf.pop(0)
            if port.policy == "WFQ":
                q.tags.pop(0)
            n = len(q.buf) + 1
            q.area += n * (t - q.t_last)
            q.t_last = t
            d = pkt[2]
            hop = pkt[3] + 1
            if hop < len(d.route):
                pkt[3] = hop
                nport, nqi = d.route[hop]
                seq = _deliver_to(nport, nqi, pkt, t, heap, seq, warmup_t,
                                  dropped)
            else:
                if warmup_t is not None and pkt[0] >= warmup_t:
                    k = d.idx
                    delivered[k] += 1
                    dl = t - pkt[0]
                    delay_sum[k] += dl
                    delay_sq[k] += dl * dl
            nxt = scheduler_select(port)
            if nxt >= 0:
                seq = _start_service(port, nxt, t, heap, seq)
            else:
                port.busy = False
                port.serving = -1

    # close occupancy integrals at the end of observation
    t_end = t if sim_seconds is None else sim_seconds
    if warmup_t is None:           # horizon shorter than warmup
        warmup_t = t_end
    horizon = t_end - warmup_t
    for q in all_queues:
        if horizon > 0:
            q.area += len(q.buf) * (t_end - q.t_last)
            q.t_last = t_end

    labels = PerfLabels()
    unreliable = []
    for k, f in enumerate(sample.flows):
        n = delivered[k]
        mean = delay_sum[k] / n if n else 0.0
        var = max(delay_sq[k] / n - mean * mean, 0.0) if n else 0.0
        loss = dropped[k] / emitted[k] if emitted[k] else 0.0
        labels.flows[f.id] = {"mean_delay": mean, "jitter": var,
                              "loss_ratio": loss}
        if n == 0:
            unreliable.append(f.id)
    for (lid, qidx), (q, _) in queue_refs.items():
        occ = q.area / horizon / q.cap if horizon > 0 else 0.0
        loss = q.drops / q.arrivals if q.arrivals else 0.0
        labels.queues[(lid, qidx)] = {"mean_occupancy": min(occ, 1.0),
                                      "loss_ratio": loss}
    labels.unreliable = unreliable
    labels.meta = {
        "seed": seed, "t_end": t_end, "warmup_t": warmup_t,
        "emitted": sum(emitted), "delivered": sum(delivered),
        "dropped": sum(dropped),
        "pasta": {ref: (q.seen_sum / q.seen_cnt if q.seen_cnt else 0.0)
                  for ref, (q, _) in queue_refs.items()},
    }
    return labels


def _deliver_to(port, qi, pkt, t, heap, seq, warmup_t, dropped):
    """Tail-drop enqueue at (port, class qi) + service kick if idle."""
    q = port.queues[qi]
    counted = warmup_t is not None and pkt[0] >= warmup_t
    if counted:
        q.arrivals += 1
        q.seen_sum += len(q.buf)
        q.seen_cnt += 1
    size = pkt[1]
    if len(q.buf) >= q.cap:
        if counted:
            q.drops += 1
            dropped[pkt[2].idx] += 1
        return seq
    n = len(q.buf)
    q.area += n * (t - q.t_last)
    q.t_last = t
    q.buf.append(pkt)
    if port.policy == "WFQ":
        tag = max(port.vtime, q.f_prev) + size / q.quantum_w
        q.f_prev = tag
        q.tags.append(tag)
    if size > port.max_size:
        port.max_size = size
    if not port.busy:
        seq = _start_service(port, scheduler_select(port), t, heap, seq)
    return seq


def enqueue(port, qi, pkt_size, t=0.0):
    """Standalone tail-drop check for one packet; 'accepted' | 'dropped'.

    Thin wrapper over the run-loop path for contract tests.
    """
    if pkt_size <= 0:
        raise ValueError("packet size must be > 0")
    q = port.queues[qi]
    if len(q.buf) >= q.cap:
        return "dropped"
    q.buf.append([t, pkt_size, None, 0])
    if port.policy == "WFQ":
        tag = max(port.vtime, q.f_prev) + pkt_size / q.quantum_w
        q.f_prev = tag
        q.tags.append(tag)
    if pkt_size > port.max_size:
        port.max_size = pkt_size
    return "accepted"
