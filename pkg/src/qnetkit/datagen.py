"""Random sample synthesis: topologies, capacities, traffic, labels.

Topologies come from a power-law out-degree construction: node at rank r
receives max(1, round(alpha * (n/r)^beta)) out-edge credits, so the
log-log degree-vs-rank slope is -beta and alpha sets density. The
directed graph is made weakly connected with minimal bridge edges; flows
route over directed shortest paths, so endpoint pairs are drawn from the
reachable set.

Link capacity is drawn from a discrete set and factored into
c_ref * s_f exactly; the factor pair is what models see, the product is
what the simulator uses. Flow rates are scaled by a single multiplier so
the busiest link lands at a target utilization.
"""

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import sim
from .model import (Flow, Link, OutputPort, QueueSpec, NetworkSample,
                    Topology, TrafficDescriptor, validate, sample_to_dict,
                    sample_from_dict, labels_to_dict, labels_from_dict)


@dataclass
class GenConfig:
    nodes: tuple = (8, 24)
    alpha: float = 1.0
    beta: float = 0.7
    capacity_set: tuple = (1e8, 2.5e8, 5e8, 1e9)     # bits/s
    s_f_factors: tuple = (1.0, 2.0, 2.5, 4.0, 5.0, 10.0)
    s_f_range: tuple = (1.0, 10.0)
    c_ref_range: tuple = (1e7, 1e9)
    policy_mix: dict = field(default_factory=lambda: {
        "FIFO": 0.4, "SP": 0.2, "WFQ": 0.2, "DRR": 0.2})
    fifo_buffers: tuple = (16, 32)
    class_buffer: int = 16         # non-FIFO ports; keeps chains tractable
    n_queues: int = 3
    weight_choices: tuple = (1.0, 2.0, 3.0, 4.0, 5.0)
    traffic_mix: dict = field(default_factory=lambda: {
        "Poisson": 0.4, "CBR": 0.15, "OnOff": 0.15,
        "AutocorrExp": 0.15, "ModulatedExp": 0.15})
    onoff_on: tuple = (0.2, 1.0)       # seconds
    onoff_off: tuple = (0.05, 0.2)
    ar_a: tuple = (0.2, 0.85)
    ar_s2: tuple = (0.5, 1.5)
    mod_a: tuple = (0.2, 0.85)
    mod_s2: tuple = (0.25, 1.0)
    flows_per_node: float = 1.0
    rate_rel: tuple = (0.2, 1.0)
    target_util: tuple = (0.35, 0.85)
    mean_pkt_bits: float = 1000.0
    sim_packets: int = 150_000
    warmup_fraction: float = 0.1
    val_fraction: float = 0.0
    seed: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for k, v in d.items():
            kw[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)


def generate_topology(n, alpha, beta, seed):
    """Directed power-law graph on n nodes, weakly connected."""
    if n < 3:
        raise ValueError("need at least 3 nodes")
    rng = np.random.default_rng(seed)
    ranks = rng.permutation(n) + 1
    credits = np.maximum(1, np.rint(alpha * (n / ranks) ** beta))
    credits = np.minimum(credits, n - 1).astype(int)
    if credits.sum() == 0:
        raise ValueError(f"alpha={alpha}, beta={beta} give an empty graph")
    edges = set()
    for i in range(n):
        want = credits[i]
        attempts = 0
        while want > 0 and attempts < 20 * n:
            j = int(rng.integers(0, n))
            attempts += 1
            if j != i and (i, j) not in edges:
                edges.add((i, j))
                want -= 1
    # union-find over the undirected view; bridge the components
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in edges:
        parent[find(i)] = find(j)
    comps = {}
    for v in range(n):
        comps.setdefault(find(v), []).append(v)
    groups = sorted(comps.values(), key=lambda g: g[0])
    for a, b in zip(groups, groups[1:]):
        u = a[int(rng.integers(0, len(a)))]
        v = b[int(rng.integers(0, len(b)))]
        if (u, v) not in edges and (v, u) not in edges:
            edges.add((u, v))
        parent[find(u)] = find(v)
    links = [Link(id=k, src=s, dst=d, c_ref=1.0)
             for k, (s, d) in enumerate(sorted(edges))]
    return Topology(nodes=list(range(n)), links=links)


def augment_capacity(cap, config, seed):
    """Split cap into (c_ref, s_f) with c_ref * s_f == cap exactly."""
    rng = np.random.default_rng(seed)
    lo_s, hi_s = config.s_f_range
    lo_c, hi_c = config.c_ref_range
    feasible = []
    for s_f in config.s_f_factors:
        c_ref = cap / s_f
        if lo_s <= s_f <= hi_s and lo_c <= c_ref <= hi_c \
                and c_ref * s_f == cap:
            feasible.append((c_ref, s_f))
    if not feasible:
        raise ValueError(f"no (c_ref, s_f) factorization of {cap} in range")
    return feasible[int(rng.integers(0, len(feasible)))]


def _shortest_paths_from(adj, src):
    """BFS tree: parent link per node; neighbors scanned in id order."""
    parent = {src: None}
    frontier = [src]
    while frontier:
        nxt = []
        for u in frontier:
            for v, lid in adj.get(u, ()):
                if v not in parent:
                    parent[v] = (u, lid)
                    nxt.append(v)
        frontier = nxt
    return parent


def _draw_descriptor(cfg, rng):
    models = sorted(cfg.traffic_mix)
    probs = np.array([cfg.traffic_mix[m] for m in models], dtype=float)
    probs /= probs.sum()
    m = models[int(rng.choice(len(models), p=probs))]
    if m == "OnOff":
        on = tuple(sorted(rng.uniform(*cfg.onoff_on, size=2)))
        off = tuple(sorted(rng.uniform(*cfg.onoff_off, size=2)))
        return {"model": m, "on_off": on + off}
    if m == "AutocorrExp":
        return {"model": m, "ar": (float(rng.uniform(*cfg.ar_a)),
                                   float(rng.uniform(*cfg.ar_s2)))}
    if m == "ModulatedExp":
        a = float(rng.uniform(*cfg.mod_a))
        s2 = float(rng.uniform(*cfg.mod_s2))
        return {"model": m, "mod": (1.0, a, s2)}
    return {"model": m}


def peak_factor(desc):
    """Short-horizon burst multiplier over the long-run rate.

    Calibrating utilization on rate * peak_factor keeps the worst link's
    burst-local intensity near the target instead of letting bursty flows
    blow far past it.
    """
    if desc.model == "OnOff":
        on_min, on_max, off_min, off_max = desc.on_off
        mean_on = (on_min + on_max) / 2.0
        mean_off = (off_min + off_max) / 2.0
        return (mean_on + mean_off) / mean_on
    if desc.model == "AutocorrExp":
        _, s2 = desc.ar
        return float(np.exp(0.4 * s2))
    if desc.model == "ModulatedExp":
        _, a, sigma2 = desc.mod
        s2 = sigma2 / (1.0 - a * a)
        return float(np.exp(0.4 * min(s2, 4.0)))
    return 1.0


def generate_sample(config, seed, n_nodes=None):
    """One unlabeled NetworkSample; deterministic per (config, seed)."""
    ss = np.random.SeedSequence(seed) \
        if not isinstance(seed, np.random.SeedSequence) else seed
    topo_ss, draw_ss = ss.spawn(2)
    rng = np.random.default_rng(draw_ss)
    for attempt in range(5):
        n = n_nodes if n_nodes is not None else \
            int(rng.integers(config.nodes[0], config.nodes[1] + 1))
        topo = generate_topology(n, config.alpha, config.beta,
                                 topo_ss.spawn(1)[0])
        adj = {}
        for link in topo.links:
            adj.setdefault(link.src, []).append((link.dst, link.id))
        for u in adj:
            adj[u].sort()
        trees = {u: _shortest_paths_from(adj, u) for u in topo.nodes}
        pairs = [(u, v) for u in topo.nodes for v in trees[u]
                 if v != u]
        if pairs:
            break
    else:
        raise ValueError("no routable src-dst pair after retries")

    policies = sorted(config.policy_mix)
    pol_p = np.array([config.policy_mix[p] for p in policies], dtype=float)
    pol_p /= pol_p.sum()
    ports = []
    for link in topo.links:
        cap = float(config.capacity_set[
            int(rng.integers(0, len(config.capacity_set)))])
        c_ref, s_f = augment_capacity(cap, config, rng.integers(2 ** 32))
        link.c_ref = c_ref
        link.s_f = s_f
        policy = policies[int(rng.choice(len(policies), p=pol_p))]
        if policy == "FIFO":
            queues = [QueueSpec(buffer_size=int(config.fifo_buffers[
                int(rng.integers(0, len(config.fifo_buffers)))]))]
        else:
            queues = [QueueSpec(buffer_size=config.class_buffer, priority=i,
                                weight=float(config.weight_choices[
                                    int(rng.integers(
                                        0, len(config.weight_choices)))]))
                      for i in range(config.n_queues)]
        ports.append(OutputPort(link_id=link.id, policy=policy,
                                queues=queues))
    nq_of = {p.link_id: len(p.queues) for p in ports}

    n_flows = max(1, int(round(config.flows_per_node * n)))
    flows = []
    raw_rates = rng.uniform(*config.rate_rel, size=n_flows)
    for k in range(n_flows):
        src, dst = pairs[int(rng.integers(0, len(pairs)))]
        hops = []
        node = dst
        while node != src:
            u, lid = trees[src][node]
            hops.append(lid)
            node = u
        hops.reverse()
        qos = int(rng.integers(0, 3))
        path = [(lid, min(qos, nq_of[lid] - 1)) for lid in hops]
        desc = _draw_descriptor(config, rng)
        flows.append(Flow(id=k, src=src, dst=dst, path=path,
                          descriptor=TrafficDescriptor(rate=1.0, **desc),
                          mean_pkt_bits=config.mean_pkt_bits))

    # single multiplier puts the busiest link at the drawn utilization,
    # measured on burst-adjusted rates so bursty flows do not blow past it
    load = {}
    for k, f in enumerate(flows):
        eff = raw_rates[k] * f.mean_pkt_bits * peak_factor(f.descriptor)
        for lid, _ in f.path:
            load[lid] = load.get(lid, 0.0) + eff
    peak = max(load[lid] / topo.link_by_id(lid).cap for lid in load)
    target = rng.uniform(*config.target_util)
    scale = target / peak
    for k, f in enumerate(flows):
        f.descriptor.rate = float(raw_rates[k] * scale)

    sample = NetworkSample(topology=topo, ports=ports, flows=flows)
    problems = validate(sample)
    if problems:
        raise AssertionError(f"generator produced invalid sample: "
                             f"{problems[:3]}")
    return sample, {"max_util": float(target), "n_nodes": n}


def topology_hash(topo):
    blob = json.dumps([(l.src, l.dst) for l in topo.links]).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def max_link_utilization(sample):
    """Analytic offered-load estimate used for report load buckets."""
    load = {}
    for f in sample.flows:
        for lid, _ in f.path:
            load[lid] = load.get(lid, 0.0) \
                + f.descriptor.rate * f.mean_pkt_bits
    if not load:
        return 0.0
    return max(load[lid] / sample.topology.link_by_id(lid).cap
               for lid in load)


def build_dataset(config, count, out_path, manifest_path=None,
                  n_nodes=None, progress=None):
    """Generate, label with the simulator, write ndjson + manifest.

    Per-sample failures are recorded in the manifest and skipped. The
    manifest plus the module code fully determine the output bytes.
    """
    rows = []
    failures = []
    records = []
    for i in range(count):
        seed = np.random.SeedSequence((config.seed, i))
        label_seed = int(np.random.default_rng(
            (config.seed, i, 1)).integers(2 ** 62))
        try:
            sample, meta = generate_sample(config, seed, n_nodes=n_nodes)
            labels = sim.run(sample, seed=label_seed,
                             packets=config.sim_packets,
                             warmup_fraction=config.warmup_fraction)
        except (ValueError, RuntimeError) as e:
            failures.append({"id": i, "error": str(e)})
            continue
        thash = topology_hash(sample.topology)
        split = "train"
        if config.val_fraction > 0:
            frac = int(thash[:8], 16) / 0xFFFFFFFF
            split = "val" if frac < config.val_fraction else "train"
        row = {"id": i, "split": split,
               "sample": sample_to_dict(sample),
               "labels": labels_to_dict(labels),
               "meta": {**meta, "topo_hash": thash,
                        "sim_packets": config.sim_packets}}
        rows.append(json.dumps(row, sort_keys=True,
                               separators=(",", ":")))
        records.append({"id": i, "topo_hash": thash, "split": split,
                        **meta})
        if progress:
            progress(i, count)
    with open(out_path, "w") as fh:
        fh.write("\n".join(rows) + ("\n" if rows else ""))
    manifest = {"config": config.to_dict(), "count": count,
                "horizon_packets": config.sim_packets,
                "failures": failures, "samples": records}
    if manifest_path:
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
    return manifest


def iter_dataset(path):
    """Yield (NetworkSample with labels attached, row meta) per line."""
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            sample = sample_from_dict(row["sample"])
            sample.labels = labels_from_dict(row["labels"])
            meta = dict(row.get("meta", {}))
            meta["id"] = row.get("id")
            meta["split"] = row.get("split", "train")
            yield sample, meta


def load_dataset(path, split=None):
    out = []
    for sample, meta in iter_dataset(path):
        if split is None or meta["split"] == split:
            out.append((sample, meta))
    return out
