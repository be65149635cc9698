"""Network-level analytical predictor.

Composes per-port queueing metrics into per-flow predictions by a
fixed-point iteration on offered rates: losses at a queue reduce the
traffic offered downstream, which changes the losses there, and so on.
Starting from the zero-loss rates, map_queues and map_paths alternate
until the largest rate change falls below tolerance.

Flow reduction sums per-hop means and variances (covariances between
hops are ignored) and composes loss as 1 - prod(1 - p_b).
"""

from dataclasses import dataclass, field

import numpy as np

from .model import PerfLabels, validate, queues_of_link

DEFAULT_MEAN_BITS = 1000.0


@dataclass
class FixedPointState:
    offered: list                  # per flow: list of per-hop offered rates
    port_metrics: dict = field(default_factory=dict)   # link_id -> QueueMetrics
    port_mu: dict = field(default_factory=dict)        # link_id -> mu array
    iterations: int = 0
    residual: float = float("inf")
    cache: dict = field(default_factory=dict)
    index: object = None


class _Index:
    """Static routing structure: who feeds which queue, class ranks."""

    def __init__(self, sample):
        self.sample = sample
        self.ports = {}            # link_id -> (policy, cap, b[], w[], members)
        qpos = {}                  # (link_id, queue_index) -> class rank
        for p in sample.ports:
            link = sample.topology.link_by_id(p.link_id)
            order = queues_of_link(sample, p.link_id)
            b = [p.queues[qi].buffer_size for _, qi in order]
            w = [p.queues[qi].weight for _, qi in order]
            members = [[] for _ in order]
            self.ports[p.link_id] = {
                "policy": p.policy, "cap": link.cap, "b": b, "w": w,
                "members": members, "order": order,
            }
            for cls, ref in enumerate(order):
                qpos[ref] = cls
        self.flow_class = []       # per flow: class rank at each hop
        for fi, f in enumerate(sample.flows):
            ranks = []
            for h, ref in enumerate(f.path):
                cls = qpos[ref]
                ranks.append(cls)
                self.ports[ref[0]]["members"][cls].append((fi, h))
            self.flow_class.append(ranks)


def initial_state(sample):
    """Zero-loss start: every hop sees the full source rate."""
    problems = validate(sample)
    if problems:
        raise ValueError(f"invalid sample: {problems[:3]}")
    offered = [[f.descriptor.rate] * len(f.path) for f in sample.flows]
    st = FixedPointState(offered=offered)
    st.index = _Index(sample)
    return st


def map_queues(state, sample, want_jitter=False):
    """Recompute every port's per-class metrics from current rates."""
    from . import qt
    idx = state.index
    for lid, port in idx.ports.items():
        p = len(port["order"])
        lam = [0.0] * p
        bits = [0.0] * p
        for cls in range(p):
            for fi, h in port["members"][cls]:
                r = state.offered[fi][h]
                lam[cls] += r
                bits[cls] += r * sample.flows[fi].mean_pkt_bits
        mean_bits = [bits[i] / lam[i] if lam[i] > 0 else DEFAULT_MEAN_BITS
                     for i in range(p)]
        mu = [port["cap"] / mb for mb in mean_bits]
        key = (port["policy"], tuple(lam), tuple(mu), tuple(port["b"]),
               tuple(port["w"]), want_jitter)
        m = state.cache.get(key)
        if m is None:
            m = qt.port_metrics(port["policy"], lam, mu, port["b"],
                                w=port["w"], want_jitter=want_jitter)
            state.cache[key] = m
        state.port_metrics[lid] = m
        state.port_mu[lid] = mu
    return state


def map_paths(state, sample, damping=0.0):
    """Propagate losses along paths; residual = max rate change (pkts/s)."""
    idx = state.index
    residual = 0.0
    for fi, f in enumerate(sample.flows):
        rate = f.descriptor.rate
        row = state.offered[fi]
        for h, (lid, _) in enumerate(f.path):
            new = rate if damping == 0.0 else \
                (1.0 - damping) * rate + damping * row[h]
            delta = abs(new - row[h])
            if delta > residual:
                residual = delta
            row[h] = new
            cls = idx.flow_class[fi][h]
            p_b = state.port_metrics[lid].p_b[cls]
            rate = new * (1.0 - p_b)
    state.residual = residual
    state.iterations += 1
    return state


def reduce(state, sample):
    """Converged state -> PerfLabels (per-flow sums, per-queue stats)."""
    idx = state.index
    labels = PerfLabels()
    for fi, f in enumerate(sample.flows):
        delay = jitter = 0.0
        survive = 1.0
        for h, (lid, _) in enumerate(f.path):
            cls = idx.flow_class[fi][h]
            m = state.port_metrics[lid]
            mu = state.port_mu[lid][cls]
            w = m.W[cls]
            v = m.Var[cls] if m.Var is not None else np.nan
            if not np.isfinite(w):
                w = 1.0 / mu           # transmission-only limit
            if not np.isfinite(v):
                v = 1.0 / mu ** 2
            delay += w
            jitter += v
            survive *= 1.0 - m.p_b[cls]
        labels.flows[f.id] = {"mean_delay": float(delay),
                              "jitter": float(jitter),
                              "loss_ratio": float(1.0 - survive)}
        if f.descriptor.rate == 0:
            labels.unreliable.append(f.id)
    for lid, port in idx.ports.items():
        m = state.port_metrics[lid]
        for cls, ref in enumerate(port["order"]):
            occ = m.L[cls] / port["b"][cls]
            labels.queues[ref] = {"mean_occupancy": float(occ),
                                  "loss_ratio": float(m.p_b[cls])}
    labels.meta = {"iterations": state.iterations,
                   "residual": float(state.residual)}
    return labels


def solve(sample, tol=1e-6, max_iter=50, damping=0.0, want_jitter=True):
    """Fixed-point prediction for a whole sample.

    Returns PerfLabels with meta {iterations, residual, converged}. On
    non-convergence the best iterate is reduced and flagged rather than
    raised.
    """
    state = initial_state(sample)
    converged = False
    for _ in range(max_iter):
        map_queues(state, sample, want_jitter=False)
        map_paths(state, sample, damping=damping)
        if state.residual < tol:
            converged = True
            break
    # metrics consistent with the final rates; jitter only computed here
    map_queues(state, sample, want_jitter=want_jitter)
    labels = reduce(state, sample)
    labels.meta = {"iterations": state.iterations,
                   "residual": float(state.residual),
                   "converged": converged}
    return labels
