"""Message-passing model over flows, queues, and links.

Three GRU cells exchange hidden state for T iterations: FRNN walks each
flow along its path reading the (previous-iteration) queue and link
states and leaves a message at every hop; U_q updates each queue on the
sum of its messages; LRNN folds each link's queues in priority order.
Readouts map final states to bounded metrics: per-queue occupancy
(sigmoid) and jitter contribution (softplus), per-flow loss (sigmoid).
Flow delay is assembled from occupancies as expected-backlog drain plus
transmission time, so capacity enters only through c_ref * s_f.

Forward, loss, and reverse-mode gradients are written directly against
numpy; all aggregations run in a fixed sorted order so results are
reproducible bit for bit and invariant to entity relabeling.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import traffic
from .model import POLICIES, validate, queues_of_link

X_LINK = 6      # [c_ref, s_f] normalized + one-hot policy
X_QUEUE = 5     # buffer normalized + one-hot priority + weight normalized
X_FLOW = traffic.ENCODING_LENGTH
MAX_PRIORITY_CLASSES = 3


def compute_normalizers(samples):
    """Min-max bounds for every numeric feature, from a training set."""
    c_ref, s_f, buf, wgt = [], [], [], []
    slots = {name: [] for name in traffic.NUMERIC_SLOTS}
    for s in samples:
        for link in s.topology.links:
            c_ref.append(link.c_ref)
            s_f.append(link.s_f)
        for p in s.ports:
            for q in p.queues:
                buf.append(q.buffer_size)
                wgt.append(q.weight)
        for f in s.flows:
            num = traffic.descriptor_numeric(f.descriptor)
            for name in traffic.NUMERIC_SLOTS:
                slots[name].append(num[name])
    rng = lambda v: (float(min(v)), float(max(v)))
    return {"c_ref": rng(c_ref), "s_f": rng(s_f), "buffer": rng(buf),
            "weight": rng(wgt),
            "traffic": {n: rng(v) for n, v in slots.items()}}


def _norm(v, bounds):
    lo, hi = bounds
    if hi <= lo:
        return 0.0
    return (v - lo) / (hi - lo)


class Encoded:
    """Index arrays and features for one sample or a batch union."""
    __slots__ = ("n_flows", "n_queues", "n_links", "x_f", "x_q", "x_l",
                 "flow_bits", "queue_buffer_pkts", "link_cap", "hop_flow",
                 "hop_queue", "hop_link", "hop_pos", "maxlen", "pos_index",
                 "slot_of", "slot_queue", "link_pos", "flow_ids",
                 "queue_refs", "flow_sample", "y_delay", "y_jitter",
                 "y_loss")


def encode(samples, norms):
    """Build the union graph for a list of samples (or one sample)."""
    if not isinstance(samples, (list, tuple)):
        samples = [samples]
    enc = Encoded()
    x_f, x_q, x_l = [], [], []
    flow_bits, qbuf, lcap = [], [], []
    hop_flow, hop_queue, hop_link, hop_pos = [], [], [], []
    link_queue_lists = []
    flow_ids, queue_refs, flow_sample = [], [], []
    y_delay, y_jitter, y_loss = [], [], []
    for si, s in enumerate(samples):
        problems = validate(s)
        if problems:
            raise ValueError(f"invalid sample: {problems[:3]}")
        link_of = {}
        for link in sorted(s.topology.links, key=lambda l: l.id):
            link_of[link.id] = len(x_l)
            pol = [0.0] * len(POLICIES)
            pol[POLICIES.index(s.port_of(link.id).policy)] = 1.0
            x_l.append([_norm(link.c_ref, norms["c_ref"]),
                        _norm(link.s_f, norms["s_f"])] + pol)
            lcap.append(link.cap)
        queue_of = {}
        for link in sorted(s.topology.links, key=lambda l: l.id):
            port = s.port_of(link.id)
            order = queues_of_link(s, link.id)
            if len(order) > MAX_PRIORITY_CLASSES:
                raise ValueError(
                    f"link {link.id}: {len(order)} priority classes exceed "
                    f"the encoding vocabulary ({MAX_PRIORITY_CLASSES})")
            qids = []
            for rank, ref in enumerate(order):
                spec = port.queues[ref[1]]
                onehot = [0.0] * MAX_PRIORITY_CLASSES
                onehot[rank] = 1.0
                queue_of[ref] = len(x_q)
                qids.append(len(x_q))
                x_q.append([_norm(spec.buffer_size, norms["buffer"])]
                           + onehot
                           + [_norm(spec.weight, norms["weight"])])
                qbuf.append(float(spec.buffer_size))
                queue_refs.append((si, ref))
            link_queue_lists.append(qids)
        for f in sorted(s.flows, key=lambda fl: fl.id):
            fi = len(x_f)
            x_f.append(traffic.encode_descriptor(f.descriptor,
                                                 norms["traffic"]))
            flow_bits.append(f.mean_pkt_bits)
            flow_ids.append(f.id)
            flow_sample.append(si)
            for k, ref in enumerate(f.path):
                hop_flow.append(fi)
                hop_queue.append(queue_of[ref])
                hop_link.append(link_of[ref[0]])
                hop_pos.append(k)
            if s.labels is not None and f.id in s.labels.flows:
                m = s.labels.flows[f.id]
                y_delay.append(m["mean_delay"])
                y_jitter.append(m["jitter"])
                y_loss.append(m["loss_ratio"])

    enc.n_flows, enc.n_queues, enc.n_links = len(x_f), len(x_q), len(x_l)
    enc.x_f = np.asarray(x_f, dtype=float)
    enc.x_q = np.asarray(x_q, dtype=float)
    enc.x_l = np.asarray(x_l, dtype=float)
    enc.flow_bits = np.asarray(flow_bits)
    enc.queue_buffer_pkts = np.asarray(qbuf)
    enc.link_cap = np.asarray(lcap)
    enc.hop_flow = np.asarray(hop_flow, dtype=int)
    enc.hop_queue = np.asarray(hop_queue, dtype=int)
    enc.hop_link = np.asarray(hop_link, dtype=int)
    enc.hop_pos = np.asarray(hop_pos, dtype=int)
    enc.maxlen = int(enc.hop_pos.max()) + 1
    # canonical message slots: grouped by queue, then flow, then position
    order = np.lexsort((enc.hop_pos, enc.hop_flow, enc.hop_queue))
    enc.slot_of = np.empty(len(order), dtype=int)
    enc.slot_of[order] = np.arange(len(order))
    enc.slot_queue = enc.hop_queue[order]
    enc.pos_index = []
    for k in range(enc.maxlen):
        m = enc.hop_pos == k
        enc.pos_index.append((enc.hop_flow[m], enc.hop_queue[m],
                              enc.hop_link[m], enc.slot_of[m]))
    npos = max(len(qs) for qs in link_queue_lists)
    enc.link_pos = []
    for p in range(npos):
        ls, qs = [], []
        for li, qids in enumerate(link_queue_lists):
            if len(qids) > p:
                ls.append(li)
                qs.append(qids[p])
        enc.link_pos.append((np.asarray(ls, dtype=int),
                             np.asarray(qs, dtype=int)))
    enc.flow_ids = flow_ids
    enc.queue_refs = queue_refs
    enc.flow_sample = flow_sample
    enc.y_delay = np.asarray(y_delay) if y_delay else None
    enc.y_jitter = np.asarray(y_jitter) if y_jitter else None
    enc.y_loss = np.asarray(y_loss) if y_loss else None
    return enc


# ---------------------------------------------------------------- cells

def _init_cell(d_in, d, rng):
    def mat(n_in, n_out):
        s = 1.0 / np.sqrt(n_in)
        return rng.uniform(-s, s, size=(n_in, n_out))
    return {"Wz": mat(d_in, d), "Uz": mat(d, d), "bz": np.zeros(d),
            "Wr": mat(d_in, d), "Ur": mat(d, d), "br": np.zeros(d),
            "Wh": mat(d_in, d), "Uh": mat(d, d), "bh": np.zeros(d)}


def _init_mlp(d, n_out, rng):
    s1, s2 = 1.0 / np.sqrt(d), 1.0 / np.sqrt(d)
    return {"W1": rng.uniform(-s1, s1, size=(d, d)), "b1": np.zeros(d),
            "W2": rng.uniform(-s2, s2, size=(d, n_out)),
            "b2": np.zeros(n_out)}


@dataclass
class Model:
    d: int
    T: int
    L_max: int
    norms: dict
    weights: dict

    def blocks(self):
        for cell, params in sorted(self.weights.items()):
            for name, arr in sorted(params.items()):
                yield f"{cell}.{name}", arr


def init_model(norms, d=32, T=8, L_max=32, seed=0):
    if d < max(X_LINK, X_QUEUE, X_FLOW):
        raise ValueError(f"d={d} smaller than the feature prefix")
    rng = np.random.default_rng(seed)
    weights = {
        "frnn": _init_cell(2 * d, d, rng),
        "uq": _init_cell(d, d, rng),
        "lrnn": _init_cell(d, d, rng),
        "rq": _init_mlp(d, 2, rng),
        "rf": _init_mlp(d, 1, rng),
    }
    return Model(d=d, T=T, L_max=L_max, norms=norms, weights=weights)


def zero_grads(model):
    return {cell: {k: np.zeros_like(v) for k, v in params.items()}
            for cell, params in model.weights.items()}


def gru_cell(cell, x, h):
    """Batched GRU step; rows of x and h are independent instances."""
    z = expit(x @ cell["Wz"] + h @ cell["Uz"] + cell["bz"])
    r = expit(x @ cell["Wr"] + h @ cell["Ur"] + cell["br"])
    htil = np.tanh(x @ cell["Wh"] + (r * h) @ cell["Uh"] + cell["bh"])
    return (1.0 - z) * h + z * htil


def _gru_backward(cell, x, h, dh_out, g):
    """Accumulate parameter grads into g; return (dx, dh)."""
    z = expit(x @ cell["Wz"] + h @ cell["Uz"] + cell["bz"])
    r = expit(x @ cell["Wr"] + h @ cell["Ur"] + cell["br"])
    rh = r * h
    htil = np.tanh(x @ cell["Wh"] + rh @ cell["Uh"] + cell["bh"])
    dz = dh_out * (htil - h)
    dhtil = dh_out * z
    dh = dh_out * (1.0 - z)
    dah = dhtil * (1.0 - htil * htil)
    drh = dah @ cell["Uh"].T
    dr = drh * h
    dh = dh + drh * r
    daz = dz * z * (1.0 - z)
    dar = dr * r * (1.0 - r)
    dx = daz @ cell["Wz"].T + dar @ cell["Wr"].T + dah @ cell["Wh"].T
    dh = dh + daz @ cell["Uz"].T + dar @ cell["Ur"].T
    g["Wz"] += x.T @ daz
    g["Uz"] += h.T @ daz
    g["bz"] += daz.sum(axis=0)
    g["Wr"] += x.T @ dar
    g["Ur"] += h.T @ dar
    g["br"] += dar.sum(axis=0)
    g["Wh"] += x.T @ dah
    g["Uh"] += rh.T @ dah
    g["bh"] += dah.sum(axis=0)
    return dx, dh


def _h0(x, n, d):
    h = np.zeros((n, d))
    h[:, :x.shape[1]] = x
    return h


def _segment_sum(values, slot_queue, n_queues, d):
    out = np.zeros((n_queues, d))
    if len(slot_queue):
        starts = np.flatnonzero(np.r_[True, slot_queue[1:]
                                      != slot_queue[:-1]])
        sums = np.add.reduceat(values, starts, axis=0)
        out[slot_queue[starts]] = sums
    return out


def forward(model, enc, want_cache=False):
    """T message-passing iterations + readouts.

    Returns a dict with per-queue occupancy and jitter_contrib, per-flow
    loss, and the final hidden states. With want_cache, every
    intermediate needed by the backward pass is kept.
    """
    if not isinstance(enc, Encoded):
        enc = encode(enc, model.norms)
    d = model.d
    W = model.weights
    h_f = _h0(enc.x_f, enc.n_flows, d)
    h_q = _h0(enc.x_q, enc.n_queues, d)
    h_l = _h0(enc.x_l, enc.n_links, d)
    n_hops = len(enc.hop_flow)
    cache = {"hf_in": [], "hq_in": [], "hl_in": [], "fp_hf": [], "M": [],
             "Mq": [], "hq_out": [], "lp_hl": []} if want_cache else None

    for _ in range(model.T):
        if want_cache:
            cache["hf_in"].append(h_f)
            cache["hq_in"].append(h_q)
            cache["hl_in"].append(h_l)
        # flow phase: walk paths, leave the post-update state as message
        M = np.zeros((n_hops, d))
        h_f = h_f.copy()
        fp = []
        for k in range(enc.maxlen):
            flows, queues, links, slots = enc.pos_index[k]
            x = np.hstack([h_q[queues], h_l[links]])
            h_in = h_f[flows]
            if want_cache:
                fp.append(h_in)
            h_new = gru_cell(W["frnn"], x, h_in)
            h_f[flows] = h_new
            M[slots] = h_new
        # queue phase: all queues update on their (possibly zero) sum
        Mq = _segment_sum(M, enc.slot_queue, enc.n_queues, d)
        hq_new = gru_cell(W["uq"], Mq, h_q)
        # link phase: fold the link's queues in priority order
        hl_new = h_l.copy()
        lp = []
        for links, queues in enc.link_pos:
            h_in = hl_new[links]
            if want_cache:
                lp.append(h_in)
            hl_new[links] = gru_cell(W["lrnn"], hq_new[queues], h_in)
        if want_cache:
            cache["fp_hf"].append(fp)
            cache["M"].append(M)
            cache["Mq"].append(Mq)
            cache["hq_out"].append(hq_new)
            cache["lp_hl"].append(lp)
        h_q = hq_new
        h_l = hl_new

    rq, rf = W["rq"], W["rf"]
    a1q = h_q @ rq["W1"] + rq["b1"]
    H1q = np.maximum(a1q, 0.0)
    out_q = H1q @ rq["W2"] + rq["b2"]
    occupancy = expit(out_q[:, 0])
    jitter_contrib = np.logaddexp(0.0, out_q[:, 1])
    a1f = h_f @ rf["W1"] + rf["b1"]
    H1f = np.maximum(a1f, 0.0)
    out_f = H1f @ rf["W2"] + rf["b2"]
    flow_loss = expit(out_f[:, 0])
    result = {"occupancy": occupancy, "jitter_contrib": jitter_contrib,
              "flow_loss": flow_loss, "h_f": h_f, "h_q": h_q, "h_l": h_l}
    if want_cache:
        cache.update({"a1q": a1q, "H1q": H1q, "out_q": out_q,
                      "a1f": a1f, "H1f": H1f})
        result["cache"] = cache
    return result


def assemble(enc, occupancy, jitter_contrib):
    """Per-flow (delay, jitter) from per-queue readouts."""
    bits = enc.flow_bits[enc.hop_flow]
    cap = enc.link_cap[enc.hop_link]
    wait = occupancy[enc.hop_queue] * enc.queue_buffer_pkts[enc.hop_queue] \
        * bits / cap
    trans = bits / cap
    delay = np.bincount(enc.hop_flow, weights=wait + trans,
                        minlength=enc.n_flows)
    jit = np.bincount(enc.hop_flow,
                      weights=jitter_contrib[enc.hop_queue]
                      * (bits / cap) ** 2,
                      minlength=enc.n_flows)
    return delay, jit


def loss_mse(pred, true):
    pred = np.asarray(pred, dtype=float)
    true = np.asarray(true, dtype=float)
    if pred.size == 0:
        raise ValueError("empty flow set")
    return float(np.mean((pred - true) ** 2))


def _targets(enc, target):
    y = {"delay": enc.y_delay, "jitter": enc.y_jitter,
         "loss": enc.y_loss}[target]
    if y is None:
        raise ValueError("encoded batch carries no labels")
    return y


def predict(model, enc):
    out = forward(model, enc)
    delay, jitter = assemble(enc, out["occupancy"], out["jitter_contrib"])
    return {"delay": delay, "jitter": jitter, "loss": out["flow_loss"],
            "occupancy": out["occupancy"]}


def grad(model, enc, target="delay"):
    """(mse, grads) with exact reverse-mode gradients.

    L_max truncates the gradient carried across flow-segment boundaries;
    the forward values are unaffected.
    """
    if not isinstance(enc, Encoded):
        enc = encode(enc, model.norms)
    y = _targets(enc, target)
    out = forward(model, enc, want_cache=True)
    cache = out["cache"]
    d = model.d
    W = model.weights
    g = zero_grads(model)
    F = enc.n_flows

    occupancy, jitter_contrib = out["occupancy"], out["jitter_contrib"]
    if target == "loss":
        pred = out["flow_loss"]
        mse = loss_mse(pred, y)
        dpred = 2.0 * (pred - y) / F
        dout_f = dpred * pred * (1.0 - pred)
        d_occ = np.zeros(enc.n_queues)
        d_jc = np.zeros(enc.n_queues)
    else:
        delay, jitter = assemble(enc, occupancy, jitter_contrib)
        bits = enc.flow_bits[enc.hop_flow]
        cap = enc.link_cap[enc.hop_link]
        if target == "delay":
            pred = delay
            mse = loss_mse(pred, y)
            dpred = 2.0 * (pred - y) / F
            w_hop = dpred[enc.hop_flow] \
                * enc.queue_buffer_pkts[enc.hop_queue] * bits / cap
            d_occ = np.bincount(enc.hop_queue, weights=w_hop,
                                minlength=enc.n_queues)
            d_jc = np.zeros(enc.n_queues)
        else:
            pred = jitter
            mse = loss_mse(pred, y)
            dpred = 2.0 * (pred - y) / F
            w_hop = dpred[enc.hop_flow] * (bits / cap) ** 2
            d_jc = np.bincount(enc.hop_queue, weights=w_hop,
                               minlength=enc.n_queues)
            d_occ = np.zeros(enc.n_queues)
        dout_f = np.zeros(F)

    # readout backward
    rq, rf = W["rq"], W["rf"]
    dout_q = np.empty((enc.n_queues, 2))
    dout_q[:, 0] = d_occ * occupancy * (1.0 - occupancy)
    dout_q[:, 1] = d_jc * expit(cache["out_q"][:, 1])
    g["rq"]["W2"] += cache["H1q"].T @ dout_q
    g["rq"]["b2"] += dout_q.sum(axis=0)
    dH1q = dout_q @ rq["W2"].T
    da1q = dH1q * (cache["a1q"] > 0)
    g["rq"]["W1"] += out["h_q"].T @ da1q
    g["rq"]["b1"] += da1q.sum(axis=0)
    dh_q = da1q @ rq["W1"].T

    dout_f2 = dout_f[:, None]
    g["rf"]["W2"] += cache["H1f"].T @ dout_f2
    g["rf"]["b2"] += dout_f2.sum(axis=0)
    dH1f = dout_f2 @ rf["W2"].T
    da1f = dH1f * (cache["a1f"] > 0)
    g["rf"]["W1"] += out["h_f"].T @ da1f
    g["rf"]["b1"] += da1f.sum(axis=0)
    dh_f = da1f @ rf["W1"].T

    dh_l = np.zeros((enc.n_links, d))
    for t in reversed(range(model.T)):
        hq_in = cache["hq_in"][t]
        hl_in = cache["hl_in"][t]
        hq_out = cache["hq_out"][t]
        # link phase backward (reverse the fold)
        for p in reversed(range(len(enc.link_pos))):
            links, queues = enc.link_pos[p]
            dx, dh = _gru_backward(W["lrnn"], hq_out[queues],
                                   cache["lp_hl"][t][p], dh_l[links],
                                   g["lrnn"])
            dh_q[queues] += dx
            dh_l[links] = dh
        # queue phase backward
        dMq, dhq_prev = _gru_backward(W["uq"], cache["Mq"][t], hq_in,
                                      dh_q, g["uq"])
        dM = dMq[enc.slot_queue]       # sum gradient, broadcast per slot
        # flow phase backward (reverse hop order, truncate at segments)
        for k in reversed(range(enc.maxlen)):
            flows, queues, links, slots = enc.pos_index[k]
            dh_out = dh_f[flows] + dM[slots]
            x = np.hstack([hq_in[queues], hl_in[links]])
            dx, dh = _gru_backward(W["frnn"], x, cache["fp_hf"][t][k],
                                   dh_out, g["frnn"])
            # several flows can read one queue or link at the same
            # position, so the scatter must accumulate duplicates
            np.add.at(dhq_prev, queues, dx[:, :d])
            np.add.at(dh_l, links, dx[:, d:])
            if k > 0 and k % model.L_max == 0:
                dh = np.zeros_like(dh)
            dh_f[flows] = dh
        dh_q = dhq_prev

    for cell, params in g.items():
        for name, arr in params.items():
            if not np.all(np.isfinite(arr)):
                raise RuntimeError(f"non-finite gradient in {cell}.{name}")
    return mse, g
