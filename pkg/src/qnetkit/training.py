"""Training loop, Adam optimizer, checkpoint format, timed inference.

Minibatches are disjoint unions of sample graphs, so one forward pass
covers the whole batch and the MSE is the flow-weighted batch mean.
Runs are reproducible: the parameter init and the shuffle order both
derive from the seed, and every aggregation is ordered.
"""

import json
import time

import numpy as np

from . import gnn
from .model import PerfLabels

CHECKPOINT_VERSION = "qnetkit-gnn-1"


def _adam_init(model):
    return {"m": gnn.zero_grads(model), "v": gnn.zero_grads(model),
            "t": 0}


def _adam_step(model, grads, state, lr, betas, eps=1e-8):
    b1, b2 = betas
    state["t"] += 1
    t = state["t"]
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for cell, params in model.weights.items():
        for name in params:
            g = grads[cell][name]
            m = state["m"][cell][name]
            v = state["v"][cell][name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[name] -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)


def _copy_weights(weights):
    return {cell: {k: v.copy() for k, v in params.items()}
            for cell, params in weights.items()}


def train(train_samples, val_samples=None, target="delay", lr=1e-3,
          betas=(0.9, 0.999), epochs=100, batch_size=16, seed=0,
          d=32, T=8, L_max=32, model=None, log=None):
    """Fit the model; returns (model, history).

    The returned model carries the weights of the epoch with the best
    validation MSE (best training MSE when no validation set is given).
    history = {"train": [...], "val": [...]} with one entry per epoch.
    A non-finite epoch loss aborts with the epoch number.
    """
    if not train_samples:
        raise ValueError("empty training set")
    if model is None:
        norms = gnn.compute_normalizers(train_samples)
        model = gnn.init_model(norms, d=d, T=T, L_max=L_max, seed=seed)
    val_enc = gnn.encode(list(val_samples), model.norms) \
        if val_samples else None
    # Targets are seconds (or ratios), so the raw MSE can sit many
    # orders of magnitude below Adam's eps and stall the step size.
    # Scale the gradients by the squared mean target; the history and
    # the best-model selection stay in raw units.
    all_y = gnn._targets(gnn.encode(list(train_samples), model.norms),
                         target)
    g_scale = 1.0 / max(float(np.mean(np.abs(all_y))), 1e-12) ** 2
    rng = np.random.default_rng(seed)
    adam = _adam_init(model)
    history = {"train": [], "val": []}
    best = (np.inf, _copy_weights(model.weights))
    n = len(train_samples)
    for epoch in range(epochs):
        order = rng.permutation(n)
        sse, flows = 0.0, 0
        for lo in range(0, n, batch_size):
            batch = [train_samples[i] for i in order[lo:lo + batch_size]]
            enc = gnn.encode(batch, model.norms)
            try:
                mse, grads = gnn.grad(model, enc, target=target)
            except RuntimeError as exc:
                raise RuntimeError(
                    f"training diverged at epoch {epoch}: {exc}") from exc
            for params in grads.values():
                for arr in params.values():
                    arr *= g_scale
            _adam_step(model, grads, adam, lr, betas)
            sse += mse * enc.n_flows
            flows += enc.n_flows
        train_mse = sse / flows
        if not np.isfinite(train_mse):
            raise RuntimeError(f"training diverged at epoch {epoch}")
        history["train"].append(train_mse)
        if val_enc is not None:
            pred = gnn.predict(model, val_enc)[target]
            val_mse = gnn.loss_mse(pred, gnn._targets(val_enc, target))
            history["val"].append(val_mse)
            score = val_mse
        else:
            score = train_mse
        if score < best[0]:
            best = (score, _copy_weights(model.weights))
        if log:
            log(epoch, history)
    model.weights = best[1]
    return model, history


def save_model(model, path):
    """Single-file checkpoint: weights + JSON header (version, shapes,
    normalizers, hyperparameters)."""
    flat = {key: arr for key, arr in model.blocks()}
    meta = {"version": CHECKPOINT_VERSION,
            "d": model.d, "T": model.T, "L_max": model.L_max,
            "norms": model.norms,
            "shapes": {k: list(a.shape) for k, a in flat.items()}}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **flat)


def load_model(path):
    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["meta"][()]))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: "
                         f"{meta.get('version')!r}")
    norms = meta["norms"]
    norms["traffic"] = {k: tuple(v) for k, v in norms["traffic"].items()}
    for k in ("c_ref", "s_f", "buffer", "weight"):
        norms[k] = tuple(norms[k])
    weights = {}
    for key, shape in meta["shapes"].items():
        cell, name = key.split(".")
        arr = data[key]
        if list(arr.shape) != shape:
            raise ValueError(f"checkpoint shape mismatch for {key}")
        weights.setdefault(cell, {})[name] = arr
    return gnn.Model(d=meta["d"], T=meta["T"], L_max=meta["L_max"],
                     norms=norms, weights=weights)


def infer(model, sample):
    """Predict per-flow delay, jitter, and loss; returns PerfLabels with
    the wall-clock seconds of the whole pass in meta."""
    t0 = time.perf_counter()
    enc = gnn.encode(sample, model.norms)
    pred = gnn.predict(model, enc)
    wall = time.perf_counter() - t0
    flows = {}
    for i, fid in enumerate(enc.flow_ids):
        flows[fid] = {"mean_delay": float(pred["delay"][i]),
                      "jitter": float(pred["jitter"][i]),
                      "loss_ratio": float(pred["loss"][i])}
    return PerfLabels(flows=flows, queues={},
                      meta={"wall_seconds": wall})
