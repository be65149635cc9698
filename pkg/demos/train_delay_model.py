"""Training the message-passing delay model on a small dataset.

Labels here come from the fixed-point analysis (cheap and deterministic)
so the whole demo runs in a couple of minutes; real experiments label
with the simulator instead. Shows the training loop, checkpointing, and
per-flow inference. Accuracy expectations: a corpus of ~50 graphs gets
the busiest flows within a few tens of percent; the benchmark runs in
the test suite train on hundreds of simulator-labeled samples and reach
single-digit mean error.
"""
import os
import tempfile

import numpy as np

from qnetkit import datagen, qtnet, training

config = datagen.GenConfig(seed=555, nodes=(8, 12), n_queues=2,
                           capacity_set=(1e8,), target_util=(0.9, 1.15))
samples = []
for i in range(60):
    try:
        sample, _ = datagen.generate_sample(
            config, np.random.SeedSequence((config.seed, i)))
    except (ValueError, RuntimeError):
        continue
    sample.labels = qtnet.solve(sample, want_jitter=False)
    samples.append(sample)
val, train_set = samples[:8], samples[8:]
print(f"{len(train_set)} training / {len(val)} validation samples")

model, hist = training.train(train_set, val_samples=val, target="delay",
                             epochs=200, d=24, T=6, seed=3)
print(f"train MSE {hist['train'][0]:.3e} -> {hist['train'][-1]:.3e}  "
      f"({hist['train'][0] / hist['train'][-1]:.0f}x)")
print(f"best val MSE {min(hist['val']):.3e}")

# round-trip through a checkpoint, then score the validation samples
path = os.path.join(tempfile.mkdtemp(), "delay_model.npz")
training.save_model(model, path)
model = training.load_model(path)

print("\nper-sample error on the three busiest flows (validation):")
medians = []
for j, s in enumerate(val):
    pred = training.infer(model, s)
    ranked = sorted(s.flows,
                    key=lambda f: -s.labels.flows[f.id]["mean_delay"])
    errs = [abs(pred.flows[f.id]["mean_delay"]
                - s.labels.flows[f.id]["mean_delay"])
            / s.labels.flows[f.id]["mean_delay"] for f in ranked[:3]]
    medians.append(np.median(errs))
    top_ms = s.labels.flows[ranked[0].id]["mean_delay"] * 1e3
    print(f"  val {j}: busiest flow {top_ms:6.3f}ms, errors "
          + " ".join(f"{e:5.1%}" for e in errs))
print(f"median across samples: {np.median(medians):.1%}")
