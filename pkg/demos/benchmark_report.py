"""Engine benchmarking and the report format.

Labels a handful of simulated samples, scores the fixed-point engine
against them, and walks the report structure: mean errors, utilization
buckets, per-size delay spread, wall-clock table, CSV rows. The same
flow is available from the command line:

    qnetkit datagen --seed 321 --count 8 --out samples/ ...
    qnetkit benchmark --samples samples/ --engines qt --out report.json
    qnetkit report report.json
"""
import numpy as np

from qnetkit import datagen, report, sim

config = datagen.GenConfig(seed=321, nodes=(10, 20), n_queues=2,
                           capacity_set=(1e8,), target_util=(0.5, 1.0),
                           sim_packets=60_000)
records = []
for i in range(8):
    try:
        sample, meta = datagen.generate_sample(
            config, np.random.SeedSequence((config.seed, i)))
    except (ValueError, RuntimeError):
        continue
    sample.labels = sim.run(sample, seed=1000 + i,
                            packets=config.sim_packets)
    records.append((i, sample, meta))

rep = report.benchmark(records, ["qt"],
                       header={"purpose": "demo run"})

print("mean |relative error| per metric:")
for key, val in report.mean_errors(rep).items():
    print(f"  {key:<12} {val:.4f}")

edges = rep["load_buckets"]["edges"]
print(f"\ndelay error by max-utilization tercile "
      f"(edges {edges[0]:.2f} / {edges[1]:.2f}):")
for bucket in ("low", "med", "high"):
    print(f"  {bucket:<5} "
          f"{rep['load_buckets']['cells'][f'qt/delay/{bucket}']:.4f}")

print("\nwall clock:", {k: f"{v['mean_ms']:.1f}ms avg"
                        for k, v in rep["timing"].items()})

csv_text = report.rows_to_csv(rep)
print(f"\nCSV rows ({len(rep['rows'])} total):")
print("\n".join(csv_text.splitlines()[:4]))

text, code = report.report_summary(rep)
print(f"\nreport_summary exit code {code}; full text:\n{text}")
