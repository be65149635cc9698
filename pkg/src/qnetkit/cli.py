"""Command-line surface: one subcommand per pipeline stage.

All inputs and outputs are JSON (single objects), NDJSON (datasets), or
CSV (benchmark rows); seeds are explicit so every artifact is
reproducible from the command line that produced it.
"""

import argparse
import json
import logging
import math
import sys

import numpy as np

from . import datagen, qt, qtnet, report as report_mod, sim, training
from .model import labels_to_dict, sample_from_json

log = logging.getLogger("qnetkit")


def _read_sample(path):
    with open(path) as fh:
        return sample_from_json(fh.read())


def _write_json(obj, path):
    if path == "-":
        json.dump(obj, sys.stdout, indent=1, sort_keys=True)
        sys.stdout.write("\n")
    else:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=1, sort_keys=True)
            fh.write("\n")


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def cmd_simulate(args):
    sample = _read_sample(args.sample)
    labels = sim.run(sample, seed=args.seed, packets=args.packets,
                     sim_seconds=args.seconds,
                     warmup_fraction=args.warmup_fraction)
    _write_json(labels_to_dict(labels), args.out)
    return 0


def cmd_qt_eval(args):
    sample = _read_sample(args.sample)
    labels = qtnet.solve(sample, tol=args.tol, max_iter=args.max_iter,
                         want_jitter=not args.no_jitter)
    if not labels.meta.get("converged", True):
        log.warning("fixed point not converged: residual %.3g",
                    labels.meta.get("residual"))
    _write_json(labels_to_dict(labels), args.out)
    return 0


def cmd_qt_port(args):
    lam = _floats(args.rates)
    w = _floats(args.weights) if args.weights else None
    mu = _floats(args.mu)
    if len(mu) == 1:
        mu = mu * len(lam)
    m = qt.port_metrics(args.policy, lam, mu,
                        [int(b) for b in _floats(args.buffers)],
                        w=w, want_jitter=not args.no_jitter)
    p_b, W = np.atleast_1d(m.p_b), np.atleast_1d(m.W)
    Var, L = np.atleast_1d(m.Var), np.atleast_1d(m.L)
    clean = lambda v: None if math.isnan(v) else float(v)
    out = [{"class": i, "p_b": clean(p_b[i]), "W": clean(W[i]),
            "Var": clean(Var[i]), "L": clean(L[i])}
           for i in range(len(p_b))]
    _write_json(out, args.out)
    return 0


def cmd_datagen(args):
    if args.config:
        with open(args.config) as fh:
            cfg = datagen.GenConfig.from_dict(json.load(fh))
    else:
        cfg = datagen.GenConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.val_fraction is not None:
        cfg.val_fraction = args.val_fraction
    n_nodes = None
    if args.nodes:
        lo, _, hi = args.nodes.partition(",")
        n_nodes = (int(lo), int(hi or lo))
    manifest = datagen.build_dataset(cfg, args.count, args.out,
                                     manifest_path=args.manifest,
                                     n_nodes=n_nodes)
    log.info("wrote %d samples to %s (%d failures)",
             len(manifest["samples"]), args.out, len(manifest["failures"]))
    return 0


def cmd_train(args):
    train_rows = datagen.load_dataset(args.dataset, split="train")
    val_rows = datagen.load_dataset(args.dataset, split="val")
    train_samples = [s for s, _ in train_rows]
    val_samples = [s for s, _ in val_rows] or None
    def progress(epoch, hist):
        msg = f"epoch {epoch}: train mse {hist['train'][-1]:.6g}"
        if hist["val"]:
            msg += f", val mse {hist['val'][-1]:.6g}"
        log.info("%s", msg)
    model, history = training.train(
        train_samples, val_samples=val_samples, target=args.target,
        lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
        seed=args.seed, d=args.dim, T=args.iterations,
        L_max=args.segment_len, log=progress)
    training.save_model(model, args.out)
    if args.history:
        _write_json(history, args.history)
    return 0


def cmd_infer(args):
    model = training.load_model(args.model)
    sample = _read_sample(args.sample)
    labels = training.infer(model, sample)
    out = labels_to_dict(labels)
    out["meta"] = {"wall_seconds": labels.meta["wall_seconds"]}
    _write_json(out, args.out)
    return 0


def cmd_benchmark(args):
    engines = [e for e in args.engines.split(",") if e]
    if not engines:
        raise SystemExit("benchmark: empty engines list")
    rows = datagen.load_dataset(args.dataset, split=args.split)
    model = training.load_model(args.model) if args.model else None
    records = [(meta.get("id", i), s, meta)
               for i, (s, meta) in enumerate(rows)]
    header = {"dataset": args.dataset, "model": args.model or None,
              "seed": args.seed, "split": args.split}
    rep = report_mod.benchmark(records, engines, model=model,
                               header=header)
    _write_json(rep, args.out)
    if args.csv:
        with open(args.csv, "w") as fh:
            report_mod.rows_to_csv(rep, fh)
    return 0


def cmd_report(args):
    with open(args.report) as fh:
        rep = json.load(fh)
    thresholds = None
    if args.thresholds:
        with open(args.thresholds) as fh:
            thresholds = json.load(fh)
    text, code = report_mod.report_summary(rep, thresholds=thresholds)
    print(text)
    return code


def build_parser():
    p = argparse.ArgumentParser(
        prog="qnetkit",
        description="queueing-network dataset, analysis, and model tools")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="reserved; evaluations run single-threaded")
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    # the global flags are also accepted after the subcommand; SUPPRESS
    # keeps an absent subcommand-level flag from clobbering the global
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--log-level", default=argparse.SUPPRESS,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True,
                           parser_class=lambda **kw: argparse.ArgumentParser(
                               parents=[common], **kw))

    s = sub.add_parser("simulate", help="packet-level simulation")
    s.add_argument("--sample", required=True)
    s.add_argument("--packets", type=int)
    s.add_argument("--seconds", type=float)
    s.add_argument("--warmup-fraction", type=float, default=0.1)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("qt-eval", help="fixed-point analytic labels")
    s.add_argument("--sample", required=True)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=50)
    s.add_argument("--no-jitter", action="store_true")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_qt_eval)

    s = sub.add_parser("qt-port", help="single-port closed form")
    s.add_argument("--policy", required=True,
                   choices=["FIFO", "SP", "WFQ", "DRR"])
    s.add_argument("--rates", required=True,
                   help="per-class arrival rates, comma-separated")
    s.add_argument("--mu", required=True,
                   help="service rate, one value or per-class list")
    s.add_argument("--buffers", required=True,
                   help="per-class buffer sizes, comma-separated")
    s.add_argument("--weights")
    s.add_argument("--no-jitter", action="store_true")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_qt_port)

    s = sub.add_parser("datagen", help="generate a labeled dataset")
    s.add_argument("--config", help="GenConfig as JSON")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--nodes", help="override node range, e.g. 8,24")
    s.add_argument("--val-fraction", type=float)
    s.add_argument("--out", required=True)
    s.add_argument("--manifest")
    s.set_defaults(func=cmd_datagen)

    s = sub.add_parser("train", help="fit the model on a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--target", default="delay",
                   choices=["delay", "jitter", "loss"])
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--batch-size", type=int, default=16)
    s.add_argument("--dim", type=int, default=32)
    s.add_argument("--iterations", type=int, default=8)
    s.add_argument("--segment-len", type=int, default=32)
    s.add_argument("--history", help="write per-epoch losses as JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="predict labels for one sample")
    s.add_argument("--model", required=True)
    s.add_argument("--sample", required=True)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("benchmark", help="engines vs ground truth")
    s.add_argument("--dataset", required=True)
    s.add_argument("--engines", required=True,
                   help="comma-separated subset of sim,qt,gnn")
    s.add_argument("--model", help="checkpoint for the gnn engine")
    s.add_argument("--split", default=None,
                   help="restrict to a dataset split")
    s.add_argument("--out", required=True)
    s.add_argument("--csv", help="also write the per-flow error rows")
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("report", help="summarize a benchmark report")
    s.add_argument("--report", required=True)
    s.add_argument("--thresholds",
                   help='JSON {"engine/metric": max_mean_error}')
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"qnetkit {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
