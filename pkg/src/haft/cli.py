"""Command-line entry point: synth / train / track / eval / ablate.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime divergence.
Every run logs the fully resolved config to the output directory.
"""

import argparse
import os
import sys

from .config import Config, ConfigError

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _load_config(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError("--set expects key=value, got '%s'" % item)
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if args.config:
        return Config.from_file(args.config, overrides)
    return Config(overrides)


def _dump_config(config, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    config.dump(os.path.join(out_dir, "resolved_config.txt"))


def cmd_synth(args):
    from .data import save_sequence, synth_dataset

    config = _load_config(args)
    _dump_config(config, args.out)
    sequences = synth_dataset(config, config["seed"])
    for seq in sequences:
        save_sequence(seq, os.path.join(args.out, seq.name))
    print("wrote %d sequences to %s" % (len(sequences), args.out))
    return 0


def _load_dataset(path):
    from .data import load_sequence

    if os.path.isdir(os.path.join(path, "frames")):
        return [load_sequence(path)]
    names = sorted(d for d in os.listdir(path)
                   if os.path.isdir(os.path.join(path, d, "frames")))
    if not names:
        raise FileNotFoundError("no sequence directories under %s" % path)
    return [load_sequence(os.path.join(path, name)) for name in names]


def cmd_train(args):
    from .trainer import train

    config = _load_config(args)
    _dump_config(config, args.out)
    dataset = _load_dataset(args.data)
    final = train(config, dataset, args.out)
    print("checkpoint: %s" % final)
    return 0


def cmd_track(args):
    from .tracker import save_tracking_csv, track_sequence
    from .trainer import load_train_checkpoint

    config = _load_config(args)
    models, ckpt_config, _ = load_train_checkpoint(args.checkpoint, strict=False)
    # tracking keys come from the CLI config; model geometry from the checkpoint
    for key, value in config.as_dict().items():
        if key.startswith("track.") or key == "seed":
            ckpt_config.set(key, value)
    _dump_config(ckpt_config, args.out)
    sequences = _load_dataset(args.sequence)

    def one(seq):
        outputs = track_sequence(models, ckpt_config, seq, ckpt_config["seed"])
        save_tracking_csv(outputs, os.path.join(args.out, "%s.csv" % seq.name))

    if args.jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(one, sequences))
    else:
        for seq in sequences:
            one(seq)
    print("tracked %d sequences -> %s" % (len(sequences), args.out))
    return 0


def cmd_eval(args):
    from .evaluator import emit_report, evaluate_sequence
    from .tracker import load_tracking_csv

    config = _load_config(args)
    _dump_config(config, args.out)
    sequences = _load_dataset(args.data)
    results = []
    for seq in sequences:
        csv_path = os.path.join(args.tracks, "%s.csv" % seq.name)
        if not os.path.isfile(csv_path):
            raise FileNotFoundError("missing tracking output %s" % csv_path)
        boxes = [box for box, _ in load_tracking_csv(csv_path)]
        results.append(evaluate_sequence(
            seq, boxes, window=config["eval.recovery_window"],
            tau=config["eval.precision_tau"]))
    emit_report(results, args.out)
    mean_auc = sum(r.auc for r in results) / len(results)
    print("mean AUC %.4f over %d sequences -> %s"
          % (mean_auc, len(results), args.out))
    return 0


def cmd_ablate(args):
    import numpy as np

    from .ablation import run_lambda_sweep, write_table
    from .evaluator import _plot_lambda
    from .trainer import load_train_checkpoint

    config = _load_config(args)
    _dump_config(config, args.out)
    models, ckpt_config, _ = load_train_checkpoint(args.checkpoint, strict=False)
    sequences = _load_dataset(args.data)
    lambdas = [float(v) for v in args.lambdas.split(",")]
    rows = run_lambda_sweep(models, ckpt_config, sequences, lambdas,
                            seed=config["seed"], jobs=args.jobs)
    write_table(rows, ("lambda", "mean_auc"),
                os.path.join(args.out, "lambda_sweep.csv"))
    _plot_lambda(rows, args.out)
    for lam, auc in rows:
        print("lambda %.2f -> mean AUC %.4f" % (lam, auc))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="haft",
                                     description="hallucinated-feature tracker")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a single config key")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a checkpoint")
    common(p)
    p.add_argument("data", help="dataset directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="track sequences with a checkpoint")
    common(p)
    p.add_argument("checkpoint")
    p.add_argument("sequence", help="sequence directory (or directory of them)")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score tracking outputs")
    common(p)
    p.add_argument("tracks", help="directory of tracking CSVs")
    p.add_argument("data", help="dataset directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="fusion-weight sweep")
    common(p)
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--lambdas", default="0.0,0.1,0.2,0.4,0.8")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print("config error: %s" % err, file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, IOError, ValueError) as err:
        print("data error: %s" % err, file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, RuntimeError) as err:
        print("runtime error: %s" % err, file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
