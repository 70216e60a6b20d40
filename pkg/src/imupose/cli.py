"""Command-line workflow: synth -> prep -> train/adapt -> eval/permute -> assess.

All defaults mirror the full-scale configuration (1.0 s windows at 40 Hz,
50% overlap, 64 kernels of 5x30, two 128-unit LSTM layers, dropout 0.5,
batches of 300 windows, 300 epochs, Adam at 1e-3). ``--preset desk`` scales
the model down (16 kernels, 32 LSTM units, 30 epochs) for fast runs.

A plain-text config file (key=value per line, keys matching the long flag
names with underscores) can seed any command's defaults; explicit flags win.
Every artifact directory gets a run manifest with the config hash and seed.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import ergo, synth
from .incremental import (
    RECOMMENDED_STRATEGY,
    parse_strategy,
    run_mto,
    run_oto,
    write_il_per_class_csv,
    write_il_report_csv,
)
from .metrics import (
    default_channel_groups,
    permutation_importance,
    write_confusion_csv,
    write_importance_csv,
    write_metrics_csv,
)
from .nn.model import Architecture
from .pipeline import (
    SplitSpec,
    build_dataset,
    downsample,
    load_dataset,
    merge_generalized,
    read_stream_csv,
    save_dataset,
    stratified_shuffle_split,
    write_manifest,
)
from .postures import ALL_LABELS
from .training import (
    LR_LEVELS,
    TrainConfig,
    evaluate,
    load_model,
    train,
)

PRESETS = {
    "full": {},
    "desk": {"kernels": 16, "lstm_units": 32, "epochs": 30},
}


def _config_file_defaults(argv: list[str]) -> dict[str, str]:
    if "--config" not in argv:
        return {}
    path = Path(argv[argv.index("--config") + 1])
    defaults: dict[str, str] = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, _, value = line.partition("=")
        defaults[key.strip().replace("-", "_")] = value.strip()
    return defaults


def _hash_args(args: argparse.Namespace) -> str:
    skip = {"func"}
    text = repr(sorted((k, str(v)) for k, v in vars(args).items() if k not in skip))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _stamp(out_dir: Path, args: argparse.Namespace, command: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest({
        "command": command,
        "config_hash": _hash_args(args),
        "seed": getattr(args, "seed", ""),
    }, out_dir / f"{command}.run")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), default="full")
    p.add_argument("--conv-layers", type=int, default=1)
    p.add_argument("--kernels", type=int, default=None)
    p.add_argument("--kernel-h", type=int, default=5)
    p.add_argument("--kernel-w", type=int, default=None, help="defaults to the channel count")
    p.add_argument("--lstm-units", type=int, default=None)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--padding", choices=["same", "valid"], default="same")
    p.add_argument("--window-seconds", type=float, default=1.0)
    p.add_argument("--hz", type=int, default=40)
    p.add_argument("--channels", type=int, default=30)
    p.add_argument("--batch", type=int, default=300)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lr-level", choices=sorted(LR_LEVELS), default=None)
    p.add_argument("--seed", type=int, default=0)


def _build_config(args: argparse.Namespace) -> TrainConfig:
    """RunConfig -> validated Architecture + TrainConfig, presets applied."""
    preset = PRESETS[args.preset]
    kernels = args.kernels if args.kernels is not None else preset.get("kernels", 64)
    lstm_units = args.lstm_units if args.lstm_units is not None else preset.get("lstm_units", 128)
    epochs = args.epochs if args.epochs is not None else preset.get("epochs", 300)
    kernel_w = args.kernel_w if args.kernel_w is not None else args.channels
    steps = args.window_seconds * args.hz
    if abs(steps - round(steps)) > 1e-9 or steps <= 0:
        raise ValueError("window_seconds*hz must be a positive integer")
    arch = Architecture(
        conv_layers=args.conv_layers, kernels=kernels, kernel_h=args.kernel_h,
        kernel_w=kernel_w, lstm_units=lstm_units, dropout=args.dropout,
        padding=args.padding, window_steps=int(round(steps)), channels=args.channels,
    )
    if args.lr is not None and args.lr_level is not None:
        raise ValueError("give either --lr or --lr-level, not both")
    lr = args.lr if args.lr is not None else LR_LEVELS[args.lr_level or "LR2"]
    return TrainConfig(lr=lr, batch_size=args.batch, epochs=epochs, seed=args.seed, arch=arch)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    if args.hz <= 0 or args.duration <= 0:
        raise ValueError("duration and hz must be positive")
    labels = list(ALL_LABELS[:args.classes])
    base = synth.make_profile("S1", labels, channels=args.channels,
                              noise_std=args.noise, dwell_s=args.dwell, seed=args.seed)
    out = Path(args.out)
    for i in range(args.subjects):
        profile = base if i == 0 else synth.derive_subject(
            base, args.drift, seed=args.seed + i, subject_id=f"S{i + 1}")
        synth.write_stream(profile, out, args.duration, hz=args.hz,
                           channels=args.channels, seed=args.seed + i)
    _stamp(out, args, "synth")
    return 0


def cmd_prep(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for stream_path in args.stream:
        stream_path = Path(stream_path)
        stream = read_stream_csv(stream_path)
        if args.source_hz != args.hz:
            stream = downsample(stream, args.source_hz, args.hz, seed=args.seed)
        ds = build_dataset(stream, args.window_seconds, args.hz, args.overlap,
                           subject=stream_path.stem)
        save_dataset(ds, out / f"{stream_path.stem}.npz")
        if args.splits:
            spec = SplitSpec(rounds=args.rounds, seed=args.seed)
            rounds = stratified_shuffle_split(ds, spec)
            arrays = {}
            for r, (tr, va, te) in enumerate(rounds):
                starts = {float(s): i for i, s in enumerate(ds.starts)}
                for part_name, part in (("train", tr), ("val", va), ("test", te)):
                    arrays[f"round{r}_{part_name}"] = np.array(
                        [starts[float(s)] for s in part.starts], dtype=np.intp)
            np.savez(out / f"{stream_path.stem}.splits.npz", **arrays)
    _stamp(out, args, "prep")
    return 0


def _load_subjects(paths: list[str]) -> list[tuple[str, object]]:
    subjects = []
    for p in paths:
        ds = load_dataset(p)
        subjects.append((ds.subject or Path(p).stem, ds))
    return subjects


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    subjects = _load_subjects(args.data)
    drop = frozenset(args.drop_labels.split(",")) if args.drop_labels else frozenset()
    if args.mode == "generalized":
        ds = merge_generalized([d for _, d in subjects], drop)
    else:
        if len(subjects) != 1:
            raise ValueError("personalized training takes exactly one dataset")
        ds = subjects[0][1]
    spec = SplitSpec(rounds=args.round + 1, seed=args.seed)
    tr, va, te = stratified_shuffle_split(ds, spec)[args.round]
    best, history = train(tr, va, cfg, checkpoint_path=args.out, log_path=args.log)
    cm, f1 = evaluate(best, te)
    print(f"{cfg.arch.descriptor} {args.mode} test Macro F1 {f1:.4f} "
          f"({len(history)} epochs, checkpoint at {args.out})")
    if args.metrics_out:
        write_metrics_csv(cm, args.metrics_out)
    _stamp(Path(args.out).parent, args, "train")
    return 0


def cmd_adapt(args: argparse.Namespace) -> int:
    conv_layers, scheme, lr_level = parse_strategy(args.strategy)
    if args.scheme:
        scheme = args.scheme
    if args.lr_level:
        lr_level = args.lr_level
    if args.conv_layers != 1:
        conv_layers = args.conv_layers
    args.conv_layers = conv_layers
    args.lr = None
    args.lr_level = None
    cfg = _build_config(args)
    adapt_cfg = replace(cfg, lr=LR_LEVELS[lr_level],
                        epochs=args.adapt_epochs if args.adapt_epochs is not None else cfg.epochs)
    subjects = _load_subjects(args.data)
    runner = run_oto if scheme == "oto" else run_mto
    report = runner(subjects, cfg, adapt_cfg=adapt_cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_il_report_csv(report, out / f"{scheme}_report.csv")
    write_il_per_class_csv(report, out / f"{scheme}_per_class.csv")
    inc = report.mean("incremental_f1")
    fgt = report.mean("forgetting_f1")
    print(f"{scheme} {report.descriptor} {report.lr_level}: "
          f"incremental {float('nan') if inc is None else inc:.4f}, "
          f"forgetting {float('nan') if fgt is None else fgt:.4f} "
          f"(valid={report.valid})")
    _stamp(out, args, "adapt")
    return 0 if report.valid else 1


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_model(args.checkpoint)
    ds = load_dataset(args.data)
    cm, f1 = evaluate(model, ds)
    write_metrics_csv(cm, args.out)
    if args.confusion_out:
        write_confusion_csv(cm, args.confusion_out, normalized=args.normalized)
    if args.predictions_out:
        from .nn.model import predict
        ergo.write_predictions_csv(ds.starts, predict(model, ds.data), args.predictions_out)
    print(f"Macro F1 {f1:.4f} on {len(ds)} windows ({model.arch.descriptor})")
    _stamp(Path(args.out).parent, args, "eval")
    return 0


def cmd_permute(args: argparse.Namespace) -> int:
    from .nn.model import predict
    model = load_model(args.checkpoint)
    ds = load_dataset(args.data)
    result = permutation_importance(lambda data: predict(model, data), ds,
                                    default_channel_groups(), repeats=args.repeats,
                                    seed=args.seed)
    write_importance_csv(result, args.out)
    worst = min(result.mean_delta, key=result.mean_delta.get)
    print(f"baseline Macro F1 {result.baseline_f1:.4f}; "
          f"most influential group {worst} ({result.mean_delta[worst]:+.4f})")
    _stamp(Path(args.out).parent, args, "permute")
    return 0


def cmd_assess(args: argparse.Namespace) -> int:
    _, labels = ergo.read_predictions_csv(args.predictions)
    th = ergo.ErgoThresholds(scale=args.mht_scale)
    report = ergo.assess(ergo.run_length_encode(labels), th)
    ergo.write_ergo_csv(report, args.out)
    if args.compare:
        _, truth_labels = ergo.read_predictions_csv(args.compare)
        truth = ergo.assess(ergo.run_length_encode(truth_labels), th)
        rows = ergo.compare_assessments(truth, report)
        ergo.write_comparison_csv(rows, args.comparison_out or
                                  str(Path(args.out).with_suffix(".compare.csv")))
    _stamp(Path(args.out).parent, args, "assess")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    """Aggregate per-round metric CSVs (class,f1 rows) into mean/std per class."""
    rows: dict[str, list[float]] = {}
    files = sorted(Path(args.runs).glob(args.pattern))
    if not files:
        raise ValueError(f"no metric files matching {args.pattern} under {args.runs}")
    for path in files:
        lines = path.read_text().splitlines()
        if not lines or lines[0] != "class,f1":
            continue
        for line in lines[1:]:
            name, _, value = line.partition(",")
            rows.setdefault(name, []).append(float(value))
    with Path(args.out).open("w", newline="\n") as fh:
        fh.write("class,mean_f1,std_f1,rounds\n")
        for name in sorted(rows):
            vals = np.array(rows[name])
            fh.write(f"{name},{vals.mean():.6f},{vals.std():.6f},{len(vals)}\n")
    print(f"aggregated {len(files)} metric files into {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imupose", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", default=None, help="key=value defaults file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic subject streams")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=7)
    p.add_argument("--duration", type=float, default=1200.0)
    p.add_argument("--hz", type=int, default=40)
    p.add_argument("--channels", type=int, default=30)
    p.add_argument("--classes", type=int, default=7)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--dwell", type=float, default=4.0)
    p.add_argument("--drift", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prep", help="streams to normalized window datasets")
    p.add_argument("--stream", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window-seconds", type=float, default=1.0)
    p.add_argument("--hz", type=int, default=40)
    p.add_argument("--source-hz", type=int, default=None)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--splits", action="store_true")
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train", help="train a model from scratch")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["personalized", "generalized"], default="personalized")
    p.add_argument("--drop-labels", default="")
    p.add_argument("--round", type=int, default=0)
    p.add_argument("--log", default=None)
    p.add_argument("--metrics-out", default=None)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="run an incremental-learning scheme")
    p.add_argument("--data", nargs="+", required=True, help="subject datasets, in order")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--strategy", default=RECOMMENDED_STRATEGY)
    p.add_argument("--scheme", choices=["oto", "mto"], default=None)
    p.add_argument("--adapt-epochs", type=int, default=None)
    _add_model_flags(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--confusion-out", default=None)
    p.add_argument("--normalized", action="store_true")
    p.add_argument("--predictions-out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("permute", help="channel-group permutation importance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_permute)

    p = sub.add_parser("assess", help="MHT/OWAS assessment of a prediction CSV")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mht-scale", type=float, default=1.0)
    p.add_argument("--compare", default=None, help="ground-truth prediction CSV")
    p.add_argument("--comparison-out", default=None)
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("report", help="aggregate per-round metric CSVs")
    p.add_argument("--runs", required=True)
    p.add_argument("--pattern", default="*.csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    defaults = _config_file_defaults(argv)
    if defaults:
        for action in parser._subparsers._group_actions:  # apply to every subcommand
            for sub_parser in action.choices.values():
                known = {a.dest for a in sub_parser._actions}
                sub_parser.set_defaults(**{k: _coerce_default(sub_parser, k, v)
                                           for k, v in defaults.items() if k in known})
    args = parser.parse_args(argv)
    if getattr(args, "source_hz", None) is None and hasattr(args, "source_hz"):
        args.source_hz = args.hz
    try:
        # single-threaded BLAS: reproducible numbers, and the small per-step
        # matrices lose more to thread sync than they gain
        with threadpool_limits(limits=1):
            return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _coerce_default(sub_parser: argparse.ArgumentParser, key: str, value: str):
    for action in sub_parser._actions:
        if action.dest == key and action.type is not None:
            return action.type(value)
    return value


if __name__ == "__main__":
    sys.exit(main())
