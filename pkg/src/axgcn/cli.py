"""Command-line interface: synth, train, eval, gradcheck, ablate, inspect.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import AxgcnError, DataError, NumericalError, UsageError
from .model import VARIANTS, ModelConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# flag -> ModelConfig field
TUNABLES = {
    "frames": ("num_frames", int),
    "hidden": ("hidden", int),
    "feature_dim": ("feature_dim", int),
    "cell_hidden": ("cell_hidden", int),
    "scales": ("scales", int),
    "lam": ("lam", float),
    "window": ("window", int),
    "cell": ("cell", str),
    "forget_mode": ("forget_mode", str),
    "lr": ("lr", float),
    "epochs": ("epochs", int),
    "batch_size": ("batch_size", int),
    "variant": ("variant", str),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_tunables(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file (flags override it)")
    p.add_argument("--frames", type=int, help="sampled frames per session (T)")
    p.add_argument("--hidden", type=int, help="GCN channel width")
    p.add_argument("--feature-dim", type=int, help="per-stream feature size (default 256)")
    p.add_argument("--cell-hidden", type=int, help="recurrent hidden size n")
    p.add_argument("--scales", type=int, help="multi-scale partitions K")
    p.add_argument("--lam", type=float, help="fusion reinforcement factor")
    p.add_argument("--window", type=int, help="attention window w")
    p.add_argument("--cell", choices=("lstm", "slstm"))
    p.add_argument("--forget-mode", choices=("sigmoid", "exp"))
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="axgcn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-asd", type=int, required=True)
    p.add_argument("--n-td", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--mode", choices=("clip", "session"), default="clip")
    p.add_argument("--separation", type=float, default=0.8)
    p.add_argument("--fps", type=float, default=17.0)
    p.add_argument("--noise", type=float, default=2.0)

    p = sub.add_parser("train", help="train a model on a session directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    _add_tunables(p)

    p = sub.add_parser("eval", help="evaluate a model on labelled sessions")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--cell", choices=("lstm", "slstm"), default="slstm")

    p = sub.add_parser("ablate", help="train/evaluate variants over several seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", type=int, required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--variants", default=",".join(VARIANTS),
                   help="comma-separated list from: " + ", ".join(VARIANTS))
    p.add_argument("--cells", default=None, help="comma-separated cells to compare, e.g. lstm,slstm")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    _add_tunables(p)

    p = sub.add_parser("inspect", help="print a model file manifest")
    p.add_argument("--model", required=True)
    return parser


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def read_config_file(path) -> dict:
    """Parse ``key = value`` lines (``#`` comments) into ModelConfig fields."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    try:
        cp.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"malformed config file {path}: {exc}") from None
    fields = {f.name: f for f in dataclasses.fields(ModelConfig)}
    aliases = {k: v[0] for k, v in TUNABLES.items()}
    out = {}
    for key, raw in cp["config"].items():
        key = key.replace("-", "_")
        name = aliases.get(key, key)
        if name not in fields:
            raise UsageError(f"unknown config key {key!r} in {path}")
        default = fields[name].default
        try:
            if isinstance(default, tuple):
                out[name] = tuple(int(v) for v in raw.split(",") if v.strip())
            elif isinstance(default, bool):
                out[name] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                out[name] = int(raw)
            elif isinstance(default, float):
                out[name] = float(raw)
            else:
                out[name] = raw.strip()
        except ValueError:
            raise UsageError(f"config key {key!r}: cannot parse {raw!r}") from None
    return out


def resolve_config(args, seed: int) -> ModelConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for flag, (name, _) in TUNABLES.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    values["seed"] = seed
    try:
        return ModelConfig(**values)
    except AxgcnError as exc:
        raise UsageError(str(exc)) from None


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synth import GeneratorSpec, generate_dataset

    try:
        spec = GeneratorSpec(args.n_asd, args.n_td, args.mode, args.fps, args.separation,
                             args.seed, args.noise)
    except AxgcnError as exc:
        raise UsageError(str(exc)) from None
    records = generate_dataset(spec, args.out)
    waves = {lab: [r["wave_per_min"] for r in records if r["label"] == lab] for lab in ("ASD", "TD")}
    print(f"wrote {len(records)} sessions + manifest.jsonl to {args.out}")
    for lab, vals in waves.items():
        if vals:
            print(f"  {lab}: {len(vals)} sessions, mean wave events/min {np.mean(vals):.2f}")
    return EXIT_OK


def _load_data(directory):
    from .skeleton import load_directory

    if not Path(directory).is_dir():
        raise DataError(f"data directory {directory} does not exist")
    data = load_directory(directory)
    if not data:
        raise DataError(f"no session files in {directory}")
    return data


def cmd_train(args) -> int:
    from .modelio import save_model
    from .plotting import plot_history
    from .trainer import train

    cfg = resolve_config(args, args.seed)
    data = _load_data(args.data)
    model, history = train(data, cfg)
    out = Path(args.out)
    save_model(model, out)
    hist_csv = _sibling(out, ".history.csv")
    with open(hist_csv, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "loss", "accuracy"])
        w.writeheader()
        w.writerows(history)
    plot_history(history, _sibling(out, ".history.png"))
    last = history[-1]
    print(f"trained {cfg.variant} ({cfg.cell}) on {len(data)} sessions, "
          f"{model.param_count()} parameters")
    print(f"final epoch {last['epoch']}: loss {last['loss']:.4f}, train accuracy {last['accuracy']:.3f}")
    print(f"model written to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .modelio import load_model
    from .plotting import plot_confusion
    from .skeleton import LABELS
    from .trainer import Metrics, predict, prepare

    model = load_model(args.model)
    data = prepare(_load_data(args.data), model.config)
    if np.any(data.labels < 0):
        raise DataError("evaluation data contains unlabeled sessions")
    probs = predict(model, data, model.config.batch_size)
    preds = np.argmax(probs, axis=1)
    metrics = Metrics.from_predictions(data.labels, preds)
    report = Path(args.report)
    record = {"model": str(args.model), "data": str(args.data), "sessions": len(data),
              "variant": model.config.variant, "cell": model.config.cell, **metrics.to_dict()}
    report.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(_sibling(report, ".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["session_id", "label", "predicted", "p_asd"])
        for sid, y, p, pr in zip(data.ids, data.labels, preds, probs):
            w.writerow([sid, LABELS[y], LABELS[p], f"{pr[0]:.6f}"])
    plot_confusion(metrics.confusion, _sibling(report, "_confusion.png"),
                   title=f"acc {metrics.accuracy:.3f}  UAR {metrics.uar:.3f}")
    print(f"accuracy {metrics.accuracy:.4f}  uar {metrics.uar:.4f}  confusion {list(map(list, metrics.confusion))}")
    print(f"report written to {report}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    res = run_gradcheck(args.seed, args.eps, args.cell)
    w = res.worst
    print(f"max relative error {res.max_relative_error:.3e} over {res.num_parameters} parameters "
          f"({res.seconds:.1f} s)")
    print(f"worst coordinate: {w['param']}[{w['index']}] ad={w['ad']:.6e} fd={w['fd']:.6e}")
    if res.max_relative_error > args.tol:
        print(f"FAILED: exceeds tolerance {args.tol:g}")
        return EXIT_NUMERIC
    print(f"ok (tolerance {args.tol:g})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .plotting import plot_ablation
    from .trainer import ablate, summarize

    cfg = resolve_config(args, args.seed)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown variant(s) {bad}; choose from {list(VARIANTS)}")
    cells = [c.strip() for c in args.cells.split(",")] if args.cells else None
    if cells and any(c not in ("lstm", "slstm") for c in cells):
        raise UsageError(f"unknown cell in {cells}")
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    data = _load_data(args.data)
    rows = ablate(data, cfg, variants, args.seeds, cells, threads=args.threads)
    summary = summarize(rows)
    report = Path(args.report)
    record = {"data": str(args.data), "sessions": len(data), "seeds": args.seeds,
              "config": cfg.to_dict(), "summary": summary, "runs": [r.to_dict() for r in rows]}
    report.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(_sibling(report, ".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "cell", "seed", "accuracy", "uar", "train_accuracy",
                    "tp_asd", "fn_asd", "fp_asd", "tn_asd"])
        for r in rows:
            (a, b), (c, d) = r.metrics.confusion
            w.writerow([r.variant, r.cell, r.seed, f"{r.metrics.accuracy:.6f}",
                        f"{r.metrics.uar:.6f}", f"{r.train_accuracy:.6f}", a, b, c, d])
    with open(_sibling(report, "_summary.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]))
        w.writeheader()
        w.writerows(summary)
    plot_ablation(summary, _sibling(report, ".png"))
    print(f"{'variant':<18}{'cell':<7}{'accuracy':>16}{'UAR':>16}")
    for s in summary:
        print(f"{s['variant']:<18}{s['cell']:<7}"
              f"{s['accuracy_mean']:>9.3f} ± {s['accuracy_std']:.3f}"
              f"{s['uar_mean']:>9.3f} ± {s['uar_std']:.3f}")
    print(f"report written to {report}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .modelio import read_manifest

    try:
        data = Path(args.model).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {args.model}: {exc}") from None
    manifest, meta, _ = read_manifest(data)
    total = 0
    for name, shape in manifest:
        size = int(np.prod(shape)) if shape else 1
        if not name.startswith("masks."):
            total += size
        print(f"{name:<28} {'x'.join(map(str, shape)):>14}")
    print(f"{len(manifest)} entries, {total} trainable values")
    print(json.dumps(meta, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "ablate": cmd_ablate, "inspect": cmd_inspect}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "epochs", None) is not None and args.epochs < 1:
            raise UsageError("--epochs must be >= 1")
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
