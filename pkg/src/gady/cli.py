"""Command line entry point: ``gady <command> ...`` (or ``python -m gady``)."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .tgraph import FORMATS, IngestError, ingest
from .trainer import GadyModel, RunConfig, build_test_stream, evaluate, read_labeled, train


class UsageError(Exception):
    pass


def _seed(flag: int | None, file_value: int | None) -> int:
    if flag is not None:
        return flag
    if file_value is not None:
        return file_value
    env = os.environ.get("GADY_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"GADY_SEED must be an integer, got {env!r}") from None
    return 0


def _existing(path: str | None, what: str) -> str | None:
    if path is not None and not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


# flag name -> RunConfig field, for the overrides shared by train-like commands
OVERRIDES = {
    "data": "data", "format": "fmt", "mode": "mode", "epochs": "epochs", "batch_size": "batch_size",
    "lr_g": "lr_g", "lr_d": "lr_d", "ratio": "ratio", "k_clusters": "k_clusters",
    "train_ratio": "train_ratio", "alpha": "alpha", "beta": "beta", "gamma": "gamma",
}


def _run_config(args) -> RunConfig:
    raw: dict = {}
    if args.config is not None:
        _existing(args.config, "config file")
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
    for flag, key in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = value
    if getattr(args, "use_edge_weight", False):
        raw["use_edge_weight"] = True
    raw["seed"] = _seed(args.seed, raw.get("seed"))
    try:
        cfg = RunConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if cfg.data is None:
        raise UsageError("no dataset: pass --data or set \"data\" in the config")
    _existing(cfg.data, "dataset")
    return cfg


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON object with RunConfig fields")
    p.add_argument("--data", help="dataset file")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--use-edge-weight", action="store_true")
    p.add_argument("--mode", choices=("gan", "nogan"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr-g", type=float)
    p.add_argument("--lr-d", type=float)
    p.add_argument("--ratio", type=float)
    p.add_argument("--k-clusters", type=int)
    p.add_argument("--train-ratio", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)


def cmd_ingest(args) -> int:
    _existing(args.path, "dataset")
    store = ingest(args.path, args.format, args.use_edge_weight)
    store.to_csv(args.output)
    print(json.dumps({"num_nodes": store.num_nodes, "num_events": len(store), "output": args.output}))
    return 0


def cmd_inject(args) -> int:
    _existing(args.path, "dataset")
    store = ingest(args.path, args.format, args.use_edge_weight)
    cfg = RunConfig(k_clusters=args.k_clusters, train_ratio=args.train_ratio,
                    seed=_seed(args.seed, None))
    labeled = build_test_stream(store, cfg, args.ratio)
    labeled.to_csv(args.output, with_label=True)
    print(json.dumps({"events": len(labeled), "injected": int(labeled.label.sum()),
                      "output": args.output}))
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    report, model = train(cfg, evaluate_after=not args.no_eval, dump_dir=args.dump_dir,
                          progress=True)
    model.save(args.checkpoint)
    Path(args.report).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if args.metrics:
        Path(args.metrics).write_text(report.metrics_json())
    print(json.dumps({"checkpoint": args.checkpoint, "report": args.report,
                      "results": report.results}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    _existing(args.checkpoint, "checkpoint")
    _existing(args.test, "test stream")
    model = GadyModel.load(args.checkpoint)
    labeled = read_labeled(args.test, model.num_nodes)
    result = evaluate(model, labeled)
    print(json.dumps(result.to_dict(), sort_keys=True))
    return 0


def cmd_dump_generated(args) -> int:
    cfg = _run_config(args)
    if cfg.mode != "gan":
        raise UsageError("dump-generated needs --mode gan")
    sink: list = []
    train(cfg, evaluate_after=False, generated_sink=sink, progress=True)
    lines = ["epoch,batch,u,v,t,score"] + [f"{e},{b},{u},{v},{t!r},{s!r}" for e, b, u, v, t, s in sink]
    Path(args.output).write_text("\n".join(lines) + "\n")
    print(json.dumps({"samples": len(sink), "output": args.output}))
    return 0


def cmd_fdcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_all

    worst = run_all(args.instances)
    for name, err in worst.items():
        print(f"{name:<14} max relative error {err:.3e}  {'ok' if err < TOLERANCE else 'FAIL'}")
    return 0 if max(worst.values()) < TOLERANCE else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gady", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize a raw dataset into canonical CSV")
    p.add_argument("path")
    p.add_argument("--format", choices=FORMATS, default="generic_csv")
    p.add_argument("--use-edge-weight", action="store_true")
    p.add_argument("-o", "--output", default="events.csv")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("inject", help="build a labeled test stream with injected anomalies")
    p.add_argument("path")
    p.add_argument("--format", choices=FORMATS, default="generic_csv")
    p.add_argument("--use-edge-weight", action="store_true")
    p.add_argument("--ratio", type=float, default=0.1)
    p.add_argument("--k-clusters", type=int, default=10)
    p.add_argument("--train-ratio", type=float, default=0.5)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", default="test_labeled.csv")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("train", help="train and (by default) evaluate on injected test streams")
    _add_run_flags(p)
    p.add_argument("--checkpoint", default="checkpoint.json")
    p.add_argument("--report", default="report.json")
    p.add_argument("--metrics", help="also write the report without timing fields (reproducible bytes)")
    p.add_argument("--no-eval", action="store_true")
    p.add_argument("--dump-dir", help="where to write the offending batch if training diverges")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a labeled test stream with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-generated", help="train in gan mode and write every generated sample")
    _add_run_flags(p)
    p.add_argument("-o", "--output", default="generated.csv")
    p.set_defaults(func=cmd_dump_generated)

    p = sub.add_parser("fdcheck", help="finite-difference gradient checks")
    p.add_argument("--instances", type=int, default=20, help="random instances per op")
    p.set_defaults(func=cmd_fdcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gady {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (IngestError, ValueError, RuntimeError) as exc:
        print(f"gady {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
