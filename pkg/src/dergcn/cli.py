"""Command-line entry point: ``dergcn <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 failed check or invariant.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import VARIANTS, TrainConfig, load_config
from .data import SynthSpec, gen_synthetic, load_dataset, load_spec, save_dataset
from .errors import ConfigInvalid, DerGcnError, InvalidSpec, UnknownVariant

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2
CHECKPOINT_NAME = "checkpoint.zip"
METRICS_NAME = "metrics.csv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _config(path) -> TrainConfig:
    cfg = load_config(path) if path else TrainConfig()
    return cfg.with_env_seed()


def cmd_gen_data(args) -> int:
    spec = load_spec(args.spec) if args.spec else SynthSpec()
    ds = gen_synthetic(spec)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} dialogues ({len(ds.labels())} utterances) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import train
    cfg = _config(args.config)
    ds = load_dataset(args.data)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = train(cfg, ds)
    result.checkpoint.save(out / CHECKPOINT_NAME)
    (out / METRICS_NAME).write_text(result.log_csv(), encoding="utf-8")
    best = max((r["val_wf1"] for r in result.log), default=0.0)
    print(f"best epoch {result.checkpoint.epoch} val WF1 {best:.4f}; "
          f"wrote {out / CHECKPOINT_NAME} and {out / METRICS_NAME}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .training import Checkpoint, evaluate, split_dataset
    ckpt = Checkpoint.load(args.checkpoint)
    ds = load_dataset(args.data)
    report = evaluate(ckpt, split_dataset(ds, ckpt.config)[args.split])
    print(report.to_kv() if args.json_like else report.to_text())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import MODULES, run_suite
    if args.module and args.module not in MODULES:
        raise UsageError(f"unknown module {args.module!r}; choose from {', '.join(MODULES)}")
    results = run_suite(args.module)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_ablate(args) -> int:
    from .training import ablate
    cfg = _config(args.config)
    ds = load_dataset(args.data)
    rows = [("full", ablate(cfg, ds, "full")), (args.variant, ablate(cfg, ds, args.variant))]
    print(f"{'variant':<16}{'WA':>10}{'WF1':>10}  per-class F1")
    for name, rep in rows:
        f1 = " ".join(f"{x:.3f}" for x in rep.per_class_f1)
        print(f"{name:<16}{rep.wa:>10.4f}{rep.wf1:>10.4f}  {f1}")
    return EXIT_OK


def cmd_inspect_graph(args) -> int:
    from .model import build_batch_graph, build_params
    from .training import Checkpoint, meta_for
    ds = load_dataset(args.data)
    try:
        dialogue = ds.by_id(args.dialogue)
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    if args.checkpoint:
        ckpt = Checkpoint.load(args.checkpoint)
        store, cfg, meta = ckpt.params, ckpt.config, ckpt.meta
    else:
        cfg, meta = _config(args.config), meta_for(ds)
        store = build_params(cfg, meta)
    graph, _, _ = build_batch_graph(store, cfg, meta, [dialogue])
    sys.stdout.write(graph.dump())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dergcn", description="Multimodal dialogue emotion recognition toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", help="write a synthetic dataset")
    s.add_argument("--spec", help="JSON file of SynthSpec fields (defaults if omitted)")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("train", help="train and write checkpoint + metrics CSV")
    s.add_argument("--config", help="JSON file of TrainConfig fields (defaults if omitted)")
    s.add_argument("--data", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", choices=("test", "val", "train"), default="test")
    s.add_argument("--json-like", action="store_true", help="key=value output")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("gradcheck", help="run the finite-difference suite")
    s.add_argument("--module", help="restrict to one module")
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("ablate", help="train the full model and one variant side by side")
    s.add_argument("--variant", required=True, choices=[v for v in VARIANTS if v != "full"])
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("inspect-graph", help="dump one dialogue's multi-relational graph")
    s.add_argument("--data", required=True)
    s.add_argument("--dialogue", required=True)
    s.add_argument("--checkpoint", help="use trained speaker-edge weights")
    s.add_argument("--config")
    s.set_defaults(fn=cmd_inspect_graph)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.fn(args)
    except UsageError as exc:
        print(f"dergcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigInvalid, InvalidSpec, UnknownVariant, FileNotFoundError) as exc:
        print(f"dergcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DerGcnError as exc:
        print(f"dergcn: check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except ValueError as exc:          # malformed input files
        print(f"dergcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
