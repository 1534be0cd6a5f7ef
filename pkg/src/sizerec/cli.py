"""sizerec command line.

Most verbs work on files: a dataset written by ``generate-data``, model
bundles written by ``train``, and reports written as CSV/JSONL. ``predict``
runs in-process by default and becomes a thin HTTP client with ``--url``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .errors import SizeRecError

log = logging.getLogger("sizerec")


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _kv(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), yaml.safe_load(v)


def _config(args):
    from .pipeline import load_config

    cfg = load_config(getattr(args, "config", None))
    return cfg.with_seed(args.seed)


def _write_json(obj, path: str | None):
    text = json.dumps(obj, indent=1, sort_keys=True)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    else:
        print(text)


# --------------------------------------------------------------------------
# verbs
# --------------------------------------------------------------------------

def cmd_generate_data(args):
    from .catalog import generate_synthetic_dataset, save_dataset

    cfg = _config(args)
    gen = {**cfg.generator_dict(), **dict(args.set or [])}
    data = generate_synthetic_dataset(gen)
    save_dataset(data, args.out)
    log.info("wrote %d instances for %d users to %s", len(data.instances), len(data.users), args.out)
    _write_json(data.census, None)


def cmd_train(args):
    from .bundle import save_bundle
    from .catalog import load_dataset
    from .pipeline import make_splits
    from .training import train

    cfg = _config(args)
    data = load_dataset(args.data)
    splits = make_splits(data, cfg.split)
    overrides = dict(args.set or [])
    bundle, report = train(args.model, splits.train, splits.val, data.scales,
                           cfg.train_config(args.model, **overrides), num_positions=data.num_positions)
    save_bundle(bundle, args.out)
    report.write(args.report or Path(args.out) / "train_report.jsonl")
    log.info("%s: best epoch %d, val top-1 %.4f, bundle %s", args.model, report.best_epoch,
             report.best_val_top1, bundle.version)


def cmd_evaluate(args):
    from .bundle import load_bundle
    from .catalog import Scenario, load_dataset
    from .evaluation import run_scenarios
    from .pipeline import make_splits

    cfg = _config(args)
    data = load_dataset(args.data)
    splits = make_splits(data, cfg.split)
    bundles = {}
    for path in args.bundle:
        b = load_bundle(path)
        bundles[b.model_type] = b
    scenarios = tuple(Scenario) if args.scenarios == "all" else tuple(
        Scenario(s.strip()) for s in args.scenarios.split(","))
    report = run_scenarios(bundles, splits.test, data, splits.train, scenarios)
    for p in report.write(args.out):
        log.info("wrote %s", p)
    print(report.to_table(), end="")


def cmd_ablate(args):
    from .catalog import load_dataset
    from .pipeline import make_splits, run_ablation

    cfg = _config(args)
    data = load_dataset(args.data)
    splits = make_splits(data, cfg.split)
    report = run_ablation(args.axis, cfg, data, splits, args.models.split(","))
    for p in report.write(args.out):
        log.info("wrote %s", p)
    print(report.to_csv(), end="")


def cmd_bench(args):
    from .latencybench import BenchConfig, bench_model, emit_bench_report, synthetic_bundle

    cfg = BenchConfig(batch_sizes=args.batch_sizes, history_lengths=args.history_lengths, warmup=args.warmup,
                      iterations=args.iterations, seed=args.seed or 0, threads=args.threads)
    rows = []
    targets = list(args.bundles or []) or [m.strip() for m in args.models.split(",")]
    for target in targets:
        bundle = target if args.bundles else synthetic_bundle(target, seed=args.seed or 0)
        rows.extend(bench_model(bundle, cfg))
        log.info("benched %s", target)
    for p in emit_bench_report(rows, args.out):
        log.info("wrote %s", p)


def _requests(args) -> list[dict]:
    if args.requests:
        with open(args.requests) as fh:
            return [json.loads(line) for line in fh if line.strip()]
    from .catalog import load_dataset
    from .pipeline import make_splits
    from .service.core import request_from_instance

    data = load_dataset(args.from_data)
    test = make_splits(data).test[: args.limit]
    return [request_from_instance(inst, data.scales, args.k) for inst in test]


def cmd_predict(args):
    reqs = _requests(args)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        if args.url:
            from .service.client import Client

            with Client(args.url) as client:
                for req in reqs:
                    resp = client.recommend(req)
                    out.write(resp.model_dump_json(exclude={"served_ms"}) + "\n")
        else:
            from .bundle import load_bundle
            from .service.core import recommend

            bundle = load_bundle(args.bundle)
            for req in reqs:
                resp = recommend(req, bundle)
                out.write(resp.model_dump_json(exclude={"served_ms"}) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_serve(args):
    from .service.app import serve

    serve(args.bundle, args.host, args.port, args.cache_capacity, args.log_level)


def cmd_run(args):
    from .pipeline import run_pipeline

    manifest = run_pipeline(_config(args), args.out, args.ablations.split(",") if args.ablations else ())
    _write_json(manifest, None)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sizerec", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic dataset")
    p.add_argument("--config", default="default", help="YAML file or bundled config name")
    p.add_argument("--set", type=_kv, action="append", metavar="KEY=VALUE", help="generator override")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train one model and write its bundle")
    p.add_argument("--model", required=True, choices=["pmcv", "sfnet", "ssp-lstm", "ssp-attn"])
    p.add_argument("--data", required=True)
    p.add_argument("--config", default="default")
    p.add_argument("--set", type=_kv, action="append", metavar="KEY=VALUE", help="training override")
    p.add_argument("--out", required=True, help="bundle directory")
    p.add_argument("--report", default=None, help="TrainReport JSONL (default: <out>/train_report.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="scenario table for one or more bundles")
    p.add_argument("--bundle", required=True, action="append")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default="default", help="only the split ratios are used")
    p.add_argument("--scenarios", default="all")
    p.add_argument("--out", default="reports")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="Add2Bag or return_reason ablation")
    p.add_argument("--axis", required=True, choices=["add2bag", "return-reason"])
    p.add_argument("--data", required=True)
    p.add_argument("--config", default="default")
    p.add_argument("--models", default="ssp-lstm,ssp-attn")
    p.add_argument("--out", default="reports")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="CPU latency sweep")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--bundles", nargs="+", help="bundle directories")
    src.add_argument("--models", default="sfnet,ssp-lstm,ssp-attn",
                     help="untrained full-size models (used when --bundles is absent)")
    p.add_argument("--batch-sizes", type=_csv_ints, default=[1, 8, 32, 128])
    p.add_argument("--history-lengths", type=_csv_ints, default=[5, 10, 20, 30, 40])
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="bench")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("predict", help="rank sizes for JSONL requests")
    p.add_argument("--bundle", help="bundle directory (offline mode)")
    p.add_argument("--url", help="service base URL (client mode)")
    reqs = p.add_mutually_exclusive_group(required=True)
    reqs.add_argument("--requests", help="JSONL file of request bodies")
    reqs.add_argument("--from-data", help="build requests from a dataset's test split")
    p.add_argument("--limit", type=int, default=100)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--bundle", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--cache-capacity", type=int, default=10_000)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("run", help="generate, train every model, evaluate")
    p.add_argument("--config", default="default")
    p.add_argument("--ablations", default="", help="comma list of add2bag,return-reason")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "predict" and not (args.bundle or args.url):
        parser.error("predict needs --bundle or --url")
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        args.func(args)
    except SizeRecError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2
    except FileNotFoundError as exc:
        log.error("file not found: %s", exc.filename)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
