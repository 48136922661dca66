"""Command-line entry point: ``xmltk <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus, metrics, pipeline, synth
from .config import ConfigError, PipelineConfig, dump_toml, load_config

log = logging.getLogger("xmltk")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config, args.set)
    if args.model_dir:
        cfg.paths.model_dir = str(Path(args.model_dir).resolve())
    return cfg


def _cmd_synth(args) -> int:
    cfg = synth.SynthConfig(n_articles=args.n_articles, n_labels=args.n_labels,
                            terms_per_label=args.terms_per_label, seed=args.seed, n_dev=args.n_dev,
                            zipf_exponent=args.zipf_exponent)
    data = synth.generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus.save_articles(data.train, out / "train.jsonl")
    corpus.save_articles(data.dev, out / "dev.jsonl")
    corpus.save_vocabulary(data.vocab, out / "vocab.tsv")
    pc = PipelineConfig(seed=args.seed)
    (out / "config.toml").write_text(dump_toml(pc), encoding="utf-8")
    print(f"wrote {len(data.train)} training and {len(data.dev)} development articles, "
          f"{args.n_labels} labels to {out}")
    return 0


def _cmd_ingest_check(args) -> int:
    info = pipeline.cmd_ingest_check(_config(args))
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


def _cmd_train(args) -> int:
    cfg = _config(args)
    names = pipeline.INDIVIDUAL if args.model == "all" else (args.model,)
    for name in names:
        path = pipeline.cmd_train(cfg, name)
        print(f"{name}: {path}")
    return 0


def _cmd_ensemble(args) -> int:
    path = pipeline.cmd_ensemble(_config(args), figures=not args.no_figures)
    print(f"ensemble: {path}")
    return 0


def _cmd_predict(args) -> int:
    path = pipeline.cmd_predict(_config(args), args.model, args.input, args.output)
    print(f"predictions: {path}")
    return 0


def _cmd_evaluate(args) -> int:
    result = pipeline.cmd_evaluate(args.predictions, args.gold, args.json)
    print(metrics.report({Path(args.predictions).stem: result}), end="")
    return 0


def _cmd_tune(args) -> int:
    interval = tuple(args.interval) if args.interval else None
    entry = pipeline.cmd_tune_threshold(_config(args), args.model, interval, args.steps)
    print(f"{args.model}: best threshold {entry['threshold']:.4f}")
    return 0


def _cmd_report(args) -> int:
    cfg = _config(args)
    results = pipeline.cmd_report(cfg, args.split, args.out, figures=not args.no_figures)
    print(pipeline.table2(results))
    return 0


def _cmd_run(args) -> int:
    results = pipeline.run_all(_config(args), figures=not args.no_figures)
    print(pipeline.table2(results))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xmltk", description="Multi-label indexing of biomedical abstracts.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("-c", "--config", help="TOML configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a configuration value (repeatable)")
        sp.add_argument("--model-dir", help="override paths.model_dir")
        return sp

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--n-articles", type=int, default=5000)
    s.add_argument("--n-labels", type=int, default=200)
    s.add_argument("--terms-per-label", type=int, default=10)
    s.add_argument("--n-dev", type=int, default=500)
    s.add_argument("--zipf-exponent", type=float, default=1.1)
    s.add_argument("--seed", type=int, default=13)
    s.set_defaults(func=_cmd_synth)

    with_config(sub.add_parser("ingest-check", help="validate inputs and print corpus statistics")
                ).set_defaults(func=_cmd_ingest_check)

    s = with_config(sub.add_parser("train", help="train one individual model"))
    s.add_argument("model", choices=pipeline.INDIVIDUAL + ("all",))
    s.set_defaults(func=_cmd_train)

    s = with_config(sub.add_parser("ensemble", help="fit and tune the rank ensemble"))
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=_cmd_ensemble)

    s = with_config(sub.add_parser("predict", help="write JSONL predictions"))
    s.add_argument("model")
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=_cmd_predict)

    s = sub.add_parser("evaluate", help="score a predictions file against gold labels")
    s.add_argument("predictions")
    s.add_argument("gold")
    s.add_argument("--json", help="also write the metrics as JSON")
    s.set_defaults(func=_cmd_evaluate)

    s = with_config(sub.add_parser("tune-threshold", help="grid-search a decision threshold on dev"))
    s.add_argument("--model", default="ensemble", choices=("ensemble", "svm", "knn"))
    s.add_argument("--interval", type=float, nargs=2)
    s.add_argument("--steps", type=int)
    s.set_defaults(func=_cmd_tune)

    for name, func, hlp in (("report", _cmd_report, "evaluate all systems and render figures"),
                            ("run", _cmd_run, "train everything, then report")):
        s = with_config(sub.add_parser(name, help=hlp))
        s.add_argument("--no-figures", action="store_true")
        if name == "report":
            s.add_argument("--split", default="dev", choices=("dev", "test"))
            s.add_argument("--out")
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, pipeline.PipelineError, corpus.CorpusError, metrics.MetricsError,
            synth.SynthError, FileNotFoundError, ValueError) as exc:
        print(f"xmltk {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
