"""Command line entry point: ``genrebilstm {synth,extract,train,eval,predict,compare}``.

Exit codes: 0 success, 1 partial failure, 2 invalid input or configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from datetime import datetime, timezone
from pathlib import Path

from . import baselines, nn_core, pipeline, plots, train_eval
from .audio_io import read_wav
from .config import RunConfig, load_config
from .errors import InputError
from .features import save_norm_stats
from .synth import generate_synthetic

log = logging.getLogger("genrebilstm")

EXIT_OK, EXIT_PARTIAL, EXIT_INVALID = 0, 1, 2


class CommandError(Exception):
    def __init__(self, message, code=EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _common(parser):
    parser.add_argument("--config", type=Path, help="key = value config file")
    parser.add_argument("--set", "-s", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, help="random seed (u64)")
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded, timestamp-free outputs")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--quiet", "-q", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genrebilstm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _common(common)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic WAV corpus + manifest")
    p.add_argument("--per-class", type=int, default=10)

    p = sub.add_parser("extract", parents=[common], help="segment and featurize a manifest")
    p.add_argument("manifest", type=Path)

    p = sub.add_parser("train", parents=[common], help="train the Bi-LSTM on a feature directory")
    p.add_argument("features", type=Path)

    p = sub.add_parser("eval", parents=[common], help="evaluate a model on one split")
    p.add_argument("model", type=Path)
    p.add_argument("features", type=Path)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")

    p = sub.add_parser("predict", parents=[common], help="classify one WAV file")
    p.add_argument("model", type=Path)
    p.add_argument("audio", type=Path)
    p.add_argument("--json", action="store_true", help="structured output")

    p = sub.add_parser("compare", parents=[common], help="baselines vs Bi-LSTM on one split")
    p.add_argument("features", type=Path)
    return parser


def _resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise CommandError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.deterministic:
        overrides["deterministic"] = "true"
    return load_config(args.config, overrides)


def _out_dir(args, required=True) -> Path | None:
    if args.out is None:
        if required:
            raise CommandError(f"{args.command} needs --out DIR")
        return None
    return args.out


def _prepare_out(out: Path, config: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(config.to_text(), encoding="utf-8")


def _timestamp(config: RunConfig) -> str:
    if config.deterministic:
        return pipeline.FIXED_TIMESTAMP
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _thread_guard(config: RunConfig):
    if not config.deterministic:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=1)


# --- commands -------------------------------------------------------------------


def cmd_synth(args, config):
    out = _out_dir(args)
    _prepare_out(out, config)
    manifest = generate_synthetic(out, config.seed, args.per_class)
    print(f"wrote {len(manifest)} clips and {out / 'manifest.csv'}")
    return EXIT_OK


def cmd_extract(args, config):
    out = _out_dir(args)
    manifest = train_eval.load_manifest(args.manifest)
    _prepare_out(out, config)
    summary = pipeline.extract_corpus(manifest, args.manifest.parent, out, config, _timestamp(config))
    lines = [f"{path}\t{n} segments" for path, n in summary.ok.items()]
    lines += [f"{path}\tSKIPPED\t{msg}" for path, msg in summary.failed.items()]
    (out / "extract.log").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"{len(summary.ok)} files -> {summary.n_segments} segments; {len(summary.failed)} skipped")
    if not summary.ok:
        print("no file could be extracted", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_train(args, config):
    out = _out_dir(args)
    corpus = pipeline.load_feature_dir(args.features)
    split, parts = pipeline.split_corpus(corpus, config)
    if not parts["train"]:
        raise CommandError("training split is empty")
    _prepare_out(out, config)
    result = train_eval.train(parts["train"], parts["val"], corpus.labels, config,
                              history_path=out / "history.csv")
    meta = dict(config.to_dict(), split_hash=split.digest())
    nn_core.save_model(out / "model.bmgc", result.params, result.norm, meta, corpus.labels)
    save_norm_stats(out / "norm.bmfx", result.norm, _timestamp(config))
    (out / "history.csv").write_text(result.history.to_csv(), encoding="utf-8")
    (out / "curves.svg").write_text(plots.curves_svg(result.history), encoding="utf-8")
    last = result.history.records[result.history.best_epoch - 1]
    print(f"trained {len(result.history)} epochs; best epoch {result.history.best_epoch} "
          f"(val loss {last.val_loss:.4f}, val acc {last.val_acc:.4f})")
    return EXIT_OK


def _load_model(path):
    try:
        return nn_core.load_model(path)
    except OSError as exc:
        raise CommandError(f"cannot read model {path}: {exc}") from None


def cmd_eval(args, config):
    out = _out_dir(args)
    params, norm, meta = _load_model(args.model)
    corpus = pipeline.load_feature_dir(args.features)
    if meta.get("genres") != corpus.labels:
        raise CommandError(f"label set mismatch: model {meta.get('genres')} vs features {corpus.labels}")
    trained = RunConfig.from_dict(meta.get("config", {}))
    split, parts = pipeline.split_corpus(corpus, trained)
    stored = meta.get("config", {}).get("split_hash")
    if stored and stored != split.digest() and args.split != "all":
        log.warning("split differs from the one used in training (%s vs %s)", split.digest(), stored)
    segs = corpus.segments if args.split == "all" else parts[args.split]
    if not segs:
        raise CommandError(f"split {args.split!r} is empty")
    report = train_eval.evaluate(params, norm, segs, corpus.labels)
    _prepare_out(out, config)
    (out / "report.csv").write_text(report.report_csv(), encoding="utf-8")
    (out / "confusion.csv").write_text(report.confusion_csv(), encoding="utf-8")
    (out / "confusion.svg").write_text(plots.confusion_svg(report.confusion, report.labels),
                                       encoding="utf-8")
    print(report.format_table())
    return EXIT_OK


def cmd_predict(args, config):
    params, norm, meta = _load_model(args.model)
    try:
        clip = read_wav(args.audio)
    except OSError as exc:
        raise CommandError(f"cannot read {args.audio}: {exc}") from None
    trained = RunConfig.from_dict(meta.get("config", {}))
    labels = meta["genres"]
    result = train_eval.predict(params, norm, clip, labels, trained)
    out = _out_dir(args, required=False)
    if out is not None:
        _prepare_out(out, config)
    ranked = result.ranked(labels)
    if args.json:
        print(json.dumps({
            "audio": str(args.audio),
            "segments": [[{"genre": g, "probability": p} for g, p in seg] for seg in ranked],
            "label": result.label,
        }, indent=2))
    else:
        for k, seg in enumerate(ranked):
            top = ", ".join(f"{g} {p:.3f}" for g, p in seg[:3])
            print(f"segment {k}: {top}")
        print(f"label: {result.label}")
    return EXIT_OK


def cmd_compare(args, config):
    out = _out_dir(args)
    corpus = pipeline.load_feature_dir(args.features)
    split, parts = pipeline.split_corpus(corpus, config)
    if not parts["train"] or not parts["test"]:
        raise CommandError("train or test split is empty")
    _prepare_out(out, config)
    table = baselines.compare(parts["train"], parts["val"], parts["test"], corpus.labels,
                              config, split.digest())
    (out / "comparison.csv").write_text(table.to_csv(), encoding="utf-8")
    (out / "comparison.txt").write_text(table.format_table() + "\n", encoding="utf-8")
    print(table.format_table())
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "extract": cmd_extract, "train": cmd_train,
    "eval": cmd_eval, "predict": cmd_predict, "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        config = _resolve_config(args)
        with _thread_guard(config):
            return COMMANDS[args.command](args, config)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InputError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
