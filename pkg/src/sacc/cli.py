"""Command-line entry point.

Subcommands: ``train``, ``enhance``, ``eval``, ``analyze-crf``,
``export-curve``, ``generate-corpus``. Every run echoes its fully resolved
config into its report, writes outputs into a temporary sibling directory,
and promotes it atomically on success. All randomness flows from ``--seed``.
``SACC_THREADS`` caps BLAS worker threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from .errors import ConfigError, SaccError

SCHEMA_VERSION = 1


def _limit_threads() -> None:
    value = os.environ.get("SACC_THREADS")
    if not value:
        return
    n = str(int(value))
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, n)
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(int(n))
    except ImportError:
        pass  # env vars above cover the pre-import case


def _parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _load_train_config(args) -> "TrainConfig":
    from .training import TrainConfig

    raw = {}
    if args.config:
        raw.update(json.loads(Path(args.config).read_text()))
    raw.update(_parse_overrides(args.override))
    if args.seed is not None:
        raw["seed"] = args.seed
    return TrainConfig.from_dict(raw)


class OutputDir:
    """Stage results in a temp dir, promote with one atomic rename."""

    def __init__(self, target):
        self.target = Path(target)
        if self.target.exists():
            raise ConfigError(f"output directory {self.target} already exists")
        self.target.parent.mkdir(parents=True, exist_ok=True)
        self.staging = Path(tempfile.mkdtemp(
            prefix=self.target.name + ".tmp-", dir=self.target.parent))

    def path(self, name: str) -> Path:
        return self.staging / name

    def promote(self) -> None:
        os.replace(self.staging, self.target)

    def discard(self) -> None:
        import shutil

        shutil.rmtree(self.staging, ignore_errors=True)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _resolve_corpus(args, cfg):
    from .data import build_desk_corpus, load_corpus

    if args.corpus:
        return load_corpus(args.corpus)
    if not args.generate_corpus:
        raise ConfigError("no corpus: pass --corpus MANIFEST or "
                          "--generate-corpus")
    return build_desk_corpus(cfg.seed, n_train=cfg.corpus_train,
                             n_test=cfg.corpus_test, size=cfg.image_size,
                             bit_depth=cfg.bit_depth,
                             degradation=cfg.degradation())


def cmd_generate_corpus(args) -> int:
    from .data import save_corpus

    cfg = _load_train_config(args)
    out = OutputDir(args.out)
    try:
        corpus = _resolve_corpus(argparse.Namespace(corpus=None,
                                                    generate_corpus=True),
                                 cfg)
        save_corpus(corpus, out.staging)
        _write_json(out.path("report.json"), {
            "schema_version": SCHEMA_VERSION,
            "command": "generate-corpus",
            "config": cfg.to_dict(),
            "images": {"train": len(corpus.normal_train),
                       "test": len(corpus.normal_test)},
        })
    except BaseException:
        out.discard()
        raise
    out.promote()
    print(f"corpus written to {out.target}")
    return 0


PHASE_FLAGS = {
    "downstream": "downstream",
    "n": "pretext_normal",
    "l": "curve_low",
    "plus": "finetune_plus",
}


def cmd_train(args) -> int:
    from .params import load_checkpoint, restore_into, save_checkpoint
    from .training import ALL_PHASES, MetricsLog, SaccModels, run_pipeline

    cfg = _load_train_config(args)
    if args.phase == "all":
        phases = list(ALL_PHASES)
    else:
        try:
            phases = [PHASE_FLAGS[p] for p in args.phase.split(",")]
        except KeyError as exc:
            raise ConfigError(f"unknown phase {exc.args[0]!r}") from None

    models = SaccModels(cfg)
    if args.checkpoint:
        arrays, _ = load_checkpoint(args.checkpoint)
        restore_into(models.store, arrays)
        state_path = Path(args.checkpoint).with_suffix(".state.json")
        if state_path.exists():
            models.completed = set(json.loads(
                state_path.read_text())["phases_completed"])

    needed = {"pretext_normal": "downstream", "curve_low": "pretext_normal"}
    for phase in phases:
        dep = needed.get(phase)
        if dep and dep not in models.completed and dep not in phases:
            raise ConfigError(
                f"phase {phase} requires completed phase {dep}; train it "
                f"first or pass a checkpoint that includes it")

    corpus = _resolve_corpus(args, cfg)
    out = OutputDir(args.out)
    try:
        metrics = MetricsLog(out.path("metrics.jsonl"))
        report, models = run_pipeline(cfg, corpus=corpus, phases=phases,
                                      metrics=metrics, models=models)
        metrics.close()
        report["command"] = "train"
        save_checkpoint(models.store, out.path("checkpoint.sacc"))
        _write_json(out.path("checkpoint.state.json"),
                    {"schema_version": SCHEMA_VERSION,
                     "phases_completed": sorted(models.completed)})
        _write_json(out.path("report.json"), report)
    except BaseException:
        out.discard()
        raise
    out.promote()
    ev = report.get("eval", {})
    for key in ("normal", "baseline_dark", "sacc", "sacc_plus"):
        if key in ev:
            print(f"{key}: {ev[key]:.4f}")
    print(f"outputs in {out.target}")
    return 0


def _load_models(args):
    from .params import load_checkpoint, restore_into
    from .training import SaccModels, TrainConfig

    cfg = _load_train_config(args)
    models = SaccModels(cfg)
    arrays, _ = load_checkpoint(args.checkpoint)
    restore_into(models.store, arrays)
    state_path = Path(args.checkpoint).with_suffix(".state.json")
    if state_path.exists():
        models.completed = set(json.loads(
            state_path.read_text())["phases_completed"])
    return cfg, models


def cmd_enhance(args) -> int:
    from .curves import export_curve_csv
    from .data import load_images, save_images
    from .training import enhance

    cfg, models = _load_models(args)
    images = load_images(args.input, bit_depth=cfg.bit_depth)
    out = OutputDir(args.out)
    try:
        enhanced, curve_sets = enhance(images, models)
        save_images(enhanced, out.staging, fmt=args.format)
        for i, curves in enumerate(curve_sets):
            export_curve_csv(curves, out.path(f"{images.ids[i]}.curve.csv"))
        _write_json(out.path("report.json"), {
            "schema_version": SCHEMA_VERSION,
            "command": "enhance",
            "config": cfg.to_dict(),
            "images": len(images),
            "degenerate_channels": int(sum(c.degenerate.sum()
                                           for c in curve_sets)),
        })
    except BaseException:
        out.discard()
        raise
    out.promote()
    print(f"enhanced {len(images)} images into {out.target}")
    return 0


def cmd_eval(args) -> int:
    from .training import evaluate

    cfg, models = _load_models(args)
    corpus = _resolve_corpus(args, cfg)
    out = OutputDir(args.out)
    try:
        results = evaluate(models, corpus,
                           with_plus="finetune_plus" in models.completed)
        _write_json(out.path("report.json"), {
            "schema_version": SCHEMA_VERSION,
            "command": "eval",
            "config": cfg.to_dict(),
            "eval": results,
        })
    except BaseException:
        out.discard()
        raise
    out.promote()
    print(f"baseline (dark): {results['baseline_dark']:.4f}")
    print(f"SACC:            {results['sacc']:.4f}")
    if "sacc_plus" in results:
        print(f"SACC+:           {results['sacc_plus']:.4f}")
    return 0


def cmd_analyze_crf(args) -> int:
    from .data import analyze_crf_dataset, parse_crf_file, \
        synthetic_concave_records

    if args.input:
        records = parse_crf_file(args.input)
        source = str(args.input)
    else:
        records = synthetic_concave_records()
        source = "bundled-synthetic"
    stats = analyze_crf_dataset(records)
    out = OutputDir(args.out)
    try:
        _write_json(out.path("report.json"), {
            "schema_version": SCHEMA_VERSION,
            "command": "analyze-crf",
            "source": source,
            "curves": len(records),
            "negative_fraction": stats.negative_fraction,
            "per_curve": [
                {"name": n, "negative_fraction": f, "class": c}
                for n, f, c in zip(stats.curve_names,
                                   stats.curve_negative_fractions,
                                   stats.curve_classes)],
        })
    except BaseException:
        out.discard()
        raise
    out.promote()
    print(f"curves: {len(records)}")
    print(f"negative second-difference fraction: {stats.negative_fraction:.4f}")
    return 0


def cmd_export_curve(args) -> int:
    from .curves import export_curve_csv
    from .data import load_images
    from .training import enhance

    cfg, models = _load_models(args)
    images = load_images(args.image, bit_depth=cfg.bit_depth)
    out = OutputDir(args.out)
    try:
        _, curve_sets = enhance(images.select([0]), models)
        export_curve_csv(curve_sets[0], out.path("curve.csv"))
        _write_json(out.path("report.json"), {
            "schema_version": SCHEMA_VERSION,
            "command": "export-curve",
            "config": cfg.to_dict(),
            "probe": images.ids[0],
            "degenerate_channels": int(curve_sets[0].degenerate.sum()),
        })
    except BaseException:
        out.discard()
        raise
    out.promote()
    print(f"curve written to {out.target / 'curve.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sacc",
        description="Concave-curve illumination enhancement with "
                    "self-supervised adaptation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="config override")
        if needs_out:
            p.add_argument("--out", required=True,
                           help="output directory (must not exist)")

    p = sub.add_parser("generate-corpus", help="write the synthetic corpus")
    common(p)
    p.set_defaults(func=cmd_generate_corpus)

    p = sub.add_parser("train", help="run the training pipeline")
    common(p)
    p.add_argument("--phase", default="all",
                   help="comma list of downstream,n,l,plus (default all)")
    p.add_argument("--checkpoint", help="resume from a checkpoint")
    p.add_argument("--corpus", help="manifest.json of a saved corpus")
    p.add_argument("--generate-corpus", action="store_true",
                   help="generate the corpus in memory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance images with a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True,
                   help="image file or directory (PPM/PNG)")
    p.add_argument("--format", default="ppm", choices=("ppm", "png"))
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="baseline/SACC/SACC+ accuracies")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", help="manifest.json of a saved corpus")
    p.add_argument("--generate-corpus", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-crf", help="second-difference statistics")
    common(p)
    p.add_argument("--input", help="CRF text file (default: bundled "
                                   "synthetic concave set)")
    p.set_defaults(func=cmd_analyze_crf)

    p = sub.add_parser("export-curve", help="dump the curve for one image")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="probe image file")
    p.set_defaults(func=cmd_export_curve)
    return parser


def main(argv=None) -> int:
    _limit_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SaccError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
