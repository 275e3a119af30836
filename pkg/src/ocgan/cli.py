"""``ocgan`` command-line entry point.

Subcommands share ``--out``; each reads and writes the standard layout::

    <out>/manifest.tsv                corpus records (gen-corpus, occlude, split)
    <out>/corpus/*.ppm, *.pgm         scenes, occluded inputs, masks
    <out>/checkpoints/epoch_<k>.ogck  training checkpoints
    <out>/losses.tsv                  per-epoch loss report
    <out>/recon/*.ppm                 reconstructions (infer)
    <out>/latency.tsv                 stage<TAB>median_ms<TAB>p95_ms (infer)
    <out>/overlays/*.ppm              composites (overlay)
    <out>/eval/report.tsv             per-pair metrics (eval)
    <out>/resolved_config.txt         full configuration of the last run

Exit codes: 0 ok, 1 bad arguments/config, 2 I/O or format error,
3 numeric failure, 4 gradient check failed.  Failures print one line
``error<TAB><category><TAB><message>`` on stderr.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

from . import checkpoint as ckpt_mod
from .config import ConfigError, RunConfig
from .data import (
    CorpusManifest,
    OcclusionError,
    PairRecord,
    occlude_corpus,
    read_manifest,
    split_corpus,
    write_manifest,
    write_scene_corpus,
)
from .imageio import ImageFormatError, load_image, load_mask, save_image
from .training import NonFiniteLossError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3, 4

logger = logging.getLogger("ocgan")


class CliError(Exception):
    def __init__(self, code: int, category: str, message: str):
        super().__init__(message)
        self.code = code
        self.category = category


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_CONFIG, "config", message)


# per-subcommand flags: (flag, config key)
FLAGS = {
    "gen-corpus": [("--count", "corpus.count"), ("--image-size", "corpus.image_size")],
    "occlude": [("--coverage-lo", "occlusion.coverage_lo"), ("--coverage-hi", "occlusion.coverage_hi"),
                ("--fill", "occlusion.fill"), ("--shapes", "occlusion.shapes"),
                ("--count-min", "occlusion.count_min"), ("--count-max", "occlusion.count_max")],
    "split": [("--fraction", "split.fraction")],
    "train": [("--epochs", "train.epochs"), ("--batch-size", "train.batch_size"),
              ("--learning-rate", "train.learning_rate"), ("--l1-weight", "train.l1_weight"),
              ("--checkpoint-every", "train.checkpoint_every"), ("--depth", "model.depth"),
              ("--base-width", "model.base_width"), ("--dropout-rate", "model.dropout_rate")],
    "infer": [("--checkpoint", "infer.checkpoint"), ("--split", "infer.split"),
              ("--repetitions", "latency.repetitions")],
    "overlay": [("--alpha", "overlay.alpha"), ("--split", "infer.split")],
    "eval": [("--checkpoint", "infer.checkpoint"), ("--threshold", "eval.threshold"), ("--grids", "eval.grids")],
    "gradcheck": [],
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ocgan", description="Occluded-object reconstruction with a conditional GAN.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, flags in FLAGS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="dotted key = value configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", help="base random seed (u64)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any configuration key")
        for flag, key in flags:
            p.add_argument(flag, dest=key, metavar=key.split(".")[-1].upper(), help=f"sets {key}")
        if name == "gen-corpus":
            p.add_argument("--from-dir", help="import ground-truth P6 images from a directory instead of rendering")
        if name == "train":
            p.add_argument("--resume", help="checkpoint to resume from")
    return parser


def resolve_config(args) -> RunConfig:
    overrides: dict[str, str] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    for _, key in FLAGS[args.command]:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    if "seed" in overrides and not re.fullmatch(r"\d+", str(overrides["seed"])):
        raise ConfigError(f"seed must be a non-negative integer, got {overrides['seed']!r}")
    return RunConfig.load(args.config, overrides)


def _manifest(out: Path) -> CorpusManifest:
    path = out / "manifest.tsv"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run gen-corpus first")
    return read_manifest(path)


def _latest_checkpoint(out: Path, explicit: str) -> Path:
    if explicit:
        return Path(explicit)
    found = sorted((out / "checkpoints").glob("epoch_*.ogck"), key=lambda p: int(p.stem.split("_")[1]))
    if not found:
        raise FileNotFoundError(f"no checkpoints under {out / 'checkpoints'}; run train first")
    return found[-1]


def _split_pairs(manifest: CorpusManifest, split: str):
    records = manifest.records if split == "all" else manifest.subset(split)
    if not records:
        raise ValueError(f"manifest has no records in split {split!r}")
    return [manifest.load_pair(r) for r in records]


def cmd_gen_corpus(cfg: RunConfig, out: Path, args) -> None:
    if args.from_dir:
        src = sorted(Path(args.from_dir).glob("*.ppm"))
        if not src:
            raise FileNotFoundError(f"no .ppm images in {args.from_dir}")
        (out / "corpus").mkdir(parents=True, exist_ok=True)
        records = []
        for i, path in enumerate(src):
            pid = f"pair_{i:05d}"
            rel = f"corpus/{pid}_y.ppm"
            save_image(out / rel, load_image(path))
            records.append(PairRecord(pid, y_path=rel))
        manifest = CorpusManifest(records, out)
    else:
        manifest = write_scene_corpus(out, cfg["corpus.count"], cfg.scene_params(), cfg["seed"])
    write_manifest(out / "manifest.tsv", manifest)
    print(f"wrote {len(manifest)} scenes to {out / 'corpus'}")


def cmd_occlude(cfg: RunConfig, out: Path, args) -> None:
    manifest = occlude_corpus(_manifest(out), cfg.occlusion_config(), cfg["seed"])
    write_manifest(out / "manifest.tsv", manifest)
    print(f"occluded {len(manifest)} scenes")


def cmd_split(cfg: RunConfig, out: Path, args) -> None:
    manifest = split_corpus(_manifest(out), cfg["split.fraction"], cfg["seed"])
    write_manifest(out / "manifest.tsv", manifest)
    print(f"train {len(manifest.subset('train'))}\ttest {len(manifest.subset('test'))}")


def cmd_train(cfg: RunConfig, out: Path, args) -> None:
    from .training import train

    manifest = _manifest(out)
    pairs = manifest.load_split("train")
    if not pairs:
        raise ValueError("manifest has no train records; run split first")
    config = cfg.training_config()
    models = None
    if args.resume:
        # the checkpoint's own config wins except for the epoch target
        models, saved = ckpt_mod.models_from_checkpoint(ckpt_mod.load_checkpoint(args.resume))
        config = replace(saved, epochs=config.epochs)
    models, report = train(pairs, config, models=models, checkpoint_dir=out / "checkpoints")
    (out / "losses.tsv").write_text(report.to_tsv(), encoding="utf-8")
    print(f"trained to epoch {models.epoch}")


def cmd_infer(cfg: RunConfig, out: Path, args) -> None:
    from .overlay import format_latency, measure_latency, reconstruct

    gen = ckpt_mod.load_generator(_latest_checkpoint(out, cfg["infer.checkpoint"]))
    pairs = _split_pairs(_manifest(out), cfg["infer.split"])
    (out / "recon").mkdir(parents=True, exist_ok=True)
    for pair in pairs:
        save_image(out / "recon" / f"{pair.pair_id}_recon.ppm", reconstruct(gen, pair.x))
    summary = measure_latency(gen, pairs[0].x, pairs[0].mask, cfg["latency.repetitions"], cfg["overlay.alpha"])
    text = format_latency(summary)
    (out / "latency.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_overlay(cfg: RunConfig, out: Path, args) -> None:
    from .overlay import composite_overlay

    manifest = _manifest(out)
    records = manifest.records if cfg["infer.split"] == "all" else manifest.subset(cfg["infer.split"])
    (out / "overlays").mkdir(parents=True, exist_ok=True)
    for rec in records:
        x = load_image(manifest.resolve(rec.x_path))
        mask = load_mask(manifest.resolve(rec.mask_path))
        rec_path = out / "recon" / f"{rec.pair_id}_recon.ppm"
        if not rec_path.exists():
            raise FileNotFoundError(f"{rec_path} not found; run infer first")
        comp = composite_overlay(x, load_image(rec_path), mask, cfg["overlay.alpha"], cfg["overlay.full_frame"])
        save_image(out / "overlays" / f"{rec.pair_id}_overlay.ppm", comp)
    print(f"wrote {len(records)} overlays")


def cmd_eval(cfg: RunConfig, out: Path, args) -> None:
    from .evaluation import evaluate, generator_reconstructor

    gen = ckpt_mod.load_generator(_latest_checkpoint(out, cfg["infer.checkpoint"]))
    pairs = _manifest(out).load_split("test")
    if not pairs:
        raise ValueError("manifest has no test records; run split first")
    grid_dir = out / "eval" / "grids" if cfg["eval.grids"] else None
    (out / "eval").mkdir(parents=True, exist_ok=True)
    report = evaluate(pairs, generator_reconstructor(gen), cfg["eval.threshold"], grid_dir)
    (out / "eval" / "report.tsv").write_text(report.to_tsv(), encoding="utf-8")
    summary = "".join(f"{k}\t{v!r}\n" for k, v in report.summary().items())
    (out / "eval" / "summary.tsv").write_text(summary, encoding="utf-8")
    sys.stdout.write(summary)


def cmd_gradcheck(cfg: RunConfig, out: Path, args) -> None:
    from .gradcheck import TOLERANCE, run_suite

    results = run_suite(cfg["seed"])
    lines = [f"{r.name}\t{r.probes}\t{r.max_rel_error:.3e}\t{'ok' if r.passed else 'FAIL'}" for r in results]
    text = "op\tprobes\tmax_rel_error\tstatus\n" + "\n".join(lines) + "\n"
    (out / "gradcheck.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CliError(EXIT_CHECK, "check", f"gradient check above {TOLERANCE:g} for: {', '.join(failed)}")


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "occlude": cmd_occlude,
    "split": cmd_split,
    "train": cmd_train,
    "infer": cmd_infer,
    "overlay": cmd_overlay,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.txt").write_text(cfg.to_text(), encoding="utf-8")
        COMMANDS[args.command](cfg, out, args)
    except CliError as exc:
        return _fail(exc.code, exc.category, str(exc))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except NonFiniteLossError as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    except (OSError, ImageFormatError, ckpt_mod.CheckpointFormatError) as exc:
        return _fail(EXIT_IO, "io", str(exc))
    except (ValueError, OcclusionError) as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    return EXIT_OK


def _fail(code: int, category: str, message: str) -> int:
    message = " ".join(str(message).split())
    print(f"error\t{category}\t{message}", file=sys.stderr)
    return code


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
