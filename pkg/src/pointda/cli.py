"""Command-line entry point: ``pointda <command> [options] [key=value ...]``.

Commands::

    generate-data        render a synthetic source/target pair
    train                train one model
    ablate               train every loss combination and write a report
    eval                 score a checkpoint on a labeled split
    visualize            write point overlays and entropy heatmaps
    convert-annotations  convert external point annotations to JSON

Positional ``key=value`` arguments override config entries. Every run
directory receives ``resolved_config.toml``. Errors are reported on one line
as ``error: <category>: <message>``; the exit code is 0 on success, 1 on a
runtime failure and 2 on a usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import Config, load_config, write_resolved
from .errors import ConfigError, PointDAError

logger = logging.getLogger("pointda")

RESOLVED_CONFIG = "resolved_config.toml"


def _prepare_out(path, force: bool, allow_existing: bool = False) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not (force or allow_existing):
        raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> Config:
    return load_config(args.config, args.overrides)


def _data_root(args, cfg: Config) -> Path:
    return Path(args.data or cfg.data.root)


def cmd_generate_data(args) -> int:
    from .data import generate_domain_pair

    cfg = _config(args)
    out = _prepare_out(args.out or cfg.data.root, args.force)
    generate_domain_pair(cfg.data.pair_spec(), cfg.data.n_source, cfg.data.n_target, out)
    write_resolved(cfg, out / RESOLVED_CONFIG)
    print(f"wrote {cfg.data.n_source} source and {cfg.data.n_target} target images to {out}")
    return 0


def _datasets(root: Path):
    from .data import load_dataset

    return (
        load_dataset(root, "source", "train"),
        load_dataset(root, "target", "train"),
        load_dataset(root, "source", "eval"),
        load_dataset(root, "target", "eval"),
    )


def cmd_train(args) -> int:
    from .training import train

    cfg = _config(args)
    source, target, source_eval, target_eval = _datasets(_data_root(args, cfg))
    out = _prepare_out(args.out, args.force, allow_existing=args.resume)
    write_resolved(cfg, out / RESOLVED_CONFIG)
    result = train(cfg, source, target, out, eval_sets=[source_eval, target_eval], resume=args.resume)
    for split in ("source_eval", "target_eval"):
        rec = result.final(split)
        if rec is not None:
            print(f"{split}: mae={rec.mae:.4f} mse={rec.mse:.4f} entropy={rec.mean_entropy:.4f}")
    print(f"checkpoints in {out}")
    return 0


def cmd_ablate(args) -> int:
    from .training import run_ablation

    cfg = _config(args)
    source, target, source_eval, target_eval = _datasets(_data_root(args, cfg))
    out = _prepare_out(args.out, args.force)
    write_resolved(cfg, out / RESOLVED_CONFIG)
    report = run_ablation(cfg, source, target, source_eval, target_eval, out)
    for row in report:
        print(",".join(str(row[k]) for k in row))
    failed = [r["components"] for r in report if r["status"] != "ok"]
    if failed:
        print(f"error: runtime: ablation rows failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _load_model(path):
    from .training import load_checkpoint

    state, cfg = load_checkpoint(path)
    state.model.eval()
    return state, cfg


def cmd_eval(args) -> int:
    from .data import load_dataset
    from .evaluation import evaluate, threshold_sweep, write_metrics_csv, write_per_image_csv

    state, ckpt_cfg = _load_model(args.checkpoint)
    model, name = state.model, Path(args.checkpoint).stem
    cfg = load_config(args.config, args.overrides, base=ckpt_cfg.to_dict())
    root = _data_root(args, cfg)
    out = _prepare_out(args.out, args.force)
    write_resolved(cfg, out / RESOLVED_CONFIG)
    records = []
    for domain in args.domains:
        ds = load_dataset(root, domain, "eval")
        rec = evaluate(model, ds, cfg.eval.threshold, step=state.step, name=name)
        records.append(rec)
        write_per_image_csv(out / f"per_image_{domain}.csv", rec)
        print(f"{rec.split}: mae={rec.mae:.4f} mse={rec.mse:.4f} entropy={rec.mean_entropy:.4f}")
        records += threshold_sweep(model, ds, cfg.eval.sweep, step=state.step, name=name)
    write_metrics_csv(out / "metrics.csv", records)
    return 0


def cmd_visualize(args) -> int:
    from .data import load_dataset
    from .evaluation import render_artifacts

    state, cfg = _load_model(args.checkpoint)
    model = state.model
    root = _data_root(args, cfg)
    out = _prepare_out(args.out, args.force)
    write_resolved(cfg, out / RESOLVED_CONFIG)
    ds = load_dataset(root, args.domain, "eval")
    n = min(args.limit, len(ds))
    for i in range(n):
        render_artifacts(model, ds[i], out, cfg.eval.threshold)
    print(f"wrote {2 * n} images to {out}")
    return 0


def cmd_convert(args) -> int:
    from .convert import available_formats, convert_annotations

    if args.list_formats:
        print("\n".join(available_formats()))
        return 0
    if not (args.format and args.input and args.out):
        raise ConfigError("convert-annotations needs --format, --input and --out")
    out = _prepare_out(args.out, args.force)
    written = convert_annotations(args.format, args.input, out)
    print(f"converted {len(written)} files into {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pointda", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help, out_required=True):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--force", action="store_true", help="write into a non-empty output directory")
        p.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides, e.g. train.steps=50")
        p.set_defaults(func=fn)
        return p

    add("generate-data", cmd_generate_data, "render a synthetic domain pair", out_required=False)
    p = add("train", cmd_train, "train one model")
    p.add_argument("--data", help="dataset root (default: data.root)")
    p.add_argument("--resume", action="store_true", help="continue from <out>/last.pt")
    p = add("ablate", cmd_ablate, "run the loss-combination ablation")
    p.add_argument("--data", help="dataset root (default: data.root)")
    p = add("eval", cmd_eval, "score a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset root (default: data.root)")
    p.add_argument("--domains", nargs="+", default=["source", "target"], choices=["source", "target"])
    p = add("visualize", cmd_visualize, "render overlays and entropy heatmaps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset root (default: data.root)")
    p.add_argument("--domain", default="target", choices=["source", "target"])
    p.add_argument("--limit", type=int, default=8, help="number of images")
    p = add("convert-annotations", cmd_convert, "convert external point annotations", out_required=False)
    p.add_argument("--format", help="input format name")
    p.add_argument("--input", help="file or directory to convert")
    p.add_argument("--list-formats", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PointDAError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
