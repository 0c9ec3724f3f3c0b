"""Command-line entry point: ``evgesture <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Configuration comes from JSON files; flags override individual values.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

from threadpoolctl import threadpool_limits

from . import dataset, events, lnes, stats, synth
from .model import (
    ModelConfig,
    TrainConfig,
    ablate,
    build_model,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

logger = logging.getLogger("evgesture")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def _write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


def _grid_args(conf: dict, args) -> tuple[int, int]:
    bin_ms = args.bin_ms if getattr(args, "bin_ms", None) is not None else conf.get("bin_ms", 200)
    bn = (args.frames_per_bin if getattr(args, "frames_per_bin", None) is not None
          else conf.get("frames_per_bin", 6))
    return int(round(bin_ms * 1000)), int(bn)


def _model_config(conf: dict, manifest: dict, bin_len: int, bn: int) -> ModelConfig:
    w, h = manifest["geometry"]
    base = dict(conf.get("model", {}))
    base.update(
        width=w,
        height=h,
        num_classes=len(manifest["classes"]),
        T=dataset.bins_for_duration(int(manifest["duration_us"]), bin_len),
        Bn=bn,
    )
    return ModelConfig.from_dict(base)


# -- commands ----------------------------------------------------------------


def cmd_convert(args) -> int:
    stream = events.load(args.inp, args.width, args.height)
    bin_len = int(round(args.bin_ms * 1000))
    grid, slices = events.slice_windows(stream, bin_len, frames_per_bin=args.frames_per_bin)
    vol = lnes.stack_lnes(grid, slices)
    with open(args.out, "wb") as f:
        lnes.write_volume(f, vol, bin_len, args.frames_per_bin)
    logger.info("wrote volume %s to %s", list(vol.shape), args.out)
    return 0


def cmd_synth(args) -> int:
    conf = _read_json(args.config)
    per_class = int(conf.pop("per_class", 12))
    if args.seed is not None:
        conf["seed"] = args.seed
    cfg = synth.SynthConfig.from_dict(conf)
    samples = synth.gen_dataset(cfg, per_class)
    path = synth.write_corpus(cfg, samples, args.out_dir)
    logger.info("wrote %d sequences, manifest %s", len(samples), path)
    return 0


def _train_config(conf: dict, args) -> TrainConfig:
    tc = dict(conf.get("train", {}))
    for key in ("epochs", "lr", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            tc[key] = val
    return TrainConfig(**tc)


def cmd_train(args) -> int:
    conf = _read_json(args.config)
    manifest = stats.load_manifest(args.data)
    bin_len, bn = _grid_args(conf, args)
    cfg = _model_config(conf, manifest, bin_len, bn)
    tc = _train_config(conf, args)
    if args.seed is not None:
        cfg.seed = args.seed
    load = dict(bin_len=bin_len, frames_per_bin=bn, dtype=cfg.dtype)
    train_set = dataset.from_manifest(args.data, "train", **load)
    has_val = any(e["split"] == "val" for e in manifest["samples"])
    val_set = dataset.from_manifest(args.data, "val", **load) if has_val else None
    model = build_model(cfg)
    log_path = args.log or args.out + ".log.jsonl"
    with open(log_path, "w") as logf:
        def log(rec):
            logf.write(json.dumps(rec, sort_keys=True) + "\n")
            logger.info("epoch %(epoch)d loss %(train_loss).4f", rec)
        train(model, train_set, tc, val=val_set, log=log)
    with open(args.out, "wb") as f:
        save_checkpoint(model, f)
    return 0


def cmd_eval(args) -> int:
    with open(args.ckpt, "rb") as f:
        model = load_checkpoint(f)
    cfg = model.cfg
    manifest = stats.load_manifest(args.data)
    bin_len = int(round(args.bin_ms * 1000))
    data = dataset.from_manifest(args.data, args.split, bin_len, cfg.Bn, dtype=cfg.dtype)
    res = evaluate(model, data)
    report = {"split": args.split, "classes": manifest["classes"], **res.to_dict()}
    _write_json(args.report, report)
    logger.info("accuracy %.4f", res.accuracy)
    return 0


def cmd_ablate(args) -> int:
    conf = _read_json(args.config)
    manifest = stats.load_manifest(args.data)
    bin_len, bn = _grid_args(conf, args)
    cfg = _model_config(conf, manifest, bin_len, bn)
    tc = _train_config(conf, args)
    seeds = conf.get("seeds", [0, 1, 2])
    load = dict(bin_len=bin_len, frames_per_bin=bn, dtype=cfg.dtype)
    sets = {s: dataset.from_manifest(args.data, s, **load) for s in ("train", "val", "test")}
    table = ablate(cfg, sets["train"], sets["test"], tc, seeds=seeds, val_set=sets["val"],
                   log=lambda r: logger.info("%(variant)s seed %(seed)d acc %(accuracy).3f", r))
    _write_json(args.report, {"seeds": seeds, "train": asdict(tc), "variants": table})
    return 0


def cmd_stats(args) -> int:
    report = stats.corpus_report(args.data, args.group_by)
    _write_json(args.report, report)
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(stats.histogram_csv(report["duration_histogram"]))
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evgesture", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="max BLAS threads (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("convert", help="event file -> LNES volume")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--bin-ms", type=float, default=200)
    c.add_argument("--frames-per-bin", type=int, default=6)
    c.add_argument("--width", type=int, help="sensor width (CSV input)")
    c.add_argument("--height", type=int, help="sensor height (CSV input)")
    c.set_defaults(func=cmd_convert)

    s = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    s.add_argument("--config")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    for name, func, help_ in (("train", cmd_train, "train a model"),
                              ("ablate", cmd_ablate, "four-variant module ablation")):
        t = sub.add_parser(name, help=help_)
        t.add_argument("--data", required=True)
        t.add_argument("--config")
        if name == "train":
            t.add_argument("--out", required=True)
            t.add_argument("--log")
        else:
            t.add_argument("--report", required=True)
        t.add_argument("--epochs", type=int)
        t.add_argument("--lr", type=float)
        t.add_argument("--seed", type=int)
        t.add_argument("--bin-ms", type=float)
        t.add_argument("--frames-per-bin", type=int)
        t.set_defaults(func=func)

    e = sub.add_parser("eval", help="accuracy and confusion matrix")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--bin-ms", type=float, default=200)
    e.set_defaults(func=cmd_eval)

    st = sub.add_parser("stats", help="event-rate and duration statistics")
    st.add_argument("--data", required=True)
    st.add_argument("--group-by", choices=stats.GROUP_KEYS, default="subject")
    st.add_argument("--report", required=True)
    st.add_argument("--csv", help="also write the duration table as CSV")
    st.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (events.EventFormatError, ValueError, KeyError, OSError, TypeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
