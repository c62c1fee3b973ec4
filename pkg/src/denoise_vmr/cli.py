"""Command-line entry point.

Subcommands: train, eval, synth, stats, export-mask, plot-scores.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import ABLATIONS, RunConfig, ablation_config, load_config, parse_config_text
from .data import dataset_statistics, generate_synthetic, load_dataset, save_dataset
from .errors import ConfigError, DataError, NumericError
from .features import FeatureFormatError
from .plotting import render_svg, score_trace, trace_csv
from .train import Trainer, evaluate_model, run_inference, split_train_val, torch_dtype
from .validation import check_feature_dims, check_samples, feature_dims

log = logging.getLogger("denoise_vmr")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_data(p: argparse.ArgumentParser):
    p.add_argument("--annotations", help="annotation JSONL (default: data.annotation_path or synthetic)")
    p.add_argument("--features", help="feature directory with vid/ and txt/")
    p.add_argument("--synth-seed", type=int, help="seed for synthetic data (default: train.seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="denoise-vmr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoints")
    _add_common(p)
    _add_data(p)
    p.add_argument("--ablation", choices=sorted(ABLATIONS), help="apply an ablation row's switches")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    _add_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="directory for metrics.csv, predictions.jsonl, per_query.jsonl")

    p = sub.add_parser("synth", help="write a synthetic dataset")
    _add_common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("stats", help="ground-truth ratio and noisy-clip fraction per video")
    _add_common(p)
    _add_data(p)
    p.add_argument("--out", help="per-video CSV path (default: stdout)")
    p.add_argument("--hist", help="histogram CSV path")

    p = sub.add_parser("export-mask", help="write alignment scores and noise masks as JSONL")
    _add_common(p)
    _add_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("plot-scores", help="per-clip score CSV (and SVG) for one query")
    _add_common(p)
    _add_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--qid", help="query id (default: first sample)")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--svg", help="optional SVG path")
    return parser


# --------------------------------------------------------------------------
# helpers


def _config(args, base: RunConfig) -> RunConfig:
    """Checkpoint config with the command line's file and --set overrides on top."""
    flat = base.to_flat()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        flat.update(parse_config_text(path.read_text(encoding="utf-8")))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        flat[key.strip()] = value.strip()
    return RunConfig.from_flat(flat)


def _samples(args, cfg: RunConfig) -> list:
    ann = args.annotations or cfg.data.annotation_path
    feats = args.features or cfg.data.feature_dir
    if ann:
        if not feats:
            raise ConfigError("--features (or data.feature_dir) is required with annotations")
        return check_samples(load_dataset(ann, feats, cfg.data.clip_duration))
    seed = args.synth_seed if args.synth_seed is not None else cfg.train.seed
    return check_samples(_synthesize(cfg, seed))


def _synthesize(cfg: RunConfig, seed: int) -> list:
    # an infeasible generator setting is a configuration problem, not bad data
    try:
        cfg.data.synth.validate()
    except DataError as exc:
        raise ConfigError(f"data.synth: {exc}") from exc
    return generate_synthetic(cfg.data.synth, seed=seed)


def _write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# keys that may differ from the checkpoint at inference time; everything else
# describes the trained network and is fixed by the checkpoint
RUNTIME_PREFIXES = ("tcd.mu", "tcd.mask_mode", "tcd.guard_ratio", "tcd.warmup_epochs", "decoder.nms_threshold",
                    "decoder.top_k", "metrics.", "data.", "train.")


def _load_model(args):
    model, ckpt_cfg, manifest = load_checkpoint(args.checkpoint)
    cfg = _config(args, ckpt_cfg)
    before, after = ckpt_cfg.to_flat(), cfg.to_flat()
    fixed = sorted(k for k in after if after[k] != before[k] and not k.startswith(RUNTIME_PREFIXES))
    if fixed:
        raise ConfigError(f"cannot override architecture keys of a checkpoint: {', '.join(fixed)}")
    model.cfg = cfg
    return model.to(torch_dtype(cfg)), cfg, manifest


# --------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.ablation:
        cfg = ablation_config(args.ablation, cfg)
    samples = _samples(args, cfg)
    if cfg.data.val_annotation_path:
        train = samples
        val = check_samples(load_dataset(cfg.data.val_annotation_path,
                                         cfg.data.val_feature_dir or cfg.data.feature_dir,
                                         cfg.data.clip_duration))
    else:
        train, val = split_train_val(samples, cfg.train.val_fraction, cfg.train.seed)
    video_dim, text_dim = feature_dims(samples)
    trainer = Trainer(cfg, video_dim, text_dim)
    out = Path(args.out)
    result = trainer.fit(train, val, out_dir=out)
    summary = {
        "fingerprint": trainer.cfg.fingerprint(),
        "steps": result.steps,
        "epochs": result.epochs_run,
        "best_epoch": result.best_epoch,
        "best_val_r1_at_07": None if not val else result.best_metric,
        "first_total": result.history[0]["total"] if result.history else None,
        "last_total": result.history[-1]["total"] if result.history else None,
    }
    _write(out / "summary.json", json.dumps(summary, indent=1) + "\n")
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    model, cfg, _ = _load_model(args)
    samples = _samples(args, cfg)
    check_feature_dims(samples, cfg.model.video_input_dim, cfg.model.text_input_dim)
    report, records = evaluate_model(model, samples, cfg, torch_dtype(cfg))
    fp = cfg.fingerprint()
    print(report.table())
    if args.out:
        out = Path(args.out)
        _write(out / "metrics.csv", report.to_csv() + f"fingerprint,{fp}\n")
        preds = "".join(
            json.dumps({"qid": r.qid, "pred_relevant_windows": [[round(s, 4), round(e, 4), round(p, 6)]
                                                                  for s, e, p in r.candidates.windows()],
                        "fingerprint": fp}) + "\n"
            for r in records
        )
        _write(out / "predictions.jsonl", preds)
        _write(out / "per_query.jsonl", report.per_query_jsonl())
    return 0


def cmd_synth(args) -> int:
    cfg = load_config(args.config, args.set)
    samples = _synthesize(cfg, args.seed)
    out = Path(args.out)
    save_dataset(samples, out / "annotations.jsonl", out / "features")
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_stats(args) -> int:
    cfg = load_config(args.config, args.set)
    report = dataset_statistics(_samples(args, cfg))
    if args.out:
        _write(args.out, report.to_csv())
    else:
        sys.stdout.write(report.to_csv())
    if args.hist:
        _write(args.hist, report.histogram_csv())
    lo, hi = report.modal_bin("noise_fraction")
    g_lo, g_hi = report.modal_bin("gt_ratio")
    print(f"modal noise-fraction bin [{lo:.1f}, {hi:.1f}); modal gt-ratio bin [{g_lo:.1f}, {g_hi:.1f})",
          file=sys.stderr)
    return 0


def cmd_export_mask(args) -> int:
    model, cfg, manifest = _load_model(args)
    samples = _samples(args, cfg)
    check_feature_dims(samples, cfg.model.video_input_dim, cfg.model.text_input_dim)
    records = run_inference(model, samples, cfg, torch_dtype(cfg))
    warmup_ckpt = int(manifest.get("epoch", 0)) < cfg.tcd.warmup_epochs
    if warmup_ckpt:
        log.warning("checkpoint is from mask warm-up (epoch %s < %s); its masks were all ones during training",
                    manifest.get("epoch"), cfg.tcd.warmup_epochs)
    fp = cfg.fingerprint()
    lines = []
    for r in records:
        masked = float(1.0 - r.mask.mean())
        lines.append(json.dumps({
            "qid": r.qid,
            "vid": r.vid,
            "scores": [float(np.float32(v)) for v in r.scores],
            "mask": [int(v) for v in r.mask],
            "mu": cfg.tcd.mu,
            "masked_fraction": round(masked, 6),
            "guard_fired": r.guard_fired,
            "warmup_checkpoint": warmup_ckpt,
            "fingerprint": fp,
        }) + "\n")
        log.info("%s: masked fraction %.3f", r.vid, masked)
    _write(args.out, "".join(lines))
    print(f"wrote {len(lines)} masks to {args.out}; mean masked fraction "
          f"{np.mean([1 - r.mask.mean() for r in records]):.3f}")
    return 0


def cmd_plot_scores(args) -> int:
    model, cfg, _ = _load_model(args)
    samples = _samples(args, cfg)
    check_feature_dims(samples, cfg.model.video_input_dim, cfg.model.text_input_dim)
    if args.qid:
        chosen = [s for s in samples if s.qid == args.qid]
        if not chosen:
            raise DataError(f"query id {args.qid} not found")
    else:
        chosen = samples[:1]
    record = run_inference(model, chosen, cfg, torch_dtype(cfg))[0]
    trace = score_trace(record, chosen[0], cfg.tcd.mu)
    _write(args.out, trace_csv(trace, cfg.fingerprint()))
    if args.svg:
        Path(args.svg).parent.mkdir(parents=True, exist_ok=True)
        render_svg(trace, args.svg)
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "stats": cmd_stats,
    "export-mask": cmd_export_mask,
    "plot-scores": cmd_plot_scores,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FeatureFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
