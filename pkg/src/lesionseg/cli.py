"""Command-line entry points: gen-data, train, predict, eval.

Exit codes: 0 on success, 1 for runtime failures (missing files, bad
data, diverged training), 2 for configuration problems (argparse keeps
its native behavior, which also exits 2).

Setting LESIONSEG_VERBOSE=1 in the environment adds progress lines on
stderr; artifact output on stdout is unaffected.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_model
from .config import ModelConfig, format_config, parse_config_file
from .data import emit_dataset, load_manifest, resize_sample
from .errors import CheckpointError, ConfigError, IngestionError, \
    ManifestError, ShapeError, TrainingDiverged
from .imgio import read_image, write_png
from .metrics import aggregate, evaluate_pair, format_summary, \
    write_histogram_csv, write_image_csv, write_summary_json
from .network import SegmentationNetwork
from .tensor import Tensor, bilinear_resize
from .train import train

VERBOSE_ENV = "LESIONSEG_VERBOSE"


def _verbose() -> bool:
    return os.environ.get(VERBOSE_ENV, "").lower() in ("1", "true", "yes",
                                                       "on")


def note(msg: str) -> None:
    """Progress chatter, enabled by the environment only."""
    if _verbose():
        print(msg, file=sys.stderr)


# (label, config overrides) for the stacked comparison, weakest first;
# the loss comparison in reports reads this order
ABLATION_VARIANTS = (
    ("base", {"use_cca": False, "use_cgl": False, "use_aux": False}),
    ("base+affinity", {"use_cca": False, "use_aux": False}),
    ("base+context", {"use_cgl": False, "use_aux": False}),
    ("base+context+affinity", {"use_aux": False}),
    ("full", {}),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lesionseg",
        description="Skin lesion segmentation: synthetic data, training, "
                    "inference, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--count", type=int, required=True,
                   help="number of samples")
    g.add_argument("--size", type=int, default=64,
                   help="square image size in pixels")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--val-fraction", type=float, default=0.0)
    g.add_argument("--test-fraction", type=float, default=0.0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train on a manifest")
    t.add_argument("--data", required=True, help="path to manifest.csv")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--split", default="train",
                   help="manifest split to train on")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--ablation-suite", action="store_true",
                   help="train the five stacked variants and print a table")
    t.add_argument("--eval-split",
                   help="with --ablation-suite: split for the metric "
                        "columns (default: val if present, else train)")
    _add_override_flags(t)
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write prediction masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="path to manifest.csv")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", help="restrict to one manifest split")
    p.add_argument("--dump-gates", action="store_true",
                   help="also write the cascade gate maps (needs a model "
                        "trained with the cascade enabled)")
    p.add_argument("--dump-affinity", action="store_true",
                   help="also write the position-affinity matrix per image")
    p.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="score predictions against a manifest")
    e.add_argument("--pred", required=True,
                   help="directory of <id>_pred.png files")
    e.add_argument("--data", required=True, help="path to manifest.csv")
    e.add_argument("--out", required=True, help="report directory")
    e.add_argument("--split", help="restrict to one manifest split")
    e.add_argument("--histogram", type=int, nargs="?", const=10,
                   metavar="BINS",
                   help="also write the jaccard histogram csv "
                        "(default 10 bins)")
    e.set_defaults(func=cmd_eval)
    return parser


_FLAG_FIELDS = (
    ("input-size", "input_size", int),
    ("c-ctx", "c_ctx", int),
    ("lr0", "lr0", float),
    ("momentum", "momentum", float),
    ("poly-power", "poly_power", float),
    ("dice-weight", "dice_weight", float),
    ("total-iters", "total_iters", int),
    ("batch-size", "batch_size", int),
    ("seed", "seed", int),
    ("checkpoint-every", "checkpoint_every", int),
)
_SWITCH_FIELDS = (
    ("no-cca", "use_cca", "disable the cascaded context path"),
    ("no-cgl", "use_cgl", "disable the local affinity path"),
    ("no-aux", "use_aux", "disable the auxiliary supervision branch"),
    ("no-augment", "augment", "train without augmentation"),
    ("no-norm", "norm", "build all conv layers without normalization"),
)


def _add_override_flags(sub):
    for flag, _, typ in _FLAG_FIELDS:
        sub.add_argument(f"--{flag}", type=typ, default=None)
    for flag, _, help_text in _SWITCH_FIELDS:
        sub.add_argument(f"--{flag}", action="store_true", help=help_text)


def resolve_config(args) -> ModelConfig:
    """Defaults, then the config file, then explicit flags."""
    values = ModelConfig().to_dict()
    if args.config:
        values.update(parse_config_file(args.config))
    for flag, field, _ in _FLAG_FIELDS:
        v = getattr(args, flag.replace("-", "_"))
        if v is not None:
            values[field] = v
    for flag, field, _ in _SWITCH_FIELDS:
        if getattr(args, flag.replace("-", "_")):
            values[field] = False
    return ModelConfig.from_dict(values).validate()


def cmd_gen_data(args) -> int:
    note(f"generating {args.count} samples of size {args.size} (seed {args.seed})")
    manifest = emit_dataset(args.out, args.count, args.size, args.seed,
                            val_fraction=args.val_fraction,
                            test_fraction=args.test_fraction)
    print(f"wrote {args.count} samples under {args.out}")
    print(f"manifest: {manifest}")
    return 0


def _run_one_training(cfg: ModelConfig, samples, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo = format_config(cfg)
    (out / "resolved.cfg").write_text(echo)
    sys.stdout.write(echo)
    model = SegmentationNetwork(cfg)
    progress = None
    if _verbose():
        every = max(1, cfg.checkpoint_every)

        def progress(it, lr, parts):
            if it % every == 0 or it == cfg.total_iters:
                note(f"iter {it}/{cfg.total_iters} lr={lr:.3e} "
                     f"loss={parts['total']:.4f}")
    result = train(model, cfg, samples, out, progress=progress)
    print(f"trained {result['iterations']} iterations; "
          f"final checkpoint {result['final_checkpoint']}")
    return model, result


def _mean_eval(model, cfg, samples):
    """Mean jaccard/dice of eval-mode predictions at native training size."""
    records = []
    for s in samples:
        r = resize_sample(s, cfg.input_size)
        mask, _ = model.predict(r.image.transpose(2, 0, 1)[None])
        records.append(evaluate_pair(s.sample_id, s.category,
                                     mask[0, 0], r.mask))
    rep = aggregate(records)
    return rep.overall["JA"], rep.overall["DI"]


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    samples = load_manifest(args.data, split=args.split)
    if not samples:
        raise ManifestError(
            f"{args.data}: no samples in split '{args.split}'")

    if not args.ablation_suite:
        _run_one_training(cfg, samples, args.out)
        return 0

    eval_split = args.eval_split
    if eval_split is None:
        eval_split = "val" if load_manifest(args.data, split="val") \
            else "train"
    eval_samples = load_manifest(args.data, split=eval_split)
    if not eval_samples:
        raise ManifestError(
            f"{args.data}: no samples in split '{eval_split}'")

    rows = []
    for label, overrides in ABLATION_VARIANTS:
        variant = ModelConfig.from_dict(
            {**cfg.to_dict(), **overrides}).validate()
        print(f"=== {label} ===")
        model, result = _run_one_training(
            variant, samples, Path(args.out) / label)
        ja, di = _mean_eval(model, variant, eval_samples)
        parts = result["last_parts"]
        rows.append((label, ja, di,
                     parts["wbce_main"] + variant.dice_weight
                     * parts["dice_main"]))

    head = f"{'variant':<24s} {'JA':>6s} {'DI':>6s} {'main_loss':>12s}"
    print(head)
    print("-" * len(head))
    for label, ja, di, main_loss in rows:
        print(f"{label:<24s} {ja * 100:>6.1f} {di * 100:>6.1f} "
              f"{main_loss:>12.6f}")
    (Path(args.out) / "ablation.csv").write_text(
        "variant,JA,DI,main_loss\n" + "".join(
            f"{label},{repr(ja)},{repr(di)},{repr(ml)}\n"
            for label, ja, di, ml in rows))
    return 0


def _to_uint8(arr: np.ndarray) -> np.ndarray:
    """Scale any nonnegative map to the full 8-bit range for inspection."""
    top = float(arr.max())
    if top <= 0:
        return np.zeros(arr.shape, dtype=np.uint8)
    return np.round(arr / top * 255.0).astype(np.uint8)


def cmd_predict(args) -> int:
    model, cfg, _ = load_model(args.checkpoint)
    if args.dump_gates and not cfg.use_cca:
        raise ConfigError(
            "--dump-gates needs a checkpoint trained with the context "
            "cascade enabled")
    samples = load_manifest(args.data, split=args.split)
    if not samples:
        raise ManifestError(f"{args.data}: no samples to predict")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    capture = args.dump_gates or args.dump_affinity
    model.set_training(False)
    for s in samples:
        h0, w0 = s.mask.shape
        r = resize_sample(s, cfg.input_size)
        x = Tensor._const(r.image.transpose(2, 0, 1)[None])
        result = model(x, capture=capture)
        # score at the working resolution, decide at the native one
        prob = bilinear_resize(result.main_prob, h0, w0).data[0, 0]
        write_png(out / f"{s.sample_id}_pred.png",
                  np.where(prob >= 0.5, 255, 0).astype(np.uint8))
        note(f"predicted {s.sample_id}")
        if args.dump_gates:
            for stage, info in enumerate(result.gate_details, start=2):
                for key in ("gate_image", "gate_context"):
                    gate = info[key].data[0].mean(axis=0)
                    write_png(out / f"{s.sample_id}_s{stage}_{key}.png",
                              _to_uint8(gate))
        if args.dump_affinity:
            write_png(out / f"{s.sample_id}_affinity.png",
                      _to_uint8(result.affinity_weights.data[0, 0]))
    print(f"wrote {len(samples)} prediction masks to {out}")
    return 0


def cmd_eval(args) -> int:
    samples = load_manifest(args.data, split=args.split)
    if not samples:
        raise ManifestError(f"{args.data}: no samples to score")
    pred_dir = Path(args.pred)

    # ids on one side only are listed and excluded, and the exit code
    # reports the mismatch even though the remaining pairs are scored
    wanted = {s.sample_id for s in samples}
    found = {p.name[:-len("_pred.png")]
             for p in pred_dir.glob("*_pred.png")}
    missing = sorted(wanted - found)
    extra = sorted(found - wanted)
    if missing:
        print("no prediction for: " + " ".join(missing), file=sys.stderr)
    if extra:
        print("no manifest entry for: " + " ".join(extra), file=sys.stderr)

    records = []
    for s in samples:
        if s.sample_id in found:
            records.append(_score_one(pred_dir, s))
            note(f"scored {s.sample_id}")
    if not records:
        raise IngestionError(
            f"{pred_dir}: no predictions matched the manifest")
    bins = 10 if args.histogram is None else args.histogram
    report = aggregate(records, bins=bins)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_image_csv(out / "per_image.csv", report)
    write_summary_json(out / "summary.json", report)
    if args.histogram is not None:
        write_histogram_csv(out / "ja_histogram.csv", report)
    print(format_summary(report))
    return 1 if missing or extra else 0


def _score_one(pred_dir: Path, s):
    pred_path = pred_dir / f"{s.sample_id}_pred.png"
    pred = read_image(pred_path)
    if pred.ndim != 2:
        raise IngestionError(f"{pred_path}: prediction must be grayscale")
    bad = set(np.unique(pred)) - {0, 255}
    if bad:
        raise IngestionError(
            f"{pred_path}: mask values must be 0 or 255, found {bad}")
    if pred.shape != s.mask.shape:
        raise ShapeError(
            f"{pred_path}: shape {pred.shape} does not match ground "
            f"truth {s.mask.shape}")
    return evaluate_pair(s.sample_id, s.category,
                         (pred > 127).astype(np.uint8), s.mask)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ManifestError, IngestionError, CheckpointError, ShapeError,
            TrainingDiverged, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
