"""Command-line entry points: dataset generation, training, inference,
and the two evaluation protocols.

Exit codes: 0 success, 2 validation/config errors, 3 I/O and parse errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ModelConfig
from .data import (
    load_boundaries,
    load_dataset,
    load_image,
    load_manifest,
    load_mask,
    probabilities_to_bytes,
    save_mask,
    write_pgm_stack,
)
from .errors import (
    ConfigError,
    InvalidArgumentError,
    InvalidStateError,
    PgmParseError,
    ValidationError,
)
from .infer import predict
from .metrics import (
    MatchTolerance,
    average_precision,
    evaluate_boundaries,
    evaluate_segmentation,
    mf_ods,
    miou,
)
from .model import PyramidContextNet
from .report import write_boundary_report, write_segmentation_report
from .train import train_model


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pyrseg",
        description="Joint semantic segmentation and boundary detection "
        "with iterative pyramid context refinement.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=4)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run inference on an image or dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--flip", action="store_true",
                   help="average predictions with the mirrored image")
    p.add_argument("--dump-gradient", action="store_true",
                   help="also write the derived boundary maps")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval-seg", help="mean IoU over predicted masks")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval_seg)

    p = sub.add_parser("eval-bsd", help="boundary MF(ODS)/AP over predictions")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--nms", action="store_true",
                   help="thin predictions before thresholding")
    p.add_argument("--tolerance", type=float, default=0.00375)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval_bsd)
    return parser


def cmd_gen_data(args):
    from .data import generate_synthetic, save_dataset

    samples = generate_synthetic(args.seed, args.count, args.size, args.classes)
    save_dataset(args.out, samples, args.classes)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args):
    config = ModelConfig.from_json(args.config)
    samples = load_dataset(args.data)

    def progress(epoch, row):
        print(
            f"epoch {epoch}: iter {row['iter']} lr {row['lr']:.3e} "
            f"total {row['total']:.6f}"
        )

    result = train_model(config, samples, out_dir=args.out, progress=progress)
    print(
        f"finished {config.epochs} epochs ({len(result.rows)} iterations); "
        f"checkpoint at {result.checkpoint_dir}"
    )
    return 0


def _write_prediction(out_dir, sample_id, pred, classes, dump_gradient):
    names = {"id": sample_id, "classes": classes,
             "mask": f"{sample_id}_predmask.pgm",
             "boundary_probs": f"{sample_id}_boundary.pgm"}
    save_mask(out_dir / names["mask"], pred["pred_mask"])
    write_pgm_stack(out_dir / names["boundary_probs"],
                    probabilities_to_bytes(pred["boundary_probs"]))
    if dump_gradient:
        names["gradient"] = f"{sample_id}_gradient.pgm"
        write_pgm_stack(out_dir / names["gradient"],
                        probabilities_to_bytes(pred["gradient"]))
    return names


def cmd_infer(args):
    model = PyramidContextNet.load_checkpoint(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    input_path = Path(args.input)
    entries = []
    if input_path.is_dir():
        samples = load_dataset(input_path)
        for sample in samples:
            pred = predict(model, sample.image, flip=args.flip)
            entries.append(
                _write_prediction(out_dir, sample.id, pred,
                                  model.config.classes, args.dump_gradient)
            )
    else:
        image = load_image(input_path)
        pred = predict(model, image, flip=args.flip)
        entries.append(
            _write_prediction(out_dir, input_path.stem, pred,
                              model.config.classes, args.dump_gradient)
        )
    entries.sort(key=lambda e: e["id"])
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(entries, fh, indent=1)
        fh.write("\n")
    print(f"wrote {len(entries)} predictions to {out_dir}")
    return 0


def _paired_entries(pred_dir, gt_dir):
    pred_entries = {e["id"]: e for e in load_manifest(pred_dir)}
    gt_entries = {e["id"]: e for e in load_manifest(gt_dir)}
    missing_pred = sorted(set(gt_entries) - set(pred_entries))
    missing_gt = sorted(set(pred_entries) - set(gt_entries))
    if missing_pred or missing_gt:
        parts = []
        if missing_pred:
            parts.append(f"ids missing from predictions: {', '.join(missing_pred)}")
        if missing_gt:
            parts.append(f"ids missing from ground truth: {', '.join(missing_gt)}")
        raise ValidationError("; ".join(parts))
    ids = sorted(gt_entries)
    return [(i, pred_entries[i], gt_entries[i]) for i in ids]


def cmd_eval_seg(args):
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    pairs = _paired_entries(pred_dir, gt_dir)
    classes = int(pairs[0][2]["classes"])
    preds = [load_mask(pred_dir / p["mask"], classes) for _, p, _ in pairs]
    gts = [load_mask(gt_dir / g["mask"], classes) for _, _, g in pairs]
    confusion = evaluate_segmentation(preds, gts, classes)
    per_class, mean = miou(confusion)
    out_dir = Path(args.out) if args.out else pred_dir / "eval-seg"
    write_segmentation_report(out_dir, per_class, mean)
    print(f"mIoU {mean:.4f} over {len(pairs)} images; report in {out_dir}")
    return 0


def cmd_eval_bsd(args):
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    pairs = _paired_entries(pred_dir, gt_dir)
    classes = int(pairs[0][2]["classes"])
    probs = [load_image(pred_dir / p["boundary_probs"]) for _, p, _ in pairs]
    bits = [load_boundaries(gt_dir / g["boundaries"]) for _, _, g in pairs]
    acc = evaluate_boundaries(
        probs, bits, classes, tol=MatchTolerance(args.tolerance),
        apply_nms=args.nms,
    )
    mf_per, mf_mean = mf_ods(acc)
    ap_per, ap_mean = average_precision(acc)
    out_dir = Path(args.out) if args.out else pred_dir / "eval-bsd"
    write_boundary_report(out_dir, acc, mf_per, mf_mean, ap_per, ap_mean)
    print(
        f"MF(ODS) {mf_mean:.4f} AP {ap_mean:.4f} over {len(pairs)} images; "
        f"report in {out_dir}"
    )
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PgmParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValidationError, InvalidArgumentError,
            InvalidStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
