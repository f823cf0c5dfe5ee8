"""Command-line front end.

Subcommands: phantom | project | bank build | score | localize | eval |
segment-eval. Every subcommand is a pure function of (config, input files);
outputs are byte-stable across reruns and across --jobs settings. Errors
exit with the code of their class; 0 is success.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import InsufficientDataError, InvalidArgumentError, MvpadError
from .evaluation import fold_metrics, roc_auc, summarize_folds
from .memory_bank import bank_filename, load_bank, save_bank
from .phantom import generate_dataset
from .pipeline import (
    build_banks,
    calibrate_from_cases,
    compute_case_features,
    load_manifest_cases,
    localize_case,
    parallel_map,
    patient_score,
    raw_scores,
)
from .projection import ProjectionType
from .segmentation import dice, iou, threshold_segment_phantom
from .volume import Volume, save_volume

SCORES_HEADER = ["case_id", "score", "label"]


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    if getattr(args, "unsegmented", False):
        cfg = cfg.with_overrides(unsegmented=True)
    return cfg


def _write_json(data: dict, out_path: str | None) -> None:
    text = json.dumps(data, indent=2)
    if out_path:
        Path(out_path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _load_banks(banks_dir, cfg: RunConfig) -> dict[ProjectionType, object]:
    banks = {}
    for ptype in cfg.ptypes:
        path = Path(banks_dir) / bank_filename(ptype)
        if not path.is_file():
            raise InvalidArgumentError(f"missing bank file {path}")
        banks[ptype] = load_bank(path)
    return banks


# ---------------------------------------------------------------------------
# Subcommand bodies


def _cmd_phantom(args) -> int:
    cfg = _load_config(args)
    dims = tuple(int(d) for d in args.dims.split(",")) if args.dims else (64, 96, 96)
    if len(dims) != 3:
        raise InvalidArgumentError(f"--dims needs Z,Y,X, got {args.dims!r}")
    manifest = generate_dataset(
        n_normal=args.normal,
        n_abnormal=args.abnormal,
        seed=cfg.seed,
        out_dir=args.out,
        dims=dims,
        vessel_count=args.vessels,
    )
    print(manifest)
    return 0


def _cmd_project(args) -> int:
    cfg = _load_config(args)
    cases, records = load_manifest_cases(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_one(record) -> None:
        case = cases[record.case_id]
        feats = compute_case_features(case, cfg)
        sidecar = {"case_id": case.case_id, "method": cfg.method, "projections": {}}
        for ptype in cfg.ptypes:
            img = feats.images[ptype]
            mask = feats.masks[ptype]
            img_vol = Volume(img.pixels[None, :, :], (1.0, 1.0, 1.0))
            mask_vol = Volume(mask.pixels[None, :, :], (1.0, 1.0, 1.0))
            save_volume(img_vol, out_dir / f"{case.case_id}_{ptype.value}_img.mvol")
            save_volume(mask_vol, out_dir / f"{case.case_id}_{ptype.value}_mask.mvol")
            sidecar["projections"][ptype.value] = img.geometry.to_dict()
        with open(out_dir / f"{case.case_id}_projection.json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2)
            fh.write("\n")

    parallel_map(run_one, records, args.jobs)
    return 0


def _cmd_bank_build(args) -> int:
    cfg = _load_config(args)
    cases, records = load_manifest_cases(args.manifest)
    bad = [r.case_id for r in records if r.label != "normal"]
    if bad:
        raise InvalidArgumentError(f"bank training manifest must be all-normal; abnormal: {bad}")
    feats = parallel_map(
        lambda r: compute_case_features(cases[r.case_id], cfg), records, args.jobs
    )
    banks = build_banks(feats, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for ptype, bank in banks.items():
        save_bank(bank, out_dir / bank_filename(ptype))
    with open(out_dir / "extractor.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.extractor.to_dict(), fh, indent=2)
        fh.write("\n")
    return 0


def _cmd_score(args) -> int:
    cfg = _load_config(args)
    banks = _load_banks(args.banks, cfg)
    cal_cases, cal_records = load_manifest_cases(args.cal_manifest)
    bad = [r.case_id for r in cal_records if r.label != "normal"]
    if bad:
        raise InvalidArgumentError(f"calibration manifest must be all-normal; abnormal: {bad}")
    if len(cal_records) < 2:
        raise InsufficientDataError(f"calibration needs >= 2 normal cases, got {len(cal_records)}")
    cal_feats = parallel_map(
        lambda r: compute_case_features(cal_cases[r.case_id], cfg), cal_records, args.jobs
    )
    cal = calibrate_from_cases(cal_feats, banks, cfg, args.jobs)

    cases, records = load_manifest_cases(args.manifest)

    def score_one(record) -> tuple[str, float, str]:
        feats = compute_case_features(cases[record.case_id], cfg)
        score = patient_score(raw_scores(feats, banks, cfg), cal, cfg.ptypes)
        return record.case_id, score, record.label

    rows = parallel_map(score_one, records, args.jobs)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORES_HEADER)
        for case_id, score, label in rows:
            writer.writerow([case_id, repr(score), label])
    return 0


def _cmd_localize(args) -> int:
    cfg = _load_config(args)
    banks = _load_banks(args.banks, cfg)
    cases, records = load_manifest_cases(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_one(record) -> None:
        case = cases[record.case_id]
        feats = compute_case_features(case, cfg)
        result = localize_case(case, feats, banks, cfg)
        fused = result.fused
        save_volume(
            Volume(fused.values, fused.spacing_mm), out_dir / f"{case.case_id}_anomaly.mvol"
        )
        if not args.no_binarized:
            save_volume(
                Volume(result.binarized.astype(np.uint8), fused.spacing_mm),
                out_dir / f"{case.case_id}_binarized.mvol",
            )
        report = {
            "argmax_voxel": list(fused.argmax_voxel()),
            "max_value": float(fused.values.max()),
            "hit": result.hit,
        }
        with open(out_dir / f"{case.case_id}_localization.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")

    parallel_map(run_one, records, args.jobs)
    return 0


def _read_scores_csv(path) -> list[tuple[float, str]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SCORES_HEADER:
            raise InvalidArgumentError(f"{path}: expected header {SCORES_HEADER}, got {header}")
        pairs = []
        for row in reader:
            if len(row) != 3:
                raise InvalidArgumentError(f"{path}: bad row {row}")
            pairs.append((float(row[1]), row[2]))
    return pairs


def _cmd_eval(args) -> int:
    folds = [_read_scores_csv(path) for path in args.scores]
    summary = summarize_folds([fold_metrics(pairs) for pairs in folds])
    _write_json(summary, args.out)
    if args.roc_out:
        with open(args.roc_out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fold", "threshold", "fpr", "tpr"])
            for fold_idx, pairs in enumerate(folds):
                roc = roc_auc(pairs)
                for thr, (fpr, tpr) in zip(roc.thresholds, roc.points):
                    writer.writerow([fold_idx, repr(thr), repr(fpr), repr(tpr)])
    return 0


def _cmd_segment_eval(args) -> int:
    cases, records = load_manifest_cases(args.manifest)

    def eval_one(record) -> dict:
        case = cases[record.case_id]
        auto = threshold_segment_phantom(case.ct)
        ref = case.lungs.labeled().voxels
        auto_vox = auto.voxels
        entry = {"case_id": case.case_id}
        entry["dice"] = dice(auto_vox > 0, ref > 0)
        entry["iou"] = iou(auto_vox > 0, ref > 0)
        entry["dice_right"] = dice(auto_vox == 1, ref == 1)
        entry["dice_left"] = dice(auto_vox == 2, ref == 2)
        return entry

    rows = parallel_map(eval_one, records, args.jobs)
    report = {
        "cases": rows,
        "mean_dice": float(np.mean([r["dice"] for r in rows])),
        "mean_iou": float(np.mean([r["iou"] for r in rows])),
    }
    _write_json(report, args.out)
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_common(parser: argparse.ArgumentParser, out_required: bool = True) -> None:
    parser.add_argument("--config", help="run-config JSON path")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--jobs", type=int, default=1, help="worker threads (default 1)")
    parser.add_argument("--out", required=out_required, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvpad",
        description="Multi-view projection anomaly detection for segmented lung CT volumes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic chest phantom dataset")
    _add_common(p)
    p.add_argument("--normal", type=int, required=True, help="number of normal cases")
    p.add_argument("--abnormal", type=int, required=True, help="number of abnormal cases")
    p.add_argument("--dims", help="volume dims as Z,Y,X (default 64,96,96)")
    p.add_argument("--vessels", type=int, default=12, help="vessel count per lung pair")
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("project", help="write per-case projected images, masks and sidecars")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--unsegmented", action="store_true", help="skip lung masking")
    p.set_defaults(func=_cmd_project)

    p = sub.add_parser("bank", help="memory bank commands")
    bank_sub = p.add_subparsers(dest="bank_command", required=True)
    pb = bank_sub.add_parser("build", help="build per-projection banks from normal cases")
    _add_common(pb)
    pb.add_argument("--manifest", required=True)
    pb.add_argument("--unsegmented", action="store_true", help="skip lung masking")
    pb.set_defaults(func=_cmd_bank_build)

    p = sub.add_parser("score", help="score cases against banks, write a scores CSV")
    _add_common(p)
    p.add_argument("--manifest", required=True, help="cases to score")
    p.add_argument("--banks", required=True, help="bank directory")
    p.add_argument("--cal-manifest", required=True, help="held-out normal cases for calibration")
    p.add_argument("--unsegmented", action="store_true", help="skip lung masking")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("localize", help="fused 3D anomaly volumes and binarized masks")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--banks", required=True)
    p.add_argument("--no-binarized", action="store_true", help="skip the binarized MVOL")
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("eval", help="metrics JSON + ROC CSV from scores CSVs (one per fold)")
    _add_common(p, out_required=False)
    p.add_argument("--scores", nargs="+", required=True, help="scores CSV paths, one per fold")
    p.add_argument("--roc-out", help="write ROC points CSV here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("segment-eval", help="Dice/IoU of threshold segmentation vs stored masks")
    _add_common(p, out_required=False)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_segment_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MvpadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InvalidArgumentError("io").exit_code


if __name__ == "__main__":
    sys.exit(main())
