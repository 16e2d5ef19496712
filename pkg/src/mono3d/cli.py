"""Batch command-line front end.

Exit codes: 0 success, 1 evaluation or contract failure, 2 I/O or
configuration error. Set ``MONO3D_LOG`` (e.g. ``DEBUG``) for verbose logs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

from .codec import CodecConfig, decode_detections, encode_frame, load_maps, save_maps
from .geometry import CameraIntrinsics
from .kitti import (
    KITTI_IMAGE_SIZE,
    MissingAnnotationError,
    ParseError,
    frames_from_json,
    parse_kitti_calib,
    parse_kitti_label_file,
)
from .metrics import (
    cityscapes_eval,
    ds_from_components_csv,
    format_cityscapes_table,
    format_kitti_table,
    kitti_eval,
)
from .pipeline import closure_frame, config_echo, summarize
from .pseudo import PseudoConfig, labels_to_jsonl, match_frame
from .synthetic import NOISE_PROFILES, SceneConfig

logger = logging.getLogger("mono3d")

EXIT_OK, EXIT_FAIL, EXIT_IO = 0, 1, 2
DEFAULT_CLASSES = ("Car", "Pedestrian", "Cyclist")


class UsageError(Exception):
    """Bad configuration or I/O problem detected before work starts (exit 2)."""


class SuiteMismatchError(UsageError):
    pass


def _setup_logging() -> None:
    level = os.environ.get("MONO3D_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _load_config(path) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None


def _codec_cfg(args, conf) -> CodecConfig:
    base = dict(conf.get("codec", {}))
    if args.stride is not None:
        base["stride"] = args.stride
    if args.fx0 is not None:
        base["f_x0"] = args.fx0
    try:
        return CodecConfig(**base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid codec config: {exc}") from None


def _pseudo_cfg(args, conf) -> PseudoConfig:
    base = dict(conf.get("pseudo", {}))
    if args.eps is not None:
        base["eps"] = args.eps
    if args.low_threshold is not None:
        base["low_score_threshold"] = args.low_threshold
    try:
        return PseudoConfig(**base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid pseudo-label config: {exc}") from None


def _prepare_out(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".mono3d_write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from None
    return out


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} directory {p} does not exist")
    return p


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _image_size(args) -> tuple[int, int]:
    return tuple(args.image_size) if args.image_size else KITTI_IMAGE_SIZE


# --- encode -----------------------------------------------------------------


def _encode_one(job):
    fid, label_path, calib_path, out, classes, cfg, image_size = job
    anns = parse_kitti_label_file(Path(label_path).read_text(), str(label_path))
    K = parse_kitti_calib(Path(calib_path).read_text(), image_size, str(calib_path))
    objects = [(classes.index(a.cls), a.to_box3d()) for a in anns if a.cls in classes and a.has_3d]
    res = encode_frame(objects, K, cfg, classes)
    save_maps(
        res.maps,
        Path(out) / f"{fid}.mddm",
        extra={"frame": fid, "camera": asdict(K), "codec": asdict(cfg)},
    )
    return {"frame": fid, "objects": len(objects), "skipped": res.skipped_count}


def cmd_encode(args, conf) -> int:
    labels = _require_dir(args.labels, "label")
    calibs = _require_dir(args.calib, "calibration")
    out = _prepare_out(args.out)
    cfg = _codec_cfg(args, conf)
    classes = tuple(args.classes.split(",")) if args.classes else DEFAULT_CLASSES
    ids = sorted(p.stem for p in labels.glob("*.txt"))
    jobs = [(fid, labels / f"{fid}.txt", calibs / f"{fid}.txt", str(out), classes, cfg, _image_size(args)) for fid in ids]
    frames, errors = [], {}
    for fid, result in zip(ids, _run(_safe(_encode_one), jobs, args.jobs)):
        if isinstance(result, str):
            errors[fid] = result
        else:
            frames.append(result)
    summary = {
        "frames": frames,
        "errors": errors,
        "encoded": len(frames),
        "skipped_objects": sum(f["skipped"] for f in frames),
        "classes": list(classes),
        "codec": asdict(cfg),
    }
    (out / "summary.json").write_text(_dump(summary))
    for fid, msg in errors.items():
        logger.error("frame %s: %s", fid, msg)
    return EXIT_FAIL if errors else EXIT_OK


class _safe:
    """Wrap a per-frame worker so parse and I/O errors come back as strings."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, job):
        try:
            return self.fn(job)
        except (OSError, ValueError) as exc:
            return str(exc)


def _run(fn, jobs, n_jobs: int):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * n_jobs))))


# --- pseudo-label -------------------------------------------------------------


def _pseudo_one(job):
    fid, map_path, label_path, codec_cfg, pseudo_cfg = job
    maps, side = load_maps(map_path)
    K = CameraIntrinsics(**side["camera"])
    names = list(maps.class_names)
    anns = parse_kitti_label_file(Path(label_path).read_text(), str(label_path))
    gt = [(names.index(a.cls), a.box2d) for a in anns if a.cls in names]
    cfg = replace(codec_cfg, stride=maps.stride)
    dets = decode_detections(maps, K, cfg, score_threshold=pseudo_cfg.low_score_threshold)
    labels, report = match_frame(dets, gt, K, pseudo_cfg)
    return {"frame": fid, "report": report.to_dict(), "num_gt": len(gt), "jsonl": labels_to_jsonl(fid, labels, names)}


def cmd_pseudo_label(args, conf) -> int:
    maps_dir = _require_dir(args.maps, "maps")
    labels_dir = _require_dir(args.labels, "2D label")
    out = _prepare_out(args.out)
    codec_cfg = _codec_cfg(args, conf)
    pseudo_cfg = _pseudo_cfg(args, conf)
    map_ids = {p.stem for p in maps_dir.glob("*.mddm")}
    label_ids = {p.stem for p in labels_dir.glob("*.txt")}
    if not label_ids:
        logger.warning("no 2D label files found in %s", labels_dir)
    ids = sorted(map_ids & label_ids)
    mismatched = sorted(map_ids ^ label_ids)
    jobs = [(fid, maps_dir / f"{fid}.mddm", labels_dir / f"{fid}.txt", codec_cfg, pseudo_cfg) for fid in ids]
    lines, frames, errors = [], [], {}
    for fid, res in zip(ids, _run(_safe(_pseudo_one), jobs, args.jobs)):
        if isinstance(res, str):
            errors[fid] = res
            continue
        lines.append(res["jsonl"])
        frames.append({"frame": fid, "num_gt": res["num_gt"], **res["report"]})
    n_gt = sum(f["num_gt"] for f in frames)
    n_match = sum(len(f["matched"]) for f in frames)
    n_removed = sum(len(f["removed_mis_detections"]) for f in frames)
    report = {
        "frames": frames,
        "mismatched_ids": mismatched,
        "errors": errors,
        "match_rate": 100.0 * n_match / n_gt if n_gt else 0.0,
        "removal_rate": 100.0 * n_removed / n_gt if n_gt else 0.0,
        "unmatched_pred": sum(len(f["unmatched_pred"]) for f in frames),
        "pseudo": asdict(pseudo_cfg),
        "codec": asdict(codec_cfg),
    }
    (out / "pseudo_labels.jsonl").write_text("".join(lines))
    (out / "match_report.json").write_text(_dump(report))
    return EXIT_FAIL if errors else EXIT_OK


# --- eval ---------------------------------------------------------------------


def _load_annotations(path) -> dict:
    p = Path(path)
    if p.is_dir():
        return {
            f.stem: parse_kitti_label_file(f.read_text(), str(f)) for f in sorted(p.glob("*.txt"))
        }
    if p.suffix == ".json":
        return {fr.frame_id: fr.annotations for fr in frames_from_json(p.read_text())}
    raise UsageError(f"{p}: expected a KITTI label directory or a UnifiedFrame .json file")


def _emit(args, payload: dict, text: str, rows: list[dict]) -> None:
    if args.format == "json":
        body = _dump(payload)
    elif args.format == "csv":
        buf = io.StringIO()
        if rows:
            writer = csv.DictWriter(buf, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        body = buf.getvalue()
    else:
        body = text
    if args.out:
        Path(args.out).write_text(body)
    else:
        sys.stdout.write(body)


def cmd_eval(args, conf) -> int:
    if args.components:
        if args.suite != "cityscapes":
            raise SuiteMismatchError("--components applies only to --suite cityscapes")
        try:
            text = Path(args.components).read_text()
        except OSError as exc:
            raise UsageError(str(exc)) from None
        rows = ds_from_components_csv(text)
        table = "".join(f"{r['class']:<12}{r['DS_rounded']:>10.2f}\n" for r in rows)
        _emit(args, {"suite": "cityscapes", "ds": rows}, table, rows)
        return EXIT_OK
    if not args.pred or not args.gt:
        raise UsageError("eval needs --pred and --gt (or --components)")
    try:
        preds = _load_annotations(args.pred)
        gts = _load_annotations(args.gt)
    except (OSError, ParseError) as exc:
        raise UsageError(str(exc)) from None
    classes = tuple(args.classes.split(",")) if args.classes else DEFAULT_CLASSES
    if args.suite == "kitti":
        report = kitti_eval(preds, gts, classes)
        rows = [
            {"class": c, "mode": m, "band": b, "ap": v["ap"]}
            for c, cr in report.items()
            for m, mr in cr.items()
            for b, v in mr.items()
        ]
        _emit(args, {"suite": "kitti", "report": report}, format_kitti_table(report), rows)
    else:
        table_rows = [cityscapes_eval(preds, gts, c) for c in classes]
        dicts = [r.to_dict() for r in table_rows]
        _emit(args, {"suite": "cityscapes", "report": dicts}, format_cityscapes_table(table_rows), dicts)
    return EXIT_OK


# --- simulate -----------------------------------------------------------------


def _simulate_one(job):
    scene_cfg, noise, codec_cfg, pseudo_cfg, index = job
    return closure_frame(scene_cfg, noise, codec_cfg, pseudo_cfg, index)


def cmd_simulate(args, conf) -> int:
    if args.noise not in NOISE_PROFILES:
        raise UsageError(f"unknown noise profile {args.noise!r}; choose from {sorted(NOISE_PROFILES)}")
    if args.scenes < 0:
        raise UsageError("--scenes must be >= 0")
    out = _prepare_out(args.out)
    codec_cfg = _codec_cfg(args, conf)
    pseudo_cfg = _pseudo_cfg(args, conf)
    scene_kw = dict(conf.get("scene", {}))
    for key in ("num_objects", "depth_range", "fx_range", "image_size", "class_names", "class_weights"):
        if key in scene_kw:
            scene_kw[key] = tuple(scene_kw[key])
    scene_cfg = SceneConfig(seed=args.seed, stride=codec_cfg.stride, **scene_kw)
    noise = replace(NOISE_PROFILES[args.noise], **conf.get("noise", {}))
    jobs = [(scene_cfg, noise, codec_cfg, pseudo_cfg, i) for i in range(args.scenes)]
    frames = _run(_simulate_one, jobs, args.jobs)
    (out / "pseudo_labels.jsonl").write_text("".join(f.pop("labels_jsonl") for f in frames))
    totals = summarize(frames)
    report = {
        "noise_profile": args.noise,
        "seed": args.seed,
        "scenes": args.scenes,
        "config": config_echo(scene_cfg, noise, codec_cfg, pseudo_cfg),
        "totals": totals,
        "frames": frames,
    }
    (out / "closure_report.json").write_text(_dump(report))
    keys = ("frames", "num_gt", "num_detections", "matched", "removed", "unmatched_gt", "unmatched_pred")
    rates = ("recovery_rate", "match_rate", "removal_rate", "corruption_exclusion_rate", "mean_center_error_px")
    text = "".join(f"{k:<28}{totals[k]:>10d}\n" for k in keys)
    text += "".join(f"{k:<28}{totals[k]:>10.2f}\n" for k in rates)
    (out / "closure_report.txt").write_text(text)
    if args.format == "text":
        sys.stdout.write(text)
    elif args.format == "json":
        sys.stdout.write(_dump(totals))
    else:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=sorted(totals))
        writer.writeheader()
        writer.writerow(totals)
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# --- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with codec/pseudo/scene/noise sections")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (outputs do not depend on it)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--eps", type=float, help="matching cost cutoff (1 - IoU)")
    common.add_argument("--low-threshold", type=float, help="decode score threshold for pseudo labeling")
    common.add_argument("--stride", type=int)
    common.add_argument("--fx0", type=float, help="reference focal length in pixels (default 500)")
    common.add_argument("--format", choices=("json", "text", "csv"), default="text")
    common.add_argument("--classes", help="comma-separated class registry")
    common.add_argument("--image-size", type=int, nargs=2, metavar=("W", "H"))

    parser = argparse.ArgumentParser(prog="mono3d", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", parents=[common], help="render KITTI labels into dense map containers")
    p.add_argument("labels")
    p.add_argument("calib")
    p.add_argument("out")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("pseudo-label", parents=[common], help="pseudo-3D labels from maps and 2D boxes")
    p.add_argument("maps")
    p.add_argument("labels")
    p.add_argument("out")
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("eval", parents=[common], help="KITTI AP40 or Cityscapes DS evaluation")
    p.add_argument("--pred", help="KITTI prediction directory or UnifiedFrame JSON")
    p.add_argument("--gt", help="KITTI label directory or UnifiedFrame JSON")
    p.add_argument("--suite", choices=("kitti", "cityscapes"), default="kitti")
    p.add_argument("--components", help="CSV of class,ap,bevcd,yawsim,prsim,sizesim to compose into DS")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", parents=[common], help="synthetic end-to-end closure run")
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--noise", default="default", help=f"one of {sorted(NOISE_PROFILES)}")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        conf = _load_config(args.config)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args, conf)
    except UsageError as exc:
        print(f"mono3d: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (MissingAnnotationError, ValueError) as exc:
        print(f"mono3d: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
