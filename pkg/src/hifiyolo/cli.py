"""Command line: ``hifiyolo {generate,train,eval,infer}``.

Exit status is 0 on success, 1 for user errors (bad configuration, missing
files, refused overwrite) and 2 for internal failures.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

import numpy as np

from .data import SPLITS, DatasetError, generate_dataset, load_split, read_manifest
from .detect import read_detections, write_detections
from .estimator import CheckpointError, HifiYoloDetector, TrainingError, labels_to_gt
from .evalkit import map_metrics
from .runconfig import RunConfig, RunConfigError, parse_kv, parse_overrides
from .sigsynth import CLASS_NAMES, read_iq
from .tfr import spectrogram

USER_ERRORS = (RunConfigError, DatasetError, CheckpointError, FileNotFoundError, FileExistsError, ValueError)


class UserError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hifiyolo", description="Multi-signal spectrogram detection and modulation recognition.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="key=value configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one configuration field")
        sp.add_argument("--preset", choices=("desk", "paper"), help="base preset (default: desk, or the dataset's own)")
        sp.add_argument("--quiet", action="store_true", help="do not echo the resolved configuration")

    g = sub.add_parser("generate", help="synthesize a scene dataset with a train/val/test manifest")
    common(g)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--overwrite", action="store_true", help="replace a non-empty output directory")

    t = sub.add_parser("train", help="train a detector on a generated dataset")
    common(t)
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True, help="run directory for checkpoints and logs")
    t.add_argument("--resume", type=Path, help="continue from a last.ckpt")
    t.add_argument("--overwrite", action="store_true")

    e = sub.add_parser("eval", help="score a checkpoint or a directory of detection files")
    common(e)
    e.add_argument("--data", type=Path, required=True)
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", type=Path)
    src.add_argument("--predictions", type=Path, help="directory of <scene_id>.txt detection files")
    e.add_argument("--split", default="test", choices=SPLITS + ("all",))
    e.add_argument("--out", type=Path, help="directory for report.txt, report.kv and snr.csv")

    i = sub.add_parser("infer", help="detect signals and export annotated spectrograms")
    common(i)
    i.add_argument("--checkpoint", type=Path, required=True)
    i.add_argument("--out", type=Path, required=True)
    inp = i.add_mutually_exclusive_group(required=True)
    inp.add_argument("--data", type=Path, help="dataset directory (uses --split)")
    inp.add_argument("--iq", type=Path, nargs="+", help="raw interleaved float32 I/Q files")
    i.add_argument("--split", default="test", choices=SPLITS + ("all",))
    i.add_argument("--conf", type=float, help="confidence threshold (default: conf_thresh)")
    return p


def resolve_config(args) -> RunConfig:
    """Preset (or the dataset's saved configuration), then ``--config``, then ``--set``."""
    values = {}
    data = getattr(args, "data", None)
    if data is not None and (Path(data) / "config.txt").exists():
        values.update(parse_kv((Path(data) / "config.txt").read_text()))
    if args.config is not None:
        if not args.config.exists():
            raise UserError(f"config file {args.config} does not exist")
        values.update(parse_kv(args.config.read_text()))
    if args.preset:
        values["preset"] = args.preset
    values.update(parse_overrides(args.set))
    return RunConfig.build(values.pop("preset", "desk"), values)


def _echo(cfg: RunConfig, args, out=None):
    out = out or sys.stdout
    if not args.quiet:
        out.write(f"# resolved configuration ({args.command})\n{cfg.to_text()}# end configuration\n")
        out.flush()


def cmd_generate(cfg, args, log):
    entries = generate_dataset(cfg, args.out, overwrite=args.overwrite, log=log)
    counts = {s: sum(e.split == s for e in entries) for s in SPLITS}
    log(f"wrote {len(entries)} scenes to {args.out} " + " ".join(f"{k}={v}" for k, v in counts.items()))
    if cfg.manifest_only:
        log("manifest only: scene files were not rendered")
    return 0


def _prepare_run_dir(path: Path, overwrite: bool, resume) -> None:
    if path.exists() and any(path.iterdir()) and not (overwrite or resume):
        raise UserError(f"run directory {path} is not empty (pass --overwrite or --resume)")
    path.mkdir(parents=True, exist_ok=True)


def cmd_train(cfg, args, log):
    run = args.out
    _prepare_run_dir(run, args.overwrite, args.resume)
    cfg.save(run / "config.txt")
    log_fh = open(run / "train.log", "a")

    def tee(msg):
        log(msg)
        log_fh.write(msg + "\n")
        log_fh.flush()

    try:
        log_fh.write(f"# resolved configuration\n{cfg.to_text()}# end configuration\n")
        train = load_split(args.data, "train")
        est = HifiYoloDetector.from_run_config(cfg)
        if cfg.overfit:
            losses = est.overfit(train.images[:1], train.labels[0], steps=cfg.overfit_steps, log=tee)
            (run / "overfit.csv").write_text("step,loss\n" + "".join(f"{i},{v:.8g}\n" for i, v in enumerate(losses)))
            tee(f"overfit scene {train.ids[0]}: initial {losses[0]:.5f} final {losses[-1]:.5f} ratio {losses[-1] / losses[0]:.4f}")
            est.save(run / "last.ckpt", with_optimizer=True)
            return 0
        val = load_split(args.data, "val")
        tee(f"train {len(train)} scenes, val {len(val)} scenes")
        est.fit(train.images, train.labels, val.images, val.labels, checkpoint_dir=run, resume=args.resume, log=tee)
        keys = sorted({k for r in est.history_ for k in r})
        order = ["epoch"] + [k for k in keys if k != "epoch"]
        rows = [",".join(order)] + [",".join(f"{r.get(k, float('nan')):.6g}" for k in order) for r in est.history_]
        (run / "history.csv").write_text("\n".join(rows) + "\n")
        tee(f"best val mAP50 {est.best_score_:.4f}; checkpoint {run / 'best.ckpt'}")
    finally:
        log_fh.close()
    return 0


def _scene_gts(data, split):
    d = load_split(data, split)
    return d, {sid: labels_to_gt(l) for sid, l in zip(d.ids, d.labels)}


def _write_report(report, out: Path | None, log):
    sys.stdout.write(report.to_text())
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report.to_text())
        (out / "report.kv").write_text(report.to_kv())
        (out / "snr.csv").write_text(report.snr_csv())
        log(f"report written to {out}")


def cmd_eval(cfg, args, log):
    if args.predictions is not None:
        entries = [e for e in read_manifest(args.data / "manifest.csv") if args.split == "all" or e.split == args.split]
        if not entries:
            raise DatasetError(f"split {args.split!r} of {args.data} is empty")
        if not args.predictions.is_dir():
            raise UserError(f"predictions directory {args.predictions} does not exist")
        d, gts = _scene_gts(args.data, args.split)
        dets = {}
        for sid in d.ids:
            f = args.predictions / f"{sid}.txt"
            dets[sid] = read_detections(f) if f.exists() else []
        report = map_metrics(dets, gts, d.snr_db)
    else:
        est = HifiYoloDetector.from_checkpoint(args.checkpoint)
        d = load_split(args.data, args.split)
        report = est.evaluate(d.images, d.labels, d.ids, d.snr_db)
        report.meta = {"checkpoint": str(args.checkpoint)}
        report.meta |= {k: getattr(est, k) for k in ("lfe_mode", "resample_up", "resample_down", "head_mode")}
    _write_report(report, args.out, log)
    return 0


def _annotate(image: np.ndarray, dets, path: Path) -> None:
    """Grayscale spectrogram PNG with detection boxes and labels burned in."""
    from PIL import Image, ImageDraw

    v = np.asarray(image, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    scaled = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    img = Image.fromarray((scaled * 200).round().astype(np.uint8), mode="L")
    draw = ImageDraw.Draw(img)
    h, w = v.shape
    for det in dets:
        x0, y0, x1, y1 = det.box.xyxy()
        box = [x0 * w, y0 * h, x1 * w - 1, y1 * h - 1]
        draw.rectangle(box, outline=255)
        name = CLASS_NAMES[det.class_id] if 0 <= det.class_id < len(CLASS_NAMES) else str(det.class_id)
        draw.text((box[0] + 2, box[1] + 1), f"{name} {det.score:.2f}", fill=255)
    img.save(path)


def cmd_infer(cfg, args, log):
    est = HifiYoloDetector.from_checkpoint(args.checkpoint)
    if args.data is not None:
        d = load_split(args.data, args.split)
        ids, images = d.ids, d.images
    else:
        ids, images = [], []
        for path in args.iq:
            if not path.exists():
                raise UserError(f"{path} does not exist")
            samples = read_iq(path)
            if samples.size != cfg.n_samples:
                raise UserError(f"{path} holds {samples.size} samples; the configuration expects n_samples={cfg.n_samples}")
            images.append(spectrogram(samples, n_fft=cfg.n_fft, hop=cfg.hop, floor_db=cfg.floor_db).image())
            ids.append(path.stem)
        images = np.stack(images)
    args.out.mkdir(parents=True, exist_ok=True)
    dets = est.predict(images, conf_thresh=args.conf if args.conf is not None else cfg.conf_thresh)
    for sid, img, found in zip(ids, images, dets):
        write_detections(args.out / f"{sid}.txt", found)
        _annotate(img, found, args.out / f"{sid}.png")
    log(f"wrote detections for {len(ids)} scenes to {args.out} ({sum(map(len, dets))} boxes)")
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer}


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)

    def log(msg):
        print(msg, file=sys.stderr, flush=True)

    try:
        cfg = resolve_config(args)
        _echo(cfg, args)
        return COMMANDS[args.command](cfg, args, log)
    except TrainingError as exc:
        log(f"training aborted: {exc}")
        return 2
    except (UserError, *USER_ERRORS) as exc:
        log(f"error: {exc}")
        return 1
    except KeyboardInterrupt:
        log("interrupted")
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
