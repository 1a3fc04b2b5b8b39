"""COCO-style AP/mAP and F1 with SNR-stratified breakdowns."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detect import Box, Detection, iou_matrix

IOU_THRESHOLDS = np.round(np.arange(0.5, 0.951, 0.05), 2)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
DEFAULT_CONF = 0.25


def interpolated_ap(tp: np.ndarray, n_gt: int) -> float:
    """101-point interpolated AP from a score-ordered TP flag sequence."""
    if n_gt == 0:
        return float("nan")
    if len(tp) == 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    # monotone envelope from the right
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    vals = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(vals.mean())


def _as_array(items):
    """``(class, Box)`` / Detection / raw rows -> arrays of class, box, score."""
    cls, boxes, scores = [], [], []
    for it in items:
        if isinstance(it, Detection):
            cls.append(it.class_id)
            boxes.append((it.box.cx, it.box.cy, it.box.w, it.box.h))
            scores.append(it.score)
        else:
            c, b = it[0], it[1]
            b = (b.cx, b.cy, b.w, b.h) if isinstance(b, Box) else tuple(b)
            cls.append(int(c))
            boxes.append(b)
            scores.append(float(it[2]) if len(it) > 2 else 1.0)
    return (
        np.asarray(cls, dtype=np.int64),
        np.asarray(boxes, dtype=np.float64).reshape(-1, 4),
        np.asarray(scores, dtype=np.float64),
    )


def match_scene(det_boxes, det_scores, gt_boxes, iou_thresh):
    """Greedy matching for one scene and class; returns TP flags in descending-score order."""
    order = np.argsort(-det_scores, kind="stable")
    flags = np.zeros(len(order), dtype=bool)
    if len(gt_boxes) == 0 or len(order) == 0:
        return order, flags
    ious = iou_matrix(det_boxes[order], gt_boxes)
    taken = np.zeros(len(gt_boxes), dtype=bool)
    for i in range(len(order)):
        cand = np.where(taken, -1.0, ious[i])
        j = int(np.argmax(cand))
        if cand[j] >= iou_thresh:
            taken[j] = True
            flags[i] = True
    return order, flags


def _class_records(dets_by_scene, gts_by_scene, class_id, iou_thresh):
    """Score-sorted (score, tp) records of a class over all scenes plus its gt count."""
    scores, flags, keys = [], [], []
    n_gt = 0
    for sid in sorted(gts_by_scene.keys() | dets_by_scene.keys()):
        gc, gb, _ = gts_by_scene.get(sid, _EMPTY)
        dc, db, ds = dets_by_scene.get(sid, _EMPTY)
        gmask = gc == class_id
        dmask = dc == class_id
        n_gt += int(gmask.sum())
        order, f = match_scene(db[dmask], ds[dmask], gb[gmask], iou_thresh)
        scores.append(ds[dmask][order])
        flags.append(f)
        keys.extend((sid, i) for i in range(len(order)))
    if not scores:
        return np.zeros(0), np.zeros(0, dtype=bool), n_gt
    scores = np.concatenate(scores)
    flags = np.concatenate(flags)
    # ties broken by scene id then rank so the result is independent of input order
    rank = sorted(range(len(scores)), key=lambda i: (-scores[i], keys[i]))
    return scores[rank], flags[rank], n_gt


_EMPTY = (np.zeros(0, dtype=np.int64), np.zeros((0, 4)), np.zeros(0))


def _prepare(dets, gts):
    dets = {str(k): _as_array(v) for k, v in dets.items()}
    gts = {str(k): _as_array(v) for k, v in gts.items()}
    return dets, gts


def average_precision(dets, gts, iou_thresh: float = 0.5, class_id: int | None = None) -> float:
    """AP of one class. ``dets``/``gts`` are per-scene mappings or single-scene lists."""
    if not isinstance(dets, dict):
        dets, gts = {"0": dets}, {"0": gts}
    d, g = _prepare(dets, gts)
    if class_id is None:
        classes = set()
        for c, _, _ in list(d.values()) + list(g.values()):
            classes.update(c.tolist())
        if len(classes) > 1:
            raise ValueError("several classes present; pass class_id")
        class_id = classes.pop() if classes else 0
    _, flags, n_gt = _class_records(d, g, class_id, iou_thresh)
    return interpolated_ap(flags, n_gt)


@dataclass
class EvalReport:
    map_50_95: float
    map_50: float
    f1: float
    f1_macro: float
    conf_threshold: float
    f1_at_default: float
    per_class: dict = field(default_factory=dict)
    per_snr: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    n_scenes: int = 0
    # where the detections came from (checkpoint path, model switches); echoed in both formats
    meta: dict = field(default_factory=dict)

    HEADER = "F1 operating point: confidence maximizing micro F1 at IoU 0.5; AP: 101-point interpolation"

    def to_text(self) -> str:
        lines = [
            self.HEADER,
            *(f"{k:<17} {v}" for k, v in self.meta.items()),
            f"scenes            {self.n_scenes}",
            f"mAP50:95 (%)      {self.map_50_95:.2f}",
            f"mAP50 (%)         {self.map_50:.2f}",
            f"F1 (micro)        {self.f1:.4f}  @ conf {self.conf_threshold:.4f}",
            f"F1 (macro)        {self.f1_macro:.4f}",
            f"F1 @ conf 0.25    {self.f1_at_default:.4f}",
            f"TP/FP/FN          {self.counts.get('tp', 0)}/{self.counts.get('fp', 0)}/{self.counts.get('fn', 0)}",
            "",
            "class             AP50    AP50:95   n_gt",
        ]
        for c, row in sorted(self.per_class.items()):
            lines.append(f"{row['name']:<16} {100 * row['ap50']:6.2f}   {100 * row['ap50_95']:6.2f}   {row['n_gt']:5d}")
        if self.per_snr:
            lines += ["", "snr_db   mAP50:95   mAP50    F1"]
            for snr, row in sorted(self.per_snr.items()):
                lines.append(f"{snr:6.1f}   {row['map_50_95']:7.2f}   {row['map_50']:6.2f}   {row['f1']:.4f}")
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        kv = {f"meta.{k}": v for k, v in self.meta.items()}
        kv |= {
            "map_50_95": f"{self.map_50_95:.6f}",
            "map_50": f"{self.map_50:.6f}",
            "f1": f"{self.f1:.6f}",
            "f1_macro": f"{self.f1_macro:.6f}",
            "conf_threshold": f"{self.conf_threshold:.6f}",
            "f1_at_default": f"{self.f1_at_default:.6f}",
            "tp": self.counts.get("tp", 0),
            "fp": self.counts.get("fp", 0),
            "fn": self.counts.get("fn", 0),
            "n_scenes": self.n_scenes,
        }
        for c, row in sorted(self.per_class.items()):
            kv[f"ap50.{c}"] = f"{row['ap50']:.6f}"
            kv[f"ap50_95.{c}"] = f"{row['ap50_95']:.6f}"
        return "".join(f"{k}={v}\n" for k, v in kv.items())

    def snr_csv(self) -> str:
        rows = ["snr_db,map_50_95,map_50,f1,n_scenes"]
        for snr, row in sorted(self.per_snr.items()):
            rows.append(f"{snr:g},{row['map_50_95']:.4f},{row['map_50']:.4f},{row['f1']:.6f},{row['n_scenes']}")
        return "\n".join(rows) + "\n"


def _f1_curve(scores, flags, n_gt):
    """Best micro F1 over thresholds; also F1 at ``DEFAULT_CONF``."""
    if n_gt == 0 and len(scores) == 0:
        return 0.0, 1.0, 0.0, (0, 0, 0)
    order = np.argsort(-scores, kind="stable")
    s, f = scores[order], flags[order]
    ctp = np.cumsum(f)
    cfp = np.cumsum(~f)
    # evaluate only at the last index of each distinct score
    last = np.r_[s[1:] != s[:-1], True] if len(s) else np.zeros(0, dtype=bool)
    tp, fp, thr = ctp[last], cfp[last], s[last]
    f1 = 2 * tp / np.maximum(2 * tp + fp + (n_gt - tp), 1)
    if len(f1) == 0:
        return 0.0, 1.0, 0.0, (0, 0, n_gt)
    best = int(np.argmax(f1))
    above = thr >= DEFAULT_CONF
    f1_default = float(f1[np.nonzero(above)[0][-1]]) if above.any() else 0.0
    counts = (int(tp[best]), int(fp[best]), int(n_gt - tp[best]))
    return float(f1[best]), float(thr[best]), f1_default, counts


def _class_names(classes):
    try:
        from .sigsynth import CLASS_NAMES

        return {c: CLASS_NAMES[c] if 0 <= c < len(CLASS_NAMES) else str(c) for c in classes}
    except ImportError:  # pragma: no cover
        return {c: str(c) for c in classes}


def _metrics(d, g):
    gt_classes = sorted({int(c) for cls, _, _ in g.values() for c in cls})
    per_class = {}
    all_scores, all_flags, total_gt = [], [], 0
    class_flags = {}
    for c in gt_classes:
        aps = []
        for t in IOU_THRESHOLDS:
            s, f, n_gt = _class_records(d, g, c, t)
            aps.append(interpolated_ap(f, n_gt))
            if t == 0.5:
                all_scores.append(s)
                all_flags.append(f)
                total_gt += n_gt
                class_flags[c] = (s, f, n_gt)
        per_class[c] = {"ap50": aps[0], "ap50_95": float(np.mean(aps)), "n_gt": class_flags[c][2]}
    # detections of classes without ground truth are pure false positives for F1
    det_classes = {int(c) for cls, _, _ in d.values() for c in cls} - set(gt_classes)
    for c in sorted(det_classes):
        s, f, _ = _class_records(d, g, c, 0.5)
        all_scores.append(s)
        all_flags.append(f)
    if per_class:
        map50 = 100 * float(np.mean([r["ap50"] for r in per_class.values()]))
        map5095 = 100 * float(np.mean([r["ap50_95"] for r in per_class.values()]))
    else:
        map50 = map5095 = 0.0
    scores = np.concatenate(all_scores) if all_scores else np.zeros(0)
    flags = np.concatenate(all_flags) if all_flags else np.zeros(0, dtype=bool)
    f1, thr, f1_default, counts = _f1_curve(scores, flags, total_gt)
    macro = []
    for c, (s, f, n_gt) in class_flags.items():
        keep = s >= thr
        tp = int(f[keep].sum())
        fp = int((~f[keep]).sum())
        macro.append(2 * tp / max(2 * tp + fp + (n_gt - tp), 1))
    names = _class_names(per_class)
    for c in per_class:
        per_class[c]["name"] = names[c]
    return dict(
        map_50_95=map5095,
        map_50=map50,
        f1=f1,
        f1_macro=float(np.mean(macro)) if macro else 0.0,
        conf_threshold=thr,
        f1_at_default=f1_default,
        per_class=per_class,
        counts={"tp": counts[0], "fp": counts[1], "fn": counts[2]},
    )


def map_metrics(dets: dict, gts: dict, snr_db: dict | None = None) -> EvalReport:
    """Aggregate metrics over scenes keyed by scene id.

    ``dets`` maps scene id to a list of :class:`Detection`; ``gts`` maps
    scene id to ``(class_id, Box)`` pairs; ``snr_db`` (optional) maps scene
    id to its SNR for the stratified curves.
    """
    d, g = _prepare(dets, gts)
    report = EvalReport(**_metrics(d, g), n_scenes=len(g))
    if snr_db:
        strata = {}
        for sid, snr in snr_db.items():
            strata.setdefault(float(snr), []).append(str(sid))
        for snr, ids in strata.items():
            sub_d = {i: d[i] for i in ids if i in d}
            sub_g = {i: g[i] for i in ids if i in g}
            m = _metrics(sub_d, sub_g)
            report.per_snr[snr] = {
                "map_50_95": m["map_50_95"],
                "map_50": m["map_50"],
                "f1": m["f1"],
                "n_scenes": len(ids),
            }
    return report
