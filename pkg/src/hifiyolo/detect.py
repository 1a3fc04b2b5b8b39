"""Anchor fitting, target assignment, composite loss, decoding and NMS."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nncore import Tensor
from .nncore import functional as F

BOX_GAIN, OBJ_GAIN, CLS_GAIN = 0.05, 1.0, 0.5
OBJ_BALANCE = (4.0, 1.0, 0.4)
ANCHOR_RATIO = 4.0


class LossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Box:
    """Center-size box in normalized image coordinates (x = time, y = frequency)."""

    cx: float
    cy: float
    w: float
    h: float

    @classmethod
    def from_xyxy(cls, x0, y0, x1, y1) -> "Box":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    def xyxy(self):
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    def as_array(self):
        return np.array([self.cx, self.cy, self.w, self.h])


@dataclass(frozen=True)
class Detection:
    box: Box
    class_id: int
    score: float


def iou(a: Box, b: Box) -> float:
    ax0, ay0, ax1, ay1 = a.xyxy()
    bx0, by0, bx1, by1 = b.xyxy()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # areas from the same corner differences as the intersection: iou(a, a) == 1 exactly
    return inter / ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of ``(n, 4)`` and ``(m, 4)`` center-size arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    a0, a1 = a[:, :2] - a[:, 2:] / 2, a[:, :2] + a[:, 2:] / 2
    b0, b1 = b[:, :2] - b[:, 2:] / 2, b[:, :2] + b[:, 2:] / 2
    lo = np.maximum(a0[:, None], b0[None])
    hi = np.minimum(a1[:, None], b1[None])
    inter = np.prod(np.clip(hi - lo, 0, None), axis=-1)
    area_a = np.prod(a1 - a0, axis=-1)
    area_b = np.prod(b1 - b0, axis=-1)
    union = area_a[:, None] + area_b[None] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


# anchors ---------------------------------------------------------------------------


def fit_anchors(wh: np.ndarray, n_scales: int = 3, per_scale: int = 3, seed: int = 0, iters: int = 100) -> np.ndarray:
    """k-means on box sizes with ``1 - IoU`` distance; returns ``(n_scales, per_scale, 2)`` sorted by area."""
    wh = np.asarray(wh, dtype=np.float64).reshape(-1, 2)
    wh = wh[(wh > 0).all(axis=1)]
    k = n_scales * per_scale
    if len(wh) < k:
        raise ValueError(f"need at least {k} boxes to fit anchors, got {len(wh)}")
    rng = np.random.default_rng(seed)
    centers = wh[rng.choice(len(wh), size=k, replace=False)]

    def shape_iou(boxes, cents):
        inter = np.minimum(boxes[:, None, 0], cents[None, :, 0]) * np.minimum(boxes[:, None, 1], cents[None, :, 1])
        return inter / (boxes[:, None].prod(-1) + cents[None].prod(-1) - inter)

    for _ in range(iters):
        assign = np.argmax(shape_iou(wh, centers), axis=1)
        new = np.array([np.median(wh[assign == j], axis=0) if np.any(assign == j) else centers[j] for j in range(k)])
        if np.allclose(new, centers):
            break
        centers = new
    centers = centers[np.argsort(centers.prod(axis=1))]
    return centers.reshape(n_scales, per_scale, 2)


# targets ---------------------------------------------------------------------------


@dataclass
class ScaleTargets:
    b: np.ndarray
    a: np.ndarray
    gy: np.ndarray
    gx: np.ndarray
    tbox: np.ndarray  # (P, 4) xy offset from cell corner and wh, grid units
    cls: np.ndarray
    anchor_wh: np.ndarray  # (P, 2) grid units

    @property
    def n(self):
        return len(self.b)


@dataclass
class Targets:
    scales: list
    n_warnings: int = 0
    skipped: list = field(default_factory=list)


def assign_targets(gt, anchors: np.ndarray, grids) -> Targets:
    """Match ground truth to anchors and cells.

    ``gt`` holds one ``(k, 5)`` array (``class cx cy w h``) per image;
    ``anchors`` is ``(S, A, 2)`` normalized; ``grids`` lists ``(h, w)`` per
    scale.  A gt matches an anchor when the worse of the width and height
    ratios is below 4; each match claims its own cell plus the nearer
    horizontal and vertical neighbors.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    per_scale = [dict(b=[], a=[], gy=[], gx=[], tbox=[], cls=[], anchor_wh=[]) for _ in grids]
    warnings = 0
    skipped = []
    for bi, boxes in enumerate(gt):
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 5)
        for row in boxes:
            c, cx, cy, w, h = row
            if not (np.isfinite(row).all() and w > 0 and h > 0):
                warnings += 1
                skipped.append((bi, tuple(row)))
                continue
            matched_any = False
            for si, (gh, gw) in enumerate(grids):
                for ai, (aw, ah) in enumerate(anchors[si]):
                    r = np.array([w / aw, h / ah])
                    if np.max(np.maximum(r, 1.0 / r)) >= ANCHOR_RATIO:
                        continue
                    matched_any = True
                    gx, gy = cx * gw, cy * gh
                    ix, iy = int(min(math.floor(gx), gw - 1)), int(min(math.floor(gy), gh - 1))
                    nx = ix - 1 if gx - ix < 0.5 else ix + 1
                    ny = iy - 1 if gy - iy < 0.5 else iy + 1
                    for cx_i, cy_i in ((ix, iy), (nx, iy), (ix, ny)):
                        if not (0 <= cx_i < gw and 0 <= cy_i < gh):
                            continue
                        d = per_scale[si]
                        d["b"].append(bi)
                        d["a"].append(ai)
                        d["gy"].append(cy_i)
                        d["gx"].append(cx_i)
                        d["tbox"].append((gx - cx_i, gy - cy_i, w * gw, h * gh))
                        d["cls"].append(int(c))
                        d["anchor_wh"].append((aw * gw, ah * gh))
            if not matched_any:
                warnings += 1
                skipped.append((bi, tuple(row)))
    scales = []
    for d in per_scale:
        scales.append(
            ScaleTargets(
                b=np.asarray(d["b"], dtype=np.intp),
                a=np.asarray(d["a"], dtype=np.intp),
                gy=np.asarray(d["gy"], dtype=np.intp),
                gx=np.asarray(d["gx"], dtype=np.intp),
                tbox=np.asarray(d["tbox"], dtype=np.float64).reshape(-1, 4),
                cls=np.asarray(d["cls"], dtype=np.intp),
                anchor_wh=np.asarray(d["anchor_wh"], dtype=np.float64).reshape(-1, 2),
            )
        )
    return Targets(scales, warnings, skipped)


def encode_box(tbox, anchor_wh, eps=1e-9):
    """Raw regression logits that decode exactly to ``tbox`` (grid units, relative to the cell)."""
    tbox = np.asarray(tbox, dtype=np.float64)
    sxy = np.clip((tbox[..., :2] + 0.5) / 2.0, eps, 1 - eps)
    swh = np.clip(np.sqrt(tbox[..., 2:] / anchor_wh) / 2.0, eps, 1 - eps)
    logit = lambda p: np.log(p) - np.log1p(-p)  # noqa: E731
    return np.concatenate([logit(sxy), logit(swh)], axis=-1)


def decode_raw(raw, anchor_wh):
    """Inverse of :func:`encode_box` on plain arrays."""
    s = 1.0 / (1.0 + np.exp(-np.asarray(raw, dtype=np.float64)))
    return np.concatenate([2.0 * s[..., :2] - 0.5, (2.0 * s[..., 2:4]) ** 2 * anchor_wh], axis=-1)


# loss ---------------------------------------------------------------------------------


def bbox_ciou(p: list, t: np.ndarray, eps: float = 1e-7) -> Tensor:
    """Complete IoU between predicted ``[x, y, w, h]`` tensors and constant target boxes."""
    px, py, pw, ph = p
    tx, ty, tw, th = (t[:, i] for i in range(4))
    p_x0, p_x1 = px - pw * 0.5, px + pw * 0.5
    p_y0, p_y1 = py - ph * 0.5, py + ph * 0.5
    t_x0, t_x1 = tx - tw / 2, tx + tw / 2
    t_y0, t_y1 = ty - th / 2, ty + th / 2
    iw = F.clamp_min(F.minimum(p_x1, t_x1) - F.maximum(p_x0, t_x0), 0.0)
    ih = F.clamp_min(F.minimum(p_y1, t_y1) - F.maximum(p_y0, t_y0), 0.0)
    inter = iw * ih
    union = pw * ph + tw * th - inter + eps
    iou_t = inter / union
    cw = F.maximum(p_x1, t_x1) - F.minimum(p_x0, t_x0)
    ch = F.maximum(p_y1, t_y1) - F.minimum(p_y0, t_y0)
    c2 = cw * cw + ch * ch + eps
    rho2 = (px - tx) ** 2 + (py - ty) ** 2
    v = (4.0 / math.pi**2) * (F.atan(Tensor(tw / th)) - F.atan(pw / (ph + eps))) ** 2
    # alpha stays in the graph so the loss gradient is the exact derivative
    alpha = v / (v - iou_t + (1.0 + eps))
    return iou_t - (rho2 / c2 + v * alpha)


def _check_finite(value: Tensor, name: str):
    if not np.all(np.isfinite(value.data)):
        raise LossError(f"non-finite {name} loss")


def compute_loss(preds, targets: Targets, weights=(BOX_GAIN, OBJ_GAIN, CLS_GAIN), balance=OBJ_BALANCE):
    """YOLO-style composite loss; returns ``(total, components)``.

    Components: CIoU box loss on positives, BCE objectness over every cell
    (per-scale balanced) and BCE class loss on positives.
    """
    lbox = lobj = lcls = None
    per_scale_obj = []
    for si, ((reg, cls), t) in enumerate(zip(preds, targets.scales)):
        B, A, _, h, w = reg.shape
        nc = cls.shape[2]
        obj_logits = reg[:, :, 4]
        obj_t = np.zeros(obj_logits.shape, dtype=reg.dtype)
        if t.n:
            flat = ((t.b * A + t.a) * h + t.gy) * w + t.gx
            pr = F.take_rows(F.reshape(F.transpose(reg, (0, 1, 3, 4, 2)), (-1, 5)), flat)
            sxy = F.sigmoid(pr[:, 0:2])
            swh = F.sigmoid(pr[:, 2:4])
            pxy = sxy * 2.0 - 0.5
            pwh = (swh * 2.0) ** 2 * Tensor(t.anchor_wh.astype(reg.dtype))
            ciou = bbox_ciou([pxy[:, 0], pxy[:, 1], pwh[:, 0], pwh[:, 1]], t.tbox.astype(reg.dtype))
            term = F.mean(1.0 - ciou)
            lbox = term if lbox is None else lbox + term
            obj_t[t.b, t.a, t.gy, t.gx] = 1.0
            pc = F.take_rows(F.reshape(F.transpose(cls, (0, 1, 3, 4, 2)), (-1, nc)), flat)
            onehot = np.zeros((t.n, nc), dtype=reg.dtype)
            onehot[np.arange(t.n), t.cls] = 1.0
            term = F.mean(F.bce_with_logits(pc, onehot))
            lcls = term if lcls is None else lcls + term
        o = F.mean(F.bce_with_logits(obj_logits, obj_t))
        per_scale_obj.append(float(o.data))
        o = o * balance[si]
        lobj = o if lobj is None else lobj + o
    zero = Tensor(np.zeros((), dtype=lobj.dtype))
    lbox = zero if lbox is None else lbox
    lcls = zero if lcls is None else lcls
    for value, name in ((lbox, "box"), (lobj, "objectness"), (lcls, "class")):
        _check_finite(value, name)
    total = lbox * weights[0] + lobj * weights[1] + lcls * weights[2]
    comps = {
        "box": float(lbox.data),
        "obj": float(lobj.data),
        "cls": float(lcls.data),
        "total": float(total.data),
        "obj_per_scale": per_scale_obj,
    }
    return total, comps


# inference --------------------------------------------------------------------------


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def decode(preds, anchors: np.ndarray):
    """Flatten raw head outputs into boxes ``(B, N, 4)``, objectness ``(B, N)`` and class probabilities ``(B, N, nc)``."""
    boxes, objs, probs = [], [], []
    for si, (reg, cls) in enumerate(preds):
        reg = np.asarray(getattr(reg, "data", reg), dtype=np.float64)
        cls = np.asarray(getattr(cls, "data", cls), dtype=np.float64)
        B, A, _, h, w = reg.shape
        s = _sigmoid(reg)
        gy, gx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        aw = np.asarray(anchors[si])[:, 0][None, :, None, None]
        ah = np.asarray(anchors[si])[:, 1][None, :, None, None]
        cx = (2 * s[:, :, 0] - 0.5 + gx) / w
        cy = (2 * s[:, :, 1] - 0.5 + gy) / h
        bw = (2 * s[:, :, 2]) ** 2 * aw
        bh = (2 * s[:, :, 3]) ** 2 * ah
        boxes.append(np.stack([cx, cy, bw, bh], axis=-1).reshape(B, -1, 4))
        objs.append(s[:, :, 4].reshape(B, -1))
        probs.append(_sigmoid(cls).transpose(0, 1, 3, 4, 2).reshape(B, -1, cls.shape[2]))
    return np.concatenate(boxes, 1), np.concatenate(objs, 1), np.concatenate(probs, 1)


def nms(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float) -> np.ndarray:
    """Greedy NMS; keeps a box unless it overlaps a kept higher-scoring box with IoU >= ``iou_thresh``."""
    order = np.argsort(-scores, kind="stable")
    boxes = boxes[order]
    ious = iou_matrix(boxes, boxes)
    suppressed = np.zeros(len(order), dtype=bool)
    keep = []
    for i in range(len(order)):
        if suppressed[i]:
            continue
        keep.append(order[i])
        suppressed |= ious[i] >= iou_thresh
    return np.asarray(keep, dtype=np.intp)


def batched_nms(boxes, scores, classes, iou_thresh):
    """Per-class NMS; returns kept indices sorted by descending score."""
    keep = []
    for c in np.unique(classes):
        idx = np.nonzero(classes == c)[0]
        keep.extend(idx[nms(boxes[idx], scores[idx], iou_thresh)])
    keep = np.asarray(keep, dtype=np.intp)
    return keep[np.argsort(-scores[keep], kind="stable")]


def decode_and_nms(preds, anchors, conf_thresh=0.25, iou_thresh=0.45, max_det=300, multi_label=True):
    """Per-image detections after score filtering and per-class NMS."""
    if not (0 < conf_thresh < 1 and 0 < iou_thresh < 1):
        raise ValueError("thresholds must lie in (0, 1)")
    boxes, obj, probs = decode(preds, anchors)
    results = []
    for b in range(boxes.shape[0]):
        scores = obj[b][:, None] * probs[b]
        if multi_label:
            ii, cc = np.nonzero(scores >= conf_thresh)
        else:
            cc = np.argmax(scores, axis=1)
            ii = np.nonzero(scores[np.arange(len(cc)), cc] >= conf_thresh)[0]
            cc = cc[ii]
        sc = scores[ii, cc]
        bx = boxes[b][ii]
        keep = batched_nms(bx, sc, cc, iou_thresh)[:max_det]
        results.append([Detection(Box(*map(float, bx[k])), int(cc[k]), float(sc[k])) for k in keep])
    return results


def write_detections(path, dets) -> None:
    """One ``class_id score cx cy w h`` line per detection."""
    with open(path, "w") as fh:
        for d in dets:
            fh.write(f"{d.class_id} {d.score:.6f} {d.box.cx:.6f} {d.box.cy:.6f} {d.box.w:.6f} {d.box.h:.6f}\n")


def read_detections(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if len(parts) == 6:
                c, s, cx, cy, w, h = parts
                out.append(Detection(Box(float(cx), float(cy), float(w), float(h)), int(c), float(s)))
    return out
