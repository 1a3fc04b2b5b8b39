"""scikit-learn style detector estimator wrapping network, loss and training loop."""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from . import detect as D
from ._validation import check_fraction, check_images, check_labels
from .evalkit import map_metrics
from .hifinet import HifiYoloNet, ModelConfig
from .hifinet.head import STRIDES
from .nncore import AdamW, Tensor, load_tensors, no_grad, save_tensors


class TrainingError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


_MODEL_PARAMS = (
    "L", "channels", "g", "head_kernel", "lfe_mode", "resample_up", "resample_down",
    "head_mode", "offset_scale", "attention", "window", "n_classes",
)


def _fallback_anchor_boxes(wh: np.ndarray, k: int) -> np.ndarray:
    """Too few boxes for k-means: spread copies of them over a range of scales."""
    factors = np.geomspace(0.5, 2.0, int(math.ceil(k / max(len(wh), 1))) + 1)
    return np.concatenate([np.clip(wh * f, 1e-3, 1.0) for f in factors])


class HifiYoloDetector(BaseEstimator):
    """Multi-signal detector on spectrogram images.

    ``X`` is an ``(n, H, W)`` stack of images (frequency rows, time
    columns); ``y`` is one ``(k, 5)`` array of ``class cx cy w h`` rows per
    image in normalized coordinates.
    """

    def __init__(
        self,
        L=3,
        channels=(8, 16, 32, 64, 64),
        g=4,
        head_kernel=1,
        lfe_mode="gaussian",
        resample_up="ca",
        resample_down="ca",
        head_mode="recombination",
        offset_scale=0.25,
        attention="global",
        window=9,
        n_classes=14,
        epochs=30,
        batch_size=8,
        lr=0.002,
        weight_decay=0.01,
        warmup_epochs=1.0,
        augment="roll",
        conf_thresh=0.25,
        iou_thresh=0.45,
        eval_conf=0.001,
        time_budget_s=0.0,
        seed=0,
        verbose=False,
    ):
        self.L = L
        self.channels = channels
        self.g = g
        self.head_kernel = head_kernel
        self.lfe_mode = lfe_mode
        self.resample_up = resample_up
        self.resample_down = resample_down
        self.head_mode = head_mode
        self.offset_scale = offset_scale
        self.attention = attention
        self.window = window
        self.n_classes = n_classes
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.warmup_epochs = warmup_epochs
        self.augment = augment
        self.conf_thresh = conf_thresh
        self.iou_thresh = iou_thresh
        self.eval_conf = eval_conf
        self.time_budget_s = time_budget_s
        self.seed = seed
        self.verbose = verbose

    # -- construction ---------------------------------------------------------------------
    @classmethod
    def from_run_config(cls, cfg, **overrides) -> "HifiYoloDetector":
        names = cls._get_param_names()
        values = {k: getattr(cfg, k) for k in names if hasattr(cfg, k)}
        values["n_classes"] = cfg.model_config().n_classes
        values.update(overrides)
        return cls(**values)

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{k: getattr(self, k) for k in _MODEL_PARAMS})

    def _build(self, img_size: int, anchors: np.ndarray):
        self.config_ = self.model_config()
        self.img_size_ = int(img_size)
        self.anchors_ = np.asarray(anchors, dtype=np.float64)
        self.net_ = HifiYoloNet(self.config_, seed=self.seed, img_size=self.img_size_)
        self.optimizer_ = AdamW(self.net_.parameters(), lr=self.lr, weight_decay=self.weight_decay)
        self.epoch_ = 0
        self.best_score_ = -1.0
        self.history_ = []

    def _fit_anchors(self, labels) -> np.ndarray:
        wh = np.concatenate([l[:, 3:5] for l in labels if len(l)]) if any(len(l) for l in labels) else np.zeros((0, 2))
        wh = wh[(wh > 0).all(axis=1)]
        if len(wh) == 0:
            raise ValueError("training labels contain no boxes")
        k = 3 * self.config_.n_anchors if hasattr(self, "config_") else 9
        if len(wh) < k:
            wh = _fallback_anchor_boxes(wh, k)
        return D.fit_anchors(wh, seed=self.seed)

    # -- training -----------------------------------------------------------------------------
    def _lr_at(self, step: int, steps_per_epoch: int) -> float:
        total = max(1, self.epochs * steps_per_epoch)
        warm = int(self.warmup_epochs * steps_per_epoch)
        if step < warm:
            return self.lr * (0.1 + 0.9 * step / warm)
        frac = (step - warm) / max(1, total - warm)
        return self.lr * (0.05 + 0.95 * 0.5 * (1 + math.cos(math.pi * min(frac, 1.0))))

    def _grids(self):
        return [(self.img_size_ // s, self.img_size_ // s) for s in STRIDES]

    def train_step(self, images: np.ndarray, labels: list, lr: float | None = None):
        """One optimizer step; returns the loss components as floats."""
        net = self.net_
        net.zero_grad()
        preds = net(images)
        targets = D.assign_targets(labels, self.anchors_, self._grids())
        loss, comps = D.compute_loss(preds, targets)
        loss.backward()
        self.optimizer_.step(lr=lr)
        return {k: float(v) for k, v in comps.items() if np.isscalar(v) or np.ndim(v) == 0}

    def _batches(self, n: int, epoch: int):
        order = np.random.default_rng([self.seed, epoch]).permutation(n)
        return [order[i : i + self.batch_size] for i in range(0, n, self.batch_size)]

    def _augment(self, images, labels, epoch, step):
        """Random time reversal and, for ``"roll"``, cyclic shifts along both axes."""
        if self.augment in (False, None, "none"):
            return images, labels
        rng = np.random.default_rng([self.seed, epoch, step, 1])
        images = images.copy()
        out = []
        for i, l in enumerate(labels):
            l = l.copy()
            if rng.random() < 0.5:
                images[i] = images[i][:, ::-1]
                if len(l):
                    l[:, 1] = 1.0 - l[:, 1]
            if self.augment == "roll":
                h, w = images[i].shape
                dy, dx = int(rng.integers(h)), int(rng.integers(w))
                images[i] = np.roll(images[i], (dy, dx), axis=(0, 1))
                l = roll_boxes(l, dx / w, axis=0, min_size=2.0 / w)
                l = roll_boxes(l, dy / h, axis=1, min_size=2.0 / h)
            out.append(l)
        return images, out

    def fit(self, X, y, X_val=None, y_val=None, checkpoint_dir=None, resume=None, log=None):
        """Train for ``epochs`` epochs; keeps the best-by-validation-mAP50 weights.

        ``resume`` is a checkpoint written by a previous call into
        ``checkpoint_dir``; training continues with the epoch after it.
        """
        X = check_images(X)
        y = check_labels(y, len(X), self.n_classes)
        has_val = X_val is not None
        if has_val:
            X_val = check_images(X_val)
            y_val = check_labels(y_val, len(X_val), self.n_classes)
        log = log or (print if self.verbose else (lambda *_: None))
        ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
        if ckpt_dir:
            ckpt_dir.mkdir(parents=True, exist_ok=True)

        if resume is not None:
            self.load(resume, with_optimizer=True)
            if self.img_size_ != X.shape[1]:
                raise CheckpointError(f"checkpoint was trained on {self.img_size_}px images, got {X.shape[1]}px")
        else:
            self.config_ = self.model_config()
            self._build(X.shape[1], self._fit_anchors(y))
        best_state = self.net_.state_dict() if self.best_score_ < 0 else getattr(self, "_best_state", None)
        steps_per_epoch = int(math.ceil(len(X) / self.batch_size))
        t0 = time.perf_counter()
        for epoch in range(self.epoch_, self.epochs):
            sums, n_steps = {}, 0
            t_ep = time.perf_counter()
            for bi, idx in enumerate(self._batches(len(X), epoch)):
                step = epoch * steps_per_epoch + bi
                imgs, labs = self._augment(X[idx], [y[i] for i in idx], epoch, bi)
                try:
                    comps = self.train_step(imgs, labs, lr=self._lr_at(step, steps_per_epoch))
                except D.LossError as exc:
                    raise TrainingError(f"non-finite loss at step {step} (epoch {epoch + 1}): {exc}") from exc
                for k, v in comps.items():
                    sums[k] = sums.get(k, 0.0) + v
                n_steps += 1
            record = {"epoch": epoch + 1, **{k: v / n_steps for k, v in sums.items()}}
            if has_val:
                record["val_map50"] = self.score(X_val, y_val)
            record["seconds"] = time.perf_counter() - t_ep
            self.history_.append(record)
            self.epoch_ = epoch + 1
            log(_format_record(record))
            score = record.get("val_map50", -record["total"])
            if score > self.best_score_:
                self.best_score_ = score
                best_state = self.net_.state_dict()
                if ckpt_dir:
                    self.save(ckpt_dir / "best.ckpt")
            if ckpt_dir:
                self.save(ckpt_dir / "last.ckpt", with_optimizer=True)
            if self.time_budget_s and time.perf_counter() - t0 > self.time_budget_s and epoch + 1 < self.epochs:
                log(f"time budget of {self.time_budget_s:.0f}s reached after epoch {epoch + 1}")
                break
        self._best_state = best_state
        if best_state is not None:
            self.net_.load_state_dict(best_state)
        return self

    def overfit(self, image, labels, steps: int = 300, lr: float | None = None, log=None) -> list:
        """Repeated steps on a single scene; returns the total loss per step."""
        X = check_images(image)[:1]
        y = check_labels([labels] if np.ndim(labels) == 2 or len(labels) == 0 else labels, 1, self.n_classes)
        self.config_ = self.model_config()
        self._build(X.shape[1], self._fit_anchors(y))
        losses = []
        for step in range(steps):
            try:
                comps = self.train_step(X, y, lr=lr or self.lr)
            except D.LossError as exc:
                raise TrainingError(f"non-finite loss at step {step}: {exc}") from exc
            losses.append(comps["total"])
            if log and (step % 50 == 0 or step == steps - 1):
                log(f"step {step:4d} loss {comps['total']:.5f}")
        return losses

    # -- inference ------------------------------------------------------------------------------
    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise RuntimeError("this HifiYoloDetector is not fitted yet; call fit or load a checkpoint")

    def raw_predict(self, X, batch_size: int | None = None):
        """Per-batch head outputs as numpy arrays, concatenated over the input."""
        self._check_fitted()
        X = check_images(X)
        if X.shape[1] != self.img_size_:
            raise ValueError(f"model expects {self.img_size_}px images, got {X.shape[1]}px")
        bs = batch_size or max(self.batch_size, 8)
        outs = []
        with no_grad():
            for i in range(0, len(X), bs):
                outs.append([(r.data, c.data) for r, c in self.net_(X[i : i + bs])])
        return [
            (np.concatenate([o[s][0] for o in outs]), np.concatenate([o[s][1] for o in outs]))
            for s in range(len(outs[0]))
        ]

    def predict(self, X, conf_thresh: float | None = None):
        """List of :class:`~hifiyolo.detect.Detection` lists, one per image."""
        conf = check_fraction("conf_thresh", self.conf_thresh if conf_thresh is None else conf_thresh)
        preds = self.raw_predict(X)
        return D.decode_and_nms(preds, self.anchors_, conf_thresh=conf, iou_thresh=self.iou_thresh)

    def evaluate(self, X, y, ids=None, snr_db=None):
        """Full :class:`~hifiyolo.evalkit.EvalReport` on labelled images."""
        X = check_images(X)
        y = check_labels(y, len(X), self.n_classes)
        ids = [str(i) for i in (ids if ids is not None else range(len(X)))]
        dets = self.predict(X, conf_thresh=self.eval_conf)
        gts = {sid: labels_to_gt(l) for sid, l in zip(ids, y)}
        return map_metrics(dict(zip(ids, dets)), gts, snr_db)

    def score(self, X, y):
        """Validation mAP50 as a fraction in [0, 1]."""
        return self.evaluate(X, y).map_50 / 100.0

    # -- persistence ----------------------------------------------------------------------------
    def save(self, path, with_optimizer: bool = False) -> None:
        self._check_fitted()
        tensors = {f"model/{k}": v for k, v in self.net_.state_dict().items()}
        tensors["meta/anchors"] = self.anchors_.astype(np.float32)
        tensors["meta/params"] = _text_to_array(self._params_text())
        tensors["meta/train"] = np.array([self.epoch_, self.best_score_, self.img_size_], dtype=np.float32)
        if with_optimizer:
            tensors.update({f"optim/{k}": v for k, v in self.optimizer_.state_dict().items()})
        save_tensors(path, tensors)

    def _params_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in sorted(self.get_params().items()))

    @classmethod
    def from_checkpoint(cls, path) -> "HifiYoloDetector":
        tensors = _load(path)
        params = {}
        for line in _array_to_text(tensors["meta/params"]).splitlines():
            k, _, v = line.partition("=")
            params[k] = v
        defaults = cls().get_params()
        est = cls(**{k: _parse(defaults[k], v) for k, v in params.items() if k in defaults})
        est.load(path)
        return est

    def load(self, path, with_optimizer: bool = False) -> "HifiYoloDetector":
        tensors = _load(path)
        epoch, best, img = (float(v) for v in tensors["meta/train"])
        self.config_ = self.model_config()
        self._build(int(img), tensors["meta/anchors"].astype(np.float64))
        state = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}
        try:
            self.net_.load_state_dict(state)
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"{path} does not match the configured architecture: {exc}") from exc
        self.epoch_ = int(epoch)
        self.best_score_ = float(best)
        if with_optimizer:
            optim = {k[len("optim/"):]: v for k, v in tensors.items() if k.startswith("optim/")}
            if not optim:
                raise CheckpointError(f"{path} holds no optimizer state; resume from last.ckpt")
            self.optimizer_.load_state_dict(optim)
        return self


def roll_boxes(rows: np.ndarray, shift: float, axis: int, min_size: float = 0.0) -> np.ndarray:
    """Boxes after a cyclic shift of the image by ``shift`` (normalized) along x (0) or y (1).

    A box crossing the wrap-around edge splits into two; pieces thinner
    than ``min_size`` are dropped.
    """
    rows = np.asarray(rows, dtype=np.float64).reshape(-1, 5)
    c, s = 1 + axis, 3 + axis
    out = []
    for r in rows:
        lo = r[c] - r[s] / 2 + shift
        hi = r[c] + r[s] / 2 + shift
        lo, hi = lo - np.floor(lo), hi - np.floor(lo)
        pieces = [(lo, min(hi, 1.0))] + ([(0.0, hi - 1.0)] if hi > 1.0 else [])
        for a, b in pieces:
            if b - a >= min_size:
                q = r.copy()
                q[c], q[s] = (a + b) / 2, b - a
                out.append(q)
    return np.asarray(out, dtype=np.float64).reshape(-1, 5)


def labels_to_gt(rows) -> list:
    rows = np.asarray(rows, dtype=np.float64).reshape(-1, 5)
    return [(int(r[0]), D.Box(*map(float, r[1:5]))) for r in rows]


def _load(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        return load_tensors(path)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc


def _text_to_array(text: str) -> np.ndarray:
    return np.frombuffer(text.encode(), dtype=np.uint8).astype(np.float32)


def _array_to_text(a) -> str:
    return bytes(np.asarray(a).astype(np.uint8)).decode()


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def _parse(default, text: str):
    if isinstance(default, bool):
        return text == "True"
    if isinstance(default, tuple):
        return tuple(int(x) for x in text.split(",") if x)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _format_record(r: dict) -> str:
    parts = [f"epoch {r['epoch']:3d}"]
    for k in ("total", "box", "obj", "cls", "val_map50", "seconds"):
        if k in r:
            parts.append(f"{k} {r[k]:.4f}" if k != "seconds" else f"{r[k]:.1f}s")
    return "  ".join(parts)
