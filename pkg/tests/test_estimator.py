import numpy as np
import pytest
from sklearn.base import clone

from hifiyolo.estimator import CheckpointError, HifiYoloDetector, TrainingError, roll_boxes
from hifiyolo.runconfig import RunConfig

TINY = dict(L=3, channels=(2, 4, 8, 8, 8), n_classes=3, batch_size=4, epochs=2, lr=0.004)


def toy_data(n=8, size=64, seed=0):
    """Bright rectangles on a noise floor; class decides the aspect."""
    rng = np.random.default_rng(seed)
    X = 0.1 * rng.random((n, size, size)).astype(np.float32)
    y = []
    for i in range(n):
        rows = []
        for _ in range(int(rng.integers(1, 3))):
            c = int(rng.integers(0, 3))
            w, h = [(0.5, 0.15), (0.2, 0.3), (0.3, 0.1)][c]
            cx, cy = rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2)
            x0, x1 = int((cx - w / 2) * size), int((cx + w / 2) * size)
            y0, y1 = int((cy - h / 2) * size), int((cy + h / 2) * size)
            X[i, y0:y1, x0:x1] = 0.8 + 0.1 * c
            rows.append([c, (x0 + x1) / 2 / size, (y0 + y1) / 2 / size, (x1 - x0) / size, (y1 - y0) / size])
        y.append(np.array(rows))
    return X, y


def test_sklearn_params_and_clone():
    est = HifiYoloDetector(**TINY)
    params = est.get_params()
    assert params["channels"] == (2, 4, 8, 8, 8) and params["lr"] == 0.004
    twin = clone(est)
    assert twin.get_params() == params and not hasattr(twin, "net_")
    est.set_params(lfe_mode="laplacian")
    assert est.model_config().lfe_mode == "laplacian"


def test_from_run_config_copies_fields():
    cfg = RunConfig.build("desk", {"epochs": "3", "lfe_mode": "off", "head_mode": "original"})
    est = HifiYoloDetector.from_run_config(cfg)
    assert est.epochs == 3 and est.lfe_mode == "off" and est.head_mode == "original" and est.n_classes == 14


def test_unfitted_predict_raises():
    with pytest.raises(RuntimeError, match="not fitted"):
        HifiYoloDetector().predict(np.zeros((1, 64, 64)))


def test_input_validation():
    est = HifiYoloDetector(**TINY)
    X, y = toy_data(2)
    with pytest.raises(ValueError, match="square"):
        est.fit(np.zeros((2, 64, 32)), y)
    with pytest.raises(ValueError, match="label sets"):
        est.fit(X, y[:1])
    with pytest.raises(ValueError, match="class ids"):
        est.fit(X, [np.array([[5, 0.5, 0.5, 0.1, 0.1]]), y[1]])
    bad = X.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        est.fit(bad, y)


def test_fit_predict_evaluate_shapes(tmp_path):
    X, y = toy_data(8)
    est = HifiYoloDetector(**TINY).fit(X, y, X[:4], y[:4], checkpoint_dir=tmp_path)
    assert [r["epoch"] for r in est.history_] == [1, 2]
    assert all({"total", "box", "obj", "cls", "val_map50"} <= set(r) for r in est.history_)
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "last.ckpt").exists()
    dets = est.predict(X[:3], conf_thresh=0.01)
    assert len(dets) == 3
    report = est.evaluate(X[:4], y[:4])
    assert 0 <= report.map_50 <= 100
    assert est.score(X[:4], y[:4]) == pytest.approx(report.map_50 / 100)


def test_checkpoint_round_trip(tmp_path):
    X, y = toy_data(4)
    est = HifiYoloDetector(**{**TINY, "epochs": 1}).fit(X, y)
    est.save(tmp_path / "m.ckpt")
    back = HifiYoloDetector.from_checkpoint(tmp_path / "m.ckpt")
    assert back.get_params() == est.get_params()
    a, b = est.raw_predict(X), back.raw_predict(X)
    for (ra, ca), (rb, cb) in zip(a, b):
        assert ra.tobytes() == rb.tobytes() and ca.tobytes() == cb.tobytes()


def test_missing_and_mismatched_checkpoints(tmp_path):
    with pytest.raises(CheckpointError, match="does not exist"):
        HifiYoloDetector.from_checkpoint(tmp_path / "nope.ckpt")
    X, y = toy_data(4)
    est = HifiYoloDetector(**{**TINY, "epochs": 1}).fit(X, y)
    est.save(tmp_path / "m.ckpt")
    other = HifiYoloDetector(**{**TINY, "channels": (4, 8, 8, 8, 8)})
    with pytest.raises(CheckpointError, match="architecture"):
        other.load(tmp_path / "m.ckpt")
    with pytest.raises(CheckpointError, match="optimizer"):
        other.set_params(channels=TINY["channels"]).load(tmp_path / "m.ckpt", with_optimizer=True)


def test_resume_reproduces_next_epoch_bitwise(tmp_path):
    X, y = toy_data(8)
    full = HifiYoloDetector(**{**TINY, "epochs": 2}).fit(X, y, checkpoint_dir=tmp_path / "full")
    first = HifiYoloDetector(**{**TINY, "epochs": 1}).fit(X, y, checkpoint_dir=tmp_path / "part")
    assert first.history_[0] == {**full.history_[0], "seconds": first.history_[0]["seconds"]}
    resumed = HifiYoloDetector(**{**TINY, "epochs": 2}).fit(X, y, checkpoint_dir=tmp_path / "part", resume=tmp_path / "part" / "last.ckpt")
    r, f = resumed.history_[-1], full.history_[1]
    assert r["epoch"] == 2
    for key in ("total", "box", "obj", "cls"):
        assert r[key] == f[key]


def test_training_is_deterministic():
    X, y = toy_data(8)
    a = HifiYoloDetector(**{**TINY, "epochs": 1}).fit(X, y)
    b = HifiYoloDetector(**{**TINY, "epochs": 1}).fit(X, y)
    assert a.history_[0]["total"] == b.history_[0]["total"]


def test_loss_decreases_when_smoothed():
    X, y = toy_data(8)
    est = HifiYoloDetector(**{**TINY, "epochs": 8, "augment": "none"}).fit(X, y)
    totals = [r["total"] for r in est.history_]
    assert np.mean(totals[-3:]) < np.mean(totals[:3])


def test_overfit_single_scene():
    X, y = toy_data(1, seed=3)
    losses = HifiYoloDetector(**TINY).overfit(X, y[0], steps=150, lr=0.01)
    assert len(losses) == 150
    assert losses[-1] < 0.2 * losses[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_names_the_step():
    X, y = toy_data(4)
    est = HifiYoloDetector(**{**TINY, "lr": 1e30, "epochs": 3})
    with pytest.raises(TrainingError, match="step"):
        est.fit(X, y)


def test_roll_boxes_splits_at_the_wrap():
    rows = np.array([[1, 0.9, 0.5, 0.4, 0.2]])
    out = roll_boxes(rows, 0.0, axis=0)
    np.testing.assert_allclose(out, [[1, 0.85, 0.5, 0.3, 0.2], [1, 0.05, 0.5, 0.1, 0.2]], atol=1e-12)
    shifted = roll_boxes(np.array([[0, 0.5, 0.5, 0.2, 0.2]]), 0.25, axis=1)
    np.testing.assert_allclose(shifted, [[0, 0.5, 0.75, 0.2, 0.2]], atol=1e-12)
    tiny = roll_boxes(rows, 0.0, axis=0, min_size=0.15)
    assert len(tiny) == 1


def test_augmented_labels_follow_the_image():
    X, y = toy_data(4, seed=5)
    est = HifiYoloDetector(**TINY)
    imgs, labs = est._augment(X, y, epoch=0, step=0)
    for img, rows in zip(imgs, labs):
        for r in rows:
            x0, x1 = int(round((r[1] - r[3] / 2) * 64)), int(round((r[1] + r[3] / 2) * 64))
            y0, y1 = int(round((r[2] - r[4] / 2) * 64)), int(round((r[2] + r[4] / 2) * 64))
            assert img[y0:y1, x0:x1].mean() > 0.7
