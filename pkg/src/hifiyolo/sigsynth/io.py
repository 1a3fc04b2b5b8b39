"""On-disk scene format: raw I/Q, YOLO labels and key=value metadata."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_iq(path, samples: np.ndarray) -> None:
    """Little-endian interleaved float32 (I, Q) pairs."""
    samples = np.asarray(samples)
    inter = np.empty(2 * samples.size, dtype="<f4")
    inter[0::2] = samples.real
    inter[1::2] = samples.imag
    Path(path).write_bytes(inter.tobytes())


def read_iq(path) -> np.ndarray:
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    return (raw[0::2] + 1j * raw[1::2]).astype(np.complex64)


def write_labels(path, boxes) -> None:
    lines = [f"{int(c)} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}" for c, (cx, cy, w, h) in boxes]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_labels(path) -> np.ndarray:
    """Rows of ``class_id cx cy w h``; shape ``(k, 5)``."""
    text = Path(path).read_text().strip()
    if not text:
        return np.zeros((0, 5))
    return np.array([[float(v) for v in line.split()] for line in text.splitlines()]).reshape(-1, 5)


def write_kv(path, values: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in values.items()))


def read_kv(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def write_scene(directory, scene_id: str, rec, n_t: int, n_f: int) -> dict:
    """Write ``<id>.iq``, ``<id>.txt`` and ``<id>.meta`` for one recording."""
    from .scene import ground_truth_boxes

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_iq(d / f"{scene_id}.iq", rec.samples)
    write_labels(d / f"{scene_id}.txt", ground_truth_boxes(rec, n_t, n_f))
    meta = {"snr_db": rec.snr_db, "seed": rec.seed, "f_s": rec.f_s, "n": rec.n_samples, "k": rec.num_signals}
    write_kv(d / f"{scene_id}.meta", meta)
    return meta
