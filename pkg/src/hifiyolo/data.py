"""Dataset directories: scene generation, SNR-stratified split, manifest and loading.

Layout::

    <root>/config.txt            resolved run configuration
    <root>/manifest.csv          scene_id,split,snr_db,seed
    <root>/scenes/<id>.iq|.txt|.meta|.spec
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .runconfig import RunConfig
from .sigsynth import ChannelConfig, SceneSpec, compose_scene, read_labels, write_scene
from .tfr import load_spectrogram, save_spectrogram, spectrogram

SPLITS = ("train", "val", "test")
WORKERS_ENV = "HIFIYOLO_WORKERS"


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneEntry:
    scene_id: str
    split: str
    snr_db: float
    seed: int


def n_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise DatasetError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def scene_plan(cfg: RunConfig) -> list:
    """Deterministic scene list: SNR cycles through the grid, seeds derive from ``cfg.seed``."""
    seeds = np.random.SeedSequence(cfg.seed).generate_state(cfg.n_scenes, dtype=np.uint32)
    grid = cfg.snr_grid
    return [(f"s{i:06d}", float(grid[i % len(grid)]), int(seeds[i] & 0x7FFFFFFF)) for i in range(cfg.n_scenes)]


def stratified_split(snrs, ratios, seed: int) -> list:
    """Split label per item; each SNR stratum is shuffled and cut by ``ratios``."""
    snrs = np.asarray(snrs, dtype=float)
    labels = [""] * len(snrs)
    rng = np.random.default_rng([seed, 7])
    for value in np.unique(snrs):
        idx = np.nonzero(snrs == value)[0]
        idx = idx[rng.permutation(len(idx))]
        n_train = int(round(ratios[0] * len(idx)))
        n_val = int(round(ratios[1] * len(idx)))
        n_val = min(n_val, len(idx) - n_train)
        for k, i in enumerate(idx):
            labels[i] = "train" if k < n_train else "val" if k < n_train + n_val else "test"
    return labels


def scene_spec(cfg: RunConfig, seed: int) -> SceneSpec:
    return SceneSpec(
        n_signals=tuple(cfg.n_signals) if len(cfg.n_signals) > 1 else int(cfg.n_signals[0]),
        max_overlap=cfg.max_overlap,
        n_samples=cfg.n_samples,
        f_s=cfg.f_s,
        rng_seed=seed,
        schemes=cfg.schemes,
        duration_range=tuple(cfg.duration_range),
        bandwidth_range=tuple(cfg.bandwidth_range),
    )


def channel_config(cfg: RunConfig, snr_db: float) -> ChannelConfig:
    return ChannelConfig(k_factor=cfg.k_factor, snr_db=snr_db, fading_mode=cfg.fading_mode, doppler_hz=cfg.doppler_hz)


def _render(job):
    cfg, scene_dir, scene_id, snr, seed = job
    rec = compose_scene(scene_spec(cfg, seed), channel_config(cfg, snr))
    spec = spectrogram(rec, n_fft=cfg.n_fft, hop=cfg.hop, floor_db=cfg.floor_db)
    write_scene(scene_dir, scene_id, rec, spec.values.shape[0], spec.values.shape[1])
    save_spectrogram(Path(scene_dir) / f"{scene_id}.spec", spec.values)
    return scene_id


def generate_dataset(cfg: RunConfig, out_dir, overwrite: bool = False, workers: int | None = None, log=None) -> list:
    """Write scenes and the manifest; returns the manifest entries."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise DatasetError(f"output directory {out} is not empty (pass --overwrite to replace it)")
        _clear(out)
    out.mkdir(parents=True, exist_ok=True)
    plan = scene_plan(cfg)
    labels = stratified_split([p[1] for p in plan], cfg.split, cfg.seed)
    entries = [SceneEntry(sid, lab, snr, seed) for (sid, snr, seed), lab in zip(plan, labels)]
    cfg.save(out / "config.txt")
    write_manifest(out / "manifest.csv", entries)
    if cfg.manifest_only:
        return entries
    scene_dir = out / "scenes"
    scene_dir.mkdir(exist_ok=True)
    jobs = [(cfg, str(scene_dir), e.scene_id, e.snr_db, e.seed) for e in entries]
    workers = workers or n_workers()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            for k, _ in enumerate(pool.map(_render, jobs, chunksize=8), 1):
                if log and k % 100 == 0:
                    log(f"generated {k}/{len(jobs)} scenes")
    else:
        for k, job in enumerate(jobs, 1):
            _render(job)
            if log and k % 100 == 0:
                log(f"generated {k}/{len(jobs)} scenes")
    return entries


def _clear(path: Path) -> None:
    import shutil

    for child in path.iterdir():
        if child.is_dir():
            shutil.rmtree(child)
        else:
            child.unlink()


def write_manifest(path, entries) -> None:
    lines = ["scene_id,split,snr_db,seed"] + [f"{e.scene_id},{e.split},{e.snr_db:g},{e.seed}" for e in entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no manifest at {path}")
    rows = path.read_text().strip().splitlines()[1:]
    out = []
    for row in rows:
        sid, split, snr, seed = row.split(",")
        out.append(SceneEntry(sid, split, float(snr), int(seed)))
    return out


@dataclass
class SplitData:
    """Images ``(n, H, W)`` (frequency rows, time columns), labels and SNR per scene."""

    ids: list
    images: np.ndarray
    labels: list
    snr_db: dict

    def __len__(self):
        return len(self.ids)


def load_split(root, split: str) -> SplitData:
    root = Path(root)
    if split not in SPLITS and split != "all":
        raise DatasetError(f"unknown split {split!r}")
    entries = [e for e in read_manifest(root / "manifest.csv") if split == "all" or e.split == split]
    if not entries:
        raise DatasetError(f"split {split!r} of {root} is empty")
    scene_dir = root / "scenes"
    if not scene_dir.is_dir():
        raise DatasetError(f"{root} has a manifest but no scene files (manifest-only dataset)")
    images, labels = [], []
    for e in entries:
        images.append(load_spectrogram(scene_dir / f"{e.scene_id}.spec").T)
        labels.append(read_labels(scene_dir / f"{e.scene_id}.txt"))
    return SplitData(
        ids=[e.scene_id for e in entries],
        images=np.ascontiguousarray(np.stack(images), dtype=np.float32),
        labels=labels,
        snr_db={e.scene_id: e.snr_db for e in entries},
    )
