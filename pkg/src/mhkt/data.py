"""Paired heterogeneous dataset generation and loading.

Directory layout::

    manifest.json
    source/scs.jsonl        one JSON object per sample: index, class, centers
    target/images.f32       little-endian float32, row-major [N, H, W]
    target/labels.csv       index,class
    test/images.f32         held-out target-domain split, same format
    test/labels.csv
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ascsim import (
    JitterSpec,
    RadarConfig,
    ScatteringCenter,
    add_receiver_noise,
    generate_target_template,
    jitter_template,
    render_image,
    synthesize_backscatter,
)

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1

_DOMAIN_CODES = {"source": 0, "target": 1, "test": 2}

# Target-domain instances see wider pose and center dropout than the simulated
# source domain.
SOURCE_JITTER = JitterSpec()
TARGET_JITTER = JitterSpec(position_sigma=0.2, amplitude_sigma=0.35, pose_range=math.radians(30.0), dropout=0.15)


@dataclass
class DatasetManifest:
    K: int
    counts: dict[str, list[int]]
    radar: RadarConfig
    seed: int
    image_shape: tuple[int, int]
    simulation: dict = field(default_factory=dict)
    version: int = MANIFEST_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "K": self.K,
            "counts": self.counts,
            "radar": self.radar.to_dict(),
            "seed": self.seed,
            "image_shape": list(self.image_shape),
            "simulation": self.simulation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            K=int(d["K"]),
            counts={k: [int(c) for c in v] for k, v in d["counts"].items()},
            radar=RadarConfig.from_dict(d["radar"]),
            seed=int(d["seed"]),
            image_shape=tuple(d["image_shape"]),
            simulation=d.get("simulation", {}),
            version=int(d["version"]),
        )


MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["version", "K", "counts", "radar", "seed", "image_shape"],
    "properties": {
        "version": {"type": "integer"},
        "K": {"type": "integer", "minimum": 2},
        "counts": {
            "type": "object",
            "required": ["source", "target", "test"],
            "additionalProperties": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        },
        "radar": {"type": "object"},
        "seed": {"type": "integer"},
        "image_shape": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
    },
}


@dataclass
class Dataset:
    manifest: DatasetManifest
    source_centers: list[list[ScatteringCenter]]
    source_labels: np.ndarray
    target_images: np.ndarray
    target_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.manifest.K


def _sample_rng(seed: int, domain: str, class_id: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), _DOMAIN_CODES[domain], int(class_id), int(index)])


def simulate_target_image(
    scs: list[ScatteringCenter],
    cfg: RadarConfig,
    image_shape: tuple[int, int],
    snr_db: float,
    rng: np.random.Generator,
) -> np.ndarray:
    E = synthesize_backscatter(scs, cfg)
    E = add_receiver_noise(E, snr_db, rng)
    return render_image(E, cfg, image_shape).astype(np.float32)


def _write_images(path: Path, images: np.ndarray) -> None:
    path.write_bytes(np.ascontiguousarray(images, dtype="<f4").tobytes())


def _write_labels(path: Path, labels: list[int]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "class"])
    for i, y in enumerate(labels):
        w.writerow([i, y])
    path.write_text(buf.getvalue())


def generate_dataset(
    cfg: RadarConfig,
    K: int,
    n_source_per_class: int,
    n_target_per_class: int,
    seed: int,
    out_dir: str | Path,
    n_test_per_class: int = 195,
    image_shape: tuple[int, int] = (128, 128),
    snr_db: float = 10.0,
    source_jitter: JitterSpec = SOURCE_JITTER,
    target_jitter: JitterSpec = TARGET_JITTER,
) -> DatasetManifest:
    """Simulate a paired dataset and write it under ``out_dir``.

    Every sample is an independent jitter of its class template; source
    samples are stored as scattering-center sets, target and test samples as
    rendered images. Output is byte-identical for a fixed argument set.
    """
    if K < 2:
        raise ValueError("K must be >= 2")
    if min(n_source_per_class, n_target_per_class) < 1 or n_test_per_class < 0:
        raise ValueError("per-class counts must be >= 1 (test >= 0)")
    out = Path(out_dir)
    try:
        (out / "source").mkdir(parents=True, exist_ok=True)
        (out / "target").mkdir(exist_ok=True)
        (out / "test").mkdir(exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc

    templates = [generate_target_template(k, seed) for k in range(K)]

    lines = []
    for k in range(K):
        for i in range(n_source_per_class):
            scs = jitter_template(templates[k], _sample_rng(seed, "source", k, i), source_jitter)
            rec = {"index": len(lines), "class": k, "centers": [sc.to_record() for sc in scs]}
            lines.append(json.dumps(rec, sort_keys=True))
    (out / "source" / "scs.jsonl").write_text("\n".join(lines) + "\n")

    for domain, n in (("target", n_target_per_class), ("test", n_test_per_class)):
        images, labels = [], []
        for k in range(K):
            for i in range(n):
                rng = _sample_rng(seed, domain, k, i)
                scs = jitter_template(templates[k], rng, target_jitter)
                images.append(simulate_target_image(scs, cfg, image_shape, snr_db, rng))
                labels.append(k)
        arr = np.stack(images) if images else np.zeros((0, *image_shape), np.float32)
        _write_images(out / domain / "images.f32", arr)
        _write_labels(out / domain / "labels.csv", labels)

    manifest = DatasetManifest(
        K=K,
        counts={
            "source": [n_source_per_class] * K,
            "target": [n_target_per_class] * K,
            "test": [n_test_per_class] * K,
        },
        radar=cfg,
        seed=seed,
        image_shape=tuple(image_shape),
        simulation={
            "snr_db": snr_db,
            "source_jitter": source_jitter.to_dict(),
            "target_jitter": target_jitter.to_dict(),
        },
    )
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    logger.info("wrote dataset to %s", out)
    return manifest


def _read_labels(path: Path) -> np.ndarray:
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([int(r["class"]) for r in rows], dtype=np.int64)


def _read_images(path: Path, n: int, shape: tuple[int, int]) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f4")
    expected = n * shape[0] * shape[1]
    if raw.size != expected:
        raise ValueError(f"{path}: expected {expected} floats, found {raw.size}")
    return raw.reshape(n, *shape).astype(np.float32)


def load_dataset(path: str | Path) -> Dataset:
    root = Path(path)
    if not (root / "manifest.json").is_file():
        raise FileNotFoundError(f"no manifest.json in {root}")
    manifest = DatasetManifest.from_dict(json.loads((root / "manifest.json").read_text()))

    centers, src_labels = [], []
    with (root / "source" / "scs.jsonl").open() as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            centers.append([ScatteringCenter.from_record(c) for c in rec["centers"]])
            src_labels.append(int(rec["class"]))

    splits = {}
    for domain in ("target", "test"):
        labels = _read_labels(root / domain / "labels.csv")
        images = _read_images(root / domain / "images.f32", len(labels), manifest.image_shape)
        splits[domain] = (images, labels)

    return Dataset(
        manifest=manifest,
        source_centers=centers,
        source_labels=np.array(src_labels, dtype=np.int64),
        target_images=splits["target"][0],
        target_labels=splits["target"][1],
        test_images=splits["test"][0],
        test_labels=splits["test"][1],
    )
