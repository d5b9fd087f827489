"""Batch conversion of a labeled image directory into a
privacy-preserved frequency-tensor dataset.

Source layout: one subdirectory per class label, PNG/PPM images inside.
Output layout: dst/tensors/NNNNNN.fdp (one FDP1 file per image, labels
only in the manifest) plus dst/manifest.json written last, so a present
manifest implies every referenced file is complete.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import image_io
from .bdct import remove_dc
from .dp import BudgetAllocation, SensitivityMap, derive_rng, perturb
from .pipeline import image_to_tensor
from .storage import created_at, read_tensor_file, write_tensor_file

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1


@dataclass
class DatasetManifest:
    image_count: int
    labels: list
    files: list
    tensor_shape: list
    epsilon_total: float
    theta_sha256: str
    sensitivity_id: str
    master_seed: int
    upsample_factor: int
    skipped: int = 0
    version: int = MANIFEST_VERSION
    created_at: str = ""
    class_names: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        return cls(**json.loads(text))


def list_labeled_images(src) -> list:
    """Sorted (path, class name) pairs from a class-per-subdirectory tree."""
    src = Path(src)
    items = []
    for class_dir in sorted(p for p in src.iterdir() if p.is_dir()):
        for img in sorted(class_dir.iterdir()):
            if img.suffix.lower() in (".png", ".ppm", ".pnm"):
                items.append((img, class_dir.name))
    return items


def theta_fingerprint(theta: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(theta, dtype="<f8").tobytes()).hexdigest()


def transform_dataset(
    src,
    s: SensitivityMap,
    theta: np.ndarray,
    epsilon_total: float,
    master_seed: int,
    dst,
    upsample_factor: int = 8,
) -> DatasetManifest:
    """Transform every labeled image under src into a perturbed tensor.

    Each image's noise stream is derived from (master_seed, image index
    in sorted order), so outputs are independent of processing order and
    fully reproducible. Unreadable images are skipped and counted.
    """
    items = list_labeled_images(src)
    if not items:
        raise ValueError(f"no labeled images found under {src}")
    dst = Path(dst)
    tensor_dir = dst / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)

    allocation = BudgetAllocation(
        theta=np.asarray(theta, dtype=np.float64).reshape(s.shape),
        epsilon_total=epsilon_total,
        support=s.support,
    )
    class_names = sorted({label for _, label in items})
    class_index = {name: i for i, name in enumerate(class_names)}

    labels, files = [], []
    shape = None
    skipped = 0
    for index, (path, label) in enumerate(items):
        try:
            img = image_io.load_image(path)
        except image_io.ImageIoError as e:
            log.warning("skipping %s: %s", path, e)
            skipped += 1
            continue
        t = remove_dc(image_to_tensor(img, upsample_factor))
        if t.values.shape != s.shape:
            raise ValueError(
                f"{path}: tensor shape {t.values.shape} != calibrated {s.shape}"
            )
        noisy = perturb(t.values, s, allocation, derive_rng(master_seed, index))
        name = f"{index:06d}.fdp"
        write_tensor_file(tensor_dir / name, noisy.astype(np.float32))
        labels.append(class_index[label])
        files.append(f"tensors/{name}")
        shape = list(t.values.shape)

    if shape is None:
        raise ValueError("every input image failed to load")
    manifest = DatasetManifest(
        image_count=len(files),
        labels=labels,
        files=files,
        tensor_shape=shape,
        epsilon_total=float(epsilon_total),
        theta_sha256=theta_fingerprint(allocation.theta),
        sensitivity_id=s.dataset_id,
        master_seed=int(master_seed),
        upsample_factor=upsample_factor,
        skipped=skipped,
        created_at=created_at(),
        class_names=class_names,
    )
    # manifest last: acts as the completion marker
    (dst / "manifest.json").write_text(manifest.to_json())
    return manifest


def load_transformed_dataset(dst):
    """Read back a transformed dataset: (tensors (N, ...), labels, manifest)."""
    dst = Path(dst)
    manifest = DatasetManifest.from_json((dst / "manifest.json").read_text())
    tensors = np.stack([read_tensor_file(dst / f) for f in manifest.files])
    return tensors, np.asarray(manifest.labels), manifest


def scan_for_raw_pixels(dst) -> list:
    """Paths under dst that are not FDP1 tensors or the manifest.

    Used to assert the output directory leaks no RGB data.
    """
    offenders = []
    for p in sorted(Path(dst).rglob("*")):
        if p.is_dir():
            continue
        if p.name == "manifest.json":
            continue
        if p.suffix == ".fdp" and p.read_bytes()[:4] == b"FDP1":
            continue
        offenders.append(p)
    return offenders
