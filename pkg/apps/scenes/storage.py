"""
Dataset persistence

Layout of a dataset directory:
    manifest.json           spec, split, format version and one record per scene
    scenes/<id>.f64         [3, H, W] image as little-endian float64
    masks/<id>_c<j>.f64     [H, W] ground-truth mask of category j (0.0 / 1.0)
    previews/<id>.png       optional, never read back
"""

import logging
from pathlib import Path

import numpy as np
from PIL import Image

from apps.core.blobs import read_blob, read_manifest, write_blob, write_json
from apps.scenes.synth import Dataset, DatasetSpec, SceneSample

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def image_to_pil(image):
    """Convert a [3, H, W] array in [0, 1] to an RGB PIL image"""
    pixels = np.clip(np.round(np.transpose(image, (1, 2, 0)) * 255.0), 0, 255).astype(np.uint8)
    return Image.fromarray(pixels)


def save_dataset(dataset, path, previews=False):
    """
    Write a dataset directory

    Args:
        dataset (Dataset): Samples and split
        path (str | Path): Target directory, created if needed
        previews (bool): Also write PNG previews

    Returns:
        Path: Path of the written manifest
    """
    root = Path(path)
    (root / "scenes").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    if previews:
        (root / "previews").mkdir(parents=True, exist_ok=True)

    records = []
    for sample in dataset.samples:
        image_file = f"scenes/{sample.id}.f64"
        record = {
            "id": sample.id,
            "labels": [int(v) for v in sample.labels],
            "object_areas": {str(c): int(a) for c, a in sample.object_areas.items()},
            "image": {"file": image_file, **write_blob(root / image_file, sample.image)},
            "masks": {},
        }
        for category, mask in sample.gt_masks.items():
            mask_file = f"masks/{sample.id}_c{category}.f64"
            record["masks"][str(category)] = {
                "file": mask_file,
                **write_blob(root / mask_file, mask.astype(np.float64)),
            }
        if previews:
            image_to_pil(sample.image).save(root / "previews" / f"{sample.id}.png")
        records.append(record)

    manifest_path = root / "manifest.json"
    write_json(
        manifest_path,
        {
            "format_version": FORMAT_VERSION,
            "spec": dataset.spec.to_dict(),
            "split": {"train": dataset.train_indices, "eval": dataset.eval_indices},
            "scenes": records,
        },
    )
    logger.info(f"Saved {len(records)} scenes to {root}")
    return manifest_path


def load_dataset(path):
    """
    Read a dataset directory written by save_dataset

    Returns:
        Dataset: Bit-identical to the saved one

    Raises:
        MissingArtifactError: If the manifest or a blob is absent
        FormatVersionError: If the manifest version differs
        ChecksumError: If any blob was modified
    """
    root = Path(path)
    manifest = read_manifest(root / "manifest.json", FORMAT_VERSION)

    samples = []
    for record in manifest["scenes"]:
        image_meta = record["image"]
        image = read_blob(root / image_meta["file"], image_meta["shape"], image_meta["sha256"])
        gt_masks = {}
        for category, meta in sorted(record["masks"].items(), key=lambda item: int(item[0])):
            gt_masks[int(category)] = read_blob(root / meta["file"], meta["shape"], meta["sha256"]) > 0.5
        samples.append(
            SceneSample(
                id=record["id"],
                image=image,
                labels=np.asarray(record["labels"], dtype=np.int64),
                gt_masks=gt_masks,
                object_areas={int(c): int(a) for c, a in record["object_areas"].items()},
            )
        )

    logger.debug(f"Loaded {len(samples)} scenes from {root}")
    return Dataset(
        spec=DatasetSpec.from_dict(manifest["spec"]),
        samples=samples,
        train_indices=list(manifest["split"]["train"]),
        eval_indices=list(manifest["split"]["eval"]),
    )
