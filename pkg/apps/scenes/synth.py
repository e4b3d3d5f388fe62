"""
Synthetic multi-object scene generator
Builds images with image-level labels and pixel-level ground truth

This module provides:
- DatasetSpec: everything that determines a synthetic dataset
- SceneSample: one image with its multi-hot labels, masks and areas
- Dataset: samples plus the deterministic train/eval split
- generate_scene() / generate_dataset()

Each category is drawn as its own shape family with its own base hue.
Objects never overlap; placement is rejection-sampled.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from apps.autodiff.ops import bilinear_resize
from apps.autodiff.tensor import Tensor, no_grad
from apps.core.exceptions import ConfigurationError, SceneGenerationError
from apps.core.seeding import derive_rng

logger = logging.getLogger(__name__)

# One shape family and one base colour per category, in category order
SHAPE_FAMILIES = ("disk", "rectangle", "triangle", "ring", "diamond", "cross")
BASE_COLORS = (
    (0.85, 0.20, 0.20),
    (0.20, 0.75, 0.25),
    (0.20, 0.35, 0.90),
    (0.90, 0.80, 0.15),
    (0.80, 0.25, 0.80),
    (0.15, 0.80, 0.80),
)

PLACEMENT_ATTEMPTS = 1000

# Bisection bounds and rounds for matching a target pixel area
MAX_SCALE = 1.25
CALIBRATION_ROUNDS = 12


@dataclass(frozen=True)
class DatasetSpec:
    """
    Parameters of a synthetic dataset

    Attributes:
        num_scenes (int): Number of images
        image_size (int): Height and width in pixels
        num_categories (int): |C|, at most len(SHAPE_FAMILIES)
        size_range (tuple[float, float]): Object area as a fraction of the image
        max_objects (int): Upper bound on objects (= categories) per scene
        noise (float): Amplitude of per-pixel noise and colour jitter
        max_coverage (float): Cap on the summed object area fraction
        seed (int): 64-bit seed; a DatasetSpec fully determines the output
    """

    num_scenes: int = 200
    image_size: int = 64
    num_categories: int = 4
    size_range: tuple = (0.02, 0.30)
    max_objects: int = 2
    noise: float = 0.06
    max_coverage: float = 0.45
    seed: int = 20240601

    def __post_init__(self):
        low, high = self.size_range
        if not 0 < low <= high < 1:
            raise ConfigurationError(f"size_range {self.size_range} must satisfy 0 < min <= max < 1")
        if low > self.max_coverage:
            raise ConfigurationError(
                f"size_range minimum {low} exceeds max_coverage {self.max_coverage}; no object would fit"
            )
        if not 1 <= self.num_categories <= len(SHAPE_FAMILIES):
            raise ConfigurationError(
                f"num_categories must be in [1, {len(SHAPE_FAMILIES)}], got {self.num_categories}"
            )
        if not 1 <= self.max_objects <= self.num_categories:
            raise ConfigurationError(
                f"max_objects must be in [1, num_categories], got {self.max_objects}"
            )
        if self.num_scenes < 1 or self.image_size < 8:
            raise ConfigurationError("num_scenes must be >= 1 and image_size >= 8")

    def to_dict(self):
        document = asdict(self)
        document["size_range"] = list(self.size_range)
        return document

    @classmethod
    def from_dict(cls, document):
        document = dict(document)
        document["size_range"] = tuple(document["size_range"])
        return cls(**document)


@dataclass
class SceneSample:
    """
    One synthetic image with its supervision

    Attributes:
        id (str): Unique identifier, e.g. "scene-00017"
        image (np.ndarray): [3, H, W] values in [0, 1]
        labels (np.ndarray): Multi-hot int vector of length |C|
        gt_masks (dict[int, np.ndarray]): Boolean [H, W] mask per present category
        object_areas (dict[int, int]): Pixel count per present category
    """

    id: str
    image: np.ndarray
    labels: np.ndarray
    gt_masks: dict = field(default_factory=dict)
    object_areas: dict = field(default_factory=dict)

    @property
    def categories(self):
        """Present categories C_pos, ascending"""
        return [int(j) for j in np.flatnonzero(self.labels)]


@dataclass
class Dataset:
    """
    Samples plus split indices

    Attributes:
        spec (DatasetSpec): Generating spec
        samples (list[SceneSample]): All scenes in index order
        train_indices (list[int]): 90% split
        eval_indices (list[int]): 10% split
    """

    spec: DatasetSpec
    samples: list
    train_indices: list
    eval_indices: list

    def __len__(self):
        return len(self.samples)

    def subset(self, indices):
        return [self.samples[i] for i in indices]

    @property
    def train(self):
        return self.subset(self.train_indices)

    @property
    def eval(self):
        return self.subset(self.eval_indices)


def stack_images(samples):
    """[N, 3, H, W] batch array"""
    return np.stack([s.image for s in samples])


def stack_labels(samples):
    """[N, |C|] float label matrix"""
    return np.stack([s.labels for s in samples]).astype(np.float64)


# -- shape rasterization ------------------------------------------------------


def _half_extents(family, area, rng):
    """Half-height and half-width giving a continuous area of `area` pixels"""
    if family == "disk":
        half = np.sqrt(area / np.pi)
        return half, half
    if family == "rectangle":
        aspect = rng.uniform(0.6, 1.6)
        half_w = np.sqrt(area * aspect) / 2
        return area / (4 * half_w), half_w
    if family == "triangle":
        half = np.sqrt(2 * area) / 2
        return half, half
    if family == "ring":
        half = np.sqrt(area / (0.75 * np.pi))
        return half, half
    if family == "diamond":
        half = np.sqrt(area / 2)
        return half, half
    if family == "cross":
        half = np.sqrt(9 * area / 5) / 2
        return half, half
    raise ConfigurationError(f"unknown shape family {family}")


def _rasterize(family, dy, dx, half_h, half_w):
    if family == "disk":
        return dy**2 + dx**2 <= half_h**2
    if family == "rectangle":
        return (np.abs(dy) <= half_h) & (np.abs(dx) <= half_w)
    if family == "triangle":
        # Apex at the top, base at the bottom
        depth = (dy + half_h) / (2 * half_h)
        return (depth >= 0) & (depth <= 1) & (np.abs(dx) <= depth * half_w)
    if family == "ring":
        distance = dy**2 + dx**2
        return (distance <= half_h**2) & (distance >= (half_h / 2) ** 2)
    if family == "diamond":
        return np.abs(dy) + np.abs(dx) <= half_h
    # cross: two bars, each a third of the extent thick
    thickness = half_h / 3
    vertical = (np.abs(dx) <= thickness) & (np.abs(dy) <= half_h)
    horizontal = (np.abs(dy) <= thickness) & (np.abs(dx) <= half_w)
    return vertical | horizontal


def _shape_mask(family, area, rng, grid_y, grid_x, size):
    """
    Rasterize one shape of the requested pixel area at a random position

    The continuous extents are rescaled by bisection until the pixel count
    is as close to `area` as the grid allows.

    Returns:
        np.ndarray: Boolean mask, or None if the shape cannot fit
    """
    half_h, half_w = _half_extents(family, area, rng)
    reach_h, reach_w = half_h * MAX_SCALE, half_w * MAX_SCALE
    if 2 * reach_h >= size - 1 or 2 * reach_w >= size - 1:
        return None

    dy = grid_y - rng.uniform(reach_h, size - reach_h)
    dx = grid_x - rng.uniform(reach_w, size - reach_w)

    low, high = 1.0 / MAX_SCALE, MAX_SCALE
    best = _rasterize(family, dy, dx, half_h, half_w)
    for _ in range(CALIBRATION_ROUNDS):
        factor = (low + high) / 2
        mask = _rasterize(family, dy, dx, half_h * factor, half_w * factor)
        count = int(mask.sum())
        if abs(count - area) < abs(int(best.sum()) - area):
            best = mask
        if count < area:
            low = factor
        else:
            high = factor
    return best


def _background(rng, size, noise):
    # Low-frequency texture: a coarse random grid upsampled bilinearly
    coarse = rng.uniform(0.30, 0.60, size=(1, 3, 6, 6))
    with no_grad():
        texture = bilinear_resize(Tensor(coarse), size, size).data[0]
    grey = texture.mean(axis=0, keepdims=True)
    texture = 0.7 * grey + 0.3 * texture
    return texture + rng.normal(scale=noise, size=(3, size, size))


def generate_scene(spec, index):
    """
    Generate one scene, deterministic in (spec.seed, index)

    Args:
        spec (DatasetSpec): Dataset parameters
        index (int): Scene index, 0 <= index < spec.num_scenes

    Returns:
        SceneSample: The rendered scene

    Raises:
        ConfigurationError: If index is out of range
        SceneGenerationError: If an object cannot be placed without overlap
            within PLACEMENT_ATTEMPTS tries
    """
    if not 0 <= index < spec.num_scenes:
        raise ConfigurationError(f"scene index {index} outside [0, {spec.num_scenes})")

    rng = derive_rng(spec.seed, "scene", index)
    size = spec.image_size
    pixels = size * size
    low, high = spec.size_range

    count = int(rng.integers(1, spec.max_objects + 1))
    categories = sorted(int(c) for c in rng.choice(spec.num_categories, size=count, replace=False))

    # Draw areas under the coverage cap; the first object is always placed,
    # later objects that no longer fit the cap are dropped
    budget = spec.max_coverage
    fractions = {}
    for category in rng.permutation(categories):
        upper = min(high, budget)
        if not fractions:
            upper = max(low, upper)
        elif upper < low:
            continue
        fraction = float(rng.uniform(low, upper))
        fractions[int(category)] = fraction
        budget -= fraction

    grid_y, grid_x = np.mgrid[0:size, 0:size] + 0.5
    occupied = np.zeros((size, size), dtype=bool)
    image = _background(rng, size, spec.noise)
    gt_masks = {}

    # Largest objects first; a rejected object shrinks linearly toward the
    # minimum fraction over the attempt budget
    for category in sorted(fractions, key=lambda c: -fractions[c]):
        family = SHAPE_FAMILIES[category]
        drawn = fractions[category]
        for attempt in range(PLACEMENT_ATTEMPTS):
            target = (drawn - (drawn - low) * attempt / PLACEMENT_ATTEMPTS) * pixels
            mask = _shape_mask(family, target, rng, grid_y, grid_x, size)
            if mask is not None and mask.any() and not (mask & occupied).any():
                break
        else:
            logger.error(f"Placement failed for category {category} in scene {index}")
            raise SceneGenerationError(
                f"could not place category {category} in scene {index} after "
                f"{PLACEMENT_ATTEMPTS} attempts (spec too crowded)",
                {"index": index, "category": category},
            )

        occupied |= mask
        gt_masks[category] = mask
        color = np.asarray(BASE_COLORS[category]) + rng.uniform(-spec.noise, spec.noise, 3)
        shade = color[:, None, None] + rng.normal(scale=spec.noise, size=(3, size, size))
        image = np.where(mask[None], shade, image)

    labels = np.zeros(spec.num_categories, dtype=np.int64)
    for category in gt_masks:
        labels[category] = 1

    return SceneSample(
        id=f"scene-{index:05d}",
        image=np.clip(image, 0.0, 1.0),
        labels=labels,
        gt_masks=dict(sorted(gt_masks.items())),
        object_areas={c: int(m.sum()) for c, m in sorted(gt_masks.items())},
    )


def split_indices(spec):
    """
    Deterministic 90/10 train/eval split

    Returns:
        tuple[list[int], list[int]]: (train, eval), both sorted
    """
    order = derive_rng(spec.seed, "split").permutation(spec.num_scenes)
    eval_count = spec.num_scenes // 10
    return sorted(int(i) for i in order[eval_count:]), sorted(int(i) for i in order[:eval_count])


def generate_dataset(spec):
    """
    Generate every scene of a spec and split it

    Args:
        spec (DatasetSpec): Dataset parameters

    Returns:
        Dataset: Samples with train/eval indices
    """
    logger.info(
        f"Generating {spec.num_scenes} scenes ({spec.image_size}px, "
        f"{spec.num_categories} categories, seed {spec.seed})"
    )
    samples = [generate_scene(spec, index) for index in range(spec.num_scenes)]
    train, evaluation = split_indices(spec)
    return Dataset(spec=spec, samples=samples, train_indices=train, eval_indices=evaluation)
