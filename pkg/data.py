"""
Data Module

Handles bi-temporal samples, including:
- Generating deterministic synthetic scenes (rectangles and ellipses of land
  cover classes, mutated between the two epochs)
- Loading and saving the on-disk dataset layout
  (root/im1, root/im2, root/label1, root/label2, paired by file stem)
- Paired flip / right-angle rotation augmentation
- A torch Dataset for training and evaluation

Labels follow the SCD convention: class IDs are kept only where the two
epochs differ, 0 (no change) elsewhere. Change and boundary maps are always
derived from the labels, never read.
"""
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch.utils.data import Dataset

from config import SceneSpec
from errors import ClassCountError, DatasetError, ValidationError
from losses import boundary_target

logger = logging.getLogger(__name__)

LAYOUT = {"image_t1": "im1", "image_t2": "im2", "label_t1": "label1", "label_t2": "label2"}
TRANSFORMS = ("identity", "hflip", "vflip", "rot90", "rot180", "rot270")
PALETTE_SEED = 2024
OVERSHOOT = 0.1


def class_palette(classes):
    """
    Fixed per-class base colours in [0, 1], shape [classes, 3].

    The same palette renders synthetic images and colours label PNGs.
    """
    rng = np.random.default_rng(PALETTE_SEED)
    colours = rng.uniform(0.1, 0.9, size=(max(classes, 1), 3))
    return colours[:classes]


def palette_bytes(classes):
    """Flat 8-bit RGB palette for PIL ``putpalette``."""
    return [int(v) for v in np.round(class_palette(classes) * 255).astype(np.uint8).ravel()]


@dataclass
class BiTemporalSample:
    """
    One co-registered image pair with its labels.

    image_t1, image_t2: float32 [3, H, W] in [0, 1]
    label_t1, label_t2: int64 [H, W]
    change, boundary: uint8 [H, W], derived from the labels
    """

    image_t1: np.ndarray
    image_t2: np.ndarray
    label_t1: np.ndarray
    label_t2: np.ndarray
    change: np.ndarray
    boundary: np.ndarray
    stem: str = ""

    @classmethod
    def from_labels(cls, image_t1, image_t2, label_t1, label_t2, stem=""):
        """Build a sample, deriving the change and boundary maps."""
        label_t1 = np.asarray(label_t1, dtype=np.int64)
        label_t2 = np.asarray(label_t2, dtype=np.int64)
        change = ((label_t1 > 0) | (label_t2 > 0)).astype(np.uint8)
        return cls(
            image_t1=np.asarray(image_t1, dtype=np.float32),
            image_t2=np.asarray(image_t2, dtype=np.float32),
            label_t1=label_t1,
            label_t2=label_t2,
            change=change,
            boundary=boundary_target(label_t1, label_t2),
            stem=stem,
        )

    @property
    def size(self):
        return self.label_t1.shape

    def check(self, classes=None):
        """
        Verify shapes and the label/change/boundary invariants.

        Raises:
            ValidationError: If any invariant is violated
        """
        h, w = self.label_t1.shape
        for name in ("image_t1", "image_t2"):
            if getattr(self, name).shape != (3, h, w):
                raise ValidationError(f"{self.stem or 'sample'}: {name} has shape {getattr(self, name).shape}")
        if self.label_t2.shape != (h, w):
            raise ValidationError(f"{self.stem or 'sample'}: label maps differ in shape")
        expected = ((self.label_t1 > 0) | (self.label_t2 > 0)).astype(np.uint8)
        if not np.array_equal(self.change, expected):
            raise ValidationError(f"{self.stem or 'sample'}: change map disagrees with labels")
        if not np.array_equal(self.boundary, boundary_target(self.label_t1, self.label_t2)):
            raise ValidationError(f"{self.stem or 'sample'}: boundary map disagrees with labels")
        if classes is not None and max(self.label_t1.max(), self.label_t2.max()) >= classes:
            raise ClassCountError(f"{self.stem or 'sample'}: label index >= {classes}")


@dataclass(frozen=True)
class _Shape:
    kind: str
    top: int
    left: int
    height: int
    width: int
    cls: int


def _random_shape(rng, spec):
    h = int(rng.integers(max(3, spec.height // 10), max(4, spec.height // 3) + 1))
    w = int(rng.integers(max(3, spec.width // 10), max(4, spec.width // 3) + 1))
    return _Shape(
        kind=str(rng.choice(["rect", "ellipse"])),
        top=int(rng.integers(0, spec.height - h + 1)),
        left=int(rng.integers(0, spec.width - w + 1)),
        height=h,
        width=w,
        cls=int(rng.integers(1, spec.classes)),
    )


def _paint(shapes, height, width):
    cover = np.zeros((height, width), dtype=np.int64)
    yy, xx = np.mgrid[0:height, 0:width]
    for s in shapes:
        if s.kind == "rect":
            cover[s.top:s.top + s.height, s.left:s.left + s.width] = s.cls
        else:
            cy = s.top + (s.height - 1) / 2.0
            cx = s.left + (s.width - 1) / 2.0
            inside = ((yy - cy) / (s.height / 2.0)) ** 2 + ((xx - cx) / (s.width / 2.0)) ** 2 <= 1.0
            cover[inside] = s.cls
    return cover


def _mutate(rng, shapes, spec):
    ops = ["insert"] + (["swap", "delete"] if shapes else [])
    op = str(rng.choice(ops))
    shapes = list(shapes)
    if op == "insert":
        shapes.append(_random_shape(rng, spec))
    else:
        index = int(rng.integers(len(shapes)))
        if op == "delete":
            shapes.pop(index)
        else:
            old = shapes[index]
            choices = [c for c in range(1, spec.classes) if c != old.cls]
            shapes[index] = replace(old, cls=int(rng.choice(choices)))
    return shapes


def _render(rng, cover, palette, noise_std):
    height, width = cover.shape
    image = palette[cover].transpose(2, 0, 1)
    yy, xx = np.mgrid[0:height, 0:width]
    gy, gx = rng.uniform(-0.1, 0.1, size=2)
    offset = rng.uniform(-0.05, 0.05)
    illumination = gy * (yy / max(height - 1, 1) - 0.5) + gx * (xx / max(width - 1, 1) - 0.5) + offset
    image = image + illumination[None] + rng.normal(0.0, noise_std, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def generate_scene(spec):
    """
    Generate one synthetic bi-temporal scene, fully determined by ``spec.seed``.

    Epoch 1 places random rectangles and ellipses of classes 1..C-1 on a
    class-0 background. Epoch 2 applies class swaps, deletions and insertions
    until the changed fraction reaches ``change_ratio`` (mutations that would
    overshoot it by more than 0.1 are rejected), or ``max_mutations`` is used up.

    Args:
        spec (SceneSpec): Scene parameters

    Returns:
        BiTemporalSample: The generated sample

    Raises:
        ValidationError: If the spec is infeasible
    """
    if not isinstance(spec, SceneSpec):
        raise ValidationError(f"expected a SceneSpec, got {type(spec).__name__}")
    rng = np.random.default_rng(spec.seed)
    palette = class_palette(spec.classes)

    count = int(rng.integers(spec.num_shapes_min, spec.num_shapes_max + 1))
    shapes_t1 = [_random_shape(rng, spec) for _ in range(count)]
    cover_t1 = _paint(shapes_t1, spec.height, spec.width)

    shapes_t2, cover_t2, fraction = shapes_t1, cover_t1, 0.0
    mutations = attempts = 0
    while fraction < spec.change_ratio and mutations < spec.max_mutations and attempts < 4 * spec.max_mutations:
        attempts += 1
        candidate = _mutate(rng, shapes_t2, spec)
        candidate_cover = _paint(candidate, spec.height, spec.width)
        candidate_fraction = float(np.mean(candidate_cover != cover_t1))
        if candidate_fraction > spec.change_ratio + OVERSHOOT:
            continue
        shapes_t2, cover_t2, fraction = candidate, candidate_cover, candidate_fraction
        mutations += 1

    changed = cover_t1 != cover_t2
    label_t1 = np.where(changed, cover_t1, 0)
    label_t2 = np.where(changed, cover_t2, 0)

    image_t1 = _render(rng, cover_t1, palette, spec.noise_std)
    image_t2 = _render(rng, cover_t2, palette, spec.noise_std)
    logger.debug("Scene seed %d: %d shapes, %d mutations, change %.3f", spec.seed, count, mutations, fraction)
    return BiTemporalSample.from_labels(image_t1, image_t2, label_t1, label_t2, stem=f"{spec.seed:06d}")


def synthesize(spec, count, base_seed=None):
    """Generate ``count`` scenes with derived seeds base_seed + index."""
    base_seed = spec.seed if base_seed is None else base_seed
    return [generate_scene(spec.model_copy(update={"seed": base_seed + i})) for i in range(count)]


def _save_label(label, path, classes):
    image = Image.fromarray(label.astype(np.uint8))
    image.putpalette(palette_bytes(classes))
    image.save(path)


def save_sample(sample, root, stem=None, classes=None):
    """
    Write one sample in the dataset layout.

    Args:
        sample (BiTemporalSample): Sample to write
        root (str | Path): Dataset root
        stem (str, optional): File stem. Defaults to sample.stem.
        classes (int, optional): Palette size for label PNGs. Defaults to max label + 1.
    """
    root = Path(root)
    stem = stem or sample.stem
    if not stem:
        raise ValidationError("a file stem is required to save a sample")
    if classes is None:
        classes = int(max(sample.label_t1.max(), sample.label_t2.max(), 1)) + 1

    for key, folder in LAYOUT.items():
        (root / folder).mkdir(parents=True, exist_ok=True)
        path = root / folder / f"{stem}.png"
        array = getattr(sample, key)
        if key.startswith("image"):
            rgb = np.round(np.clip(array, 0.0, 1.0) * 255).astype(np.uint8).transpose(1, 2, 0)
            Image.fromarray(rgb).save(path)
        else:
            _save_label(array, path, classes)


def save_dataset(samples, root, classes=None):
    """Write samples with stems 00000, 00001, ..."""
    for index, sample in enumerate(samples):
        save_sample(sample, root, f"{index:05d}", classes)
    return len(samples)


def load_image_file(path):
    """
    Load an 8-bit RGB image as float32 [3, H, W] in [0, 1].

    Args:
        path (Path): Image file

    Returns:
        np.ndarray: Decoded image
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"File not found: {path}")
    try:
        with Image.open(path) as image:
            array = np.asarray(image.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as e:
        raise DatasetError(f"Error loading image {path}: {e}") from e
    return array.transpose(2, 0, 1).copy()


def load_label_file(path):
    """
    Load a single-channel 8-bit label image as int64 [H, W] class indices.

    Args:
        path (Path): Label file

    Returns:
        np.ndarray: Class index map
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"File not found: {path}")
    try:
        with Image.open(path) as image:
            if image.mode not in ("L", "P"):
                raise DatasetError(f"Label {path} must be single-channel (L or P), got mode {image.mode}")
            return np.asarray(image, dtype=np.int64).copy()
    except OSError as e:
        raise DatasetError(f"Error loading label {path}: {e}") from e


def load_pair(root, stem, classes=None):
    """
    Load one stem from the dataset layout.

    Raises:
        DatasetError: If a pair member is missing or sizes disagree
        ClassCountError: If a label index is >= classes
    """
    root = Path(root)
    paths = {key: root / folder / f"{stem}.png" for key, folder in LAYOUT.items()}
    for key, path in paths.items():
        if not path.exists():
            raise DatasetError(f"Pair '{stem}' is missing {LAYOUT[key]}/{stem}.png")

    image_t1 = load_image_file(paths["image_t1"])
    image_t2 = load_image_file(paths["image_t2"])
    label_t1 = load_label_file(paths["label_t1"])
    label_t2 = load_label_file(paths["label_t2"])

    size = image_t1.shape[1:]
    for name, shape in (("im2", image_t2.shape[1:]), ("label1", label_t1.shape), ("label2", label_t2.shape)):
        if shape != size:
            raise DatasetError(f"Pair '{stem}': {name} is {shape[0]}x{shape[1]}, im1 is {size[0]}x{size[1]}")

    if classes is not None:
        top = int(max(label_t1.max(), label_t2.max()))
        if top >= classes:
            raise ClassCountError(f"Pair '{stem}': label index {top} >= class count {classes}")

    return BiTemporalSample.from_labels(image_t1, image_t2, label_t1, label_t2, stem=stem)


def load_dataset(root, classes=None):
    """
    Load every pair under a dataset root.

    Args:
        root (str | Path): Directory containing im1/, im2/, label1/, label2/
        classes (int, optional): Class count to validate label indices against

    Returns:
        list[BiTemporalSample]: Samples sorted by stem
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"Dataset directory not found: {root}")

    stems = set()
    for folder in LAYOUT.values():
        if (root / folder).is_dir():
            stems.update(p.stem for p in (root / folder).glob("*.png"))
    if not stems:
        raise DatasetError(f"No PNG pairs found under {root}")

    samples = [load_pair(root, stem, classes) for stem in sorted(stems)]
    logger.info("Loaded %d pairs from %s", len(samples), root)
    return samples


def _transform_array(array, name, inverse=False):
    if name == "identity":
        out = array
    elif name == "hflip":
        out = array[..., ::-1]
    elif name == "vflip":
        out = array[..., ::-1, :]
    elif name in ("rot90", "rot180", "rot270"):
        k = {"rot90": 1, "rot180": 2, "rot270": 3}[name]
        out = np.rot90(array, -k if inverse else k, axes=(-2, -1))
    else:
        raise ValueError(f"unknown transform: {name}")
    return np.ascontiguousarray(out)


def apply_transform(sample, name, inverse=False):
    """Apply one transform (or its inverse) to every map of a sample."""
    fields = ("image_t1", "image_t2", "label_t1", "label_t2", "change", "boundary")
    return replace(sample, **{f: _transform_array(getattr(sample, f), name, inverse) for f in fields})


def sample_transform(seed):
    """Seeded choice among the six flip / rotation transforms."""
    return TRANSFORMS[int(np.random.default_rng(seed).integers(len(TRANSFORMS)))]


def augment(sample, seed):
    """Random flip / right-angle rotation applied identically to all maps."""
    return apply_transform(sample, sample_transform(seed))


def to_tensors(sample):
    """Convert a sample to the tensor dict used by training and evaluation."""
    return {
        "image_t1": torch.from_numpy(sample.image_t1),
        "image_t2": torch.from_numpy(sample.image_t2),
        "label_t1": torch.from_numpy(sample.label_t1),
        "label_t2": torch.from_numpy(sample.label_t2),
        "change": torch.from_numpy(sample.change),
        "boundary": torch.from_numpy(sample.boundary),
    }


class ScdDataset(Dataset):
    """
    Samples as tensor dicts, with optional seeded augmentation.

    The augmentation seed of item i in epoch e is base_seed + e * len + i.
    """

    def __init__(self, samples, augment=False, base_seed=0):
        self.samples = list(samples)
        self.augment = augment
        self.base_seed = base_seed
        self.epoch = 0

    def set_epoch(self, epoch):
        self.epoch = epoch

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, index):
        sample = self.samples[index]
        if self.augment:
            sample = augment(sample, self.base_seed + self.epoch * len(self.samples) + index)
        return to_tensors(sample)


# Test function
if __name__ == "__main__":
    import sys

    if len(sys.argv) > 1:
        samples = load_dataset(sys.argv[1])
        print(f"Loaded {len(samples)} pairs")
    else:
        fractions = [float(generate_scene(SceneSpec(seed=i)).change.mean()) for i in range(20)]
        print(f"Mean change fraction over 20 scenes: {np.mean(fractions):.3f}")
