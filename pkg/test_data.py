import numpy as np
import pytest
import torch
from PIL import Image

from config import SceneSpec
from data import (
    LAYOUT,
    TRANSFORMS,
    ScdDataset,
    apply_transform,
    augment,
    class_palette,
    generate_scene,
    load_dataset,
    palette_bytes,
    sample_transform,
    save_dataset,
    synthesize,
)
from errors import ClassCountError, DatasetError, ValidationError

SPEC = SceneSpec(height=32, width=32, classes=5, seed=3)


def assert_same_sample(a, b):
    for name in ("image_t1", "image_t2", "label_t1", "label_t2", "change", "boundary"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_scene_is_deterministic():
    assert_same_sample(generate_scene(SPEC), generate_scene(SPEC))


def test_scene_invariants():
    sample = generate_scene(SPEC)
    sample.check(classes=5)
    assert sample.image_t1.shape == (3, 32, 32)
    assert sample.image_t1.dtype == np.float32
    assert 0.0 <= sample.image_t1.min() and sample.image_t1.max() <= 1.0
    # labels carry classes only on changed pixels
    assert np.all((sample.label_t1 > 0) <= (sample.change > 0))


def test_scene_without_mutations_has_no_change():
    sample = generate_scene(SceneSpec(height=32, width=32, max_mutations=0, seed=4))
    assert sample.change.sum() == 0
    assert sample.label_t1.sum() == 0 and sample.label_t2.sum() == 0


def test_mean_change_fraction():
    spec = SceneSpec(change_ratio=0.2)
    fractions = [generate_scene(spec.model_copy(update={"seed": seed})).change.mean() for seed in range(100)]
    assert 0.05 <= float(np.mean(fractions)) <= 0.35


def test_synthesize_uses_derived_seeds():
    samples = synthesize(SPEC, 3, base_seed=10)
    assert [s.stem for s in samples] == ["000010", "000011", "000012"]
    assert_same_sample(samples[1], generate_scene(SPEC.model_copy(update={"seed": 11})))


def test_palette_is_fixed():
    np.testing.assert_array_equal(class_palette(5), class_palette(5))
    np.testing.assert_array_equal(class_palette(3), class_palette(5)[:3])
    assert len(palette_bytes(5)) == 15


def test_save_load_round_trip(tmp_path):
    samples = synthesize(SPEC, 3)
    assert save_dataset(samples, tmp_path, classes=5) == 3
    loaded = load_dataset(tmp_path, classes=5)
    assert len(loaded) == 3
    for original, restored in zip(samples, loaded):
        np.testing.assert_array_equal(original.label_t1, restored.label_t1)
        np.testing.assert_array_equal(original.label_t2, restored.label_t2)
        np.testing.assert_array_equal(original.change, restored.change)
        np.testing.assert_allclose(original.image_t1, restored.image_t1, atol=1 / 255 + 1e-6)

    with Image.open(tmp_path / "label1" / "00000.png") as label:
        assert label.mode == "P"


def test_missing_member_names_the_stem(tmp_path):
    save_dataset(synthesize(SPEC, 2), tmp_path, classes=5)
    (tmp_path / LAYOUT["label_t2"] / "00001.png").unlink()
    with pytest.raises(DatasetError, match="00001"):
        load_dataset(tmp_path)


def test_label_above_class_count(tmp_path):
    save_dataset(synthesize(SPEC, 2), tmp_path, classes=5)
    with pytest.raises(ClassCountError):
        load_dataset(tmp_path, classes=2)


def test_missing_dataset(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "absent")
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


def test_size_mismatch(tmp_path):
    save_dataset(synthesize(SPEC, 1), tmp_path, classes=5)
    Image.new("RGB", (16, 16)).save(tmp_path / "im2" / "00000.png")
    with pytest.raises(DatasetError, match="00000"):
        load_dataset(tmp_path)


def test_generate_scene_rejects_other_specs():
    with pytest.raises(ValidationError):
        generate_scene({"seed": 0})


@pytest.mark.parametrize("name", TRANSFORMS)
def test_transform_inverse_recovers_sample(name):
    sample = generate_scene(SPEC)
    restored = apply_transform(apply_transform(sample, name), name, inverse=True)
    assert_same_sample(sample, restored)


@pytest.mark.parametrize("seed", range(6))
def test_augment_preserves_invariants(seed):
    sample = generate_scene(SPEC)
    augmented = augment(sample, seed)
    augmented.check(classes=5)
    np.testing.assert_array_equal(np.bincount(sample.label_t1.ravel(), minlength=5),
                                  np.bincount(augmented.label_t1.ravel(), minlength=5))
    assert sample_transform(seed) in TRANSFORMS


def test_dataset_items():
    samples = synthesize(SPEC, 4)
    dataset = ScdDataset(samples, augment=True, base_seed=0)
    item = dataset[1]
    assert item["image_t1"].dtype == torch.float32
    assert item["label_t1"].dtype == torch.int64
    assert item["change"].shape == (32, 32)
    assert len(dataset) == 4

    dataset.set_epoch(0)
    first = dataset[2]["label_t1"]
    again = dataset[2]["label_t1"]
    assert torch.equal(first, again)
    expected = augment(samples[2], 0 * 4 + 2).label_t1
    assert torch.equal(first, torch.from_numpy(expected))
