import math

import numpy as np
import pytest
import torch

from errors import NonFiniteLossError, ShapeError, TrainingError
from heads import Predictions
from losses import LossWeights, boundary_target, scd_loss, semantic_loss, similarity_loss


def make_targets(label_t1, label_t2):
    label_t1, label_t2 = np.asarray(label_t1), np.asarray(label_t2)
    return {
        "label_t1": torch.from_numpy(label_t1).long(),
        "label_t2": torch.from_numpy(label_t2).long(),
        "change": torch.from_numpy(((label_t1 > 0) | (label_t2 > 0)).astype(np.uint8)),
        "boundary": torch.from_numpy(boundary_target(label_t1, label_t2)),
    }


def test_boundary_of_half_mask():
    mask = np.zeros((4, 4), dtype=np.int64)
    mask[:, :2] = 1
    boundary = boundary_target(mask, np.zeros_like(mask))
    expected = np.zeros((4, 4), dtype=np.uint8)
    expected[:, 1:3] = 1
    np.testing.assert_array_equal(boundary, expected)
    assert boundary.sum() == 8


def test_boundary_of_empty_labels():
    zeros = np.zeros((2, 6, 6), dtype=np.int64)
    assert boundary_target(zeros, zeros).sum() == 0


def test_boundary_is_complement_symmetric():
    rng = np.random.default_rng(3)
    mask = rng.integers(0, 2, size=(12, 12))
    zeros = np.zeros_like(mask)
    np.testing.assert_array_equal(boundary_target(mask, zeros), boundary_target(1 - mask, zeros))


def test_boundary_shape_mismatch():
    with pytest.raises(ShapeError):
        boundary_target(np.zeros((4, 4)), np.zeros((4, 5)))


def test_similarity_identical_features():
    feat = torch.randn(2, 6, 5, 5)
    unchanged = torch.zeros(2, 5, 5)
    assert similarity_loss(feat, feat.clone(), unchanged).item() == pytest.approx(0.0, abs=1e-6)
    changed = torch.ones(2, 5, 5)
    assert similarity_loss(feat, feat.clone(), changed).item() == pytest.approx(1.0, abs=1e-6)


def test_similarity_orthogonal_features():
    a = torch.zeros(1, 2, 3, 3)
    b = torch.zeros(1, 2, 3, 3)
    a[:, 0] = 1.0
    b[:, 1] = 2.0
    assert similarity_loss(a, b, torch.ones(1, 3, 3)).item() == pytest.approx(0.0, abs=1e-7)


def test_similarity_zero_features_count_as_dissimilar():
    zeros = torch.zeros(1, 4, 3, 3)
    unchanged = torch.zeros(1, 3, 3)
    assert similarity_loss(zeros, zeros, unchanged).item() == pytest.approx(1.0, abs=1e-6)
    assert similarity_loss(zeros, torch.rand(1, 4, 3, 3) + 0.1, unchanged).item() == pytest.approx(1.0, abs=1e-6)
    assert similarity_loss(zeros, zeros, torch.ones(1, 3, 3)).item() == 0.0


def test_similarity_gradient_is_finite_at_zero_features():
    feat = torch.zeros(1, 4, 3, 3, requires_grad=True)
    similarity_loss(feat, torch.rand(1, 4, 3, 3), torch.zeros(1, 3, 3)).backward()
    assert torch.isfinite(feat.grad).all()


def test_semantic_loss_uniform_logits():
    labels = torch.tensor([[[0, 1], [2, 4]]])
    assert semantic_loss(torch.zeros(1, 5, 2, 2), labels).item() == pytest.approx(math.log(5), abs=1e-5)


def test_semantic_loss_without_labels_is_zero():
    logits = torch.randn(1, 5, 2, 2, requires_grad=True)
    loss = semantic_loss(logits, torch.zeros(1, 2, 2, dtype=torch.long))
    assert loss.item() == 0.0
    loss.backward()
    assert torch.count_nonzero(logits.grad) == 0


def test_uniform_predictions():
    label_t1 = np.array([[[0, 1, 1, 0]] * 4])
    label_t2 = np.array([[[0, 2, 3, 0]] * 4])
    preds = Predictions(
        sem1_logits=torch.zeros(1, 5, 4, 4),
        sem2_logits=torch.zeros(1, 5, 4, 4),
        change_logits=torch.zeros(1, 1, 4, 4),
        boundary_logits=torch.zeros(1, 1, 4, 4),
    )
    report = scd_loss(preds, make_targets(label_t1, label_t2))
    assert report.sem.item() == pytest.approx(math.log(5), abs=1e-5)
    assert report.change.item() == pytest.approx(math.log(2), abs=1e-5)
    assert report.similarity.item() == 0.0
    weights = LossWeights()
    expected = weights.sem * report.sem + weights.cd * report.change + weights.bd * report.boundary
    assert report.total.item() == pytest.approx(expected.item(), abs=1e-6)


def test_saturated_correct_predictions():
    label_t1 = np.array([[[0, 1], [2, 0]]])
    label_t2 = np.array([[[0, 3], [4, 0]]])
    targets = make_targets(label_t1, label_t2)

    def one_hot(labels):
        return torch.nn.functional.one_hot(labels, 5).permute(0, 3, 1, 2).float() * 100.0

    change = targets["change"].float().unsqueeze(1) * 200.0 - 100.0
    preds = Predictions(
        sem1_logits=one_hot(targets["label_t1"]),
        sem2_logits=one_hot(targets["label_t2"]),
        change_logits=change,
        boundary_logits=torch.zeros(1, 1, 2, 2),
        sem1_features=torch.randn(1, 4, 2, 2),
        sem2_features=torch.randn(1, 4, 2, 2),
    )
    report = scd_loss(preds, targets)
    assert report.sem.item() < 1e-3
    assert report.change.item() < 1e-3
    assert set(report.to_dict()) == {"total", "sem", "change", "boundary", "similarity"}


def test_non_finite_loss_names_component():
    label = np.array([[[1, 0], [0, 0]]])
    preds = Predictions(
        sem1_logits=torch.full((1, 5, 2, 2), float("nan")),
        sem2_logits=torch.zeros(1, 5, 2, 2),
        change_logits=torch.zeros(1, 1, 2, 2),
        boundary_logits=torch.zeros(1, 1, 2, 2),
    )
    with pytest.raises(NonFiniteLossError, match="'sem'") as info:
        scd_loss(preds, make_targets(label, label))
    assert isinstance(info.value, TrainingError)
    assert info.value.component == "sem"


def test_loss_weights_must_be_positive():
    with pytest.raises(ValueError):
        LossWeights(sem=0.0)


def test_unlabeled_pixels_do_not_affect_semantic_loss():
    generator = torch.Generator().manual_seed(6)
    label_t1 = np.array([[[0, 1, 2, 0], [3, 0, 0, 4]]])
    label_t2 = np.array([[[0, 2, 2, 1], [0, 0, 4, 4]]])
    targets = make_targets(label_t1, label_t2)
    sem1 = torch.randn(1, 5, 2, 4, generator=generator)
    sem2 = torch.randn(1, 5, 2, 4, generator=generator)

    def report_for(sem1_logits, sem2_logits):
        preds = Predictions(sem1_logits, sem2_logits, torch.zeros(1, 1, 2, 4), torch.zeros(1, 1, 2, 4))
        return scd_loss(preds, targets)

    noise = torch.randn(1, 5, 2, 4, generator=generator) * 10.0
    unlabeled_1 = torch.from_numpy(label_t1 == 0).unsqueeze(1)
    unlabeled_2 = torch.from_numpy(label_t2 == 0).unsqueeze(1)
    before = report_for(sem1, sem2)
    after = report_for(torch.where(unlabeled_1, sem1 + noise, sem1), torch.where(unlabeled_2, sem2 - noise, sem2))
    assert torch.equal(before.sem, after.sem)


def test_total_loss_gradient_is_finite_at_initialization(tiny_model, image_pair):
    rng = np.random.default_rng(7)
    label_t1 = rng.integers(0, 5, size=(2, 32, 32))
    label_t2 = np.where(rng.random((2, 32, 32)) < 0.7, 0, rng.integers(1, 5, size=(2, 32, 32)))
    tiny_model.train()
    report = scd_loss(tiny_model(*image_pair), make_targets(label_t1, label_t2))
    report.total.backward()
    for name, param in tiny_model.named_parameters():
        if not param.requires_grad:
            continue
        assert param.grad is not None, name
        assert torch.isfinite(param.grad).all(), name
