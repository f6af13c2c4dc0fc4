"""
Semantic change detection scores.

A C x C confusion matrix (rows = predicted class, columns = ground truth,
class 0 = no change) is accumulated over every (pixel, timestamp) pair; the
four headline scores derive from it:

- OA: trace / total
- mIoU: mean of no-change and change IoU on the 2 x 2 binarization
- SeK: exp(IoU_change - 1) * kappa, kappa taken with the no-change/no-change cell zeroed
- F1 (Fscd): semantic precision / recall over predicted / labeled changed pixels

Every 0/0 is defined as 0.
"""
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from errors import ClassCountError, ShapeError


def _ratio(num, den):
    return float(num) / float(den) if den else 0.0


class ConfusionMatrix:
    """Streaming, mergeable confusion matrix."""

    def __init__(self, num_classes, counts=None):
        if num_classes < 2:
            raise ValueError(f"need at least two classes, got {num_classes}")
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (num_classes, num_classes) or (counts < 0).any():
            raise ValueError("counts must be a non-negative C x C array")
        self.counts = counts

    def update(self, pred, gt):
        """
        Add one prediction/label map pair.

        Args:
            pred (array-like): Predicted class map
            gt (array-like): Ground-truth class map of the same shape

        Returns:
            ConfusionMatrix: self, for chaining

        Raises:
            ShapeError: If the maps differ in shape
            ClassCountError: If any index is outside [0, C)
        """
        pred, gt = _as_numpy(pred), _as_numpy(gt)
        if pred.shape != gt.shape:
            raise ShapeError(f"prediction and label maps differ in shape: {pred.shape} vs {gt.shape}")
        if pred.size == 0:
            return self
        pred = pred.astype(np.int64).ravel()
        gt = gt.astype(np.int64).ravel()

        c = self.num_classes
        for name, values in (("prediction", pred), ("label", gt)):
            if values.min() < 0 or values.max() >= c:
                raise ClassCountError(
                    f"{name} class index out of range [0, {c}): min {values.min()}, max {values.max()}"
                )
        self.counts += np.bincount(c * pred + gt, minlength=c * c).reshape(c, c)
        return self

    def merge(self, other):
        """Return a new matrix holding the sum of both."""
        if other.num_classes != self.num_classes:
            raise ClassCountError(f"cannot merge {self.num_classes}-class and {other.num_classes}-class matrices")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def __add__(self, other):
        return self.merge(other)

    @property
    def total(self):
        return int(self.counts.sum())

    def binarized(self):
        """2 x 2 change/no-change matrix [[b00, b01], [b10, b11]]."""
        q = self.counts
        return np.array([
            [q[0, 0], q[0, 1:].sum()],
            [q[1:, 0].sum(), q[1:, 1:].sum()],
        ], dtype=np.int64)


def _as_numpy(x):
    if torch.is_tensor(x):
        return x.detach().cpu().numpy()
    return np.asarray(x)


@dataclass(frozen=True)
class ScdScores:
    oa: float
    miou: float
    sek: float
    f1: float

    def to_json(self):
        """Flat JSON object with 6 decimal places."""
        return json.dumps({k: round(v, 6) for k, v in asdict(self).items()})

    def format(self):
        return f"OA {self.oa:.4f} | mIoU {self.miou:.4f} | SeK {self.sek:.4f} | F1 {self.f1:.4f}"


def kappa(counts):
    """Cohen's kappa of a confusion matrix; 0/0 -> 0 (1 when agreement is perfect)."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    p_o = np.trace(counts) / total
    p_e = float((counts.sum(axis=1) * counts.sum(axis=0)).sum()) / (total * total)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def compute_scores(matrix):
    """
    The four SCD scores of an accumulated confusion matrix.

    Args:
        matrix (ConfusionMatrix): Accumulated counts

    Returns:
        ScdScores: OA, mIoU, SeK and F1

    Raises:
        ValueError: If the matrix is empty
    """
    q = matrix.counts
    total = q.sum()
    if total == 0:
        raise ValueError("cannot score an empty confusion matrix")

    oa = _ratio(np.trace(q), total)

    (b00, b01), (b10, b11) = matrix.binarized()
    iou_nc = _ratio(b00, b00 + b01 + b10)
    iou_c = _ratio(b11, b11 + b01 + b10)
    miou = 0.5 * (iou_nc + iou_c)

    q_hat = q.copy()
    q_hat[0, 0] = 0
    sek = float(math.exp(iou_c - 1.0) * kappa(q_hat))

    hits = np.trace(q) - q[0, 0]
    precision = _ratio(hits, q[1:, :].sum())
    recall = _ratio(hits, q[:, 1:].sum())
    f1 = _ratio(2 * precision * recall, precision + recall)

    return ScdScores(oa=oa, miou=miou, sek=sek, f1=f1)


def binary_f1(matrix):
    """F1 of the change class on the binarized matrix."""
    (_, b01), (b10, b11) = matrix.binarized()
    return _ratio(2 * b11, 2 * b11 + b01 + b10)


def masked_semantic_prediction(sem_logits, change_logits, threshold=0.5):
    """
    Per-pixel class prediction, forced to 0 where the change probability is below threshold.

    Args:
        sem_logits (torch.Tensor): [B, C, H, W]
        change_logits (torch.Tensor): [B, 1, H, W]

    Returns:
        torch.Tensor: Long [B, H, W]
    """
    changed = torch.sigmoid(change_logits[:, 0]) >= threshold
    return torch.where(changed, sem_logits.argmax(dim=1), torch.zeros_like(changed, dtype=torch.long))


def update_from_predictions(matrix, preds, label_t1, label_t2, threshold=0.5):
    """Accumulate both timestamps of a batch of Predictions; returns the masked predictions."""
    pred_t1 = masked_semantic_prediction(preds.sem1_logits, preds.change_logits, threshold)
    pred_t2 = masked_semantic_prediction(preds.sem2_logits, preds.change_logits, threshold)
    matrix.update(pred_t1, label_t1)
    matrix.update(pred_t2, label_t2)
    return pred_t1, pred_t2


if __name__ == "__main__":
    worked = ConfusionMatrix(3, [[50, 2, 3], [4, 20, 1], [0, 5, 15]])
    print(compute_scores(worked).format())
