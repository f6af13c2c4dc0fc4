"""
Training, evaluation and the component ablation.

Runs are deterministic for a fixed seed in single-threaded mode: model
initialisation, synthetic splits, shuffling and augmentation all derive from
``config.seed``.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch.utils.data import DataLoader
from tqdm import tqdm

from checkpoint import load_checkpoint, save_checkpoint
from config import TrainConfig, build_config
from data import ScdDataset, load_dataset, synthesize
from errors import ClassCountError, TrainingError
from history import TrainingHistory
from losses import LossWeights, scd_loss
from metrics import ConfusionMatrix, binary_f1, compute_scores, update_from_predictions
from model import DBTANet, ModelSpec, build_model

logger = logging.getLogger(__name__)

VAL_SEED_OFFSET = 1_000_000
LAST_CHECKPOINT = "last.ckpt"

# (use_sam_branch, use_gspm, use_btam), baseline first
ABLATION_FLAGS = (
    (False, False, False),
    (True, False, False),
    (True, True, False),
    (True, True, True),
)


@dataclass
class EvaluationResult:
    scores: object
    change_f1: float
    matrix: ConfusionMatrix


@dataclass
class TrainResult:
    model: DBTANet
    history: TrainingHistory
    best_scores: object = None
    checkpoint_path: object = None


@dataclass
class AblationRow:
    flags: dict = field(default_factory=dict)
    miou: float = 0.0
    sek: float = 0.0


def seed_everything(seed, num_threads=1):
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    torch.set_num_threads(num_threads)


def build_splits(config):
    """
    Train and validation samples for a run.

    Synthetic splits use seeds seed + i and seed + VAL_SEED_OFFSET + i.
    Without ``val_root`` a dataset run validates on its training set.
    """
    if config.data_root is not None:
        train_samples = load_dataset(config.data_root, config.classes)
        if config.val_root is not None:
            return train_samples, load_dataset(config.val_root, config.classes)
        return train_samples, train_samples

    spec = config.scene_spec(config.seed)
    train_samples = synthesize(spec, config.train_samples, base_seed=config.seed)
    val_samples = synthesize(spec, config.val_samples, base_seed=config.seed + VAL_SEED_OFFSET)
    logger.info("Synthesized %d train and %d validation scenes", len(train_samples), len(val_samples))
    return train_samples, val_samples


def _to_device(batch, device):
    return {key: value.to(device) for key, value in batch.items()}


def build_optimizer(model, config):
    """AdamW over every parameter except the frozen prior branch."""
    optimizer = torch.optim.AdamW(
        model.trainable_parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    check_frozen_exclusion(model, optimizer)
    return optimizer


def check_frozen_exclusion(model, optimizer):
    """
    Raises:
        TrainingError: If the optimizer does not hold exactly total - prior parameters
    """
    total = sum(p.numel() for p in model.parameters())
    prior = sum(p.numel() for p in model.prior_branch.parameters()) if model.prior_branch is not None else 0
    optimized = sum(p.numel() for group in optimizer.param_groups for p in group["params"])
    if optimized != total - prior:
        raise TrainingError(f"Optimizer holds {optimized} parameters, expected {total - prior}")


def train_epoch(model, loader, optimizer, config, epoch):
    """One pass over ``loader``; returns the sample-weighted mean of every loss component."""
    model.train()
    weights = LossWeights.from_config(config)
    sums, seen = {}, 0

    progress = tqdm(loader, desc=f"epoch {epoch}/{config.epochs}", leave=False)
    for batch in progress:
        batch = _to_device(batch, config.device)
        preds = model(batch["image_t1"], batch["image_t2"])
        report = scd_loss(preds, batch, weights, config.boundary_pos_weight, config.similarity_margin)

        optimizer.zero_grad()
        report.total.backward()
        optimizer.step()

        size = batch["image_t1"].shape[0]
        for name, value in report.to_dict().items():
            sums[name] = sums.get(name, 0.0) + value * size
        seen += size
        progress.set_postfix(loss=f"{sums['total'] / seen:.4f}")

    return {name: value / max(seen, 1) for name, value in sums.items()}


@torch.no_grad()
def evaluate_model(model, samples, classes, threshold=0.5, batch_size=8, device="cpu"):
    """
    Eval-mode pass over ``samples`` accumulating one confusion matrix.

    Returns:
        EvaluationResult: SCD scores, binary change F1 and the matrix
    """
    model.eval()
    matrix = ConfusionMatrix(classes)
    loader = DataLoader(ScdDataset(samples), batch_size=batch_size, shuffle=False, num_workers=0)
    for batch in loader:
        batch = _to_device(batch, device)
        preds = model(batch["image_t1"], batch["image_t2"])
        update_from_predictions(matrix, preds, batch["label_t1"], batch["label_t2"], threshold)
    return EvaluationResult(compute_scores(matrix), binary_f1(matrix), matrix)


def train(config, resume=None):
    """
    Train a model and keep the best-SeK checkpoint.

    Args:
        config (TrainConfig): Run configuration
        resume (Path, optional): Checkpoint to continue from; its epoch
                                 counter and history are restored

    Returns:
        TrainResult: Final model, history and best validation scores
    """
    seed_everything(config.seed, config.num_threads)
    model = build_model(config).to(config.device)

    history = TrainingHistory()
    start_epoch = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        ckpt.restore(model)
        history = ckpt.training_history()
        start_epoch = ckpt.epoch
        logger.info("Resuming from %s at epoch %d", resume, start_epoch)

    optimizer = build_optimizer(model, config)
    train_samples, val_samples = build_splits(config)

    train_set = ScdDataset(train_samples, augment=config.augment, base_seed=config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    loader = DataLoader(train_set, batch_size=config.batch_size, shuffle=True, generator=generator, num_workers=0)

    config.output_dir.mkdir(parents=True, exist_ok=True)
    best = history.best()
    best_sek = best["scores"]["sek"] if best else -math.inf

    for epoch in range(start_epoch + 1, config.epochs + 1):
        train_set.set_epoch(epoch - 1)
        losses = train_epoch(model, loader, optimizer, config, epoch)
        result = evaluate_model(model, val_samples, config.classes, config.change_threshold,
                                config.batch_size, config.device)
        history.add_epoch(epoch, losses, result.scores, result.change_f1)
        logger.info(
            "Epoch %d/%d: loss %.4f (sem %.4f, change %.4f, boundary %.4f, similarity %.4f)",
            epoch, config.epochs, losses["total"], losses["sem"], losses["change"],
            losses["boundary"], losses["similarity"],
        )
        logger.info("Epoch %d/%d validation: %s | change F1 %.4f",
                    epoch, config.epochs, result.scores.format(), result.change_f1)

        if result.scores.sek > best_sek:
            best_sek = result.scores.sek
            save_checkpoint(config.checkpoint_path, model, config, epoch, history)
        save_checkpoint(config.output_dir / LAST_CHECKPOINT, model, config, epoch, history)

    best = history.best()
    best_scores = None
    if best is not None:
        logger.info("Best epoch %d: SeK %.4f", best["epoch"], best["scores"]["sek"])
        best_scores = best["scores"]
    return TrainResult(model, history, best_scores, config.checkpoint_path)


def load_model(path, classes=None):
    """
    Rebuild a model from a checkpoint.

    Returns:
        tuple: (DBTANet in eval mode, TrainConfig, Checkpoint)

    Raises:
        ClassCountError: If ``classes`` differs from the checkpoint's class count
    """
    ckpt = load_checkpoint(path)
    config = build_config(TrainConfig, ckpt.config, str(path))
    if classes is not None and classes != config.classes:
        raise ClassCountError(f"Checkpoint {path} predicts {config.classes} classes, dataset has {classes}")
    model = ckpt.restore(DBTANet(ModelSpec.from_config(config)))
    model.eval()
    return model, config, ckpt


def evaluate(checkpoint, data_root, classes=None):
    """Score a checkpoint on a dataset directory."""
    model, config, _ = load_model(checkpoint, classes)
    samples = load_dataset(data_root, config.classes)
    return evaluate_model(model, samples, config.classes, config.change_threshold, config.batch_size)


def ablation_configs(config):
    """The four component configurations, sharing every other setting and seed."""
    configs = []
    for index, (sam, gspm, btam) in enumerate(ABLATION_FLAGS):
        output_dir = config.output_dir / "ablation" / f"row{index}"
        configs.append(config.model_copy(update={
            "use_sam_branch": sam,
            "use_gspm": gspm,
            "use_btam": btam,
            "output_dir": output_dir,
            "checkpoint": None,
        }))
    return configs


def run_ablation(config):
    """
    Train and score each ablation configuration.

    Returns:
        list[AblationRow]: One row per configuration, baseline first
    """
    rows = []
    for row_config in ablation_configs(config):
        flags = {
            "sam": row_config.use_sam_branch,
            "gspm": row_config.use_gspm,
            "btam": row_config.use_btam,
        }
        logger.info("Ablation row %s", flags)
        result = train(row_config)
        scores = result.best_scores or {"miou": 0.0, "sek": 0.0}
        rows.append(AblationRow(flags, scores["miou"], scores["sek"]))
    return rows
