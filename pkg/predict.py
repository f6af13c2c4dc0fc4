"""
Prediction Module

Runs a trained model on one image pair and renders the outputs:
semantic maps as palette PNGs, change and boundary probabilities as grayscale
PNGs, a side-by-side panel, and the raw maps as a compressed .npz archive.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from data import class_palette, load_image_file, palette_bytes
from encoder import check_image
from errors import ShapeError
from metrics import masked_semantic_prediction
from train import load_model

logger = logging.getLogger(__name__)

GUTTER = 8
GUTTER_COLOUR = (255, 255, 255)


@dataclass
class PredictionMaps:
    """Per-pixel outputs for one pair, all [H, W]."""

    sem1: np.ndarray
    sem2: np.ndarray
    change_prob: np.ndarray
    boundary_prob: np.ndarray


def to_gray(probability):
    """Probability map -> uint8 via round(255 * p)."""
    return np.round(255.0 * np.asarray(probability, dtype=np.float64)).astype(np.uint8)


def palette_image(classes_map, classes):
    image = Image.fromarray(np.asarray(classes_map, dtype=np.uint8))
    image.putpalette(palette_bytes(classes))
    return image


def colourize(classes_map, classes):
    """Class map -> uint8 RGB [H, W, 3] using the dataset palette."""
    palette = np.round(class_palette(classes) * 255).astype(np.uint8)
    return palette[np.asarray(classes_map, dtype=np.int64)]


def compose_panel(maps, classes, gutter=GUTTER):
    """
    Side-by-side panel: sem1 | sem2 | change | boundary.

    Returns:
        PIL.Image.Image: RGB image of width 4W + 3 * gutter
    """
    height, width = maps.sem1.shape
    tiles = [
        colourize(maps.sem1, classes),
        colourize(maps.sem2, classes),
        np.repeat(to_gray(maps.change_prob)[..., None], 3, axis=2),
        np.repeat(to_gray(maps.boundary_prob)[..., None], 3, axis=2),
    ]
    panel = np.empty((height, 4 * width + 3 * gutter, 3), dtype=np.uint8)
    panel[...] = GUTTER_COLOUR
    for index, tile in enumerate(tiles):
        left = index * (width + gutter)
        panel[:, left:left + width] = tile
    return Image.fromarray(panel)


@torch.no_grad()
def predict_maps(model, image_t1, image_t2, threshold=0.5):
    """
    Forward one pair.

    Args:
        model (DBTANet): Model in eval mode
        image_t1 (np.ndarray): float32 [3, H, W]
        image_t2 (np.ndarray): float32 [3, H, W]

    Returns:
        PredictionMaps: Masked class maps and probabilities

    Raises:
        ShapeError: If the images differ in size or are not divisible by 16
    """
    if image_t1.shape != image_t2.shape:
        raise ShapeError(f"Images differ in size: {image_t1.shape[1:]} vs {image_t2.shape[1:]}")
    x1 = torch.from_numpy(image_t1).unsqueeze(0)
    x2 = torch.from_numpy(image_t2).unsqueeze(0)
    check_image(x1)

    model.eval()
    preds = model(x1, x2)
    return PredictionMaps(
        sem1=masked_semantic_prediction(preds.sem1_logits, preds.change_logits, threshold)[0].numpy(),
        sem2=masked_semantic_prediction(preds.sem2_logits, preds.change_logits, threshold)[0].numpy(),
        change_prob=torch.sigmoid(preds.change_logits)[0, 0].numpy(),
        boundary_prob=torch.sigmoid(preds.boundary_logits)[0, 0].numpy(),
    )


def write_outputs(maps, out_dir, classes):
    """
    Write every rendering of ``maps`` into ``out_dir``.

    Returns:
        dict: Output name -> path
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "sem1": out_dir / "sem1.png",
        "sem2": out_dir / "sem2.png",
        "change": out_dir / "change.png",
        "boundary": out_dir / "boundary.png",
        "panel": out_dir / "panel.png",
        "raw": out_dir / "maps.npz",
    }
    palette_image(maps.sem1, classes).save(paths["sem1"])
    palette_image(maps.sem2, classes).save(paths["sem2"])
    Image.fromarray(to_gray(maps.change_prob)).save(paths["change"])
    Image.fromarray(to_gray(maps.boundary_prob)).save(paths["boundary"])
    compose_panel(maps, classes).save(paths["panel"])
    np.savez_compressed(
        paths["raw"],
        sem1=maps.sem1,
        sem2=maps.sem2,
        change_prob=maps.change_prob,
        boundary_prob=maps.boundary_prob,
    )
    return paths


def predict(checkpoint, image_t1, image_t2, out_dir):
    """
    Predict one pair from PNG files and render the results.

    Args:
        checkpoint (Path): Trained checkpoint
        image_t1 (Path): Earlier image
        image_t2 (Path): Later image
        out_dir (Path): Output directory

    Returns:
        dict: Output name -> path
    """
    # Step 1: Rebuild the model
    model, config, _ = load_model(checkpoint)

    # Step 2: Load and check the pair
    t1 = load_image_file(image_t1)
    t2 = load_image_file(image_t2)

    # Step 3: Forward and render
    maps = predict_maps(model, t1, t2, config.change_threshold)
    paths = write_outputs(maps, out_dir, config.classes)
    logger.info("Wrote predictions for %s / %s to %s", image_t1, image_t2, out_dir)
    return paths
