"""Shared fixtures: small models and configs that run in seconds on CPU."""
import pytest
import torch

from config import TrainConfig
from model import DBTANet, ModelSpec

TINY = dict(
    channels_shallow=8,
    channels_deep=16,
    channels_msa=16,
    decoder_width=8,
    stage_depths=(1, 1, 1, 1),
)


@pytest.fixture
def tiny_spec():
    return ModelSpec(classes=5, **TINY)


@pytest.fixture
def tiny_model(tiny_spec):
    torch.manual_seed(0)
    return DBTANet(tiny_spec)


@pytest.fixture
def tiny_config(tmp_path):
    return TrainConfig(
        height=32,
        width=32,
        train_samples=8,
        val_samples=4,
        epochs=1,
        batch_size=4,
        augment=True,
        output_dir=tmp_path / "run",
        **TINY,
    )


@pytest.fixture
def image_pair():
    generator = torch.Generator().manual_seed(1)
    return (
        torch.rand(2, 3, 32, 32, generator=generator),
        torch.rand(2, 3, 32, 32, generator=generator),
    )
