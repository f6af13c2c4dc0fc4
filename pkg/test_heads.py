import math

import pytest
import torch

from errors import ShapeError
from heads import BoundaryDecoder, ChangeDecoder, SemanticDecoder, SobelEdges, TaskInteraction, sobel_edges


def test_semantic_decoder_shapes():
    decoder = SemanticDecoder(8, 16, num_classes=5, width=8)
    logits, features = decoder(torch.rand(2, 8, 16, 16), torch.rand(2, 16, 4, 4), (64, 64))
    assert logits.shape == (2, 5, 64, 64)
    assert features.shape == (2, 8, 64, 64)


def test_semantic_decoder_zero_projection_is_uniform():
    decoder = SemanticDecoder(8, 16, num_classes=5, width=8).eval()
    with torch.no_grad():
        decoder.classify.weight.zero_()
        decoder.classify.bias.zero_()
    logits, _ = decoder(torch.rand(1, 8, 8, 8), torch.rand(1, 16, 2, 2), (32, 32))
    torch.testing.assert_close(logits.softmax(dim=1), torch.full_like(logits, 1 / 5))


def test_change_decoder():
    decoder = ChangeDecoder(16, width=8).eval()
    x = torch.rand(2, 16, 4, 4)
    assert decoder(x, (64, 64)).shape == (2, 1, 64, 64)
    assert torch.equal(decoder(x, (64, 64)), decoder(x, (64, 64)))
    with torch.no_grad():
        decoder.project.weight.zero_()
        decoder.project.bias.zero_()
    assert torch.equal(torch.sigmoid(decoder(x, (16, 16))), torch.full((2, 1, 16, 16), 0.5))


def test_sobel_step_edge():
    step = torch.tensor([0.0, 0.0, 1.0, 1.0]).expand(4, 4).reshape(1, 1, 4, 4)
    magnitude = sobel_edges(step)[0, 0]
    torch.testing.assert_close(magnitude[:, 1:3], torch.full((4, 2), 4.0))
    assert (magnitude[:, [0, 3]] <= math.sqrt(1e-8) + 1e-9).all()


def test_sobel_constant_and_nonnegative():
    sobel = SobelEdges()
    assert (sobel(torch.full((2, 1, 8, 8), 3.0)) <= 1e-4 + 1e-9).all()
    assert (sobel(torch.randn(2, 1, 8, 8)) >= 0).all()


def test_sobel_rejects_multichannel():
    with pytest.raises(ShapeError):
        sobel_edges(torch.rand(1, 2, 4, 4))


def test_boundary_decoder():
    decoder = BoundaryDecoder(16)
    assert decoder(torch.rand(2, 16, 16, 16), (64, 64)).shape == (2, 1, 64, 64)
    for seed in range(10):
        x = torch.randn(1, 16, 8, 8, generator=torch.Generator().manual_seed(seed))
        assert torch.isfinite(decoder(x, (32, 32))).all()

    with torch.no_grad():
        decoder.project.weight.zero_()
        decoder.project.bias.zero_()
    assert (decoder(torch.rand(1, 16, 8, 8), (32, 32)).abs() <= 1e-4 + 1e-9).all()


def test_task_interaction():
    interaction = TaskInteraction(width=8)
    with torch.no_grad():
        interaction.project.bias.zero_()
    s1, s2 = torch.rand(2, 8, 16, 16), torch.rand(2, 8, 16, 16)
    change = torch.randn(2, 1, 16, 16)
    assert torch.equal(interaction(s1, s1, change), change)
    assert torch.equal(interaction(s1, s2, change), interaction(s2, s1, change))
    assert interaction(s1, s2, change).shape == (2, 1, 16, 16)


def test_task_interaction_rejects_mismatch():
    with pytest.raises(ShapeError):
        TaskInteraction(width=8)(torch.rand(1, 8, 16, 16), torch.rand(1, 8, 16, 16), torch.rand(1, 1, 8, 8))
