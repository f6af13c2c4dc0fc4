import pytest
import torch
from torch.autograd import gradcheck
from torch.func import functional_call

from btam import BTAM, ECA, MSA, BidirPair, DifferenceHead, canonical_order, eca_kernel_size
from errors import ShapeError


@pytest.fixture
def btam():
    torch.manual_seed(0)
    return BTAM(deep_channels=8, msa_channels=8).eval()


def zero_msa(msa):
    with torch.no_grad():
        for conv in (msa.point, msa.dilated, msa.wide, msa.fuse, msa.residual):
            conv.weight.zero_()
            conv.bias.zero_()
    return msa


def test_msa_shape():
    assert MSA(32, 16)(torch.rand(2, 32, 4, 4)).shape == (2, 16, 4, 4)


def test_msa_zero_weights():
    assert torch.count_nonzero(zero_msa(MSA(4, 4))(torch.rand(1, 4, 6, 6))) == 0


def test_msa_residual_identity():
    msa = zero_msa(MSA(4, 4))
    with torch.no_grad():
        msa.residual.weight.copy_(torch.eye(4).view(4, 4, 1, 1))
    x = torch.rand(1, 4, 6, 6)
    torch.testing.assert_close(msa(x), x)


def test_msa_gradcheck():
    torch.manual_seed(0)
    msa = MSA(8, 4).double()
    x = torch.randn(1, 8, 6, 6, dtype=torch.float64, requires_grad=True)
    params = {name: p.detach().clone().requires_grad_(True) for name, p in msa.named_parameters()}
    names = list(params)

    def run(inputs, *weights):
        return functional_call(msa, dict(zip(names, weights)), (inputs,))

    assert gradcheck(run, (x, *params.values()), eps=1e-5, atol=1e-4, rtol=1e-4)


@pytest.mark.parametrize("channels, k", [(128, 5), (512, 5), (64, 3), (256, 5), (16, 3)])
def test_eca_kernel_size(channels, k):
    assert eca_kernel_size(channels) == k


def test_eca_attention_range():
    weights = ECA(16).attention(torch.randn(3, 16, 4, 4) * 100)
    assert weights.shape == (3, 16, 1, 1)
    assert ((weights >= 0) & (weights <= 1)).all()


def test_bidirectional_pair_is_swap_consistent(btam):
    a, b = torch.randn(2, 8, 4, 4), torch.randn(2, 8, 4, 4)
    assert torch.equal(btam.bidirectional(a, b).forward, btam.bidirectional(b, a).backward)
    same = btam.bidirectional(a, a)
    assert torch.equal(same.forward, same.backward)


def test_canonical_order_ignores_direction():
    x, y = torch.randn(3, 2, 4, 4), torch.randn(3, 2, 4, 4)
    first, second = canonical_order(BidirPair(x, y))
    first_swapped, second_swapped = canonical_order(BidirPair(y, x))
    assert torch.equal(first, first_swapped)
    assert torch.equal(second, second_swapped)
    assert (first.flatten(1).sum(1) >= second.flatten(1).sum(1)).all()


def test_btam_shape(btam):
    assert btam(torch.rand(2, 8, 4, 4), torch.rand(2, 8, 4, 4)).shape == (2, 8, 4, 4)


def test_btam_is_swap_invariant(btam):
    generator = torch.Generator().manual_seed(4)
    for _ in range(20):
        a = torch.randn(2, 8, 4, 4, generator=generator)
        b = torch.randn(2, 8, 4, 4, generator=generator)
        assert torch.equal(btam(a, b), btam(b, a))


def test_bidirectional_swap_on_random_inputs(btam):
    generator = torch.Generator().manual_seed(5)
    for _ in range(20):
        a = torch.randn(1, 8, 4, 4, generator=generator)
        b = torch.randn(1, 8, 4, 4, generator=generator)
        assert torch.equal(btam.bidirectional(a, b).forward, btam.bidirectional(b, a).backward)


def test_btam_rejects_mismatch(btam):
    with pytest.raises(ShapeError):
        btam(torch.rand(1, 8, 4, 4), torch.rand(1, 8, 2, 2))


def test_difference_head_is_symmetric():
    head = DifferenceHead(8, 4)
    a, b = torch.randn(1, 8, 4, 4), torch.randn(1, 8, 4, 4)
    assert torch.equal(head(a, b), head(b, a))


@torch.no_grad()
def test_msa_support_is_five_by_five():
    torch.manual_seed(2)
    msa = MSA(3, 4).eval()
    x = torch.rand(1, 3, 11, 11)
    bumped = x.clone()
    bumped[0, :, 5, 5] += 1.0
    diff = (msa(bumped) - msa(x)).abs().sum(dim=(0, 1))

    outside = torch.ones(11, 11, dtype=torch.bool)
    outside[3:8, 3:8] = False
    assert torch.count_nonzero(diff[outside]) == 0
    assert diff[3:8, 3:8].sum() > 0
